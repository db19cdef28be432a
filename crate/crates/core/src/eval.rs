//! Generative adversarial metric with calibrated critic thresholds, and
//! simple motion statistics.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Model;
use crate::rng::SeededRng;
use crate::scalar::Real;
use crate::tensor::{Init, Tensor};
// Unused when a dependency links std, which brings the inherent methods.
#[cfg(not(feature = "std"))]
#[allow(unused_imports)]
use num_traits::Float;

/// Minimum calibration samples per side.
pub const MIN_CALIBRATION: usize = 100;

/// Tie band around a score of one.
pub const TIE_BAND: f64 = 0.05;

/// Threshold chosen by [`calibrate_threshold`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub balanced_accuracy: f64,
    /// The best balanced accuracy is within sampling noise of chance.
    pub non_discriminative: bool,
}

/// Balanced accuracy of the rule `score >= threshold → real`.
pub fn balanced_accuracy(real: &[f64], fake: &[f64], threshold: f64) -> f64 {
    let tp = real.iter().filter(|&&s| s >= threshold).count() as f64;
    let tn = fake.iter().filter(|&&s| s < threshold).count() as f64;
    0.5 * (tp / real.len() as f64 + tn / fake.len() as f64)
}

/// Threshold maximizing balanced accuracy over midpoints between adjacent
/// distinct scores. When several adjacent midpoints tie, the first such run
/// wins and the midpoint of the run is returned.
pub fn calibrate_threshold(real: &[f64], fake: &[f64], min_samples: usize) -> Result<Calibration> {
    let needed = min_samples.max(1);
    let got = real.len().min(fake.len());
    if got < needed {
        return Err(Error::TooFewSamples { needed, got });
    }
    if real.iter().chain(fake).any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("critic scores".into()));
    }
    // Sorted distinct values with per-side counts.
    let mut all: Vec<(f64, bool)> = real.iter().map(|&s| (s, true)).chain(fake.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut values: Vec<(f64, usize, usize)> = Vec::new();
    for (s, is_real) in all {
        match values.last_mut() {
            Some(last) if last.0 == s => {
                if is_real {
                    last.1 += 1
                } else {
                    last.2 += 1
                }
            }
            _ => values.push((s, is_real as usize, (!is_real) as usize)),
        }
    }
    if values.len() < 2 {
        return Err(Error::Degenerate("every critic score is identical".into()));
    }
    let (nr, nf) = (real.len() as u128, fake.len() as u128);
    // Threshold between values[i] and values[i+1]: reals at or below i are
    // rejected, fakes at or below i are caught.
    let (mut real_below, mut fake_below) = (0u128, 0u128);
    let mut best: Option<(u128, usize, usize)> = None;
    let mut run_open = false;
    for i in 0..values.len() - 1 {
        real_below += values[i].1 as u128;
        fake_below += values[i].2 as u128;
        // 2·BA·nr·nf = (nr − real_below)·nf + fake_below·nr
        let score = (nr - real_below) * nf + fake_below * nr;
        match best {
            Some((b, start, _)) if score == b && run_open => best = Some((b, start, i)),
            Some((b, _, _)) if score <= b => run_open = false,
            _ => {
                best = Some((score, i, i));
                run_open = true;
            }
        }
    }
    let (score, first, last) = best.expect("at least one midpoint");
    let mid = |i: usize| 0.5 * (values[i].0 + values[i + 1].0);
    let threshold = 0.5 * (mid(first) + mid(last));
    let ba = score as f64 / (2.0 * nr as f64 * nf as f64);
    // Half the 95% two-sample Kolmogorov–Smirnov critical distance.
    let noise = 0.68 * ((nr + nf) as f64 / (nr * nf) as f64).sqrt();
    Ok(Calibration { threshold, balanced_accuracy: ba, non_discriminative: ba - 0.5 <= noise })
}

/// A generator with its critic, as compared by [`gam_score`].
pub trait Adversary<T: Real> {
    fn latent_dim(&self) -> usize;
    /// Videos `[N, C, T, H, W]` for latents `[N, latent_dim]`.
    fn sample(&self, z: &Tensor<T>) -> Result<Tensor<T>>;
    /// Critic scores for videos `[N, C, T, H, W]`.
    fn critic(&self, videos: &Tensor<T>) -> Result<Vec<f64>>;
}

impl<T: Real> Adversary<T> for Model<T> {
    fn latent_dim(&self) -> usize {
        self.config.k0
    }

    fn sample(&self, z: &Tensor<T>) -> Result<Tensor<T>> {
        if self.config.is_conditional() {
            return Err(Error::Unsupported("comparison of conditional models".into()));
        }
        self.generate(z, None)
    }

    fn critic(&self, videos: &Tensor<T>) -> Result<Vec<f64>> {
        Ok(self.discriminate(videos, None)?.into_iter().map(|s| s.to_f64_lossy()).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Winner {
    A,
    B,
    Tie,
}

/// Outcome of a model-versus-model comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GamReport {
    pub threshold_a: f64,
    pub threshold_b: f64,
    pub balanced_accuracy_a: f64,
    pub balanced_accuracy_b: f64,
    /// Fraction of B's samples that A's critic calls real.
    pub err_a_on_b_samples: f64,
    /// Fraction of A's samples that B's critic calls real.
    pub err_b_on_a_samples: f64,
    /// Fraction of held-out real clips that A's critic calls fake.
    pub err_a_on_real: f64,
    pub err_b_on_real: f64,
    /// `err_a_on_real / err_b_on_real` when defined.
    pub real_ratio: Option<f64>,
    /// `err_b_on_a_samples / err_a_on_b_samples`; `> 1` favors A.
    pub score: f64,
    pub winner: Winner,
    pub n_samples: usize,
    pub flags: Vec<String>,
}

fn chunked<T: Real>(x: &Tensor<T>, f: impl Fn(&Tensor<T>) -> Result<Tensor<T>>) -> Result<Tensor<T>> {
    const CHUNK: usize = 32;
    let n = x.shape()[0];
    let mut parts = Vec::new();
    let mut start = 0;
    while start < n {
        let len = CHUNK.min(n - start);
        parts.push(f(&x.narrow(0, start, len)?)?);
        start += len;
    }
    Tensor::concat(&parts.iter().collect::<Vec<_>>(), 0)
}

fn scores<T: Real>(m: &dyn Adversary<T>, x: &Tensor<T>) -> Result<Vec<f64>> {
    let s = chunked(x, |c| {
        let v: Vec<T> = m.critic(c)?.into_iter().map(T::from_f64_lossy).collect();
        Tensor::from_vec(&[v.len()], v)
    })?;
    Ok(s.data().iter().map(|v| v.to_f64_lossy()).collect())
}

fn rate(scores: &[f64], pass: impl Fn(f64) -> bool) -> f64 {
    scores.iter().filter(|&&s| pass(s)).count() as f64 / scores.len() as f64
}

/// Compare two models. Both receive the same latent batch (each uses the
/// leading columns it needs); each critic's threshold is calibrated on the
/// held-out real clips against its own model's samples.
pub fn gam_score<T: Real>(
    a: &dyn Adversary<T>,
    b: &dyn Adversary<T>,
    real: &Tensor<T>,
    n_samples: usize,
    rng: &mut SeededRng,
) -> Result<GamReport> {
    if n_samples == 0 {
        return Err(Error::EmptyBatch);
    }
    let width = a.latent_dim().max(b.latent_dim());
    let z = Tensor::<T>::sample(&[n_samples, width], Init::Uniform { low: -1.0, high: 1.0 }, rng)?;
    let latents = |k: usize| -> Result<Tensor<T>> {
        let cols: Vec<T> = z.data().chunks(width).flat_map(|row| row[..k].iter().copied()).collect();
        Tensor::from_vec(&[n_samples, k], cols)
    };
    let fake_a = chunked(&latents(a.latent_dim())?, |c| a.sample(c))?;
    let fake_b = chunked(&latents(b.latent_dim())?, |c| b.sample(c))?;
    let (a_real, a_own, a_other) = (scores(a, real)?, scores(a, &fake_a)?, scores(a, &fake_b)?);
    let (b_real, b_own, b_other) = (scores(b, real)?, scores(b, &fake_b)?, scores(b, &fake_a)?);
    let cal_a = calibrate_threshold(&a_real, &a_own, MIN_CALIBRATION)?;
    let cal_b = calibrate_threshold(&b_real, &b_own, MIN_CALIBRATION)?;
    let mut flags = Vec::new();
    if cal_a.non_discriminative {
        flags.push("critic A is not discriminative".into());
    }
    if cal_b.non_discriminative {
        flags.push("critic B is not discriminative".into());
    }
    let err_a_on_b = rate(&a_other, |s| s >= cal_a.threshold);
    let err_b_on_a = rate(&b_other, |s| s >= cal_b.threshold);
    let err_a_real = rate(&a_real, |s| s < cal_a.threshold);
    let err_b_real = rate(&b_real, |s| s < cal_b.threshold);
    let score = if err_a_on_b == 0.0 {
        if err_b_on_a == 0.0 {
            flags.push("neither critic is fooled; score set to 1".into());
            1.0
        } else {
            flags.push("critic A is never fooled; score is infinite".into());
            f64::INFINITY
        }
    } else {
        err_b_on_a / err_a_on_b
    };
    let winner = if score > 1.0 + TIE_BAND {
        Winner::A
    } else if score < 1.0 - TIE_BAND {
        Winner::B
    } else {
        Winner::Tie
    };
    Ok(GamReport {
        threshold_a: cal_a.threshold,
        threshold_b: cal_b.threshold,
        balanced_accuracy_a: cal_a.balanced_accuracy,
        balanced_accuracy_b: cal_b.balanced_accuracy,
        err_a_on_b_samples: err_a_on_b,
        err_b_on_a_samples: err_b_on_a,
        err_a_on_real: err_a_real,
        err_b_on_real: err_b_real,
        real_ratio: (err_b_real > 0.0).then(|| err_a_real / err_b_real),
        score,
        winner,
        n_samples,
        flags,
    })
}

/// Frame-difference and energy summary of one clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionStats {
    /// Mean over `t` of the mean `|frame[t+1] − frame[t]|`.
    pub mean_abs_frame_diff: f64,
    /// Mean `|value|` per frame.
    pub per_frame_energy: Vec<f64>,
}

/// Motion statistics of a `[T, C, H, W]` clip.
pub fn motion_stats<T: Real>(frames: &Tensor<T>) -> Result<MotionStats> {
    let s = frames.shape();
    if s.len() != 4 {
        return Err(Error::ShapeMismatch { op: "motion_stats", lhs: s.to_vec(), rhs: vec![0; 4] });
    }
    if s[0] < 2 {
        return Err(Error::InvalidParameter("motion statistics need at least two frames".into()));
    }
    let per = s[1] * s[2] * s[3];
    let frame = |t: usize| &frames.data()[t * per..(t + 1) * per];
    let energy = (0..s[0]).map(|t| frame(t).iter().map(|v| v.to_f64_lossy().abs()).sum::<f64>() / per as f64).collect();
    let diffs: f64 = (0..s[0] - 1)
        .map(|t| frame(t).iter().zip(frame(t + 1)).map(|(a, b)| (b.to_f64_lossy() - a.to_f64_lossy()).abs()).sum::<f64>() / per as f64)
        .sum();
    Ok(MotionStats { mean_abs_frame_diff: diffs / (s[0] - 1) as f64, per_frame_energy: energy })
}
