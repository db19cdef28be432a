use proptest::prelude::*;

use tgan_core::data::{plan_clip, render_clip, sample_batch, synthesize, DataConfig, ShapeKind};
use tgan_core::rng;
use tgan_core::Tensor;

fn config(seed: u64, res: usize, radius: usize, speed: [f64; 2]) -> DataConfig {
    DataConfig { radius, speed, ..DataConfig::new(1, res, seed) }
}

/// Mean position of lit pixels in frame `f`.
fn centroid(clip: &Tensor<f64>, f: usize, res: usize) -> Option<[f64; 2]> {
    let frame = &clip.data()[f * res * res..(f + 1) * res * res];
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
    for (i, &v) in frame.iter().enumerate() {
        if v > 0.0 {
            sx += (i % res) as f64;
            sy += (i / res) as f64;
            n += 1.0;
        }
    }
    (n > 0.0).then(|| [sx / n, sy / n])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn single_shape_physics(seed: u64, res in 12usize..40, radius in 1usize..4, lo in 0.3f64..3.0, extra in 0.0f64..4.0) {
        let c = config(seed, res, radius, [lo, lo + extra]);
        let plan = plan_clip(&c, 0).unwrap();
        let clip: Tensor<f64> = render_clip(&c, &plan).unwrap();
        let traj = &plan.shapes[0];
        let (min, max) = (radius as f64, (res - 1 - radius) as f64);
        let speed = (traj.velocities[0][0].powi(2) + traj.velocities[0][1].powi(2)).sqrt();
        prop_assert!(speed >= lo - 1e-12 && speed <= lo + extra + 1e-12);
        for f in 0..c.clip_len {
            let p = traj.positions[f];
            let v = traj.velocities[f];
            // The whole shape stays inside the frame.
            prop_assert!(p.iter().all(|&x| x >= min && x <= max));
            // Speed never changes; bounces only flip components.
            prop_assert!((v[0].abs() - traj.velocities[0][0].abs()).abs() < 1e-12);
            prop_assert!((v[1].abs() - traj.velocities[0][1].abs()).abs() < 1e-12);
            // The rendered shape is symmetric about its rounded center.
            let got = centroid(&clip, f, res).unwrap();
            prop_assert!((got[0] - p[0]).abs() <= 0.5 + 1e-12 && (got[1] - p[1]).abs() <= 0.5 + 1e-12);
            if f + 1 < c.clip_len {
                let next = traj.velocities[f + 1];
                for a in 0..2 {
                    let free = p[a] + v[a];
                    if next[a] != v[a] {
                        // Direction changes only on wall contact.
                        prop_assert!(free < min || free > max);
                    } else {
                        prop_assert!((traj.positions[f + 1][a] - free).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn shape_masks_fit_their_box(radius in 1i64..6, dx in -8i64..8, dy in -8i64..8) {
        for kind in ShapeKind::ALL {
            if kind.covers(dx, dy, radius) {
                prop_assert!(dx.abs() <= radius && dy.abs() <= radius);
            }
        }
        prop_assert!(ShapeKind::Square.covers(0, 0, radius));
    }
}

#[test]
fn datasets_are_reproducible() {
    let c = DataConfig { labeled: true, kinds: vec![ShapeKind::Dot, ShapeKind::Cross], ..DataConfig::new(20, 16, 5) };
    let a = synthesize::<f64>(&c).unwrap();
    assert_eq!(a, synthesize::<f64>(&c).unwrap());
    let labels = a.labels.as_ref().unwrap();
    assert!(labels.iter().all(|&l| l < 2));
    assert!(labels.contains(&0) && labels.contains(&1));
    let other = synthesize::<f64>(&DataConfig { seed: 6, ..c }).unwrap();
    assert_ne!(a.clips, other.clips);
}

#[test]
fn batches_carry_windows_and_labels() {
    let c = DataConfig { labeled: true, ..DataConfig::new(6, 16, 8) };
    let set = synthesize::<f64>(&c).unwrap();
    let b = sample_batch(&set, 16, 5, &mut rng::seeded(3)).unwrap();
    assert_eq!(b.videos.shape(), [5, 1, 16, 16, 16]);
    let labels = b.labels.unwrap();
    for (k, &(i, off)) in b.picks.iter().enumerate() {
        assert!(off + 16 <= c.clip_len);
        assert_eq!(Some(labels[k]), set.labels.as_ref().map(|l| l[i]));
        // Frame 0 of the window is frame `off` of the clip.
        let clip = &set.clips[i];
        for p in 0..256 {
            assert_eq!(b.videos.data()[k * 16 * 256 + p], clip.data()[off * 256 + p]);
        }
    }
    assert!(sample_batch(&set, 21, 1, &mut rng::seeded(3)).is_err());
}

#[test]
fn rgb_clips_repeat_the_mask() {
    let c = DataConfig { channels: 3, ..DataConfig::new(1, 16, 2) };
    let clip = &synthesize::<f64>(&c).unwrap().clips[0];
    assert_eq!(clip.shape(), [20, 3, 16, 16]);
    let frame = clip.index_leading(0).unwrap();
    let ch = |k: usize| frame.data()[k * 256..(k + 1) * 256].to_vec();
    assert_eq!(ch(0), ch(1));
    assert_eq!(ch(1), ch(2));
}
