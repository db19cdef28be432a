use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerKind, LayerSpec};

/// Generator family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Temporal generator feeding a per-frame image generator.
    #[default]
    Tgan,
    /// Single linear seed followed by 3D transposed convolutions.
    Video3d,
}

fn yes() -> bool {
    true
}

fn one() -> usize {
    1
}

/// Declarative description of the generator and discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    #[serde(default)]
    pub architecture: Architecture,
    /// Latent size of `z0`.
    pub k0: usize,
    /// Latent size of each `z1[t]`.
    pub k1: usize,
    pub frames: usize,
    pub resolution: usize,
    pub channels: usize,
    /// Output channels of the first discriminator convolution.
    pub base_channels: usize,
    /// Channels of each linear head after reshaping.
    pub head_channels: usize,
    /// Spatial side of each linear head after reshaping.
    pub head_size: usize,
    /// Temporal extent of the seed volume (3D generator only).
    #[serde(default = "one")]
    pub seed_frames: usize,
    #[serde(default)]
    pub temporal_stack: Vec<LayerSpec>,
    pub image_stack: Vec<LayerSpec>,
    pub disc_stack: Vec<LayerSpec>,
    /// Number of label categories; 0 for an unconditional model.
    #[serde(default)]
    pub num_categories: usize,
    /// Whether the image generator also consumes `z0`.
    #[serde(default = "yes")]
    pub image_uses_z0: bool,
}

/// Per-sample shapes through every stack, input first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ModelTrace {
    pub temporal: Vec<Vec<usize>>,
    pub image: Vec<Vec<usize>>,
    pub disc: Vec<Vec<usize>>,
}

fn bn_relu(spec: LayerSpec) -> [LayerSpec; 3] {
    [spec, LayerSpec::batchnorm(), LayerSpec::relu()]
}

fn temporal_stack(first: usize, hidden: &[usize], k1: usize) -> Vec<LayerSpec> {
    let mut s = Vec::new();
    s.extend(bn_relu(LayerSpec::deconv1d(1, first, 0, 1)));
    for &c in hidden {
        s.extend(bn_relu(LayerSpec::deconv1d(4, c, 1, 2)));
    }
    s.push(LayerSpec::deconv1d(4, k1, 1, 2));
    s.push(LayerSpec::tanh());
    s
}

fn image_stack(hidden: &[usize], channels: usize) -> Vec<LayerSpec> {
    let mut s = Vec::new();
    for &c in hidden {
        s.extend(bn_relu(LayerSpec::deconv2d(4, c, 1, 2)));
    }
    s.push(LayerSpec::deconv2d(3, channels, 1, 1));
    s.push(LayerSpec::tanh());
    s
}

fn video_stack(hidden: &[usize], channels: usize) -> Vec<LayerSpec> {
    let mut s = Vec::new();
    for &c in hidden {
        s.extend(bn_relu(LayerSpec::deconv3d(4, c, 1, 2)));
    }
    s.push(LayerSpec::deconv3d(4, channels, 1, 2));
    s.push(LayerSpec::tanh());
    s
}

fn disc_stack(widths: &[usize]) -> Vec<LayerSpec> {
    let mut s = Vec::new();
    for (i, &c) in widths.iter().enumerate() {
        s.push(LayerSpec::conv3d(4, c, 1, 2));
        if i > 0 {
            s.push(LayerSpec::batchnorm());
        }
        s.push(LayerSpec::leaky_relu(0.2));
    }
    s.push(LayerSpec::linear(1));
    s
}

impl ModelConfig {
    /// Preset names accepted by [`ModelConfig::preset`].
    pub const PRESETS: [&'static str; 6] = ["paper64", "desk32", "tiny", "paper64-3d", "desk32-3d", "tiny-3d"];

    /// Named configurations: `paper64` follows the published layer table,
    /// `desk32` is the CPU-sized grayscale variant, `tiny` is for tests, and
    /// `-3d` variants swap the generator for the 3D baseline.
    pub fn preset(name: &str) -> Result<Self> {
        let base = |name: &str, k: usize, frames: usize, res: usize, channels: usize| ModelConfig {
            name: name.to_string(),
            architecture: Architecture::Tgan,
            k0: k,
            k1: k,
            frames,
            resolution: res,
            channels,
            base_channels: 0,
            head_channels: 0,
            head_size: 4,
            seed_frames: 1,
            temporal_stack: Vec::new(),
            image_stack: Vec::new(),
            disc_stack: Vec::new(),
            num_categories: 0,
            image_uses_z0: true,
        };
        let mut cfg = match name {
            "paper64" => ModelConfig {
                base_channels: 64,
                head_channels: 256,
                temporal_stack: temporal_stack(512, &[256, 128, 128], 100),
                image_stack: image_stack(&[256, 128, 64, 32], 3),
                disc_stack: disc_stack(&[64, 128, 256, 512]),
                ..base(name, 100, 16, 64, 3)
            },
            "desk32" => ModelConfig {
                base_channels: 16,
                head_channels: 64,
                temporal_stack: temporal_stack(128, &[64, 32, 32], 25),
                image_stack: image_stack(&[64, 32, 16], 1),
                disc_stack: disc_stack(&[16, 32, 64]),
                ..base(name, 25, 16, 32, 1)
            },
            "tiny" => ModelConfig {
                base_channels: 4,
                head_channels: 8,
                temporal_stack: temporal_stack(16, &[8], 8),
                image_stack: image_stack(&[8], 1),
                disc_stack: disc_stack(&[4, 8]),
                ..base(name, 8, 4, 8, 1)
            },
            "paper64-3d" => ModelConfig {
                architecture: Architecture::Video3d,
                head_channels: 512,
                temporal_stack: Vec::new(),
                image_stack: video_stack(&[256, 128, 64], 3),
                ..Self::preset("paper64")?
            },
            "desk32-3d" => ModelConfig {
                architecture: Architecture::Video3d,
                head_channels: 128,
                temporal_stack: Vec::new(),
                seed_frames: 2,
                image_stack: video_stack(&[64, 32], 1),
                ..Self::preset("desk32")?
            },
            "tiny-3d" => ModelConfig {
                architecture: Architecture::Video3d,
                head_channels: 8,
                head_size: 2,
                temporal_stack: Vec::new(),
                image_stack: video_stack(&[4], 1),
                ..Self::preset("tiny")?
            },
            other => return Err(Error::InvalidConfig(format!("unknown preset {other:?}"))),
        };
        cfg.name = name.to_string();
        Ok(cfg)
    }

    /// The same configuration with `v` label categories.
    pub fn with_categories(mut self, v: usize) -> Self {
        self.num_categories = v;
        self
    }

    pub fn is_conditional(&self) -> bool {
        self.num_categories > 0
    }

    /// Number of linear heads feeding the image generator.
    pub fn image_heads(&self) -> Vec<&'static str> {
        let mut heads = Vec::new();
        if self.image_uses_z0 {
            heads.push("z0");
        }
        heads.push("z1");
        if self.is_conditional() {
            heads.push("label");
        }
        heads
    }

    /// Per-sample discriminator input `[C + V, T, H, W]`.
    pub fn disc_input(&self) -> Vec<usize> {
        vec![self.channels + self.num_categories, self.frames, self.resolution, self.resolution]
    }

    /// Per-sample video shape `[C, T, H, W]`.
    pub fn video_shape(&self) -> Vec<usize> {
        vec![self.channels, self.frames, self.resolution, self.resolution]
    }

    /// Input shape of the image (or 3D) stack.
    pub fn image_input(&self) -> Vec<usize> {
        match self.architecture {
            Architecture::Tgan => {
                vec![self.head_channels * self.image_heads().len(), self.head_size, self.head_size]
            }
            Architecture::Video3d => vec![self.head_channels, self.seed_frames, self.head_size, self.head_size],
        }
    }

    /// Validate scalar fields and trace every stack; errors name the stack
    /// whose shapes do not close.
    pub fn trace(&self) -> Result<ModelTrace> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (field, v) in [
            ("k0", self.k0),
            ("k1", self.k1),
            ("frames", self.frames),
            ("resolution", self.resolution),
            ("channels", self.channels),
            ("head_channels", self.head_channels),
            ("head_size", self.head_size),
            ("seed_frames", self.seed_frames),
        ] {
            if v == 0 {
                return bad(format!("{field} must be positive"));
            }
        }
        let temporal = match self.architecture {
            Architecture::Tgan => {
                let t = run_stack("temporal", &self.temporal_stack, vec![self.k0 + self.num_categories, 1], &[LayerKind::Deconv1d])?;
                expect_end("temporal", &self.temporal_stack, &t, &[self.k1, self.frames])?;
                t
            }
            Architecture::Video3d => {
                if !self.temporal_stack.is_empty() {
                    return bad("the 3D generator has no temporal stack".into());
                }
                if self.is_conditional() {
                    return bad("the 3D generator is unconditional".into());
                }
                Vec::new()
            }
        };
        let (kind, end) = match self.architecture {
            Architecture::Tgan => (LayerKind::Deconv2d, vec![self.channels, self.resolution, self.resolution]),
            Architecture::Video3d => (LayerKind::Deconv3d, self.video_shape()),
        };
        let image = run_stack("image", &self.image_stack, self.image_input(), &[kind])?;
        expect_end("image", &self.image_stack, &image, &end)?;
        let disc = run_stack("disc", &self.disc_stack, self.disc_input(), &[LayerKind::Conv3d, LayerKind::Linear])?;
        self.check_disc(&disc)?;
        Ok(ModelTrace { temporal, image, disc })
    }

    fn check_disc(&self, trace: &[Vec<usize>]) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("disc: {m}")));
        let stack = &self.disc_stack;
        let Some(last) = stack.last() else { return bad("empty stack") };
        if last.kind != LayerKind::Linear || last.out_channels != 1 {
            return bad("must end with linear(1)");
        }
        if stack[..stack.len() - 1].iter().any(|s| s.kind == LayerKind::Linear) {
            return bad("linear is only allowed as the final layer");
        }
        if stack[0].kind != LayerKind::Conv3d || stack[0].out_channels != self.base_channels {
            return bad("first layer must be conv3d with base_channels outputs");
        }
        if stack.get(1).is_some_and(|s| s.kind == LayerKind::Batchnorm) {
            return bad("no batch normalization directly after the first convolution");
        }
        if trace[trace.len() - 2].contains(&0) {
            return bad("volume collapsed before the linear layer");
        }
        Ok(())
    }
}

fn run_stack(what: &str, stack: &[LayerSpec], input: Vec<usize>, weighted: &[LayerKind]) -> Result<Vec<Vec<usize>>> {
    if stack.is_empty() {
        return Err(Error::InvalidConfig(format!("{what}: empty stack")));
    }
    let mut shapes = vec![input];
    for (i, spec) in stack.iter().enumerate() {
        if spec.kind.has_weight() && !weighted.contains(&spec.kind) {
            return Err(Error::InvalidConfig(format!("{what}.{i}: {} not allowed here", spec.kind.name())));
        }
        let out = spec.output_shape(shapes.last().unwrap()).map_err(|e| Error::InvalidConfig(format!("{what}.{i}: {e}")))?;
        shapes.push(out);
    }
    Ok(shapes)
}

fn expect_end(what: &str, stack: &[LayerSpec], trace: &[Vec<usize>], end: &[usize]) -> Result<()> {
    let last = trace.last().unwrap();
    if last.as_slice() != end {
        return Err(Error::InvalidConfig(format!("{what}: trace ends at {last:?}, expected {end:?}")));
    }
    if stack.last().map(|s| s.kind) != Some(LayerKind::Tanh) {
        return Err(Error::InvalidConfig(format!("{what}: must end with tanh")));
    }
    Ok(())
}
