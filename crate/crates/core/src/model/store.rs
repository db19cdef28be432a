use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::autograd::BatchStats;
use crate::error::{Error, Result};
use crate::nn::{BnState, LayerKind, LayerSpec};
use crate::rng::{self, SeededRng};
use crate::scalar::Real;
use crate::tensor::{Init, Tensor};

use super::config::{Architecture, ModelConfig};

/// Tensor name suffixes of a batch-norm layer.
pub const BN_FIELDS: [&str; 4] = ["gamma", "beta", "running_mean", "running_std"];

/// One registered layer with its per-sample input and output shapes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEntry {
    pub name: String,
    pub spec: LayerSpec,
    pub input: Vec<usize>,
    pub output: Vec<usize>,
    pub bias: bool,
}

impl LayerEntry {
    pub fn kind(&self) -> LayerKind {
        self.spec.kind
    }

    /// Network prefix: `g0`, `g1` or `d`.
    pub fn network(&self) -> &str {
        self.name.split('.').next().unwrap_or("")
    }
}

/// Named parameter tensors plus batch-norm statistics, with the ordered
/// registry of the layers that own them.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
    layers: Vec<LayerEntry>,
}

/// Whether a tensor name refers to a trainable parameter.
pub fn is_trainable(name: &str) -> bool {
    [".w", ".b", ".gamma", ".beta"].iter().any(|s| name.ends_with(s))
}

/// Whether a tensor or layer name belongs to the generator.
pub fn is_generator(name: &str) -> bool {
    name.starts_with("g0.") || name.starts_with("g1.")
}

/// Whether a tensor or layer name belongs to the discriminator.
pub fn is_discriminator(name: &str) -> bool {
    name.starts_with("d.")
}

impl<T: Real> ParamStore<T> {
    /// Empty store with the given registry; tensors are added separately.
    pub fn with_layers(layers: Vec<LayerEntry>) -> Self {
        Self { tensors: BTreeMap::new(), layers }
    }

    pub fn layers(&self) -> &[LayerEntry] {
        &self.layers
    }

    pub fn layer(&self, name: &str) -> Result<&LayerEntry> {
        self.layers.iter().find(|l| l.name == name).ok_or_else(|| Error::MissingParameter(name.into()))
    }

    /// Entries `{prefix}.0`, `{prefix}.1`, ... in order.
    pub fn stack(&self, prefix: &str) -> Vec<&LayerEntry> {
        self.layers
            .iter()
            .filter(|l| l.name.strip_prefix(prefix).and_then(|r| r.strip_prefix('.')).is_some_and(|r| r.parse::<usize>().is_ok()))
            .collect()
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors.get(name).ok_or_else(|| Error::MissingParameter(name.into()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors.get_mut(name).ok_or_else(|| Error::MissingParameter(name.into()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    /// Insert or replace a tensor; replacements must keep the shape.
    pub fn insert(&mut self, name: &str, t: Tensor<T>) -> Result<()> {
        if let Some(old) = self.tensors.get(name) {
            if old.shape() != t.shape() {
                return Err(Error::ShapeMismatch { op: "param_store", lhs: old.shape().to_vec(), rhs: t.shape().to_vec() });
            }
        }
        self.tensors.insert(name.to_string(), t);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().filter(|(k, _)| is_trainable(k)).map(|(_, v)| v.numel()).sum()
    }

    /// Copy of the batch-norm state of a layer.
    pub fn bn_state(&self, layer: &str) -> Result<BnState<T>> {
        let entry = self.layer(layer)?;
        if entry.kind() != LayerKind::Batchnorm {
            return Err(Error::InvalidParameter(format!("{layer} is not a batchnorm layer")));
        }
        let f = |field: &str| self.get(&format!("{layer}.{field}")).cloned();
        Ok(BnState {
            gamma: f("gamma")?,
            beta: f("beta")?,
            running_mean: f("running_mean")?,
            running_std: f("running_std")?,
            eps: entry.spec.eps,
            momentum: entry.spec.momentum,
        })
    }

    pub fn set_bn_state(&mut self, layer: &str, state: BnState<T>) -> Result<()> {
        self.insert(&format!("{layer}.gamma"), state.gamma)?;
        self.insert(&format!("{layer}.beta"), state.beta)?;
        self.insert(&format!("{layer}.running_mean"), state.running_mean)?;
        self.insert(&format!("{layer}.running_std"), state.running_std)
    }

    /// Fold batch statistics gathered during a train-mode forward into the
    /// running estimates.
    pub fn apply_bn_updates(&mut self, updates: &[(String, BatchStats<T>)]) -> Result<()> {
        for (layer, stats) in updates {
            let mut state = self.bn_state(layer)?;
            state.update_running(stats);
            self.set_bn_state(layer, state)?;
        }
        Ok(())
    }

    /// Check that every registered layer resolves its tensors with the
    /// expected shapes.
    pub fn validate(&self) -> Result<()> {
        for entry in &self.layers {
            for (name, shape) in expected_tensors(entry)? {
                let t = self.get(&name)?;
                if t.shape() != shape.as_slice() {
                    return Err(Error::ShapeMismatch { op: "param_store", lhs: shape, rhs: t.shape().to_vec() });
                }
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(|t| t.all_finite())
    }

    /// Convert every tensor to another precision.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect(), layers: self.layers.clone() }
    }
}

/// Names and shapes of the tensors a layer owns.
pub fn expected_tensors(entry: &LayerEntry) -> Result<Vec<(String, Vec<usize>)>> {
    let mut out = Vec::new();
    if let Some(w) = entry.spec.weight_shape(&entry.input)? {
        let outc = w[0];
        out.push((format!("{}.w", entry.name), w));
        if entry.bias {
            out.push((format!("{}.b", entry.name), vec![outc]));
        }
    }
    if entry.kind() == LayerKind::Batchnorm {
        for f in BN_FIELDS {
            out.push((format!("{}.{f}", entry.name), vec![entry.input[0]]));
        }
    }
    Ok(out)
}

/// Register a stack; weight layers get a bias unless batch norm follows.
fn register(layers: &mut Vec<LayerEntry>, prefix: &str, stack: &[LayerSpec], input: &[usize]) -> Result<Vec<usize>> {
    let mut shape = input.to_vec();
    for (i, spec) in stack.iter().enumerate() {
        let output = spec.output_shape(&shape)?;
        let bias = spec.kind.has_weight() && stack.get(i + 1).map(|s| s.kind) != Some(LayerKind::Batchnorm);
        layers.push(LayerEntry { name: format!("{prefix}.{i}"), spec: spec.clone(), input: shape, output: output.clone(), bias });
        shape = output;
    }
    Ok(shape)
}

/// Layer registry for a configuration.
pub fn registry(config: &ModelConfig) -> Result<Vec<LayerEntry>> {
    config.trace()?;
    let mut layers = Vec::new();
    let head_map = [config.head_channels, config.head_size, config.head_size];
    let head = |layers: &mut Vec<LayerEntry>, name: &str, inputs: usize, shape: &[usize]| -> Result<()> {
        let flat: usize = shape.iter().product();
        layers.push(LayerEntry {
            name: format!("g1.{name}.0"),
            spec: LayerSpec::linear(flat),
            input: vec![inputs],
            output: vec![flat],
            bias: false,
        });
        register_named(layers, &format!("g1.{name}"), 1, &[LayerSpec::batchnorm(), LayerSpec::relu()], shape)
    };
    match config.architecture {
        Architecture::Tgan => {
            register(&mut layers, "g0", &config.temporal_stack, &[config.k0 + config.num_categories, 1])?;
            for h in config.image_heads() {
                let inputs = match h {
                    "z0" => config.k0,
                    "z1" => config.k1,
                    _ => config.num_categories,
                };
                head(&mut layers, h, inputs, &head_map)?;
            }
        }
        Architecture::Video3d => {
            let seed = [config.head_channels, config.seed_frames, config.head_size, config.head_size];
            head(&mut layers, "seed", config.k0, &seed)?;
        }
    }
    register(&mut layers, "g1", &config.image_stack, &config.image_input())?;
    register(&mut layers, "d", &config.disc_stack, &config.disc_input())?;
    Ok(layers)
}

fn register_named(layers: &mut Vec<LayerEntry>, prefix: &str, start: usize, stack: &[LayerSpec], input: &[usize]) -> Result<()> {
    let mut shape = input.to_vec();
    for (i, spec) in stack.iter().enumerate() {
        let output = spec.output_shape(&shape)?;
        layers.push(LayerEntry {
            name: format!("{prefix}.{}", start + i),
            spec: spec.clone(),
            input: shape,
            output: output.clone(),
            bias: false,
        });
        shape = output;
    }
    Ok(())
}

/// Weight initializer per network: HeNormal for the temporal generator, the
/// 3D generator and the discriminator; small uniform for the image generator.
fn weight_init(config: &ModelConfig, layer: &str) -> Init {
    let image_generator = layer.starts_with("g1.") && config.architecture == Architecture::Tgan;
    if image_generator {
        Init::Uniform { low: -0.01, high: 0.01 }
    } else {
        Init::HeNormal
    }
}

/// Fresh parameters for a configuration, deterministic in `seed`.
pub fn build<T: Real>(config: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    let layers = registry(config)?;
    let mut store = ParamStore::with_layers(layers.clone());
    let mut rngs: BTreeMap<String, SeededRng> = BTreeMap::new();
    for (i, net) in ["g0", "g1", "d"].iter().enumerate() {
        rngs.insert(net.to_string(), rng::seeded(rng::mix_seed(seed, i as u64)));
    }
    for entry in &layers {
        let rng = rngs.get_mut(entry.network()).expect("known network prefix");
        for (name, shape) in expected_tensors(entry)? {
            let field = name.rsplit('.').next().unwrap();
            let t = match field {
                "w" => Tensor::sample(&shape, weight_init(config, &entry.name), rng)?,
                "gamma" | "running_std" => Tensor::ones(&shape)?,
                _ => Tensor::zeros(&shape)?,
            };
            store.insert(&name, t)?;
        }
    }
    Ok(store)
}
