//! The generator network `y = f(x, h | w)`.
//!
//! A stack of dense layers fed with the conditioning input `x` and a noise
//! vector `h`. By default the two are concatenated; the additive mode feeds
//! `x + h` with Gaussian `h` instead.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::{rng_from_seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-z).exp()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    /// The ReLU derivative at exactly zero is 0.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => a * (1.0 - a),
            Activation::Identity => 1.0,
        }
    }
}

/// How `x` and the noise vector are combined into the network input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum InputMode {
    /// Input is `(x, h)` with `h ~ U[0, 1]^h_dim`.
    #[default]
    Concat,
    /// Input is `x + h` with `h ~ N(0, eta·I)`.
    Additive { eta: f64 },
}

/// Width and activation of one dense layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    pub width: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(width: usize, activation: Activation) -> Self {
        Self { width, activation }
    }
}

/// Dense layer with row-major `out × in` weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn check(&self) -> Result<()> {
        if self.in_dim == 0 || self.out_dim == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if self.weights.len() != self.in_dim * self.out_dim {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim * self.out_dim,
                got: self.weights.len(),
            });
        }
        if self.bias.len() != self.out_dim {
            return Err(Error::DimensionMismatch {
                expected: self.out_dim,
                got: self.bias.len(),
            });
        }
        Ok(())
    }

    #[inline]
    pub fn weight(&self, out: usize, inp: usize) -> f64 {
        self.weights[out * self.in_dim + inp]
    }
}

/// A uniform noise draw `h ∈ [0, 1]^h_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenSample(Vec<f64>);

impl HiddenSample {
    /// Fails unless every component lies in `[0, 1]`.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().all(|v| (0.0..=1.0).contains(v)) {
            Ok(Self(values))
        } else {
            Err(Error::invalid(
                "hidden sample components must lie in [0, 1]",
            ))
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// i.i.d. `U[0, 1]` components.
pub fn sample_hidden(h_dim: usize, rng: &mut impl Rng) -> HiddenSample {
    HiddenSample((0..h_dim).map(|_| rng.random::<f64>()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorNet {
    layers: Vec<Layer>,
    x_dim: usize,
    h_dim: usize,
    input_mode: InputMode,
    seed: u64,
}

/// Per-parameter gradients mirroring the layer shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct NetGradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl NetGradients {
    pub fn zeros_like(net: &GeneratorNet) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetGradients) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.slices_mut()
            .for_each(|t| t.iter_mut().for_each(|v| *v *= s));
    }

    /// Parameter tensors in canonical order: layer by layer, weights then bias.
    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.as_mut_slice(), b.as_mut_slice()])
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().flat_map(|s| s.iter().copied()).collect()
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .flat_map(|s| s.iter())
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Activations recorded by a forward pass; `pre[l]` and `post[l]` are the
/// pre- and post-activation of layer `l`, `input` the network input.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    pub pre: Vec<Vec<f64>>,
    pub post: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.post.last().map(Vec::as_slice).unwrap_or(&self.input)
    }
}

/// Builds a generator with zero biases and Gaussian weights of standard
/// deviation `sqrt(2/fan_in)` for ReLU layers and `sqrt(1/fan_in)` otherwise.
pub fn init_net(
    layers: &[LayerSpec],
    x_dim: usize,
    h_dim: usize,
    input_mode: InputMode,
    seed: u64,
) -> Result<GeneratorNet> {
    if layers.is_empty() {
        return Err(Error::invalid("generator needs at least one layer"));
    }
    if x_dim == 0 && h_dim == 0 {
        return Err(Error::invalid("generator input width is zero"));
    }
    // additive noise has the width of x
    let h_dim = match input_mode {
        InputMode::Concat => h_dim,
        InputMode::Additive { eta } => {
            if !(eta >= 0.0) || !eta.is_finite() {
                return Err(Error::invalid(
                    "additive noise variance must be nonnegative",
                ));
            }
            if x_dim == 0 {
                return Err(Error::invalid("additive input mode needs x_dim > 0"));
            }
            x_dim
        }
    };
    let mut rng = rng_from_seed(seed);
    let mut in_dim = input_width(x_dim, h_dim, input_mode);
    let mut built = Vec::with_capacity(layers.len());
    for spec in layers {
        if spec.width == 0 {
            return Err(Error::invalid("zero-width layer"));
        }
        let gain = match spec.activation {
            Activation::Relu => 2.0,
            _ => 1.0,
        };
        let std = (gain / in_dim as f64).sqrt();
        let dist = Normal::new(0.0, std).expect("finite std");
        let weights = (0..in_dim * spec.width)
            .map(|_| dist.sample(&mut rng))
            .collect();
        built.push(Layer {
            in_dim,
            out_dim: spec.width,
            activation: spec.activation,
            weights,
            bias: vec![0.0; spec.width],
        });
        in_dim = spec.width;
    }
    Ok(GeneratorNet {
        layers: built,
        x_dim,
        h_dim,
        input_mode,
        seed,
    })
}

fn input_width(x_dim: usize, h_dim: usize, mode: InputMode) -> usize {
    match mode {
        InputMode::Concat => x_dim + h_dim,
        InputMode::Additive { .. } => x_dim,
    }
}

impl GeneratorNet {
    /// Assembles a network from explicit layers, checking shape agreement.
    pub fn from_layers(
        layers: Vec<Layer>,
        x_dim: usize,
        h_dim: usize,
        input_mode: InputMode,
        seed: u64,
    ) -> Result<Self> {
        let net = Self {
            layers,
            x_dim,
            h_dim,
            input_mode,
            seed,
        };
        net.check()?;
        Ok(net)
    }

    fn check(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::invalid("generator needs at least one layer"));
        }
        if let InputMode::Additive { .. } = self.input_mode {
            if self.h_dim != self.x_dim {
                return Err(Error::invalid("additive input mode needs h_dim == x_dim"));
            }
        }
        let mut w = self.input_dim();
        for l in &self.layers {
            l.check()?;
            if l.in_dim != w {
                return Err(Error::DimensionMismatch {
                    expected: w,
                    got: l.in_dim,
                });
            }
            w = l.out_dim;
        }
        Ok(())
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    /// Length of the noise vector `forward` expects.
    pub fn h_dim(&self) -> usize {
        self.h_dim
    }

    pub fn input_mode(&self) -> InputMode {
        self.input_mode
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        input_width(self.x_dim, self.h_dim, self.input_mode)
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.out_dim).unwrap_or(0)
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Draws the noise vector appropriate to the input mode.
    pub fn sample_noise(&self, rng: &mut impl Rng) -> Vec<f64> {
        match self.input_mode {
            InputMode::Concat => sample_hidden(self.h_dim, rng).0,
            InputMode::Additive { eta } => {
                let sd = eta.sqrt();
                (0..self.h_dim)
                    .map(|_| {
                        sd * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
                    })
                    .collect()
            }
        }
    }

    fn combine(&self, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.x_dim {
            return Err(Error::DimensionMismatch {
                expected: self.x_dim,
                got: x.len(),
            });
        }
        if h.len() != self.h_dim {
            return Err(Error::DimensionMismatch {
                expected: self.h_dim,
                got: h.len(),
            });
        }
        Ok(match self.input_mode {
            InputMode::Concat => x.iter().chain(h).copied().collect(),
            InputMode::Additive { .. } => x.iter().zip(h).map(|(a, b)| a + b).collect(),
        })
    }

    /// Forward pass keeping every intermediate activation.
    pub fn forward_trace(&self, x: &[f64], h: &[f64]) -> Result<ForwardTrace> {
        let input = self.combine(x, h)?;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let a_in = post.last().unwrap_or(&input);
            let z: Vec<f64> = (0..l.out_dim)
                .map(|o| {
                    let row = &l.weights[o * l.in_dim..(o + 1) * l.in_dim];
                    l.bias[o] + row.iter().zip(a_in).map(|(w, a)| w * a).sum::<f64>()
                })
                .collect();
            let a = z.iter().map(|&v| l.activation.apply(v)).collect();
            pre.push(z);
            post.push(a);
        }
        Ok(ForwardTrace { input, pre, post })
    }

    /// `f(x, h | w)`.
    pub fn forward(&self, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
        let mut t = self.forward_trace(x, h)?;
        Ok(t.post.pop().expect("at least one layer"))
    }

    /// Accumulates `∂(out_grad · y)/∂w` for a recorded forward pass.
    pub fn backward_trace(
        &self,
        trace: &ForwardTrace,
        out_grad: &[f64],
        grads: &mut NetGradients,
    ) -> Result<()> {
        if out_grad.len() != self.output_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.output_dim(),
                got: out_grad.len(),
            });
        }
        let mut delta_post = out_grad.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let delta: Vec<f64> = delta_post
                .iter()
                .zip(&trace.pre[li])
                .zip(&trace.post[li])
                .map(|((g, &z), &a)| g * l.activation.derivative(z, a))
                .collect();
            let a_in = if li == 0 {
                &trace.input
            } else {
                &trace.post[li - 1]
            };
            let gw = &mut grads.weights[li];
            let gb = &mut grads.biases[li];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = &mut gw[o * l.in_dim..(o + 1) * l.in_dim];
                row.iter_mut().zip(a_in).for_each(|(g, a)| *g += d * a);
            }
            if li > 0 {
                let mut next = vec![0.0; l.in_dim];
                for (o, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    let row = &l.weights[o * l.in_dim..(o + 1) * l.in_dim];
                    next.iter_mut().zip(row).for_each(|(n, w)| *n += d * w);
                }
                delta_post = next;
            }
        }
        Ok(())
    }

    /// `∂(out_grad · f(x, h | w))/∂w` for every weight and bias.
    pub fn backward(&self, x: &[f64], h: &[f64], out_grad: &[f64]) -> Result<NetGradients> {
        let trace = self.forward_trace(x, h)?;
        let mut g = NetGradients::zeros_like(self);
        self.backward_trace(&trace, out_grad, &mut g)?;
        Ok(g)
    }

    /// Parameter tensors in the same order as [`NetGradients::slices`].
    pub fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn param_slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    /// Writes the versioned JSON model file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_string(),
            version: MODEL_VERSION,
            net: self.clone(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s)?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Parse(format!(
                "not a generator model file: {:?}",
                file.format
            )));
        }
        if file.version != MODEL_VERSION {
            return Err(Error::Parse(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                file.version
            )));
        }
        file.net.check()?;
        Ok(file.net)
    }
}

pub const MODEL_FORMAT: &str = "cgmmn-generator";
pub const MODEL_VERSION: u32 = 1;

/// On-disk model schema: `{format, version, net: {layers, x_dim, h_dim,
/// input_mode, seed}}` with row-major weights.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    format: String,
    version: u32,
    net: GeneratorNet,
}
