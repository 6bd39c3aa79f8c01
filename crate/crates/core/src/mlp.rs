//! Dense ReLU network with a sigmoid output, binary cross-entropy, exact
//! backpropagation, Glorot initialization and SGD with Nesterov momentum.
//!
//! Arithmetic is generic over `f32` (training) and `f64` (gradient checks).
//! Probabilities, losses and accuracies are always carried in `f64`.

use std::fmt::Debug;
use std::io::Write;
use std::ops::AddAssign;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, LinalgScalar, ScalarOperand, Zip};
use num_traits::{Float, FromPrimitive};
use rand::distributions::{Distribution, Uniform};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

pub const PROB_EPSILON: f64 = 1e-7;
pub const DEFAULT_MOMENTUM: f64 = 0.9;

pub trait Scalar:
    LinalgScalar + Float + FromPrimitive + ScalarOperand + AddAssign + Debug + Default + Send + Sync + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

fn cast<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("finite conversion")
}

/// Byte to input-feature mapping.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureScaling {
    /// x / 255
    #[default]
    UnitInterval,
    /// x as-is
    Raw,
}

impl FeatureScaling {
    pub fn divisor(self) -> f64 {
        match self {
            FeatureScaling::UnitInterval => 255.0,
            FeatureScaling::Raw => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureScaling::UnitInterval => "unit-interval",
            FeatureScaling::Raw => "raw",
        }
    }

    fn from_name(s: &str) -> Option<Self> {
        match s {
            "unit-interval" => Some(FeatureScaling::UnitInterval),
            "raw" => Some(FeatureScaling::Raw),
            _ => None,
        }
    }
}

/// Scales a row-major byte matrix into network inputs.
pub fn feature_matrix<T: Scalar>(bytes: &[u8], feature_len: usize, scaling: FeatureScaling) -> Result<Array2<T>> {
    if feature_len == 0 || bytes.len() % feature_len != 0 {
        return Err(Error::Shape(format!(
            "{} bytes do not form rows of {feature_len}",
            bytes.len()
        )));
    }
    let table: Vec<T> = (0..256).map(|b| cast(b as f64 / scaling.divisor())).collect();
    let data = bytes.iter().map(|&b| table[b as usize]).collect();
    Ok(Array2::from_shape_vec((bytes.len() / feature_len, feature_len), data).expect("checked shape"))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelPreset {
    /// 2 hidden layers of 100
    #[default]
    Small,
    /// 4 hidden layers of 600
    Big,
}

impl ModelPreset {
    pub fn hidden(self) -> Vec<usize> {
        match self {
            ModelPreset::Small => vec![100; 2],
            ModelPreset::Big => vec![600; 4],
        }
    }

    pub fn dims(self, input_len: usize) -> Vec<usize> {
        let mut d = vec![input_len];
        d.extend(self.hidden());
        d.push(1);
        d
    }
}

/// One affine map; `weights` has shape (fan_in, fan_out).
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Layer<T> {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Layer {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel<T = f32> {
    layers: Vec<Layer<T>>,
    scaling: FeatureScaling,
}

/// Uniform draws strictly inside (-limit, limit), limit = sqrt(6 / (fan_in + fan_out)).
pub fn glorot_uniform_init<T: Scalar, R: RngCore + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Array2<T> {
    let limit = glorot_limit(fan_in, fan_out);
    let limit_t: T = cast(limit);
    let dist = Uniform::new(-limit, limit);
    Array2::from_shape_simple_fn((fan_in, fan_out), || loop {
        let w: T = cast(dist.sample(rng));
        if w.abs() < limit_t {
            break w;
        }
    })
}

pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Per-layer activations kept by the forward pass for backpropagation.
struct Trace<T> {
    /// inputs to each layer (the last entry is unused)
    inputs: Vec<Array2<T>>,
    logits: Array1<T>,
}

impl<T: Scalar> MlpModel<T> {
    pub fn zeros(dims: &[usize], scaling: FeatureScaling) -> Result<Self> {
        validate_dims(dims)?;
        let layers = dims.windows(2).map(|w| Layer::zeros(w[0], w[1])).collect();
        Ok(MlpModel { layers, scaling })
    }

    /// Glorot-uniform weights, zero biases; layer `i` draws from its own subseed.
    pub fn glorot(dims: &[usize], scaling: FeatureScaling, seed: u64) -> Result<Self> {
        validate_dims(dims)?;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer {
                weights: glorot_uniform_init(w[0], w[1], &mut rng_for(seed, "glorot", i as u64)),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Ok(MlpModel { layers, scaling })
    }

    pub fn from_layers(layers: Vec<Layer<T>>, scaling: FeatureScaling) -> Result<Self> {
        let mut dims = vec![layers.first().map(|l| l.weights.nrows()).unwrap_or(0)];
        for l in &layers {
            if l.weights.nrows() != *dims.last().unwrap() || l.bias.len() != l.weights.ncols() {
                return Err(Error::Shape("layer shapes do not chain".into()));
            }
            dims.push(l.weights.ncols());
        }
        validate_dims(&dims)?;
        Ok(MlpModel { layers, scaling })
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_len()];
        d.extend(self.layers.iter().map(|l| l.weights.ncols()));
        d
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn scaling(&self) -> FeatureScaling {
        self.scaling
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> MlpModel<U> {
        let conv = |x: &T| cast::<U>(x.to_f64().unwrap());
        MlpModel {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: l.weights.map(conv),
                    bias: l.bias.map(conv),
                })
                .collect(),
            scaling: self.scaling,
        }
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_len() {
            return Err(Error::Shape(format!(
                "batch has {} columns, model expects {}",
                x.ncols(),
                self.input_len()
            )));
        }
        Ok(())
    }

    fn trace(&self, x: ArrayView2<T>) -> Trace<T> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.weights);
            z += &l.bias;
            if i < last {
                z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
            }
            inputs.push(a);
            a = z;
        }
        Trace {
            inputs,
            logits: a.index_axis_move(Axis(1), 0),
        }
    }

    /// Output logits before the sigmoid.
    pub fn logits(&self, x: ArrayView2<T>) -> Result<Array1<T>> {
        self.check_input(&x)?;
        Ok(self.trace(x).logits)
    }

    /// Clamped probabilities of class 1.
    pub fn forward(&self, x: ArrayView2<T>) -> Result<Vec<f64>> {
        Ok(self.logits(x)?.iter().map(|&z| probability(z)).collect())
    }

    /// Mean BCE loss and its gradient for a batch.
    pub fn backward(&self, x: ArrayView2<T>, y: &[u8]) -> Result<(f64, Vec<Layer<T>>)> {
        let (loss, grads, _) = self.backward_with_probs(x, y)?;
        Ok((loss, grads))
    }

    /// Like [`backward`](Self::backward), also returning the batch probabilities.
    pub fn backward_with_probs(&self, x: ArrayView2<T>, y: &[u8]) -> Result<(f64, Vec<Layer<T>>, Vec<f64>)> {
        self.check_input(&x)?;
        if y.len() != x.nrows() || y.is_empty() {
            return Err(Error::Shape(format!("{} labels for {} rows", y.len(), x.nrows())));
        }
        let trace = self.trace(x);
        let n = y.len() as f64;
        let probs: Vec<f64> = trace.logits.iter().map(|&z| probability(z)).collect();
        let loss = bce_loss(y, &probs)?;
        // d loss / d logit; the clamp is flat, so clamped outputs pass no gradient
        let dz: Vec<T> = probs
            .iter()
            .zip(y)
            .map(|(&p, &t)| {
                if p <= PROB_EPSILON || p >= 1.0 - PROB_EPSILON {
                    T::zero()
                } else {
                    cast((p - t as f64) / n)
                }
            })
            .collect();
        let mut delta = Array2::from_shape_vec((y.len(), 1), dz).expect("column");
        let mut grads = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate().rev() {
            let a = &trace.inputs[i];
            let gw = a.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            grads.push(Layer { weights: gw, bias: gb });
            if i > 0 {
                let mut d = delta.dot(&l.weights.t());
                // a is the ReLU output of the previous layer; a > 0 iff its pre-activation was > 0
                Zip::from(&mut d).and(a).for_each(|d, &a| {
                    if a <= T::zero() {
                        *d = T::zero();
                    }
                });
                delta = d;
            }
        }
        grads.reverse();
        Ok((loss, grads, probs))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_checkpoint()).map_err(|e| Error::io(path, e))
    }

    /// Text header followed by little-endian f32 parameters, layer by layer, weights then bias.
    pub fn to_checkpoint(&self) -> Vec<u8> {
        let dims: Vec<String> = self.dims().iter().map(|d| d.to_string()).collect();
        let mut out = format!(
            "cpalab-mlp 1\ndims {}\nhidden relu\noutput sigmoid\nscaling {} {}\nparams {}\nend\n",
            dims.join(" "),
            self.scaling.name(),
            self.scaling.divisor(),
            self.parameter_count()
        )
        .into_bytes();
        for l in &self.layers {
            for v in l.weights.iter().chain(l.bias.iter()) {
                out.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
            }
        }
        out
    }
}

impl MlpModel<f32> {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&bytes)
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self> {
        const END: &[u8] = b"\nend\n";
        let split = bytes
            .windows(END.len())
            .position(|w| w == END)
            .ok_or_else(|| Error::format("checkpoint header not terminated"))?;
        let header = std::str::from_utf8(&bytes[..split]).map_err(|_| Error::format("checkpoint header not UTF-8"))?;
        let payload = &bytes[split + END.len()..];
        let mut lines = header.lines();
        if lines.next() != Some("cpalab-mlp 1") {
            return Err(Error::format("not a version-1 model checkpoint"));
        }
        let mut dims = None;
        let mut scaling = None;
        for line in lines {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("dims") => {
                    dims = Some(
                        parts
                            .map(|p| p.parse::<usize>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| Error::format("bad dims line"))?,
                    )
                }
                Some("hidden") if parts.next() != Some("relu") => return Err(Error::format("unsupported hidden activation")),
                Some("output") if parts.next() != Some("sigmoid") => return Err(Error::format("unsupported output activation")),
                Some("scaling") => {
                    scaling = Some(
                        parts
                            .next()
                            .and_then(FeatureScaling::from_name)
                            .ok_or_else(|| Error::format("unknown scaling"))?,
                    )
                }
                _ => {}
            }
        }
        let dims = dims.ok_or_else(|| Error::format("checkpoint has no dims"))?;
        let mut model = MlpModel::zeros(&dims, scaling.unwrap_or_default()).map_err(|e| Error::format(e.to_string()))?;
        if payload.len() != model.parameter_count() * 4 {
            return Err(Error::format(format!(
                "payload of {} bytes, expected {}",
                payload.len(),
                model.parameter_count() * 4
            )));
        }
        let mut values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()));
        for l in &mut model.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = values.next().unwrap();
            }
        }
        Ok(model)
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 || dims.contains(&0) {
        return Err(Error::Shape(format!("invalid layer dims {dims:?}")));
    }
    if dims.last() != Some(&1) {
        return Err(Error::Shape("output layer must have width 1".into()));
    }
    Ok(())
}

/// Sigmoid evaluated in f64 and clamped to [eps, 1 - eps].
pub fn probability<T: Scalar>(logit: T) -> f64 {
    let z = logit.to_f64().unwrap();
    let p = 1.0 / (1.0 + (-z).exp());
    p.clamp(PROB_EPSILON, 1.0 - PROB_EPSILON)
}

/// Mean binary cross-entropy in nats.
pub fn bce_loss(y: &[u8], probs: &[f64]) -> Result<f64> {
    if y.len() != probs.len() {
        return Err(Error::LengthMismatch {
            what: "probabilities",
            expected: y.len(),
            actual: probs.len(),
        });
    }
    if y.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = y
        .iter()
        .zip(probs)
        .map(|(&t, &p)| if t == 1 { -p.ln() } else { -(1.0 - p).ln() })
        .sum();
    Ok(total / y.len() as f64)
}

#[derive(Clone, Debug)]
pub struct OptimizerState<T = f32> {
    pub velocity: Vec<Layer<T>>,
    pub learning_rate: f64,
    pub momentum: f64,
    pub nesterov: bool,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(model: &MlpModel<T>, learning_rate: f64, momentum: f64, nesterov: bool) -> Result<Self> {
        if !(learning_rate > 0.0) || !(0.0..1.0).contains(&momentum) {
            return Err(Error::param(format!(
                "learning rate {learning_rate} must be > 0 and momentum {momentum} in [0, 1)"
            )));
        }
        let velocity = model
            .layers
            .iter()
            .map(|l| Layer::zeros(l.weights.nrows(), l.weights.ncols()))
            .collect();
        Ok(OptimizerState {
            velocity,
            learning_rate,
            momentum,
            nesterov,
        })
    }
}

/// `v <- mu v - lr g`, then `theta <- theta + mu v - lr g` (Nesterov) or `theta <- theta + v` (classical).
pub fn sgd_nag_step<T: Scalar>(model: &mut MlpModel<T>, grads: &[Layer<T>], state: &mut OptimizerState<T>) -> Result<()> {
    if grads.len() != model.layers.len() || state.velocity.len() != model.layers.len() {
        return Err(Error::Shape("gradient layer count differs from model".into()));
    }
    let mu: T = cast(state.momentum);
    let lr: T = cast(state.learning_rate);
    let nesterov = state.nesterov;
    let update = |theta: &mut T, v: &mut T, g: &T| {
        *v = mu * *v - lr * *g;
        *theta = if nesterov {
            *theta + mu * *v - lr * *g
        } else {
            *theta + *v
        };
    };
    for ((l, g), v) in model.layers.iter_mut().zip(grads).zip(&mut state.velocity) {
        if g.weights.dim() != l.weights.dim() || g.bias.len() != l.bias.len() {
            return Err(Error::Shape("gradient shape differs from layer".into()));
        }
        Zip::from(&mut l.weights)
            .and(&mut v.weights)
            .and(&g.weights)
            .for_each(update);
        Zip::from(&mut l.bias).and(&mut v.bias).and(&g.bias).for_each(update);
    }
    Ok(())
}
