//! Small multi-layer perceptron with a softmax head.
//!
//! The model exposes exactly the objects the learning-dynamics decomposition
//! needs: logits `z`, beliefs `π = softmax(z)`, the per-logit parameter
//! Jacobian `∇_θ z` (d×V, one reverse pass per logit), and the loss gradient
//! `G = π − e_y`.
//!
//! Parameters live in one flat vector. Flattening order is frozen: layer by
//! layer, weight matrix first (row-major, each row holding one output unit's
//! incoming weights), then that layer's biases.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{self, sample_perturbation, PerturbationDistribution, StreamKey};

/// Hidden-layer activation. `Tanh` is the default: the one-step Taylor
/// arguments behind the dynamics decomposition assume a smooth network.
/// `Relu` is available but non-smooth, so residual scaling tests do not apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative given pre-activation `x` and activation value `a`.
    #[inline]
    fn derivative(&self, x: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub init_scale: f64,
    pub init_seed: u64,
}

impl MlpConfig {
    pub fn new(input_dim: usize, hidden_dims: Vec<usize>, output_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims,
            output_dim,
            activation: Activation::Tanh,
            init_scale: 1.0,
            init_seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.init_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.output_dim < 2 {
            return Err(Error::InvalidArgument(format!(
                "output_dim must be at least 2, got {}",
                self.output_dim
            )));
        }
        if self.input_dim < 1 || self.hidden_dims.iter().any(|&h| h < 1) {
            return Err(Error::InvalidArgument("all layer dims must be >= 1".into()));
        }
        Ok(())
    }

    /// (fan_in, fan_out) of every affine layer, in order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_dims);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    /// Total parameter count d.
    pub fn param_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|(fan_in, fan_out)| fan_in * fan_out + fan_out)
            .sum()
    }
}

/// Draws initial parameters: weights are Gaussian scaled by
/// `init_scale / √fan_in`, biases zero. Deterministic in `init_seed`.
pub fn init_params(cfg: &MlpConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut theta = Vec::with_capacity(cfg.param_count());
    for (layer, (fan_in, fan_out)) in cfg.layer_shapes().into_iter().enumerate() {
        let key = StreamKey::new(cfg.init_seed, layer as u64, 0, rng::tag::PARAM_INIT);
        let raw = sample_perturbation(key, fan_in * fan_out, PerturbationDistribution::Gaussian)?;
        let scale = cfg.init_scale / (fan_in as f64).sqrt();
        theta.extend(raw.into_iter().map(|g| g * scale));
        theta.extend(std::iter::repeat(0.0).take(fan_out));
    }
    Ok(theta)
}

fn check_theta_len(theta: &[f64], cfg: &MlpConfig) -> Result<()> {
    let expected = cfg.param_count();
    if theta.len() != expected {
        return Err(Error::DimensionMismatch {
            context: "parameter vector length",
            expected,
            got: theta.len(),
        });
    }
    Ok(())
}

fn check_input_len(x: &[f64], cfg: &MlpConfig) -> Result<()> {
    if x.len() != cfg.input_dim {
        return Err(Error::DimensionMismatch {
            context: "input length",
            expected: cfg.input_dim,
            got: x.len(),
        });
    }
    Ok(())
}

/// Per-layer forward state kept for reverse passes.
struct ForwardTrace {
    /// activations[0] is the input; activations[l+1] the output of layer l
    /// (post-activation for hidden layers, raw logits for the last).
    activations: Vec<Vec<f64>>,
    /// Pre-activations of every layer, same indexing as layer_shapes.
    pre_activations: Vec<Vec<f64>>,
}

fn forward_trace(theta: &[f64], cfg: &MlpConfig, x: &[f64]) -> Result<ForwardTrace> {
    check_theta_len(theta, cfg)?;
    check_input_len(x, cfg)?;
    let shapes = cfg.layer_shapes();
    let last = shapes.len() - 1;
    let mut activations = vec![x.to_vec()];
    let mut pre_activations = Vec::with_capacity(shapes.len());
    let mut offset = 0;
    for (l, (fan_in, fan_out)) in shapes.into_iter().enumerate() {
        let weights = &theta[offset..offset + fan_in * fan_out];
        let biases = &theta[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        offset += fan_in * fan_out + fan_out;

        let input = &activations[l];
        let mut pre = Vec::with_capacity(fan_out);
        for o in 0..fan_out {
            let row = &weights[o * fan_in..(o + 1) * fan_in];
            pre.push(crate::linalg::dot(row, input) + biases[o]);
        }
        let post = if l == last {
            pre.clone()
        } else {
            pre.iter().map(|&s| cfg.activation.apply(s)).collect()
        };
        pre_activations.push(pre);
        activations.push(post);
    }
    Ok(ForwardTrace {
        activations,
        pre_activations,
    })
}

/// Logits `z = h_θ(x)`.
pub fn forward_logits(theta: &[f64], cfg: &MlpConfig, x: &[f64]) -> Result<Vec<f64>> {
    let trace = forward_trace(theta, cfg, x)?;
    Ok(trace.activations.last().cloned().unwrap_or_default())
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Stable `log softmax(z)` via log-sum-exp; never `log(softmax)`.
pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = z.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    z.iter().map(|&v| v - lse).collect()
}

/// Cross-entropy `−log softmax(z)[y]`.
pub fn loss_ce(z: &[f64], y: usize) -> Result<f64> {
    if y >= z.len() {
        return Err(Error::LabelOutOfRange {
            label: y,
            classes: z.len(),
        });
    }
    Ok(-log_softmax(z)[y])
}

/// Gradient of the cross-entropy loss with respect to logits:
/// `G = softmax(z) − e_y`.
pub fn grad_loss_logits(z: &[f64], y: usize) -> Result<Vec<f64>> {
    if y >= z.len() {
        return Err(Error::LabelOutOfRange {
            label: y,
            classes: z.len(),
        });
    }
    let mut g = softmax(z);
    g[y] -= 1.0;
    Ok(g)
}

/// One reverse pass: gradient of `⟨cotangent, z⟩` with respect to θ.
fn backward(theta: &[f64], cfg: &MlpConfig, trace: &ForwardTrace, cotangent: &[f64]) -> Vec<f64> {
    let shapes = cfg.layer_shapes();
    let last = shapes.len() - 1;

    // Layer parameter offsets.
    let mut offsets = Vec::with_capacity(shapes.len());
    let mut offset = 0;
    for &(fan_in, fan_out) in &shapes {
        offsets.push(offset);
        offset += fan_in * fan_out + fan_out;
    }

    let mut grad = vec![0.0; theta.len()];
    let mut delta = cotangent.to_vec();
    for l in (0..shapes.len()).rev() {
        let (fan_in, fan_out) = shapes[l];
        let base = offsets[l];
        let input = &trace.activations[l];

        if l != last {
            let pre = &trace.pre_activations[l];
            let post = &trace.activations[l + 1];
            for o in 0..fan_out {
                delta[o] *= cfg.activation.derivative(pre[o], post[o]);
            }
        }

        for o in 0..fan_out {
            let d_o = delta[o];
            let w_grad = &mut grad[base + o * fan_in..base + (o + 1) * fan_in];
            for (g, &a) in w_grad.iter_mut().zip(input) {
                *g = d_o * a;
            }
            grad[base + fan_in * fan_out + o] = d_o;
        }

        if l > 0 {
            let weights = &theta[base..base + fan_in * fan_out];
            let mut next = vec![0.0; fan_in];
            for o in 0..fan_out {
                let d_o = delta[o];
                let row = &weights[o * fan_in..(o + 1) * fan_in];
                for (n, &w) in next.iter_mut().zip(row) {
                    *n += d_o * w;
                }
            }
            delta = next;
        }
    }
    grad
}

/// The d×V Jacobian `∇_θ z(x)`: column `i` is the exact reverse-mode gradient
/// of logit `i`.
pub fn jacobian_logits(theta: &[f64], cfg: &MlpConfig, x: &[f64]) -> Result<Matrix> {
    let trace = forward_trace(theta, cfg, x)?;
    let v = cfg.output_dim;
    let d = theta.len();
    let mut jac = Matrix::zeros(d, v);
    let mut cotangent = vec![0.0; v];
    for i in 0..v {
        cotangent[i] = 1.0;
        let col = backward(theta, cfg, &trace, &cotangent);
        jac.set_column(i, &col);
        cotangent[i] = 0.0;
    }
    Ok(jac)
}

/// Gradient of the cross-entropy loss with respect to θ, by a single reverse
/// pass with cotangent `G = softmax(z) − e_y`.
pub fn grad_loss_params(theta: &[f64], cfg: &MlpConfig, x: &[f64], y: usize) -> Result<Vec<f64>> {
    let trace = forward_trace(theta, cfg, x)?;
    let z = trace.activations.last().expect("forward produced logits");
    let g = grad_loss_logits(z, y)?;
    Ok(backward(theta, cfg, &trace, &g))
}

/// Cross-entropy loss of the model on one sample.
pub fn loss_on_sample(theta: &[f64], cfg: &MlpConfig, x: &[f64], y: usize) -> Result<f64> {
    let z = forward_logits(theta, cfg, x)?;
    loss_ce(&z, y)
}

const CHECKPOINT_MAGIC: &[u8; 4] = b"ZKL1";

/// Writes a parameter checkpoint: magic `ZKL1`, u32-LE length-prefixed JSON
/// config, then d little-endian f64 parameters in flattening order.
pub fn save_checkpoint(path: &Path, cfg: &MlpConfig, theta: &[f64]) -> Result<()> {
    check_theta_len(theta, cfg)?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(CHECKPOINT_MAGIC)?;
    let cfg_json = serde_json::to_vec(cfg)?;
    file.write_all(&(cfg_json.len() as u32).to_le_bytes())?;
    file.write_all(&cfg_json)?;
    let mut buf = Vec::with_capacity(theta.len() * 8);
    for v in theta {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    file.write_all(&buf)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(MlpConfig, Vec<f64>)> {
    let mut file = std::fs::File::open(path)?;
    let mut magic = [0u8; 4];
    file.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {magic:?}, expected ZKL1"
        )));
    }
    let mut len_bytes = [0u8; 4];
    file.read_exact(&mut len_bytes)?;
    let json_len = u32::from_le_bytes(len_bytes) as usize;
    let mut cfg_json = vec![0u8; json_len];
    file.read_exact(&mut cfg_json)?;
    let cfg: MlpConfig = serde_json::from_slice(&cfg_json)?;
    let d = cfg.param_count();
    let mut theta = Vec::with_capacity(d);
    let mut chunk = [0u8; 8];
    for _ in 0..d {
        file.read_exact(&mut chunk)?;
        theta.push(f64::from_le_bytes(chunk));
    }
    Ok((cfg, theta))
}
