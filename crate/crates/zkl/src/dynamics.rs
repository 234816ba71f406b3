//! One-step learning-dynamics decomposition.
//!
//! The predicted per-class change in log-belief on an observed input after a
//! single update on `(x_u, y_u)` factors as `−η · A · K · G`, where
//! `A = I − 𝟙πᵀ` depends only on the current belief on the observed input,
//! `K` is the (FO or projected) kernel between the two inputs, and `G` is the
//! loss gradient in logit space. The actual change is measured directly from
//! the parameters before and after the step via stable log-softmax.

use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;
use crate::linalg::Matrix;
use crate::model::{self, MlpConfig};

/// `A = I − 𝟙πᵀ`. Every row sums to zero because Σπ = 1.
pub fn belief_update_matrix(beliefs: &[f64]) -> Matrix {
    let v = beliefs.len();
    let mut a = Matrix::zeros(v, v);
    for r in 0..v {
        for c in 0..v {
            let id = if r == c { 1.0 } else { 0.0 };
            a.set(r, c, id - beliefs[c]);
        }
    }
    a
}

/// The assembled decomposition pieces for one (x_o, x_u, y_u) triple.
#[derive(Debug, Clone)]
pub struct DynamicsDecomposition {
    pub belief_update: Matrix,
    pub kernel: KernelMatrix,
    pub loss_gradient: Vec<f64>,
    pub eta: f64,
}

impl DynamicsDecomposition {
    pub fn new(
        beliefs_observed: &[f64],
        kernel: KernelMatrix,
        loss_gradient: Vec<f64>,
        eta: f64,
    ) -> Result<Self> {
        let v = beliefs_observed.len();
        if kernel.classes() != v || kernel.entries().rows() != v {
            return Err(Error::DimensionMismatch {
                context: "kernel classes",
                expected: v,
                got: kernel.classes(),
            });
        }
        if loss_gradient.len() != v {
            return Err(Error::DimensionMismatch {
                context: "loss gradient length",
                expected: v,
                got: loss_gradient.len(),
            });
        }
        let belief_update = belief_update_matrix(beliefs_observed);
        debug_assert!(belief_update
            .entries()
            .chunks(v)
            .all(|row| row.iter().sum::<f64>().abs() < 1e-12));
        Ok(Self {
            belief_update,
            kernel,
            loss_gradient,
            eta,
        })
    }
}

/// Predicted change in log-beliefs: `−η · A · (K · G)`.
pub fn predict_dynamics(decomp: &DynamicsDecomposition) -> Result<Vec<f64>> {
    let kg = decomp.kernel.entries().matvec(&decomp.loss_gradient)?;
    let akg = decomp.belief_update.matvec(&kg)?;
    Ok(akg.into_iter().map(|v| -decomp.eta * v).collect())
}

/// Measured change in log-beliefs on `x_o` between two parameter vectors.
pub fn actual_dynamics(
    theta_before: &[f64],
    theta_after: &[f64],
    cfg: &MlpConfig,
    x_o: &[f64],
) -> Result<Vec<f64>> {
    let before = model::log_softmax(&model::forward_logits(theta_before, cfg, x_o)?);
    let after = model::log_softmax(&model::forward_logits(theta_after, cfg, x_o)?);
    Ok(after.iter().zip(&before).map(|(a, b)| a - b).collect())
}

/// Max-abs gap between predicted and measured dynamics. Max-abs keeps the
/// reading per-class and scale-free in V.
pub fn dynamics_residual(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::DimensionMismatch {
            context: "dynamics vectors",
            expected: predicted.len(),
            got: actual.len(),
        });
    }
    Ok(predicted
        .iter()
        .zip(actual)
        .map(|(p, a)| (p - a).abs())
        .fold(0.0, f64::max))
}
