//! Random-projection error budgets and moment oracles.
//!
//! Covers the inner-product preservation lemma and its polarization proof
//! mechanics, the concentration-based perturbation budget
//! `P ≥ (2 ln n + ln(1/δ)) / (c(Q) ε²)`, Monte-Carlo oracles for the Gaussian
//! fourth-moment identity `E[uuᵀWuuᵀ] = Tr(W)·I + 2W` and its
//! multi-perturbation extension, the exact Rademacher second moment, and the
//! two forms of the dynamics discrepancy bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::{self, sample_perturbation, PerturbationDistribution, PerturbationMatrix, StreamKey};

/// Concentration constant c(Q); ≈ 1/4 for both Gaussian and Rademacher
/// projections.
pub const DEFAULT_CONCENTRATION_CONSTANT: f64 = 0.25;

/// A resolved projection budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JlBudget {
    pub n: usize,
    pub epsilon: f64,
    pub delta: f64,
    pub concentration_constant: f64,
    pub required_p: usize,
}

/// Smallest P with `P ≥ (2 ln n + ln(1/δ)) / (c ε²)`.
pub fn jl_required_p(n: usize, epsilon: f64, delta: f64, c: f64) -> Result<usize> {
    if n < 1 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    if !(0.0 < epsilon && epsilon < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "epsilon must lie in (0,1), got {epsilon}"
        )));
    }
    if !(0.0 < delta && delta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "delta must lie in (0,1), got {delta}"
        )));
    }
    if !(c > 0.0) {
        return Err(Error::InvalidArgument(format!("c must be positive, got {c}")));
    }
    let raw = (2.0 * (n as f64).ln() + (1.0 / delta).ln()) / (c * epsilon * epsilon);
    Ok((raw.ceil() as usize).max(1))
}

/// Budget inverted for ε: `√((2 ln n + ln(1/δ)) / (c P))`.
pub fn jl_epsilon(n: usize, p: usize, c: f64, delta: f64) -> f64 {
    ((2.0 * (n as f64).ln() + (1.0 / delta).ln()) / (c * p as f64)).sqrt()
}

pub fn jl_budget(n: usize, epsilon: f64, delta: f64, c: f64) -> Result<JlBudget> {
    Ok(JlBudget {
        n,
        epsilon,
        delta,
        concentration_constant: c,
        required_p: jl_required_p(n, epsilon, delta, c)?,
    })
}

/// Distortion record for one point pair under a projection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairDistortion {
    pub i: usize,
    pub j: usize,
    /// `|⟨Uᵀω_i, Uᵀω_j⟩ − ⟨ω_i, ω_j⟩|`
    pub distortion: f64,
    /// `(ε/2)(‖ω_i‖² + ‖ω_j‖²)`
    pub bound: f64,
    pub cleared: bool,
    /// Distortion divided by `½(‖ω_i‖² + ‖ω_j‖²)`: the ε this pair would
    /// need.
    pub normalized: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PreservationReport {
    pub epsilon: f64,
    pub pairs: Vec<PairDistortion>,
    /// Max normalized distortion ε* over all pairs (self-pairs included).
    pub max_normalized: f64,
    pub all_cleared: bool,
}

/// Checks inner-product preservation of `U` over every (unordered, including
/// self) pair of points against the `(ε/2)(‖ω_i‖² + ‖ω_j‖²)` bound.
pub fn check_inner_product_preservation(
    points: &[Vec<f64>],
    u: &PerturbationMatrix,
    epsilon: f64,
) -> Result<PreservationReport> {
    if points.is_empty() {
        return Err(Error::InvalidArgument("no points given".into()));
    }
    let projected: Vec<Vec<f64>> = points
        .iter()
        .map(|p| {
            if p.len() != u.dim() {
                return Err(Error::DimensionMismatch {
                    context: "point dimension",
                    expected: u.dim(),
                    got: p.len(),
                });
            }
            // Uᵀω, one inner product per column.
            Ok((0..u.perturbations())
                .map(|c| {
                    (0..u.dim())
                        .map(|r| u.entries().get(r, c) * p[r])
                        .sum::<f64>()
                })
                .collect())
        })
        .collect::<Result<_>>()?;

    let mut pairs = Vec::new();
    let mut max_normalized = 0.0f64;
    let mut all_cleared = true;
    for i in 0..points.len() {
        for j in i..points.len() {
            let original = linalg::dot(&points[i], &points[j]);
            let mapped = linalg::dot(&projected[i], &projected[j]);
            let distortion = (mapped - original).abs();
            let half_energy = 0.5
                * (linalg::dot(&points[i], &points[i]) + linalg::dot(&points[j], &points[j]));
            let bound = epsilon * half_energy;
            let cleared = distortion <= bound;
            let normalized = if half_energy > 0.0 {
                distortion / half_energy
            } else {
                0.0
            };
            max_normalized = max_normalized.max(normalized);
            all_cleared &= cleared;
            pairs.push(PairDistortion {
                i,
                j,
                distortion,
                bound,
                cleared,
                normalized,
            });
        }
    }
    Ok(PreservationReport {
        epsilon,
        pairs,
        max_normalized,
        all_cleared,
    })
}

/// Analytic value of `E[u uᵀ W u uᵀ]` for standard Gaussian u:
/// `Tr(W)·I + 2W`.
pub fn gaussian_fourth_moment_target(w: &Matrix) -> Matrix {
    let d = w.rows();
    let trace = w.trace();
    let mut out = w.scale(2.0);
    for i in 0..d {
        out.set(i, i, out.get(i, i) + trace);
    }
    out
}

/// Analytic value of `E[Ū W Ū]` with `Ū = (1/P) Σ_p u_p u_pᵀ`:
/// `(1 + 1/P)·W + (Tr(W)/P)·I`.
pub fn multi_perturbation_expectation_target(w: &Matrix, p: usize) -> Matrix {
    let d = w.rows();
    let trace_over_p = w.trace() / p as f64;
    let mut out = w.scale(1.0 + 1.0 / p as f64);
    for i in 0..d {
        out.set(i, i, out.get(i, i) + trace_over_p);
    }
    out
}

fn check_symmetric_small(w: &Matrix, max_dim: usize) -> Result<()> {
    if w.rows() != w.cols() || w.rows() > max_dim {
        return Err(Error::InvalidArgument(format!(
            "W must be square with dimension <= {max_dim}, got {}x{}",
            w.rows(),
            w.cols()
        )));
    }
    if !w.is_symmetric(1e-10) {
        return Err(Error::NotSymmetric {
            max_asymmetry: w.max_abs_asymmetry(),
            tolerance: 1e-10,
        });
    }
    Ok(())
}

/// Monte-Carlo average of `u uᵀ W u uᵀ = (uᵀWu)·uuᵀ` over Gaussian draws.
pub fn gaussian_fourth_moment_oracle(w: &Matrix, samples: usize, seed: u64) -> Result<Matrix> {
    check_symmetric_small(w, 64)?;
    let d = w.rows();
    let mut acc = Matrix::zeros(d, d);
    for trial in 0..samples {
        let u = sample_perturbation(
            StreamKey::new(seed, trial as u64, 0, rng::tag::TRIAL),
            d,
            PerturbationDistribution::Gaussian,
        )?;
        let wu = w.matvec(&u)?;
        let quad = linalg::dot(&u, &wu);
        for r in 0..d {
            let row = acc.row_mut(r);
            let ur_quad = u[r] * quad;
            for (c, slot) in row.iter_mut().enumerate() {
                *slot += ur_quad * u[c];
            }
        }
    }
    Ok(acc.scale(1.0 / samples as f64))
}

/// Monte-Carlo average of `Ū W Ū` with `Ū = (1/P) Σ_p u_p u_pᵀ`.
pub fn multi_perturbation_expectation_oracle(
    w: &Matrix,
    p: usize,
    samples: usize,
    seed: u64,
) -> Result<Matrix> {
    if p == 0 {
        return Err(Error::InvalidArgument("P must be >= 1".into()));
    }
    check_symmetric_small(w, 64)?;
    let d = w.rows();
    let mut acc = Matrix::zeros(d, d);
    for trial in 0..samples {
        let mut u_bar = Matrix::zeros(d, d);
        for pert in 0..p {
            let u = sample_perturbation(
                StreamKey::new(seed, trial as u64, pert as u64, rng::tag::TRIAL),
                d,
                PerturbationDistribution::Gaussian,
            )?;
            for r in 0..d {
                let row = u_bar.row_mut(r);
                for (c, slot) in row.iter_mut().enumerate() {
                    *slot += u[r] * u[c];
                }
            }
        }
        u_bar = u_bar.scale(1.0 / p as f64);
        let uwu = linalg::matmul(&linalg::matmul(&u_bar, w)?, &u_bar)?;
        acc = acc.add(&uwu)?;
    }
    Ok(acc.scale(1.0 / samples as f64))
}

/// Exact Rademacher second moment by enumerating all 2^d sign vectors:
/// `(1/2^d) Σ_u ⟨g,u⟩² ‖u‖²`, which must equal `d‖g‖²`.
pub fn rademacher_second_moment_exact(g: &[f64]) -> Result<f64> {
    let d = g.len();
    if d == 0 || d > 12 {
        return Err(Error::InvalidArgument(format!(
            "enumeration needs 1 <= d <= 12, got {d} (use the sampling path instead)"
        )));
    }
    let mut total = 0.0;
    for mask in 0u32..(1u32 << d) {
        let mut ip = 0.0;
        for (bit, &gi) in g.iter().enumerate() {
            let sign = if (mask >> bit) & 1 == 0 { 1.0 } else { -1.0 };
            ip += sign * gi;
        }
        // ‖u‖² = d deterministically for sign vectors.
        total += ip * ip * d as f64;
    }
    Ok(total / (1u64 << d) as f64)
}

/// Monte-Carlo estimate of `E ‖⟨g,u⟩u‖² = E ⟨g,u⟩²‖u‖²`.
///
/// Targets `(d+2)‖g‖²` for Gaussian and `d‖g‖²` for Rademacher perturbations.
pub fn second_moment_estimate(
    g: &[f64],
    dist: PerturbationDistribution,
    samples: usize,
    seed: u64,
) -> Result<f64> {
    if g.is_empty() {
        return Err(Error::InvalidArgument("gradient must be non-empty".into()));
    }
    let d = g.len();
    let mut total = 0.0;
    for trial in 0..samples {
        let u = sample_perturbation(
            StreamKey::new(seed, trial as u64, 0, rng::tag::TRIAL),
            d,
            dist,
        )?;
        let ip = linalg::dot(g, &u);
        let norm_sq = linalg::dot(&u, &u);
        total += ip * ip * norm_sq;
    }
    Ok(total / samples as f64)
}

/// `‖ΔK‖_F ≤ ε*·Ξ·√V`.
pub fn delta_k_bound(epsilon_star: f64, xi: f64, v: usize) -> f64 {
    epsilon_star * xi * (v as f64).sqrt()
}

/// Both forms of the dynamics discrepancy bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicsDiffBound {
    /// `√(V ln V / P) · η Ξ ‖G‖ ‖A‖`, constants dropped.
    pub simplified: f64,
    /// Same with ε taken from the explicit budget at n = V:
    /// `√(V(2 ln V + ln(1/δ))/(c P)) · η Ξ ‖G‖ ‖A‖`.
    pub constant_explicit: f64,
}

/// Evaluates the discrepancy bound `‖Diff‖₂ ≲ √(V ln V/P)·ηΞ‖G‖‖A‖` in both
/// its bare and constant-explicit forms.
#[allow(clippy::too_many_arguments)]
pub fn dynamics_diff_bound(
    v: usize,
    p: usize,
    eta: f64,
    xi: f64,
    norm_g: f64,
    norm_a: f64,
    c: f64,
    delta: f64,
) -> DynamicsDiffBound {
    let v_f = v as f64;
    let model_dynamics = eta * xi * norm_g * norm_a;
    let simplified = (v_f * v_f.ln() / p as f64).sqrt() * model_dynamics;
    let epsilon = jl_epsilon(v, p, c, delta);
    let constant_explicit = epsilon * v_f.sqrt() * model_dynamics;
    DynamicsDiffBound {
        simplified,
        constant_explicit,
    }
}
