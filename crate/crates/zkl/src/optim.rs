//! FO-SGD baseline and multi-perturbation ZO-SGD built on SPSA central
//! differences.
//!
//! A ZO step draws `P` perturbation directions, estimates the directional
//! derivative along each with a central difference of the loss, and moves the
//! parameters by the coefficient-weighted average. The step hands back the
//! normalized projection matrix it used so the projected kernel of that exact
//! step can be formed.
//!
//! Loss evaluations for distinct perturbations are independent (each
//! direction has its own stream key) and may run concurrently; the weighted
//! sum is always accumulated in ascending perturbation order so results do
//! not depend on scheduling.

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{self, MlpConfig};
use crate::rng::{self, sample_perturbation, PerturbationDistribution, PerturbationMatrix, StreamKey};

/// Loss value at which a trajectory is flagged divergent and truncated.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Fo,
    Zo,
}

impl Algorithm {
    pub fn as_str(&self) -> &'static str {
        match self {
            Algorithm::Fo => "fo",
            Algorithm::Zo => "zo",
        }
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    /// Learning rate η. Zero is accepted so control runs can freeze the
    /// parameters while still recording probes.
    pub eta: f64,
    /// Smoothing parameter μ. Fixed small constant rather than
    /// dimension-scaled; 1e-3 works well for tanh nets.
    pub mu: f64,
    /// Number of perturbations P per ZO step.
    pub perturbations: usize,
    pub distribution: PerturbationDistribution,
    /// Number of steps T.
    pub steps: usize,
    pub master_seed: u64,
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "eta must be finite and non-negative, got {}",
                self.eta
            )));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "mu must be finite and positive, got {}",
                self.mu
            )));
        }
        if self.perturbations == 0 {
            return Err(Error::InvalidArgument("perturbations must be >= 1".into()));
        }
        if self.steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            eta: 1e-2,
            mu: 1e-3,
            perturbations: 1,
            distribution: PerturbationDistribution::Gaussian,
            steps: 1,
            master_seed: 0,
        }
    }
}

/// SPSA central-difference coefficient `(ℓ(θ+μu) − ℓ(θ−μu)) / (2μ)`.
pub fn spsa_coefficient<F>(lossfn: F, theta: &[f64], u: &[f64], mu: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> f64,
{
    if !(mu > 0.0) {
        return Err(Error::InvalidArgument(format!("mu must be positive, got {mu}")));
    }
    if theta.len() != u.len() {
        return Err(Error::DimensionMismatch {
            context: "perturbation length",
            expected: theta.len(),
            got: u.len(),
        });
    }
    let plus: Vec<f64> = theta.iter().zip(u).map(|(t, d)| t + mu * d).collect();
    let minus: Vec<f64> = theta.iter().zip(u).map(|(t, d)| t - mu * d).collect();
    let lp = lossfn(&plus);
    let lm = lossfn(&minus);
    if !lp.is_finite() || !lm.is_finite() {
        return Err(Error::NonFinite("SPSA loss evaluation"));
    }
    Ok((lp - lm) / (2.0 * mu))
}

/// One multi-perturbation ZO-SGD step:
/// `θ' = θ − (η/P) Σ_p c_p u_p` with `c_p` the SPSA coefficient along `u_p`.
///
/// Returns the updated parameters together with the projection matrix
/// actually used (columns `u_p/√P`), so `zo_entk` of this exact step can be
/// formed.
pub fn zo_sgd_step<F>(
    lossfn: F,
    theta: &[f64],
    cfg: &OptimConfig,
    step: u64,
) -> Result<(Vec<f64>, PerturbationMatrix)>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    cfg.validate()?;
    let d = theta.len();
    let p_count = cfg.perturbations;

    let eval_one = |p: usize| -> Result<(Vec<f64>, f64)> {
        let u = sample_perturbation(
            StreamKey::perturbation(cfg.master_seed, step, p as u64),
            d,
            cfg.distribution,
        )?;
        let c = spsa_coefficient(&lossfn, theta, &u, cfg.mu)?;
        Ok((u, c))
    };

    #[cfg(feature = "parallel")]
    let evaluated: Vec<(Vec<f64>, f64)> = {
        use rayon::prelude::*;
        (0..p_count)
            .into_par_iter()
            .map(eval_one)
            .collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let evaluated: Vec<(Vec<f64>, f64)> = (0..p_count).map(eval_one).collect::<Result<_>>()?;

    let mut next = theta.to_vec();
    let scale = cfg.eta / p_count as f64;
    // Fixed p order keeps the accumulated update bit-reproducible.
    for (u, c) in &evaluated {
        let w = scale * c;
        for (n, &ui) in next.iter_mut().zip(u) {
            *n -= w * ui;
        }
    }

    let columns: Vec<Vec<f64>> = evaluated.into_iter().map(|(u, _)| u).collect();
    let projection = PerturbationMatrix::from_unnormalized_columns(
        &columns,
        cfg.distribution,
        cfg.master_seed,
        step,
    );
    Ok((next, projection))
}

/// Plain gradient step `θ − η·grad`.
pub fn fo_sgd_step(theta: &[f64], grad: &[f64], eta: f64) -> Result<Vec<f64>> {
    if theta.len() != grad.len() {
        return Err(Error::DimensionMismatch {
            context: "gradient length",
            expected: theta.len(),
            got: grad.len(),
        });
    }
    Ok(theta.iter().zip(grad).map(|(t, g)| t - eta * g).collect())
}

/// Per-step snapshot of a trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub step: usize,
    /// Training loss on this step's sample, evaluated before the update.
    pub loss: f64,
    /// Post-update logits on each probe input.
    pub probe_logits: Vec<Vec<f64>>,
    /// Post-update beliefs on each probe input.
    pub probe_beliefs: Vec<Vec<f64>>,
    pub update_norm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub algorithm: Algorithm,
    pub config: OptimConfig,
    pub steps: Vec<TrajectoryStep>,
    /// Set when the run hit a non-finite or exploding loss; the record is
    /// truncated at the offending step.
    pub diverged: bool,
    pub final_params: Vec<f64>,
}

/// Index of the training sample visited at a given step. Purely a function of
/// the master seed, so FO and ZO runs see identical sample sequences.
pub fn sample_index_at(master_seed: u64, step: u64, n_samples: usize) -> usize {
    use rand::RngCore;
    let mut rng = StreamKey::new(master_seed, step, 0, rng::tag::DATA).rng();
    (rng.next_u64() % n_samples as u64) as usize
}

/// Runs `T` steps of the chosen algorithm from the model's deterministic
/// initialization, recording probe logits/beliefs after every update.
pub fn run_trajectory(
    model_cfg: &MlpConfig,
    data: &Dataset,
    optim_cfg: &OptimConfig,
    algorithm: Algorithm,
    probes: &[Vec<f64>],
) -> Result<TrajectoryRecord> {
    model_cfg.validate()?;
    optim_cfg.validate()?;
    if data.inputs.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }

    let mut theta = model::init_params(model_cfg)?;
    let mut steps = Vec::with_capacity(optim_cfg.steps);
    let mut diverged = false;

    for t in 0..optim_cfg.steps {
        let idx = sample_index_at(optim_cfg.master_seed, t as u64, data.inputs.len());
        let x = &data.inputs[idx];
        let y = data.labels[idx];

        let loss = model::loss_on_sample(&theta, model_cfg, x, y)?;
        if !loss.is_finite() || loss > DIVERGENCE_THRESHOLD {
            diverged = true;
            break;
        }

        let next = match algorithm {
            Algorithm::Fo => {
                let grad = model::grad_loss_params(&theta, model_cfg, x, y)?;
                fo_sgd_step(&theta, &grad, optim_cfg.eta)?
            }
            Algorithm::Zo => {
                let lossfn = |params: &[f64]| {
                    model::loss_on_sample(params, model_cfg, x, y).unwrap_or(f64::NAN)
                };
                match zo_sgd_step(lossfn, &theta, optim_cfg, t as u64) {
                    Ok((next, _)) => next,
                    Err(Error::NonFinite(_)) => {
                        diverged = true;
                        break;
                    }
                    Err(e) => return Err(e),
                }
            }
        };

        let update_norm = theta
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        theta = next;

        let mut probe_logits = Vec::with_capacity(probes.len());
        let mut probe_beliefs = Vec::with_capacity(probes.len());
        for probe in probes {
            let z = model::forward_logits(&theta, model_cfg, probe)?;
            probe_beliefs.push(model::softmax(&z));
            probe_logits.push(z);
        }

        steps.push(TrajectoryStep {
            step: t,
            loss,
            probe_logits,
            probe_beliefs,
            update_norm,
        });
    }

    Ok(TrajectoryRecord {
        algorithm,
        config: optim_cfg.clone(),
        steps,
        diverged,
        final_params: theta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth_blobs;
    use crate::linalg;
    use approx::assert_relative_eq;

    fn quadratic(theta: &[f64]) -> f64 {
        0.5 * theta.iter().map(|t| t * t).sum::<f64>()
    }

    #[test]
    fn spsa_exact_on_quadratic() {
        let theta: Vec<f64> = (0..10).map(|i| (i as f64 - 4.5) * 0.3).collect();
        let u = sample_perturbation(
            StreamKey::perturbation(3, 0, 0),
            10,
            PerturbationDistribution::Gaussian,
        )
        .unwrap();
        let coeff = spsa_coefficient(quadratic, &theta, &u, 1e-2).unwrap();
        let exact = linalg::dot(&theta, &u);
        assert!((coeff - exact).abs() <= 1e-12 * exact.abs().max(1.0));
    }

    #[test]
    fn spsa_zero_direction_gives_zero() {
        let theta = vec![1.0, 2.0, 3.0];
        let coeff = spsa_coefficient(quadratic, &theta, &[0.0, 0.0, 0.0], 1e-3).unwrap();
        assert_eq!(coeff, 0.0);
    }

    #[test]
    fn spsa_second_order_remainder_on_smooth_net() {
        // coefficient − ⟨∇ℓ, u⟩ = O(μ²): halving μ shrinks the gap ~4x.
        let cfg = MlpConfig::new(4, vec![6], 3).with_seed(2);
        let theta = model::init_params(&cfg).unwrap();
        let x = [0.5, -0.2, 0.8, 0.1];
        let y = 0;
        let u = sample_perturbation(
            StreamKey::perturbation(5, 0, 0),
            theta.len(),
            PerturbationDistribution::Gaussian,
        )
        .unwrap();
        let grad = model::grad_loss_params(&theta, &cfg, &x, y).unwrap();
        let directional = linalg::dot(&grad, &u);
        let lossfn = |p: &[f64]| model::loss_on_sample(p, &cfg, &x, y).unwrap();

        let gap = |mu: f64| (spsa_coefficient(lossfn, &theta, &u, mu).unwrap() - directional).abs();
        let ratio = gap(5e-3) / gap(1e-2);
        assert!(
            (0.15..=0.35).contains(&ratio),
            "mu-halving ratio {ratio}"
        );
    }

    #[test]
    fn spsa_propagates_non_finite_loss() {
        let bad = |_: &[f64]| f64::NAN;
        assert!(matches!(
            spsa_coefficient(bad, &[1.0], &[1.0], 1e-3),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn zo_step_zero_eta_keeps_params() {
        let cfg = OptimConfig {
            eta: 0.0,
            ..OptimConfig::default()
        };
        let theta = vec![1.0, -2.0, 0.5];
        let (next, _) = zo_sgd_step(quadratic, &theta, &cfg, 0).unwrap();
        assert_eq!(next, theta);
    }

    #[test]
    fn zo_step_quadratic_closed_form() {
        // P = 1 on ½‖θ‖²: θ' = θ − η⟨θ,u⟩u exactly.
        let cfg = OptimConfig {
            eta: 0.1,
            mu: 1e-2,
            perturbations: 1,
            distribution: PerturbationDistribution::Rademacher,
            steps: 1,
            master_seed: 7,
        };
        let theta = vec![0.4, -1.2, 2.0, 0.3];
        let (next, projection) = zo_sgd_step(quadratic, &theta, &cfg, 0).unwrap();
        let u = sample_perturbation(
            StreamKey::perturbation(7, 0, 0),
            4,
            PerturbationDistribution::Rademacher,
        )
        .unwrap();
        let coeff = linalg::dot(&theta, &u);
        for i in 0..4 {
            let expect = theta[i] - 0.1 * coeff * u[i];
            assert!((next[i] - expect).abs() <= 1e-12);
        }
        // Returned projection carries the 1/√P normalization (P = 1 here).
        assert_eq!(projection.entries().column(0), u);
    }

    #[test]
    fn zo_step_approaches_projected_gradient_path_as_mu_shrinks() {
        // ‖θ'(μ) − θ'_directional‖ = O(μη): halves with μ.
        let cfg = MlpConfig::new(5, vec![6], 3).with_seed(4);
        let theta = model::init_params(&cfg).unwrap();
        let x = [0.3, 0.9, -0.4, 0.2, -1.0];
        let y = 1;
        let lossfn = |p: &[f64]| model::loss_on_sample(p, &cfg, &x, y).unwrap();
        let grad = model::grad_loss_params(&theta, &cfg, &x, y).unwrap();

        let gap = |mu: f64| -> f64 {
            let ocfg = OptimConfig {
                eta: 0.05,
                mu,
                perturbations: 3,
                distribution: PerturbationDistribution::Gaussian,
                steps: 1,
                master_seed: 11,
            };
            let (next, _) = zo_sgd_step(&lossfn, &theta, &ocfg, 0).unwrap();
            // Directional-derivative path with the same perturbations.
            let mut ideal = theta.clone();
            for p in 0..3 {
                let u = sample_perturbation(
                    StreamKey::perturbation(11, 0, p),
                    theta.len(),
                    PerturbationDistribution::Gaussian,
                )
                .unwrap();
                let c = linalg::dot(&grad, &u);
                let w = 0.05 / 3.0 * c;
                for (t, &ui) in ideal.iter_mut().zip(&u) {
                    *t -= w * ui;
                }
            }
            next.iter()
                .zip(&ideal)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
        };

        let g1 = gap(1e-2);
        let g2 = gap(5e-3);
        let g3 = gap(2.5e-3);
        // O(μ²) remainder inside the coefficient: quarter per halving.
        assert!(g2 / g1 < 0.6, "{g1} -> {g2}");
        assert!(g3 / g2 < 0.6, "{g2} -> {g3}");
    }

    #[test]
    fn fo_step_cases() {
        let theta = vec![2.0];
        assert_eq!(fo_sgd_step(&theta, &[0.0], 0.5).unwrap(), vec![2.0]);
        assert_eq!(fo_sgd_step(&[1.0, 2.0], &[1.0, 2.0], 1.0).unwrap(), vec![0.0, 0.0]);
        assert_relative_eq!(
            fo_sgd_step(&[2.0], &[0.5], 0.1).unwrap()[0],
            1.95,
            epsilon = 1e-15
        );
    }

    #[test]
    fn trajectory_constant_when_eta_zero() {
        let data = synth_blobs(2, 4, 5, 3.0, 77).unwrap();
        let model_cfg = MlpConfig::new(4, vec![4], 2).with_seed(1);
        let optim = OptimConfig {
            eta: 0.0,
            steps: 1,
            master_seed: 3,
            ..OptimConfig::default()
        };
        let probes = vec![data.inputs[0].clone()];
        let rec = run_trajectory(&model_cfg, &data, &optim, Algorithm::Zo, &probes).unwrap();
        assert_eq!(rec.steps.len(), 1);
        assert!(!rec.diverged);
        let init = model::init_params(&model_cfg).unwrap();
        assert_eq!(rec.final_params, init);
    }

    #[test]
    fn fo_training_reduces_loss_on_separable_blobs() {
        let data = synth_blobs(2, 6, 20, 8.0, 5).unwrap();
        let model_cfg = MlpConfig::new(6, vec![], 2).with_seed(2);
        let optim = OptimConfig {
            eta: 0.1,
            steps: 200,
            master_seed: 9,
            ..OptimConfig::default()
        };
        let rec = run_trajectory(&model_cfg, &data, &optim, Algorithm::Fo, &[]).unwrap();
        assert!(!rec.diverged);
        let first = rec.steps.first().unwrap().loss;
        let last = rec.steps.last().unwrap().loss;
        assert!(last < first, "loss went {first} -> {last}");
    }

    #[test]
    fn fo_and_zo_visit_identical_sample_sequences() {
        let n = 13;
        for t in 0..50 {
            let a = sample_index_at(4, t, n);
            let b = sample_index_at(4, t, n);
            assert_eq!(a, b);
            assert!(a < n);
        }
    }

    #[test]
    fn zo_closes_gap_to_fo_with_more_perturbations() {
        let data = synth_blobs(2, 4, 10, 4.0, 21).unwrap();
        let model_cfg = MlpConfig::new(4, vec![5], 2).with_seed(6);
        let probes: Vec<Vec<f64>> = vec![data.inputs[0].clone(), data.inputs[10].clone()];
        let base = OptimConfig {
            eta: 0.05,
            mu: 1e-3,
            steps: 60,
            master_seed: 31,
            ..OptimConfig::default()
        };

        // FO and ZO share the master seed, so both visit the same sample
        // sequence through the DATA tag.
        let final_gap = |p: usize, seed: u64| -> f64 {
            let fo_cfg = OptimConfig {
                master_seed: seed,
                ..base.clone()
            };
            let fo = run_trajectory(&model_cfg, &data, &fo_cfg, Algorithm::Fo, &probes).unwrap();
            let zo_cfg = OptimConfig {
                perturbations: p,
                master_seed: seed,
                ..base.clone()
            };
            let zo = run_trajectory(&model_cfg, &data, &zo_cfg, Algorithm::Zo, &probes).unwrap();
            let fo_last = fo.steps.last().unwrap();
            let zo_last = zo.steps.last().unwrap();
            fo_last
                .probe_beliefs
                .iter()
                .zip(&zo_last.probe_beliefs)
                .map(|(a, b)| {
                    a.iter()
                        .zip(b)
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / probes.len() as f64
        };

        // Median over a handful of seeds; the full-scale sweep lives in the
        // acceptance suite.
        let gaps = |p: usize| -> f64 {
            let mut v: Vec<f64> = (0..5).map(|s| final_gap(p, 31 + 1000 * s)).collect();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            v[2]
        };
        let g1 = gaps(1);
        let g100 = gaps(100);
        assert!(
            g100 < g1,
            "median final gap should shrink with P: P=1 {g1}, P=100 {g100}"
        );
    }

    #[test]
    fn trajectory_flags_divergence() {
        // Two samples at the same point with opposite labels: a huge step
        // fitting one sends the other's loss past the threshold as soon as
        // it is drawn.
        let x = vec![1.0, 0.5, -0.5];
        let data = crate::data::bind_dataset(
            vec![x.clone(), x],
            vec![0, 1],
            2,
            "contradiction",
        )
        .unwrap();
        let model_cfg = MlpConfig::new(3, vec![], 2).with_seed(3);
        let optim = OptimConfig {
            eta: 1e9,
            steps: 50,
            master_seed: 2,
            ..OptimConfig::default()
        };
        let rec = run_trajectory(&model_cfg, &data, &optim, Algorithm::Fo, &[]).unwrap();
        assert!(rec.diverged);
        assert!(rec.steps.len() < 50);
    }
}
