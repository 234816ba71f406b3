//! Deterministic, splittable random streams and the two perturbation
//! distributions.
//!
//! Every stream is keyed by `(master_seed, step, perturbation, tag)`. The key
//! is folded through a SplitMix64-style mixer into a 64-bit seed for a
//! `ChaCha8` generator, so streams can be drawn in any order, on any thread,
//! and still reproduce bit-exactly.
//!
//! Sampling methods are fixed for reproducibility:
//! - Gaussian entries come from `rand_distr::StandardNormal` (ziggurat).
//! - Rademacher signs are taken one bit at a time from `next_u64` words,
//!   least-significant bit first; bit 0 maps to +1, bit 1 to -1. The signs
//!   never touch the Gaussian path, so the two distributions' streams stay
//!   decoupled.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Purpose namespaces so unrelated draws never share a stream.
pub mod tag {
    /// Perturbation vectors u_{t,p}.
    pub const PERTURBATION: u64 = 0;
    /// Model weight initialization.
    pub const PARAM_INIT: u64 = 1;
    /// Dataset generation and sample-order draws.
    pub const DATA: u64 = 2;
    /// Monte-Carlo trial streams.
    pub const TRIAL: u64 = 3;
}

/// Identifies one deterministic stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    pub master_seed: u64,
    pub step: u64,
    pub perturbation: u64,
    pub tag: u64,
}

impl StreamKey {
    pub fn new(master_seed: u64, step: u64, perturbation: u64, tag: u64) -> Self {
        Self {
            master_seed,
            step,
            perturbation,
            tag,
        }
    }

    /// Key for perturbation `p` of step `t`.
    pub fn perturbation(master_seed: u64, step: u64, p: u64) -> Self {
        Self::new(master_seed, step, p, tag::PERTURBATION)
    }

    /// Stable 64-bit hash of the key fields.
    fn derive_seed(&self) -> u64 {
        let mut h = mix64(self.master_seed ^ 0x9e37_79b9_7f4a_7c15);
        h = mix64(h ^ self.step.wrapping_mul(0xd1b5_4a32_d192_ed03));
        h = mix64(h ^ self.perturbation.wrapping_mul(0x8cb9_2ba7_2f3d_8dd7));
        h = mix64(h ^ self.tag.wrapping_mul(0xa24b_aed4_963e_e407));
        h
    }

    /// Generator for this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.derive_seed())
    }
}

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The two perturbation distributions under study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PerturbationDistribution {
    Gaussian,
    Rademacher,
}

impl PerturbationDistribution {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Gaussian => "gaussian",
            Self::Rademacher => "rademacher",
        }
    }
}

impl std::fmt::Display for PerturbationDistribution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PerturbationDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gaussian" => Ok(Self::Gaussian),
            "rademacher" => Ok(Self::Rademacher),
            other => Err(Error::InvalidArgument(format!(
                "unknown distribution '{other}' (expected gaussian or rademacher)"
            ))),
        }
    }
}

/// Draws a length-`d` perturbation vector; a pure function of the key.
pub fn sample_perturbation(
    key: StreamKey,
    d: usize,
    dist: PerturbationDistribution,
) -> Result<Vec<f64>> {
    if d == 0 {
        return Err(Error::InvalidArgument(
            "perturbation dimension must be at least 1".into(),
        ));
    }
    let mut rng = key.rng();
    Ok(match dist {
        PerturbationDistribution::Gaussian => (0..d)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect(),
        PerturbationDistribution::Rademacher => {
            let mut out = Vec::with_capacity(d);
            let mut word = 0u64;
            for i in 0..d {
                if i % 64 == 0 {
                    word = rng.next_u64();
                }
                let bit = (word >> (i % 64)) & 1;
                out.push(if bit == 0 { 1.0 } else { -1.0 });
            }
            out
        }
    })
}

/// Random projection induced by `P` perturbations of one step.
///
/// Column `p` is `u_{t,p} / √P`, so `U Uᵀ` averages the rank-one projectors
/// and `E[U Uᵀ] = I`.
#[derive(Debug, Clone)]
pub struct PerturbationMatrix {
    entries: Matrix,
    distribution: PerturbationDistribution,
    master_seed: u64,
    step: u64,
}

impl PerturbationMatrix {
    /// Wraps pre-sampled unnormalized perturbation columns, applying the 1/√P
    /// normalization.
    pub(crate) fn from_unnormalized_columns(
        columns: &[Vec<f64>],
        distribution: PerturbationDistribution,
        master_seed: u64,
        step: u64,
    ) -> Self {
        let p_count = columns.len();
        let d = columns[0].len();
        let inv_sqrt_p = 1.0 / (p_count as f64).sqrt();
        let mut entries = Matrix::zeros(d, p_count);
        for (p, col) in columns.iter().enumerate() {
            for (k, &v) in col.iter().enumerate() {
                entries.set(k, p, v * inv_sqrt_p);
            }
        }
        Self {
            entries,
            distribution,
            master_seed,
            step,
        }
    }

    /// Wraps an explicit d×P matrix (used by tests for e.g. orthogonal U).
    pub fn from_matrix(entries: Matrix, distribution: PerturbationDistribution) -> Self {
        Self {
            entries,
            distribution,
            master_seed: 0,
            step: 0,
        }
    }

    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn dim(&self) -> usize {
        self.entries.rows()
    }

    pub fn perturbations(&self) -> usize {
        self.entries.cols()
    }

    pub fn distribution(&self) -> PerturbationDistribution {
        self.distribution
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// Builds the d×P projection for one step: column `p` is
/// `sample_perturbation(key(seed, step, p)) / √P`.
pub fn build_projection(
    master_seed: u64,
    step: u64,
    d: usize,
    p_count: usize,
    dist: PerturbationDistribution,
) -> Result<PerturbationMatrix> {
    if p_count == 0 {
        return Err(Error::InvalidArgument(
            "perturbation count must be at least 1".into(),
        ));
    }
    let columns: Vec<Vec<f64>> = (0..p_count)
        .map(|p| sample_perturbation(StreamKey::perturbation(master_seed, step, p as u64), d, dist))
        .collect::<Result<_>>()?;
    Ok(PerturbationMatrix::from_unnormalized_columns(
        &columns,
        dist,
        master_seed,
        step,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;

    #[test]
    fn same_key_reproduces_bit_identical_vectors() {
        let key = StreamKey::perturbation(42, 3, 7);
        for dist in [
            PerturbationDistribution::Gaussian,
            PerturbationDistribution::Rademacher,
        ] {
            let a = sample_perturbation(key, 100, dist).unwrap();
            let b = sample_perturbation(key, 100, dist).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn rademacher_support_is_signs() {
        let key = StreamKey::perturbation(1, 0, 0);
        let v = sample_perturbation(key, 5, PerturbationDistribution::Rademacher).unwrap();
        assert!(v.iter().all(|&x| x == 1.0 || x == -1.0));
    }

    #[test]
    fn rademacher_norm_is_deterministic() {
        for p in 0..20 {
            let key = StreamKey::perturbation(9, 0, p);
            let v = sample_perturbation(key, 37, PerturbationDistribution::Rademacher).unwrap();
            let sq: f64 = v.iter().map(|x| x * x).sum();
            assert_eq!(sq, 37.0);
        }
    }

    #[test]
    fn zero_dimension_rejected() {
        let key = StreamKey::perturbation(0, 0, 0);
        assert!(sample_perturbation(key, 0, PerturbationDistribution::Gaussian).is_err());
        assert!(build_projection(0, 0, 4, 0, PerturbationDistribution::Gaussian).is_err());
    }

    #[test]
    fn gaussian_moments_at_large_sample() {
        // CLT bounds at roughly 5 sigma for n = 1e5.
        let key = StreamKey::new(7, 0, 0, tag::TRIAL);
        let v = sample_perturbation(key, 100_000, PerturbationDistribution::Gaussian).unwrap();
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 0.02, "sample mean {mean}");
        assert!((0.98..=1.02).contains(&var), "sample variance {var}");
    }

    #[test]
    fn distinct_perturbation_streams_decorrelated() {
        let n = 100_000;
        let a = sample_perturbation(
            StreamKey::perturbation(5, 0, 0),
            n,
            PerturbationDistribution::Gaussian,
        )
        .unwrap();
        let b = sample_perturbation(
            StreamKey::perturbation(5, 0, 1),
            n,
            PerturbationDistribution::Gaussian,
        )
        .unwrap();
        let corr = linalg::dot(&a, &b) / (linalg::norm(&a) * linalg::norm(&b));
        assert!(corr.abs() < 0.01, "cross-stream correlation {corr}");
    }

    #[test]
    fn projection_single_column_is_unnormalized() {
        let u = build_projection(3, 0, 8, 1, PerturbationDistribution::Rademacher).unwrap();
        assert_eq!(u.dim(), 8);
        assert_eq!(u.perturbations(), 1);
        let col = u.entries().column(0);
        assert!(col.iter().all(|&x| x == 1.0 || x == -1.0));
    }

    #[test]
    fn rademacher_projection_column_norms_exact() {
        let d = 36;
        let p_count = 4;
        let u = build_projection(11, 2, d, p_count, PerturbationDistribution::Rademacher).unwrap();
        let expect = (d as f64 / p_count as f64).sqrt();
        for p in 0..p_count {
            let col = u.entries().column(p);
            assert!((linalg::norm(&col) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn projection_second_moment_is_identity() {
        // Monte-Carlo oracle for E[U Uᵀ] = I with d=4, P=2.
        let d = 4;
        let trials = 100_000u64;
        let mut acc = Matrix::zeros(d, d);
        for seed in 0..trials {
            let u = build_projection(seed, 0, d, 2, PerturbationDistribution::Gaussian).unwrap();
            let ut = u.entries().transpose();
            let uut = linalg::matmul_transpose_a(&ut, &ut).unwrap();
            acc = acc.add(&uut).unwrap();
        }
        let mean = acc.scale(1.0 / trials as f64);
        for r in 0..d {
            for c in 0..d {
                let target = if r == c { 1.0 } else { 0.0 };
                assert!(
                    (mean.get(r, c) - target).abs() < 0.02,
                    "E[UUᵀ][{r}][{c}] = {}",
                    mean.get(r, c)
                );
            }
        }
    }
}
