//! The three kernel-comparison metrics: relative Frobenius error, CKA error,
//! and spectral distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelMatrix;
use crate::linalg::{self, Matrix};

/// Which spectrum fed the spectral distance. Cross-kernels between distinct
/// inputs are generally non-symmetric, where an eigenvalue recipe is
/// ill-posed; singular values are used there instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpectraKind {
    Eigenvalues,
    Singular,
}

impl SpectraKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            SpectraKind::Eigenvalues => "eigenvalues",
            SpectraKind::Singular => "singular",
        }
    }
}

const SYMMETRY_TOL: f64 = 1e-10;

/// `‖K_fo − K_zo‖_F / ‖K_fo‖_F`.
pub fn rel_frobenius_error(k_fo: &KernelMatrix, k_zo: &KernelMatrix) -> Result<f64> {
    let reference = linalg::frobenius_norm(k_fo.entries());
    if reference == 0.0 {
        return Err(Error::DegenerateKernel(
            "reference kernel has zero Frobenius norm".into(),
        ));
    }
    let diff = k_fo.entries().sub(k_zo.entries())?;
    Ok(linalg::frobenius_norm(&diff) / reference)
}

/// Unnormalized HSIC of two kernel matrices: the Frobenius inner product of
/// their doubly centered copies, `⟨H K1 H, H K2 H⟩_F` with `H = I − 𝟙𝟙ᵀ/V`.
///
/// On symmetric kernels this is exactly `Tr(K1 H K2 H)`; writing it as an
/// inner product keeps the self-terms non-negative for the non-symmetric
/// cross-kernels too, which is what makes the CKA ratio (and its [0,2] error
/// range) well defined there. Constants in front of HSIC cancel in the
/// ratio, so no normalization is applied.
fn centered_inner_product(k1: &Matrix, k2: &Matrix) -> f64 {
    let v = k1.rows();
    // H M H computed entrywise through row/col/total means.
    let center = |m: &Matrix| -> Matrix {
        let mut row_mean = vec![0.0; v];
        let mut col_mean = vec![0.0; v];
        let mut total = 0.0;
        for r in 0..v {
            for c in 0..v {
                let x = m.get(r, c);
                row_mean[r] += x;
                col_mean[c] += x;
                total += x;
            }
        }
        for x in row_mean.iter_mut().chain(col_mean.iter_mut()) {
            *x /= v as f64;
        }
        total /= (v * v) as f64;
        let mut out = Matrix::zeros(v, v);
        for r in 0..v {
            for c in 0..v {
                out.set(r, c, m.get(r, c) - row_mean[r] - col_mean[c] + total);
            }
        }
        out
    };
    let c1 = center(k1);
    let c2 = center(k2);
    c1.entries()
        .iter()
        .zip(c2.entries())
        .map(|(a, b)| a * b)
        .sum()
}

/// CKA error `1 − HSIC(K1, K2) / √(HSIC(K1, K1) · HSIC(K2, K2))`.
///
/// Scale invariant, zero for identical (non-degenerate) kernels, and bounded
/// by 2 via Cauchy-Schwarz. Kernels that center to (numerically) zero are
/// rejected with a diagnostic.
pub fn cka_error(k1: &KernelMatrix, k2: &KernelMatrix) -> Result<f64> {
    let v = k1.classes();
    if v != k2.classes() {
        return Err(Error::DimensionMismatch {
            context: "kernel classes",
            expected: v,
            got: k2.classes(),
        });
    }
    if v < 2 {
        return Err(Error::InvalidArgument(
            "CKA needs at least 2 classes".into(),
        ));
    }
    let self1 = centered_inner_product(k1.entries(), k1.entries());
    let self2 = centered_inner_product(k2.entries(), k2.entries());
    let scale = linalg::frobenius_norm(k1.entries()).max(linalg::frobenius_norm(k2.entries()));
    let floor = 1e-14 * scale * scale;
    if self1 <= floor || self2 <= floor {
        return Err(Error::DegenerateKernel(format!(
            "centered norms {self1:.3e} / {self2:.3e} too small for a stable CKA ratio"
        )));
    }
    let cross = centered_inner_product(k1.entries(), k2.entries());
    Ok(1.0 - cross / (self1 * self2).sqrt())
}

/// Mean absolute difference between sorted spectra; equals the 1-Wasserstein
/// distance between the two empirical spectral measures.
pub fn spectral_distance(k1: &KernelMatrix, k2: &KernelMatrix) -> Result<(f64, SpectraKind)> {
    let v = k1.classes();
    if v != k2.classes() {
        return Err(Error::DimensionMismatch {
            context: "kernel classes",
            expected: v,
            got: k2.classes(),
        });
    }
    let symmetric =
        k1.entries().is_symmetric(SYMMETRY_TOL) && k2.entries().is_symmetric(SYMMETRY_TOL);
    let (s1, s2, kind) = if symmetric {
        (
            linalg::symmetric_eigenvalues(k1.entries())?,
            linalg::symmetric_eigenvalues(k2.entries())?,
            SpectraKind::Eigenvalues,
        )
    } else {
        (
            linalg::singular_values(k1.entries()),
            linalg::singular_values(k2.entries()),
            SpectraKind::Singular,
        )
    };
    let dist = s1
        .iter()
        .zip(&s2)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / v as f64;
    Ok((dist, kind))
}

/// One kernel-pair comparison: all three metrics plus provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub pair_id: String,
    pub perturbations: usize,
    pub distribution: String,
    pub seed: u64,
    pub rel_frobenius: f64,
    pub cka_error: f64,
    pub spectral_distance: f64,
    pub spectra_kind: SpectraKind,
    /// CKA on V = 2 kernels is numerically fragile (the centered matrix has
    /// one degree of freedom); flagged rather than rejected.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

impl MetricReport {
    pub fn csv_header() -> &'static str {
        "pair_id,P,distribution,seed,rel_frobenius,cka_error,spectral_distance,spectra_kind"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.pair_id,
            self.perturbations,
            self.distribution,
            self.seed,
            self.rel_frobenius,
            self.cka_error,
            self.spectral_distance,
            self.spectra_kind.as_str()
        )
    }
}

/// Compares a FO/ZO kernel pair under all three metrics.
pub fn metric_report(k_fo: &KernelMatrix, k_zo: &KernelMatrix) -> Result<MetricReport> {
    let rel = rel_frobenius_error(k_fo, k_zo)?;
    let cka = cka_error(k_fo, k_zo)?;
    let (spectral, kind) = spectral_distance(k_fo, k_zo)?;
    let meta = k_zo.meta();
    let warning = (k_fo.classes() < 3)
        .then(|| "CKA is numerically fragile for V < 3".to_string());
    Ok(MetricReport {
        pair_id: k_fo.meta().pair_id.clone(),
        perturbations: meta.perturbations.unwrap_or(0),
        distribution: meta
            .distribution
            .map(|d| d.to_string())
            .unwrap_or_else(|| "none".into()),
        seed: meta.master_seed.unwrap_or(0),
        rel_frobenius: rel,
        cka_error: cka,
        spectral_distance: spectral,
        spectra_kind: kind,
        warning,
    })
}
