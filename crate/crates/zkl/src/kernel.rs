//! First-order and projected empirical tangent kernels.
//!
//! The FO kernel between two inputs is the V×V Gram matrix of per-logit
//! parameter gradients, `K = J_oᵀ J_u`. A zeroth-order step only sees those
//! gradients through the random perturbation subspace, which turns the kernel
//! into `J_oᵀ U Uᵀ J_u`. The d×d projector `U Uᵀ` is never materialized: both
//! Jacobians are first pushed down to P×V and the kernel is assembled from
//! the projected copies, keeping memory at O(dP).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::rng::{PerturbationDistribution, PerturbationMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelTag {
    Fo,
    Zo,
}

/// Provenance carried by every kernel so an experiment row can be regenerated
/// from its CSV fields alone.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct KernelMeta {
    pub pair_id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perturbations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distribution: Option<PerturbationDistribution>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KernelMatrix {
    entries: Matrix,
    tag: KernelTag,
    meta: KernelMeta,
}

impl KernelMatrix {
    pub fn entries(&self) -> &Matrix {
        &self.entries
    }

    pub fn tag(&self) -> KernelTag {
        self.tag
    }

    pub fn meta(&self) -> &KernelMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut KernelMeta {
        &mut self.meta
    }

    pub fn classes(&self) -> usize {
        self.entries.cols()
    }

    /// JSON dump: `{meta, tag, rows, cols, entries}` with row-major entries.
    pub fn to_dump_json(&self) -> serde_json::Value {
        serde_json::json!({
            "meta": self.meta,
            "tag": self.tag,
            "rows": self.entries.rows(),
            "cols": self.entries.cols(),
            "entries": self.entries.entries(),
        })
    }
}

fn check_shared_dim(j_o: &Matrix, j_u: &Matrix) -> Result<()> {
    if j_o.rows() != j_u.rows() {
        return Err(Error::DimensionMismatch {
            context: "jacobian parameter dimension",
            expected: j_o.rows(),
            got: j_u.rows(),
        });
    }
    Ok(())
}

/// The first-order kernel `J_oᵀ J_u`.
pub fn fo_entk(j_o: &Matrix, j_u: &Matrix) -> Result<KernelMatrix> {
    check_shared_dim(j_o, j_u)?;
    Ok(KernelMatrix {
        entries: linalg::matmul_transpose_a(j_o, j_u)?,
        tag: KernelTag::Fo,
        meta: KernelMeta::default(),
    })
}

/// Projects a Jacobian into the perturbation subspace: `Uᵀ J`, P×V.
pub fn projected_jacobian(u: &PerturbationMatrix, jac: &Matrix) -> Result<Matrix> {
    if u.dim() != jac.rows() {
        return Err(Error::DimensionMismatch {
            context: "projection parameter dimension",
            expected: u.dim(),
            got: jac.rows(),
        });
    }
    linalg::matmul_transpose_a(u.entries(), jac)
}

/// The projected kernel `J_oᵀ U Uᵀ J_u`, computed as `(Uᵀ J_o)ᵀ (Uᵀ J_u)`.
pub fn zo_entk(j_o: &Matrix, j_u: &Matrix, u: &PerturbationMatrix) -> Result<KernelMatrix> {
    check_shared_dim(j_o, j_u)?;
    let proj_o = projected_jacobian(u, j_o)?;
    let proj_u = projected_jacobian(u, j_u)?;
    Ok(KernelMatrix {
        entries: linalg::matmul_transpose_a(&proj_o, &proj_u)?,
        tag: KernelTag::Zo,
        meta: KernelMeta {
            perturbations: Some(u.perturbations()),
            distribution: Some(u.distribution()),
            master_seed: Some(u.master_seed()),
            step: Some(u.step()),
            ..KernelMeta::default()
        },
    })
}

/// Entrywise kernel approximation error `ΔK = K_fo − K_zo`. Entry (i, j) is
/// the gap between the original and projected inner products of the gradient
/// columns.
pub fn kernel_discrepancy(k_fo: &KernelMatrix, k_zo: &KernelMatrix) -> Result<Matrix> {
    k_fo.entries.sub(&k_zo.entries)
}

/// `Ξ = max(‖J_o‖_F², ‖J_u‖_F²)`, the Jacobian scale in the discrepancy bound.
pub fn jacobian_scale(j_o: &Matrix, j_u: &Matrix) -> f64 {
    linalg::frobenius_norm_sq(j_o).max(linalg::frobenius_norm_sq(j_u))
}
