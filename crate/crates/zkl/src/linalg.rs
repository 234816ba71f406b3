//! Dense row-major matrices and the small-scale spectral routines the kernel
//! metrics rely on.
//!
//! Everything here targets matrices of at most ~10^6 entries (output
//! dimension up to ~1000); accumulation is always in `f64`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Off-diagonal mass threshold (relative to the Frobenius norm) at which the
/// Jacobi eigenvalue sweep stops.
const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 64;

/// Dense matrix, row-major storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data. The entry count must match the
    /// shape and every entry must be finite.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix entry count",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds from nested rows; rows must be non-empty and rectangular.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::DimensionMismatch {
                    context: "ragged row",
                    expected: c,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::from_vec(r, c, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.cols + col] = value;
    }

    #[inline]
    pub fn row(&self, row: usize) -> &[f64] {
        &self.data[row * self.cols..(row + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, row: usize) -> &mut [f64] {
        &mut self.data[row * self.cols..(row + 1) * self.cols]
    }

    /// Row-major entries, the canonical interchange layout.
    pub fn entries(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, col)).collect()
    }

    pub fn set_column(&mut self, col: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.rows);
        for (r, v) in values.iter().enumerate() {
            self.set(r, col, *v);
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    pub fn scale(&self, factor: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    fn check_same_shape(&self, other: &Matrix) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                context: "matrix shapes",
                expected: self.rows * self.cols,
                got: other.rows * other.cols,
            });
        }
        Ok(())
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                context: "matvec operand length",
                expected: self.cols,
                got: x.len(),
            });
        }
        Ok((0..self.rows)
            .map(|r| dot(self.row(r), x))
            .collect())
    }

    pub fn max_abs_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        if self.rows != self.cols {
            return f64::INFINITY;
        }
        for r in 0..self.rows {
            for c in (r + 1)..self.cols {
                worst = worst.max((self.get(r, c) - self.get(c, r)).abs());
            }
        }
        worst
    }

    pub fn is_symmetric(&self, tolerance: f64) -> bool {
        self.rows == self.cols && self.max_abs_asymmetry() <= tolerance
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Standard matrix product `a * b`.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::DimensionMismatch {
            context: "matmul inner dimensions",
            expected: a.cols,
            got: b.rows,
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for r in 0..a.rows {
        let a_row = a.row(r);
        let out_row = out.row_mut(r);
        for (k, &a_rk) in a_row.iter().enumerate() {
            if a_rk == 0.0 {
                continue;
            }
            let b_row = b.row(k);
            for (o, &b_kc) in out_row.iter_mut().zip(b_row) {
                *o += a_rk * b_kc;
            }
        }
    }
    Ok(out)
}

/// Computes `aᵀ * b` without materializing the transpose.
///
/// This is the shape every kernel product takes (`JᵀJ`, `UᵀJ`, ...): both
/// operands are tall (shared row count `d`), the output is small. Row blocks
/// of the output are independent, so the parallel path splits there; each
/// entry is still accumulated in ascending row order, which keeps the result
/// identical for any thread count.
pub fn matmul_transpose_a(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(Error::DimensionMismatch {
            context: "transposed product shared dimension",
            expected: a.rows,
            got: b.rows,
        });
    }
    let out_rows = a.cols;
    let out_cols = b.cols;
    let mut out = Matrix::zeros(out_rows, out_cols);

    let fill_block = |row_range: std::ops::Range<usize>, block: &mut [f64]| {
        for k in 0..a.rows {
            let a_row = a.row(k);
            let b_row = b.row(k);
            for i in row_range.clone() {
                let a_ki = a_row[i];
                if a_ki == 0.0 {
                    continue;
                }
                let dst = &mut block[(i - row_range.start) * out_cols..][..out_cols];
                for (o, &b_kj) in dst.iter_mut().zip(b_row) {
                    *o += a_ki * b_kj;
                }
            }
        }
    };

    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        const BLOCK: usize = 32;
        out.data
            .par_chunks_mut(BLOCK * out_cols)
            .enumerate()
            .for_each(|(bi, block)| {
                let start = bi * BLOCK;
                let end = (start + BLOCK).min(out_rows);
                fill_block(start..end, block);
            });
    }
    #[cfg(not(feature = "parallel"))]
    fill_block(0..out_rows, &mut out.data);

    Ok(out)
}

/// `√(Σ entries²)`.
pub fn frobenius_norm(m: &Matrix) -> f64 {
    frobenius_norm_sq(m).sqrt()
}

/// `Σ entries²`, exact for integer-valued entries (no square-root rounding).
pub fn frobenius_norm_sq(m: &Matrix) -> f64 {
    m.data.iter().map(|v| v * v).sum::<f64>()
}

/// Largest singular value, obtained from the spectrum of `MᵀM`.
pub fn spectral_norm(m: &Matrix) -> f64 {
    singular_values(m).last().copied().unwrap_or(0.0)
}

/// Singular values sorted non-decreasing; count = min(rows, cols).
///
/// Computed as square roots of the eigenvalues of the Gram matrix on the
/// smaller side, clamped at zero.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    let gram = if m.rows >= m.cols {
        matmul_transpose_a(m, m).expect("shared dimension matches by construction")
    } else {
        let t = m.transpose();
        matmul_transpose_a(&t, &t).expect("shared dimension matches by construction")
    };
    let mut eigs = jacobi_eigenvalues(&gram);
    for e in &mut eigs {
        *e = e.max(0.0).sqrt();
    }
    eigs.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    eigs
}

/// Eigenvalues of a symmetric matrix, sorted non-decreasing.
///
/// Symmetry is enforced up to absolute tolerance 1e-10 on the off-diagonal
/// pairs; the sweep itself runs on the symmetrized average.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    if m.rows != m.cols {
        return Err(Error::DimensionMismatch {
            context: "symmetric eigenvalues need a square matrix",
            expected: m.rows,
            got: m.cols,
        });
    }
    let asym = m.max_abs_asymmetry();
    if asym > 1e-10 {
        return Err(Error::NotSymmetric {
            max_asymmetry: asym,
            tolerance: 1e-10,
        });
    }
    let mut eigs = jacobi_eigenvalues(m);
    eigs.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    Ok(eigs)
}

/// Cyclic Jacobi sweep on (the symmetrization of) `m`.
///
/// Stops once the off-diagonal mass drops below `JACOBI_TOL` relative to the
/// Frobenius norm of the input.
fn jacobi_eigenvalues(m: &Matrix) -> Vec<f64> {
    let n = m.rows;
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![m.get(0, 0)];
    }

    // Work on the symmetrized copy so tiny asymmetries cannot stall the sweep.
    let mut a = vec![0.0f64; n * n];
    for r in 0..n {
        for c in 0..n {
            a[r * n + c] = 0.5 * (m.get(r, c) + m.get(c, r));
        }
    }

    let frob = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    if frob == 0.0 {
        return vec![0.0; n];
    }
    let stop = JACOBI_TOL * frob;

    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = {
            let mut s = 0.0;
            for r in 0..n {
                for c in (r + 1)..n {
                    s += 2.0 * a[r * n + c] * a[r * n + c];
                }
            }
            s.sqrt()
        };
        if off <= stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }

    (0..n).map(|i| a[i * n + i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    /// Independent oracle: power iteration on MᵀM estimates max ‖Mx‖/‖x‖.
    fn power_iteration_spectral_norm(m: &Matrix, iters: usize) -> f64 {
        let n = m.cols();
        let mut x: Vec<f64> = (0..n).map(|i| 1.0 + (i as f64 * 0.7).sin()).collect();
        let nx = norm(&x);
        x.iter_mut().for_each(|v| *v /= nx);
        let mt = m.transpose();
        for _ in 0..iters {
            let y = m.matvec(&x).unwrap();
            let mut z = mt.matvec(&y).unwrap();
            let nz = norm(&z);
            if nz == 0.0 {
                return 0.0;
            }
            z.iter_mut().for_each(|v| *v /= nz);
            x = z;
        }
        norm(&m.matvec(&x).unwrap())
    }

    #[test]
    fn matmul_identity_passes_through() {
        let m = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let prod = matmul(&Matrix::identity(2), &m).unwrap();
        assert_eq!(prod, m);
    }

    #[test]
    fn matmul_hand_case() {
        let a = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = mat(&[&[0.0], &[1.0]]);
        let prod = matmul(&a, &b).unwrap();
        assert_eq!(prod.entries(), &[2.0, 4.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let m = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let prod = matmul(&Matrix::zeros(2, 2), &m).unwrap();
        assert!(prod.entries().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_rejects_dimension_mismatch() {
        let a = Matrix::zeros(2, 3);
        let b = Matrix::zeros(2, 2);
        assert!(matches!(
            matmul(&a, &b),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn transpose_product_matches_plain_matmul() {
        let a = mat(&[&[1.0, -2.0], &[0.5, 3.0], &[2.0, 1.0]]);
        let b = mat(&[&[2.0, 0.0, 1.0], &[1.0, -1.0, 4.0], &[0.0, 2.0, -3.0]]);
        let direct = matmul(&a.transpose(), &b).unwrap();
        let fused = matmul_transpose_a(&a, &b).unwrap();
        for (x, y) in direct.entries().iter().zip(fused.entries()) {
            assert_relative_eq!(x, y, max_relative = 1e-14);
        }
    }

    #[test]
    fn frobenius_cases() {
        assert_eq!(frobenius_norm(&Matrix::zeros(3, 2)), 0.0);
        assert_relative_eq!(frobenius_norm(&Matrix::identity(2)), 2f64.sqrt());
        assert_relative_eq!(frobenius_norm(&mat(&[&[3.0, 4.0]])), 5.0);
    }

    #[test]
    fn spectral_norm_identity_and_diagonal() {
        assert_relative_eq!(spectral_norm(&Matrix::identity(3)), 1.0, epsilon = 1e-10);
        let d = mat(&[&[2.0, 0.0], &[0.0, -5.0]]);
        assert_relative_eq!(spectral_norm(&d), 5.0, epsilon = 1e-10);
    }

    #[test]
    fn spectral_norm_closed_form_gram_case() {
        // MᵀM = [[1,-1],[-1,1]] has eigenvalues {0, 2}, so ‖M‖₂ = √2.
        let m = mat(&[&[0.0, 0.0], &[-1.0, 1.0]]);
        assert_relative_eq!(spectral_norm(&m), 2f64.sqrt(), epsilon = 1e-10);
        // Shear with golden-ratio spectrum: MᵀM eigenvalues (3±√5)/2.
        let shear = mat(&[&[1.0, 1.0], &[0.0, 1.0]]);
        assert_relative_eq!(
            spectral_norm(&shear),
            ((3.0 + 5f64.sqrt()) / 2.0).sqrt(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn spectral_norm_agrees_with_power_iteration() {
        let m = mat(&[
            &[0.3, -1.2, 0.7],
            &[2.1, 0.4, -0.9],
            &[-0.5, 1.1, 0.2],
            &[0.8, 0.0, 1.5],
        ]);
        let by_power = power_iteration_spectral_norm(&m, 500);
        assert_relative_eq!(spectral_norm(&m), by_power, epsilon = 1e-8);
    }

    #[test]
    fn singular_values_cases() {
        let d = mat(&[&[1.0, 0.0], &[0.0, 3.0]]);
        let sv = singular_values(&d);
        assert_relative_eq!(sv[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sv[1], 3.0, epsilon = 1e-10);

        let z = Matrix::zeros(2, 2);
        assert_eq!(singular_values(&z), vec![0.0, 0.0]);

        let n = mat(&[&[0.0, 1.0], &[0.0, 0.0]]);
        let sv = singular_values(&n);
        assert_relative_eq!(sv[0], 0.0, epsilon = 1e-10);
        assert_relative_eq!(sv[1], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn symmetric_eigenvalues_cases() {
        let d = mat(&[&[2.0, 0.0], &[0.0, 2.0]]);
        let e = symmetric_eigenvalues(&d).unwrap();
        assert_eq!(e, vec![2.0, 2.0]);

        let swap = mat(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let e = symmetric_eigenvalues(&swap).unwrap();
        assert_relative_eq!(e[0], -1.0, epsilon = 1e-10);
        assert_relative_eq!(e[1], 1.0, epsilon = 1e-10);

        let e = symmetric_eigenvalues(&Matrix::identity(5)).unwrap();
        assert!(e.iter().all(|&v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn symmetric_eigenvalues_rejects_asymmetric() {
        let m = mat(&[&[0.0, 1.0], &[0.0, 0.0]]);
        assert!(matches!(
            symmetric_eigenvalues(&m),
            Err(Error::NotSymmetric { .. })
        ));
    }

    #[test]
    fn eigenvalue_sum_matches_trace() {
        let m = mat(&[
            &[4.0, 1.0, -2.0],
            &[1.0, 3.0, 0.5],
            &[-2.0, 0.5, 1.0],
        ]);
        let e = symmetric_eigenvalues(&m).unwrap();
        let sum: f64 = e.iter().sum();
        assert!((sum - m.trace()).abs() <= 1e-8 * frobenius_norm(&m));
    }

    #[test]
    fn from_vec_rejects_non_finite() {
        assert!(matches!(
            Matrix::from_vec(1, 2, vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
    }

    proptest! {
        #[test]
        fn frobenius_equals_singular_value_energy(
            entries in proptest::collection::vec(-50.0f64..50.0, 12),
        ) {
            let m = Matrix::from_vec(4, 3, entries).unwrap();
            let fro2 = frobenius_norm(&m).powi(2);
            let sv2: f64 = singular_values(&m).iter().map(|s| s * s).sum();
            prop_assert!((fro2 - sv2).abs() <= 1e-8 * fro2.max(1.0));
        }

        #[test]
        fn spectral_norm_is_max_singular_value(
            entries in proptest::collection::vec(-10.0f64..10.0, 9),
        ) {
            let m = Matrix::from_vec(3, 3, entries).unwrap();
            let sv = singular_values(&m);
            let top = sv.last().copied().unwrap();
            let sn = spectral_norm(&m);
            prop_assert!((sn - top).abs() <= 1e-10 * top.max(1.0));
        }

        #[test]
        fn symmetric_singular_values_are_abs_eigenvalues(
            diag in proptest::collection::vec(-8.0f64..8.0, 3),
            off in proptest::collection::vec(-4.0f64..4.0, 3),
        ) {
            let m = Matrix::from_rows(&[
                vec![diag[0], off[0], off[1]],
                vec![off[0], diag[1], off[2]],
                vec![off[1], off[2], diag[2]],
            ]).unwrap();
            let mut abs_eigs: Vec<f64> = symmetric_eigenvalues(&m)
                .unwrap()
                .iter()
                .map(|e| e.abs())
                .collect();
            abs_eigs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let sv = singular_values(&m);
            let scale = frobenius_norm(&m).max(1.0);
            for (s, e) in sv.iter().zip(&abs_eigs) {
                prop_assert!((s - e).abs() <= 1e-8 * scale);
            }
        }
    }
}
