//! Small dense matrices (row-major) and the pseudo-inverse oracle.
//!
//! These are sized for spatial Jacobians (d ≤ 16) and for dense
//! cross-checks of the pullback metric at n ≤ 50; factorizations are
//! delegated to `nalgebra`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<f64>,
}

impl DenseMatrix {
    pub fn new(rows: usize, cols: usize, entries: Vec<f64>) -> Result<Self> {
        if rows * cols != entries.len() {
            return Err(Error::DimensionMismatch {
                context: "DenseMatrix::new",
                expected: rows * cols,
                got: entries.len(),
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "DenseMatrix::new",
                sample: None,
            });
        }
        Ok(Self {
            rows,
            cols,
            entries,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            entries: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.entries[i * n + i] = 1.0;
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, v) in values.iter().enumerate() {
            m.entries[i * n + i] = *v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [f64] {
        &mut self.entries
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.entries[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.entries[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.entries[c * self.rows + r] = self.entries[r * self.cols + c];
            }
        }
        t
    }

    /// `out = self · v`
    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.cols, "matvec dimension mismatch");
        self.entries
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `out = selfᵀ · v`
    pub fn transpose_matvec(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "transpose_matvec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (row, &vr) in self.entries.chunks_exact(self.cols).zip(v) {
            for (o, a) in out.iter_mut().zip(row) {
                *o += a * vr;
            }
        }
        out
    }

    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.entries[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let orow = &other.entries[k * other.cols..(k + 1) * other.cols];
                let dst = &mut out.entries[i * other.cols..(i + 1) * other.cols];
                for (d, b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        out
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    pub fn max_abs_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst
    }

    pub(crate) fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.rows, self.cols, &self.entries)
    }

    /// Returns `(sign, log|det|)`. `sign` is 0 for an exactly singular matrix.
    pub fn sign_logdet(&self) -> (f64, f64) {
        assert_eq!(self.rows, self.cols, "determinant of non-square matrix");
        let lu = self.to_nalgebra().lu();
        let u = lu.u();
        let mut sign = if lu.p().determinant::<f64>() < 0.0 {
            -1.0
        } else {
            1.0
        };
        let mut logabs = 0.0;
        for i in 0..self.rows {
            let d = u[(i, i)];
            if d == 0.0 {
                return (0.0, f64::NEG_INFINITY);
            }
            if d < 0.0 {
                sign = -sign;
            }
            logabs += d.abs().ln();
        }
        (sign, logabs)
    }

    /// Solves `self · x = b` by LU with partial pivoting.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(self.rows, self.cols, "solve on non-square matrix");
        let lu = self.to_nalgebra().lu();
        lu.solve(&DVector::from_column_slice(b))
            .map(|x| x.as_slice().to_vec())
            .ok_or(Error::DegenerateJacobian { sample: None })
    }

    /// Solves `selfᵀ · x = b`.
    pub fn transpose_solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.transpose().solve(b)
    }

    /// `self⁻¹` via LU; used for trace formulas on d×d Jacobians.
    pub fn inverse(&self) -> Result<DenseMatrix> {
        let inv = self
            .to_nalgebra()
            .try_inverse()
            .ok_or(Error::DegenerateJacobian { sample: None })?;
        let mut out = DenseMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(r, c, inv[(r, c)]);
            }
        }
        Ok(out)
    }
}

/// Minimum-norm solution of a symmetric system via eigendecomposition.
///
/// Eigenvalues with `|λ| < rcond · max|λ|` are treated as zero, so the
/// component of `b` outside the numerical range is dropped.
pub fn dense_pinv_solve(a: &DenseMatrix, b: &[f64], rcond: f64) -> Result<Vec<f64>> {
    if a.rows != a.cols {
        return Err(Error::InvalidInput(format!(
            "pseudo-inverse needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    crate::error::check_len("dense_pinv_solve", a.rows, b.len())?;
    if !(rcond > 0.0 && rcond < 1.0) {
        return Err(Error::InvalidInput(format!("rcond must lie in (0,1), got {rcond}")));
    }
    let scale = a.entries.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    if a.max_abs_asymmetry() > 1e-10 * scale {
        return Err(Error::InvalidInput(
            "pseudo-inverse solve requires a symmetric matrix".into(),
        ));
    }
    let eig = a.to_nalgebra().symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = rcond * lmax;
    let n = a.rows;
    let mut x = vec![0.0; n];
    for k in 0..n {
        let lam = eig.eigenvalues[k];
        if lam.abs() <= cutoff || lam == 0.0 {
            continue;
        }
        let q = eig.eigenvectors.column(k);
        let coef: f64 = (0..n).map(|i| q[i] * b[i]).sum::<f64>() / lam;
        for i in 0..n {
            x[i] += coef * q[i];
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pinv_identity() {
        let x = dense_pinv_solve(&DenseMatrix::identity(2), &[1.0, 2.0], 1e-10).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn pinv_drops_null_component() {
        let a = DenseMatrix::diag(&[4.0, 0.0]);
        let x = dense_pinv_solve(&a, &[8.0, 5.0], 1e-10).unwrap();
        assert!((x[0] - 2.0).abs() < 1e-14);
        assert_eq!(x[1], 0.0);
    }

    #[test]
    fn pinv_rejects_asymmetric() {
        let a = DenseMatrix::new(2, 2, vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(dense_pinv_solve(&a, &[1.0, 1.0], 1e-10).is_err());
    }

    #[test]
    fn logdet_with_sign() {
        let a = DenseMatrix::new(2, 2, vec![0.0, 2.0, 3.0, 0.0]).unwrap();
        let (s, l) = a.sign_logdet();
        assert_eq!(s, -1.0);
        assert!((l - 6f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn new_rejects_bad_shape() {
        assert!(DenseMatrix::new(2, 2, vec![1.0; 3]).is_err());
        assert!(DenseMatrix::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn transpose_solve_matches() {
        let a = DenseMatrix::new(2, 2, vec![2.0, 1.0, 0.0, 3.0]).unwrap();
        let y = a.transpose_solve(&[2.0, 4.0]).unwrap();
        let back = a.transpose_matvec(&y);
        assert!((back[0] - 2.0).abs() < 1e-14 && (back[1] - 4.0).abs() < 1e-14);
    }
}
