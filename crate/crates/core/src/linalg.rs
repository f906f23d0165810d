//! Regularized symmetric positive-definite solves.
//!
//! `(K + λI)` is factored once as `L Lᵀ`; every later application of the
//! inverse is a pair of triangular solves. No explicit inverse is formed.

use nalgebra::{DMatrix, DVector};

use crate::{Error, GramMatrix, Result};

/// Cholesky factor of `K + λI`.
#[derive(Debug, Clone)]
pub struct RegularizedInverse {
    factor: DMatrix<f64>,
    lambda: f64,
}

/// Lower Cholesky factor of a symmetric matrix.
///
/// Fails on the first nonpositive (or non-finite) pivot, naming it.
pub fn cholesky(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: a.ncols(),
        });
    }
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { index: j, value: d });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(l)
}

/// Solves `L Lᵀ X = B` in place given the lower factor `L`.
pub(crate) fn cholesky_solve_in_place(l: &DMatrix<f64>, b: &mut DMatrix<f64>) {
    let n = l.nrows();
    for c in 0..b.ncols() {
        // forward: L z = b
        for i in 0..n {
            let mut s = b[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * b[(k, c)];
            }
            b[(i, c)] = s / l[(i, i)];
        }
        // backward: Lᵀ x = z
        for i in (0..n).rev() {
            let mut s = b[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * b[(k, c)];
            }
            b[(i, c)] = s / l[(i, i)];
        }
    }
}

/// Factors `K + λI` for a symmetric Gram matrix `K`.
pub fn reg_inverse(k: &GramMatrix, lambda: f64) -> Result<RegularizedInverse> {
    if !k.is_symmetric() {
        return Err(Error::invalid(
            "regularized inverse needs a symmetric Gram matrix",
        ));
    }
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!(
            "lambda must be a nonnegative real, got {lambda}"
        )));
    }
    let mut a = k.entries().clone();
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    let factor = cholesky(&a)?;
    Ok(RegularizedInverse { factor, lambda })
}

impl RegularizedInverse {
    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// The lower-triangular factor `L` with `L Lᵀ = K + λI`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// `L Lᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }

    /// `(K + λI)⁻¹ B`.
    pub fn solve(&self, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if b.nrows() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: b.nrows(),
            });
        }
        let mut x = b.clone();
        cholesky_solve_in_place(&self.factor, &mut x);
        Ok(x)
    }

    pub fn solve_vec(&self, b: &[f64]) -> Result<Vec<f64>> {
        let m = DMatrix::from_column_slice(b.len(), 1, b);
        Ok(self.solve(&m)?.as_slice().to_vec())
    }

    /// `(K + λI)⁻¹ v` for a column vector.
    pub fn solve_dvec(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(DVector::from_vec(self.solve_vec(v.as_slice())?))
    }
}
