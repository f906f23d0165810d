//! Kernel functions and Gram matrices.
//!
//! Three kernels are supported: the Gaussian RBF
//! `k(a, b) = exp(-|a - b|² / (2σ²))`, the linear kernel `a·b`, and the
//! Kronecker delta on finite labels. Delta-kernel samples are either
//! one-dimensional integer codes or one-hot vectors.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::samples::{dot, sq_dist};
use crate::{Error, Result, Samples};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    /// Gaussian RBF; `bandwidth_sq` is σ² in units of squared input distance.
    Rbf {
        bandwidth_sq: f64,
    },
    Linear,
    /// Kronecker delta on finite labels.
    Delta,
}

impl KernelSpec {
    pub fn rbf(bandwidth_sq: f64) -> Result<Self> {
        let k = KernelSpec::Rbf { bandwidth_sq };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Rbf { bandwidth_sq }
                if !(bandwidth_sq > 0.0 && bandwidth_sq.is_finite()) =>
            {
                Err(Error::InvalidBandwidth(bandwidth_sq))
            }
            _ => Ok(()),
        }
    }

    pub fn is_delta(&self) -> bool {
        matches!(self, KernelSpec::Delta)
    }

    /// Whether `∂k(a, b)/∂a` exists everywhere.
    pub fn is_differentiable(&self) -> bool {
        !self.is_delta()
    }

    /// Evaluates the kernel without checking dimensions or label validity.
    #[inline]
    pub(crate) fn eval_unchecked(&self, a: &[f64], b: &[f64]) -> f64 {
        match *self {
            KernelSpec::Rbf { bandwidth_sq } => (-sq_dist(a, b) / (2.0 * bandwidth_sq)).exp(),
            KernelSpec::Linear => dot(a, b),
            KernelSpec::Delta => {
                if a == b {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Accumulates `scale · ∂k(a, b)/∂a` into `out`.
    pub(crate) fn add_grad_first(&self, a: &[f64], b: &[f64], scale: f64, out: &mut [f64]) {
        match *self {
            KernelSpec::Rbf { bandwidth_sq } => {
                let k = self.eval_unchecked(a, b);
                let c = -scale * k / bandwidth_sq;
                for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
                    *o += c * (x - y);
                }
            }
            KernelSpec::Linear => {
                for (o, y) in out.iter_mut().zip(b) {
                    *o += scale * y;
                }
            }
            KernelSpec::Delta => unreachable!("delta kernel has no gradient"),
        }
    }

    /// Checks a single sample against the kernel's input requirements.
    pub(crate) fn check_sample(&self, a: &[f64]) -> Result<()> {
        if self.is_delta() {
            label_code(a)?;
        }
        Ok(())
    }
}

/// Decodes a finite label from either a 1-D integer code or a one-hot vector.
pub fn label_code(v: &[f64]) -> Result<u32> {
    match v {
        [c] => {
            if c.is_finite() && *c >= 0.0 && c.fract() == 0.0 && *c <= u32::MAX as f64 {
                Ok(*c as u32)
            } else {
                Err(Error::InvalidLabel(format!(
                    "{c} is not a nonnegative integer code"
                )))
            }
        }
        _ => {
            let mut hot = None;
            for (i, &x) in v.iter().enumerate() {
                if x == 1.0 {
                    if hot.is_some() {
                        return Err(Error::InvalidLabel(
                            "one-hot vector has several ones".into(),
                        ));
                    }
                    hot = Some(i as u32);
                } else if x != 0.0 {
                    return Err(Error::InvalidLabel(format!(
                        "one-hot entry {x} is not 0 or 1"
                    )));
                }
            }
            hot.ok_or_else(|| Error::InvalidLabel("one-hot vector has no one".into()))
        }
    }
}

/// One-hot encoding of `code` in `num_classes` dimensions.
pub fn one_hot(code: u32, num_classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; num_classes];
    v[code as usize] = 1.0;
    v
}

pub fn kernel_eval(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64> {
    spec.validate()?;
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    spec.check_sample(a)?;
    spec.check_sample(b)?;
    Ok(spec.eval_unchecked(a, b))
}

/// A matrix of pairwise kernel evaluations `entries[i][j] = k(x_i, z_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    symmetric: bool,
}

impl GramMatrix {
    /// Wraps an arbitrary matrix; `symmetric` is set only if it is square
    /// and equals its transpose within 1e-12 relative tolerance.
    pub fn from_matrix(entries: DMatrix<f64>) -> Self {
        let symmetric = entries.is_square() && {
            let scale = entries
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs()))
                .max(1e-300);
            (0..entries.nrows())
                .all(|i| (0..i).all(|j| (entries[(i, j)] - entries[(j, i)]).abs() <= 1e-12 * scale))
        };
        Self { entries, symmetric }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn left_n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn right_m(&self) -> usize {
        self.entries.ncols()
    }

    pub fn is_symmetric(&self) -> bool {
        self.symmetric
    }

    pub fn mean_diagonal(&self) -> f64 {
        let n = self.entries.nrows().min(self.entries.ncols());
        if n == 0 {
            return 0.0;
        }
        self.entries.diagonal().sum() / n as f64
    }
}

fn check_samples(spec: &KernelSpec, s: &Samples) -> Result<()> {
    if s.is_empty() {
        return Err(Error::EmptyInput("gram sample list"));
    }
    if spec.is_delta() {
        for r in s.rows() {
            label_code(r)?;
        }
    }
    Ok(())
}

/// Builds the Gram matrix between `x` and `z`.
///
/// The symmetric flag is set iff `x` and `z` are the same list (same object
/// or equal contents); the upper triangle is then mirrored so the result is
/// exactly symmetric.
pub fn gram(spec: &KernelSpec, x: &Samples, z: &Samples) -> Result<GramMatrix> {
    spec.validate()?;
    check_samples(spec, x)?;
    if x.dim() != z.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: z.dim(),
        });
    }
    let same = std::ptr::eq(x, z) || x == z;
    if same {
        let n = x.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = spec.eval_unchecked(x.row(i), x.row(j));
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        return Ok(GramMatrix {
            entries: m,
            symmetric: true,
        });
    }
    check_samples(spec, z)?;
    let m = DMatrix::from_fn(x.len(), z.len(), |i, j| {
        spec.eval_unchecked(x.row(i), z.row(j))
    });
    Ok(GramMatrix {
        entries: m,
        symmetric: false,
    })
}

/// Median of pairwise squared distances (self-pairs excluded).
///
/// Using it as σ² puts the median normalized distance `|x - y|²/σ²` at 1.
pub fn median_bandwidth(x: &Samples) -> Result<f64> {
    let n = x.len();
    if n < 2 {
        return Err(Error::invalid("median bandwidth needs at least 2 samples"));
    }
    let mut d = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            d.push(sq_dist(x.row(i), x.row(j)));
        }
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if !(med > 0.0) || !med.is_finite() {
        return Err(Error::Degenerate(
            "median pairwise distance is zero; supply a bandwidth explicitly".into(),
        ));
    }
    Ok(med)
}

/// Default ridge: `0.1 / sqrt(N)` times the mean Gram diagonal.
pub fn default_lambda(k: &GramMatrix) -> f64 {
    let n = k.left_n().max(1) as f64;
    0.1 / n.sqrt() * k.mean_diagonal()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rbf_examples() {
        let k1 = KernelSpec::rbf(1.0).unwrap();
        assert_eq!(kernel_eval(&k1, &[3.7, -1.0], &[3.7, -1.0]).unwrap(), 1.0);
        let k2 = KernelSpec::rbf(2.0).unwrap();
        let v = kernel_eval(&k2, &[0.0], &[2.0]).unwrap();
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn delta_examples() {
        let a = one_hot(3, 8);
        let b = one_hot(5, 8);
        assert_eq!(kernel_eval(&KernelSpec::Delta, &a, &b).unwrap(), 0.0);
        assert_eq!(kernel_eval(&KernelSpec::Delta, &a, &a).unwrap(), 1.0);
        assert_eq!(
            kernel_eval(&KernelSpec::Delta, &[2.0], &[2.0]).unwrap(),
            1.0
        );
        assert!(kernel_eval(&KernelSpec::Delta, &[0.5], &[0.5]).is_err());
        assert!(kernel_eval(&KernelSpec::Delta, &[1.0, 1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn eval_errors() {
        let k = KernelSpec::Rbf { bandwidth_sq: 1.0 };
        assert!(matches!(
            kernel_eval(&k, &[1.0], &[1.0, 2.0]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            KernelSpec::rbf(0.0),
            Err(Error::InvalidBandwidth(_))
        ));
        let bad = KernelSpec::Rbf { bandwidth_sq: -1.0 };
        assert!(matches!(
            kernel_eval(&bad, &[0.0], &[0.0]),
            Err(Error::InvalidBandwidth(_))
        ));
    }

    #[test]
    fn gram_examples() {
        let x = Samples::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let g = gram(&KernelSpec::Linear, &x, &x).unwrap();
        assert!(g.is_symmetric());
        assert_eq!(g.entries(), &DMatrix::identity(2, 2));

        let k = KernelSpec::rbf(2.0).unwrap();
        let x = Samples::from_scalars(&[0.0]);
        let z = Samples::from_scalars(&[2.0, 0.0]);
        let g = gram(&k, &x, &z).unwrap();
        assert!(!g.is_symmetric());
        assert!((g.entries()[(0, 0)] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(g.entries()[(0, 1)], 1.0);

        assert!(matches!(
            gram(&k, &Samples::empty(1), &z),
            Err(Error::EmptyInput(_))
        ));
    }

    #[test]
    fn median_examples() {
        assert_eq!(
            median_bandwidth(&Samples::from_scalars(&[0.0, 2.0])).unwrap(),
            4.0
        );
        assert_eq!(
            median_bandwidth(&Samples::from_scalars(&[0.0, 1.0, 3.0])).unwrap(),
            4.0
        );
        assert!(matches!(
            median_bandwidth(&Samples::from_scalars(&[1.5, 1.5])),
            Err(Error::Degenerate(_))
        ));
        assert!(median_bandwidth(&Samples::from_scalars(&[1.0])).is_err());
    }

    #[test]
    fn default_lambda_scales_with_diagonal() {
        let x = Samples::from_scalars(&[0.0, 1.0, 2.0, 3.0]);
        let g = gram(&KernelSpec::rbf(1.0).unwrap(), &x, &x).unwrap();
        assert!((default_lambda(&g) - 0.05).abs() < 1e-15);
    }

    fn sample_vec(dim: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-5.0f64..5.0, dim)
    }

    proptest! {
        #[test]
        fn kernels_are_symmetric(a in sample_vec(3), b in sample_vec(3), bw in 0.1f64..10.0) {
            for k in [KernelSpec::Rbf { bandwidth_sq: bw }, KernelSpec::Linear] {
                prop_assert_eq!(k.eval_unchecked(&a, &b), k.eval_unchecked(&b, &a));
            }
            let la = [a[0].abs().floor()];
            let lb = [b[0].abs().floor()];
            prop_assert_eq!(
                kernel_eval(&KernelSpec::Delta, &la, &lb).unwrap(),
                kernel_eval(&KernelSpec::Delta, &lb, &la).unwrap()
            );
        }

        #[test]
        fn rbf_gram_entries_in_unit_interval(
            rows in proptest::collection::vec(sample_vec(2), 1..8),
            bw in 0.5f64..10.0,
        ) {
            let x = Samples::from_rows(&rows).unwrap();
            let g = gram(&KernelSpec::Rbf { bandwidth_sq: bw }, &x, &x).unwrap();
            for i in 0..x.len() {
                prop_assert_eq!(g.entries()[(i, i)], 1.0);
                for j in 0..x.len() {
                    let v = g.entries()[(i, j)];
                    prop_assert!(v > 0.0 && v <= 1.0);
                }
            }
        }
    }
}
