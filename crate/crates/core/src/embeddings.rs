//! Kernel mean embeddings, MMD² and CMMD².
//!
//! The empirical conditional embedding operator is `Ĉ = Φ A Υᵀ` where `Φ`
//! and `Υ` are the (implicit) output and input feature matrices. With a
//! ridge, `A = (K + λI)⁻¹`. In the finite-domain case (delta kernel on the
//! conditioning labels) the input covariance is the diagonal matrix of class
//! probabilities and `A = diag(1 / n_{x_i})`, so no ridge is needed.
//!
//! For two operators `Ĉ_d = Φ_d A_d Υ_dᵀ` and `Ĉ_s = Φ_s A_s Υ_sᵀ`
//!
//! ```text
//! ‖Ĉ_d − Ĉ_s‖²_HS = Tr(K_d A_d L_d A_d) + Tr(K_s A_s L_s A_s) − 2 Tr(K_sd A_d L_ds A_s)
//! ```
//!
//! which only involves Gram matrices. [`CmmdPlan`] precomputes the parts that
//! depend on the conditioning inputs alone.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::kernels::label_code;
use crate::linalg::reg_inverse;
use crate::{gram, Error, KernelSpec, PairedDataset, RegularizedInverse, Result, Samples};

/// Weighted sum of feature maps `Σ wᵢ φ(aᵢ)`.
#[derive(Debug, Clone)]
pub struct MeanEmbedding {
    anchors: Samples,
    weights: Vec<f64>,
    kernel: KernelSpec,
}

impl MeanEmbedding {
    /// The plain empirical embedding with weights `1/N`.
    pub fn empirical(kernel: KernelSpec, anchors: Samples) -> Result<Self> {
        if anchors.is_empty() {
            return Err(Error::EmptyInput("embedding anchors"));
        }
        let w = 1.0 / anchors.len() as f64;
        let weights = vec![w; anchors.len()];
        Self::weighted(kernel, anchors, weights)
    }

    pub fn weighted(kernel: KernelSpec, anchors: Samples, weights: Vec<f64>) -> Result<Self> {
        kernel.validate()?;
        if weights.len() != anchors.len() {
            return Err(Error::DimensionMismatch {
                expected: anchors.len(),
                got: weights.len(),
            });
        }
        for r in anchors.rows() {
            kernel.check_sample(r)?;
        }
        Ok(Self {
            anchors,
            weights,
            kernel,
        })
    }

    pub fn anchors(&self) -> &Samples {
        &self.anchors
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    /// `⟨μ, φ(point)⟩ = Σ wᵢ k(aᵢ, point)`.
    pub fn evaluate(&self, point: &[f64]) -> Result<f64> {
        if point.len() != self.anchors.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.anchors.dim(),
                got: point.len(),
            });
        }
        self.kernel.check_sample(point)?;
        Ok(self
            .anchors
            .rows()
            .zip(&self.weights)
            .map(|(a, w)| w * self.kernel.eval_unchecked(a, point))
            .sum())
    }

    /// RKHS inner product of two embeddings sharing a kernel.
    pub fn inner(&self, other: &MeanEmbedding) -> Result<f64> {
        if self.kernel != other.kernel {
            return Err(Error::invalid("embeddings use different kernels"));
        }
        if self.anchors.dim() != other.anchors.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.anchors.dim(),
                got: other.anchors.dim(),
            });
        }
        let mut s = 0.0;
        for (a, wa) in self.anchors.rows().zip(&self.weights) {
            for (b, wb) in other.anchors.rows().zip(&other.weights) {
                s += wa * wb * self.kernel.eval_unchecked(a, b);
            }
        }
        Ok(s)
    }
}

fn check_pair(x: &Samples, y: &Samples) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyInput("mmd sample list"));
    }
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch {
            expected: x.dim(),
            got: y.dim(),
        });
    }
    Ok(())
}

fn mean_kernel(k: &KernelSpec, a: &Samples, b: &Samples) -> f64 {
    let mut s = 0.0;
    for ra in a.rows() {
        for rb in b.rows() {
            s += k.eval_unchecked(ra, rb);
        }
    }
    s / (a.len() as f64 * b.len() as f64)
}

/// Biased (V-statistic) MMD²:
/// `mean k(x, x') + mean k(y, y') − 2 mean k(x, y)`.
pub fn mmd2_biased(k: &KernelSpec, x: &Samples, y: &Samples) -> Result<f64> {
    k.validate()?;
    check_pair(x, y)?;
    if k.is_delta() {
        for r in x.rows().chain(y.rows()) {
            label_code(r)?;
        }
    }
    Ok(mean_kernel(k, x, x) + mean_kernel(k, y, y) - 2.0 * mean_kernel(k, x, y))
}

/// MMD² written as `(Tr(L_d·1) + Tr(L_s·1) − 2 Tr(L_ds·1)) / N²` with `1`
/// the all-ones matrix. Requires equal sample counts.
pub fn mmd2_as_trace(k: &KernelSpec, x: &Samples, y: &Samples) -> Result<f64> {
    check_pair(x, y)?;
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "trace form needs equal sizes, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    let ones = DMatrix::<f64>::from_element(n, n, 1.0);
    let l_d = gram(k, x, x)?;
    let l_s = gram(k, y, y)?;
    let l_ds = gram(k, x, y)?;
    let tr = |l: &DMatrix<f64>| (l * &ones).trace();
    let nn = (n * n) as f64;
    Ok(tr(l_d.entries()) / nn + tr(l_s.entries()) / nn - 2.0 * tr(l_ds.entries()) / nn)
}

/// Result of an MMD² permutation test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PermutationTest {
    pub statistic: f64,
    pub p_value: f64,
    /// 95th percentile of the permutation null.
    pub null_q95: f64,
    pub resamples: usize,
}

/// Permutation test for MMD²: reshuffles the pooled samples `resamples`
/// times and reports `(1 + #{null ≥ observed}) / (1 + resamples)`.
pub fn mmd_permutation_test(
    k: &KernelSpec,
    x: &Samples,
    y: &Samples,
    resamples: usize,
    rng: &mut impl Rng,
) -> Result<PermutationTest> {
    let statistic = mmd2_biased(k, x, y)?;
    let n = x.len();
    let m = y.len();
    let mut pooled = x.clone();
    for r in y.rows() {
        pooled.push(r)?;
    }
    let g = gram(k, &pooled, &pooled)?.into_entries();
    let stat = |idx: &[usize]| {
        let (a, b) = idx.split_at(n);
        let block = |p: &[usize], q: &[usize]| {
            let mut s = 0.0;
            for &i in p {
                for &j in q {
                    s += g[(i, j)];
                }
            }
            s / (p.len() * q.len()) as f64
        };
        block(a, a) + block(b, b) - 2.0 * block(a, b)
    };
    let mut idx: Vec<usize> = (0..n + m).collect();
    let mut null = Vec::with_capacity(resamples);
    for _ in 0..resamples {
        idx.shuffle(rng);
        null.push(stat(&idx));
    }
    let exceed = null.iter().filter(|&&v| v >= statistic).count();
    null.sort_by(f64::total_cmp);
    let null_q95 = if null.is_empty() {
        f64::NAN
    } else {
        null[((0.95 * null.len() as f64).ceil() as usize).clamp(1, null.len()) - 1]
    };
    Ok(PermutationTest {
        statistic,
        p_value: (1 + exceed) as f64 / (1 + resamples) as f64,
        null_q95,
        resamples,
    })
}

/// How the input-side inverse of a conditional operator is estimated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regularization {
    /// `(K + λI)⁻¹`.
    Ridge(f64),
    /// Diagonal class-probability inverse; needs a delta input kernel.
    FiniteDomain,
}

impl Regularization {
    /// Finite-domain estimation for delta input kernels, ridge otherwise.
    pub fn for_kernel(k_x: &KernelSpec, lambda: f64) -> Self {
        if k_x.is_delta() {
            Regularization::FiniteDomain
        } else {
            Regularization::Ridge(lambda)
        }
    }
}

/// Per-class statistics of a finite-domain operator.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassEntry {
    /// Empirical `P(x = c)`.
    pub probability: f64,
    /// Anchor indices carrying label `c`.
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone)]
enum InputWeighting {
    Ridge(RegularizedInverse),
    Finite {
        diag: Vec<f64>,
        classes: BTreeMap<u32, ClassEntry>,
    },
}

impl InputWeighting {
    fn fit(k_x: &KernelSpec, x: &Samples, reg: Regularization) -> Result<(Self, DMatrix<f64>)> {
        let k = gram(k_x, x, x)?;
        let w = match reg {
            Regularization::Ridge(lambda) => InputWeighting::Ridge(reg_inverse(&k, lambda)?),
            Regularization::FiniteDomain => {
                if !k_x.is_delta() {
                    return Err(Error::invalid(
                        "finite-domain estimation needs a delta input kernel",
                    ));
                }
                let n = x.len();
                let mut classes: BTreeMap<u32, ClassEntry> = BTreeMap::new();
                let mut codes = Vec::with_capacity(n);
                for (i, r) in x.rows().enumerate() {
                    let c = label_code(r)?;
                    codes.push(c);
                    classes
                        .entry(c)
                        .or_insert_with(|| ClassEntry {
                            probability: 0.0,
                            indices: Vec::new(),
                        })
                        .indices
                        .push(i);
                }
                for e in classes.values_mut() {
                    e.probability = e.indices.len() as f64 / n as f64;
                }
                // A = (1/N) diag(1 / P(x_i)) = diag(1 / n_{x_i})
                let diag = codes
                    .iter()
                    .map(|c| 1.0 / classes[c].indices.len() as f64)
                    .collect();
                InputWeighting::Finite { diag, classes }
            }
        };
        Ok((w, k.into_entries()))
    }

    /// `A · m`.
    fn apply(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            InputWeighting::Ridge(inv) => inv.solve(m),
            InputWeighting::Finite { diag, .. } => {
                if m.nrows() != diag.len() {
                    return Err(Error::DimensionMismatch {
                        expected: diag.len(),
                        got: m.nrows(),
                    });
                }
                let mut out = m.clone();
                for (i, d) in diag.iter().enumerate() {
                    out.row_mut(i).scale_mut(*d);
                }
                Ok(out)
            }
        }
    }
}

/// Empirical conditional embedding operator `Ĉ_{Y|X}`.
#[derive(Debug, Clone)]
pub struct ConditionalOperator {
    x_anchors: Samples,
    y_anchors: Samples,
    k_x: KernelSpec,
    k_y: KernelSpec,
    lambda: Option<f64>,
    weighting: InputWeighting,
}

/// Fits `Ĉ_{Y|X}` from paired data. A delta `k_x` switches to finite-domain
/// estimation and `lambda` is ignored.
pub fn fit_conditional(
    k_x: &KernelSpec,
    k_y: &KernelSpec,
    data: &PairedDataset,
    lambda: f64,
) -> Result<ConditionalOperator> {
    ConditionalOperator::fit(k_x, k_y, data, Regularization::for_kernel(k_x, lambda))
}

impl ConditionalOperator {
    pub fn fit(
        k_x: &KernelSpec,
        k_y: &KernelSpec,
        data: &PairedDataset,
        reg: Regularization,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyInput("conditional operator data"));
        }
        let x = data.x_for_kernel(k_x)?.into_owned();
        let y = data.y_for_kernel(k_y)?.into_owned();
        let (weighting, _) = InputWeighting::fit(k_x, &x, reg)?;
        let lambda = match reg {
            Regularization::Ridge(l) => Some(l),
            Regularization::FiniteDomain => None,
        };
        Ok(Self {
            x_anchors: x,
            y_anchors: y,
            k_x: *k_x,
            k_y: *k_y,
            lambda,
            weighting,
        })
    }

    pub fn finite_mode(&self) -> bool {
        matches!(self.weighting, InputWeighting::Finite { .. })
    }

    /// Ridge used for the fit; `None` in finite mode.
    pub fn lambda(&self) -> Option<f64> {
        self.lambda
    }

    pub fn x_anchors(&self) -> &Samples {
        &self.x_anchors
    }

    pub fn y_anchors(&self) -> &Samples {
        &self.y_anchors
    }

    pub fn k_x(&self) -> KernelSpec {
        self.k_x
    }

    pub fn k_y(&self) -> KernelSpec {
        self.k_y
    }

    /// The Cholesky-backed inverse (ridge mode only).
    pub fn inverse(&self) -> Option<&RegularizedInverse> {
        match &self.weighting {
            InputWeighting::Ridge(r) => Some(r),
            InputWeighting::Finite { .. } => None,
        }
    }

    /// Class probability table (finite mode only).
    pub fn class_table(&self) -> Option<&BTreeMap<u32, ClassEntry>> {
        match &self.weighting {
            InputWeighting::Finite { classes, .. } => Some(classes),
            InputWeighting::Ridge(_) => None,
        }
    }

    /// Weights `β` with `μ_{Y|x} = Σ βᵢ φ(yᵢ)`. `x` is given in the input
    /// kernel's form (a label code or one-hot vector for delta kernels).
    pub fn weights(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.x_anchors.dim() && !(self.finite_mode() && label_code(x).is_ok()) {
            return Err(Error::DimensionMismatch {
                expected: self.x_anchors.dim(),
                got: x.len(),
            });
        }
        match &self.weighting {
            InputWeighting::Ridge(inv) => {
                self.k_x.check_sample(x)?;
                let kx: Vec<f64> = self
                    .x_anchors
                    .rows()
                    .map(|a| self.k_x.eval_unchecked(a, x))
                    .collect();
                inv.solve_vec(&kx)
            }
            InputWeighting::Finite { classes, .. } => {
                let c = label_code(x)?;
                let entry = classes.get(&c).ok_or(Error::UnseenLabel(c))?;
                let mut w = vec![0.0; self.x_anchors.len()];
                let v = 1.0 / entry.indices.len() as f64;
                for &i in &entry.indices {
                    w[i] = v;
                }
                Ok(w)
            }
        }
    }

    /// `μ_{Y|x}` as a weighted embedding over the output anchors.
    pub fn embedding_at(&self, x: &[f64]) -> Result<MeanEmbedding> {
        let w = self.weights(x)?;
        MeanEmbedding::weighted(self.k_y, self.y_anchors.clone(), w)
    }
}

pub fn conditional_weights(op: &ConditionalOperator, x: &[f64]) -> Result<Vec<f64>> {
    op.weights(x)
}

/// `E[g(Y) | x] ≈ Σ βᵢ g(yᵢ)` given `g_values[i] = g(y_anchors[i])`.
pub fn conditional_expectation(
    op: &ConditionalOperator,
    x: &[f64],
    g_values: &[f64],
) -> Result<f64> {
    if g_values.len() != op.y_anchors.len() {
        return Err(Error::DimensionMismatch {
            expected: op.y_anchors.len(),
            got: g_values.len(),
        });
    }
    let w = op.weights(x)?;
    Ok(w.iter().zip(g_values).map(|(a, b)| a * b).sum())
}

/// CMMD² with its three trace terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmmdEstimate {
    /// `max(raw, 0)`.
    pub value: f64,
    pub raw: f64,
    /// `[Tr(K_d A_d L_d A_d), Tr(K_s A_s L_s A_s), Tr(K_sd A_d L_ds A_s)]`;
    /// `raw = t0 + t1 − 2·t2`.
    pub terms: [f64; 3],
}

impl CmmdEstimate {
    fn from_terms(terms: [f64; 3]) -> Self {
        let raw = terms[0] + terms[1] - 2.0 * terms[2];
        Self {
            value: raw.max(0.0),
            raw,
            terms,
        }
    }

    /// Sum of absolute trace terms; the natural rounding scale of `raw`.
    pub fn scale(&self) -> f64 {
        self.terms[0].abs() + self.terms[1].abs() + 2.0 * self.terms[2].abs()
    }
}

/// The input-only part of CMMD²: `B_d = A_d K_d A_d`, `B_s = A_s K_s A_s`
/// and `C = A_s K_sd A_d`. These do not depend on the responses and can be
/// reused across gradient steps on one minibatch.
#[derive(Debug, Clone)]
pub struct CmmdPlan {
    b_d: DMatrix<f64>,
    b_s: DMatrix<f64>,
    c: DMatrix<f64>,
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

impl CmmdPlan {
    /// `x_d`, `x_s` are the conditioning inputs in `k_x`'s form.
    pub fn new(
        k_x: &KernelSpec,
        x_d: &Samples,
        x_s: &Samples,
        reg: Regularization,
    ) -> Result<Self> {
        if x_d.dim() != x_s.dim() {
            return Err(Error::DimensionMismatch {
                expected: x_d.dim(),
                got: x_s.dim(),
            });
        }
        let (a_d, k_d) = InputWeighting::fit(k_x, x_d, reg)?;
        let mut b_d = a_d.apply(&a_d.apply(&k_d)?.transpose())?;
        symmetrize(&mut b_d);
        let shared = x_d == x_s;
        let (a_s, b_s) = if shared {
            (a_d.clone(), b_d.clone())
        } else {
            let (a_s, k_s) = InputWeighting::fit(k_x, x_s, reg)?;
            let mut b_s = a_s.apply(&a_s.apply(&k_s)?.transpose())?;
            symmetrize(&mut b_s);
            (a_s, b_s)
        };
        let k_sd = gram(k_x, x_s, x_d)?.into_entries();
        let c = a_d.apply(&a_s.apply(&k_sd)?.transpose())?.transpose();
        Ok(Self { b_d, b_s, c })
    }

    pub fn n_d(&self) -> usize {
        self.b_d.nrows()
    }

    pub fn n_s(&self) -> usize {
        self.b_s.nrows()
    }

    /// `A_s K_s A_s` (M×M).
    pub fn b_s(&self) -> &DMatrix<f64> {
        &self.b_s
    }

    /// `A_d K_d A_d` (N×N).
    pub fn b_d(&self) -> &DMatrix<f64> {
        &self.b_d
    }

    /// `A_s K_sd A_d` (M×N).
    pub fn cross(&self) -> &DMatrix<f64> {
        &self.c
    }

    fn check_y(&self, y_d: &Samples, y_s: &Samples) -> Result<()> {
        if y_d.len() != self.n_d() {
            return Err(Error::DimensionMismatch {
                expected: self.n_d(),
                got: y_d.len(),
            });
        }
        if y_s.len() != self.n_s() {
            return Err(Error::DimensionMismatch {
                expected: self.n_s(),
                got: y_s.len(),
            });
        }
        if y_d.dim() != y_s.dim() {
            return Err(Error::DimensionMismatch {
                expected: y_d.dim(),
                got: y_s.dim(),
            });
        }
        Ok(())
    }

    /// CMMD² for responses `y_d`, `y_s` in `k_y`'s form.
    pub fn estimate(&self, k_y: &KernelSpec, y_d: &Samples, y_s: &Samples) -> Result<CmmdEstimate> {
        self.check_y(y_d, y_s)?;
        let l_d = gram(k_y, y_d, y_d)?.into_entries();
        let l_s = gram(k_y, y_s, y_s)?.into_entries();
        let l_ds = gram(k_y, y_d, y_s)?.into_entries();
        // Tr(B L) with B, L symmetric is the elementwise sum of B ∘ L.
        let t0 = self.b_d.component_mul(&l_d).sum();
        let t1 = self.b_s.component_mul(&l_s).sum();
        // Tr(C L_ds) = Σ_ij C_ij (L_ds)_ji
        let t2 = self.c.component_mul(&l_ds.transpose()).sum();
        Ok(CmmdEstimate::from_terms([t0, t1, t2]))
    }

    /// `∂CMMD²/∂y_sᵢ` for every generated response:
    /// `2 Σ_b (B_s)_ib ∂k(y_sᵢ, y_sb) − 2 Σ_j C_ij ∂k(y_sᵢ, y_dj)`,
    /// derivatives taken in the first argument.
    pub fn grad_wrt_s(&self, k_y: &KernelSpec, y_d: &Samples, y_s: &Samples) -> Result<Samples> {
        if !k_y.is_differentiable() {
            return Err(Error::invalid("output kernel is not differentiable"));
        }
        k_y.validate()?;
        self.check_y(y_d, y_s)?;
        let dim = y_s.dim();
        let mut grad = Samples::new(dim, vec![0.0; y_s.len() * dim])?;
        for i in 0..y_s.len() {
            let yi = y_s.row(i);
            let g = grad.row_mut(i);
            for b in 0..y_s.len() {
                let w = self.b_s[(i, b)];
                if w != 0.0 {
                    k_y.add_grad_first(yi, y_s.row(b), 2.0 * w, g);
                }
            }
            for j in 0..y_d.len() {
                let w = self.c[(i, j)];
                if w != 0.0 {
                    k_y.add_grad_first(yi, y_d.row(j), -2.0 * w, g);
                }
            }
        }
        Ok(grad)
    }
}

pub(crate) fn check_compatible(d: &PairedDataset, s: &PairedDataset) -> Result<()> {
    if d.is_empty() || s.is_empty() {
        return Err(Error::EmptyInput("cmmd dataset"));
    }
    if d.x_kind() != s.x_kind() || d.y_kind() != s.y_kind() {
        return Err(Error::invalid("datasets have different domain kinds"));
    }
    Ok(())
}

/// CMMD² between two paired datasets with explicit regularization.
pub fn cmmd2_with(
    k_x: &KernelSpec,
    k_y: &KernelSpec,
    d: &PairedDataset,
    s: &PairedDataset,
    reg: Regularization,
) -> Result<CmmdEstimate> {
    check_compatible(d, s)?;
    let plan = CmmdPlan::new(k_x, &*d.x_for_kernel(k_x)?, &*s.x_for_kernel(k_x)?, reg)?;
    plan.estimate(k_y, &*d.y_for_kernel(k_y)?, &*s.y_for_kernel(k_y)?)
}

/// CMMD² between two paired datasets. A delta `k_x` selects finite-domain
/// estimation (`lambda` unused); otherwise `(K + λI)⁻¹` is used.
pub fn cmmd2(
    k_x: &KernelSpec,
    k_y: &KernelSpec,
    d: &PairedDataset,
    s: &PairedDataset,
    lambda: f64,
) -> Result<CmmdEstimate> {
    cmmd2_with(k_x, k_y, d, s, Regularization::for_kernel(k_x, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{gen_conditional_gaussian, Domain};
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn labelled(labels: &[f64], ys: &[f64]) -> PairedDataset {
        PairedDataset::new(
            Samples::from_scalars(labels),
            Samples::from_scalars(ys),
            Domain::Finite { num_classes: 4 },
            Domain::Continuous { dim: 1 },
            "test",
        )
        .unwrap()
    }

    #[test]
    fn mmd_examples() {
        let x = Samples::from_scalars(&[0.0, 2.0]);
        let y = Samples::from_scalars(&[1.0, 3.0]);
        assert!((mmd2_biased(&KernelSpec::Linear, &x, &y).unwrap() - 1.0).abs() < 1e-12);
        assert!((mmd2_as_trace(&KernelSpec::Linear, &x, &y).unwrap() - 1.0).abs() < 1e-12);
        let k = KernelSpec::rbf(1.0).unwrap();
        assert_eq!(mmd2_biased(&k, &x, &x).unwrap(), 0.0);
        assert!(mmd2_as_trace(&k, &x, &x).unwrap().abs() < 1e-12);
        assert!(mmd2_as_trace(&k, &x, &Samples::from_scalars(&[1.0])).is_err());
        assert!(matches!(
            mmd2_biased(&k, &x, &Samples::new(2, vec![0.0, 0.0]).unwrap()),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn mean_embedding_distance_is_mmd() {
        let k = KernelSpec::rbf(0.7).unwrap();
        let x = Samples::from_scalars(&[0.0, 0.4, 1.1]);
        let y = Samples::from_scalars(&[0.3, -0.5]);
        let mx = MeanEmbedding::empirical(k, x.clone()).unwrap();
        let my = MeanEmbedding::empirical(k, y.clone()).unwrap();
        let d2 = mx.inner(&mx).unwrap() + my.inner(&my).unwrap() - 2.0 * mx.inner(&my).unwrap();
        assert!((d2 - mmd2_biased(&k, &x, &y).unwrap()).abs() < 1e-14);
        let direct: f64 = x.rows().map(|r| k.eval_unchecked(r, &[0.2])).sum::<f64>() / 3.0;
        assert!((mx.evaluate(&[0.2]).unwrap() - direct).abs() < 1e-15);
    }

    #[test]
    fn permutation_null_for_identical_distributions() {
        let a = gen_conditional_gaussian(500, 0.0, 1.0, 100).unwrap();
        let b = gen_conditional_gaussian(500, 0.0, 1.0, 200).unwrap();
        let k = KernelSpec::rbf(1.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let t = mmd_permutation_test(&k, a.y(), b.y(), 200, &mut rng).unwrap();
        assert!(t.statistic < t.null_q95, "{t:?}");
        let shifted =
            Samples::from_scalars(&b.y().as_slice().iter().map(|v| v + 1.0).collect::<Vec<_>>());
        let t = mmd_permutation_test(&k, a.y(), &shifted, 200, &mut rng).unwrap();
        assert!(t.p_value < 0.01, "{t:?}");
    }

    #[test]
    fn finite_mode_weights_and_expectations() {
        let d = labelled(&[0.0, 0.0, 1.0], &[2.0, 4.0, 9.0]);
        let k_y = KernelSpec::rbf(1.0).unwrap();
        let op = fit_conditional(&KernelSpec::Delta, &k_y, &d, 0.3).unwrap();
        assert!(op.finite_mode());
        assert_eq!(op.lambda(), None);
        assert_eq!(op.weights(&[0.0]).unwrap(), vec![0.5, 0.5, 0.0]);
        assert_eq!(op.weights(&[1.0]).unwrap(), vec![0.0, 0.0, 1.0]);
        assert_eq!(op.weights(&[0.0, 1.0]).unwrap(), vec![0.0, 0.0, 1.0]);
        assert_eq!(
            conditional_expectation(&op, &[0.0], &[2.0, 4.0, 9.0]).unwrap(),
            3.0
        );
        assert_eq!(
            conditional_expectation(&op, &[1.0], &[1.0, 1.0, 1.0]).unwrap(),
            1.0
        );
        assert!(matches!(op.weights(&[2.0]), Err(Error::UnseenLabel(2))));
        assert!(conditional_expectation(&op, &[0.0], &[1.0]).is_err());
        let table = op.class_table().unwrap();
        assert!((table[&0].probability - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn continuous_single_anchor() {
        let d = PairedDataset::continuous(
            Samples::from_scalars(&[0.7]),
            Samples::from_scalars(&[1.0]),
            "one",
        )
        .unwrap();
        let k = KernelSpec::rbf(1.0).unwrap();
        let op = fit_conditional(&k, &k, &d, 0.0).unwrap();
        assert!(!op.finite_mode());
        assert_eq!(op.weights(&[0.7]).unwrap(), vec![1.0]);
        let op = fit_conditional(&k, &k, &d, 0.25).unwrap();
        assert_eq!(op.inverse().unwrap().factor()[(0, 0)], 1.25f64.sqrt());
        assert!((op.weights(&[0.7]).unwrap()[0] - 0.8).abs() <= 1e-15);
    }

    #[test]
    fn finite_flag_follows_kernel() {
        let d = labelled(&[0.0, 1.0, 1.0], &[0.0, 1.0, 2.0]);
        let k = KernelSpec::Linear;
        for (kx, finite) in [(KernelSpec::Delta, true), (KernelSpec::Linear, false)] {
            let op = fit_conditional(&kx, &k, &d, 0.1).unwrap();
            assert_eq!(op.finite_mode(), finite);
        }
    }

    #[test]
    fn conditional_mean_of_linear_gaussian() {
        let d = gen_conditional_gaussian(400, 2.0, 0.5, 42).unwrap();
        let k_x = KernelSpec::rbf(0.1).unwrap();
        let op = fit_conditional(&k_x, &KernelSpec::Linear, &d, 1e-3).unwrap();
        let g: Vec<f64> = d.y().as_slice().to_vec();
        let est = conditional_expectation(&op, &[0.5], &g).unwrap();
        assert!((est - 1.0).abs() < 0.15, "estimate {est}");
    }

    #[test]
    fn cmmd_zero_when_equal() {
        let d = gen_conditional_gaussian(30, 1.0, 0.3, 5).unwrap();
        let k = KernelSpec::rbf(0.5).unwrap();
        let e = cmmd2(&k, &k, &d, &d, 0.1).unwrap();
        assert!(e.value <= 1e-10 && e.raw.abs() <= 1e-10, "{e:?}");
    }

    #[test]
    fn cmmd_one_by_one_hand_expansion() {
        let k_y = KernelSpec::rbf(1.5).unwrap();
        let d = labelled(&[2.0], &[0.3]);
        let s = labelled(&[2.0], &[1.4]);
        let lambda: f64 = 0.4;
        let expect = (k_y.eval_unchecked(&[0.3], &[0.3]) + k_y.eval_unchecked(&[1.4], &[1.4])
            - 2.0 * k_y.eval_unchecked(&[0.3], &[1.4]))
            / (1.0 + lambda).powi(2);
        let e = cmmd2_with(
            &KernelSpec::Delta,
            &k_y,
            &d,
            &s,
            Regularization::Ridge(lambda),
        )
        .unwrap();
        assert!((e.value - expect).abs() < 1e-15);
        // the finite-domain estimator has no ridge: same expansion at λ = 0
        let f = cmmd2(&KernelSpec::Delta, &k_y, &d, &s, lambda).unwrap();
        assert!((f.value - expect * (1.0 + lambda).powi(2)).abs() < 1e-15);
    }

    #[test]
    fn cmmd_rejects_mixed_domains() {
        let a = labelled(&[0.0, 1.0], &[0.0, 1.0]);
        let b = PairedDataset::continuous(
            Samples::from_scalars(&[0.0, 1.0]),
            Samples::from_scalars(&[0.0, 1.0]),
            "c",
        )
        .unwrap();
        assert!(cmmd2(&KernelSpec::Linear, &KernelSpec::Linear, &a, &b, 0.1).is_err());
    }

    #[test]
    fn grad_rejects_delta_output_kernel() {
        let x = Samples::from_scalars(&[0.0, 1.0]);
        let plan = CmmdPlan::new(&KernelSpec::Linear, &x, &x, Regularization::Ridge(0.1)).unwrap();
        assert!(plan.grad_wrt_s(&KernelSpec::Delta, &x, &x).is_err());
    }

    fn dataset_strategy() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
        (2usize..7).prop_flat_map(|n| {
            (
                proptest::collection::vec(-2.0f64..2.0, n),
                proptest::collection::vec(-2.0f64..2.0, n),
            )
        })
    }

    proptest! {
        #[test]
        fn mmd_is_symmetric_and_matches_trace((a, b) in dataset_strategy(), bw in 0.2f64..4.0) {
            let k = KernelSpec::Rbf { bandwidth_sq: bw };
            let x = Samples::from_scalars(&a);
            let y = Samples::from_scalars(&b);
            let m1 = mmd2_biased(&k, &x, &y).unwrap();
            let m2 = mmd2_biased(&k, &y, &x).unwrap();
            prop_assert!((m1 - m2).abs() <= 1e-12);
            prop_assert!((m1 - mmd2_as_trace(&k, &x, &y).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn cmmd_nonnegative_and_permutation_invariant(
            (xd, yd) in dataset_strategy(),
            (xs, ys) in dataset_strategy(),
            seed in 0u64..1000,
        ) {
            let k = KernelSpec::Rbf { bandwidth_sq: 1.0 };
            let d = PairedDataset::continuous(Samples::from_scalars(&xd), Samples::from_scalars(&yd), "d").unwrap();
            let s = PairedDataset::continuous(Samples::from_scalars(&xs), Samples::from_scalars(&ys), "s").unwrap();
            let e = cmmd2(&k, &k, &d, &s, 0.1).unwrap();
            prop_assert!(e.raw >= -1e-8 * e.scale());
            let mut perm: Vec<usize> = (0..s.len()).collect();
            perm.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let e2 = cmmd2(&k, &k, &d, &s.select(&perm), 0.1).unwrap();
            prop_assert!((e.raw - e2.raw).abs() <= 1e-9 * e.scale().max(1.0));
        }
    }
}
