//! Distilling a Bayesian teacher's predictive distribution into a generator.
//!
//! The teacher is either an exact conjugate Bayesian polynomial regression
//! or a tabular sampler over stored pairs. Its predictive distribution is
//! sampled near the training inputs, and a generator is trained on those
//! samples with the CMMD² objective. Both sides are standardized before
//! training and mapped back on prediction, so kernel bandwidths and
//! learning rates see unit-scale data.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{cholesky, cholesky_solve_in_place};
use crate::trainer::{train, TrainConfig, TrainRun};
use crate::{Domain, Error, GeneratorNet, PairedDataset, Result, Samples};

/// Default input perturbation as a fraction of the per-dimension input std.
pub const DEFAULT_PERTURB_FRACTION: f64 = 0.05;

/// Conjugate Gaussian regression on per-dimension polynomial features
/// `[1, x_j, x_j², …, x_j^degree]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesLinReg {
    pub degree: usize,
    pub x_dim: usize,
    pub prior_var: f64,
    pub noise_var: f64,
    /// Posterior mean of the feature weights.
    pub mean: Vec<f64>,
    /// Lower Cholesky factor of the posterior precision, row-major.
    precision_factor: Vec<f64>,
}

/// Resamples the stored responses whose input is nearest to the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSampler {
    pub x: Samples,
    pub y: Samples,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Teacher {
    BayesLinReg(BayesLinReg),
    Tabular(TabularSampler),
}

/// Gaussian-summary view of a teacher prediction at one input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Predictive {
    pub mean: f64,
    pub sd: f64,
}

fn features(x: &[f64], degree: usize) -> Vec<f64> {
    let mut f = Vec::with_capacity(1 + x.len() * degree);
    f.push(1.0);
    for &v in x {
        let mut p = 1.0;
        for _ in 0..degree {
            p *= v;
            f.push(p);
        }
    }
    f
}

/// Exact posterior over polynomial feature weights for scalar responses.
///
/// `prior_var` may be `+∞` (flat prior); a rank-deficient design then fails
/// the factorization.
pub fn fit_teacher_bayes_linreg(
    data: &PairedDataset,
    degree: usize,
    prior_var: f64,
    noise_var: f64,
) -> Result<Teacher> {
    if degree == 0 {
        return Err(Error::invalid("feature degree must be at least 1"));
    }
    if !(prior_var > 0.0) || !(noise_var > 0.0) || !noise_var.is_finite() {
        return Err(Error::invalid("prior and noise variances must be positive"));
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("teacher training data"));
    }
    if data.x_kind().is_finite() || data.y_kind() != (Domain::Continuous { dim: 1 }) {
        return Err(Error::invalid(
            "bayes-linreg teacher needs continuous x and scalar continuous y",
        ));
    }
    let x_dim = data.x().dim();
    let p = 1 + x_dim * degree;
    let mut precision = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DMatrix::<f64>::zeros(p, 1);
    for (x, y) in data.x().rows().zip(data.y().rows()) {
        let f = features(x, degree);
        for i in 0..p {
            rhs[(i, 0)] += f[i] * y[0] / noise_var;
            for j in 0..p {
                precision[(i, j)] += f[i] * f[j] / noise_var;
            }
        }
    }
    for i in 0..p {
        precision[(i, i)] += 1.0 / prior_var;
    }
    let factor = cholesky(&precision).map_err(|e| match e {
        Error::NotPositiveDefinite { index, value } => Error::Degenerate(format!(
            "posterior precision is singular at pivot {index} ({value:e})"
        )),
        other => other,
    })?;
    cholesky_solve_in_place(&factor, &mut rhs);
    Ok(Teacher::BayesLinReg(BayesLinReg {
        degree,
        x_dim,
        prior_var,
        noise_var,
        mean: rhs.as_slice().to_vec(),
        precision_factor: factor.transpose().as_slice().to_vec(),
    }))
}

impl BayesLinReg {
    fn factor(&self) -> DMatrix<f64> {
        let p = self.mean.len();
        DMatrix::from_row_slice(p, p, &self.precision_factor)
    }

    /// Posterior covariance `Σ` (dense; for inspection and tests).
    pub fn posterior_cov(&self) -> DMatrix<f64> {
        let p = self.mean.len();
        let mut id = DMatrix::<f64>::identity(p, p);
        cholesky_solve_in_place(&self.factor(), &mut id);
        id
    }

    pub fn predictive(&self, x: &[f64]) -> Result<Predictive> {
        if x.len() != self.x_dim {
            return Err(Error::DimensionMismatch {
                expected: self.x_dim,
                got: x.len(),
            });
        }
        let f = features(x, self.degree);
        let mean = f.iter().zip(&self.mean).map(|(a, b)| a * b).sum();
        let mut s = DMatrix::from_column_slice(f.len(), 1, &f);
        cholesky_solve_in_place(&self.factor(), &mut s);
        let quad: f64 = DVector::from_vec(f).dot(&s.column(0));
        Ok(Predictive {
            mean,
            sd: (self.noise_var + quad.max(0.0)).sqrt(),
        })
    }
}

impl TabularSampler {
    pub fn new(data: &PairedDataset) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyInput("tabular teacher data"));
        }
        if data.y().dim() != 1 {
            return Err(Error::invalid("tabular teacher needs scalar y"));
        }
        Ok(Self {
            x: data.x_features(),
            y: data.y().clone(),
        })
    }

    fn nearest(&self, x: &[f64]) -> Result<Vec<usize>> {
        if x.len() != self.x.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.x.dim(),
                got: x.len(),
            });
        }
        let d: Vec<f64> = self
            .x
            .rows()
            .map(|r| crate::samples::sq_dist(r, x))
            .collect();
        let best = d.iter().copied().fold(f64::INFINITY, f64::min);
        Ok((0..d.len()).filter(|&i| d[i] == best).collect())
    }

    pub fn predictive(&self, x: &[f64]) -> Result<Predictive> {
        let idx = self.nearest(x)?;
        let n = idx.len() as f64;
        let mean = idx.iter().map(|&i| self.y.row(i)[0]).sum::<f64>() / n;
        let var = idx
            .iter()
            .map(|&i| (self.y.row(i)[0] - mean).powi(2))
            .sum::<f64>()
            / n;
        Ok(Predictive {
            mean,
            sd: var.sqrt(),
        })
    }
}

impl Teacher {
    pub fn x_dim(&self) -> usize {
        match self {
            Teacher::BayesLinReg(t) => t.x_dim,
            Teacher::Tabular(t) => t.x.dim(),
        }
    }

    pub fn predictive(&self, x: &[f64]) -> Result<Predictive> {
        match self {
            Teacher::BayesLinReg(t) => t.predictive(x),
            Teacher::Tabular(t) => t.predictive(x),
        }
    }

    /// One draw from the predictive distribution at `x`.
    pub fn sample(&self, x: &[f64], rng: &mut impl Rng) -> Result<f64> {
        match self {
            Teacher::BayesLinReg(t) => {
                let p = t.predictive(x)?;
                let e: f64 = StandardNormal.sample(rng);
                Ok(p.mean + p.sd * e)
            }
            Teacher::Tabular(t) => {
                let idx = t.nearest(x)?;
                Ok(t.y.row(idx[rng.random_range(0..idx.len())])[0])
            }
        }
    }
}

/// Pairs drawn from a teacher near a set of inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct DistillSet {
    pub pairs: PairedDataset,
    /// Per-dimension standard deviation of the input perturbation.
    pub perturb_scale: Vec<f64>,
    /// Index into the input list each pair was drawn from.
    pub origin: Vec<usize>,
    /// `x̃ − x` for each pair.
    pub offsets: Samples,
}

/// `DEFAULT_PERTURB_FRACTION` times the per-dimension std of `x`.
pub fn default_perturb_scale(x: &Samples) -> Vec<f64> {
    if x.len() < 2 {
        return vec![0.0; x.dim()];
    }
    x.std()
        .into_iter()
        .map(|s| DEFAULT_PERTURB_FRACTION * s)
        .collect()
}

/// Draws `per_x` pairs per input: `x̃ = x + N(0, diag(perturb_scale²))`,
/// `y ~ teacher(x̃)`.
pub fn sample_teacher(
    teacher: &Teacher,
    x: &Samples,
    per_x: usize,
    perturb_scale: &[f64],
    rng: &mut impl Rng,
) -> Result<DistillSet> {
    if per_x == 0 {
        return Err(Error::invalid("per_x must be at least 1"));
    }
    if x.is_empty() {
        return Err(Error::EmptyInput("teacher inputs"));
    }
    if x.dim() != teacher.x_dim() || perturb_scale.len() != x.dim() {
        return Err(Error::DimensionMismatch {
            expected: teacher.x_dim(),
            got: if x.dim() != teacher.x_dim() {
                x.dim()
            } else {
                perturb_scale.len()
            },
        });
    }
    if perturb_scale.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
        return Err(Error::invalid(
            "perturbation scales must be finite and nonnegative",
        ));
    }
    let n = x.len() * per_x;
    let mut xs = Samples::empty(x.dim());
    let mut offsets = Samples::empty(x.dim());
    let mut ys = Vec::with_capacity(n);
    let mut origin = Vec::with_capacity(n);
    let mut off = vec![0.0; x.dim()];
    let mut xt = vec![0.0; x.dim()];
    for (i, row) in x.rows().enumerate() {
        for _ in 0..per_x {
            for j in 0..x.dim() {
                off[j] = if perturb_scale[j] > 0.0 {
                    let e: f64 = StandardNormal.sample(rng);
                    perturb_scale[j] * e
                } else {
                    0.0
                };
                xt[j] = row[j] + off[j];
            }
            ys.push(teacher.sample(&xt, rng)?);
            xs.push(&xt)?;
            offsets.push(&off)?;
            origin.push(i);
        }
    }
    Ok(DistillSet {
        pairs: PairedDataset::continuous(xs, Samples::new(1, ys)?, "teacher-samples")?,
        perturb_scale: perturb_scale.to_vec(),
        origin,
        offsets,
    })
}

/// Per-dimension affine standardization `z = (v − mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    /// Fits mean and std; zero-variance dimensions keep scale 1.
    pub fn fit(s: &Samples) -> Self {
        let mean = s.mean();
        let scale = if s.len() < 2 {
            vec![1.0; s.dim()]
        } else {
            s.std()
                .into_iter()
                .map(|v| if v > 0.0 { v } else { 1.0 })
                .collect()
        };
        Self { mean, scale }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| x * s + m)
            .collect()
    }

    pub fn apply_all(&self, s: &Samples) -> Result<Samples> {
        Samples::new(s.dim(), s.rows().flat_map(|r| self.apply(r)).collect())
    }
}

/// A trained generator together with the standardization it was trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Student {
    pub net: GeneratorNet,
    pub x_norm: Normalizer,
    pub y_norm: Normalizer,
}

impl Student {
    pub fn sample(&self, x: &[f64], count: usize, rng: &mut impl Rng) -> Result<Samples> {
        let z = self.x_norm.apply(x);
        let raw = crate::trainer::generate(&self.net, &z, count, rng)?;
        Samples::new(
            raw.dim(),
            raw.rows().flat_map(|r| self.y_norm.invert(r)).collect(),
        )
    }

    /// Empirical mean and std of `count` draws at `x` (scalar output).
    pub fn predictive(&self, x: &[f64], count: usize, rng: &mut impl Rng) -> Result<Predictive> {
        if count == 0 {
            return Err(Error::invalid("need at least one sample per input"));
        }
        let s = self.sample(x, count, rng)?;
        let mean = s.mean()[0];
        let sd = if count > 1 { s.std()[0] } else { 0.0 };
        Ok(Predictive { mean, sd })
    }
}

#[derive(Debug, Clone)]
pub struct DistillRun {
    pub student: Student,
    pub run: TrainRun,
}

/// Standardizes `ds.pairs`, trains `net` on them, and wraps the result.
pub fn distill(ds: &DistillSet, net: GeneratorNet, cfg: &TrainConfig) -> Result<DistillRun> {
    let x_norm = Normalizer::fit(ds.pairs.x());
    let y_norm = Normalizer::fit(ds.pairs.y());
    let pairs = PairedDataset::continuous(
        x_norm.apply_all(ds.pairs.x())?,
        y_norm.apply_all(ds.pairs.y())?,
        ds.pairs.provenance().to_string(),
    )?;
    let run = train(&pairs, net, cfg)?;
    Ok(DistillRun {
        student: Student {
            net: run.net.clone(),
            x_norm,
            y_norm,
        },
        run,
    })
}

/// Anything with a scalar predictive mean.
pub trait PredictiveModel {
    fn predictive_mean(
        &self,
        x: &[f64],
        samples_per_x: usize,
        rng: &mut dyn rand::RngCore,
    ) -> Result<f64>;
}

impl PredictiveModel for Teacher {
    fn predictive_mean(
        &self,
        x: &[f64],
        _samples_per_x: usize,
        _rng: &mut dyn rand::RngCore,
    ) -> Result<f64> {
        Ok(self.predictive(x)?.mean)
    }
}

impl PredictiveModel for Student {
    fn predictive_mean(
        &self,
        x: &[f64],
        samples_per_x: usize,
        mut rng: &mut dyn rand::RngCore,
    ) -> Result<f64> {
        Ok(self.predictive(x, samples_per_x, &mut rng)?.mean)
    }
}

impl PredictiveModel for GeneratorNet {
    fn predictive_mean(
        &self,
        x: &[f64],
        samples_per_x: usize,
        mut rng: &mut dyn rand::RngCore,
    ) -> Result<f64> {
        if samples_per_x == 0 {
            return Err(Error::invalid("need at least one sample per input"));
        }
        let s = crate::trainer::generate(self, x, samples_per_x, &mut rng)?;
        Ok(s.mean()[0])
    }
}

/// RMSE of the model's predictive mean against `test.y`.
pub fn evaluate_rmse(
    model: &dyn PredictiveModel,
    test: &PairedDataset,
    samples_per_x: usize,
    rng: &mut dyn rand::RngCore,
) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyInput("test set"));
    }
    if test.y().dim() != 1 {
        return Err(Error::invalid("rmse needs scalar y"));
    }
    let xs = test.x_features();
    let mut sse = 0.0;
    for (x, y) in xs.rows().zip(test.y().rows()) {
        sse += (model.predictive_mean(x, samples_per_x, rng)? - y[0]).powi(2);
    }
    Ok((sse / test.len() as f64).sqrt())
}

/// `count` evenly spaced points from `lo` to `hi` inclusive.
pub fn grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..count)
            .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
            .collect(),
    }
}
