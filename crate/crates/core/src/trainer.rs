//! Minibatch training of a generator on the CMMD² objective.
//!
//! Each step draws a minibatch `B` of data pairs, generates one response per
//! conditioning input of `B` to form `B'`, and differentiates CMMD²(B, B')
//! with respect to the generated responses. That per-sample gradient is
//! chained through the generator by backpropagation and fed to Adam.
//!
//! The input-side factors (`(K + λI)⁻¹` or the class-probability inverse)
//! depend only on the conditioning inputs, so they are computed once per
//! minibatch in a [`CmmdPlan`].

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::embeddings::check_compatible;
use crate::kernels::{default_lambda, median_bandwidth};
use crate::net::ForwardTrace;
use crate::{
    gram, rng_from_seed, CmmdPlan, Error, GeneratorNet, KernelSpec, NetGradients, PairedDataset,
    Regularization, Result, Samples,
};

/// A kernel, or the median heuristic resolved on the first minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum KernelChoice {
    /// RBF with σ² = median pairwise squared distance of the first batch
    /// (delta for finite-label inputs).
    #[default]
    AutoMedian,
    Fixed(KernelSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Ridge for continuous inputs; `None` uses [`default_lambda`] on the
    /// first minibatch. Ignored for delta input kernels.
    pub lambda: Option<f64>,
    pub adam: AdamConfig,
    pub seed: u64,
    pub k_x: KernelChoice,
    pub k_y: KernelChoice,
    /// Standard deviation of Gaussian noise added to the conditioning inputs
    /// of generated samples (continuous inputs only).
    pub x_perturb: f64,
    /// L2 penalty coefficient added to the gradient.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 100,
            epochs: 100,
            lambda: None,
            adam: AdamConfig::default(),
            seed: 0,
            k_x: KernelChoice::AutoMedian,
            k_y: KernelChoice::AutoMedian,
            x_perturb: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::invalid("batch_size must be at least 2"));
        }
        let a = &self.adam;
        if !(a.lr > 0.0) {
            return Err(Error::invalid("adam lr must be positive"));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) {
            return Err(Error::invalid("adam betas must lie in [0, 1)"));
        }
        if !(a.eps > 0.0) {
            return Err(Error::invalid("adam eps must be positive"));
        }
        if let Some(l) = self.lambda {
            if !(l >= 0.0) {
                return Err(Error::invalid("lambda must be nonnegative"));
            }
        }
        if !(self.x_perturb >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid(
                "x_perturb and weight_decay must be nonnegative",
            ));
        }
        for k in [self.k_x, self.k_y] {
            if let KernelChoice::Fixed(k) = k {
                k.validate()?;
            }
        }
        Ok(())
    }
}

/// First and second moment accumulators mirroring the parameter shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(net: &GeneratorNet) -> Self {
        let zeros: Vec<Vec<f64>> = net.param_slices().map(|s| vec![0.0; s.len()]).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of `net` in place.
pub fn adam_step(
    state: &mut AdamState,
    net: &mut GeneratorNet,
    grads: &NetGradients,
    cfg: &AdamConfig,
) -> Result<()> {
    let n_tensors = state.m.len();
    if grads.weights.len() * 2 != n_tensors {
        return Err(Error::DimensionMismatch {
            expected: n_tensors,
            got: grads.weights.len() * 2,
        });
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (((p, g), m), v) in net
        .param_slices_mut()
        .zip(grads.slices())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        if p.len() != g.len() || m.len() != p.len() {
            return Err(Error::DimensionMismatch {
                expected: p.len(),
                got: g.len(),
            });
        }
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Outcome of [`train`].
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub net: GeneratorNet,
    pub adam: AdamState,
    /// Mean minibatch CMMD² per completed epoch.
    pub history: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    /// Kernels and ridge actually used (resolved on the first minibatch).
    pub k_x: Option<KernelSpec>,
    pub k_y: Option<KernelSpec>,
    pub lambda: Option<f64>,
}

/// `∂CMMD²(D_d, D_s)/∂y_sᵢ` for every sample of `batch_s`.
pub fn cmmd_grad_wrt_samples(
    k_x: &KernelSpec,
    k_y: &KernelSpec,
    batch_d: &PairedDataset,
    batch_s: &PairedDataset,
    lambda: f64,
) -> Result<Samples> {
    check_compatible(batch_d, batch_s)?;
    if !k_y.is_differentiable() {
        return Err(Error::invalid("output kernel is not differentiable"));
    }
    let plan = CmmdPlan::new(
        k_x,
        &*batch_d.x_for_kernel(k_x)?,
        &*batch_s.x_for_kernel(k_x)?,
        Regularization::for_kernel(k_x, lambda),
    )?;
    plan.grad_wrt_s(
        k_y,
        &*batch_d.y_for_kernel(k_y)?,
        &*batch_s.y_for_kernel(k_y)?,
    )
}

fn resolve_kernel(choice: KernelChoice, finite: bool, first_batch: &Samples) -> Result<KernelSpec> {
    match choice {
        KernelChoice::Fixed(k) => Ok(k),
        KernelChoice::AutoMedian if finite => Ok(KernelSpec::Delta),
        KernelChoice::AutoMedian => KernelSpec::rbf(median_bandwidth(first_batch)?),
    }
}

/// Generated responses for one minibatch plus what backprop needs.
struct GeneratedBatch {
    x_net: Samples,
    x_kernel: Samples,
    traces: Vec<ForwardTrace>,
    y: Samples,
}

fn generate_batch(
    net: &GeneratorNet,
    x_net: &Samples,
    x_kernel: &Samples,
    perturb: f64,
    rng: &mut impl Rng,
) -> Result<GeneratedBatch> {
    let (x_net, x_kernel) = if perturb > 0.0 {
        let mut p = x_net.clone();
        for v in p.as_mut_slice() {
            let e: f64 = StandardNormal.sample(rng);
            *v += perturb * e;
        }
        (p.clone(), p)
    } else {
        (x_net.clone(), x_kernel.clone())
    };
    let mut traces = Vec::with_capacity(x_net.len());
    let mut ys = Vec::with_capacity(x_net.len() * net.output_dim());
    for x in x_net.rows() {
        let h = net.sample_noise(rng);
        let t = net.forward_trace(x, &h)?;
        ys.extend_from_slice(t.output());
        traces.push(t);
    }
    Ok(GeneratedBatch {
        x_net,
        x_kernel,
        traces,
        y: Samples::new(net.output_dim(), ys)?,
    })
}

/// Trains `net` on `data` with minibatch CMMD² descent.
///
/// Per epoch the data are shuffled and split into `|D| / batch_size` full
/// minibatches (a trailing partial batch is dropped).
pub fn train(data: &PairedDataset, net: GeneratorNet, cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    if data.len() < cfg.batch_size {
        return Err(Error::invalid(format!(
            "dataset has {} pairs, fewer than batch_size {}",
            data.len(),
            cfg.batch_size
        )));
    }
    if net.x_dim() != data.x_kind().feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: data.x_kind().feature_dim(),
            got: net.x_dim(),
        });
    }
    if net.output_dim() != data.y_kind().feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: data.y_kind().feature_dim(),
            got: net.output_dim(),
        });
    }
    if let KernelChoice::Fixed(k) = cfg.k_y {
        if !k.is_differentiable() {
            return Err(Error::invalid("output kernel is not differentiable"));
        }
    }
    if let (KernelChoice::Fixed(k), false) = (cfg.k_x, data.x_kind().is_finite()) {
        if k.is_delta() {
            return Err(Error::invalid(
                "delta kernel applies only to finite-label data",
            ));
        }
    }

    let mut run = TrainRun {
        adam: AdamState::new(&net),
        net,
        history: Vec::with_capacity(cfg.epochs),
        epoch_seconds: Vec::with_capacity(cfg.epochs),
        k_x: None,
        k_y: None,
        lambda: None,
    };
    if cfg.epochs == 0 {
        return Ok(run);
    }

    let mut rng = rng_from_seed(cfg.seed);
    let x_net_all = data.x_features();
    let y_all = data.y_features();
    let x_finite = data.x_kind().is_finite();
    let n_batches = data.len() / cfg.batch_size;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut kernels: Option<(KernelSpec, KernelSpec, Samples, Regularization)> = None;

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for b in 0..n_batches {
            let idx = &order[b * cfg.batch_size..(b + 1) * cfg.batch_size];
            let x_net = x_net_all.select(idx);
            let y_d = y_all.select(idx);

            if kernels.is_none() {
                let k_x = resolve_kernel(cfg.k_x, x_finite, &x_net)?;
                let k_y = resolve_kernel(cfg.k_y, false, &y_d)?;
                let x_kernel_all = data.x_for_kernel(&k_x)?.into_owned();
                let reg = if k_x.is_delta() {
                    Regularization::FiniteDomain
                } else {
                    let lambda = match cfg.lambda {
                        Some(l) => l,
                        None => {
                            let xk = x_kernel_all.select(idx);
                            default_lambda(&gram(&k_x, &xk, &xk)?)
                        }
                    };
                    run.lambda = Some(lambda);
                    Regularization::Ridge(lambda)
                };
                run.k_x = Some(k_x);
                run.k_y = Some(k_y);
                kernels = Some((k_x, k_y, x_kernel_all, reg));
            }
            let (k_x, k_y, x_kernel_all, reg) = kernels.as_ref().expect("resolved above");
            let x_kernel = x_kernel_all.select(idx);

            let perturb = if x_finite { 0.0 } else { cfg.x_perturb };
            let gen = generate_batch(&run.net, &x_net, &x_kernel, perturb, &mut rng)?;
            debug_assert_eq!(gen.x_net.len(), idx.len());
            let plan = CmmdPlan::new(k_x, &x_kernel, &gen.x_kernel, *reg)?;
            let est = plan.estimate(k_y, &y_d, &gen.y)?;
            if !est.raw.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            let g_y = plan.grad_wrt_s(k_y, &y_d, &gen.y)?;

            let mut grads = NetGradients::zeros_like(&run.net);
            for (trace, g) in gen.traces.iter().zip(g_y.rows()) {
                run.net.backward_trace(trace, g, &mut grads)?;
            }
            if cfg.weight_decay > 0.0 {
                for (g, p) in grads.slices_mut().zip(run.net.param_slices()) {
                    g.iter_mut()
                        .zip(p)
                        .for_each(|(g, p)| *g += cfg.weight_decay * p);
                }
            }
            if grads.slices().any(|s| s.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFiniteLoss { epoch, batch: b });
            }
            adam_step(&mut run.adam, &mut run.net, &grads, &cfg.adam)?;
            total += est.value;
        }
        run.history.push(total / n_batches as f64);
        run.epoch_seconds.push(start.elapsed().as_secs_f64());
    }
    Ok(run)
}

/// `count` independent draws from the generator at fixed `x` (network-input
/// form, i.e. one-hot for finite labels).
pub fn generate(
    net: &GeneratorNet,
    x: &[f64],
    count: usize,
    rng: &mut impl Rng,
) -> Result<Samples> {
    let mut out = Samples::empty(net.output_dim());
    for _ in 0..count {
        let h = net.sample_noise(rng);
        out.push(&net.forward(x, &h)?)?;
    }
    Ok(out)
}

/// Outputs along `h = v · e_dim` for each `v` in `values`.
pub fn latent_traverse(
    net: &GeneratorNet,
    x: &[f64],
    dim: usize,
    values: &[f64],
) -> Result<Samples> {
    if dim >= net.h_dim() {
        return Err(Error::invalid(format!(
            "latent dimension {dim} out of range (h_dim = {})",
            net.h_dim()
        )));
    }
    if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::invalid("traversal values must lie in [0, 1]"));
    }
    let mut out = Samples::empty(net.output_dim());
    let mut h = vec![0.0; net.h_dim()];
    for &v in values {
        h[dim] = v;
        out.push(&net.forward(x, &h)?)?;
    }
    Ok(out)
}

/// Draws one output for `x` and returns the index of its largest component.
pub fn predict_class(net: &GeneratorNet, x: &[f64], rng: &mut impl Rng) -> Result<usize> {
    let h = net.sample_noise(rng);
    let y = net.forward(x, &h)?;
    Ok(y.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0))
}

/// Fraction of `data` whose finite label differs from [`predict_class`].
pub fn classification_error(
    net: &GeneratorNet,
    data: &PairedDataset,
    rng: &mut impl Rng,
) -> Result<f64> {
    if !data.y_kind().is_finite() {
        return Err(Error::invalid("classification needs finite labels in y"));
    }
    if data.is_empty() {
        return Err(Error::EmptyInput("classification data"));
    }
    let xs = data.x_features();
    let mut wrong = 0usize;
    for (x, y) in xs.rows().zip(data.y().rows()) {
        if predict_class(net, x, rng)? != y[0] as usize {
            wrong += 1;
        }
    }
    Ok(wrong as f64 / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::gen_conditional_gaussian;
    use crate::net::{init_net, Activation, InputMode, LayerSpec};

    fn small_net(h_dim: usize, seed: u64) -> GeneratorNet {
        init_net(
            &[
                LayerSpec::new(8, Activation::Relu),
                LayerSpec::new(1, Activation::Identity),
            ],
            1,
            h_dim,
            InputMode::Concat,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut net = small_net(2, 1);
        let before = net.clone();
        let mut st = AdamState::new(&net);
        let g = NetGradients::zeros_like(&net);
        adam_step(&mut st, &mut net, &g, &AdamConfig::default()).unwrap();
        assert_eq!(net, before);
        assert_eq!(st.t, 1);
    }

    #[test]
    fn adam_first_step_is_signed_lr() {
        let mut net = small_net(2, 1);
        let before = net.clone();
        let mut st = AdamState::new(&net);
        let mut g = NetGradients::zeros_like(&net);
        for (k, s) in g.slices_mut().enumerate() {
            for (i, v) in s.iter_mut().enumerate() {
                *v = if (i + k) % 2 == 0 { 0.37 } else { -2.5 };
            }
        }
        let cfg = AdamConfig::default();
        adam_step(&mut st, &mut net, &g, &cfg).unwrap();
        for ((p, q), gs) in net
            .param_slices()
            .zip(before.param_slices())
            .zip(g.slices())
        {
            for ((a, b), gv) in p.iter().zip(q).zip(gs) {
                let step = a - b;
                assert!((step + cfg.lr * gv.signum()).abs() < 1e-9, "{step}");
            }
        }
        let mut net2 = before.clone();
        let mut st2 = AdamState::new(&net2);
        adam_step(&mut st2, &mut net2, &g, &cfg).unwrap();
        assert_eq!(net2, net);
    }

    #[test]
    fn zero_epochs_leave_net_unchanged() {
        let d = gen_conditional_gaussian(20, 2.0, 0.5, 0).unwrap();
        let net = small_net(2, 3);
        let cfg = TrainConfig {
            epochs: 0,
            batch_size: 10,
            ..Default::default()
        };
        let run = train(&d, net.clone(), &cfg).unwrap();
        assert_eq!(run.net, net);
        assert!(run.history.is_empty());
    }

    #[test]
    fn training_is_deterministic() {
        let d = gen_conditional_gaussian(60, 2.0, 0.5, 0).unwrap();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 20,
            seed: 5,
            ..Default::default()
        };
        let a = train(&d, small_net(2, 3), &cfg).unwrap();
        let b = train(&d, small_net(2, 3), &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.net, b.net);
        assert_eq!(a.history.len(), 3);
        assert!(a.lambda.is_some());
    }

    #[test]
    fn train_rejects_bad_config() {
        let d = gen_conditional_gaussian(10, 2.0, 0.5, 0).unwrap();
        let cfg = TrainConfig {
            batch_size: 20,
            ..Default::default()
        };
        assert!(train(&d, small_net(2, 3), &cfg).is_err());
        let cfg = TrainConfig {
            batch_size: 1,
            ..Default::default()
        };
        assert!(train(&d, small_net(2, 3), &cfg).is_err());
        let cfg = TrainConfig {
            batch_size: 5,
            k_y: KernelChoice::Fixed(KernelSpec::Delta),
            ..Default::default()
        };
        assert!(train(&d, small_net(2, 3), &cfg).is_err());
    }

    #[test]
    fn generate_and_traverse_edge_cases() {
        let mut rng = rng_from_seed(0);
        let det = small_net(0, 4);
        let s = generate(&det, &[0.3], 5, &mut rng).unwrap();
        assert!(s.rows().all(|r| r == s.row(0)));
        assert_eq!(generate(&det, &[0.3], 0, &mut rng).unwrap().len(), 0);

        let net = small_net(3, 4);
        assert_eq!(latent_traverse(&net, &[0.3], 0, &[]).unwrap().len(), 0);
        let t = latent_traverse(&net, &[0.3], 1, &[0.6]).unwrap();
        assert_eq!(
            t.row(0),
            net.forward(&[0.3], &[0.0, 0.6, 0.0]).unwrap().as_slice()
        );
        assert!(latent_traverse(&net, &[0.3], 3, &[0.5]).is_err());
        assert!(latent_traverse(&net, &[0.3], 0, &[1.5]).is_err());
    }
}
