//! Finite-difference checks of the analytic gradients.
//!
//! Three levels are covered: the CMMD² gradient with respect to generated
//! samples, the generator's backward pass, and the composition of the two
//! (gradient of CMMD² with respect to network weights at fixed hidden
//! samples). All use central differences.
//!
//! Relative error of a coordinate is `|a − n| / max(|a|, |n|, floor)` where
//! `floor = FLOOR_FRACTION · max_k |n_k|`, so coordinates that are tiny
//! compared with the largest component are judged on an absolute scale.
//! ReLU kinks make the loss non-differentiable; parameters whose
//! perturbation flips any ReLU unit are skipped and counted.

use serde::Serialize;

use crate::net::ForwardTrace;
use crate::{Activation, CmmdPlan, Error, GeneratorNet, KernelSpec, NetGradients, Result, Samples};

pub const FLOOR_FRACTION: f64 = 1e-3;
pub const DEFAULT_STEP: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub checked: usize,
    /// Coordinates skipped because a perturbation crossed a ReLU kink.
    pub skipped: usize,
}

/// Compares `analytic` against `numeric` coordinatewise; `None` entries of
/// `numeric` are skipped.
pub fn compare(analytic: &[f64], numeric: &[Option<f64>]) -> Result<GradCheckReport> {
    if analytic.len() != numeric.len() {
        return Err(Error::DimensionMismatch {
            expected: analytic.len(),
            got: numeric.len(),
        });
    }
    let scale = numeric.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (FLOOR_FRACTION * scale).max(f64::MIN_POSITIVE);
    let mut rep = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        checked: 0,
        skipped: 0,
    };
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let Some(n) = n else {
            rep.skipped += 1;
            continue;
        };
        rep.checked += 1;
        let e = (a - n).abs() / a.abs().max(n.abs()).max(floor);
        if e > rep.max_rel_err || !e.is_finite() {
            rep.max_rel_err = if e.is_finite() { e } else { f64::INFINITY };
            rep.worst_index = i;
        }
    }
    Ok(rep)
}

/// `∂CMMD²/∂y_s` from [`CmmdPlan::grad_wrt_s`] against central differences
/// of the raw estimate.
pub fn check_sample_grad(
    plan: &CmmdPlan,
    k_y: &KernelSpec,
    y_d: &Samples,
    y_s: &Samples,
    step: f64,
) -> Result<GradCheckReport> {
    let analytic = plan.grad_wrt_s(k_y, y_d, y_s)?;
    let mut y = y_s.clone();
    let mut numeric = Vec::with_capacity(y.as_slice().len());
    for k in 0..y.as_slice().len() {
        let orig = y.as_slice()[k];
        y.as_mut_slice()[k] = orig + step;
        let up = plan.estimate(k_y, y_d, &y)?.raw;
        y.as_mut_slice()[k] = orig - step;
        let down = plan.estimate(k_y, y_d, &y)?.raw;
        y.as_mut_slice()[k] = orig;
        numeric.push(Some((up - down) / (2.0 * step)));
    }
    compare(analytic.as_slice(), &numeric)
}

fn relu_pattern(net: &GeneratorNet, trace: &ForwardTrace, out: &mut Vec<bool>) {
    for (layer, pre) in net.layers().iter().zip(&trace.pre) {
        if layer.activation == Activation::Relu {
            out.extend(pre.iter().map(|v| *v > 0.0));
        }
    }
}

fn pattern(net: &GeneratorNet, inputs: &[(&[f64], &[f64])]) -> Result<Vec<bool>> {
    let mut p = Vec::new();
    for (x, h) in inputs {
        relu_pattern(net, &net.forward_trace(x, h)?, &mut p);
    }
    Ok(p)
}

/// Central differences of `loss(net)` over every parameter, skipping
/// parameters whose perturbation changes the ReLU pattern on `inputs`.
fn numeric_param_grad(
    net: &GeneratorNet,
    inputs: &[(&[f64], &[f64])],
    step: f64,
    loss: &dyn Fn(&GeneratorNet) -> Result<f64>,
) -> Result<Vec<Option<f64>>> {
    let base = pattern(net, inputs)?;
    let mut work = net.clone();
    let n_slices = net.param_slices().count();
    let mut numeric = Vec::with_capacity(net.num_params());
    for s in 0..n_slices {
        let len = net.param_slices().nth(s).map_or(0, <[f64]>::len);
        for k in 0..len {
            let orig = work.param_slices_mut().nth(s).expect("slice index")[k];
            work.param_slices_mut().nth(s).expect("slice index")[k] = orig + step;
            let up = loss(&work)?;
            let up_ok = pattern(&work, inputs)? == base;
            work.param_slices_mut().nth(s).expect("slice index")[k] = orig - step;
            let down = loss(&work)?;
            let down_ok = pattern(&work, inputs)? == base;
            work.param_slices_mut().nth(s).expect("slice index")[k] = orig;
            numeric.push((up_ok && down_ok).then(|| (up - down) / (2.0 * step)));
        }
    }
    Ok(numeric)
}

/// Backward pass of the scalar `Σ_i c_i · f_i(x, h)` against central differences.
pub fn check_net_backward(
    net: &GeneratorNet,
    x: &[f64],
    h: &[f64],
    out_weights: &[f64],
    step: f64,
) -> Result<GradCheckReport> {
    let analytic = net.backward(x, h, out_weights)?.flatten();
    let loss = |n: &GeneratorNet| -> Result<f64> {
        Ok(n.forward(x, h)?
            .iter()
            .zip(out_weights)
            .map(|(a, b)| a * b)
            .sum())
    };
    let numeric = numeric_param_grad(net, &[(x, h)], step, &loss)?;
    compare(&analytic, &numeric)
}

/// Analytic weight gradient of `CMMD²(D, {(x_s_i, f(x_net_i, h_i))})`,
/// chaining [`CmmdPlan::grad_wrt_s`] through the backward pass.
pub fn cmmd_weight_grad(
    net: &GeneratorNet,
    plan: &CmmdPlan,
    k_y: &KernelSpec,
    y_d: &Samples,
    x_net: &Samples,
    hidden: &[Vec<f64>],
) -> Result<(f64, NetGradients)> {
    if hidden.len() != x_net.len() {
        return Err(Error::DimensionMismatch {
            expected: x_net.len(),
            got: hidden.len(),
        });
    }
    let mut traces = Vec::with_capacity(hidden.len());
    let mut ys = Samples::empty(net.output_dim());
    for (x, h) in x_net.rows().zip(hidden) {
        let t = net.forward_trace(x, h)?;
        ys.push(t.output())?;
        traces.push(t);
    }
    let est = plan.estimate(k_y, y_d, &ys)?;
    let g = plan.grad_wrt_s(k_y, y_d, &ys)?;
    let mut grads = NetGradients::zeros_like(net);
    for (t, gi) in traces.iter().zip(g.rows()) {
        net.backward_trace(t, gi, &mut grads)?;
    }
    Ok((est.raw, grads))
}

/// End-to-end check of [`cmmd_weight_grad`] against central differences of
/// the full pipeline at fixed hidden samples.
pub fn check_end_to_end(
    net: &GeneratorNet,
    plan: &CmmdPlan,
    k_y: &KernelSpec,
    y_d: &Samples,
    x_net: &Samples,
    hidden: &[Vec<f64>],
    step: f64,
) -> Result<GradCheckReport> {
    let (_, grads) = cmmd_weight_grad(net, plan, k_y, y_d, x_net, hidden)?;
    let loss = |n: &GeneratorNet| -> Result<f64> {
        let mut ys = Samples::empty(n.output_dim());
        for (x, h) in x_net.rows().zip(hidden) {
            ys.push(&n.forward(x, h)?)?;
        }
        Ok(plan.estimate(k_y, y_d, &ys)?.raw)
    };
    let inputs: Vec<(&[f64], &[f64])> =
        x_net.rows().zip(hidden.iter().map(Vec::as_slice)).collect();
    let numeric = numeric_param_grad(net, &inputs, step, &loss)?;
    compare(&grads.flatten(), &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::init_net;
    use crate::{rng_from_seed, InputMode, LayerSpec, Regularization};
    use rand::Rng;

    fn rand_samples(n: usize, dim: usize, rng: &mut impl Rng) -> Samples {
        Samples::new(
            dim,
            (0..n * dim).map(|_| rng.random_range(-1.5..1.5)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn compare_floor_and_skip() {
        let r = compare(&[1.0, 1e-9, 5.0], &[Some(1.0), Some(0.0), None]).unwrap();
        assert_eq!((r.checked, r.skipped), (2, 1));
        assert!(r.max_rel_err < 1e-5);
        let r = compare(&[1.0, 2.0], &[Some(1.0), Some(1.0)]).unwrap();
        assert_eq!(r.worst_index, 1);
        assert!((r.max_rel_err - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sample_gradients_match_differences() {
        let mut rng = rng_from_seed(3);
        for (k_y, reg) in [
            (KernelSpec::rbf(0.7).unwrap(), Regularization::Ridge(0.3)),
            (KernelSpec::Linear, Regularization::Ridge(0.05)),
        ] {
            let x_d = rand_samples(7, 2, &mut rng);
            let x_s = rand_samples(5, 2, &mut rng);
            let plan = CmmdPlan::new(&KernelSpec::rbf(1.0).unwrap(), &x_d, &x_s, reg).unwrap();
            let y_d = rand_samples(7, 2, &mut rng);
            let y_s = rand_samples(5, 2, &mut rng);
            let r = check_sample_grad(&plan, &k_y, &y_d, &y_s, DEFAULT_STEP).unwrap();
            assert!(r.max_rel_err <= 1e-5, "{r:?}");
            assert_eq!(r.checked, 10);
        }
    }

    #[test]
    fn backward_matches_differences() {
        let net = init_net(
            &[
                LayerSpec::new(6, Activation::Sigmoid),
                LayerSpec::new(5, Activation::Relu),
                LayerSpec::new(2, Activation::Identity),
            ],
            2,
            3,
            InputMode::Concat,
            8,
        )
        .unwrap();
        let r = check_net_backward(
            &net,
            &[0.4, -0.9],
            &[0.1, 0.5, 0.8],
            &[1.3, -0.6],
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(r.max_rel_err <= 1e-6, "{r:?}");
        assert_eq!(r.checked + r.skipped, net.num_params());
    }

    #[test]
    fn end_to_end_matches_differences() {
        let mut rng = rng_from_seed(5);
        let net = init_net(
            &[
                LayerSpec::new(8, Activation::Relu),
                LayerSpec::new(1, Activation::Identity),
            ],
            1,
            2,
            InputMode::Concat,
            2,
        )
        .unwrap();
        let x = rand_samples(6, 1, &mut rng);
        let y_d = rand_samples(6, 1, &mut rng);
        let hidden: Vec<Vec<f64>> = (0..6).map(|_| net.sample_noise(&mut rng)).collect();
        let plan = CmmdPlan::new(
            &KernelSpec::rbf(0.5).unwrap(),
            &x,
            &x,
            Regularization::Ridge(0.2),
        )
        .unwrap();
        let r = check_end_to_end(
            &net,
            &plan,
            &KernelSpec::rbf(1.0).unwrap(),
            &y_d,
            &x,
            &hidden,
            DEFAULT_STEP,
        )
        .unwrap();
        assert!(r.max_rel_err <= 1e-4, "{r:?}");
        assert!(r.checked > r.skipped);
    }
}
