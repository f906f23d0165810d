//! Property tests against independent oracles: Gram positivity via Jacobi
//! eigenvalues, kernel symmetry, and CMMD plan/gradient identities.

use cgmmn::datasets::PairedDataset;
use cgmmn::trainer::cmmd_grad_wrt_samples;
use cgmmn::{gram, kernel_eval, CmmdPlan, KernelSpec, Regularization, Samples};
use nalgebra::DMatrix;
use proptest::prelude::*;

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
fn jacobi_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)].powi(2))
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if m[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * m[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[(k, p)], m[(k, q)]);
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[(p, k)], m[(q, k)]);
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[(i, i)]).collect()
}

#[test]
fn jacobi_oracle_recovers_known_spectrum() {
    let a = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 2.0, 0.0, 0.0, 0.0, -1.0]);
    let mut ev = jacobi_eigenvalues(&a);
    ev.sort_by(f64::total_cmp);
    for (got, want) in ev.iter().zip([-1.0, 1.0, 3.0]) {
        assert!((got - want).abs() < 1e-12, "{ev:?}");
    }
}

fn samples(max_n: usize, dim: usize) -> impl Strategy<Value = Samples> {
    prop::collection::vec(prop::collection::vec(-3.0..3.0f64, dim), 1..=max_n)
        .prop_map(move |rows| Samples::new(dim, rows.concat()).unwrap())
}

fn labels(max_n: usize, classes: u32) -> impl Strategy<Value = Samples> {
    prop::collection::vec(0..classes, 1..=max_n)
        .prop_map(|v| Samples::from_scalars(&v.iter().map(|&c| c as f64).collect::<Vec<_>>()))
}

fn rbf() -> impl Strategy<Value = KernelSpec> {
    (0.05..10.0f64).prop_map(|b| KernelSpec::rbf(b).unwrap())
}

proptest! {
    #[test]
    fn gram_is_psd(x in samples(8, 2), k in prop_oneof![rbf(), Just(KernelSpec::Linear)]) {
        let g = gram(&k, &x, &x).unwrap();
        let min = jacobi_eigenvalues(g.entries()).into_iter().fold(f64::INFINITY, f64::min);
        prop_assert!(min >= -1e-10, "min eigenvalue {min}");
    }

    #[test]
    fn delta_gram_is_psd(x in labels(8, 4)) {
        let g = gram(&KernelSpec::Delta, &x, &x).unwrap();
        let min = jacobi_eigenvalues(g.entries()).into_iter().fold(f64::INFINITY, f64::min);
        prop_assert!(min >= -1e-10, "min eigenvalue {min}");
    }

    #[test]
    fn kernels_are_exactly_symmetric(
        a in prop::collection::vec(-5.0..5.0f64, 3),
        b in prop::collection::vec(-5.0..5.0f64, 3),
        ca in 0..5u32,
        cb in 0..5u32,
        k in rbf(),
    ) {
        prop_assert_eq!(kernel_eval(&k, &a, &b).unwrap(), kernel_eval(&k, &b, &a).unwrap());
        prop_assert_eq!(
            kernel_eval(&KernelSpec::Linear, &a, &b).unwrap(),
            kernel_eval(&KernelSpec::Linear, &b, &a).unwrap()
        );
        let (la, lb) = ([ca as f64], [cb as f64]);
        prop_assert_eq!(
            kernel_eval(&KernelSpec::Delta, &la, &lb).unwrap(),
            kernel_eval(&KernelSpec::Delta, &lb, &la).unwrap()
        );
    }

    /// The plan depends on the inputs only; any outputs can be scored with it.
    #[test]
    fn plan_matches_fresh_estimate_for_any_outputs(
        x_d in samples(6, 1),
        x_s in samples(6, 1),
        seed in 0..1000u64,
        lambda in 0.01..1.0f64,
        k_y in rbf(),
    ) {
        use rand::Rng;
        let mut rng = cgmmn::rng_from_seed(seed);
        let kx = KernelSpec::rbf(1.0).unwrap();
        let plan = CmmdPlan::new(&kx, &x_d, &x_s, Regularization::Ridge(lambda)).unwrap();
        for _ in 0..3 {
            let mut ys = |n: usize| Samples::from_scalars(&(0..n).map(|_| rng.random_range(-2.0..2.0)).collect::<Vec<_>>());
            let (y_d, y_s) = (ys(x_d.len()), ys(x_s.len()));
            let reused = plan.estimate(&k_y, &y_d, &y_s).unwrap().raw;
            let d = PairedDataset::continuous(x_d.clone(), y_d, "d").unwrap();
            let s = PairedDataset::continuous(x_s.clone(), y_s, "s").unwrap();
            let fresh = cgmmn::embeddings::cmmd2_with(&kx, &k_y, &d, &s, Regularization::Ridge(lambda)).unwrap().raw;
            prop_assert!((reused - fresh).abs() <= 1e-12, "{reused} vs {fresh}");
        }
    }

    #[test]
    fn gradient_vanishes_at_equality(x in samples(10, 2), seed in 0..1000u64, k_y in rbf()) {
        use rand::Rng;
        let mut rng = cgmmn::rng_from_seed(seed);
        let y = Samples::new(2, (0..x.len() * 2).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
        let d = PairedDataset::continuous(x, y, "d").unwrap();
        let kx = KernelSpec::rbf(1.5).unwrap();
        let g = cmmd_grad_wrt_samples(&kx, &k_y, &d, &d.clone(), 0.1).unwrap();
        let norm = g.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(norm <= 1e-8, "gradient norm {norm}");
    }
}

/// One pair per side sharing its input, delta input kernel under a ridge:
/// CMMD² = (k(y_d,y_d) + k(y_s,y_s) − 2k(y_d,y_s)) / (1+λ)², so with an RBF
/// output kernel the gradient is −2·k(y_d,y_s)·(y_d − y_s)/σ² / (1+λ)².
#[test]
fn single_pair_delta_ridge_gradient_matches_hand_formula() {
    let x = Samples::from_scalars(&[2.0]);
    let (yd, ys, bw, lambda) = (0.3, -0.4, 0.7, 0.25);
    let plan = CmmdPlan::new(&KernelSpec::Delta, &x, &x, Regularization::Ridge(lambda)).unwrap();
    let k_y = KernelSpec::rbf(bw).unwrap();
    let (y_d, y_s) = (Samples::from_scalars(&[yd]), Samples::from_scalars(&[ys]));
    let kv: f64 = (-(yd - ys) * (yd - ys) / (2.0 * bw)).exp();
    let value = plan.estimate(&k_y, &y_d, &y_s).unwrap().raw;
    assert!((value - (2.0 - 2.0 * kv) / (1.0 + lambda).powi(2)).abs() < 1e-14);
    let g = plan.grad_wrt_s(&k_y, &y_d, &y_s).unwrap().as_slice()[0];
    let want = -2.0 * kv * (yd - ys) / bw / (1.0 + lambda).powi(2);
    assert!((g - want).abs() < 1e-14, "{g} vs {want}");
    let h = 1e-6;
    let f = |v: f64| {
        plan.estimate(&k_y, &y_d, &Samples::from_scalars(&[v]))
            .unwrap()
            .raw
    };
    assert!((g - (f(ys + h) - f(ys - h)) / (2.0 * h)).abs() < 1e-8);
}

#[test]
fn finite_mode_is_the_vanishing_ridge_limit() {
    let x = Samples::from_scalars(&[0.0, 0.0, 1.0, 2.0]);
    let y = Samples::from_scalars(&[1.0, 3.0, -1.0, 0.5]);
    let xs = Samples::from_scalars(&[0.0, 1.0, 1.0]);
    let ys = Samples::from_scalars(&[2.5, 0.0, -0.5]);
    let k_y = KernelSpec::rbf(1.0).unwrap();
    let finite = CmmdPlan::new(&KernelSpec::Delta, &x, &xs, Regularization::FiniteDomain)
        .unwrap()
        .estimate(&k_y, &y, &ys)
        .unwrap()
        .raw;
    let ridge = CmmdPlan::new(&KernelSpec::Delta, &x, &xs, Regularization::Ridge(1e-9))
        .unwrap()
        .estimate(&k_y, &y, &ys)
        .unwrap()
        .raw;
    assert!((finite - ridge).abs() < 1e-7, "{finite} vs {ridge}");
}
