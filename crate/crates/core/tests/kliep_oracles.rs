mod common;

use common::*;
use mn_delta::kliep::{hessian, Kliep};
use mn_delta::model::{DeltaParams, FeatureMap};
use mn_delta::solver::{solve_group_lasso, SolverOptions};

#[test]
fn gradient_matches_central_differences() {
    let mut r = rng(11);
    for trial in 0..40 {
        // an rbf self-pair is constantly 1, so a lone (0, 0) edge has a zero gradient
        let (m, fmap) = if trial % 2 == 0 {
            (1 + trial % 5, FeatureMap::Product)
        } else {
            (2 + trial % 5, FeatureMap::rbf(0.7).unwrap())
        };
        let inst = random_instance(&mut r, m, 30, 40, fmap);
        let delta = random_delta(&mut r, &inst.edges, 0.5);
        let kliep = Kliep::new(&inst.fp, &inst.fq).unwrap();
        let g = kliep.gradient(&delta).unwrap();
        let fd = fd_gradient(|x| kliep.loss_at(x), delta.coeffs(), 1e-5);
        let e = rel_err(g.coeffs(), &fd);
        assert!(e < 1e-6, "trial {trial}: relative error {e}");
    }
}

#[test]
fn hessian_matches_differences_of_gradient() {
    let mut r = rng(12);
    for trial in 0..20 {
        let m = 1 + trial % 4;
        let inst = random_instance(&mut r, m, 25, 35, FeatureMap::Product);
        let delta = random_delta(&mut r, &inst.edges, 0.4);
        let kliep = Kliep::new(&inst.fp, &inst.fq).unwrap();
        let h = hessian(&delta, &inst.fq, 4096).unwrap();
        let d = delta.coeffs().len();
        let h_step = 1e-5;
        let mut x = delta.coeffs().to_vec();
        for c in 0..d {
            x[c] += h_step;
            let (_, up) = kliep.loss_grad_at(&x);
            x[c] -= 2.0 * h_step;
            let (_, down) = kliep.loss_grad_at(&x);
            x[c] += h_step;
            let fd: Vec<f64> = up.iter().zip(&down).map(|(a, b)| (a - b) / (2.0 * h_step)).collect();
            let col: Vec<f64> = h.column(c).iter().copied().collect();
            let e = rel_err(&col, &fd);
            assert!(e < 1e-5, "trial {trial} column {c}: {e}");
        }
    }
}

#[test]
fn unregularized_solution_matches_newton() {
    let mut r = rng(13);
    let inst = random_instance(&mut r, 2, 200, 200, FeatureMap::Product);
    let reference = newton_reference(&inst, 60);
    let opts = SolverOptions { max_iterations: 50_000, tolerance: 1e-14, ..Default::default() };
    let (delta, _) = solve_group_lasso(&inst.fp, &inst.fq, 0.0, &opts, None).unwrap();
    let gap = delta
        .coeffs()
        .iter()
        .zip(&reference)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(gap <= 1e-4, "max gap {gap}: {:?} vs {reference:?}", delta.coeffs());
}

#[test]
fn gradient_at_zero_is_mean_difference() {
    let mut r = rng(14);
    let inst = random_instance(&mut r, 3, 10, 12, FeatureMap::Product);
    let zero = DeltaParams::zeros(inst.edges.clone(), 1);
    let g = Kliep::new(&inst.fp, &inst.fq).unwrap().gradient(&zero).unwrap();
    let (mp, mq) = (inst.fp.mean_row(), inst.fq.mean_row());
    for k in 0..g.coeffs().len() {
        assert!((g.coeffs()[k] - (mq[k] - mp[k])).abs() < 1e-14);
    }
}
