mod common;

use common::*;
use mn_delta::kliep::Kliep;
use mn_delta::model::{eval_features, FeatureMap};
use mn_delta::solver::{
    default_grid, lambda_max, prox_blocks, reg_path, solve_group_lasso, SolutionFile, SolverOptions, Termination,
};
use mn_delta::synth::{change_pair, sample_gaussian, GraphKind};

#[test]
fn trace_is_monotone_and_fixed_point_holds() {
    let mut r = rng(21);
    let opts = SolverOptions::default();
    for trial in 0..12 {
        let inst = random_instance(&mut r, 2 + trial % 4, 80, 90, FeatureMap::Product);
        let lmax = lambda_max(&inst.fp, &inst.fq).unwrap();
        let lambda = lmax * (0.1 + 0.06 * trial as f64);
        let (delta, rep) = solve_group_lasso(&inst.fp, &inst.fq, lambda, &opts, None).unwrap();
        for w in rep.objective_trace.windows(2) {
            assert!(w[1] <= w[0], "trial {trial}: trace rose {} -> {}", w[0], w[1]);
        }
        assert_eq!(rep.termination, Termination::Converged, "trial {trial}");

        let kliep = Kliep::new(&inst.fp, &inst.fq).unwrap();
        let (_, g) = kliep.loss_grad_at(delta.coeffs());
        let mut y: Vec<f64> = delta.coeffs().iter().zip(&g).map(|(x, gi)| x - rep.step * gi).collect();
        prox_blocks(&mut y, 1, rep.step * lambda);
        let gap = y.iter().zip(delta.coeffs()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap <= 10.0 * opts.tolerance, "trial {trial}: fixed-point gap {gap}");

        // inactive blocks are exact zeros
        for k in 0..delta.edges().len() {
            let active = rep.active.contains(&k);
            assert_eq!(active, delta.block(k)[0] != 0.0);
            if !active {
                assert_eq!(delta.block(k)[0].to_bits(), 0.0f64.to_bits());
            }
        }
    }
}

#[test]
fn identical_tensors_give_zero() {
    let mut r = rng(22);
    let inst = random_instance(&mut r, 3, 40, 40, FeatureMap::Product);
    let (d, _) = solve_group_lasso(&inst.fp, &inst.fp, 0.01, &SolverOptions::default(), None).unwrap();
    assert!(d.is_zero());
}

#[test]
fn lambda_max_scaling() {
    let mut r = rng(23);
    let xp = random_dataset(&mut r, 20, 3, 1.0);
    let xq = random_dataset(&mut r, 20, 3, 1.0);
    let scale = |d: &mn_delta::model::Dataset, c: f64| {
        mn_delta::model::Dataset::new(d.n(), d.m(), d.values().iter().map(|x| x * c).collect()).unwrap()
    };
    let edges = std::sync::Arc::new(mn_delta::model::EdgeSet::full(3).unwrap());
    let lm = |a: &mn_delta::model::Dataset, b: &mn_delta::model::Dataset| {
        let fp = eval_features(a, edges.clone(), FeatureMap::Product).unwrap();
        let fq = eval_features(b, edges.clone(), FeatureMap::Product).unwrap();
        lambda_max(&fp, &fq).unwrap()
    };
    let base = lm(&xp, &xq);
    let scaled = lm(&scale(&xp, 2.0), &scale(&xq, 2.0));
    assert!((scaled - 4.0 * base).abs() <= 1e-12 * scaled);
}

#[test]
fn grid_and_path_shape() {
    let g = default_grid(2.0, 40, 0.01);
    assert_eq!(g.len(), 40);
    assert_eq!(g[0], 2.0);
    assert!((g[39] - 0.02).abs() < 1e-15);
    assert!(g.windows(2).all(|w| w[0] > w[1]));

    let mut r = rng(24);
    let inst = random_instance(&mut r, 3, 60, 60, FeatureMap::Product);
    let lmax = lambda_max(&inst.fp, &inst.fq).unwrap();
    let path = reg_path(&inst.fp, &inst.fq, &[lmax], &SolverOptions::default()).unwrap();
    assert!(path[0].delta.is_zero());
    assert!(reg_path(&inst.fp, &inst.fq, &[0.1, 0.2], &SolverOptions::default()).is_err());
}

#[test]
fn illustrative_path_is_nearly_monotone_and_alpha_shrinks_support() {
    let mut steps = 0;
    let mut monotone = 0;
    for seed in 0..3u64 {
        let pair = change_pair(GraphKind::Random { m: 50, density: 0.1 }, 6, seed).unwrap();
        let xp = sample_gaussian(&pair.p, 500, mn_delta::seed::derive_seed(seed, 100)).unwrap();
        let xq = sample_gaussian(&pair.q, 500, mn_delta::seed::derive_seed(seed, 101)).unwrap();
        let edges = std::sync::Arc::new(mn_delta::model::EdgeSet::full(50).unwrap());
        let fp = eval_features(&xp, edges.clone(), FeatureMap::Product).unwrap();
        let fq = eval_features(&xq, edges, FeatureMap::Product).unwrap();
        let lmax = lambda_max(&fp, &fq).unwrap();
        let opts = SolverOptions { max_iterations: 300, ..Default::default() };
        let grid = default_grid(lmax, 12, 0.1);
        let path = reg_path(&fp, &fq, &grid, &opts).unwrap();
        assert!(path[0].delta.is_zero());
        for w in path.windows(2) {
            steps += 1;
            monotone += (w[1].report.active.len() >= w[0].report.active.len()) as usize;
        }

        let mut sizes = Vec::new();
        for alpha in [0.75, 1.0, 1.25] {
            let lambda = alpha * 50f64.ln() / 500.0;
            let (_, rep) = solve_group_lasso(&fp, &fq, lambda, &opts, None).unwrap();
            sizes.push(rep.active.len());
        }
        assert!(sizes[0] >= sizes[1] && sizes[1] >= sizes[2], "seed {seed}: {sizes:?}");
    }
    assert!(monotone as f64 >= 0.9 * steps as f64, "{monotone}/{steps}");
}

#[test]
fn solution_file_round_trip() {
    let mut r = rng(25);
    let inst = random_instance(&mut r, 3, 50, 50, FeatureMap::Product);
    let d = random_delta(&mut r, &inst.edges, 1.0);
    let f = SolutionFile::from_delta(&d, 0.5, 1.25);
    let text = serde_json::to_string(&f).unwrap();
    let back: SolutionFile = serde_json::from_str(&text).unwrap();
    assert_eq!(back.to_delta().unwrap(), d);
    assert_eq!(back.edge_order, "sorted-uv");
    assert_eq!(back.blocks[0].0, 1);
}
