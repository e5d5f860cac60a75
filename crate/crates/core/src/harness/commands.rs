//! The pipelines behind each subcommand.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::json;

use super::config::{DiagnoseConfig, FeatureKind, ImageDiffConfig, RocBenchConfig, SolveConfig, SynthDemoConfig};
use super::run::RunDir;
use crate::bench::{run_benchmark, Method};
use crate::cpmatch::{sample_covariance, solve_cp_best_effort, threshold, AdmmOptions, CpSolutionFile, CpStatus};
use crate::error::{Error, Result};
use crate::eval::{diagnose_assumptions, rates_for_delta, rates_for_matrix, AssumptionReport};
use crate::imagediff::{demo_scene, detect_changes, DetectConfig, Image};
use crate::model::{eval_features, Dataset, EdgeSet, FeatureMap};
use crate::seed::derive_seed;
use crate::solver::{lambda_max, solve_group_lasso, SolutionFile, SolverOptions, Termination};
use crate::synth::{change_pair, sample_gaussian, ChangePair, GraphKind, GroundTruthFile};

/// Sample streams drawn from a pair seed.
pub const STREAM_P: u64 = 100;
pub const STREAM_Q: u64 = 101;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KliepRecovery {
    pub alpha: f64,
    pub lambda: f64,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub active: usize,
    pub false_positives: usize,
    pub iterations: usize,
    pub termination: Termination,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CpRecovery {
    pub tau: f64,
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
    pub active: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthDemoSummary {
    pub m: usize,
    pub d: usize,
    pub n: usize,
    pub seed: u64,
    pub lambda_max: f64,
    /// 1-based removed edges.
    pub changed: Vec<(usize, usize)>,
    pub kliep: Vec<KliepRecovery>,
    pub cp_epsilon: f64,
    pub cp_status: CpStatus,
    pub cp_iterations: usize,
    pub cp: Vec<CpRecovery>,
}

/// Draws the pair and both sample sets used by the synthetic pipelines.
pub fn synthetic_data(kind: GraphKind, d: usize, n: usize, seed: u64) -> Result<(ChangePair, Dataset, Dataset)> {
    let pair = change_pair(kind, d, seed)?;
    let xp = sample_gaussian(&pair.p, n, derive_seed(seed, STREAM_P))?;
    let xq = sample_gaussian(&pair.q, n, derive_seed(seed, STREAM_Q))?;
    Ok((pair, xp, xq))
}

/// KLIEP at each `alpha` plus CP matching at each `tau`; the solutions are
/// returned alongside the summary for writing.
pub fn synth_demo_summary(
    cfg: &SynthDemoConfig,
) -> Result<(SynthDemoSummary, ChangePair, Vec<SolutionFile>, CpSolutionFile)> {
    let kind = GraphKind::Random { m: cfg.m, density: cfg.density };
    let (pair, xp, xq) = synthetic_data(kind, cfg.d, cfg.n, cfg.seed)?;
    let truth = pair.true_delta()?;
    let edges = truth.edges().clone();
    let fp = eval_features(&xp, edges.clone(), FeatureMap::Product)?;
    let fq = eval_features(&xq, edges, FeatureMap::Product)?;
    let opts = SolverOptions {
        max_iterations: cfg.max_iterations,
        tolerance: cfg.tolerance,
        ..SolverOptions::default()
    };

    let mut kliep = Vec::new();
    let mut files = Vec::new();
    for &alpha in &cfg.alpha {
        let lambda = alpha * (cfg.m as f64).ln() / cfg.n as f64;
        let (delta, report) = solve_group_lasso(&fp, &fq, lambda, &opts, None)?;
        let rates = rates_for_delta(&delta, &truth)?;
        let tn = rates.tnr.unwrap_or(1.0);
        let negatives = truth.edges().len() - truth.support().len();
        kliep.push(KliepRecovery {
            alpha,
            lambda,
            tpr: rates.tpr,
            tnr: rates.tnr,
            active: report.active.len(),
            false_positives: ((1.0 - tn) * negatives as f64).round() as usize,
            iterations: report.iterations,
            termination: report.termination,
            objective: report.objective(),
        });
        files.push(SolutionFile::from_delta(&delta, lambda, report.objective()));
    }

    let (sp, sq) = (sample_covariance(&xp), sample_covariance(&xq));
    let (delta, cp_report) = solve_cp_best_effort(&sp, &sq, cfg.epsilon, &AdmmOptions::default())?;
    let mut cp = Vec::new();
    for &tau in &cfg.tau {
        let t = threshold(&delta, tau);
        let rates = rates_for_matrix(&t, &truth)?;
        let active = crate::cpmatch::matrix_edge_list(&t).iter().filter(|e| e.2 != 0.0).count();
        cp.push(CpRecovery { tau, tpr: rates.tpr, tnr: rates.tnr, active });
    }
    let cp_file = CpSolutionFile::new(&delta, cfg.epsilon, 0.0, cp_report.status);

    let summary = SynthDemoSummary {
        m: cfg.m,
        d: cfg.d,
        n: cfg.n,
        seed: cfg.seed,
        lambda_max: lambda_max(&fp, &fq)?,
        changed: pair.removed.iter().map(|&(u, v)| (u + 1, v + 1)).collect(),
        kliep,
        cp_epsilon: cfg.epsilon,
        cp_status: cp_report.status,
        cp_iterations: cp_report.iterations,
        cp,
    };
    Ok((summary, pair, files, cp_file))
}

fn pair_seeds(seed: u64) -> serde_json::Value {
    json!({ "pair": seed, "samples_p": derive_seed(seed, STREAM_P), "samples_q": derive_seed(seed, STREAM_Q) })
}

pub fn synth_demo(out: &Path, cfg: &SynthDemoConfig, jobs: usize) -> Result<PathBuf> {
    let mut run = RunDir::create(out, "synth-demo", cfg)?;
    run.set_seeds(pair_seeds(cfg.seed));
    let (summary, pair, files, cp_file) = synth_demo_summary(cfg)?;
    run.write_json("ground_truth.json", &GroundTruthFile::new(&pair)?)?;
    for (rec, file) in summary.kliep.iter().zip(&files) {
        run.write_json(&format!("solutions/kliep-alpha-{}.json", rec.alpha), file)?;
    }
    run.write_json("solutions/cp.json", &cp_file)?;
    if summary.cp_status != CpStatus::Converged {
        run.warn(format!("CP matching stopped with status {:?}", summary.cp_status));
    }
    run.write_json("summary.json", &summary)?;
    run.finish(jobs)
}

pub fn roc_bench(out: &Path, cfg: &RocBenchConfig, jobs: usize) -> Result<PathBuf> {
    let bench = cfg.to_bench();
    bench.validate()?;
    let mut run = RunDir::create(out, "roc-bench", cfg)?;
    run.set_seeds(json!({ "base": cfg.seed, "per_trial": "see trials.csv" }));
    let result = run_benchmark(&bench)?;

    let mut w = csv::Writer::from_path(run.output("trials.csv")?).map_err(csv_err)?;
    w.write_record(["method", "m", "trial", "seed", "auc", "note", "error"]).map_err(csv_err)?;
    for r in &result.records {
        w.write_record([
            r.method.name().to_string(),
            r.m.to_string(),
            r.trial.to_string(),
            r.seed.to_string(),
            r.auc.map(|a| a.to_string()).unwrap_or_default(),
            r.note.clone().unwrap_or_default(),
            r.error.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(run.output("roc.csv")?).map_err(csv_err)?;
    w.write_record(["method", "m", "trial", "param", "fpr", "tpr"]).map_err(csv_err)?;
    for r in &result.records {
        for p in &r.curve {
            w.write_record([
                r.method.name().to_string(),
                r.m.to_string(),
                r.trial.to_string(),
                p.param.to_string(),
                p.fpr.to_string(),
                p.tpr.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;

    let failed: usize = result.summary.iter().map(|s| s.failed).sum();
    if failed > 0 {
        run.warn(format!("{failed} trials failed and were excluded"));
    }
    let grids = json!({
        "lambda": format!("{} log-spaced points from lambda_max to lambda_max * {}", bench.lambda_points, bench.lambda_ratio),
        "tau": format!("{} evenly spaced points from 0 to max |Delta|", bench.tau_points),
    });
    run.write_json(
        "summary.json",
        &json!({ "table": result.table(), "rows": result.summary, "grids": grids }),
    )?;
    run.finish(jobs)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn image_diff(out: &Path, cfg: &ImageDiffConfig, jobs: usize) -> Result<PathBuf> {
    let (p, q) = match (cfg.demo_seed, &cfg.image_p, &cfg.image_q) {
        (Some(seed), None, None) => demo_scene(seed)?,
        (None, Some(a), Some(b)) => (Image::read_ppm(a)?, Image::read_ppm(b)?),
        _ => {
            return Err(Error::Argument(
                "give two image paths or --demo-seed, not both".into(),
            ))
        }
    };
    let detect = DetectConfig {
        window: cfg.window,
        stride: cfg.stride,
        bandwidth: cfg.bandwidth,
        target: cfg.target,
        solver: SolverOptions {
            max_iterations: cfg.max_iterations,
            tolerance: cfg.tolerance,
            ..SolverOptions::default()
        },
    };
    let mut run = RunDir::create(out, "image-diff", cfg)?;
    if let Some(seed) = cfg.demo_seed {
        run.set_seeds(json!({ "demo_scene": seed }));
        p.write_ppm(run.output("scene_p.ppm")?)?;
        q.write_ppm(run.output("scene_q.ppm")?)?;
    }
    let det = detect_changes(&p, &q, &detect)?;
    if let Some(w) = &det.report.warning {
        run.warn(w.clone());
    }
    run.write_json("edges.json", &det.changed)?;
    run.write_json("report.json", &det.report)?;
    det.overlay.write_ppm(run.output("overlay.ppm")?)?;
    run.finish(jobs)
}

pub fn diagnose_summary(cfg: &DiagnoseConfig) -> Result<AssumptionReport> {
    let kind = GraphKind::Random { m: cfg.m, density: cfg.density };
    let pair = change_pair(kind, cfg.d, cfg.seed)?;
    let xq = sample_gaussian(&pair.q, cfg.n, derive_seed(cfg.seed, STREAM_Q))?;
    let truth = pair.true_delta()?;
    let fq = eval_features(&xq, truth.edges().clone(), FeatureMap::Product)?;
    diagnose_assumptions(&truth, &fq, &truth.support(), cfg.cap)
}

pub fn diagnose(out: &Path, cfg: &DiagnoseConfig, jobs: usize) -> Result<PathBuf> {
    let mut run = RunDir::create(out, "diagnose", cfg)?;
    run.set_seeds(pair_seeds(cfg.seed));
    let report = diagnose_summary(cfg)?;
    if report.singular {
        run.warn("I_SS is singular; assumption flags are false");
    }
    run.write_json("diagnostics.json", &report)?;
    run.finish(jobs)
}

pub fn solve(out: &Path, cfg: &SolveConfig, jobs: usize) -> Result<PathBuf> {
    let (Some(xp), Some(xq)) = (&cfg.xp, &cfg.xq) else {
        return Err(Error::Argument("solve needs --xp and --xq".into()));
    };
    let xp = Dataset::read_csv(xp)?;
    let xq = Dataset::read_csv(xq)?;
    if xp.m() != xq.m() {
        return Err(Error::Shape(format!("xp has {} columns, xq has {}", xp.m(), xq.m())));
    }
    let mut run = RunDir::create(out, "solve", cfg)?;
    match cfg.method {
        Method::Kliep => {
            let fmap = match cfg.feature {
                FeatureKind::Product => FeatureMap::Product,
                FeatureKind::Rbf => FeatureMap::rbf(cfg.bandwidth)?,
            };
            let edges = Arc::new(EdgeSet::full(xp.m())?);
            let fp = eval_features(&xp, edges.clone(), fmap)?;
            let fq = eval_features(&xq, edges, fmap)?;
            let lmax = lambda_max(&fp, &fq)?;
            let lambda = cfg.lambda.unwrap_or(cfg.lambda_fraction * lmax);
            let opts = SolverOptions {
                max_iterations: cfg.max_iterations,
                tolerance: cfg.tolerance,
                ..SolverOptions::default()
            };
            let (delta, report) = solve_group_lasso(&fp, &fq, lambda, &opts, None)?;
            if report.termination != Termination::Converged {
                run.warn("solver reached max iterations");
            }
            run.write_json("solution.json", &SolutionFile::from_delta(&delta, lambda, report.objective()))?;
            run.write_json(
                "report.json",
                &json!({
                    "lambda_max": lmax,
                    "lambda": lambda,
                    "iterations": report.iterations,
                    "termination": report.termination,
                    "objective": report.objective(),
                    "active": report.active_pairs(delta.edges()).iter().map(|&(u, v)| (u + 1, v + 1)).collect::<Vec<_>>(),
                }),
            )?;
        }
        Method::Cp => {
            let (sp, sq) = (sample_covariance(&xp), sample_covariance(&xq));
            let (delta, report) = solve_cp_best_effort(&sp, &sq, cfg.epsilon, &AdmmOptions::default())?;
            if report.status != CpStatus::Converged {
                run.warn(format!("CP matching stopped with status {:?}", report.status));
            }
            let t = threshold(&delta, cfg.tau);
            run.write_json("solution.json", &CpSolutionFile::new(&t, cfg.epsilon, cfg.tau, report.status))?;
            run.write_json(
                "report.json",
                &json!({
                    "status": report.status,
                    "iterations": report.iterations,
                    "primal_residual": report.primal_residual,
                    "dual_residual": report.dual_residual,
                    "mu": report.mu,
                }),
            )?;
        }
    }
    run.finish(jobs)
}
