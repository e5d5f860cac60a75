//! Multi-trial ROC benchmark on lattice change pairs.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpmatch::{sample_covariance, solve_cp_best_effort, threshold, AdmmOptions, CpStatus};
use crate::error::{Error, Result};
use crate::eval::{auc, matrix_support, support_mask, RocCurve, RocPoint, Sweep};
use crate::model::{eval_features, EdgeSet, FeatureMap};
use crate::seed::derive_seed;
use crate::solver::{default_grid, lambda_max, reg_path, SolverOptions};
use crate::synth::{change_pair, sample_gaussian, GraphKind};

/// Fraction of failed trials above which a benchmark run is rejected.
pub const MAX_FAILURE_RATE: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Kliep,
    Cp,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Kliep => "kliep",
            Method::Cp => "cp",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "kliep" => Ok(Method::Kliep),
            "cp" => Ok(Method::Cp),
            other => Err(Error::Argument(format!("unknown method `{other}` (expected kliep or cp)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    /// Variable counts; each must be a perfect square (lattice side^2).
    pub m: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// Samples per distribution.
    pub n: usize,
    pub lambda_points: usize,
    pub lambda_ratio: f64,
    pub epsilon: f64,
    pub tau_points: usize,
    /// Score variance (u == v) terms in the ROC as well as pairwise edges.
    pub score_diagonal: bool,
    pub solver: SolverOptions,
    pub admm: AdmmOptions,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            methods: vec![Method::Kliep, Method::Cp],
            m: vec![9, 25, 49, 100],
            trials: 50,
            seed: 1,
            n: 50,
            lambda_points: 40,
            lambda_ratio: 0.01,
            epsilon: 0.2,
            tau_points: 40,
            score_diagonal: false,
            // Path points below the data's resolution rarely converge and
            // extra iterations do not move their supports.
            solver: SolverOptions {
                max_iterations: 1000,
                ..SolverOptions::default()
            },
            admm: AdmmOptions::default(),
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() || self.m.is_empty() || self.trials == 0 {
            return Err(Error::Argument("benchmark needs methods, m values and trials >= 1".into()));
        }
        for &m in &self.m {
            if lattice_side(m).is_none() {
                return Err(Error::Argument(format!("m = {m} is not a perfect square >= 4")));
            }
        }
        if self.n < 2 || self.lambda_points == 0 || self.tau_points == 0 {
            return Err(Error::Argument("need n >= 2 and nonempty sweep grids".into()));
        }
        if !(self.lambda_ratio > 0.0 && self.lambda_ratio < 1.0) {
            return Err(Error::Argument("lambda_ratio must lie in (0, 1)".into()));
        }
        if !(self.epsilon >= 0.0) {
            return Err(Error::Argument("epsilon must be >= 0".into()));
        }
        self.solver.validate()
    }
}

fn lattice_side(m: usize) -> Option<usize> {
    let side = (m as f64).sqrt().round() as usize;
    (side >= 2 && side * side == m).then_some(side)
}

/// Seed shared by both methods for trial `trial` at size `m`.
pub fn trial_seed(seed: u64, m: usize, trial: usize) -> u64 {
    derive_seed(derive_seed(seed, m as u64), trial as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub method: Method,
    pub m: usize,
    pub trial: usize,
    pub seed: u64,
    pub auc: Option<f64>,
    /// Solver status note (e.g. a CP iterate that never became feasible).
    pub note: Option<String>,
    pub error: Option<String>,
    pub curve: Vec<RocPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub m: usize,
    pub mean_auc: Option<f64>,
    pub std_error: Option<f64>,
    pub completed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchResult {
    pub records: Vec<TrialRecord>,
    pub summary: Vec<SummaryRow>,
}

impl BenchResult {
    pub fn row(&self, method: Method, m: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.method == method && r.m == m)
    }

    /// Methods as rows, `m` values as columns.
    pub fn table(&self) -> serde_json::Value {
        let mut ms: Vec<usize> = self.summary.iter().map(|r| r.m).collect();
        ms.sort_unstable();
        ms.dedup();
        let mut methods: Vec<Method> = self.summary.iter().map(|r| r.method).collect();
        methods.sort_unstable();
        methods.dedup();
        let rows: Vec<_> = methods
            .iter()
            .map(|&method| {
                let cells: Vec<_> = ms.iter().map(|&m| self.row(method, m)).collect();
                serde_json::json!({
                    "method": method,
                    "mean_auc": cells.iter().map(|c| c.and_then(|r| r.mean_auc)).collect::<Vec<_>>(),
                    "std_error": cells.iter().map(|c| c.and_then(|r| r.std_error)).collect::<Vec<_>>(),
                    "completed": cells.iter().map(|c| c.map_or(0, |r| r.completed)).collect::<Vec<_>>(),
                    "failed": cells.iter().map(|c| c.map_or(0, |r| r.failed)).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({ "m": ms, "rows": rows })
    }
}

struct TrialOutcome {
    auc: f64,
    note: Option<String>,
    curve: RocCurve,
}

fn run_trial(cfg: &BenchConfig, method: Method, m: usize, seed: u64) -> Result<TrialOutcome> {
    let side = lattice_side(m).ok_or_else(|| Error::Argument(format!("m = {m} is not a square")))?;
    let pair = change_pair(GraphKind::Lattice { side }, side, seed)?;
    let xp = sample_gaussian(&pair.p, cfg.n, derive_seed(seed, 100))?;
    let xq = sample_gaussian(&pair.q, cfg.n, derive_seed(seed, 101))?;
    let scored: Vec<bool> = EdgeSet::full(m)?
        .edges()
        .iter()
        .map(|&(u, v)| cfg.score_diagonal || u != v)
        .collect();
    let keep = |mask: Vec<bool>| -> Vec<bool> {
        mask.into_iter().zip(&scored).filter(|(_, &k)| k).map(|(x, _)| x).collect()
    };
    let truth = keep(support_mask(&pair.true_delta()?));

    match method {
        Method::Kliep => {
            let edges = Arc::new(EdgeSet::full(m)?);
            let fp = eval_features(&xp, edges.clone(), FeatureMap::Product)?;
            let fq = eval_features(&xq, edges, FeatureMap::Product)?;
            let lmax = lambda_max(&fp, &fq)?;
            if !(lmax > 0.0) {
                return Err(Error::Numeric("lambda_max is zero".into()));
            }
            let grid = default_grid(lmax, cfg.lambda_points, cfg.lambda_ratio);
            let path = reg_path(&fp, &fq, &grid, &cfg.solver)?;
            let masks: Vec<(f64, Vec<bool>)> =
                path.iter().map(|p| (p.lambda, keep(support_mask(&p.delta)))).collect();
            let curve =
                RocCurve::from_supports(Sweep::Lambda, masks.iter().map(|(l, s)| (*l, &s[..])), &truth)?;
            let capped = path.iter().filter(|p| p.report.termination != crate::solver::Termination::Converged).count();
            let note = (capped > 0).then(|| format!("{capped} path points hit max iterations"));
            Ok(TrialOutcome { auc: auc(&curve), note, curve })
        }
        Method::Cp => {
            let sp = sample_covariance(&xp);
            let sq = sample_covariance(&xq);
            let (delta, report) = solve_cp_best_effort(&sp, &sq, cfg.epsilon, &cfg.admm)?;
            let edges = EdgeSet::full(m)?;
            let top = delta.iter().fold(0.0_f64, |a, &x| a.max(x.abs()));
            let steps = cfg.tau_points.max(2) - 1;
            let mut masks = Vec::with_capacity(cfg.tau_points);
            for i in 0..cfg.tau_points {
                let tau = top * i as f64 / steps as f64;
                masks.push((tau, keep(matrix_support(&threshold(&delta, tau), &edges)?)));
            }
            let curve =
                RocCurve::from_supports(Sweep::Tau, masks.iter().map(|(t, s)| (*t, &s[..])), &truth)?;
            let note = match report.status {
                CpStatus::Converged => None,
                CpStatus::MaxIter => Some("max iterations".to_string()),
                CpStatus::Infeasible => Some(format!(
                    "infeasible, best-effort iterate (primal residual {:.3e})",
                    report.primal_residual
                )),
            };
            Ok(TrialOutcome { auc: auc(&curve), note, curve })
        }
    }
}

/// Runs every (method, m, trial) cell on the current rayon pool.
///
/// Records come back in (method, m, trial) order regardless of scheduling.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<BenchResult> {
    cfg.validate()?;
    let mut methods = cfg.methods.clone();
    methods.sort_unstable();
    methods.dedup();
    let mut ms = cfg.m.clone();
    ms.sort_unstable();
    ms.dedup();

    let tasks: Vec<(Method, usize, usize)> = methods
        .iter()
        .flat_map(|&method| {
            ms.iter()
                .flat_map(move |&m| (0..cfg.trials).map(move |t| (method, m, t)))
        })
        .collect();

    let records: Vec<TrialRecord> = tasks
        .par_iter()
        .map(|&(method, m, trial)| {
            let seed = trial_seed(cfg.seed, m, trial);
            match run_trial(cfg, method, m, seed) {
                Ok(out) => TrialRecord {
                    method,
                    m,
                    trial,
                    seed,
                    auc: Some(out.auc),
                    note: out.note,
                    error: None,
                    curve: out.curve.points,
                },
                Err(e) => TrialRecord {
                    method,
                    m,
                    trial,
                    seed,
                    auc: None,
                    note: None,
                    error: Some(e.to_string()),
                    curve: Vec::new(),
                },
            }
        })
        .collect();

    let summary = aggregate(&records);
    let failed: usize = summary.iter().map(|r| r.failed).sum();
    if failed as f64 > MAX_FAILURE_RATE * records.len() as f64 {
        let first = records.iter().find_map(|r| r.error.clone()).unwrap_or_default();
        return Err(Error::Numeric(format!(
            "{failed} of {} trials failed (first: {first})",
            records.len()
        )));
    }
    Ok(BenchResult { records, summary })
}

/// Per-(method, m) mean AUC and standard error over completed trials.
pub fn aggregate(records: &[TrialRecord]) -> Vec<SummaryRow> {
    let mut sorted: Vec<&TrialRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.method, r.m, r.trial));
    let mut out: Vec<SummaryRow> = Vec::new();
    for group in sorted.chunk_by(|a, b| a.method == b.method && a.m == b.m) {
        let aucs: Vec<f64> = group.iter().filter_map(|r| r.auc).collect();
        let k = aucs.len();
        let mean = (k > 0).then(|| aucs.iter().sum::<f64>() / k as f64);
        let se = mean.filter(|_| k > 1).map(|mu| {
            let var = aucs.iter().map(|a| (a - mu).powi(2)).sum::<f64>() / (k - 1) as f64;
            (var / k as f64).sqrt()
        });
        out.push(SummaryRow {
            method: group[0].method,
            m: group[0].m,
            mean_auc: mean,
            std_error: se,
            completed: k,
            failed: group.len() - k,
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(method: Method, m: usize, trial: usize, auc: Option<f64>) -> TrialRecord {
        TrialRecord {
            method,
            m,
            trial,
            seed: 0,
            auc,
            note: None,
            error: auc.is_none().then(|| "boom".into()),
            curve: vec![],
        }
    }

    #[test]
    fn aggregation_ignores_order_and_failures() {
        let a = vec![
            record(Method::Cp, 9, 1, Some(0.6)),
            record(Method::Kliep, 9, 0, Some(0.8)),
            record(Method::Cp, 9, 0, Some(0.7)),
            record(Method::Kliep, 9, 1, None),
        ];
        let mut b = a.clone();
        b.reverse();
        assert_eq!(aggregate(&a), aggregate(&b));
        let s = aggregate(&a);
        assert_eq!(s[0].method, Method::Kliep);
        assert_eq!((s[0].completed, s[0].failed), (1, 1));
        assert!((s[1].mean_auc.unwrap() - 0.65).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_square_m() {
        let cfg = BenchConfig { m: vec![10], ..Default::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn single_trial_is_reproducible() {
        let cfg = BenchConfig { m: vec![9], trials: 1, seed: 3, ..Default::default() };
        let a = run_benchmark(&cfg).unwrap();
        let b = run_benchmark(&cfg).unwrap();
        assert_eq!(a, b);
        for r in &a.records {
            let v = r.auc.unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }
}
