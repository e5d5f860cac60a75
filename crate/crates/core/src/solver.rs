//! Group-lasso regularized KLIEP via accelerated proximal gradient.
//!
//! Minimizes `loss(delta) + lambda * sum_k ||delta_k||` where the sum runs
//! over every edge block, diagonal pairs included. Proximal steps produce
//! exact zeros, so the active set is read off without thresholding.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kliep::Kliep;
use crate::model::{DeltaParams, EdgeSet, FeatureTensor};

/// Step-size rule for the proximal step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "lowercase")]
pub enum StepPolicy {
    Fixed { step: f64 },
    Backtracking { initial: f64, shrink: f64 },
}

impl Default for StepPolicy {
    fn default() -> Self {
        StepPolicy::Backtracking {
            initial: 1.0,
            shrink: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Relative objective change, required on 3 consecutive iterations; the
    /// proximal fixed-point residual must also fall below it.
    pub tolerance: f64,
    pub step: StepPolicy,
    pub accelerate: bool,
    pub monotone_restart: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 5000,
            tolerance: 1e-8,
            step: StepPolicy::default(),
            accelerate: true,
            monotone_restart: true,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Argument("max_iterations must be >= 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Argument("tolerance must be > 0".into()));
        }
        match self.step {
            StepPolicy::Fixed { step } if !(step > 0.0) => {
                Err(Error::Argument("fixed step must be > 0".into()))
            }
            StepPolicy::Backtracking { initial, shrink }
                if !(initial > 0.0) || !(shrink > 0.0 && shrink < 1.0) =>
            {
                Err(Error::Argument("backtracking needs initial > 0 and shrink in (0, 1)".into()))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Converged,
    MaxIter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub lambda: f64,
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    /// Indices into the edge set of blocks with nonzero norm.
    pub active: Vec<usize>,
    pub termination: Termination,
    /// Step size in effect when the solver stopped.
    pub step: f64,
}

impl SolveReport {
    pub fn objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the starting objective")
    }

    pub fn active_pairs(&self, edges: &EdgeSet) -> Vec<(usize, usize)> {
        self.active.iter().map(|&k| edges.get(k)).collect()
    }
}

/// `max(0, 1 - t / ||block||) * block`, written in place.
pub fn group_soft_threshold_in_place(block: &mut [f64], t: f64) {
    let norm = block.iter().map(|c| c * c).sum::<f64>().sqrt();
    if norm <= t {
        block.iter_mut().for_each(|c| *c = 0.0);
    } else {
        let scale = 1.0 - t / norm;
        block.iter_mut().for_each(|c| *c *= scale);
    }
}

pub fn group_soft_threshold(block: &[f64], t: f64) -> Vec<f64> {
    let mut out = block.to_vec();
    group_soft_threshold_in_place(&mut out, t);
    out
}

/// Blockwise proximal map of `t * sum_k ||.||`.
pub fn prox_blocks(coeffs: &mut [f64], b: usize, t: f64) {
    for block in coeffs.chunks_mut(b) {
        group_soft_threshold_in_place(block, t);
    }
}

fn group_norm(coeffs: &[f64], b: usize) -> f64 {
    coeffs
        .chunks(b)
        .map(|blk| blk.iter().map(|c| c * c).sum::<f64>().sqrt())
        .sum()
}

/// Largest gradient block norm at zero; any `lambda >= lambda_max` gives the zero solution.
pub fn lambda_max(fp: &FeatureTensor, fq: &FeatureTensor) -> Result<f64> {
    let kliep = Kliep::new(fp, fq)?;
    Ok(lambda_max_of(&kliep, fp.block_size()))
}

fn lambda_max_of(kliep: &Kliep<'_>, b: usize) -> f64 {
    let zero = vec![0.0; kliep.width()];
    let (_, g) = kliep.loss_grad_at(&zero);
    g.chunks(b)
        .map(|blk| blk.iter().map(|c| c * c).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// Solves the group-lasso KLIEP problem at one `lambda`.
pub fn solve_group_lasso(
    fp: &FeatureTensor,
    fq: &FeatureTensor,
    lambda: f64,
    opts: &SolverOptions,
    warm_start: Option<&DeltaParams>,
) -> Result<(DeltaParams, SolveReport)> {
    let kliep = Kliep::new(fp, fq)?;
    solve_with(&kliep, fq.edges().clone(), fq.block_size(), lambda, opts, warm_start)
}

fn solve_with(
    kliep: &Kliep<'_>,
    edges: Arc<EdgeSet>,
    b: usize,
    lambda: f64,
    opts: &SolverOptions,
    warm_start: Option<&DeltaParams>,
) -> Result<(DeltaParams, SolveReport)> {
    opts.validate()?;
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Argument(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    let width = kliep.width();
    let mut x = match warm_start {
        Some(w) => {
            kliep.fq().check_delta(w)?;
            w.coeffs().to_vec()
        }
        None => vec![0.0; width],
    };

    let objective = |c: &[f64], loss: f64| loss + lambda * group_norm(c, b);
    let (mut step, shrink) = match opts.step {
        StepPolicy::Fixed { step } => (step, None),
        StepPolicy::Backtracking { initial, shrink } => (initial, Some(shrink)),
    };

    // Zero is optimal whenever every gradient block at zero is within lambda.
    if lambda > 0.0 && lambda >= lambda_max_of(kliep, b) {
        let zero = vec![0.0; width];
        let delta = DeltaParams::from_coeffs(edges, b, zero)?;
        let report = SolveReport {
            lambda,
            objective_trace: vec![0.0],
            iterations: 0,
            active: Vec::new(),
            termination: Termination::Converged,
            step,
        };
        return Ok((delta, report));
    }

    let mut fx = objective(&x, kliep.loss_at(&x));
    if !fx.is_finite() {
        return Err(Error::Divergence { iteration: 0 });
    }
    let mut trace = vec![fx];
    let mut best = (fx, x.clone());
    let mut y = x.clone();
    let mut momentum = false;
    let mut t = 1.0_f64;
    let mut stall = 0usize;
    let mut termination = Termination::MaxIter;
    let mut iterations = 0;

    for iter in 1..=opts.max_iterations {
        iterations = iter;
        let (fy, gy) = kliep.loss_grad_at(&y);
        let (z, fz_loss) = loop {
            let mut z: Vec<f64> = y.iter().zip(&gy).map(|(yi, gi)| yi - step * gi).collect();
            prox_blocks(&mut z, b, step * lambda);
            let fz = kliep.loss_at(&z);
            let Some(shrink) = shrink else { break (z, fz) };
            let mut lin = 0.0;
            let mut sq = 0.0;
            for ((zi, yi), gi) in z.iter().zip(&y).zip(&gy) {
                let d = zi - yi;
                lin += gi * d;
                sq += d * d;
            }
            let bound = fy + lin + sq / (2.0 * step);
            if fz.is_finite() && fz <= bound + 1e-12 * fy.abs().max(1.0) {
                break (z, fz);
            }
            step *= shrink;
            if step < 1e-300 {
                return Err(Error::Divergence { iteration: iter });
            }
        };
        let fz = objective(&z, fz_loss);
        if !fz.is_finite() {
            return Err(Error::Divergence { iteration: iter });
        }

        if opts.monotone_restart && fz > fx {
            if momentum {
                // restart from the last accepted iterate
                y.clone_from(&x);
                t = 1.0;
                momentum = false;
                continue;
            }
            // a plain step that fails to decrease: rounding level at the optimum
            stall += 1;
            if stall >= 3 {
                if fixed_point_residual(kliep, &x, b, step, lambda) <= opts.tolerance {
                    termination = Termination::Converged;
                    break;
                }
                stall = 0;
            }
            continue;
        }

        let rel = (fx - fz).abs() / fz.abs().max(1.0);
        let x_prev = std::mem::replace(&mut x, z);
        fx = fz;
        trace.push(fx);
        if fx < best.0 {
            best = (fx, x.clone());
        }
        if opts.accelerate {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            let beta = (t - 1.0) / t_next;
            y = x
                .iter()
                .zip(&x_prev)
                .map(|(xi, pi)| xi + beta * (xi - pi))
                .collect();
            momentum = beta != 0.0;
            t = t_next;
        } else {
            y.clone_from(&x);
        }

        if rel < opts.tolerance {
            stall += 1;
            if stall >= 3 {
                // objective has settled; confirm the iterate is a proximal fixed point
                if fixed_point_residual(kliep, &x, b, step, lambda) <= opts.tolerance {
                    termination = Termination::Converged;
                    break;
                }
                stall = 0;
            }
        } else {
            stall = 0;
        }
    }

    let x = if opts.monotone_restart { x } else { best.1 };
    let delta = DeltaParams::from_coeffs(edges, b, x)?;
    let report = SolveReport {
        lambda,
        objective_trace: trace,
        iterations,
        active: delta.support(),
        termination,
        step,
    };
    Ok((delta, report))
}

/// `||x - prox(x - step * grad(x), step * lambda)||_inf`
pub(crate) fn fixed_point_residual(kliep: &Kliep<'_>, x: &[f64], b: usize, step: f64, lambda: f64) -> f64 {
    let (_, g) = kliep.loss_grad_at(x);
    let mut z: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - step * gi).collect();
    prox_blocks(&mut z, b, step * lambda);
    z.iter().zip(x).map(|(a, c)| (a - c).abs()).fold(0.0, f64::max)
}

/// One point of a regularization path.
#[derive(Debug, Clone)]
pub struct PathPoint {
    pub lambda: f64,
    pub delta: DeltaParams,
    pub report: SolveReport,
}

/// `points` log-spaced values from `lambda_max` down to `lambda_max * ratio`.
pub fn default_grid(lambda_max: f64, points: usize, ratio: f64) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![lambda_max],
        _ => {
            let lo = ratio.ln();
            (0..points)
                .map(|i| lambda_max * (lo * i as f64 / (points - 1) as f64).exp())
                .collect()
        }
    }
}

/// Warm-started solutions along a strictly descending `grid`.
pub fn reg_path(
    fp: &FeatureTensor,
    fq: &FeatureTensor,
    grid: &[f64],
    opts: &SolverOptions,
) -> Result<Vec<PathPoint>> {
    if grid.windows(2).any(|w| !(w[0] > w[1])) {
        return Err(Error::Argument("lambda grid must be strictly descending".into()));
    }
    if grid.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::Argument("lambda grid must be positive".into()));
    }
    let kliep = Kliep::new(fp, fq)?;
    let mut out: Vec<PathPoint> = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let warm = out.last().map(|p| &p.delta);
        let (delta, report) = solve_with(&kliep, fq.edges().clone(), fq.block_size(), lambda, opts, warm)?;
        out.push(PathPoint { lambda, delta, report });
    }
    Ok(out)
}

/// JSON layout for a grouped solution. Indices are 1-based, `u >= v`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub m: usize,
    pub b: usize,
    pub edge_order: String,
    pub lambda: f64,
    pub blocks: Vec<(usize, usize, Vec<f64>)>,
    pub objective: f64,
}

pub const EDGE_ORDER: &str = "sorted-uv";

impl SolutionFile {
    pub fn from_delta(delta: &DeltaParams, lambda: f64, objective: f64) -> Self {
        let edges = delta.edges();
        let blocks = (0..edges.len())
            .map(|k| {
                let (u, v) = edges.get(k);
                (u + 1, v + 1, delta.block(k).to_vec())
            })
            .collect();
        Self {
            m: edges.m(),
            b: delta.block_size(),
            edge_order: EDGE_ORDER.to_string(),
            lambda,
            blocks,
            objective,
        }
    }

    pub fn to_delta(&self) -> Result<DeltaParams> {
        if self.edge_order != EDGE_ORDER {
            return Err(Error::Data(format!("unsupported edge order {:?}", self.edge_order)));
        }
        let mut pairs = Vec::with_capacity(self.blocks.len());
        for (u, v, c) in &self.blocks {
            if *u == 0 || *v == 0 || v > u || *u > self.m {
                return Err(Error::InvalidEdge { u: *u, v: *v, m: self.m });
            }
            if c.len() != self.b {
                return Err(Error::Shape(format!("block ({u},{v}) has {} coefficients", c.len())));
            }
            pairs.push((u - 1, v - 1));
        }
        let edges = Arc::new(EdgeSet::build(self.m, Some(&pairs))?);
        if edges.len() != pairs.len() || edges.edges() != pairs.as_slice() {
            return Err(Error::Data("blocks must be unique and sorted by (u, v)".into()));
        }
        let coeffs = self.blocks.iter().flat_map(|(_, _, c)| c.iter().copied()).collect();
        DeltaParams::from_coeffs(edges, self.b, coeffs)
    }
}
