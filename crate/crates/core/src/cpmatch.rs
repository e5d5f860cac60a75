//! Covariance-precision matching for Gaussian data.
//!
//! Solves `min ||D||_1  s.t.  ||Sp D Sq + Sp - Sq||_inf <= eps` over symmetric
//! `D` with a linearized ADMM on the split `Z = Sp D Sq`:
//!
//! ```text
//! D <- soft(D - (rho/mu) sym(Sp (Sp D Sq - Z + U) Sq), 1/mu)
//! Z <- clamp(Sp D Sq + U, -C - eps, -C + eps),   C = Sp - Sq
//! U <- U + Sp D Sq - Z
//! ```
//!
//! `mu >= rho (||Sp||_2 ||Sq||_2)^2` keeps the linearized step a majorizer.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdmmOptions {
    pub rho: f64,
    /// Linearization constant; `None` uses the smallest admissible value.
    pub mu: Option<f64>,
    pub max_iterations: usize,
    pub primal_tolerance: f64,
    pub dual_tolerance: f64,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            mu: None,
            max_iterations: 5000,
            primal_tolerance: 1e-6,
            dual_tolerance: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CpStatus {
    Converged,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpReport {
    pub status: CpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    /// `||D||_1` of the returned estimate.
    pub objective: f64,
    pub mu: f64,
    /// Final auxiliary variable, `Z ~ Sp D Sq`.
    pub z: DMatrix<f64>,
}

/// Sample covariance with denominator `n`.
pub fn sample_covariance(data: &Dataset) -> DMatrix<f64> {
    let (n, m) = (data.n(), data.m());
    let mut mean = vec![0.0; m];
    for i in 0..n {
        for (a, x) in mean.iter_mut().zip(data.row(i)) {
            *a += x;
        }
    }
    mean.iter_mut().for_each(|a| *a /= n as f64);
    let mut cov = DMatrix::zeros(m, m);
    for i in 0..n {
        let x = data.row(i);
        for u in 0..m {
            let du = x[u] - mean[u];
            for v in 0..=u {
                cov[(u, v)] += du * (x[v] - mean[v]);
            }
        }
    }
    for u in 0..m {
        for v in 0..=u {
            let c = cov[(u, v)] / n as f64;
            cov[(u, v)] = c;
            cov[(v, u)] = c;
        }
    }
    cov
}

/// `Sp D Sq + Sp - Sq`
pub fn quasi_residual(delta: &DMatrix<f64>, sp: &DMatrix<f64>, sq: &DMatrix<f64>) -> DMatrix<f64> {
    sp * delta * sq + sp - sq
}

/// Hard threshold: entries with `|D_uv| < tau` become zero.
pub fn threshold(delta: &DMatrix<f64>, tau: f64) -> DMatrix<f64> {
    delta.map(|x| if x.abs() < tau { 0.0 } else { x })
}

pub fn spectral_norm(s: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(s.clone())
        .eigenvalues
        .iter()
        .fold(0.0_f64, |a, &e| a.max(e.abs()))
}

fn sup_norm(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |acc, &x| acc.max(x.abs()))
}

fn check_inputs(sp: &DMatrix<f64>, sq: &DMatrix<f64>, eps: f64) -> Result<()> {
    let m = sp.nrows();
    if m == 0 || !sp.is_square() || sq.shape() != sp.shape() {
        return Err(Error::Shape(format!(
            "covariances of shape {:?} and {:?}",
            sp.shape(),
            sq.shape()
        )));
    }
    for s in [sp, sq] {
        if s.iter().any(|x| !x.is_finite()) {
            return Err(Error::Data("non-finite covariance entry".into()));
        }
        if sup_norm(&(s - s.transpose())) > 1e-12 * sup_norm(s).max(1.0) {
            return Err(Error::Argument("covariance matrices must be symmetric".into()));
        }
        if (0..m).any(|i| s[(i, i)] < 0.0) {
            return Err(Error::Argument("covariance diagonal must be >= 0".into()));
        }
    }
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::Argument(format!("epsilon must be finite and >= 0, got {eps}")));
    }
    Ok(())
}

fn is_singular(s: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(s.clone()).eigenvalues;
    let max = eig.iter().fold(0.0_f64, |a, &e| a.max(e.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, &e| a.min(e.abs()));
    max == 0.0 || min <= max * 1e-12
}

/// Solves the matching program and fails with [`Error::Infeasible`] when the
/// residual cannot be brought into the box.
pub fn solve_cp(
    sp: &DMatrix<f64>,
    sq: &DMatrix<f64>,
    eps: f64,
    opts: &AdmmOptions,
) -> Result<(DMatrix<f64>, CpReport)> {
    let (delta, report) = solve_cp_best_effort(sp, sq, eps, opts)?;
    if report.status == CpStatus::Infeasible {
        return Err(Error::Infeasible(format!(
            "primal residual stalled at {:.3e} after {} iterations",
            report.primal_residual, report.iterations
        )));
    }
    Ok((delta, report))
}

/// Like [`solve_cp`] but returns the last iterate with an `Infeasible`
/// status instead of an error.
pub fn solve_cp_best_effort(
    sp: &DMatrix<f64>,
    sq: &DMatrix<f64>,
    eps: f64,
    opts: &AdmmOptions,
) -> Result<(DMatrix<f64>, CpReport)> {
    check_inputs(sp, sq, eps)?;
    if !(opts.rho > 0.0) || opts.max_iterations == 0 {
        return Err(Error::Argument("ADMM needs rho > 0 and max_iterations >= 1".into()));
    }
    if !(opts.primal_tolerance > 0.0 && opts.dual_tolerance > 0.0) {
        return Err(Error::Argument("ADMM tolerances must be > 0".into()));
    }
    if eps == 0.0 && (is_singular(sp) || is_singular(sq)) {
        return Err(Error::Infeasible(
            "exact matching (eps = 0) needs invertible covariances".into(),
        ));
    }
    let m = sp.nrows();
    let op_norm = spectral_norm(sp) * spectral_norm(sq);
    let guard = opts.rho * op_norm * op_norm;
    let mu = match opts.mu {
        Some(mu) if mu < guard => {
            return Err(Error::Argument(format!(
                "mu = {mu} is below rho (||Sp|| ||Sq||)^2 = {guard}"
            )))
        }
        Some(mu) => mu,
        None => guard,
    };

    let c = sp - sq;
    let lower = c.map(|x| -x - eps);
    let upper = c.map(|x| -x + eps);
    if mu == 0.0 {
        // Sp or Sq is zero: the residual is the constant C.
        let status = if sup_norm(&c) <= eps { CpStatus::Converged } else { CpStatus::Infeasible };
        let report = CpReport {
            status,
            iterations: 0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            objective: 0.0,
            mu,
            z: DMatrix::zeros(m, m),
        };
        return Ok((DMatrix::zeros(m, m), report));
    }

    let clamp = |a: &DMatrix<f64>| {
        DMatrix::from_fn(m, m, |i, j| a[(i, j)].clamp(lower[(i, j)], upper[(i, j)]))
    };
    let inv_mu = 1.0 / mu;
    let mut delta = DMatrix::<f64>::zeros(m, m);
    let mut a_delta = DMatrix::<f64>::zeros(m, m);
    let mut z = clamp(&a_delta);
    let mut u = DMatrix::<f64>::zeros(m, m);
    let mut status = CpStatus::MaxIter;
    let mut iterations = 0;
    let (mut r, mut s) = (f64::INFINITY, f64::INFINITY);
    let mut history = Vec::with_capacity(opts.max_iterations);

    for iter in 1..=opts.max_iterations {
        iterations = iter;
        let g = &a_delta - &z + &u;
        let grad = sp * g * sq;
        let mut next = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..m {
                let step = opts.rho * 0.5 * (grad[(i, j)] + grad[(j, i)]) * inv_mu;
                let x = delta[(i, j)] - step;
                next[(i, j)] = x.signum() * (x.abs() - inv_mu).max(0.0);
            }
        }
        let d_change = sup_norm(&(&next - &delta));
        delta = next;
        a_delta = sp * &delta * sq;
        let z_next = clamp(&(&a_delta + &u));
        let z_change = sp * (&z_next - &z) * sq;
        z = z_next;
        let primal = &a_delta - &z;
        u += &primal;

        r = sup_norm(&primal);
        s = (opts.rho * sup_norm(&z_change)).max(mu * d_change);
        history.push(r);
        if r <= opts.primal_tolerance && s <= opts.dual_tolerance {
            status = CpStatus::Converged;
            break;
        }
    }

    if status == CpStatus::MaxIter && r > 1e-3_f64.max(1e3 * opts.primal_tolerance) {
        // A stalled primal residual is the ADMM signature of an empty box.
        let tail = &history[history.len() * 3 / 4..];
        let min_tail = tail.iter().copied().fold(f64::INFINITY, f64::min);
        if min_tail > 0.5 * tail[0] {
            status = CpStatus::Infeasible;
        }
    }

    let sym = (&delta + delta.transpose()) * 0.5;
    let objective = sym.iter().map(|x| x.abs()).sum();
    let report = CpReport {
        status,
        iterations,
        primal_residual: r,
        dual_residual: s,
        objective,
        mu,
        z,
    };
    Ok((sym, report))
}

/// Diagonal and lower-triangular entries as 1-based `(u, v, value)` triples, `u >= v`.
pub fn matrix_edge_list(delta: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let m = delta.nrows();
    let mut out = Vec::with_capacity(m * (m + 1) / 2);
    for u in 0..m {
        for v in 0..=u {
            out.push((u + 1, v + 1, delta[(u, v)]));
        }
    }
    out
}

/// JSON layout for a matching estimate; shares the grouped edge-list shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CpSolutionFile {
    pub m: usize,
    pub b: usize,
    pub edge_order: String,
    pub epsilon: f64,
    pub tau: f64,
    pub blocks: Vec<(usize, usize, Vec<f64>)>,
    pub objective: f64,
    pub status: CpStatus,
}

impl CpSolutionFile {
    pub fn new(delta: &DMatrix<f64>, epsilon: f64, tau: f64, status: CpStatus) -> Self {
        Self {
            m: delta.nrows(),
            b: 1,
            edge_order: crate::solver::EDGE_ORDER.to_string(),
            epsilon,
            tau,
            blocks: matrix_edge_list(delta)
                .into_iter()
                .map(|(u, v, x)| (u, v, vec![x]))
                .collect(),
            objective: delta.iter().map(|x| x.abs()).sum(),
            status,
        }
    }
}
