//! Ground-truth Gaussian Markov networks, edge perturbation and sampling.
//!
//! Precision matrices follow the recipe `Theta_ii = 2`, `Theta_ij = 0.4` on
//! edges. Samples are zero-mean.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Dataset, DeltaParams, EdgeSet};
use crate::seed::derive_seed;

pub const DIAGONAL: f64 = 2.0;
pub const EDGE_WEIGHT: f64 = 0.4;
const REPAIR_ATTEMPTS: u64 = 100;

/// Symmetric 0/1 adjacency with zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    m: usize,
    bits: Vec<bool>,
}

impl Adjacency {
    pub fn empty(m: usize) -> Self {
        Self {
            m,
            bits: vec![false; m * m],
        }
    }

    pub fn from_edges(m: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut a = Self::empty(m);
        for &(u, v) in edges {
            if u >= m || v >= m || u == v {
                return Err(Error::InvalidEdge { u, v, m });
            }
            a.set(u, v, true);
        }
        Ok(a)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn has(&self, u: usize, v: usize) -> bool {
        self.bits[u * self.m + v]
    }

    fn set(&mut self, u: usize, v: usize, on: bool) {
        self.bits[u * self.m + v] = on;
        self.bits[v * self.m + u] = on;
    }

    /// Edges as `(u, v)` with `u > v`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        (0..self.m)
            .flat_map(|u| (0..u).map(move |v| (u, v)))
            .filter(|&(u, v)| self.has(u, v))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.edges().len()
    }

    pub fn degree(&self, u: usize) -> usize {
        (0..self.m).filter(|&v| self.has(u, v)).count()
    }
}

/// Each lower-triangular pair is an edge with probability `density`.
pub fn gen_random_graph(m: usize, density: f64, seed: u64) -> Result<Adjacency> {
    if m < 2 {
        return Err(Error::Argument("random graph needs m >= 2".into()));
    }
    if !(0.0..=1.0).contains(&density) {
        return Err(Error::Argument(format!("density {density} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut a = Adjacency::empty(m);
    for u in 0..m {
        for v in 0..u {
            if rng.random::<f64>() < density {
                a.set(u, v, true);
            }
        }
    }
    Ok(a)
}

/// Four-neighbour lattice on a `side x side` grid, `m = side^2`.
pub fn gen_lattice_graph(side: usize) -> Result<Adjacency> {
    if side < 2 {
        return Err(Error::Argument("lattice needs side >= 2".into()));
    }
    let mut a = Adjacency::empty(side * side);
    for r in 0..side {
        for c in 0..side {
            let i = r * side + c;
            if c + 1 < side {
                a.set(i, i + 1, true);
            }
            if r + 1 < side {
                a.set(i, i + side, true);
            }
        }
    }
    Ok(a)
}

/// Deletes `d` uniformly chosen existing edges.
pub fn perturb_remove_edges(a: &Adjacency, d: usize, seed: u64) -> Result<Adjacency> {
    let edges = a.edges();
    if d > edges.len() {
        return Err(Error::Argument(format!(
            "cannot remove {d} edges from a graph with {}",
            edges.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample_indices(&mut rng, edges.len(), d).into_vec();
    picked.sort_unstable();
    let mut out = a.clone();
    for k in picked {
        let (u, v) = edges[k];
        out.set(u, v, false);
    }
    Ok(out)
}

/// Gaussian MN: adjacency plus positive definite precision.
#[derive(Debug, Clone)]
pub struct GaussianMN {
    pub adjacency: Adjacency,
    pub precision: DMatrix<f64>,
    pub diagonal: f64,
    /// Set when the diagonal had to be raised above 2 to reach positive definiteness.
    pub diagonal_raised: bool,
    pub seed: u64,
}

impl GaussianMN {
    pub fn m(&self) -> usize {
        self.adjacency.m()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        nalgebra::SymmetricEigen::new(self.precision.clone())
            .eigenvalues
            .min()
    }
}

fn assemble(a: &Adjacency, diagonal: f64) -> DMatrix<f64> {
    let m = a.m();
    DMatrix::from_fn(m, m, |i, j| {
        if i == j {
            diagonal
        } else if a.has(i, j) {
            EDGE_WEIGHT
        } else {
            0.0
        }
    })
}

/// Precision with the standard diagonal; fails if it is not positive definite.
pub fn build_precision(a: &Adjacency) -> Result<GaussianMN> {
    build_precision_with_diagonal(a, DIAGONAL)
}

pub fn build_precision_with_diagonal(a: &Adjacency, diagonal: f64) -> Result<GaussianMN> {
    let precision = assemble(a, diagonal);
    if Cholesky::new(precision.clone()).is_none() {
        return Err(Error::Generation(format!(
            "precision with diagonal {diagonal} is not positive definite"
        )));
    }
    Ok(GaussianMN {
        adjacency: a.clone(),
        precision,
        diagonal,
        diagonal_raised: diagonal != DIAGONAL,
        seed: 0,
    })
}

fn max_offdiag_row_sum(a: &Adjacency) -> f64 {
    (0..a.m())
        .map(|u| a.degree(u) as f64 * EDGE_WEIGHT)
        .fold(0.0, f64::max)
}

/// Which base graph a change pair starts from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "graph", rename_all = "lowercase")]
pub enum GraphKind {
    Random { m: usize, density: f64 },
    Lattice { side: usize },
}

impl GraphKind {
    pub fn m(&self) -> usize {
        match *self {
            GraphKind::Random { m, .. } => m,
            GraphKind::Lattice { side } => side * side,
        }
    }
}

/// Two networks where `q` is `p` with `d` edges removed.
#[derive(Debug, Clone)]
pub struct ChangePair {
    pub p: GaussianMN,
    pub q: GaussianMN,
    pub removed: Vec<(usize, usize)>,
    /// Number of adjacency resamples before a positive definite pair was found.
    pub resamples: u64,
}

impl ChangePair {
    pub fn true_delta(&self) -> Result<DeltaParams> {
        true_delta(&self.p.precision, &self.q.precision)
    }
}

/// Builds a change pair, resampling the base graph with fresh sub-seeds until
/// both precisions are positive definite at the standard diagonal; after
/// 100 attempts the diagonal is raised to `max row sum + 0.1`.
pub fn change_pair(kind: GraphKind, d: usize, seed: u64) -> Result<ChangePair> {
    let mut last = None;
    for attempt in 0..REPAIR_ATTEMPTS {
        let sub = derive_seed(seed, attempt);
        let base = match kind {
            GraphKind::Random { m, density } => gen_random_graph(m, density, sub)?,
            GraphKind::Lattice { side } => gen_lattice_graph(side)?,
        };
        let reduced = perturb_remove_edges(&base, d, derive_seed(sub, 1))?;
        if let (Ok(p), Ok(q)) = (build_precision(&base), build_precision(&reduced)) {
            return Ok(pair(p, q, &base, &reduced, seed, attempt));
        }
        last = Some((base, reduced));
        if matches!(kind, GraphKind::Lattice { .. }) {
            break;
        }
    }
    let (base, reduced) = last.expect("at least one attempt");
    let diagonal = max_offdiag_row_sum(&base) + 0.1;
    let p = build_precision_with_diagonal(&base, diagonal)?;
    let q = build_precision_with_diagonal(&reduced, diagonal)?;
    Ok(pair(p, q, &base, &reduced, seed, REPAIR_ATTEMPTS))
}

fn pair(
    mut p: GaussianMN,
    mut q: GaussianMN,
    base: &Adjacency,
    reduced: &Adjacency,
    seed: u64,
    resamples: u64,
) -> ChangePair {
    p.seed = seed;
    q.seed = seed;
    let removed = base
        .edges()
        .into_iter()
        .filter(|&(u, v)| !reduced.has(u, v))
        .collect();
    ChangePair {
        p,
        q,
        removed,
        resamples,
    }
}

/// `n` zero-mean draws with covariance `Theta^{-1}`.
pub fn sample_gaussian(model: &GaussianMN, n: usize, seed: u64) -> Result<Dataset> {
    let m = model.m();
    let chol = Cholesky::new(model.precision.clone())
        .ok_or_else(|| Error::Numeric("precision is not positive definite".into()))?;
    let sigma = chol.inverse();
    let sigma = (&sigma + sigma.transpose()) * 0.5;
    let factor = Cholesky::new(sigma)
        .ok_or_else(|| Error::Numeric("covariance factorization failed".into()))?
        .l();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(n * m);
    let mut z = DVector::zeros(m);
    for _ in 0..n {
        for zi in z.iter_mut() {
            *zi = rng.sample(StandardNormal);
        }
        let x = &factor * &z;
        values.extend(x.iter());
    }
    Dataset::new(n, m, values)
}

/// Product-feature change parameter implied by two precisions.
///
/// Expanding `-x^T Theta x / 2` over `u >= v` gives
/// `delta_uu = -(Tp - Tq)_uu / 2` and `delta_uv = -(Tp - Tq)_uv`.
pub fn true_delta(theta_p: &DMatrix<f64>, theta_q: &DMatrix<f64>) -> Result<DeltaParams> {
    if theta_p.shape() != theta_q.shape() || !theta_p.is_square() {
        return Err(Error::Shape(format!(
            "precisions of shape {:?} and {:?}",
            theta_p.shape(),
            theta_q.shape()
        )));
    }
    let m = theta_p.nrows();
    let edges = Arc::new(EdgeSet::full(m)?);
    let coeffs = edges
        .edges()
        .iter()
        .map(|&(u, v)| {
            let diff = theta_p[(u, v)] - theta_q[(u, v)];
            if u == v {
                -diff / 2.0
            } else {
                -diff
            }
        })
        .collect();
    DeltaParams::from_coeffs(edges, 1, coeffs)
}

/// Audit export of a generated pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub m: usize,
    pub seed: u64,
    pub diagonal: f64,
    pub diagonal_raised: bool,
    pub resamples: u64,
    /// 1-based `(u, v)`, `u > v`.
    pub edges_p: Vec<(usize, usize)>,
    pub edges_q: Vec<(usize, usize)>,
    pub removed: Vec<(usize, usize)>,
    pub theta_p: Vec<Vec<f64>>,
    pub theta_q: Vec<Vec<f64>>,
    pub true_delta: crate::solver::SolutionFile,
}

impl GroundTruthFile {
    pub fn new(pair: &ChangePair) -> Result<Self> {
        let one = |e: Vec<(usize, usize)>| e.into_iter().map(|(u, v)| (u + 1, v + 1)).collect();
        let rows = |t: &DMatrix<f64>| (0..t.nrows()).map(|i| t.row(i).iter().copied().collect()).collect();
        let delta = pair.true_delta()?;
        Ok(Self {
            m: pair.p.m(),
            seed: pair.p.seed,
            diagonal: pair.p.diagonal,
            diagonal_raised: pair.p.diagonal_raised,
            resamples: pair.resamples,
            edges_p: one(pair.p.adjacency.edges()),
            edges_q: one(pair.q.adjacency.edges()),
            removed: one(pair.removed.clone()),
            theta_p: rows(&pair.p.precision),
            theta_q: rows(&pair.q.precision),
            true_delta: crate::solver::SolutionFile::from_delta(&delta, 0.0, 0.0),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_edge_counts() {
        assert_eq!(gen_lattice_graph(2).unwrap().edge_count(), 4);
        assert_eq!(gen_lattice_graph(3).unwrap().edge_count(), 12);
        assert_eq!(gen_lattice_graph(10).unwrap().edge_count(), 180);
    }

    #[test]
    fn random_graph_determinism_and_empty() {
        assert_eq!(gen_random_graph(30, 0.0, 1).unwrap().edge_count(), 0);
        assert_eq!(gen_random_graph(30, 0.2, 5).unwrap(), gen_random_graph(30, 0.2, 5).unwrap());
        assert!(gen_random_graph(1, 0.2, 5).is_err());
    }

    #[test]
    fn random_graph_mean_edge_count() {
        let total: usize = (0..1000).map(|s| gen_random_graph(50, 0.1, s).unwrap().edge_count()).sum();
        let mean = total as f64 / 1000.0;
        assert!((mean - 122.5).abs() < 10.0, "{mean}");
    }

    #[test]
    fn edge_removal() {
        let a = gen_lattice_graph(3).unwrap();
        assert_eq!(perturb_remove_edges(&a, 0, 1).unwrap(), a);
        assert_eq!(perturb_remove_edges(&a, 12, 1).unwrap().edge_count(), 0);
        assert!(perturb_remove_edges(&a, 13, 1).is_err());
        let r = perturb_remove_edges(&a, 5, 9).unwrap();
        assert_eq!(r.edge_count(), 7);
        assert!(r.edges().iter().all(|&(u, v)| a.has(u, v)));
    }

    #[test]
    fn precision_spectra() {
        let e = build_precision(&Adjacency::empty(4)).unwrap();
        assert!((e.min_eigenvalue() - 2.0).abs() < 1e-12);
        let one = build_precision(&Adjacency::from_edges(2, &[(1, 0)]).unwrap()).unwrap();
        let eig = nalgebra::SymmetricEigen::new(one.precision.clone()).eigenvalues;
        let (lo, hi) = (eig.min(), eig.max());
        assert!((lo - 1.6).abs() < 1e-12 && (hi - 2.4).abs() < 1e-12);
        for side in 2..8 {
            let a = gen_lattice_graph(side).unwrap();
            assert!(max_offdiag_row_sum(&a) <= 1.6 + 1e-12);
            assert!(build_precision(&a).unwrap().min_eigenvalue() > 0.0);
        }
    }

    #[test]
    fn sampling_basics() {
        let g = build_precision(&Adjacency::empty(3)).unwrap();
        let one = sample_gaussian(&g, 1, 3).unwrap();
        assert_eq!(one.n(), 1);
        assert_eq!(sample_gaussian(&g, 50, 3).unwrap(), sample_gaussian(&g, 50, 3).unwrap());
        assert_ne!(sample_gaussian(&g, 50, 3).unwrap(), sample_gaussian(&g, 50, 4).unwrap());
    }

    #[test]
    fn true_delta_mapping() {
        let a = Adjacency::from_edges(3, &[(1, 0), (2, 1)]).unwrap();
        let b = Adjacency::from_edges(3, &[(2, 1)]).unwrap();
        let p = build_precision(&a).unwrap();
        let q = build_precision(&b).unwrap();
        let d = true_delta(&p.precision, &q.precision).unwrap();
        let k = d.edges().position(1, 0).unwrap();
        assert!((d.block(k)[0] + 0.4).abs() < 1e-15);
        assert_eq!(d.support(), vec![k]);
        assert!(true_delta(&p.precision, &p.precision).unwrap().is_zero());
    }

    #[test]
    fn illustrative_pair_has_six_changes() {
        let pair = change_pair(GraphKind::Random { m: 50, density: 0.1 }, 6, 7).unwrap();
        assert_eq!(pair.removed.len(), 6);
        let d = pair.true_delta().unwrap();
        let support = d.support();
        assert_eq!(support.len(), 6);
        assert!(support.iter().all(|&k| {
            let (u, v) = d.edges().get(k);
            u != v
        }));
    }
}
