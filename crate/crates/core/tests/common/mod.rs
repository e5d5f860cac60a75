//! Shared helpers for integration tests: random instances and reference solvers.
#![allow(dead_code)]

use std::sync::Arc;

use mn_delta::model::{eval_features, Dataset, DeltaParams, EdgeSet, FeatureMap, FeatureTensor};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, m: usize, scale: f64) -> Dataset {
    let values = (0..n * m).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
    Dataset::new(n, m, values).unwrap()
}

/// A small random KLIEP instance with full edges and product features.
pub struct Instance {
    pub fp: FeatureTensor,
    pub fq: FeatureTensor,
    pub edges: Arc<EdgeSet>,
}

pub fn random_instance(rng: &mut ChaCha8Rng, m: usize, np: usize, nq: usize, fmap: FeatureMap) -> Instance {
    let edges = Arc::new(EdgeSet::full(m).unwrap());
    let xp = random_dataset(rng, np, m, 1.0);
    let xq = random_dataset(rng, nq, m, 1.3);
    Instance {
        fp: eval_features(&xp, edges.clone(), fmap).unwrap(),
        fq: eval_features(&xq, edges.clone(), fmap).unwrap(),
        edges,
    }
}

pub fn random_delta(rng: &mut ChaCha8Rng, edges: &Arc<EdgeSet>, scale: f64) -> DeltaParams {
    let coeffs = (0..edges.len()).map(|_| rng.random_range(-1.0..1.0) * scale).collect();
    DeltaParams::from_coeffs(edges.clone(), 1, coeffs).unwrap()
}

/// Random symmetric positive definite matrix `B B^T / m + shift I`.
pub fn random_spd(rng: &mut ChaCha8Rng, m: usize, shift: f64) -> DMatrix<f64> {
    let b = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
    let s = &b * b.transpose() / m as f64 + DMatrix::identity(m, m) * shift;
    (&s + s.transpose()) * 0.5
}

/// Newton's method on the unregularized KLIEP loss.
pub fn newton_reference(inst: &Instance, iterations: usize) -> Vec<f64> {
    let d = inst.fp.width();
    let kliep = mn_delta::kliep::Kliep::new(&inst.fp, &inst.fq).unwrap();
    let mut x = vec![0.0; d];
    for _ in 0..iterations {
        let delta = DeltaParams::from_coeffs(inst.edges.clone(), 1, x.clone()).unwrap();
        let (_, g) = kliep.loss_grad_at(&x);
        let h = mn_delta::kliep::hessian(&delta, &inst.fq, 4096).unwrap();
        let step = h.lu().solve(&DVector::from_vec(g)).unwrap();
        for (xi, si) in x.iter_mut().zip(step.iter()) {
            *xi -= si;
        }
    }
    x
}

/// Exact minimizer of `sum |D_ij|` over symmetric `D` with
/// `|Sp D Sq - (Sq - Sp)| <= eps` entrywise, by enumerating every vertex
/// formed by `k` active hyperplanes among the box faces and the
/// coordinate planes `x_i = 0` (`k = m(m+1)/2` free entries).
///
/// Returns the optimal objective and all distinct optimal vertices, or
/// `None` when infeasible.
pub fn lp_oracle(sp: &DMatrix<f64>, sq: &DMatrix<f64>, eps: f64) -> Option<(f64, Vec<DMatrix<f64>>)> {
    let m = sp.nrows();
    let pairs: Vec<(usize, usize)> = (0..m).flat_map(|u| (0..=u).map(move |v| (u, v))).collect();
    let k = pairs.len();
    let weight: Vec<f64> = pairs.iter().map(|&(u, v)| if u == v { 1.0 } else { 2.0 }).collect();
    // rows: (Sp E_uv Sq)_ij for each entry (i, j) as a linear function of x
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut target = Vec::new();
    for i in 0..m {
        for j in 0..m {
            let row = pairs
                .iter()
                .map(|&(u, v)| {
                    if u == v {
                        sp[(i, u)] * sq[(u, j)]
                    } else {
                        sp[(i, u)] * sq[(v, j)] + sp[(i, v)] * sq[(u, j)]
                    }
                })
                .collect();
            rows.push(row);
            target.push(sq[(i, j)] - sp[(i, j)]);
        }
    }
    // hyperplanes a.x = b
    let mut planes: Vec<(Vec<f64>, f64)> = Vec::new();
    for (row, t) in rows.iter().zip(&target) {
        planes.push((row.clone(), t - eps));
        planes.push((row.clone(), t + eps));
    }
    for c in 0..k {
        let mut e = vec![0.0; k];
        e[c] = 1.0;
        planes.push((e, 0.0));
    }
    let feasible = |x: &DVector<f64>| {
        rows.iter().zip(&target).all(|(row, t)| {
            let v: f64 = row.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
            (v - t).abs() <= eps + 1e-9
        })
    };

    let mut best: Option<(f64, Vec<DVector<f64>>)> = None;
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        let a = DMatrix::from_fn(k, k, |r, c| planes[idx[r]].0[c]);
        let b = DVector::from_fn(k, |r, _| planes[idx[r]].1);
        let lu = a.lu();
        if lu.determinant().abs() > 1e-12 {
            if let Some(x) = lu.solve(&b) {
                if feasible(&x) {
                    let obj: f64 = x.iter().zip(&weight).map(|(v, w)| v.abs() * w).sum();
                    match &mut best {
                        None => best = Some((obj, vec![x])),
                        Some((o, xs)) => {
                            if obj < *o - 1e-10 {
                                *o = obj;
                                *xs = vec![x];
                            } else if (obj - *o).abs() <= 1e-10
                                && xs.iter().all(|y| (y - &x).amax() > 1e-8)
                            {
                                xs.push(x);
                            }
                        }
                    }
                }
            }
        }
        // next k-combination of planes
        let n = planes.len();
        let mut i = k;
        loop {
            if i == 0 {
                let (obj, xs) = best?;
                let mats = xs
                    .into_iter()
                    .map(|x| {
                        let mut d = DMatrix::zeros(m, m);
                        for (c, &(u, v)) in pairs.iter().enumerate() {
                            d[(u, v)] = x[c];
                            d[(v, u)] = x[c];
                        }
                        d
                    })
                    .collect();
                return Some((obj, mats));
            }
            i -= 1;
            if idx[i] < n - k + i {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

/// Central finite-difference gradient of `f` at `x`.
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = f(&y);
            y[i] = x[i] - h;
            let down = f(&y);
            y[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Relative error `||a - b|| / max(||b||, 1e-12)` in the Euclidean norm.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den.max(1e-12)
}
