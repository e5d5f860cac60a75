//! Support-recovery rates, ROC curves, AUC and assumption diagnostics.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kliep::hessian_columns;
use crate::model::{DeltaParams, EdgeSet, FeatureTensor};

/// True positive / true negative rates; `None` when the reference class is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub tpr: Option<f64>,
    pub tnr: Option<f64>,
}

/// Rates of an estimated support against a true support over the same edges.
pub fn tpr_tnr(estimate: &[bool], truth: &[bool]) -> Result<Rates> {
    if estimate.len() != truth.len() {
        return Err(Error::Shape(format!(
            "estimate over {} edges, truth over {}",
            estimate.len(),
            truth.len()
        )));
    }
    let (mut pos, mut tp, mut neg, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&e, &t) in estimate.iter().zip(truth) {
        if t {
            pos += 1;
            tp += e as usize;
        } else {
            neg += 1;
            tn += !e as usize;
        }
    }
    let rate = |hit: usize, total: usize| (total > 0).then(|| hit as f64 / total as f64);
    Ok(Rates {
        tpr: rate(tp, pos),
        tnr: rate(tn, neg),
    })
}

/// Nonzero-block indicator of a grouped parameter.
pub fn support_mask(delta: &DeltaParams) -> Vec<bool> {
    (0..delta.edges().len())
        .map(|k| delta.block(k).iter().any(|&c| c != 0.0))
        .collect()
}

/// Nonzero indicator of a matrix estimate over an edge set (`u >= v` entries).
pub fn matrix_support(delta: &DMatrix<f64>, edges: &EdgeSet) -> Result<Vec<bool>> {
    if delta.nrows() != edges.m() || delta.ncols() != edges.m() {
        return Err(Error::Shape(format!(
            "{}x{} matrix against {} variables",
            delta.nrows(),
            delta.ncols(),
            edges.m()
        )));
    }
    Ok(edges.edges().iter().map(|&(u, v)| delta[(u, v)] != 0.0).collect())
}

pub fn rates_for_delta(estimate: &DeltaParams, truth: &DeltaParams) -> Result<Rates> {
    if estimate.edges() != truth.edges() {
        return Err(Error::Shape("estimate and truth use different edge sets".into()));
    }
    tpr_tnr(&support_mask(estimate), &support_mask(truth))
}

pub fn rates_for_matrix(estimate: &DMatrix<f64>, truth: &DeltaParams) -> Result<Rates> {
    tpr_tnr(&matrix_support(estimate, truth.edges())?, &support_mask(truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sweep {
    Lambda,
    Tau,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub param: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points sorted by FPR; `(0,0)` and `(1,1)` are implicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub sweep: Sweep,
    pub points: Vec<RocPoint>,
}

impl RocCurve {
    /// Builds a curve from `(param, estimated support)` pairs.
    ///
    /// Points sharing an FPR collapse to the one with the largest TPR.
    pub fn from_supports<'a, I>(sweep: Sweep, supports: I, truth: &[bool]) -> Result<Self>
    where
        I: IntoIterator<Item = (f64, &'a [bool])>,
    {
        let mut raw = Vec::new();
        for (param, est) in supports {
            let r = tpr_tnr(est, truth)?;
            let (Some(tpr), Some(tnr)) = (r.tpr, r.tnr) else {
                return Err(Error::Argument(
                    "ROC needs a truth with both changed and unchanged edges".into(),
                ));
            };
            raw.push(RocPoint {
                param,
                fpr: 1.0 - tnr,
                tpr,
            });
        }
        if raw.is_empty() {
            return Err(Error::Argument("ROC needs at least one path entry".into()));
        }
        Ok(Self::from_points(sweep, raw))
    }

    pub fn from_points(sweep: Sweep, mut raw: Vec<RocPoint>) -> Self {
        // by FPR, best TPR first, then by parameter for a stable tie-break
        raw.sort_by(|a, b| {
            a.fpr
                .total_cmp(&b.fpr)
                .then(b.tpr.total_cmp(&a.tpr))
                .then(b.param.total_cmp(&a.param))
        });
        raw.dedup_by(|later, first| later.fpr == first.fpr);
        Self { sweep, points: raw }
    }

    /// Points including the `(0,0)` and `(1,1)` endpoints.
    pub fn with_endpoints(&self) -> Vec<(f64, f64)> {
        let mut pts = vec![(0.0, 0.0)];
        pts.extend(self.points.iter().map(|p| (p.fpr, p.tpr)));
        pts.push((1.0, 1.0));
        pts
    }
}

/// Trapezoidal area under the curve, endpoints included.
///
/// Points are sorted here, so the input order does not matter.
pub fn auc(curve: &RocCurve) -> f64 {
    let mut pts = curve.with_endpoints();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) * 0.5)
        .sum()
}

/// Measured Fisher-information assumption quantities at a parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub support_size: usize,
    /// Smallest eigenvalue of `I_SS`.
    pub lambda_min: f64,
    /// `max over unchanged edges of ||I_tS I_SS^{-1}||_1` (sum of absolute entries).
    pub incoherence: Option<f64>,
    /// `1 - incoherence`.
    pub alpha: Option<f64>,
    pub dependency_satisfied: bool,
    pub incoherence_satisfied: bool,
    pub singular: bool,
}

/// Evaluates the restricted-eigenvalue and incoherence quantities of the
/// Fisher information at `delta` over the support `support` (edge indices).
pub fn diagnose_assumptions(
    delta: &DeltaParams,
    fq: &FeatureTensor,
    support: &[usize],
    cap: usize,
) -> Result<AssumptionReport> {
    if support.is_empty() {
        return Err(Error::Argument("diagnostics need a nonempty support".into()));
    }
    let n_edges = fq.edges().len();
    if let Some(&k) = support.iter().find(|&&k| k >= n_edges) {
        return Err(Error::Shape(format!("support edge {k} outside {n_edges} edges")));
    }
    let b = fq.block_size();
    let mut s_sorted = support.to_vec();
    s_sorted.sort_unstable();
    s_sorted.dedup();
    let cols: Vec<usize> = s_sorted.iter().flat_map(|&k| k * b..(k + 1) * b).collect();
    if cols.len() > cap {
        return Err(Error::Size { dim: cols.len(), cap });
    }
    let h = hessian_columns(delta, fq, &cols)?;
    let d = cols.len();
    let iss = DMatrix::from_fn(d, d, |i, j| 0.5 * (h[(cols[i], j)] + h[(cols[j], i)]));
    let eig = SymmetricEigen::new(iss.clone()).eigenvalues;
    let lambda_min = eig.min();
    let scale = eig.iter().fold(0.0_f64, |a, &e| a.max(e.abs())).max(f64::MIN_POSITIVE);
    let singular = !(lambda_min > scale * 1e-12);

    let mut report = AssumptionReport {
        support_size: s_sorted.len(),
        lambda_min,
        incoherence: None,
        alpha: None,
        dependency_satisfied: !singular && lambda_min > 0.0,
        incoherence_satisfied: false,
        singular,
    };
    if singular {
        return Ok(report);
    }
    let inv = iss
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Numeric("I_SS factorization failed".into()))?;

    let in_s: std::collections::HashSet<usize> = s_sorted.iter().copied().collect();
    let mut worst = 0.0_f64;
    for k in (0..n_edges).filter(|k| !in_s.contains(k)) {
        let rows = DMatrix::from_fn(b, d, |r, c| h[(k * b + r, c)]);
        let prod = rows * &inv;
        worst = worst.max(prod.iter().map(|x| x.abs()).sum());
    }
    let alpha = 1.0 - worst;
    report.incoherence = Some(worst);
    report.alpha = Some(alpha);
    report.incoherence_satisfied = alpha > 0.0;
    Ok(report)
}
