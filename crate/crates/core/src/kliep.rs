//! KLIEP change-detection loss, its gradient and its Hessian.
//!
//! All functions operate on materialized [`FeatureTensor`]s. The ratio weights
//! `w_j = r(x_j) / n_q` are evaluated as a max-shifted softmax of the scores
//! `<delta, Psi_j>`, so nothing overflows for large parameters.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{dot, DeltaParams, FeatureTensor};
use crate::sum::{log_mean_exp, pairwise_weighted_rows, softmax};

/// Default bound on the dimension of dense Hessians.
pub const DEFAULT_HESSIAN_CAP: usize = 4096;

/// Loss evaluator that caches the mean `p` feature row.
#[derive(Debug, Clone)]
pub struct Kliep<'a> {
    mean_p: Vec<f64>,
    fq: &'a FeatureTensor,
}

impl<'a> Kliep<'a> {
    pub fn new(fp: &FeatureTensor, fq: &'a FeatureTensor) -> Result<Self> {
        fp.check_aligned(fq)?;
        Ok(Self {
            mean_p: fp.mean_row(),
            fq,
        })
    }

    pub fn width(&self) -> usize {
        self.mean_p.len()
    }

    pub fn mean_p(&self) -> &[f64] {
        &self.mean_p
    }

    pub fn fq(&self) -> &FeatureTensor {
        self.fq
    }

    fn loss_from_scores(&self, coeffs: &[f64], scores: &[f64]) -> f64 {
        -dot(&self.mean_p, coeffs) + log_mean_exp(scores)
    }

    fn scores(&self, coeffs: &[f64]) -> Vec<f64> {
        (0..self.fq.n()).map(|j| dot(self.fq.row(j), coeffs)).collect()
    }

    /// Loss at a flat coefficient vector.
    pub fn loss_at(&self, coeffs: &[f64]) -> f64 {
        self.loss_from_scores(coeffs, &self.scores(coeffs))
    }

    /// Loss and gradient at a flat coefficient vector.
    pub fn loss_grad_at(&self, coeffs: &[f64]) -> (f64, Vec<f64>) {
        let scores = self.scores(coeffs);
        let loss = self.loss_from_scores(coeffs, &scores);
        let w = softmax(&scores);
        let mut grad = pairwise_weighted_rows(self.fq.n(), self.width(), |j| w[j], |j| self.fq.row(j));
        for (g, mp) in grad.iter_mut().zip(&self.mean_p) {
            *g -= mp;
        }
        (loss, grad)
    }

    pub fn loss(&self, delta: &DeltaParams) -> Result<f64> {
        self.fq.check_delta(delta)?;
        Ok(self.loss_at(delta.coeffs()))
    }

    pub fn gradient(&self, delta: &DeltaParams) -> Result<DeltaParams> {
        self.fq.check_delta(delta)?;
        let (_, g) = self.loss_grad_at(delta.coeffs());
        DeltaParams::from_coeffs(delta.edges().clone(), delta.block_size(), g)
    }
}

/// `-(1/n_p) sum <delta, Psi^p_i> + log((1/n_q) sum exp(<delta, Psi^q_j>))`
pub fn loss(delta: &DeltaParams, fp: &FeatureTensor, fq: &FeatureTensor) -> Result<f64> {
    Kliep::new(fp, fq)?.loss(delta)
}

/// Exact gradient of [`loss`], blockwise aligned with `delta`.
pub fn gradient(delta: &DeltaParams, fp: &FeatureTensor, fq: &FeatureTensor) -> Result<DeltaParams> {
    Kliep::new(fp, fq)?.gradient(delta)
}

/// Ratio weights `w_j = r(x_j^q; delta) / n_q`.
pub fn ratio_weights(delta: &DeltaParams, fq: &FeatureTensor) -> Result<Vec<f64>> {
    fq.check_delta(delta)?;
    Ok(softmax(&fq.scores(delta)))
}

fn centered_rows(delta: &DeltaParams, fq: &FeatureTensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let w = ratio_weights(delta, fq)?;
    let mean = pairwise_weighted_rows(fq.n(), fq.width(), |j| w[j], |j| fq.row(j));
    Ok((w, mean))
}

/// Sample Fisher information `sum_j w_j Psi_j Psi_j^T - mu mu^T`.
///
/// Refuses dimensions above `cap` because memory is quadratic.
pub fn hessian(delta: &DeltaParams, fq: &FeatureTensor, cap: usize) -> Result<DMatrix<f64>> {
    let d = fq.width();
    if d > cap {
        return Err(Error::Size { dim: d, cap });
    }
    let cols: Vec<usize> = (0..d).collect();
    let h = hessian_columns(delta, fq, &cols)?;
    Ok((&h + h.transpose()) * 0.5)
}

/// Selected columns of the Fisher information: a `width x cols.len()` matrix.
pub fn hessian_columns(delta: &DeltaParams, fq: &FeatureTensor, cols: &[usize]) -> Result<DMatrix<f64>> {
    let d = fq.width();
    if let Some(&c) = cols.iter().find(|&&c| c >= d) {
        return Err(Error::Shape(format!("column {c} outside width {d}")));
    }
    let (w, mean) = centered_rows(delta, fq)?;
    let n = fq.n();
    // Weighted, centered design: row j = sqrt(w_j) (Psi_j - mu).
    let full = DMatrix::from_fn(n, d, |j, k| w[j].sqrt() * (fq.row(j)[k] - mean[k]));
    let sub = DMatrix::from_fn(n, cols.len(), |j, c| full[(j, cols[c])]);
    Ok(full.tr_mul(&sub))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EdgeSet, FeatureMap};
    use std::sync::Arc;

    fn tensor(rows: &[&[f64]], edges: &Arc<EdgeSet>) -> FeatureTensor {
        let n = rows.len();
        FeatureTensor::from_parts(n, rows.concat(), edges.clone(), FeatureMap::Product).unwrap()
    }

    #[test]
    fn loss_hand_examples() {
        let e = Arc::new(EdgeSet::full(1).unwrap());
        let fp = tensor(&[&[1.0]], &e);
        let fq = tensor(&[&[0.0], &[3f64.ln()]], &e);
        let zero = DeltaParams::zeros(e.clone(), 1);
        assert_eq!(loss(&zero, &fp, &fq).unwrap(), 0.0);
        let one = DeltaParams::from_coeffs(e.clone(), 1, vec![1.0]).unwrap();
        let l = loss(&one, &fp, &fq).unwrap();
        assert!((l - (-1.0 + 2f64.ln())).abs() < 1e-14);
        assert!((l + 0.306853).abs() < 1e-6);

        let same = tensor(&[&[0.4]], &e);
        let d = DeltaParams::from_coeffs(e, 1, vec![-7.0]).unwrap();
        assert!(loss(&d, &same, &same).unwrap().abs() < 1e-15);
    }

    #[test]
    fn gradient_at_zero_is_mean_difference() {
        let e = Arc::new(EdgeSet::full(2).unwrap());
        let fp = tensor(&[&[1.0, 2.0, 3.0], &[3.0, 0.0, 1.0]], &e);
        let fq = tensor(&[&[0.0, 1.0, 1.0], &[2.0, 1.0, 0.0], &[1.0, 1.0, 2.0]], &e);
        let g = gradient(&DeltaParams::zeros(e.clone(), 1), &fp, &fq).unwrap();
        let expect = [1.0 - 2.0, 1.0 - 1.0, 1.0 - 2.0];
        for (a, b) in g.coeffs().iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let g0 = gradient(&DeltaParams::zeros(e, 1), &fp, &fp).unwrap();
        assert!(g0.coeffs().iter().all(|&c| c.abs() < 1e-15));
    }

    #[test]
    fn hessian_degenerate_cases() {
        let e = Arc::new(EdgeSet::full(2).unwrap());
        let fq = tensor(&[&[1.0, 2.0, 3.0]], &e);
        let d = DeltaParams::from_coeffs(e.clone(), 1, vec![0.3, -0.2, 0.1]).unwrap();
        let h = hessian(&d, &fq, 100).unwrap();
        assert!(h.iter().all(|&x| x == 0.0));
        assert!(matches!(hessian(&d, &fq, 2), Err(Error::Size { dim: 3, cap: 2 })));

        let fq2 = tensor(&[&[1.0, 0.0, 0.0], &[-1.0, 0.0, 2.0]], &e);
        let h0 = hessian(&DeltaParams::zeros(e, 1), &fq2, 100).unwrap();
        // uniform-weight covariance with denominator n
        assert!((h0[(0, 0)] - 1.0).abs() < 1e-15);
        assert!((h0[(0, 2)] + 1.0).abs() < 1e-15);
        assert!((h0[(2, 2)] - 1.0).abs() < 1e-15);
    }
}
