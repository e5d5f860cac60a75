//! Order-deterministic pairwise summation.
//!
//! Reductions over samples go through these helpers so that the reduction
//! tree depends only on the input length. Repeated runs, and runs on any
//! number of worker threads, therefore produce bit-identical results.

const LEAF: usize = 32;

/// Pairwise sum of `f(i)` for `i` in `0..n`.
pub fn pairwise_sum<F: Fn(usize) -> f64>(n: usize, f: F) -> f64 {
    fn go<F: Fn(usize) -> f64>(lo: usize, hi: usize, f: &F) -> f64 {
        if hi - lo <= LEAF {
            let mut s = 0.0;
            for i in lo..hi {
                s += f(i);
            }
            s
        } else {
            let mid = lo + (hi - lo) / 2;
            go(lo, mid, f) + go(mid, hi, f)
        }
    }
    go(0, n, &f)
}

/// Pairwise accumulation of `w(i) * row(i)` into a vector of length `dim`.
pub fn pairwise_weighted_rows<'a, W, R>(n: usize, dim: usize, w: W, row: R) -> Vec<f64>
where
    W: Fn(usize) -> f64,
    R: Fn(usize) -> &'a [f64],
{
    fn go<'a, W, R>(lo: usize, hi: usize, dim: usize, w: &W, row: &R) -> Vec<f64>
    where
        W: Fn(usize) -> f64,
        R: Fn(usize) -> &'a [f64],
    {
        if hi - lo <= LEAF {
            let mut acc = vec![0.0; dim];
            for i in lo..hi {
                let wi = w(i);
                if wi == 0.0 {
                    continue;
                }
                for (a, &x) in acc.iter_mut().zip(row(i)) {
                    *a += wi * x;
                }
            }
            acc
        } else {
            let mid = lo + (hi - lo) / 2;
            let mut left = go(lo, mid, dim, w, row);
            let right = go(mid, hi, dim, w, row);
            for (a, b) in left.iter_mut().zip(&right) {
                *a += b;
            }
            left
        }
    }
    go(0, n, dim, &w, &row)
}

/// Numerically stable `log(mean(exp(values)))`.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let s = pairwise_sum(values.len(), |i| (values[i] - max).exp());
    max + (s / values.len() as f64).ln()
}

/// Max-shifted softmax weights; they sum to one.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = values.iter().map(|&v| (v - max).exp()).collect();
    let s = pairwise_sum(e.len(), |i| e[i]);
    e.into_iter().map(|x| x / s).collect()
}
