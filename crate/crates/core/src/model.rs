//! Edge indexing, pairwise features and the empirical density-ratio model.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sum::{log_mean_exp, pairwise_sum};

/// An `n x m` sample matrix, one observation per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    m: usize,
    values: Vec<f64>,
}

impl Dataset {
    pub fn new(n: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::Data(format!("empty dataset ({n} x {m})")));
        }
        if values.len() != n * m {
            return Err(Error::Shape(format!(
                "{} values for a {n} x {m} dataset",
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite entry at row {}, column {}",
                pos / m,
                pos % m
            )));
        }
        Ok(Self { n, m, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if let Some(i) = rows.iter().position(|r| r.len() != m) {
            return Err(Error::Data(format!("ragged row {i}")));
        }
        Self::new(n, m, rows.concat())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.m..(i + 1) * self.m]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Reads a headerless comma-separated file; ragged rows are rejected.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let fmt = |msg: String| Error::Format {
            path: path.to_path_buf(),
            msg,
        };
        let file = std::fs::File::open(path)?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(std::io::BufReader::new(file));
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| fmt(e.to_string()))?;
            let row = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|_| fmt(format!("row {i}: cannot parse {f:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::with_capacity(self.values.len() * 20);
        for i in 0..self.n {
            let row: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Ordered pair index system over `{(u, v) : u >= v}`, 0-based.
///
/// Edges are kept sorted by `(u, v)`; serialized forms use 1-based indices.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct EdgeSet {
    m: usize,
    edges: Vec<(usize, usize)>,
}

impl EdgeSet {
    /// Full triangular-plus-diagonal set, or exactly the given pairs.
    ///
    /// Restricted pairs are normalized to `u >= v`, deduplicated and sorted.
    pub fn build(m: usize, restriction: Option<&[(usize, usize)]>) -> Result<Self> {
        if m == 0 {
            return Err(Error::Argument("edge set dimension must be >= 1".into()));
        }
        let edges = match restriction {
            None => (0..m).flat_map(|u| (0..=u).map(move |v| (u, v))).collect(),
            Some(pairs) => {
                let mut edges = Vec::with_capacity(pairs.len());
                for &(a, b) in pairs {
                    if a >= m || b >= m {
                        return Err(Error::InvalidEdge { u: a, v: b, m });
                    }
                    edges.push((a.max(b), a.min(b)));
                }
                edges.sort_unstable();
                edges.dedup();
                edges
            }
        };
        Ok(Self { m, edges })
    }

    pub fn full(m: usize) -> Result<Self> {
        Self::build(m, None)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn get(&self, k: usize) -> (usize, usize) {
        self.edges[k]
    }

    pub fn position(&self, u: usize, v: usize) -> Option<usize> {
        let key = (u.max(v), u.min(v));
        self.edges.binary_search(&key).ok()
    }
}

/// Bivariate feature function applied to every edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureMap {
    /// `psi(a, b) = a * b`
    Product,
    /// `psi(a, b) = exp(-|a - b|^2 / bandwidth)`
    Rbf { bandwidth: f64 },
}

impl FeatureMap {
    pub fn rbf(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Argument(format!("rbf bandwidth must be > 0, got {bandwidth}")));
        }
        Ok(Self::Rbf { bandwidth })
    }

    /// Coefficients per edge.
    pub fn block_size(&self) -> usize {
        1
    }

    #[inline]
    pub fn eval(&self, a: f64, b: f64) -> f64 {
        match *self {
            FeatureMap::Product => a * b,
            FeatureMap::Rbf { bandwidth } => {
                let d = a - b;
                (-(d * d) / bandwidth).exp()
            }
        }
    }
}

/// Feature evaluations for a dataset: `n` rows of `|E| * b` entries.
#[derive(Debug, Clone)]
pub struct FeatureTensor {
    n: usize,
    width: usize,
    values: Vec<f64>,
    edges: Arc<EdgeSet>,
    feature_map: FeatureMap,
}

impl FeatureTensor {
    /// Wraps precomputed feature values; `values` is row-major.
    pub fn from_parts(
        n: usize,
        values: Vec<f64>,
        edges: Arc<EdgeSet>,
        feature_map: FeatureMap,
    ) -> Result<Self> {
        let width = edges.len() * feature_map.block_size();
        if n == 0 {
            return Err(Error::Data("feature tensor needs at least one row".into()));
        }
        if values.len() != n * width {
            return Err(Error::Shape(format!(
                "{} feature values for {n} rows of width {width}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature value".into()));
        }
        Ok(Self {
            n,
            width,
            values,
            edges,
            feature_map,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn block_size(&self) -> usize {
        self.feature_map.block_size()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.width..(i + 1) * self.width]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn edges(&self) -> &Arc<EdgeSet> {
        &self.edges
    }

    pub fn feature_map(&self) -> FeatureMap {
        self.feature_map
    }

    /// Column means, pairwise-summed.
    pub fn mean_row(&self) -> Vec<f64> {
        let inv = 1.0 / self.n as f64;
        crate::sum::pairwise_weighted_rows(self.n, self.width, |_| inv, |i| self.row(i))
    }

    /// `<delta, row_i>` for every row.
    pub fn scores(&self, delta: &DeltaParams) -> Vec<f64> {
        (0..self.n).map(|i| dot(self.row(i), delta.coeffs())).collect()
    }

    /// Checks that `other` shares this tensor's edge set and feature map.
    pub fn check_aligned(&self, other: &FeatureTensor) -> Result<()> {
        if self.width != other.width || *self.edges != *other.edges {
            return Err(Error::Shape("feature tensors use different edge sets".into()));
        }
        if self.feature_map != other.feature_map {
            return Err(Error::Shape("feature tensors use different feature maps".into()));
        }
        Ok(())
    }

    pub fn check_delta(&self, delta: &DeltaParams) -> Result<()> {
        if delta.coeffs().len() != self.width || **delta.edges() != *self.edges {
            return Err(Error::Shape(format!(
                "parameter of width {} against features of width {}",
                delta.coeffs().len(),
                self.width
            )));
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Evaluates `psi(x_u, x_v)` for every sample and edge.
pub fn eval_features(data: &Dataset, edges: Arc<EdgeSet>, fmap: FeatureMap) -> Result<FeatureTensor> {
    if edges.m() != data.m() {
        return Err(Error::Shape(format!(
            "edge set over {} variables, dataset has {}",
            edges.m(),
            data.m()
        )));
    }
    let width = edges.len() * fmap.block_size();
    let mut values = Vec::with_capacity(data.n() * width);
    for i in 0..data.n() {
        let x = data.row(i);
        values.extend(edges.edges().iter().map(|&(u, v)| fmap.eval(x[u], x[v])));
    }
    FeatureTensor::from_parts(data.n(), values, edges, fmap)
}

/// Grouped change parameter: one length-`b` block per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaParams {
    edges: Arc<EdgeSet>,
    b: usize,
    coeffs: Vec<f64>,
}

impl DeltaParams {
    pub fn zeros(edges: Arc<EdgeSet>, b: usize) -> Self {
        let coeffs = vec![0.0; edges.len() * b];
        Self { edges, b, coeffs }
    }

    pub fn from_coeffs(edges: Arc<EdgeSet>, b: usize, coeffs: Vec<f64>) -> Result<Self> {
        if b == 0 || coeffs.len() != edges.len() * b {
            return Err(Error::Shape(format!(
                "{} coefficients for {} edges of block size {b}",
                coeffs.len(),
                edges.len()
            )));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Data("non-finite coefficient".into()));
        }
        Ok(Self { edges, b, coeffs })
    }

    pub fn edges(&self) -> &Arc<EdgeSet> {
        &self.edges
    }

    pub fn block_size(&self) -> usize {
        self.b
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn block(&self, k: usize) -> &[f64] {
        &self.coeffs[k * self.b..(k + 1) * self.b]
    }

    pub fn block_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.coeffs[k * self.b..(k + 1) * self.b]
    }

    pub fn block_norm(&self, k: usize) -> f64 {
        self.block(k).iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    /// Edge indices whose block has nonzero norm.
    pub fn support(&self) -> Vec<usize> {
        (0..self.edges.len())
            .filter(|&k| self.block(k).iter().any(|&c| c != 0.0))
            .collect()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(|&c| c == 0.0)
    }

    /// Sum of block Euclidean norms.
    pub fn group_norm(&self) -> f64 {
        (0..self.edges.len()).map(|k| self.block_norm(k)).sum()
    }
}

/// Empirical normalizer in both log and linear form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Normalizer {
    pub log: f64,
    pub value: f64,
}

/// `(1/n_q) sum_i exp(<delta, Psi_i>)`, max-shifted.
pub fn empirical_normalizer(delta: &DeltaParams, fq: &FeatureTensor) -> Result<Normalizer> {
    fq.check_delta(delta)?;
    let log = log_mean_exp(&fq.scores(delta));
    Ok(Normalizer {
        log,
        value: log.exp(),
    })
}

/// Empirical density ratio `exp(<delta, psi(x)>) / N(delta)` at one feature row.
pub fn ratio_hat(features: &[f64], delta: &DeltaParams, fq: &FeatureTensor) -> Result<f64> {
    if features.len() != fq.width() {
        return Err(Error::Shape(format!(
            "feature row of length {} against width {}",
            features.len(),
            fq.width()
        )));
    }
    let norm = empirical_normalizer(delta, fq)?;
    Ok((dot(features, delta.coeffs()) - norm.log).exp())
}

/// Mean of `ratio_hat` over the rows of `fq`; equals one by construction.
pub fn mean_ratio(delta: &DeltaParams, fq: &FeatureTensor) -> Result<f64> {
    let norm = empirical_normalizer(delta, fq)?;
    let scores = fq.scores(delta);
    Ok(pairwise_sum(scores.len(), |i| (scores[i] - norm.log).exp()) / fq.n() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arc(e: EdgeSet) -> Arc<EdgeSet> {
        Arc::new(e)
    }

    #[test]
    fn full_edge_set_sizes() {
        let e = EdgeSet::full(2).unwrap();
        assert_eq!(e.edges(), &[(0, 0), (1, 0), (1, 1)]);
        assert_eq!(EdgeSet::full(1).unwrap().edges(), &[(0, 0)]);
        for m in 1..20 {
            assert_eq!(EdgeSet::full(m).unwrap().len(), (m * m + m) / 2);
        }
    }

    #[test]
    fn restricted_edge_set() {
        let e = EdgeSet::build(3, Some(&[(2, 2), (1, 0)])).unwrap();
        assert_eq!(e.edges(), &[(1, 0), (2, 2)]);
        let swapped = EdgeSet::build(3, Some(&[(0, 1), (2, 2), (1, 0)])).unwrap();
        assert_eq!(e, swapped);
        assert!(matches!(
            EdgeSet::build(3, Some(&[(3, 0)])),
            Err(Error::InvalidEdge { .. })
        ));
    }

    #[test]
    fn product_and_rbf_features() {
        let data = Dataset::from_rows(&[vec![2.0, 3.0]]).unwrap();
        let f = eval_features(&data, arc(EdgeSet::full(2).unwrap()), FeatureMap::Product).unwrap();
        assert_eq!(f.row(0), &[4.0, 6.0, 9.0]);
        let rbf = FeatureMap::rbf(0.5).unwrap();
        assert_eq!(rbf.eval(0.3, 0.3), 1.0);
        let d = 0.5f64.sqrt();
        assert!((rbf.eval(d, 0.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert!((rbf.eval(d, 0.0) - 0.367879).abs() < 1e-6);
        assert!(FeatureMap::rbf(0.0).is_err());
    }

    #[test]
    fn non_finite_data_rejected() {
        assert!(matches!(Dataset::new(1, 2, vec![1.0, f64::NAN]), Err(Error::Data(_))));
        assert!(Dataset::from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    fn two_row_tensor() -> (Arc<EdgeSet>, FeatureTensor) {
        let edges = arc(EdgeSet::full(1).unwrap());
        let fq = FeatureTensor::from_parts(2, vec![0.0, 1.0], edges.clone(), FeatureMap::Product).unwrap();
        (edges, fq)
    }

    #[test]
    fn normalizer_examples() {
        let (edges, fq) = two_row_tensor();
        let zero = DeltaParams::zeros(edges.clone(), 1);
        assert_eq!(empirical_normalizer(&zero, &fq).unwrap().value, 1.0);

        // <delta, Psi_1> = 0, <delta, Psi_2> = ln 3
        let delta = DeltaParams::from_coeffs(edges.clone(), 1, vec![3f64.ln()]).unwrap();
        let n = empirical_normalizer(&delta, &fq).unwrap();
        assert!((n.value - 2.0).abs() < 1e-14);
        assert!((n.log - 2f64.ln()).abs() < 1e-14);
        assert!((ratio_hat(fq.row(1), &delta, &fq).unwrap() - 1.5).abs() < 1e-14);
        assert_eq!(ratio_hat(fq.row(0), &zero, &fq).unwrap(), 1.0);

        let single = FeatureTensor::from_parts(1, vec![0.7], edges.clone(), FeatureMap::Product).unwrap();
        let d = DeltaParams::from_coeffs(edges, 1, vec![2.0]).unwrap();
        assert!((empirical_normalizer(&d, &single).unwrap().value - 1.4f64.exp()).abs() < 1e-12);
    }

    #[test]
    fn normalizer_survives_huge_scores() {
        let (edges, fq) = two_row_tensor();
        let delta = DeltaParams::from_coeffs(edges, 1, vec![5000.0]).unwrap();
        let n = empirical_normalizer(&delta, &fq).unwrap();
        assert!((n.log - (5000.0 - 2f64.ln())).abs() < 1e-9);
        assert!((mean_ratio(&delta, &fq).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_detected() {
        let (_, fq) = two_row_tensor();
        let other = DeltaParams::zeros(arc(EdgeSet::full(2).unwrap()), 1);
        assert!(matches!(empirical_normalizer(&other, &fq), Err(Error::Shape(_))));
    }

    #[test]
    fn csv_round_trip_and_ragged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let d = Dataset::from_rows(&[vec![0.1, -2.5], vec![1e-300, 3.0]]).unwrap();
        d.write_csv(&p).unwrap();
        assert_eq!(Dataset::read_csv(&p).unwrap(), d);
        std::fs::write(&p, "1,2\n3\n").unwrap();
        assert!(Dataset::read_csv(&p).is_err());
    }
}
