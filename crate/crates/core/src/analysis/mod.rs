//! Part/impression correlation: the Q×K delta matrix, spectral biclustering
//! and histogram-distance similarity between impressions.

mod similarity;

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, SVD};
use serde::{Deserialize, Serialize};

use crate::codebook::{kmeans, DeltaHistogram};
use crate::{Error, Result};

pub use similarity::{
    distance_matrix, distance_matrix_csv, impression_distance, l1_normalize, nearest_impressions, write_distance_csv,
};

const SCALING_ROUNDS: usize = 1000;
const SCALING_TOL: f64 = 1e-8;
const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITER: usize = 300;

/// Column k is ΔH_k; rows are codebook bins.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaMatrix {
    pub values: DMatrix<f64>,
    pub column_sums: Vec<f64>,
}

impl DeltaMatrix {
    pub fn q(&self) -> usize {
        self.values.nrows()
    }

    pub fn k(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.values.column(k).iter().copied().collect()
    }

    pub fn row(&self, q: usize) -> Vec<f64> {
        self.values.row(q).iter().copied().collect()
    }
}

/// Stacks the deltas as columns, in the given (vocabulary) order.
pub fn build_delta_matrix(deltas: &[DeltaHistogram]) -> Result<DeltaMatrix> {
    let first = deltas.first().ok_or(Error::EmptyVocabulary)?;
    let q = first.bins.len();
    if let Some(bad) = deltas.iter().find(|d| d.bins.len() != q) {
        return Err(Error::invalid(format!(
            "delta histogram {} has {} bins, expected {q}",
            bad.impression,
            bad.bins.len()
        )));
    }
    let values = DMatrix::from_fn(q, deltas.len(), |r, c| deltas[c].bins[r]);
    let column_sums = deltas.iter().map(|d| d.bins.iter().sum()).collect();
    Ok(DeltaMatrix { values, column_sums })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiclusterParams {
    pub row_clusters: usize,
    pub col_clusters: usize,
    pub n_singular_vectors: usize,
    pub top_blocks: usize,
}

impl Default for BiclusterParams {
    fn default() -> Self {
        BiclusterParams {
            row_clusters: 8,
            col_clusters: 8,
            n_singular_vectors: 6,
            top_blocks: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiclusterModel {
    /// Per matrix row, in `0..R`.
    pub row_labels: Vec<usize>,
    /// Per matrix column, in `0..C`.
    pub col_labels: Vec<usize>,
    /// R×C means of the shifted matrix.
    pub block_means: DMatrix<f64>,
}

impl BiclusterModel {
    pub fn row_clusters(&self) -> usize {
        self.block_means.nrows()
    }

    pub fn col_clusters(&self) -> usize {
        self.block_means.ncols()
    }
}

/// One alternating row/column rescaling pass; zero rows or columns stay zero.
fn scale_once(m: &DMatrix<f64>) -> DMatrix<f64> {
    let inv_sqrt = |s: f64| if s > 0.0 { 1.0 / s.sqrt() } else { 0.0 };
    let rows: Vec<f64> = m.row_iter().map(|r| inv_sqrt(r.sum())).collect();
    let cols: Vec<f64> = m.column_iter().map(|c| inv_sqrt(c.sum())).collect();
    DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)] * rows[r] * cols[c])
}

/// Repeats [`scale_once`] until the Frobenius change drops below the
/// tolerance, driving row and column sums towards a common constant.
pub fn bistochastic(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut cur = m.clone();
    for _ in 0..SCALING_ROUNDS {
        let next = scale_once(&cur);
        let change = (&next - &cur).norm();
        cur = next;
        if change < SCALING_TOL {
            break;
        }
    }
    cur
}

/// Flip so the largest-magnitude entry (first on ties) is positive.
fn canonical_sign(v: &[f64]) -> f64 {
    let mut best = 0.0f64;
    for &x in v {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    if best < 0.0 {
        -1.0
    } else {
        1.0
    }
}

/// Best of several seeded k-means runs (lowest objective, earliest on ties).
fn cluster_points(points: &[f64], dim: usize, k: usize, seed: u64, name: &str) -> Result<Vec<usize>> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for restart in 0..KMEANS_RESTARTS {
        let fit = match kmeans(points, dim, k, seed, &format!("{name}/{restart}"), KMEANS_MAX_ITER, 0.0) {
            Ok(f) => f,
            Err(Error::InvalidArgument(msg)) => {
                log::warn!("{name}: {msg}");
                return Err(Error::NoBlockStructure);
            }
            Err(e) => return Err(e),
        };
        let obj = fit.final_objective();
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            best = Some((obj, fit.labels));
        }
    }
    Ok(best.expect("at least one restart").1)
}

/// Renumbers clusters by descending key (ties by first member), so that labels
/// do not depend on k-means' internal numbering.
fn canonical_ids(labels: &[usize], n_clusters: usize, key: impl Fn(&[usize]) -> f64) -> Vec<usize> {
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_clusters];
    for (i, &l) in labels.iter().enumerate() {
        members[l].push(i);
    }
    let mut order: Vec<(f64, usize, usize)> = members
        .iter()
        .enumerate()
        .map(|(c, m)| (key(m), m.first().copied().unwrap_or(usize::MAX), c))
        .collect();
    order.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut new_id = vec![0; n_clusters];
    for (rank, &(_, _, c)) in order.iter().enumerate() {
        new_id[c] = rank;
    }
    labels.iter().map(|&l| new_id[l]).collect()
}

fn block_means(m: &DMatrix<f64>, rows: &[usize], cols: &[usize], r: usize, c: usize) -> DMatrix<f64> {
    let mut sums = DMatrix::<f64>::zeros(r, c);
    let mut counts = DMatrix::<f64>::zeros(r, c);
    for (i, &ri) in rows.iter().enumerate() {
        for (j, &cj) in cols.iter().enumerate() {
            sums[(ri, cj)] += m[(i, j)];
            counts[(ri, cj)] += 1.0;
        }
    }
    sums.zip_map(&counts, |s, n| if n > 0.0 { s / n } else { 0.0 })
}

/// Spectral biclustering of `matrix` into `r` row and `c` column clusters.
///
/// The matrix is shifted to be non-negative, rescaled towards bistochastic,
/// and its singular vectors 2..=n+1 (scaled by their singular values) embed
/// rows and columns for seeded k-means.
pub fn spectral_bicluster(
    matrix: &DMatrix<f64>,
    r: usize,
    c: usize,
    n_singular_vectors: usize,
    seed: u64,
) -> Result<BiclusterModel> {
    let (nr, nc) = matrix.shape();
    if r < 2 || c < 2 {
        return Err(Error::invalid(
            "biclustering needs at least 2 row and 2 column clusters",
        ));
    }
    if r > nr || c > nc {
        return Err(Error::invalid(format!(
            "{r}x{c} clusters requested for a {nr}x{nc} matrix"
        )));
    }
    if n_singular_vectors == 0 {
        return Err(Error::invalid("n_singular_vectors must be positive"));
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite entry in bicluster input".into()));
    }
    let min = matrix.min();
    if matrix.max() == min {
        return Err(Error::NoBlockStructure);
    }
    let shifted = matrix.map(|v| v - min);
    let normalized = bistochastic(&shifted);

    let svd = SVD::try_new(normalized, true, true, f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
    let u = svd.u.as_ref().expect("u requested");
    let v_t = svd.v_t.as_ref().expect("v requested");
    let available = nr.min(nc) - 1;
    let n = n_singular_vectors.min(available);
    if n == 0 {
        return Err(Error::NoBlockStructure);
    }

    let mut row_points = vec![0.0; nr * n];
    let mut col_points = vec![0.0; nc * n];
    for j in 0..n {
        let s = svd.singular_values[j + 1];
        let uj: Vec<f64> = u.column(j + 1).iter().copied().collect();
        let vj: Vec<f64> = v_t.row(j + 1).iter().copied().collect();
        let sign = canonical_sign(&uj);
        for (i, &x) in uj.iter().enumerate() {
            row_points[i * n + j] = sign * s * x;
        }
        for (i, &x) in vj.iter().enumerate() {
            col_points[i * n + j] = sign * s * x;
        }
    }

    let rows = cluster_points(&row_points, n, r, seed, "bicluster/rows")?;
    let cols = cluster_points(&col_points, n, c, seed, "bicluster/cols")?;

    let row_mean = |members: &[usize]| {
        let total: f64 = members.iter().map(|&i| shifted.row(i).sum()).sum();
        total / (members.len() * nc).max(1) as f64
    };
    let col_mean = |members: &[usize]| {
        let total: f64 = members.iter().map(|&j| shifted.column(j).sum()).sum();
        total / (members.len() * nr).max(1) as f64
    };
    let row_labels = canonical_ids(&rows, r, row_mean);
    let col_labels = canonical_ids(&cols, c, col_mean);
    let block_means = block_means(&shifted, &row_labels, &col_labels, r, c);
    Ok(BiclusterModel {
        row_labels,
        col_labels,
        block_means,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub row_cluster: usize,
    pub col_cluster: usize,
    pub mean: f64,
    /// Matrix row indices.
    pub rows: Vec<usize>,
    /// Matrix column indices.
    pub cols: Vec<usize>,
}

/// Blocks by descending mean (ties by cluster ids), at most `n`.
pub fn top_blocks(model: &BiclusterModel, n: usize) -> Vec<Block> {
    let members = |labels: &[usize], id: usize| -> Vec<usize> {
        labels
            .iter()
            .enumerate()
            .filter(|&(_, &l)| l == id)
            .map(|(i, _)| i)
            .collect()
    };
    let mut blocks = Vec::new();
    for rc in 0..model.row_clusters() {
        for cc in 0..model.col_clusters() {
            blocks.push(Block {
                row_cluster: rc,
                col_cluster: cc,
                mean: model.block_means[(rc, cc)],
                rows: members(&model.row_labels, rc),
                cols: members(&model.col_labels, cc),
            });
        }
    }
    blocks.sort_by(|a, b| {
        b.mean
            .total_cmp(&a.mean)
            .then(a.row_cluster.cmp(&b.row_cluster))
            .then(a.col_cluster.cmp(&b.col_cluster))
    });
    blocks.truncate(n);
    blocks
}

/// Adjusted Rand index between two labelings of the same items. Two
/// single-cluster labelings count as identical (1.0).
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid("labelings differ in length"));
    }
    let n = a.len() as f64;
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let mut table: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, f64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, f64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1.0;
        *rows.entry(x).or_default() += 1.0;
        *cols.entry(y).or_default() += 1.0;
    }
    let index: f64 = table.values().map(|&v| choose2(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| choose2(v)).sum();
    let expected = if n > 1.0 { sum_a * sum_b / choose2(n) } else { 0.0 };
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowLabel {
    pub bin: usize,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColLabel {
    pub word: String,
    pub cluster: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBlock {
    pub row_cluster: usize,
    pub col_cluster: usize,
    pub mean: f64,
    pub bins: Vec<usize>,
    pub words: Vec<String>,
}

/// Serialized form of a bicluster model: bins are 1-based codebook ids,
/// columns are impression words.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiclusterReport {
    pub row_labels: Vec<RowLabel>,
    pub col_labels: Vec<ColLabel>,
    pub block_means: Vec<Vec<f64>>,
    pub top_blocks: Vec<ReportBlock>,
}

impl BiclusterReport {
    pub fn new(model: &BiclusterModel, words: &[String], n_top: usize) -> Result<Self> {
        if words.len() != model.col_labels.len() {
            return Err(Error::invalid("one word per matrix column required"));
        }
        Ok(BiclusterReport {
            row_labels: model
                .row_labels
                .iter()
                .enumerate()
                .map(|(i, &cluster)| RowLabel { bin: i + 1, cluster })
                .collect(),
            col_labels: model
                .col_labels
                .iter()
                .zip(words)
                .map(|(&cluster, w)| ColLabel {
                    word: w.clone(),
                    cluster,
                })
                .collect(),
            block_means: model
                .block_means
                .row_iter()
                .map(|r| r.iter().copied().collect())
                .collect(),
            top_blocks: top_blocks(model, n_top)
                .into_iter()
                .map(|b| ReportBlock {
                    row_cluster: b.row_cluster,
                    col_cluster: b.col_cluster,
                    mean: b.mean,
                    bins: b.rows.iter().map(|&r| r + 1).collect(),
                    words: b.cols.iter().map(|&c| words[c].clone()).collect(),
                })
                .collect(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::format("bicluster report", e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_file(path, self.to_json()?.as_bytes())
    }
}
