//! Clustering quality measures.

use crate::error::{Error, Result};
use crate::numerics::Matrix;
use pathfinding::kuhn_munkres::kuhn_munkres;

/// A labelling of `N` samples into clusters `0..num_clusters`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    num_clusters: usize,
}

impl Partition {
    pub fn new(labels: Vec<usize>, num_clusters: usize) -> Result<Self> {
        if let Some(bad) = labels.iter().find(|&&l| l >= num_clusters) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {num_clusters} clusters"
            )));
        }
        Ok(Partition { labels, num_clusters })
    }

    /// Cluster count taken as one more than the largest label.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let num_clusters = labels.iter().max().map_or(0, |m| m + 1);
        Partition { labels, num_clusters }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.num_clusters];
        for &l in &self.labels {
            s[l] += 1;
        }
        s
    }
}

/// Co-occurrence counts; rows are predicted clusters, columns true classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    rows: usize,
    cols: usize,
    counts: Vec<u64>,
}

impl ContingencyTable {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> u64 {
        self.counts[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.counts[i * self.cols..(i + 1) * self.cols]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        (0..self.rows).map(|i| self.row(i).iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.cols).map(|j| (0..self.rows).map(|i| self.get(i, j)).sum()).collect()
    }
}

fn same_length(pred: &Partition, truth: &Partition) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::shape("partition comparison", pred.len(), truth.len()));
    }
    Ok(())
}

pub fn confusion_matrix(pred: &Partition, truth: &Partition) -> Result<ContingencyTable> {
    same_length(pred, truth)?;
    let (rows, cols) = (pred.num_clusters, truth.num_clusters);
    let mut counts = vec![0; rows * cols];
    for (&p, &t) in pred.labels.iter().zip(&truth.labels) {
        counts[p * cols + t] += 1;
    }
    Ok(ContingencyTable { rows, cols, counts })
}

/// Best one-to-one mapping between predicted clusters and true classes, as
/// `(predicted, true)` pairs. Clusters mapped onto padding are omitted.
pub fn best_mapping(table: &ContingencyTable) -> Vec<(usize, usize)> {
    let k = table.rows.max(table.cols);
    if k == 0 {
        return Vec::new();
    }
    let mut w = pathfinding::matrix::Matrix::new(k, k, 0i64);
    for i in 0..table.rows {
        for j in 0..table.cols {
            w[(i, j)] = table.get(i, j) as i64;
        }
    }
    let (_, assignment) = kuhn_munkres(&w);
    assignment
        .into_iter()
        .enumerate()
        .filter(|&(i, j)| i < table.rows && j < table.cols)
        .collect()
}

/// Fraction of samples whose predicted cluster maps onto their true class
/// under the optimal one-to-one mapping.
pub fn clustering_accuracy(pred: &Partition, truth: &Partition) -> Result<f64> {
    same_length(pred, truth)?;
    if pred.is_empty() {
        return Err(Error::Empty("partitions"));
    }
    let table = confusion_matrix(pred, truth)?;
    let hits: u64 = best_mapping(&table).iter().map(|&(i, j)| table.get(i, j)).sum();
    Ok(hits as f64 / pred.len() as f64)
}

/// Sum in sorted order, so equal multisets of terms give equal sums.
fn sorted_sum(mut terms: Vec<f64>) -> f64 {
    terms.sort_by(f64::total_cmp);
    terms.iter().sum()
}

fn entropy(sizes: &[u64], n: u64) -> f64 {
    let nf = n as f64;
    sorted_sum(
        sizes
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| c as f64 / nf * (nf / c as f64).ln())
            .collect(),
    )
}

/// Mutual information normalised by the larger of the two entropies.
///
/// Two single-cluster partitions score 1. When exactly one side has zero
/// entropy the mutual information is 0 and so is the score.
pub fn nmi(pred: &Partition, truth: &Partition) -> Result<f64> {
    same_length(pred, truth)?;
    if pred.is_empty() {
        return Err(Error::Empty("partitions"));
    }
    let table = confusion_matrix(pred, truth)?;
    let n = pred.len() as u64;
    let (rs, cs) = (table.row_sums(), table.col_sums());
    let (hp, ht) = (entropy(&rs, n), entropy(&cs, n));
    let denom = hp.max(ht);
    if denom == 0.0 {
        return Ok(1.0);
    }
    // Terms are formed like the entropy terms (all counts are exact in f64),
    // so identical partitions give MI == H bit for bit, and exactly
    // factorising tables give ln(1) = 0.
    let nf = n as f64;
    let mut terms = Vec::new();
    for i in 0..table.rows() {
        for j in 0..table.cols() {
            let c = table.get(i, j);
            if c == 0 {
                continue;
            }
            let ratio = (c * n) as f64 / (rs[i] * cs[j]) as f64;
            terms.push(c as f64 / nf * ratio.ln());
        }
    }
    let mi = sorted_sum(terms);
    Ok((mi / denom).clamp(0.0, 1.0))
}

/// Calinski-Harabasz score `tr(B) / tr(W) * (N - k) / (k - 1)`.
///
/// Returns `+inf` (with a warning) when every point sits on its centroid.
pub fn ch_score(ys: &Matrix, labels: &Partition) -> Result<f64> {
    let (n, d) = ys.shape();
    if labels.len() != n {
        return Err(Error::shape("ch_score", n, labels.len()));
    }
    let k = labels.num_clusters;
    if k < 2 {
        return Err(Error::InvalidArgument(format!("CH score needs at least 2 clusters, got {k}")));
    }
    if n <= k {
        return Err(Error::InvalidArgument(format!(
            "CH score needs more samples ({n}) than clusters ({k})"
        )));
    }
    let sizes = labels.sizes();
    if let Some(q) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::InvalidArgument(format!("cluster {q} is empty")));
    }
    let overall = ys.column_means();
    let mut centroids = Matrix::zeros(k, d);
    for (y, &l) in ys.row_iter().zip(&labels.labels) {
        for (c, v) in centroids.row_mut(l).iter_mut().zip(y) {
            *c += v;
        }
    }
    for q in 0..k {
        let inv = 1.0 / sizes[q] as f64;
        centroids.row_mut(q).iter_mut().for_each(|c| *c *= inv);
    }
    let sq = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum() };
    let between: f64 = (0..k).map(|q| sizes[q] as f64 * sq(centroids.row(q), &overall)).sum();
    let within: f64 = ys
        .row_iter()
        .zip(&labels.labels)
        .map(|(y, &l)| sq(y, centroids.row(l)))
        .sum();
    if within == 0.0 {
        log::warn!("CH score: within-cluster dispersion is zero, reporting +inf");
        return Ok(f64::INFINITY);
    }
    Ok(between / within * (n - k) as f64 / (k - 1) as f64)
}

#[cfg(test)]
mod tests;
