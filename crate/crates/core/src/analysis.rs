//! Aggregates over distance data: pairwise matrices, average-linkage
//! clustering with automatic cluster-count selection, and Pearson correlation.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cca::ActivationMatrix;
use crate::error::{Error, Result};
use crate::rng;
use crate::similarity::MetricConfig;
use crate::tensor::Matrix;

/// Largest diagonal entry a distance matrix may carry.
pub const DIAGONAL_TOL: f64 = 1e-8;

/// Square matrix of distances between labelled items. Not necessarily
/// symmetric: PWCCA is a pseudo-distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    labels: Vec<String>,
    values: Matrix,
}

impl DistanceMatrix {
    pub fn new(labels: Vec<String>, values: Matrix) -> Result<Self> {
        let (r, c) = values.shape();
        if r != c {
            return Err(Error::ShapeMismatch {
                left: (r, c),
                right: (c, r),
            });
        }
        if labels.len() != r {
            return Err(Error::invalid(format!(
                "{} labels for a {r}x{r} matrix",
                labels.len()
            )));
        }
        for i in 0..r {
            if values[(i, i)].abs() >= DIAGONAL_TOL {
                return Err(Error::invalid(format!(
                    "diagonal entry {i} is {}",
                    values[(i, i)]
                )));
            }
            for j in 0..r {
                if values[(i, j)] < 0.0 {
                    return Err(Error::invalid(format!("negative distance at ({i}, {j})")));
                }
            }
        }
        Ok(DistanceMatrix { labels, values })
    }

    /// Labels default to `"0"`, `"1"`, ...
    pub fn unlabelled(values: Matrix) -> Result<Self> {
        let labels = (0..values.rows()).map(|i| i.to_string()).collect();
        Self::new(labels, values)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[(i, j)]
    }

    /// Elementwise mean with the transpose.
    pub fn symmetrized(&self) -> DistanceMatrix {
        let m = self.values.as_dmatrix();
        let s = (m + m.transpose()) * 0.5;
        DistanceMatrix {
            labels: self.labels.clone(),
            values: Matrix::from_dmatrix_unchecked(s),
        }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let m = self.values.as_dmatrix();
        (m - m.transpose()).amax()
    }

    /// Mean over ordered pairs `i != j` drawn from `members`.
    pub fn mean_within(&self, members: &[usize]) -> Option<f64> {
        let vals: Vec<f64> = members
            .iter()
            .flat_map(|&i| {
                members
                    .iter()
                    .filter(move |&&j| j != i)
                    .map(move |&j| self.get(i, j))
            })
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Mean over both orderings of pairs with one index in each set.
    pub fn mean_between(&self, a: &[usize], b: &[usize]) -> Option<f64> {
        let vals: Vec<f64> = a
            .iter()
            .flat_map(|&i| {
                b.iter()
                    .flat_map(move |&j| [self.get(i, j), self.get(j, i)])
            })
            .collect();
        (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
    }

    /// Relabels by `perm`: entry `(i, j)` of the result is entry
    /// `(perm[i], perm[j])` of `self`.
    pub fn permuted(&self, perm: &[usize]) -> Result<DistanceMatrix> {
        let n = self.len();
        let mut seen = vec![false; n];
        if perm.len() != n
            || perm
                .iter()
                .any(|&p| p >= n || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::invalid("not a permutation"));
        }
        let values = DMatrix::from_fn(n, n, |i, j| self.get(perm[i], perm[j]));
        Ok(DistanceMatrix {
            labels: perm.iter().map(|&p| self.labels[p].clone()).collect(),
            values: Matrix::from_dmatrix_unchecked(values),
        })
    }
}

/// Evaluates `metric` on every ordered pair, diagonal included.
pub fn pairwise_distance_matrix(
    layers: &[ActivationMatrix],
    metric: &MetricConfig,
) -> Result<DistanceMatrix> {
    let labels = (0..layers.len()).map(|i| i.to_string()).collect();
    pairwise_distance_matrix_labelled(layers, labels, metric)
}

pub fn pairwise_distance_matrix_labelled(
    layers: &[ActivationMatrix],
    labels: Vec<String>,
    metric: &MetricConfig,
) -> Result<DistanceMatrix> {
    let n = layers.len();
    if n < 2 {
        return Err(Error::invalid("need at least 2 layers"));
    }
    let dp = layers[0].datapoints();
    if let Some(bad) = layers.iter().find(|l| l.datapoints() != dp) {
        return Err(Error::ColumnMismatch {
            left: dp,
            right: bad.datapoints(),
        });
    }
    let entries: Vec<f64> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / n, idx % n);
            metric
                .distance(&layers[i], &layers[j])
                .map(|r| r.distance.max(0.0))
        })
        .collect::<Result<_>>()?;
    // Self-comparison can leave roundoff-level residue.
    let values = DMatrix::from_fn(n, n, |i, j| {
        let v = entries[i * n + j];
        if i == j && v < DIAGONAL_TOL {
            0.0
        } else {
            v
        }
    });
    DistanceMatrix::new(labels, Matrix::from_dmatrix(values)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    /// Cluster id per label, numbered from 0 in order of first appearance.
    pub assignments: Vec<usize>,
    /// Height of each of the `len - 1` merges, in merge order.
    pub merge_heights: Vec<f64>,
    pub chosen_k: usize,
}

impl ClusterAssignment {
    pub fn members(&self, cluster: usize) -> Vec<usize> {
        (0..self.assignments.len())
            .filter(|&i| self.assignments[i] == cluster)
            .collect()
    }
}

/// Average-linkage clustering of the symmetrized matrix. Without `k`, the
/// dendrogram is cut at the largest gap between consecutive merge heights.
pub fn agglomerative_cluster(d: &DistanceMatrix, k: Option<usize>) -> Result<ClusterAssignment> {
    let n = d.len();
    if n == 0 {
        return Err(Error::invalid("empty distance matrix"));
    }
    if let Some(k) = k {
        if k == 0 || k > n {
            return Err(Error::invalid(format!("k must be in 1..={n}, got {k}")));
        }
    }
    let sym = d.symmetrized();
    let merges = average_linkage(&sym);
    let heights: Vec<f64> = merges.iter().map(|m| m.2).collect();
    let chosen_k = k.unwrap_or_else(|| largest_gap_k(&heights, n));

    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    for &(a, b, _) in &merges[..n - chosen_k] {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        parent[ra.max(rb)] = ra.min(rb);
    }
    let mut ids = vec![usize::MAX; n];
    let mut next = 0;
    let mut assignments = Vec::with_capacity(n);
    for i in 0..n {
        let r = find(&mut parent, i);
        if ids[r] == usize::MAX {
            ids[r] = next;
            next += 1;
        }
        assignments.push(ids[r]);
    }
    Ok(ClusterAssignment {
        assignments,
        merge_heights: heights,
        chosen_k,
    })
}

/// Merge sequence as `(representative_a, representative_b, height)`, where a
/// cluster's representative is its lowest label index. Ties go to the pair
/// with the lowest representatives.
fn average_linkage(d: &DistanceMatrix) -> Vec<(usize, usize, f64)> {
    let n = d.len();
    let mut dist = d.values().as_dmatrix().clone();
    let mut size = vec![1usize; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut merges = Vec::with_capacity(n.saturating_sub(1));
    while active.len() > 1 {
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for (ai, &a) in active.iter().enumerate() {
            for &b in &active[ai + 1..] {
                if dist[(a, b)] < best.2 {
                    best = (a, b, dist[(a, b)]);
                }
            }
        }
        let (a, b, h) = best;
        for &c in &active {
            if c != a && c != b {
                let merged = (dist[(a, c)] * size[a] as f64 + dist[(b, c)] * size[b] as f64)
                    / (size[a] + size[b]) as f64;
                dist[(a, c)] = merged;
                dist[(c, a)] = merged;
            }
        }
        size[a] += size[b];
        active.retain(|&c| c != b);
        merges.push((a, b, h));
    }
    merges
}

/// Gaps between consecutive merge heights, normalized by the largest height.
/// The cut before merge `m` leaves `n - m` clusters; the earliest of tied
/// gaps wins. Fewer than 3 labels give a single cluster.
fn largest_gap_k(heights: &[f64], n: usize) -> usize {
    if heights.len() < 2 {
        return 1;
    }
    let top = heights.iter().cloned().fold(0.0_f64, f64::max);
    let scale = if top > 0.0 { top } else { 1.0 };
    let mut best_m = 1;
    let mut best_gap = f64::NEG_INFINITY;
    for m in 1..heights.len() {
        let gap = (heights[m] - heights[m - 1]) / scale;
        if gap > best_gap {
            best_gap = gap;
            best_m = m;
        }
    }
    n - best_m
}

/// Synthetic block-structured distance matrix with its true partition.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedPartition {
    pub matrix: DistanceMatrix,
    pub truth: Vec<usize>,
}

/// `labels` items split into `blocks` contiguous near-equal blocks. Entries
/// are `within` or `between` plus symmetric Gaussian noise, clamped at 0.
pub fn planted_partition(
    labels: usize,
    blocks: usize,
    within: f64,
    between: f64,
    noise_std: f64,
    seed: u64,
) -> Result<PlantedPartition> {
    if blocks == 0 || blocks > labels {
        return Err(Error::invalid(format!("blocks must be in 1..={labels}")));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::invalid("noise_std must be >= 0"));
    }
    let truth: Vec<usize> = (0..labels).map(|i| i * blocks / labels).collect();
    let mut r = rng::seeded(seed);
    let mut m = DMatrix::zeros(labels, labels);
    for i in 0..labels {
        for j in i + 1..labels {
            let base = if truth[i] == truth[j] {
                within
            } else {
                between
            };
            let v = (base + noise_std * rng::standard_normal(&mut r)).max(0.0);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(PlantedPartition {
        matrix: DistanceMatrix::unlabelled(Matrix::from_dmatrix(m)?)?,
        truth,
    })
}

/// True when two assignments describe the same partition up to renaming.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = std::collections::HashMap::new();
    let mut back = std::collections::HashMap::new();
    a.iter()
        .zip(b)
        .all(|(x, y)| *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
}

pub fn pearson_correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "length mismatch: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::invalid("need at least 2 points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}
