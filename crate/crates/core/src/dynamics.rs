//! Training-time and sequence-time analyses over a series of checkpoints.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cca::{compute_cca, ActivationMatrix, Side, DEFAULT_EPS};
use crate::error::{Error, Result};
use crate::similarity::{Metric, MetricConfig};
use crate::tensor::Matrix;

/// Activations of one layer at increasing training steps, all evaluated on
/// the same datapoints in the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointSeries {
    steps: Vec<u64>,
    activations: Vec<ActivationMatrix>,
}

impl CheckpointSeries {
    pub fn new(steps: Vec<u64>, activations: Vec<ActivationMatrix>) -> Result<Self> {
        if steps.len() != activations.len() {
            return Err(Error::invalid(format!(
                "{} steps for {} checkpoints",
                steps.len(),
                activations.len()
            )));
        }
        if steps.len() < 2 {
            return Err(Error::invalid(
                "a checkpoint series needs at least 2 checkpoints",
            ));
        }
        if steps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid(
                "checkpoint steps must be strictly increasing",
            ));
        }
        let shape = activations[0].matrix().shape();
        if let Some(bad) = activations.iter().find(|a| a.matrix().shape() != shape) {
            return Err(Error::ShapeMismatch {
                left: shape,
                right: bad.matrix().shape(),
            });
        }
        Ok(CheckpointSeries { steps, activations })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    pub fn activations(&self) -> &[ActivationMatrix] {
        &self.activations
    }

    pub fn last(&self) -> &ActivationMatrix {
        self.activations.last().expect("series is nonempty")
    }

    /// Index of the "T/2" checkpoint, `ceil((count - 1) / 2)`.
    pub fn mid_index(&self) -> usize {
        self.len() / 2
    }

    pub fn index_of_step(&self, step: u64) -> Option<usize> {
        self.steps.iter().position(|&s| s == step)
    }

    /// Applies `f` to every checkpoint (e.g. a fixed change of basis).
    pub fn map(&self, f: impl Fn(&ActivationMatrix) -> Result<ActivationMatrix>) -> Result<Self> {
        let activations = self.activations.iter().map(f).collect::<Result<Vec<_>>>()?;
        CheckpointSeries::new(self.steps.clone(), activations)
    }
}

/// Distance from every checkpoint to the final one.
pub fn convergence_curve(series: &CheckpointSeries, metric: &MetricConfig) -> Result<Vec<f64>> {
    let last = series.last();
    series
        .activations
        .par_iter()
        .map(|l| metric.distance(l, last).map(|r| r.distance))
        .collect()
}

/// Sorted canonical correlations of every checkpoint against the final one.
pub fn coefficient_trajectories(series: &CheckpointSeries, eps: f64) -> Result<Vec<Vec<f64>>> {
    let last = series.last();
    series
        .activations
        .par_iter()
        .map(|l| compute_cca(l, last, eps).map(|r| r.rho))
        .collect()
}

/// Which checkpoint's canonical vectors form the stable and unstable sets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitAnchor {
    /// Vectors from the `t_early` side of the CCA.
    #[default]
    Early,
    /// Vectors from the `T/2` side.
    Mid,
}

#[derive(Clone, Debug)]
pub struct SubspaceSplit {
    /// `m x n`, canonical vectors with the `m` highest correlations.
    pub stable_vectors: Matrix,
    /// `m x n`, canonical vectors with the `m` lowest correlations.
    pub unstable_vectors: Matrix,
    pub stable_rho: Vec<f64>,
    pub unstable_rho: Vec<f64>,
    pub t_early: u64,
    pub t_mid: u64,
    pub m: usize,
    pub anchor: SplitAnchor,
}

/// Splits the CCA between the `t_early` and `T/2` checkpoints into its `m`
/// most and `m` least correlated directions. `m` defaults to
/// `min(100, c / 2)`.
pub fn split_stable_unstable(
    series: &CheckpointSeries,
    t_early: u64,
    m: Option<usize>,
) -> Result<SubspaceSplit> {
    split_stable_unstable_with(series, t_early, m, SplitAnchor::Early, DEFAULT_EPS)
}

pub fn split_stable_unstable_with(
    series: &CheckpointSeries,
    t_early: u64,
    m: Option<usize>,
    anchor: SplitAnchor,
    eps: f64,
) -> Result<SubspaceSplit> {
    let early = series
        .index_of_step(t_early)
        .ok_or_else(|| Error::invalid(format!("no checkpoint at step {t_early}")))?;
    let mid = series.mid_index();
    if early >= mid {
        return Err(Error::invalid(format!(
            "t_early (step {t_early}) must precede the midpoint step {}",
            series.steps[mid]
        )));
    }
    let r = compute_cca(&series.activations[early], &series.activations[mid], eps)?;
    let c = r.rho.len();
    let m = m.unwrap_or_else(|| (c / 2).min(100));
    if m == 0 || 2 * m > c {
        return Err(Error::InsufficientRank {
            needed: 2 * m.max(1),
            available: c,
        });
    }
    let side = match anchor {
        SplitAnchor::Early => Side::Left,
        SplitAnchor::Mid => Side::Right,
    };
    let h = r.canonical(side);
    let top: Vec<usize> = (0..m).collect();
    let bottom: Vec<usize> = (c - m..c).collect();
    Ok(SubspaceSplit {
        stable_vectors: h.select_rows(&top)?,
        unstable_vectors: h.select_rows(&bottom)?,
        stable_rho: r.rho[..m].to_vec(),
        unstable_rho: r.rho[c - m..].to_vec(),
        t_early,
        t_mid: series.steps[mid],
        m,
        anchor,
    })
}

/// `1 - mean_cca_distance` between a set of vectors in datapoint space
/// (treated as pseudo-neurons) and a layer.
pub fn subspace_similarity(vectors: &Matrix, layer: &ActivationMatrix) -> Result<f64> {
    subspace_similarity_with(vectors, layer, &MetricConfig::new(Metric::MeanCca))
}

pub fn subspace_similarity_with(
    vectors: &Matrix,
    layer: &ActivationMatrix,
    metric: &MetricConfig,
) -> Result<f64> {
    let pseudo = ActivationMatrix::new(vectors.clone())?;
    Ok(1.0 - metric.distance(&pseudo, layer)?.distance)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityCurves {
    pub steps: Vec<u64>,
    pub stable: Vec<f64>,
    pub unstable: Vec<f64>,
}

/// Similarity of the stable and unstable sets to every checkpoint.
pub fn stability_curves(
    series: &CheckpointSeries,
    split: &SubspaceSplit,
    metric: &MetricConfig,
) -> Result<StabilityCurves> {
    let pairs: Vec<(f64, f64)> = series
        .activations
        .par_iter()
        .map(|l| {
            Ok((
                subspace_similarity_with(&split.stable_vectors, l, metric)?,
                subspace_similarity_with(&split.unstable_vectors, l, metric)?,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(StabilityCurves {
        steps: series.steps.clone(),
        stable: pairs.iter().map(|p| p.0).collect(),
        unstable: pairs.iter().map(|p| p.1).collect(),
    })
}

/// Splits recurrent outputs by sequence position: group `j` holds the
/// columns whose index is congruent to `j` modulo `period`.
pub fn group_by_sequence_step(output: &Matrix, period: usize) -> Result<Vec<Matrix>> {
    if period == 0 || period > output.cols() {
        return Err(Error::invalid(format!(
            "period must be in 1..={}, got {period}",
            output.cols()
        )));
    }
    (0..period)
        .map(|j| {
            let cols: Vec<usize> = (j..output.cols()).step_by(period).collect();
            output.select_columns(&cols)
        })
        .collect()
}
