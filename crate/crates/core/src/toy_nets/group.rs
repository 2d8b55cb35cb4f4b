use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::SyntheticDataset;
use super::mlp::{accuracy, train_mlp, Mlp, MlpSpec, TrainConfig};
use crate::analysis::{pairwise_distance_matrix_labelled, DistanceMatrix};
use crate::cca::ActivationMatrix;
use crate::error::{Error, Result};
use crate::rng;
use crate::similarity::{Metric, MetricConfig};

/// Default number of networks per group.
pub const DEFAULT_GROUP_SIZE: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupMember {
    /// Group label, e.g. `"generalizing"` or `"width_2"`.
    pub group: String,
    pub spec: MlpSpec,
    pub config: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemberOutcome {
    pub group: String,
    pub seed: u64,
    pub final_train_loss: f64,
    pub final_train_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupExperiment {
    pub members: Vec<MemberOutcome>,
    /// One pairwise matrix per hidden layer, computed on the probe set.
    pub layers: Vec<DistanceMatrix>,
    pub networks: Vec<Mlp>,
}

impl GroupExperiment {
    pub fn indices_of(&self, group: &str) -> Vec<usize> {
        (0..self.members.len())
            .filter(|&i| self.members[i].group == group)
            .collect()
    }

    /// Group labels in order of first appearance.
    pub fn groups(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for m in &self.members {
            if !out.contains(&m.group) {
                out.push(m.group.clone());
            }
        }
        out
    }

    pub fn last_layer(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn within_mean(&self, layer: usize, group: &str) -> Option<f64> {
        self.layers.get(layer)?.mean_within(&self.indices_of(group))
    }

    pub fn between_mean(&self, layer: usize, a: &str, b: &str) -> Option<f64> {
        self.layers
            .get(layer)?
            .mean_between(&self.indices_of(a), &self.indices_of(b))
    }

    /// Mean accuracy of a group's networks on a labelled dataset.
    pub fn group_accuracy(&self, group: &str, data: &SyntheticDataset) -> Result<f64> {
        let idx = self.indices_of(group);
        if idx.is_empty() {
            return Err(Error::invalid(format!("no group named {group:?}")));
        }
        let mut total = 0.0;
        for &i in &idx {
            total += accuracy(&self.networks[i], data.inputs(), data.labels())?;
        }
        Ok(total / idx.len() as f64)
    }
}

/// Trains every member, then compares final hidden layers pairwise with PWCCA.
pub fn run_group_experiment(
    group: &[GroupMember],
    data: &SyntheticDataset,
    probe: &crate::tensor::Matrix,
) -> Result<GroupExperiment> {
    run_group_experiment_with(group, data, probe, &MetricConfig::new(Metric::Pwcca))
}

pub fn run_group_experiment_with(
    group: &[GroupMember],
    data: &SyntheticDataset,
    probe: &crate::tensor::Matrix,
    metric: &MetricConfig,
) -> Result<GroupExperiment> {
    if group.len() < 2 {
        return Err(Error::invalid(
            "a group experiment needs at least 2 networks",
        ));
    }
    let depth = group[0].spec.hidden_layers();
    if group.iter().any(|m| m.spec.hidden_layers() != depth) {
        return Err(Error::invalid(
            "all networks must have the same number of hidden layers",
        ));
    }
    let runs = group
        .par_iter()
        .map(|m| train_mlp(&m.spec, data, &m.config, probe))
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<String> = group
        .iter()
        .enumerate()
        .map(|(i, m)| format!("{}#{i}", m.group))
        .collect();
    let layers = (0..depth)
        .map(|l| {
            let acts: Vec<ActivationMatrix> = runs
                .iter()
                .map(|r| r.final_activations()[l].clone())
                .collect();
            pairwise_distance_matrix_labelled(&acts, labels.clone(), metric)
        })
        .collect::<Result<Vec<_>>>()?;
    let members = group
        .iter()
        .zip(&runs)
        .map(|(m, r)| MemberOutcome {
            group: m.group.clone(),
            seed: m.spec.seed,
            final_train_loss: r.final_train_loss,
            final_train_accuracy: r.final_train_accuracy,
        })
        .collect();
    Ok(GroupExperiment {
        members,
        layers,
        networks: runs.into_iter().map(|r| r.network).collect(),
    })
}

/// Seeded uniform subset of `count` rows, original order kept.
pub fn subsample_rows(l: &ActivationMatrix, count: usize, seed: u64) -> Result<ActivationMatrix> {
    let rows = l.neurons();
    if count > rows {
        return Err(Error::CountTooLarge {
            requested: count,
            available: rows,
        });
    }
    let mut picked = index::sample(&mut rng::seeded(seed), rows, count).into_vec();
    picked.sort_unstable();
    ActivationMatrix::new(l.matrix().select_rows(&picked)?)
}
