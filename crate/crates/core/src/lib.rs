//! CCA-based similarity of neural-network representations.
//!
//! Layers are [`ActivationMatrix`] values (neurons x datapoints). [`compute_cca`]
//! gives the canonical correlations and vectors; [`similarity`] turns them
//! into distances (mean CCA, SVCCA, projection-weighted CCA, Bartlett-thresholded
//! CCA, plus cosine and Euclidean baselines). [`dynamics`] works on checkpoint
//! series, [`analysis`] on groups of layers, [`synthetic`] and [`toy_nets`]
//! generate data to run all of it on, and [`recipe`] wires the experiments to
//! files on disk.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod cca;
pub mod dynamics;
pub mod error;
pub mod io;
pub mod recipe;
pub mod rng;
pub mod similarity;
pub mod synthetic;
pub mod tensor;
pub mod toy_nets;

pub use cca::{compute_cca, svcca_preprocess, ActivationMatrix, CcaResult, Side};
pub use dynamics::CheckpointSeries;
pub use error::{Error, Result};
pub use similarity::{DistanceReport, Metric, MetricConfig, WeightDirection};
pub use tensor::Matrix;
