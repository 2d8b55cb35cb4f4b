use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Matrix;

/// Gaussian class clusters. Example `i` belongs to class `i % classes`
/// before any label shuffling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    inputs: Matrix,
    labels: Vec<usize>,
    classes: usize,
    seed: u64,
    class_means: Matrix,
    spread: f64,
}

impl SyntheticDataset {
    /// Features x examples.
    pub fn inputs(&self) -> &Matrix {
        &self.inputs
    }

    pub fn into_inputs(self) -> Matrix {
        self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn features(&self) -> usize {
        self.inputs.rows()
    }

    pub fn examples(&self) -> usize {
        self.inputs.cols()
    }

    /// Features x classes.
    pub fn class_means(&self) -> &Matrix {
        &self.class_means
    }

    pub fn spread(&self) -> f64 {
        self.spread
    }

    /// Fresh samples from the same class means, e.g. a held-out probe or
    /// test set.
    pub fn resample(&self, per_class: usize, seed: u64) -> Result<SyntheticDataset> {
        sample(self.class_means.clone(), per_class, self.spread, seed)
    }
}

fn sample(
    class_means: Matrix,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    let (features, classes) = class_means.shape();
    if per_class == 0 {
        return Err(Error::invalid("per_class must be at least 1"));
    }
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::invalid("spread must be positive"));
    }
    let examples = per_class * classes;
    let labels: Vec<usize> = (0..examples).map(|i| i % classes).collect();
    let mut r = rng::seeded(seed);
    let mut data = Vec::with_capacity(features * examples);
    for f in 0..features {
        for &c in &labels {
            data.push(class_means[(f, c)] + spread * rng::standard_normal(&mut r));
        }
    }
    Ok(SyntheticDataset {
        inputs: Matrix::from_row_major(features, examples, data)?,
        labels,
        classes,
        seed,
        class_means,
        spread,
    })
}

/// Class means are drawn from `N(0, I)`, samples from
/// `N(mean_c, spread^2 I)`.
pub fn make_dataset(
    features: usize,
    classes: usize,
    per_class: usize,
    spread: f64,
    seed: u64,
) -> Result<SyntheticDataset> {
    if features == 0 || classes == 0 {
        return Err(Error::invalid("features and classes must be at least 1"));
    }
    let mut r = rng::seeded(seed);
    let means = Matrix::from_fn(features, classes, |_, _| rng::standard_normal(&mut r))?;
    sample(means, per_class, spread, rng::derive_seed(seed, 1))
}

/// Replaces the labels with a seeded permutation of themselves. The same
/// `shuffle_seed` always yields the same labels for the same dataset.
pub fn shuffle_labels(d: &SyntheticDataset, shuffle_seed: u64) -> SyntheticDataset {
    let mut labels = d.labels.clone();
    labels.shuffle(&mut rng::seeded(shuffle_seed));
    SyntheticDataset {
        labels,
        ..d.clone()
    }
}
