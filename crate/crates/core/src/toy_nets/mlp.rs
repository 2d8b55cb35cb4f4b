use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::data::{shuffle_labels, SyntheticDataset};
use crate::cca::ActivationMatrix;
use crate::dynamics::CheckpointSeries;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative from the pre-activation `z` and the output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Input width, hidden widths, output width.
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub seed: u64,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation, seed: u64) -> Self {
        MlpSpec {
            layer_widths,
            activation,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 3 {
            return Err(Error::invalid(
                "need input, at least one hidden, and output widths",
            ));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::invalid("layer widths must be at least 1"));
        }
        Ok(())
    }

    pub fn hidden_layers(&self) -> usize {
        self.layer_widths.len().saturating_sub(2)
    }
}

/// Fully connected network; hidden layers use `activation`, the output layer
/// emits logits for a softmax.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
    activation: Activation,
}

/// Parameter gradients laid out like the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub weights: Vec<DMatrix<f64>>,
    pub biases: Vec<DVector<f64>>,
}

impl Gradients {
    /// Same order as [`Mlp::parameters`].
    pub fn flat(&self) -> Vec<f64> {
        flatten(&self.weights, &self.biases)
    }
}

fn flatten(w: &[DMatrix<f64>], b: &[DVector<f64>]) -> Vec<f64> {
    let mut out = Vec::new();
    for (wl, bl) in w.iter().zip(b) {
        out.extend(wl.iter());
        out.extend(bl.iter());
    }
    out
}

struct Trace {
    pre: Vec<DMatrix<f64>>,
    post: Vec<DMatrix<f64>>,
}

/// Column-wise softmax, shifted by the column max for stability.
pub fn softmax_columns(logits: &DMatrix<f64>) -> DMatrix<f64> {
    let mut p = logits.clone();
    for mut col in p.column_iter_mut() {
        let m = col.max();
        col.apply(|v| *v = (*v - m).exp());
        let s = col.sum();
        col /= s;
    }
    p
}

impl Mlp {
    /// Weights `N(0, g / fan_in)` with `g = 2` for ReLU and `1` for tanh;
    /// zero biases.
    pub fn init(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let mut r = rng::seeded(spec.seed);
        let gain = match spec.activation {
            Activation::Relu => 2.0,
            Activation::Tanh => 1.0,
        };
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in spec.layer_widths.windows(2) {
            let std = (gain / w[0] as f64).sqrt();
            weights.push(DMatrix::from_fn(w[1], w[0], |_, _| {
                std * rng::standard_normal(&mut r)
            }));
            biases.push(DVector::zeros(w[1]));
        }
        Ok(Mlp {
            weights,
            biases,
            activation: spec.activation,
        })
    }

    pub fn input_width(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_width(&self) -> usize {
        self.weights.last().map_or(0, |w| w.nrows())
    }

    pub fn hidden_layers(&self) -> usize {
        self.weights.len() - 1
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.rows() != self.input_width() {
            return Err(Error::invalid(format!(
                "input has {} features, network expects {}",
                x.rows(),
                self.input_width()
            )));
        }
        Ok(())
    }

    fn check_labels(&self, x: &Matrix, labels: &[usize]) -> Result<()> {
        self.check_input(x)?;
        if labels.len() != x.cols() {
            return Err(Error::invalid(format!(
                "{} labels for {} examples",
                labels.len(),
                x.cols()
            )));
        }
        if labels.iter().any(|&l| l >= self.output_width()) {
            return Err(Error::invalid("label out of range"));
        }
        Ok(())
    }

    fn forward(&self, x: &DMatrix<f64>) -> Trace {
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut post = Vec::with_capacity(self.weights.len());
        let last = self.weights.len() - 1;
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let input = if l == 0 { x } else { &post[l - 1] };
            let mut z = w * input;
            for mut col in z.column_iter_mut() {
                col += b;
            }
            let a = if l == last {
                z.clone()
            } else {
                z.map(|v| self.activation.apply(v))
            };
            pre.push(z);
            post.push(a);
        }
        Trace { pre, post }
    }

    /// Post-nonlinearity outputs of every hidden layer, units x examples.
    pub fn hidden_activations(&self, x: &Matrix) -> Result<Vec<Matrix>> {
        self.check_input(x)?;
        let mut t = self.forward(x.as_dmatrix());
        t.post.pop();
        t.post.into_iter().map(Matrix::from_dmatrix).collect()
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let t = self.forward(x.as_dmatrix());
        Matrix::from_dmatrix(t.post.into_iter().last().expect("at least one layer"))
    }

    /// Softmax class probabilities, classes x examples.
    pub fn probabilities(&self, x: &Matrix) -> Result<Matrix> {
        Ok(Matrix::from_dmatrix_unchecked(softmax_columns(
            self.logits(x)?.as_dmatrix(),
        )))
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let logits = self.logits(x)?;
        Ok(logits
            .as_dmatrix()
            .column_iter()
            .map(|c| c.argmax().0)
            .collect())
    }

    /// Mean softmax cross-entropy.
    pub fn loss(&self, x: &Matrix, labels: &[usize]) -> Result<f64> {
        self.check_labels(x, labels)?;
        let t = self.forward(x.as_dmatrix());
        Ok(cross_entropy(
            t.post.last().expect("at least one layer"),
            labels,
        ))
    }

    /// Loss and its gradient with respect to every parameter.
    pub fn gradients(&self, x: &Matrix, labels: &[usize]) -> Result<(f64, Gradients)> {
        self.check_labels(x, labels)?;
        Ok(self.backprop(x.as_dmatrix(), labels))
    }

    fn backprop(&self, x: &DMatrix<f64>, labels: &[usize]) -> (f64, Gradients) {
        let t = self.forward(x);
        let batch = x.ncols() as f64;
        let logits = t.post.last().expect("at least one layer");
        let loss = cross_entropy(logits, labels);

        // d loss / d logits = (softmax - onehot) / batch
        let mut delta = softmax_columns(logits);
        for (j, &y) in labels.iter().enumerate() {
            delta[(y, j)] -= 1.0;
        }
        delta /= batch;

        let layers = self.weights.len();
        let mut gw = vec![DMatrix::zeros(0, 0); layers];
        let mut gb = vec![DVector::zeros(0); layers];
        for l in (0..layers).rev() {
            let input = if l == 0 { x } else { &t.post[l - 1] };
            gw[l] = &delta * input.transpose();
            gb[l] = delta.column_sum();
            if l > 0 {
                let mut back = self.weights[l].transpose() * &delta;
                let (z, a) = (&t.pre[l - 1], &t.post[l - 1]);
                for ((d, &zv), &av) in back.iter_mut().zip(z.iter()).zip(a.iter()) {
                    *d *= self.activation.derivative(zv, av);
                }
                delta = back;
            }
        }
        (
            loss,
            Gradients {
                weights: gw,
                biases: gb,
            },
        )
    }

    fn sgd_step(&mut self, g: &Gradients, lr: f64) {
        for (w, d) in self.weights.iter_mut().zip(&g.weights) {
            *w -= d * lr;
        }
        for (b, d) in self.biases.iter_mut().zip(&g.biases) {
            *b -= d * lr;
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>()
            + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters flattened layer by layer: weights column-major, then bias.
    pub fn parameters(&self) -> Vec<f64> {
        flatten(&self.weights, &self.biases)
    }

    /// Sets the parameter at `index` of [`Mlp::parameters`].
    pub fn set_parameter(&mut self, mut index: usize, value: f64) -> Result<()> {
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            if index < w.len() {
                w.as_mut_slice()[index] = value;
                return Ok(());
            }
            index -= w.len();
            if index < b.len() {
                b[index] = value;
                return Ok(());
            }
            index -= b.len();
        }
        Err(Error::invalid("parameter index out of range"))
    }
}

fn cross_entropy(logits: &DMatrix<f64>, labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (col, &y) in logits.column_iter().zip(labels) {
        let m = col.max();
        let lse = m + col.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - col[y];
    }
    total / labels.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum LabelMode {
    TrueLabels,
    /// Every network given the same `shuffle_seed` sees identical labels.
    ShuffledLabels {
        shuffle_seed: u64,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointSchedule {
    Every(u64),
    /// This many steps spaced logarithmically between 1 and the last step.
    LogSpaced(usize),
}

impl Default for CheckpointSchedule {
    fn default() -> Self {
        CheckpointSchedule::LogSpaced(20)
    }
}

impl CheckpointSchedule {
    /// Sorted unique steps, always including 0 and `total`.
    pub fn steps(self, total: u64) -> Vec<u64> {
        let mut out = vec![0, total];
        match self {
            CheckpointSchedule::Every(k) if k > 0 => out.extend((k..total).step_by(k as usize)),
            CheckpointSchedule::Every(_) => {}
            CheckpointSchedule::LogSpaced(count) if total > 0 && count > 0 => {
                let top = (total as f64).ln();
                for i in 0..count {
                    let frac = if count == 1 {
                        1.0
                    } else {
                        i as f64 / (count - 1) as f64
                    };
                    out.push(((frac * top).exp().round() as u64).clamp(1, total));
                }
            }
            CheckpointSchedule::LogSpaced(_) => {}
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub checkpoints: CheckpointSchedule,
    pub label_mode: LabelMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.05,
            epochs: 100,
            batch_size: 32,
            checkpoints: CheckpointSchedule::default(),
            label_mode: LabelMode::TrueLabels,
        }
    }
}

impl TrainConfig {
    pub fn steps_per_epoch(&self, examples: usize) -> usize {
        examples.div_ceil(self.batch_size.max(1))
    }

    pub fn total_steps(&self, examples: usize) -> u64 {
        (self.epochs * self.steps_per_epoch(examples)) as u64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyNetCheckpoint {
    pub step: u64,
    /// Mean cross-entropy on the full training set.
    pub train_loss: f64,
    /// Hidden-layer outputs on the probe set, in layer order.
    pub per_layer_activations: Vec<ActivationMatrix>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRun {
    pub checkpoints: Vec<ToyNetCheckpoint>,
    pub final_train_loss: f64,
    pub final_train_accuracy: f64,
    pub network: Mlp,
    /// Labels the network was trained on.
    pub train_labels: Vec<usize>,
}

impl TrainRun {
    /// Checkpoints of one hidden layer as a series for the dynamics module.
    pub fn layer_series(&self, layer: usize) -> Result<CheckpointSeries> {
        let acts = self
            .checkpoints
            .iter()
            .map(|c| {
                c.per_layer_activations
                    .get(layer)
                    .cloned()
                    .ok_or_else(|| Error::invalid(format!("no hidden layer {layer}")))
            })
            .collect::<Result<Vec<_>>>()?;
        CheckpointSeries::new(self.checkpoints.iter().map(|c| c.step).collect(), acts)
    }

    pub fn final_activations(&self) -> &[ActivationMatrix] {
        &self
            .checkpoints
            .last()
            .expect("at least one checkpoint")
            .per_layer_activations
    }
}

pub fn accuracy(net: &Mlp, x: &Matrix, labels: &[usize]) -> Result<f64> {
    net.check_labels(x, labels)?;
    let pred = net.predict(x)?;
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Accuracy against the dataset's own labels.
pub fn evaluate_accuracy(net: &Mlp, d: &SyntheticDataset) -> Result<f64> {
    accuracy(net, d.inputs(), d.labels())
}

fn probe_activations(net: &Mlp, probe: &Matrix) -> Result<Vec<ActivationMatrix>> {
    net.hidden_activations(probe)?
        .into_iter()
        .map(ActivationMatrix::new)
        .collect()
}

/// Mini-batch SGD on softmax cross-entropy. Batches are reshuffled each
/// epoch from a stream derived from the network seed.
pub fn train_mlp(
    spec: &MlpSpec,
    data: &SyntheticDataset,
    cfg: &TrainConfig,
    probe: &Matrix,
) -> Result<TrainRun> {
    spec.validate()?;
    if !(cfg.learning_rate >= 0.0) || !cfg.learning_rate.is_finite() {
        return Err(Error::invalid("learning_rate must be finite and >= 0"));
    }
    let examples = data.examples();
    if cfg.batch_size == 0 || cfg.batch_size > examples {
        return Err(Error::invalid(format!(
            "batch_size must be in 1..={examples}"
        )));
    }
    if probe.cols() < 2 {
        return Err(Error::invalid("probe needs at least 2 examples"));
    }
    if spec.layer_widths[0] != data.features() || probe.rows() != data.features() {
        return Err(Error::invalid(
            "input width, dataset features and probe rows must agree",
        ));
    }
    if *spec.layer_widths.last().unwrap() < data.classes() {
        return Err(Error::invalid(
            "output width is smaller than the class count",
        ));
    }

    let data = match cfg.label_mode {
        LabelMode::TrueLabels => data.clone(),
        LabelMode::ShuffledLabels { shuffle_seed } => shuffle_labels(data, shuffle_seed),
    };
    let x = data.inputs().as_dmatrix();
    let labels = data.labels();

    let mut net = Mlp::init(spec)?;
    let total = cfg.total_steps(examples);
    let schedule = cfg.checkpoints.steps(total);
    let mut next_ck = 0;
    let mut checkpoints = Vec::with_capacity(schedule.len());
    let record = |net: &Mlp, step: u64, checkpoints: &mut Vec<ToyNetCheckpoint>| -> Result<()> {
        let train_loss = net.loss(data.inputs(), labels)?;
        if !train_loss.is_finite() {
            return Err(Error::DivergenceDetected { step });
        }
        checkpoints.push(ToyNetCheckpoint {
            step,
            train_loss,
            per_layer_activations: probe_activations(net, probe)?,
        });
        Ok(())
    };

    let mut order: Vec<usize> = (0..examples).collect();
    let mut r = rng::seeded(rng::derive_seed(spec.seed, 0xba7c));
    let mut step = 0u64;
    if schedule[next_ck] == 0 {
        record(&net, 0, &mut checkpoints)?;
        next_ck += 1;
    }
    for _ in 0..cfg.epochs {
        order.shuffle(&mut r);
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select_columns(batch);
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, g) = net.backprop(&xb, &yb);
            step += 1;
            if !loss.is_finite() {
                return Err(Error::DivergenceDetected { step });
            }
            net.sgd_step(&g, cfg.learning_rate);
            if next_ck < schedule.len() && schedule[next_ck] == step {
                record(&net, step, &mut checkpoints)?;
                next_ck += 1;
            }
        }
    }
    let last = checkpoints.last().expect("step 0 is always recorded");
    let final_train_loss = last.train_loss;
    let final_train_accuracy = accuracy(&net, data.inputs(), labels)?;
    Ok(TrainRun {
        checkpoints,
        final_train_loss,
        final_train_accuracy,
        network: net,
        train_labels: labels.to_vec(),
    })
}
