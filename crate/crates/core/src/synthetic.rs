//! Ground-truth generators: layer pairs with a planted shared subspace buried
//! in independent noise, and toy recurrent networks whose hidden states are
//! rotations (optionally blended with a sigmoid term) of each other.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cca::{ActivationMatrix, DEFAULT_VARIANCE_FRACTION};
use crate::error::{Error, Result};
use crate::rng::{self, SeededRng};
use crate::similarity::{Metric, MetricConfig};
use crate::tensor::ortho::{haar_orthogonal, rotation_from_rng};
use crate::tensor::Matrix;

/// Signal dimensions swept by default.
pub const DEFAULT_K_GRID: [usize; 10] = [20, 50, 70, 80, 100, 120, 140, 160, 180, 199];

/// Hidden-state magnitude treated as overflow in the toy RNNs.
pub const OVERFLOW_LIMIT: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrSpec {
    pub total_dims: usize,
    pub datapoints: usize,
    pub signal_dims: usize,
    /// Standard deviation of the noise rows.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SnrSpec {
    fn default() -> Self {
        SnrSpec {
            total_dims: 200,
            datapoints: 2000,
            signal_dims: 20,
            noise_std: 0.1,
            seed: 0,
        }
    }
}

impl SnrSpec {
    pub fn validate(&self) -> Result<()> {
        if self.signal_dims == 0 || self.signal_dims > self.total_dims {
            return Err(Error::invalid(format!(
                "signal_dims must be in 1..={}, got {}",
                self.total_dims, self.signal_dims
            )));
        }
        if !(self.noise_std > 0.0) || !self.noise_std.is_finite() {
            return Err(Error::invalid("noise_std must be positive"));
        }
        if self.datapoints < 2 {
            return Err(Error::invalid("need at least 2 datapoints"));
        }
        Ok(())
    }
}

fn gaussian_block(rng: &mut SeededRng, rows: usize, cols: usize, std: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| std * rng::standard_normal(rng))
}

fn stack(top: DMatrix<f64>, bottom: Option<DMatrix<f64>>) -> Result<ActivationMatrix> {
    let m = match bottom {
        None => Matrix::from_dmatrix(top)?,
        Some(b) => Matrix::from_dmatrix(top)?.vstack(&Matrix::from_dmatrix(b)?)?,
    };
    ActivationMatrix::new(m)
}

/// `X = [S; N1]`, `Y = [Q S; N2]` with `S` standard normal `k x n`, `Q` a
/// random `k x k` orthogonal matrix and `N1`, `N2` independent noise rows.
pub fn make_signal_noise_pair(spec: &SnrSpec) -> Result<(ActivationMatrix, ActivationMatrix)> {
    spec.validate()?;
    let mut r = rng::seeded(spec.seed);
    let (k, n) = (spec.signal_dims, spec.datapoints);
    let noise_rows = spec.total_dims - k;
    let signal = gaussian_block(&mut r, k, n, 1.0);
    let noise_x = (noise_rows > 0).then(|| gaussian_block(&mut r, noise_rows, n, spec.noise_std));
    let q = haar_orthogonal(k, &mut r);
    let noise_y = (noise_rows > 0).then(|| gaussian_block(&mut r, noise_rows, n, spec.noise_std));
    let mixed = &q * &signal;
    Ok((stack(signal, noise_x)?, stack(mixed, noise_y)?))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMetric {
    MeanCca,
    Pwcca,
    /// Mean CCA after SVCCA pruning at 0.99 retained variance.
    Svcca,
}

impl SweepMetric {
    pub const ALL: [SweepMetric; 3] =
        [SweepMetric::MeanCca, SweepMetric::Pwcca, SweepMetric::Svcca];

    pub fn name(self) -> &'static str {
        match self {
            SweepMetric::MeanCca => "mean_cca",
            SweepMetric::Pwcca => "pwcca",
            SweepMetric::Svcca => "svcca",
        }
    }

    fn config(self) -> MetricConfig {
        match self {
            SweepMetric::MeanCca => MetricConfig::new(Metric::MeanCca),
            SweepMetric::Pwcca => MetricConfig::new(Metric::Pwcca),
            SweepMetric::Svcca => {
                MetricConfig::new(Metric::MeanCca).with_variance_fraction(DEFAULT_VARIANCE_FRACTION)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub k: usize,
    pub seed: u64,
    pub metric: SweepMetric,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub k: usize,
    pub metric: SweepMetric,
    pub mean: f64,
    /// Sample standard deviation over seeds (0 for a single seed).
    pub std: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrSweep {
    pub records: Vec<SweepRecord>,
    pub summary: Vec<SweepSummary>,
}

impl SnrSweep {
    pub fn mean(&self, k: usize, metric: SweepMetric) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.k == k && s.metric == metric)
            .map(|s| s.mean)
    }
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Runs every `(k, seed)` pair, recording mean CCA, PWCCA and SVCCA
/// distances. The pair for `(k, seed)` is generated with seed
/// `derive_seed(seed, k)`.
pub fn run_snr_sweep(k_values: &[usize], template: &SnrSpec, seeds: &[u64]) -> Result<SnrSweep> {
    if k_values.is_empty() {
        return Err(Error::invalid("k_values is empty"));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("seeds is empty"));
    }
    let jobs: Vec<(usize, u64)> = k_values
        .iter()
        .flat_map(|&k| seeds.iter().map(move |&s| (k, s)))
        .collect();
    let per_job: Vec<Vec<SweepRecord>> = jobs
        .par_iter()
        .map(|&(k, seed)| {
            let spec = SnrSpec {
                signal_dims: k,
                seed: rng::derive_seed(seed, k as u64),
                ..template.clone()
            };
            let (x, y) = make_signal_noise_pair(&spec)?;
            SweepMetric::ALL
                .iter()
                .map(|&metric| {
                    Ok(SweepRecord {
                        k,
                        seed,
                        metric,
                        distance: metric.config().distance(&x, &y)?.distance,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let records: Vec<SweepRecord> = per_job.into_iter().flatten().collect();
    let mut summary = Vec::new();
    for &k in k_values {
        for metric in SweepMetric::ALL {
            let vals: Vec<f64> = records
                .iter()
                .filter(|r| r.k == k && r.metric == metric)
                .map(|r| r.distance)
                .collect();
            let (mean, std) = mean_std(&vals);
            summary.push(SweepSummary {
                k,
                metric,
                mean,
                std,
                count: vals.len(),
            });
        }
    }
    Ok(SnrSweep { records, summary })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyRnnSpec {
    pub hidden_dim: usize,
    /// Number of hidden states returned, starting with the initial state.
    pub steps: usize,
    /// Independent runs; each run is one datapoint.
    pub runs: usize,
    /// Weight of the sigmoid term; 0 gives the pure rotation network.
    pub blend_alpha: f64,
    /// Bias added every step; empty means zero.
    #[serde(default)]
    pub bias: Vec<f64>,
    pub seed: u64,
}

impl Default for ToyRnnSpec {
    fn default() -> Self {
        ToyRnnSpec {
            hidden_dim: 64,
            steps: 50,
            runs: 1000,
            blend_alpha: 0.0,
            bias: Vec::new(),
            seed: 0,
        }
    }
}

impl ToyRnnSpec {
    fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.steps == 0 {
            return Err(Error::invalid("hidden_dim and steps must be at least 1"));
        }
        if self.runs < 2 {
            return Err(Error::invalid("need at least 2 runs"));
        }
        if !(self.blend_alpha >= 0.0) || !self.blend_alpha.is_finite() {
            return Err(Error::invalid("blend_alpha must be finite and >= 0"));
        }
        if !self.bias.is_empty() && self.bias.len() != self.hidden_dim {
            return Err(Error::invalid(format!(
                "bias has {} entries, hidden_dim is {}",
                self.bias.len(),
                self.hidden_dim
            )));
        }
        if self.bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("bias must be finite"));
        }
        Ok(())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn simulate(spec: &ToyRnnSpec) -> Result<Vec<ActivationMatrix>> {
    spec.validate()?;
    let d = spec.hidden_dim;
    let mut r = rng::seeded(spec.seed);
    let rot = rotation_from_rng(d, &mut r);
    let mut h = gaussian_block(&mut r, d, spec.runs, 1.0);
    let w_rand = gaussian_block(&mut r, d, d, 1.0);
    let bias = if spec.bias.is_empty() {
        DVector::zeros(d)
    } else {
        DVector::from_column_slice(&spec.bias)
    };

    let mut states = Vec::with_capacity(spec.steps);
    for step in 0..spec.steps {
        if step > 0 {
            let mut next = &rot * &h;
            if spec.blend_alpha != 0.0 {
                let gate = (&w_rand * &h).map(sigmoid);
                next += gate * spec.blend_alpha;
            }
            for mut col in next.column_iter_mut() {
                col += &bias;
            }
            h = next;
        }
        let peak = h.amax();
        if !(peak <= OVERFLOW_LIMIT) {
            return Err(Error::NumericalOverflow { step, value: peak });
        }
        states.push(ActivationMatrix::new(Matrix::from_dmatrix(h.clone())?)?);
    }
    Ok(states)
}

/// Linear RNN `h_{t+1} = W_rot h_t` with a random rotation `W_rot` and
/// `h_0 ~ N(0, I)` per run. Requires `blend_alpha == 0` and zero bias.
pub fn simulate_rotation_rnn(spec: &ToyRnnSpec) -> Result<Vec<ActivationMatrix>> {
    if spec.blend_alpha != 0.0 || spec.bias.iter().any(|&b| b != 0.0) {
        return Err(Error::invalid(
            "the rotation RNN has no sigmoid term and no bias",
        ));
    }
    simulate(spec)
}

/// `h_{t+1} = W_rot h_t + alpha * sigmoid(W_rand h_t) + b`, `W_rand` iid
/// standard normal. Fails with `NumericalOverflow` rather than clipping.
pub fn simulate_blended_rnn(spec: &ToyRnnSpec) -> Result<Vec<ActivationMatrix>> {
    simulate(spec)
}

/// Distance from every state to the final state.
pub fn timestep_distance_profile(
    states: &[ActivationMatrix],
    metric: &MetricConfig,
) -> Result<Vec<f64>> {
    let last = states
        .last()
        .filter(|_| states.len() >= 2)
        .ok_or_else(|| Error::invalid("need at least 2 timesteps"))?;
    states
        .par_iter()
        .map(|s| metric.distance(s, last).map(|r| r.distance))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cca::{compute_cca, DEFAULT_EPS};
    use approx::assert_abs_diff_eq;

    fn small(k: usize, seed: u64) -> SnrSpec {
        SnrSpec {
            total_dims: 40,
            datapoints: 600,
            signal_dims: k,
            noise_std: 0.1,
            seed,
        }
    }

    #[test]
    fn pair_shapes_and_determinism() {
        let (x, y) = make_signal_noise_pair(&small(10, 3)).unwrap();
        assert_eq!(x.matrix().shape(), (40, 600));
        assert_eq!(y.matrix().shape(), (40, 600));
        let (x2, y2) = make_signal_noise_pair(&small(10, 3)).unwrap();
        assert_eq!(x, x2);
        assert_eq!(y, y2);
        // noise rows have std ~ 0.1, independent between X and Y
        let nx = x.matrix().row(30);
        let sd = (nx.iter().map(|v| v * v).sum::<f64>() / 600.0).sqrt();
        assert!((sd - 0.1).abs() < 0.02);
        assert_ne!(x.matrix().row(30), y.matrix().row(30));
    }

    #[test]
    fn pair_validation() {
        assert!(make_signal_noise_pair(&small(0, 1)).is_err());
        assert!(make_signal_noise_pair(&small(41, 1)).is_err());
        assert!(make_signal_noise_pair(&SnrSpec {
            noise_std: 0.0,
            ..small(5, 1)
        })
        .is_err());
    }

    #[test]
    fn all_signal_pair_is_exactly_related() {
        let (x, y) = make_signal_noise_pair(&small(40, 8)).unwrap();
        let d = MetricConfig::new(Metric::Pwcca)
            .distance(&x, &y)
            .unwrap()
            .distance;
        assert!(d < 1e-4);
    }

    #[test]
    fn planted_subspace_is_recovered() {
        let spec = SnrSpec {
            signal_dims: 20,
            seed: 5,
            ..SnrSpec::default()
        };
        let (x, y) = make_signal_noise_pair(&spec).unwrap();
        let r = compute_cca(&x, &y, DEFAULT_EPS).unwrap();
        assert!(r.rho[..20].iter().all(|&p| p > 0.9));
        assert!(r.rho[20] < 0.9);
        let tail = r.rho[100..].iter().sum::<f64>() / 100.0;
        assert!(tail < 0.5, "tail mean {tail}");
    }

    #[test]
    fn sweep_table_layout() {
        let sweep = run_snr_sweep(&[5, 20], &small(5, 0), &[1, 2]).unwrap();
        assert_eq!(sweep.records.len(), 2 * 2 * 3);
        assert_eq!(sweep.summary.len(), 2 * 3);
        for s in &sweep.summary {
            assert_eq!(s.count, 2);
            assert!((0.0..=1.0).contains(&s.mean));
        }
        let again = run_snr_sweep(&[5, 20], &small(5, 0), &[1, 2]).unwrap();
        assert_eq!(sweep, again);
        assert!(
            sweep.mean(5, SweepMetric::Pwcca).unwrap()
                < sweep.mean(5, SweepMetric::MeanCca).unwrap()
        );
        assert!(run_snr_sweep(&[], &small(5, 0), &[1]).is_err());
    }

    fn rnn(alpha: f64, seed: u64) -> ToyRnnSpec {
        ToyRnnSpec {
            hidden_dim: 16,
            steps: 12,
            runs: 200,
            blend_alpha: alpha,
            bias: vec![],
            seed,
        }
    }

    #[test]
    fn rotation_preserves_norms_and_gram() {
        let states = simulate_rotation_rnn(&rnn(0.0, 2)).unwrap();
        assert_eq!(states.len(), 12);
        let h0 = states[0].matrix().as_dmatrix();
        for s in &states {
            let h = s.matrix().as_dmatrix();
            for (c0, c) in h0.column_iter().zip(h.column_iter()) {
                assert_abs_diff_eq!(c0.norm(), c.norm(), epsilon = 1e-10 * c0.norm().max(1.0));
            }
        }
        for w in states.windows(2) {
            let (a, b) = (w[0].matrix().as_dmatrix(), w[1].matrix().as_dmatrix());
            let ga = a.transpose() * a;
            let gb = b.transpose() * b;
            assert!((ga - gb).amax() < 1e-10);
        }
    }

    #[test]
    fn rotation_profiles() {
        let states = simulate_rotation_rnn(&rnn(0.0, 3)).unwrap();
        let pw = timestep_distance_profile(&states, &MetricConfig::new(Metric::Pwcca)).unwrap();
        assert!(pw.iter().all(|&d| d < 1e-3));
        let eu = timestep_distance_profile(&states, &MetricConfig::new(Metric::Euclidean)).unwrap();
        assert_eq!(*eu.last().unwrap(), 0.0);
        assert!(eu[..11].iter().all(|&d| d > 0.1));
        let cos = timestep_distance_profile(&states, &MetricConfig::new(Metric::Cosine)).unwrap();
        assert!(cos[..11].iter().filter(|&&d| d > 0.5).count() >= 8);
    }

    #[test]
    fn zero_blend_matches_rotation() {
        let a = simulate_rotation_rnn(&rnn(0.0, 4)).unwrap();
        let b = simulate_blended_rnn(&rnn(0.0, 4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            simulate_blended_rnn(&rnn(3.0, 4)).unwrap(),
            simulate_blended_rnn(&rnn(3.0, 4)).unwrap()
        );
        assert!(simulate_rotation_rnn(&rnn(1.0, 4)).is_err());
    }

    #[test]
    fn overflow_is_reported() {
        let spec = ToyRnnSpec {
            bias: vec![5e12; 16],
            ..rnn(0.0, 1)
        };
        assert!(matches!(
            simulate_blended_rnn(&spec),
            Err(Error::NumericalOverflow { .. })
        ));
        assert!(simulate_blended_rnn(&ToyRnnSpec {
            bias: vec![0.0; 3],
            ..rnn(0.0, 1)
        })
        .is_err());
    }

    #[test]
    fn profile_needs_two_states() {
        let states = simulate_rotation_rnn(&ToyRnnSpec {
            steps: 1,
            ..rnn(0.0, 1)
        })
        .unwrap();
        assert!(timestep_distance_profile(&states, &MetricConfig::new(Metric::Cosine)).is_err());
    }
}
