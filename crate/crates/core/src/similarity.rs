//! Scalar distances derived from CCA, plus cosine and Euclidean baselines.

use serde::{Deserialize, Serialize};

use crate::cca::{compute_cca, svcca_preprocess, ActivationMatrix, CcaResult, Side, DEFAULT_EPS};
use crate::error::{Error, Result};
use crate::tensor::{center_rows, chi_squared_sf, gram_schmidt};

/// Default significance level for Bartlett's sequential test.
pub const DEFAULT_ALPHA_LEVEL: f64 = 0.05;

/// Upper clamp applied to correlations before Bartlett's statistic, so that
/// perfectly correlated directions give a large finite statistic.
const BARTLETT_RHO_CAP: f64 = 1.0 - 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    MeanCca,
    Pwcca,
    BartlettCca,
    Cosine,
    Euclidean,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::MeanCca,
        Metric::Pwcca,
        Metric::BartlettCca,
        Metric::Cosine,
        Metric::Euclidean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::MeanCca => "mean_cca",
            Metric::Pwcca => "pwcca",
            Metric::BartlettCca => "bartlett_cca",
            Metric::Cosine => "cosine",
            Metric::Euclidean => "euclidean",
        }
    }
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        match norm.as_str() {
            "mean_cca" | "mean" | "svcca" => Ok(Metric::MeanCca),
            "pwcca" => Ok(Metric::Pwcca),
            "bartlett_cca" | "bartlett" => Ok(Metric::BartlettCca),
            "cosine" => Ok(Metric::Cosine),
            "euclidean" => Ok(Metric::Euclidean),
            _ => Err(Error::invalid(format!("unknown metric `{s}`"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Which layer projection weights were computed from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightDirection {
    #[default]
    L1Weighted,
    L2Weighted,
    /// Mean of the two one-sided distances.
    Symmetric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceReport {
    pub metric: Metric,
    pub distance: f64,
    /// Projection weights `alpha_i`, for one-sided PWCCA.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Number of significant correlations found by Bartlett's test.
    #[serde(default)]
    pub k_significant: Option<usize>,
    #[serde(default)]
    pub direction: Option<WeightDirection>,
    /// Unnormalized Frobenius distance, for the Euclidean metric.
    #[serde(default)]
    pub raw_distance: Option<f64>,
    /// Variance fraction of SVCCA pruning applied to both layers first.
    #[serde(default)]
    pub variance_fraction: Option<f64>,
}

impl DistanceReport {
    fn plain(metric: Metric, distance: f64) -> Self {
        DistanceReport {
            metric,
            distance,
            weights: None,
            k_significant: None,
            direction: None,
            raw_distance: None,
            variance_fraction: None,
        }
    }
}

/// `1 - mean(rho)`.
pub fn mean_cca_distance(r: &CcaResult) -> DistanceReport {
    let c = r.rho.len().max(1) as f64;
    let mean = r.rho.iter().sum::<f64>() / c;
    DistanceReport::plain(Metric::MeanCca, (1.0 - mean).clamp(0.0, 1.0))
}

/// Projection weights of the canonical vectors on `side` against the
/// neurons of `source`, the layer those vectors were computed from.
///
/// The canonical vectors are re-orthonormalized first; a vector dropped as
/// dependent gets weight zero.
pub fn projection_weights(
    r: &CcaResult,
    source: &ActivationMatrix,
    side: Side,
) -> Result<Vec<f64>> {
    let h = r.canonical(side);
    if source.datapoints() != h.cols() {
        return Err(Error::ColumnMismatch {
            left: source.datapoints(),
            right: h.cols(),
        });
    }
    let ortho = gram_schmidt(h);
    let z = center_rows(source.matrix());
    let z = z.as_dmatrix();
    let mut raw = vec![0.0; h.rows()];
    for (q, &idx) in ortho.rows.iter().zip(&ortho.kept) {
        raw[idx] = z
            .row_iter()
            .map(|row| row.iter().zip(q).map(|(a, b)| a * b).sum::<f64>().abs())
            .sum();
    }
    let total: f64 = raw.iter().sum();
    if !(total > 0.0) {
        return Err(Error::degenerate(
            "source is orthogonal to every canonical vector",
        ));
    }
    Ok(raw.into_iter().map(|v| v / total).collect())
}

fn weighted_distance(rho: &[f64], weights: &[f64]) -> f64 {
    let s: f64 = rho.iter().zip(weights).map(|(p, a)| p * a).sum();
    (1.0 - s).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PwccaOptions {
    pub eps: f64,
    pub direction: WeightDirection,
    /// When set, both layers are SVCCA-pruned at this fraction first.
    pub variance_fraction: Option<f64>,
}

impl Default for PwccaOptions {
    fn default() -> Self {
        PwccaOptions {
            eps: DEFAULT_EPS,
            direction: WeightDirection::L1Weighted,
            variance_fraction: None,
        }
    }
}

fn maybe_prune(
    l1: &ActivationMatrix,
    l2: &ActivationMatrix,
    fraction: Option<f64>,
) -> Result<(ActivationMatrix, ActivationMatrix)> {
    match fraction {
        Some(f) => Ok((svcca_preprocess(l1, f)?, svcca_preprocess(l2, f)?)),
        None => Ok((l1.clone(), l2.clone())),
    }
}

/// Projection-weighted CCA distance with weights from `l1`.
pub fn pwcca_distance(
    l1: &ActivationMatrix,
    l2: &ActivationMatrix,
    eps: f64,
) -> Result<DistanceReport> {
    pwcca_with(
        l1,
        l2,
        &PwccaOptions {
            eps,
            ..PwccaOptions::default()
        },
    )
}

pub fn pwcca_with(
    l1: &ActivationMatrix,
    l2: &ActivationMatrix,
    opts: &PwccaOptions,
) -> Result<DistanceReport> {
    let (l1, l2) = maybe_prune(l1, l2, opts.variance_fraction)?;
    let r = compute_cca(&l1, &l2, opts.eps)?;
    let (distance, weights) = match opts.direction {
        WeightDirection::L1Weighted => {
            let w = projection_weights(&r, &l1, Side::Left)?;
            (weighted_distance(&r.rho, &w), Some(w))
        }
        WeightDirection::L2Weighted => {
            let w = projection_weights(&r, &l2, Side::Right)?;
            (weighted_distance(&r.rho, &w), Some(w))
        }
        WeightDirection::Symmetric => {
            let w1 = projection_weights(&r, &l1, Side::Left)?;
            let w2 = projection_weights(&r, &l2, Side::Right)?;
            let d = 0.5 * (weighted_distance(&r.rho, &w1) + weighted_distance(&r.rho, &w2));
            (d, None)
        }
    };
    Ok(DistanceReport {
        weights,
        direction: Some(opts.direction),
        variance_fraction: opts.variance_fraction,
        ..DistanceReport::plain(Metric::Pwcca, distance)
    })
}

/// SVCCA: prune both layers to `variance_fraction`, then `1 - mean(rho)`.
pub fn svcca_distance(
    l1: &ActivationMatrix,
    l2: &ActivationMatrix,
    variance_fraction: f64,
    eps: f64,
) -> Result<DistanceReport> {
    let (p1, p2) = maybe_prune(l1, l2, Some(variance_fraction))?;
    let mut report = mean_cca_distance(&compute_cca(&p1, &p2, eps)?);
    report.variance_fraction = Some(variance_fraction);
    Ok(report)
}

fn check_bartlett_inputs(rho: &[f64], n: usize, a: usize, b: usize) -> Result<()> {
    if rho.is_empty() {
        return Err(Error::invalid("no canonical correlations"));
    }
    if rho.len() > a.min(b) {
        return Err(Error::invalid(format!(
            "{} correlations exceed min(a, b) = {}",
            rho.len(),
            a.min(b)
        )));
    }
    if n <= a + b {
        return Err(Error::invalid(format!(
            "Bartlett's test needs n > a + b (n={n}, a={a}, b={b})"
        )));
    }
    if let Some(p) = rho.iter().find(|p| !(**p >= 0.0 && **p < 1.0)) {
        return Err(Error::invalid(format!("correlation {p} outside [0, 1)")));
    }
    if rho.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::invalid("correlations must be sorted nonincreasing"));
    }
    Ok(())
}

/// Bartlett's statistic `T_k` for the null hypothesis that exactly `k`
/// canonical correlations are significant:
///
/// `T_k = -(n - k - (a + b + 1)/2 + sum_{i<=k} rho_i^-2) * ln prod_{i>k} (1 - rho_i^2)`
pub fn bartlett_statistic(rho: &[f64], n: usize, a: usize, b: usize, k: usize) -> Result<f64> {
    check_bartlett_inputs(rho, n, a, b)?;
    if k >= rho.len() {
        return Err(Error::invalid(format!(
            "k = {k} must be below the number of correlations {}",
            rho.len()
        )));
    }
    let mut correction = 0.0;
    for (i, &p) in rho[..k].iter().enumerate() {
        if p == 0.0 {
            return Err(Error::invalid(format!(
                "rho[{i}] = 0 in the correction term"
            )));
        }
        correction += 1.0 / (p * p);
    }
    let log_prod: f64 = rho[k..].iter().map(|&p| (-p * p).ln_1p()).sum();
    let factor = n as f64 - k as f64 - 0.5 * (a + b + 1) as f64 + correction;
    Ok(-factor * log_prod)
}

/// Sequential Bartlett test: the first `k` whose null is not rejected at
/// `alpha_level`, or the number of correlations if every null is rejected.
pub fn estimate_significant_correlations(
    rho: &[f64],
    n: usize,
    a: usize,
    b: usize,
    alpha_level: f64,
) -> Result<usize> {
    if !(alpha_level > 0.0 && alpha_level < 1.0) {
        return Err(Error::invalid("alpha_level must be in (0, 1)"));
    }
    check_bartlett_inputs(rho, n, a, b)?;
    for k in 0..rho.len() {
        let t = bartlett_statistic(rho, n, a, b, k)?;
        let p = chi_squared_sf(t.max(0.0), (a - k) * (b - k))?;
        if p > alpha_level {
            return Ok(k);
        }
    }
    Ok(rho.len())
}

/// Mean of the Bartlett-significant correlations, as a distance. No
/// significant correlation gives distance 1.
pub fn bartlett_cca_distance(
    l1: &ActivationMatrix,
    l2: &ActivationMatrix,
    alpha_level: f64,
) -> Result<DistanceReport> {
    bartlett_cca_distance_with(l1, l2, alpha_level, DEFAULT_EPS)
}

pub fn bartlett_cca_distance_with(
    l1: &ActivationMatrix,
    l2: &ActivationMatrix,
    alpha_level: f64,
    eps: f64,
) -> Result<DistanceReport> {
    let r = compute_cca(l1, l2, eps)?;
    let capped: Vec<f64> = r.rho.iter().map(|&p| p.min(BARTLETT_RHO_CAP)).collect();
    let k = estimate_significant_correlations(
        &capped,
        l1.datapoints(),
        r.retained_rank_left,
        r.retained_rank_right,
        alpha_level,
    )?;
    let distance = if k == 0 {
        1.0
    } else {
        (1.0 - r.rho[..k].iter().sum::<f64>() / k as f64).clamp(0.0, 1.0)
    };
    Ok(DistanceReport {
        k_significant: Some(k),
        ..DistanceReport::plain(Metric::BartlettCca, distance)
    })
}

fn same_shape(l1: &ActivationMatrix, l2: &ActivationMatrix) -> Result<()> {
    let (s1, s2) = (l1.matrix().shape(), l2.matrix().shape());
    if s1 != s2 {
        return Err(Error::ShapeMismatch {
            left: s1,
            right: s2,
        });
    }
    Ok(())
}

/// `1 - <vec L1, vec L2> / (|L1|_F |L2|_F)`, in `[0, 2]`.
pub fn cosine_distance(l1: &ActivationMatrix, l2: &ActivationMatrix) -> Result<DistanceReport> {
    same_shape(l1, l2)?;
    let (x, y) = (l1.matrix().as_dmatrix(), l2.matrix().as_dmatrix());
    let (nx, ny) = (x.norm(), y.norm());
    if nx == 0.0 || ny == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let cos = (x.dot(y) / (nx * ny)).clamp(-1.0, 1.0);
    Ok(DistanceReport::plain(Metric::Cosine, 1.0 - cos))
}

/// Per-entry RMS difference `|L1 - L2|_F / sqrt(a n)`; the raw Frobenius
/// distance is kept in `raw_distance`.
pub fn euclidean_distance(l1: &ActivationMatrix, l2: &ActivationMatrix) -> Result<DistanceReport> {
    same_shape(l1, l2)?;
    let raw = (l1.matrix().as_dmatrix() - l2.matrix().as_dmatrix()).norm();
    let count = (l1.neurons() * l1.datapoints()) as f64;
    Ok(DistanceReport {
        raw_distance: Some(raw),
        ..DistanceReport::plain(Metric::Euclidean, raw / count.sqrt())
    })
}

/// A metric plus every knob it may need.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricConfig {
    pub metric: Metric,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_alpha")]
    pub alpha_level: f64,
    #[serde(default)]
    pub direction: WeightDirection,
    /// SVCCA pruning of both layers before `mean_cca` or `pwcca`.
    #[serde(default)]
    pub variance_fraction: Option<f64>,
}

fn default_eps() -> f64 {
    DEFAULT_EPS
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA_LEVEL
}

impl MetricConfig {
    pub fn new(metric: Metric) -> Self {
        MetricConfig {
            metric,
            eps: DEFAULT_EPS,
            alpha_level: DEFAULT_ALPHA_LEVEL,
            direction: WeightDirection::L1Weighted,
            variance_fraction: None,
        }
    }

    pub fn with_variance_fraction(mut self, f: f64) -> Self {
        self.variance_fraction = Some(f);
        self
    }

    pub fn distance(&self, l1: &ActivationMatrix, l2: &ActivationMatrix) -> Result<DistanceReport> {
        match self.metric {
            Metric::MeanCca => match self.variance_fraction {
                Some(f) => svcca_distance(l1, l2, f, self.eps),
                None => Ok(mean_cca_distance(&compute_cca(l1, l2, self.eps)?)),
            },
            Metric::Pwcca => pwcca_with(
                l1,
                l2,
                &PwccaOptions {
                    eps: self.eps,
                    direction: self.direction,
                    variance_fraction: self.variance_fraction,
                },
            ),
            Metric::BartlettCca => bartlett_cca_distance_with(l1, l2, self.alpha_level, self.eps),
            Metric::Cosine => cosine_distance(l1, l2),
            Metric::Euclidean => euclidean_distance(l1, l2),
        }
    }
}

impl From<Metric> for MetricConfig {
    fn from(m: Metric) -> Self {
        MetricConfig::new(m)
    }
}
