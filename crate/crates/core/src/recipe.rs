//! Declarative experiment runner. A spec names a recipe, its parameters, the
//! seeds to run, and an output directory; running it writes the resolved spec,
//! per-seed and aggregated tables, plot-ready CSV and a JSON result.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::analysis::{
    agglomerative_cluster, pairwise_distance_matrix_labelled, pearson_correlation, same_partition,
};
use crate::dynamics::{
    convergence_curve, split_stable_unstable_with, stability_curves, CheckpointSeries, SplitAnchor,
};
use crate::error::{Error, Result};
use crate::io::{self, fmt_real, Provenance, Table};
use crate::rng::derive_seed;
use crate::similarity::{Metric, MetricConfig, WeightDirection, DEFAULT_ALPHA_LEVEL};
use crate::synthetic::{self, SnrSpec, SweepMetric, ToyRnnSpec, DEFAULT_K_GRID};
use crate::toy_nets::{
    make_dataset, run_group_experiment_with, train_mlp, Activation, CheckpointSchedule,
    GroupMember, LabelMode, MlpSpec, SyntheticDataset, TrainConfig, TrainRun,
};
use crate::{cca::DEFAULT_EPS, tensor::Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recipe {
    SnrSweep,
    RnnToy,
    GenMem,
    WidthSweep,
    LrSweep,
    Convergence,
    StabilitySplit,
    Pairwise,
    Compare,
}

impl Recipe {
    pub const ALL: [Recipe; 9] = [
        Recipe::SnrSweep,
        Recipe::RnnToy,
        Recipe::GenMem,
        Recipe::WidthSweep,
        Recipe::LrSweep,
        Recipe::Convergence,
        Recipe::StabilitySplit,
        Recipe::Pairwise,
        Recipe::Compare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Recipe::SnrSweep => "snr_sweep",
            Recipe::RnnToy => "rnn_toy",
            Recipe::GenMem => "gen_mem",
            Recipe::WidthSweep => "width_sweep",
            Recipe::LrSweep => "lr_sweep",
            Recipe::Convergence => "convergence",
            Recipe::StabilitySplit => "stability_split",
            Recipe::Pairwise => "pairwise",
            Recipe::Compare => "compare",
        }
    }
}

impl FromStr for Recipe {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Recipe::ALL
            .into_iter()
            .find(|r| r.name() == norm)
            .ok_or_else(|| Error::UnknownRecipe(s.to_string()))
    }
}

impl fmt::Display for Recipe {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub recipe: Recipe,
    pub parameters: Map<String, Value>,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    recipe: String,
    #[serde(default)]
    parameters: Map<String, Value>,
    #[serde(default)]
    seeds: Vec<u64>,
    #[serde(default)]
    output_dir: Option<PathBuf>,
}

impl ExperimentSpec {
    pub fn new(recipe: Recipe, output_dir: impl Into<PathBuf>) -> Self {
        ExperimentSpec {
            recipe,
            parameters: Map::new(),
            seeds: vec![0],
            output_dir: output_dir.into(),
        }
    }

    pub fn with_param(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.parameters.insert(key.to_string(), value.into());
        self
    }

    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        self.seeds = seeds;
        self
    }

    fn from_raw(raw: RawSpec) -> Result<Self> {
        Ok(ExperimentSpec {
            recipe: raw.recipe.parse()?,
            parameters: raw.parameters,
            seeds: if raw.seeds.is_empty() {
                vec![0]
            } else {
                raw.seeds
            },
            output_dir: raw.output_dir.unwrap_or_else(|| PathBuf::from("out")),
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_raw(toml::from_str(text)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Self::from_raw(serde_json::from_str(text)?)
    }

    /// `.json` files are read as JSON, anything else as TOML.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"))
        {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }
}

/// Parameter lookup that records every resolved value, defaults included,
/// and rejects keys the recipe never asked for.
struct Params {
    recipe: Recipe,
    given: Map<String, Value>,
    resolved: Map<String, Value>,
}

fn param_err(name: &str, reason: impl Into<String>) -> Error {
    Error::Parameter {
        name: name.to_string(),
        reason: reason.into(),
    }
}

impl Params {
    fn new(recipe: Recipe, given: Map<String, Value>) -> Self {
        Params {
            recipe,
            given,
            resolved: Map::new(),
        }
    }

    fn take<T: Serialize + DeserializeOwned>(
        &mut self,
        key: &str,
        default: Option<T>,
    ) -> Result<Option<T>> {
        let out = match self.given.get(key) {
            Some(v) => Some(serde_json::from_value::<T>(v.clone()).map_err(|e| {
                param_err(key, format!("expected {}: {e}", std::any::type_name::<T>()))
            })?),
            None => default,
        };
        if let Some(v) = &out {
            self.resolved
                .insert(key.to_string(), serde_json::to_value(v)?);
        }
        Ok(out)
    }

    fn get<T: Serialize + DeserializeOwned>(&mut self, key: &str, default: T) -> Result<T> {
        Ok(self.take(key, Some(default))?.expect("default supplied"))
    }

    fn opt<T: Serialize + DeserializeOwned>(&mut self, key: &str) -> Result<Option<T>> {
        self.take(key, None)
    }

    fn required<T: Serialize + DeserializeOwned>(&mut self, key: &str) -> Result<T> {
        self.take(key, None)?
            .ok_or_else(|| param_err(key, format!("required by recipe {}", self.recipe)))
    }

    fn positive(&mut self, key: &str, default: f64) -> Result<f64> {
        let v: f64 = self.get(key, default)?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(param_err(key, "must be positive"));
        }
        Ok(v)
    }

    fn count(&mut self, key: &str, default: usize) -> Result<usize> {
        let v: usize = self.get(key, default)?;
        if v == 0 {
            return Err(param_err(key, "must be at least 1"));
        }
        Ok(v)
    }

    fn metric(&mut self, default: Metric) -> Result<MetricConfig> {
        let name: String = self.get("metric", default.name().to_string())?;
        let metric: Metric = name
            .parse()
            .map_err(|_| param_err("metric", format!("unknown metric `{name}`")))?;
        self.resolved.insert("metric".into(), json!(metric.name()));
        let mut cfg = MetricConfig::new(metric);
        cfg.eps = self.positive("eps", DEFAULT_EPS)?;
        cfg.alpha_level = self.positive("alpha", DEFAULT_ALPHA_LEVEL)?;
        cfg.direction = self.get("direction", WeightDirection::default())?;
        cfg.variance_fraction = self.opt("variance_fraction")?;
        Ok(cfg)
    }

    fn finish(self) -> Result<Map<String, Value>> {
        if let Some(k) = self.given.keys().find(|k| !self.resolved.contains_key(*k)) {
            return Err(param_err(
                k,
                format!("not a parameter of recipe {}", self.recipe),
            ));
        }
        Ok(self.resolved)
    }
}

/// Files written by a recipe and its headline numbers.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecipeOutcome {
    pub recipe: Recipe,
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    pub summary: Value,
}

struct Writer {
    dir: PathBuf,
    provenance: Provenance,
    files: Vec<PathBuf>,
}

impl Writer {
    fn table(&mut self, name: &str, t: &Table) -> Result<()> {
        let p = self.dir.join(name);
        t.write(&p, Some(&self.provenance))?;
        self.files.push(p);
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, kind: &str, body: &T) -> Result<()> {
        let p = self.dir.join(name);
        io::write_artifact(&p, kind, &self.provenance, body)?;
        self.files.push(p);
        Ok(())
    }

    fn matrix(&mut self, name: &str, d: &crate::analysis::DistanceMatrix) -> Result<()> {
        let p = self.dir.join(name);
        let csv = io::save_matrix(d, &self.provenance, &p)?;
        self.files.push(p);
        self.files.push(csv);
        Ok(())
    }
}

fn header(cols: &[&str]) -> Table {
    Table::new(cols.iter().map(|s| s.to_string()).collect())
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    synthetic::mean_std(v)
}

/// Plot-ready `series, x, mean, std` table.
#[derive(Default)]
struct Plot {
    points: BTreeMap<(String, u64), (f64, Vec<f64>)>,
}

impl Plot {
    /// `order` keeps x values in insertion order within a series.
    fn add(&mut self, series: &str, order: u64, x: f64, y: f64) {
        self.points
            .entry((series.to_string(), order))
            .or_insert_with(|| (x, Vec::new()))
            .1
            .push(y);
    }

    fn table(&self) -> Table {
        let mut t = header(&["series", "x", "mean", "std"]);
        for ((series, _), (x, ys)) in &self.points {
            let (m, s) = mean_std(ys);
            t.push(vec![series.clone(), fmt_real(*x), fmt_real(m), fmt_real(s)]);
        }
        t
    }
}

pub fn run_recipe(spec: &ExperimentSpec) -> Result<RecipeOutcome> {
    if spec.seeds.is_empty() {
        return Err(param_err("seeds", "at least one seed is required"));
    }
    let mut p = Params::new(spec.recipe, spec.parameters.clone());
    let job = resolve(spec.recipe, &mut p)?;
    let resolved = ExperimentSpec {
        recipe: spec.recipe,
        parameters: p.finish()?,
        seeds: spec.seeds.clone(),
        output_dir: spec.output_dir.clone(),
    };
    let provenance = Provenance::new(serde_json::to_value(&resolved)?, spec.seeds.clone());
    let mut w = Writer {
        dir: spec.output_dir.clone(),
        provenance,
        files: Vec::new(),
    };
    w.json("spec.json", "experiment_spec", &resolved)?;
    let summary = job.run(&spec.seeds, &mut w)?;
    w.json(
        "result.json",
        "recipe_result",
        &json!({ "recipe": spec.recipe, "summary": summary }),
    )?;
    Ok(RecipeOutcome {
        recipe: spec.recipe,
        output_dir: spec.output_dir.clone(),
        files: w.files,
        summary,
    })
}

enum Job {
    SnrSweep {
        template: SnrSpec,
        k_values: Vec<usize>,
    },
    RnnToy {
        spec: ToyRnnSpec,
        metrics: Vec<Metric>,
    },
    GenMem(GenMem),
    WidthSweep(WidthSweep),
    LrSweep(LrSweep),
    Convergence(Source, MetricConfig),
    Stability(Source, StabilityParams),
    Pairwise {
        inputs: Vec<PathBuf>,
        transpose: bool,
        metric: MetricConfig,
        k: Option<usize>,
        cluster: bool,
    },
    Compare {
        a: PathBuf,
        b: PathBuf,
        transpose: bool,
        metric: MetricConfig,
    },
}

fn resolve(recipe: Recipe, p: &mut Params) -> Result<Job> {
    Ok(match recipe {
        Recipe::SnrSweep => {
            let template = SnrSpec {
                total_dims: p.count("total_dims", 200)?,
                datapoints: p.count("datapoints", 2000)?,
                signal_dims: 1,
                noise_std: p.positive("noise_std", 0.1)?,
                seed: 0,
            };
            let k_values: Vec<usize> = p.get("k_values", DEFAULT_K_GRID.to_vec())?;
            if k_values.is_empty() || k_values.iter().any(|&k| k == 0 || k > template.total_dims) {
                return Err(param_err(
                    "k_values",
                    format!("must be nonempty, each in 1..={}", template.total_dims),
                ));
            }
            Job::SnrSweep { template, k_values }
        }
        Recipe::RnnToy => {
            let d = ToyRnnSpec::default();
            let hidden_dim = p.count("hidden_dim", d.hidden_dim)?;
            let spec = ToyRnnSpec {
                hidden_dim,
                steps: p.count("steps", d.steps)?,
                runs: p.get("runs", d.runs)?,
                blend_alpha: p.get("blend_alpha", 0.0)?,
                bias: p.get("bias", Vec::<f64>::new())?,
                seed: 0,
            };
            let names: Vec<String> = p.get(
                "metrics",
                vec![
                    "pwcca".into(),
                    "mean_cca".into(),
                    "cosine".into(),
                    "euclidean".into(),
                ],
            )?;
            let metrics = names
                .iter()
                .map(|n| {
                    n.parse::<Metric>()
                        .map_err(|_| param_err("metrics", format!("unknown metric `{n}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            Job::RnnToy { spec, metrics }
        }
        Recipe::GenMem => Job::GenMem(GenMem::resolve(p)?),
        Recipe::WidthSweep => Job::WidthSweep(WidthSweep::resolve(p)?),
        Recipe::LrSweep => Job::LrSweep(LrSweep::resolve(p)?),
        Recipe::Convergence => {
            let src = Source::resolve(p)?;
            Job::Convergence(src, p.metric(Metric::Pwcca)?)
        }
        Recipe::StabilitySplit => {
            let src = Source::resolve(p)?;
            let sp = StabilityParams {
                layer: p.get("layer", 0usize)?,
                t_early: p.opt("t_early")?,
                m: p.opt("m")?,
                anchor: p.get("anchor", SplitAnchor::Early)?,
                metric: p.metric(Metric::MeanCca)?,
            };
            Job::Stability(src, sp)
        }
        Recipe::Pairwise => {
            let inputs: Vec<PathBuf> = p.required("inputs")?;
            if inputs.len() < 2 {
                return Err(param_err("inputs", "need at least 2 activation files"));
            }
            Job::Pairwise {
                inputs,
                transpose: p.get("transpose", false)?,
                metric: p.metric(Metric::Pwcca)?,
                cluster: p.get("cluster", false)?,
                k: p.opt("k")?,
            }
        }
        Recipe::Compare => Job::Compare {
            a: p.required("a")?,
            b: p.required("b")?,
            transpose: p.get("transpose", false)?,
            metric: p.metric(Metric::Pwcca)?,
        },
    })
}

impl Job {
    fn run(self, seeds: &[u64], w: &mut Writer) -> Result<Value> {
        match self {
            Job::SnrSweep { template, k_values } => run_snr(&template, &k_values, seeds, w),
            Job::RnnToy { spec, metrics } => run_rnn(&spec, &metrics, seeds, w),
            Job::GenMem(g) => g.run(seeds, w),
            Job::WidthSweep(g) => g.run(seeds, w),
            Job::LrSweep(g) => g.run(seeds, w),
            Job::Convergence(src, metric) => run_convergence(&src, &metric, seeds, w),
            Job::Stability(src, sp) => run_stability(&src, &sp, seeds, w),
            Job::Pairwise {
                inputs,
                transpose,
                metric,
                k,
                cluster,
            } => run_pairwise(&inputs, transpose, &metric, cluster, k, w),
            Job::Compare {
                a,
                b,
                transpose,
                metric,
            } => {
                let la = io::load_activations(&a, transpose)?;
                let lb = io::load_activations(&b, transpose)?;
                let report = metric.distance(&la, &lb)?;
                w.json("report.json", "distance_report", &report)?;
                Ok(serde_json::to_value(&report)?)
            }
        }
    }
}

fn run_snr(template: &SnrSpec, k_values: &[usize], seeds: &[u64], w: &mut Writer) -> Result<Value> {
    let sweep = synthetic::run_snr_sweep(k_values, template, seeds)?;
    let mut per_seed = header(&["k", "seed", "metric", "distance"]);
    for r in &sweep.records {
        per_seed.push(vec![
            r.k.to_string(),
            r.seed.to_string(),
            r.metric.name().into(),
            fmt_real(r.distance),
        ]);
    }
    w.table("per_seed.csv", &per_seed)?;

    let mut cols = vec!["k".to_string()];
    for m in SweepMetric::ALL {
        cols.push(format!("{}_mean", m.name()));
        cols.push(format!("{}_std", m.name()));
    }
    let mut summary = Table::new(cols);
    let mut plot = header(&["series", "x", "mean", "std"]);
    for &k in k_values {
        let mut row = vec![k.to_string()];
        for m in SweepMetric::ALL {
            let s = sweep
                .summary
                .iter()
                .find(|s| s.k == k && s.metric == m)
                .expect("summary covers every k and metric");
            row.push(fmt_real(s.mean));
            row.push(fmt_real(s.std));
        }
        summary.push(row);
    }
    for m in SweepMetric::ALL {
        for s in sweep.summary.iter().filter(|s| s.metric == m) {
            plot.push(vec![
                m.name().into(),
                s.k.to_string(),
                fmt_real(s.mean),
                fmt_real(s.std),
            ]);
        }
    }
    w.table("summary.csv", &summary)?;
    w.table("plot.csv", &plot)?;
    Ok(serde_json::to_value(&sweep.summary)?)
}

fn run_rnn(spec: &ToyRnnSpec, metrics: &[Metric], seeds: &[u64], w: &mut Writer) -> Result<Value> {
    let mut per_seed = header(&["seed", "t", "metric", "distance"]);
    let mut plot = Plot::default();
    for &seed in seeds {
        let s = ToyRnnSpec {
            seed,
            ..spec.clone()
        };
        let states = synthetic::simulate_blended_rnn(&s)?;
        for &m in metrics {
            let profile = synthetic::timestep_distance_profile(&states, &MetricConfig::new(m))?;
            for (t, d) in profile.iter().enumerate() {
                per_seed.push(vec![
                    seed.to_string(),
                    t.to_string(),
                    m.name().into(),
                    fmt_real(*d),
                ]);
                plot.add(m.name(), t as u64, t as f64, *d);
            }
        }
    }
    w.table("per_seed.csv", &per_seed)?;
    let plot = plot.table();
    w.table("plot.csv", &plot)?;
    w.table("summary.csv", &plot)?;
    let mut out = Map::new();
    for &m in metrics {
        let means: Vec<f64> = plot
            .rows
            .iter()
            .filter(|r| r[0] == m.name())
            .map(|r| r[2].parse().expect("written by fmt_real"))
            .collect();
        out.insert(m.name().into(), json!(means));
    }
    Ok(Value::Object(out))
}

/// Data and architecture shared by the toy-network recipes.
#[derive(Clone, Debug)]
struct ToyNet {
    features: usize,
    classes: usize,
    per_class: usize,
    spread: f64,
    probe_per_class: usize,
    probe_on_train: bool,
    hidden: Vec<usize>,
    activation: Activation,
    learning_rate: f64,
    epochs: usize,
    batch_size: usize,
    checkpoints: usize,
}

struct ToyDefaults {
    spread: f64,
    probe_per_class: usize,
    hidden: Vec<usize>,
    learning_rate: f64,
    epochs: usize,
}

impl ToyNet {
    fn resolve(p: &mut Params, d: ToyDefaults) -> Result<Self> {
        let probe: String = p.get("probe", "heldout".to_string())?;
        let probe_on_train = match probe.as_str() {
            "heldout" => false,
            "train" => true,
            _ => return Err(param_err("probe", "expected `heldout` or `train`")),
        };
        let hidden: Vec<usize> = p.get("hidden", d.hidden)?;
        if hidden.is_empty() || hidden.contains(&0) {
            return Err(param_err(
                "hidden",
                "need at least one hidden layer, widths >= 1",
            ));
        }
        Ok(ToyNet {
            features: p.count("features", 20)?,
            classes: p.count("classes", 4)?,
            per_class: p.count("per_class", 50)?,
            spread: p.positive("spread", d.spread)?,
            probe_per_class: p.count("probe_per_class", d.probe_per_class)?,
            probe_on_train,
            hidden,
            activation: p.get("activation", Activation::Relu)?,
            learning_rate: p.positive("learning_rate", d.learning_rate)?,
            epochs: p.count("epochs", d.epochs)?,
            batch_size: p.count("batch_size", 20)?,
            checkpoints: p.count("checkpoints", 20)?,
        })
    }

    /// Training data and probe inputs for one repetition.
    fn data(&self, seed: u64) -> Result<(SyntheticDataset, Matrix)> {
        let d = make_dataset(
            self.features,
            self.classes,
            self.per_class,
            self.spread,
            derive_seed(seed, 1),
        )?;
        let probe = if self.probe_on_train {
            d.inputs().clone()
        } else {
            d.resample(self.probe_per_class, derive_seed(seed, 2))?
                .into_inputs()
        };
        Ok((d, probe))
    }

    fn spec(&self, hidden: &[usize], seed: u64) -> MlpSpec {
        let mut widths = vec![self.features];
        widths.extend_from_slice(hidden);
        widths.push(self.classes);
        MlpSpec::new(widths, self.activation, seed)
    }

    fn config(&self, learning_rate: f64, label_mode: LabelMode) -> TrainConfig {
        TrainConfig {
            learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            checkpoints: CheckpointSchedule::LogSpaced(self.checkpoints),
            label_mode,
        }
    }
}

#[derive(Clone, Debug)]
struct GenMem {
    net: ToyNet,
    group_size: usize,
    shuffle_seed: Option<u64>,
    metric: MetricConfig,
}

impl GenMem {
    fn resolve(p: &mut Params) -> Result<Self> {
        let net = ToyNet::resolve(
            p,
            ToyDefaults {
                spread: 1.0,
                probe_per_class: 100,
                hidden: vec![64, 64],
                learning_rate: 0.05,
                epochs: 1500,
            },
        )?;
        Ok(GenMem {
            net,
            group_size: p.get("group_size", crate::toy_nets::DEFAULT_GROUP_SIZE)?,
            shuffle_seed: p.opt("shuffle_seed")?,
            metric: p.metric(Metric::Pwcca)?,
        })
    }

    fn run(&self, seeds: &[u64], w: &mut Writer) -> Result<Value> {
        if self.group_size < 2 {
            return Err(param_err("group_size", "must be at least 2"));
        }
        let mut per_seed = header(&[
            "seed",
            "layer",
            "within_generalizing",
            "within_memorizing",
            "inter",
            "max_train_loss",
        ]);
        let mut plot = Plot::default();
        let mut wins = 0;
        let mut reps = Vec::new();
        for &seed in seeds {
            let (data, probe) = self.net.data(seed)?;
            let shuffle_seed = self.shuffle_seed.unwrap_or_else(|| derive_seed(seed, 3));
            let mut group = Vec::new();
            for (name, mode, stream) in [
                ("generalizing", LabelMode::TrueLabels, 100),
                (
                    "memorizing",
                    LabelMode::ShuffledLabels { shuffle_seed },
                    200,
                ),
            ] {
                for i in 0..self.group_size as u64 {
                    group.push(GroupMember {
                        group: name.into(),
                        spec: self
                            .net
                            .spec(&self.net.hidden, derive_seed(seed, stream + i)),
                        config: self.net.config(self.net.learning_rate, mode),
                    });
                }
            }
            let exp = run_group_experiment_with(&group, &data, &probe, &self.metric)?;
            let max_loss = exp
                .members
                .iter()
                .map(|m| m.final_train_loss)
                .fold(0.0, f64::max);
            for (l, d) in exp.layers.iter().enumerate() {
                let g = exp
                    .within_mean(l, "generalizing")
                    .expect("group is nonempty");
                let m = exp.within_mean(l, "memorizing").expect("group is nonempty");
                let inter = exp
                    .between_mean(l, "generalizing", "memorizing")
                    .expect("groups are nonempty");
                per_seed.push(vec![
                    seed.to_string(),
                    l.to_string(),
                    fmt_real(g),
                    fmt_real(m),
                    fmt_real(inter),
                    fmt_real(max_loss),
                ]);
                plot.add("generalizing", l as u64, l as f64, g);
                plot.add("memorizing", l as u64, l as f64, m);
                plot.add("inter", l as u64, l as f64, inter);
                w.matrix(&format!("matrix_seed{seed}_layer{l}.json"), d)?;
                if l == exp.last_layer() {
                    wins += usize::from(g < m);
                    reps.push(json!({
                        "seed": seed,
                        "within_generalizing": g,
                        "within_memorizing": m,
                        "max_train_loss": max_loss,
                    }));
                }
            }
        }
        w.table("per_seed.csv", &per_seed)?;
        let plot = plot.table();
        w.table("summary.csv", &plot)?;
        w.table("plot.csv", &plot)?;
        Ok(json!({
            "repetitions": seeds.len(),
            "generalizing_closer_at_last_layer": wins,
            "last_layer": reps,
        }))
    }
}

#[derive(Clone, Debug)]
struct WidthSweep {
    net: ToyNet,
    scales: Vec<f64>,
    group_size: usize,
    test_per_class: usize,
    metric: MetricConfig,
}

impl WidthSweep {
    fn resolve(p: &mut Params) -> Result<Self> {
        let net = ToyNet::resolve(
            p,
            ToyDefaults {
                spread: 2.5,
                probe_per_class: 250,
                hidden: vec![16, 16],
                learning_rate: 0.05,
                epochs: 50,
            },
        )?;
        let scales: Vec<f64> = p.get("scales", vec![0.5, 1.0, 2.0, 4.0])?;
        if scales.len() < 2 || scales.iter().any(|s| !(*s > 0.0)) {
            return Err(param_err("scales", "need at least 2 positive scales"));
        }
        Ok(WidthSweep {
            net,
            scales,
            group_size: p.get("group_size", crate::toy_nets::DEFAULT_GROUP_SIZE)?,
            test_per_class: p.count("test_per_class", 250)?,
            metric: p.metric(Metric::Pwcca)?,
        })
    }

    fn run(&self, seeds: &[u64], w: &mut Writer) -> Result<Value> {
        if self.group_size < 2 {
            return Err(param_err("group_size", "must be at least 2"));
        }
        let mut per_seed = header(&["seed", "scale", "hidden", "mean_distance", "test_accuracy"]);
        let mut corr = header(&["seed", "pearson_accuracy_vs_distance"]);
        let mut plot = Plot::default();
        let mut correlations = Vec::new();
        let mut curves = Vec::new();
        for &seed in seeds {
            let (data, probe) = self.net.data(seed)?;
            let test = data.resample(self.test_per_class, derive_seed(seed, 4))?;
            let mut group = Vec::new();
            let mut names = Vec::new();
            for (si, &scale) in self.scales.iter().enumerate() {
                let hidden: Vec<usize> = self
                    .net
                    .hidden
                    .iter()
                    .map(|&h| ((h as f64 * scale).round() as usize).max(1))
                    .collect();
                let name = format!("scale_{scale}");
                for i in 0..self.group_size as u64 {
                    group.push(GroupMember {
                        group: name.clone(),
                        spec: self
                            .net
                            .spec(&hidden, derive_seed(seed, 1000 * (si as u64 + 1) + i)),
                        config: self
                            .net
                            .config(self.net.learning_rate, LabelMode::TrueLabels),
                    });
                }
                names.push((name, scale, hidden));
            }
            let exp = run_group_experiment_with(&group, &data, &probe, &self.metric)?;
            let last = exp.last_layer();
            let (mut dists, mut accs) = (Vec::new(), Vec::new());
            for (si, (name, scale, hidden)) in names.iter().enumerate() {
                let d = exp.within_mean(last, name).expect("group is nonempty");
                let a = exp.group_accuracy(name, &test)?;
                per_seed.push(vec![
                    seed.to_string(),
                    fmt_real(*scale),
                    format!("{hidden:?}"),
                    fmt_real(d),
                    fmt_real(a),
                ]);
                plot.add("mean_distance", si as u64, *scale, d);
                plot.add("test_accuracy", si as u64, *scale, a);
                dists.push(d);
                accs.push(a);
            }
            let r = pearson_correlation(&accs, &dists).unwrap_or(f64::NAN);
            corr.push(vec![seed.to_string(), fmt_real(r)]);
            correlations.push(r);
            curves.push(dists);
        }
        w.table("per_seed.csv", &per_seed)?;
        w.table("correlations.csv", &corr)?;
        let plot = plot.table();
        w.table("summary.csv", &plot)?;
        w.table("plot.csv", &plot)?;
        Ok(json!({ "mean_distance_by_seed": curves, "correlations": correlations }))
    }
}

#[derive(Clone, Debug)]
struct LrSweep {
    net: ToyNet,
    learning_rates: Vec<f64>,
    group_size: usize,
    k: Option<usize>,
    metric: MetricConfig,
}

impl LrSweep {
    fn resolve(p: &mut Params) -> Result<Self> {
        let net = ToyNet::resolve(
            p,
            ToyDefaults {
                spread: 1.0,
                probe_per_class: 100,
                hidden: vec![32, 32],
                learning_rate: 0.05,
                epochs: 100,
            },
        )?;
        let learning_rates: Vec<f64> =
            p.get("learning_rates", vec![0.005, 0.01, 0.02, 0.05, 0.1])?;
        if learning_rates.len() < 2 || learning_rates.iter().any(|v| !(*v > 0.0)) {
            return Err(param_err(
                "learning_rates",
                "need at least 2 positive rates",
            ));
        }
        Ok(LrSweep {
            net,
            learning_rates,
            group_size: p.get("group_size", crate::toy_nets::DEFAULT_GROUP_SIZE)?,
            k: p.opt("k")?,
            metric: p.metric(Metric::Pwcca)?,
        })
    }

    fn run(&self, seeds: &[u64], w: &mut Writer) -> Result<Value> {
        let mut clusters = header(&["seed", "label", "learning_rate", "cluster"]);
        let mut out = Vec::new();
        for &seed in seeds {
            let (data, probe) = self.net.data(seed)?;
            let mut group = Vec::new();
            for (li, &lr) in self.learning_rates.iter().enumerate() {
                for i in 0..self.group_size as u64 {
                    group.push(GroupMember {
                        group: format!("lr_{lr}"),
                        spec: self.net.spec(
                            &self.net.hidden,
                            derive_seed(seed, 1000 * (li as u64 + 1) + i),
                        ),
                        config: self.net.config(lr, LabelMode::TrueLabels),
                    });
                }
            }
            let exp = run_group_experiment_with(&group, &data, &probe, &self.metric)?;
            let d = &exp.layers[exp.last_layer()];
            w.matrix(&format!("matrix_seed{seed}.json"), d)?;
            let c = agglomerative_cluster(d, self.k)?;
            let truth: Vec<usize> = (0..group.len()).map(|i| i / self.group_size).collect();
            for (i, m) in group.iter().enumerate() {
                clusters.push(vec![
                    seed.to_string(),
                    d.labels()[i].clone(),
                    fmt_real(m.config.learning_rate),
                    c.assignments[i].to_string(),
                ]);
            }
            out.push(json!({
                "seed": seed,
                "chosen_k": c.chosen_k,
                "matches_learning_rate_groups": same_partition(&c.assignments, &truth),
                "max_asymmetry": d.max_asymmetry(),
            }));
        }
        w.table("clusters.csv", &clusters)?;
        Ok(Value::Array(out))
    }
}

/// Checkpoints either loaded from a directory or produced by training a toy
/// network per seed.
#[derive(Clone, Debug)]
enum Source {
    Directory {
        dir: PathBuf,
        layers: Option<Vec<usize>>,
    },
    Train {
        net: ToyNet,
        save: bool,
    },
}

impl Source {
    fn resolve(p: &mut Params) -> Result<Self> {
        if let Some(dir) = p.opt::<PathBuf>("checkpoint_dir")? {
            return Ok(Source::Directory {
                dir,
                layers: p.opt("layers")?,
            });
        }
        let net = ToyNet::resolve(
            p,
            ToyDefaults {
                spread: 1.0,
                probe_per_class: 100,
                hidden: vec![32, 32, 32],
                learning_rate: 0.05,
                epochs: 100,
            },
        )?;
        Ok(Source::Train {
            net,
            save: p.get("save_checkpoints", false)?,
        })
    }

    /// Per-layer series for one seed. Directories ignore the seed.
    fn series(&self, seed: u64, w: &mut Writer) -> Result<Vec<CheckpointSeries>> {
        match self {
            Source::Directory { dir, layers } => {
                let manifest = io::load_manifest(dir)?;
                let depth = manifest.entries.first().map_or(0, |e| e.layers.len());
                let wanted = layers.clone().unwrap_or_else(|| (0..depth).collect());
                wanted
                    .iter()
                    .map(|&l| io::load_checkpoint_series(dir, l))
                    .collect()
            }
            Source::Train { net, save } => {
                let (data, probe) = net.data(seed)?;
                let spec = net.spec(&net.hidden, derive_seed(seed, 100));
                let run: TrainRun = train_mlp(
                    &spec,
                    &data,
                    &net.config(net.learning_rate, LabelMode::TrueLabels),
                    &probe,
                )?;
                if *save {
                    let dir = w.dir.join(format!("checkpoints_seed{seed}"));
                    io::save_train_run(&run, &dir, &w.provenance)?;
                    w.files.push(dir.join(io::MANIFEST_FILE));
                }
                (0..net.hidden.len()).map(|l| run.layer_series(l)).collect()
            }
        }
    }
}

fn run_convergence(
    src: &Source,
    metric: &MetricConfig,
    seeds: &[u64],
    w: &mut Writer,
) -> Result<Value> {
    let mut per_seed = header(&["seed", "layer", "step", "distance"]);
    let mut plot = Plot::default();
    let mut first = Vec::new();
    for &seed in seeds {
        let layers = src.series(seed, w)?;
        let mut row = Vec::new();
        for (l, s) in layers.iter().enumerate() {
            let curve = convergence_curve(s, metric)?;
            for (i, (&step, d)) in s.steps().iter().zip(&curve).enumerate() {
                per_seed.push(vec![
                    seed.to_string(),
                    l.to_string(),
                    step.to_string(),
                    fmt_real(*d),
                ]);
                plot.add(&format!("layer_{l}"), i as u64, step as f64, *d);
            }
            row.push(curve);
        }
        first.push(row);
    }
    w.table("per_seed.csv", &per_seed)?;
    let plot = plot.table();
    w.table("summary.csv", &plot)?;
    w.table("plot.csv", &plot)?;
    Ok(json!({ "curves": first }))
}

#[derive(Clone, Debug)]
struct StabilityParams {
    layer: usize,
    t_early: Option<u64>,
    m: Option<usize>,
    anchor: SplitAnchor,
    metric: MetricConfig,
}

fn run_stability(
    src: &Source,
    sp: &StabilityParams,
    seeds: &[u64],
    w: &mut Writer,
) -> Result<Value> {
    let mut per_seed = header(&["seed", "step", "stable", "unstable"]);
    let mut plot = Plot::default();
    let mut splits = Vec::new();
    for &seed in seeds {
        let layers = src.series(seed, w)?;
        let series = layers
            .get(sp.layer)
            .ok_or_else(|| param_err("layer", format!("only {} layers available", layers.len())))?;
        let t_early = sp
            .t_early
            .unwrap_or(series.steps()[1.min(series.len() - 1)]);
        let split = split_stable_unstable_with(series, t_early, sp.m, sp.anchor, sp.metric.eps)?;
        let curves = stability_curves(series, &split, &sp.metric)?;
        for (i, &step) in curves.steps.iter().enumerate() {
            per_seed.push(vec![
                seed.to_string(),
                step.to_string(),
                fmt_real(curves.stable[i]),
                fmt_real(curves.unstable[i]),
            ]);
            plot.add("stable", i as u64, step as f64, curves.stable[i]);
            plot.add("unstable", i as u64, step as f64, curves.unstable[i]);
        }
        splits.push(json!({
            "seed": seed,
            "t_early": split.t_early,
            "t_mid": split.t_mid,
            "m": split.m,
            "stable_rho": split.stable_rho,
            "unstable_rho": split.unstable_rho,
        }));
    }
    w.table("per_seed.csv", &per_seed)?;
    let plot = plot.table();
    w.table("summary.csv", &plot)?;
    w.table("plot.csv", &plot)?;
    w.json(
        "splits.json",
        "stability_splits",
        &json!({ "splits": splits }),
    )?;
    Ok(Value::Array(splits))
}

fn run_pairwise(
    inputs: &[PathBuf],
    transpose: bool,
    metric: &MetricConfig,
    cluster: bool,
    k: Option<usize>,
    w: &mut Writer,
) -> Result<Value> {
    let layers = inputs
        .iter()
        .map(|p| io::load_activations(p, transpose))
        .collect::<Result<Vec<_>>>()?;
    let labels = inputs.iter().map(|p| p.display().to_string()).collect();
    let d = pairwise_distance_matrix_labelled(&layers, labels, metric)?;
    w.matrix("matrix.json", &d)?;
    let mut out = json!({ "max_asymmetry": d.max_asymmetry(), "values": d.values().to_rows() });
    if cluster || k.is_some() {
        let c = agglomerative_cluster(&d, k)?;
        let mut t = header(&["label", "cluster"]);
        for (label, a) in d.labels().iter().zip(&c.assignments) {
            t.push(vec![label.clone(), a.to_string()]);
        }
        w.table("clusters.csv", &t)?;
        out["clusters"] = serde_json::to_value(&c)?;
    }
    Ok(out)
}
