use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};

use repsim_core::analysis::{agglomerative_cluster, DistanceMatrix};
use repsim_core::io;
use repsim_core::recipe::{run_recipe, ExperimentSpec, Recipe, RecipeOutcome};
use repsim_core::{Error, Metric, MetricConfig};

/// Representational similarity of neural-network layers via CCA.
///
/// Set REPSIM_THREADS to cap the worker threads used for parallel work.
#[derive(Parser, Debug)]
#[command(name = "repsim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Distance between two activation files (NPY or CSV, rows = neurons)
    Compare(CompareArgs),
    /// Distance matrix over several activation files, optionally clustered
    Pairwise(PairwiseArgs),
    /// Planted signal/noise sweep over the signal dimension k
    SnrSweep(SnrArgs),
    /// Toy rotation / blended RNN distance-to-final-state profiles
    RnnToy(RnnArgs),
    /// Train groups of toy MLPs and compare them
    TrainGroup(TrainGroupArgs),
    /// Distance of every checkpoint to the final one, per layer
    Convergence(ConvergenceArgs),
    /// Stable/unstable subspace split and its similarity curves
    Stability(StabilityArgs),
    /// Average-linkage clustering of a saved distance matrix
    Cluster(ClusterArgs),
    /// Run any recipe from a TOML or JSON experiment file
    Run(RunArgs),
}

#[derive(Args, Debug, Clone)]
struct MetricArgs {
    /// mean_cca | pwcca | bartlett_cca | cosine | euclidean
    #[arg(long)]
    metric: Option<String>,
    /// Relative eigenvalue cutoff for whitening
    #[arg(long)]
    eps: Option<f64>,
    /// Significance level for bartlett_cca
    #[arg(long)]
    alpha: Option<f64>,
    /// PWCCA weighting: l1_weighted | l2_weighted | symmetric
    #[arg(long)]
    direction: Option<String>,
    /// Apply SVCCA pruning keeping this fraction of variance first
    #[arg(long)]
    variance_fraction: Option<f64>,
}

impl MetricArgs {
    fn config(&self) -> anyhow::Result<MetricConfig> {
        let mut cfg = MetricConfig::new(match &self.metric {
            Some(name) => name
                .parse()
                .map_err(|_| usage(format!("unknown metric `{name}`")))?,
            None => Metric::Pwcca,
        });
        if let Some(v) = self.eps {
            cfg.eps = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha_level = v;
        }
        if let Some(d) = &self.direction {
            cfg.direction = serde_json::from_value(Value::String(d.clone()))
                .map_err(|_| usage(format!("unknown direction `{d}`")))?;
        }
        cfg.variance_fraction = self.variance_fraction;
        Ok(cfg)
    }

    fn apply(&self, p: &mut Map<String, Value>) {
        set(p, "metric", self.metric.clone());
        set(p, "eps", self.eps);
        set(p, "alpha", self.alpha);
        set(p, "direction", self.direction.clone());
        set(p, "variance_fraction", self.variance_fraction);
    }
}

#[derive(Args, Debug, Clone)]
struct RunCommon {
    /// Experiment file supplying parameters (flags take precedence)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated seeds
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Extra parameter override, KEY=VALUE (VALUE parsed as JSON if possible)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// First layer's activations
    a: PathBuf,
    /// Second layer's activations, same datapoints in the same order
    b: PathBuf,
    /// Treat file rows as datapoints instead of neurons
    #[arg(long)]
    transpose: bool,
    #[command(flatten)]
    metric: MetricArgs,
    /// Also write the full report as JSON
    #[arg(long)]
    report: Option<PathBuf>,
    /// Print the full report as JSON instead of just the distance
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct PairwiseArgs {
    /// Activation files, one per layer
    #[arg(required = true, num_args = 2..)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    transpose: bool,
    /// Cluster the resulting matrix
    #[arg(long)]
    cluster: bool,
    /// Fixed cluster count (implies --cluster)
    #[arg(short)]
    k: Option<usize>,
    #[command(flatten)]
    metric: MetricArgs,
    #[command(flatten)]
    common: RunCommon,
}

#[derive(Args, Debug)]
struct SnrArgs {
    /// Comma-separated signal dimensions
    #[arg(long, value_delimiter = ',')]
    k_values: Option<Vec<usize>>,
    /// Neurons per layer, signal plus noise rows
    #[arg(long)]
    total_dims: Option<usize>,
    /// Datapoints per layer
    #[arg(long)]
    datapoints: Option<usize>,
    /// Standard deviation of the noise rows
    #[arg(long)]
    noise_std: Option<f64>,
    #[command(flatten)]
    common: RunCommon,
}

#[derive(Args, Debug)]
struct RnnArgs {
    /// Hidden state size
    #[arg(long)]
    hidden_dim: Option<usize>,
    /// Hidden states recorded per run, including the initial one
    #[arg(long)]
    steps: Option<usize>,
    /// Independent runs; each is one datapoint
    #[arg(long)]
    runs: Option<usize>,
    /// Weight of the sigmoid term (0 = pure rotation)
    #[arg(long)]
    blend_alpha: Option<f64>,
    /// Comma-separated metrics to profile
    #[arg(long, value_delimiter = ',')]
    metrics: Option<Vec<String>>,
    #[command(flatten)]
    common: RunCommon,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum Experiment {
    GenMem,
    WidthSweep,
    LrSweep,
}

#[derive(Args, Debug, Clone)]
struct NetArgs {
    /// Comma-separated hidden widths
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Class-cluster standard deviation of the synthetic data
    #[arg(long)]
    spread: Option<f64>,
    /// Where activations are measured: heldout | train
    #[arg(long)]
    probe: Option<String>,
}

impl NetArgs {
    fn apply(&self, p: &mut Map<String, Value>) {
        set(p, "hidden", self.hidden.clone());
        set(p, "epochs", self.epochs);
        set(p, "learning_rate", self.learning_rate);
        set(p, "batch_size", self.batch_size);
        set(p, "spread", self.spread);
        set(p, "probe", self.probe.clone());
    }
}

#[derive(Args, Debug)]
struct TrainGroupArgs {
    #[arg(long, value_enum)]
    experiment: Experiment,
    #[arg(long)]
    group_size: Option<usize>,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    metric: MetricArgs,
    #[command(flatten)]
    common: RunCommon,
}

#[derive(Args, Debug)]
struct ConvergenceArgs {
    /// Directory with manifest.json; trains a toy network when absent
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Comma-separated layer indices to analyse
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    metric: MetricArgs,
    #[command(flatten)]
    common: RunCommon,
}

#[derive(Args, Debug)]
struct StabilityArgs {
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    #[arg(long)]
    layer: Option<usize>,
    /// Step of the early checkpoint (defaults to the second checkpoint)
    #[arg(long)]
    t_early: Option<u64>,
    /// Directions per set
    #[arg(short)]
    m: Option<usize>,
    /// early | mid
    #[arg(long)]
    anchor: Option<String>,
    #[command(flatten)]
    net: NetArgs,
    #[command(flatten)]
    metric: MetricArgs,
    #[command(flatten)]
    common: RunCommon,
}

#[derive(Args, Debug)]
struct ClusterArgs {
    /// Distance matrix: JSON written by `pairwise`, or a numeric square CSV
    matrix: PathBuf,
    /// Fixed cluster count; chosen by the largest merge-height gap when absent
    #[arg(short)]
    k: Option<usize>,
    /// Write assignments as JSON here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Override the recipe named in the config file. One of: snr_sweep,
    /// rnn_toy, gen_mem, width_sweep, lr_sweep, convergence, stability_split,
    /// pairwise, compare
    #[arg(long)]
    recipe: Option<String>,
    #[command(flatten)]
    common: RunCommon,
}

fn set<T: Into<Value>>(p: &mut Map<String, Value>, key: &str, v: Option<T>) {
    if let Some(v) = v {
        p.insert(key.to_string(), v.into());
    }
}

/// Usage problems exit with status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

/// Config file (if any) for `recipe`, then flag overrides on top.
fn build_spec(
    recipe: Recipe,
    common: &RunCommon,
    flags: Map<String, Value>,
) -> anyhow::Result<ExperimentSpec> {
    let mut spec = match &common.config {
        Some(path) => {
            let spec = ExperimentSpec::from_file(path)
                .with_context(|| format!("reading {}", path.display()))?;
            if spec.recipe != recipe {
                return Err(usage(format!(
                    "{} describes recipe `{}`, not `{recipe}`",
                    path.display(),
                    spec.recipe
                )));
            }
            spec
        }
        None => ExperimentSpec::new(recipe, default_out(recipe)),
    };
    apply_common(&mut spec, common)?;
    spec.parameters.extend(flags);
    Ok(spec)
}

fn default_out(recipe: Recipe) -> PathBuf {
    PathBuf::from("repsim-out").join(recipe.name())
}

fn apply_common(spec: &mut ExperimentSpec, common: &RunCommon) -> anyhow::Result<()> {
    if let Some(out) = &common.out {
        spec.output_dir = out.clone();
    }
    if let Some(seeds) = &common.seeds {
        spec.seeds = seeds.clone();
    }
    for kv in &common.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
        spec.parameters.insert(k.trim().to_string(), value);
    }
    Ok(())
}

fn paths(v: &[PathBuf]) -> Value {
    Value::Array(
        v.iter()
            .map(|p| Value::String(p.display().to_string()))
            .collect(),
    )
}

fn print_outcome(out: &RecipeOutcome) -> anyhow::Result<()> {
    println!(
        "{}",
        serde_json::to_string_pretty(&json!({
            "recipe": out.recipe,
            "output_dir": out.output_dir,
            "files": out.files,
            "summary": out.summary,
        }))?
    );
    Ok(())
}

fn run_and_print(spec: ExperimentSpec) -> anyhow::Result<()> {
    let out = run_recipe(&spec)?;
    print_outcome(&out)
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Compare(a) => {
            let cfg = a.metric.config()?;
            let la = io::load_activations(&a.a, a.transpose)?;
            let lb = io::load_activations(&a.b, a.transpose)?;
            let report = cfg.distance(&la, &lb)?;
            if let Some(path) = &a.report {
                let spec = json!({ "a": a.a, "b": a.b, "transpose": a.transpose, "metric": cfg });
                io::save_report(&report, &io::Provenance::new(spec, vec![]), path)?;
            }
            if a.json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                println!("{:?}", report.distance);
            }
            Ok(())
        }
        Command::Pairwise(a) => {
            let mut p = Map::new();
            p.insert("inputs".into(), paths(&a.inputs));
            p.insert("transpose".into(), a.transpose.into());
            if a.cluster {
                p.insert("cluster".into(), true.into());
            }
            set(&mut p, "k", a.k);
            a.metric.apply(&mut p);
            run_and_print(build_spec(Recipe::Pairwise, &a.common, p)?)
        }
        Command::SnrSweep(a) => {
            let mut p = Map::new();
            set(&mut p, "k_values", a.k_values);
            set(&mut p, "total_dims", a.total_dims);
            set(&mut p, "datapoints", a.datapoints);
            set(&mut p, "noise_std", a.noise_std);
            run_and_print(build_spec(Recipe::SnrSweep, &a.common, p)?)
        }
        Command::RnnToy(a) => {
            let mut p = Map::new();
            set(&mut p, "hidden_dim", a.hidden_dim);
            set(&mut p, "steps", a.steps);
            set(&mut p, "runs", a.runs);
            set(&mut p, "blend_alpha", a.blend_alpha);
            set(&mut p, "metrics", a.metrics);
            run_and_print(build_spec(Recipe::RnnToy, &a.common, p)?)
        }
        Command::TrainGroup(a) => {
            let recipe = match a.experiment {
                Experiment::GenMem => Recipe::GenMem,
                Experiment::WidthSweep => Recipe::WidthSweep,
                Experiment::LrSweep => Recipe::LrSweep,
            };
            let mut p = Map::new();
            set(&mut p, "group_size", a.group_size);
            a.net.apply(&mut p);
            a.metric.apply(&mut p);
            run_and_print(build_spec(recipe, &a.common, p)?)
        }
        Command::Convergence(a) => {
            let mut p = Map::new();
            set(
                &mut p,
                "checkpoint_dir",
                a.checkpoint_dir.map(|d| d.display().to_string()),
            );
            set(&mut p, "layers", a.layers);
            a.net.apply(&mut p);
            a.metric.apply(&mut p);
            run_and_print(build_spec(Recipe::Convergence, &a.common, p)?)
        }
        Command::Stability(a) => {
            let mut p = Map::new();
            set(
                &mut p,
                "checkpoint_dir",
                a.checkpoint_dir.map(|d| d.display().to_string()),
            );
            set(&mut p, "layer", a.layer);
            set(&mut p, "t_early", a.t_early);
            set(&mut p, "m", a.m);
            set(&mut p, "anchor", a.anchor);
            a.net.apply(&mut p);
            a.metric.apply(&mut p);
            run_and_print(build_spec(Recipe::StabilitySplit, &a.common, p)?)
        }
        Command::Cluster(a) => {
            let d = load_distance_matrix(&a.matrix)?;
            let c = agglomerative_cluster(&d, a.k)?;
            let body = json!({ "labels": d.labels(), "clusters": c });
            match &a.out {
                Some(path) => {
                    let prov = io::Provenance::new(json!({ "matrix": a.matrix, "k": a.k }), vec![]);
                    io::write_artifact(path, "cluster_assignment", &prov, &body)?;
                }
                None => println!("{}", serde_json::to_string_pretty(&body)?),
            }
            Ok(())
        }
        Command::Run(a) => {
            let config = a
                .common
                .config
                .as_ref()
                .ok_or_else(|| usage("run needs --config"))?;
            let mut spec = ExperimentSpec::from_file(config)
                .with_context(|| format!("reading {}", config.display()))?;
            if let Some(name) = &a.recipe {
                spec.recipe = name.parse()?;
            }
            apply_common(&mut spec, &a.common)?;
            run_and_print(spec)
        }
    }
}

fn load_distance_matrix(path: &std::path::Path) -> anyhow::Result<DistanceMatrix> {
    if path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
    {
        return Ok(io::load_matrix_artifact(path)?.body);
    }
    let m = io::load_matrix(path, false)?;
    Ok(DistanceMatrix::unlabelled(m)?)
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("REPSIM_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        usage(format!(
            "REPSIM_THREADS must be a positive integer, got `{raw}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| anyhow!("thread pool: {e}"))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<Usage>().is_some() {
        return 2;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::UnknownRecipe(_)) | Some(Error::Parameter { .. }) => 2,
        _ => 1,
    }
}

fn error_record(err: &anyhow::Error) -> Value {
    let kind = if err.downcast_ref::<Usage>().is_some() {
        "usage"
    } else {
        err.downcast_ref::<Error>().map_or("runtime", Error::kind)
    };
    // Some errors already print their source; don't repeat it.
    let mut message = String::new();
    for cause in err.chain() {
        let text = cause.to_string();
        if message.contains(&text) {
            continue;
        }
        if !message.is_empty() {
            message.push_str(": ");
        }
        message.push_str(&text);
    }
    json!({
        "error": kind,
        "message": message,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| execute(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_record(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
