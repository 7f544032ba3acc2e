//! Command-line driver for deep semi-supervised max-margin clustering runs.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use deepmmc::constraints::{read_constraints, write_constraints};
use deepmmc::data::{write_atomic, LabelColumn};
use deepmmc::evaluation::{adjusted_rand_index, clustering_accuracy};
use deepmmc::experiment::{run_experiment, write_report, DatasetSource, ExperimentConfig, RunReport};
use deepmmc::model_io::{load_model, save_model};
use deepmmc::{Error, Result};

const EXIT_CONFIG: u8 = 2;
const EXIT_DATA: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "deepmmc", version, about = "Deep semi-supervised max-margin clustering")]
#[command(args_override_self = true)]
struct Cli {
    /// `key = value` file whose keys mirror the long flags; flags given on
    /// the command line win.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// One configuration over the seed list.
    Train(RunArgs),
    /// Sweep the number of sampled constraints.
    Sweep(RunArgs),
    /// Compare transductive weights.
    Ablate(RunArgs),
    /// Cluster a dataset with a saved model.
    Eval(EvalArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// CSV dataset.
    #[arg(long, conflicts_with_all = ["images", "blobs"])]
    data: Option<PathBuf>,
    /// `last`, `none`, or a 0-based column index.
    #[arg(long, default_value = "last")]
    label_column: String,
    /// IDX image file (optionally gzipped).
    #[arg(long, requires = "labels")]
    images: Option<PathBuf>,
    /// IDX label file (optionally gzipped).
    #[arg(long, requires = "images")]
    labels: Option<PathBuf>,
    /// Random subsample size for IDX data.
    #[arg(long)]
    limit: Option<usize>,
    /// Synthetic Gaussian blobs: `n,clusters,dim,separation,seed`.
    #[arg(long)]
    blobs: Option<String>,
}

/// A comma-separated flag value. Parsed as one value so that a repeated
/// flag replaces the earlier list instead of extending it.
#[derive(Debug, Clone)]
struct List<T>(Vec<T>);

fn parse_list<T: FromStr>(s: &str) -> std::result::Result<List<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|e| format!("{v:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map(List)
}

#[derive(Args, Debug, Clone)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Hidden layer widths, bottom to top.
    #[arg(long, default_value = "100", value_parser = parse_list::<usize>)]
    layers: List<usize>,
    /// Cluster count; defaults to the number of label classes.
    #[arg(long)]
    clusters: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    /// Transductive weight(s).
    #[arg(long, default_value = "1", value_parser = parse_list::<f64>)]
    beta: List<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Fixed step size of the encoder weights.
    #[arg(long)]
    net_rate: Option<f64>,
    #[arg(long)]
    tolerance: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
    #[arg(long)]
    pretrain_epochs: Option<usize>,
    #[arg(long)]
    minibatch: Option<usize>,
    #[arg(long)]
    pretrain_rate: Option<f64>,
    #[arg(long)]
    gaussian_rate: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    init_scale: Option<f64>,
    /// Total sampled constraints (training plus held-out).
    #[arg(long, default_value = "200", value_parser = parse_list::<usize>)]
    pairs: List<usize>,
    /// Fraction of sampled constraints that are must-links.
    #[arg(long)]
    balance: Option<f64>,
    #[arg(long)]
    train_fraction: Option<f64>,
    #[arg(long)]
    pca_dim: Option<usize>,
    #[arg(long, default_value = "1,2,3,4,5", value_parser = parse_list::<u64>)]
    seed_list: List<u64>,
    /// Use this constraint pool instead of sampling.
    #[arg(long)]
    constraints_in: Option<PathBuf>,
    /// Write the first run's constraint pool here.
    #[arg(long)]
    constraints_out: Option<PathBuf>,
    /// Save the first successful run's model here.
    #[arg(long)]
    save_model: Option<PathBuf>,
    /// Report directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    load_model: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Prediction file (one cluster index per line).
    #[arg(long)]
    predictions: Option<PathBuf>,
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

fn dataset(args: &DataArgs) -> Result<DatasetSource> {
    if let Some(path) = &args.data {
        return Ok(DatasetSource::Csv {
            path: path.clone(),
            label_column: args.label_column.parse::<LabelColumn>()?,
        });
    }
    if let (Some(images), Some(labels)) = (&args.images, &args.labels) {
        return Ok(DatasetSource::Idx {
            images: images.clone(),
            labels: labels.clone(),
            limit: args.limit,
        });
    }
    if let Some(spec) = &args.blobs {
        let parts: Vec<&str> = spec.split(',').map(str::trim).collect();
        let bad = || config_error(format!("--blobs expects n,clusters,dim,separation,seed, got {spec:?}"));
        if parts.len() != 5 {
            return Err(bad());
        }
        return Ok(DatasetSource::Blobs {
            n: parts[0].parse().map_err(|_| bad())?,
            clusters: parts[1].parse().map_err(|_| bad())?,
            dim: parts[2].parse().map_err(|_| bad())?,
            separation: parts[3].parse().map_err(|_| bad())?,
            seed: parts[4].parse().map_err(|_| bad())?,
        });
    }
    Err(config_error("no dataset: give --data, --images/--labels, or --blobs"))
}

/// Unset flags keep the library defaults.
fn experiment_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::new(dataset(&args.data)?);
    cfg.layer_sizes = args.layers.0.clone();
    cfg.clusters = args.clusters;
    if let Some(v) = args.lambda {
        cfg.train.lambda = v;
    }
    if let Some(v) = args.max_iters {
        cfg.train.max_iters = v;
    }
    if let Some(v) = args.net_rate {
        cfg.train.net_rate = v;
    }
    if let Some(v) = args.tolerance {
        cfg.train.tolerance = v;
    }
    if let Some(v) = args.window {
        cfg.train.window = v;
    }
    if let Some(v) = args.pretrain_epochs {
        cfg.pretrain.epochs = v;
    }
    if let Some(v) = args.minibatch {
        cfg.pretrain.minibatch_size = v;
    }
    if let Some(v) = args.pretrain_rate {
        cfg.pretrain.learning_rate = v;
    }
    if let Some(v) = args.gaussian_rate {
        cfg.pretrain.gaussian_learning_rate = v;
    }
    if let Some(v) = args.momentum {
        cfg.pretrain.momentum = v;
    }
    if let Some(v) = args.weight_decay {
        cfg.pretrain.weight_decay = v;
    }
    if let Some(v) = args.init_scale {
        cfg.pretrain.init_scale = v;
    }
    cfg.n_pairs = args.pairs.0.clone();
    cfg.betas = args.beta.0.clone();
    if let Some(v) = args.balance {
        cfg.balance = v;
    }
    if let Some(v) = args.train_fraction {
        cfg.train_fraction = v;
    }
    cfg.pca_dim = args.pca_dim;
    cfg.seeds = args.seed_list.0.clone();
    if let Some(path) = &args.constraints_in {
        cfg.constraints = Some(read_constraints(path)?);
    }
    Ok(cfg)
}

fn print_summary(report: &RunReport) {
    println!("n_pairs\tbeta\truns\taccuracy\tari\tauc");
    let fmt = |s: Option<deepmmc::experiment::Stat>| match s {
        Some(s) => format!("{:.4}±{:.4}", s.mean, s.std),
        None => "-".into(),
    };
    for s in &report.summaries {
        println!(
            "{}\t{}\t{}/{}\t{}\t{}\t{}",
            s.n_pairs,
            s.beta,
            s.succeeded,
            s.succeeded + s.failed,
            fmt(s.accuracy),
            fmt(s.ari),
            fmt(s.auc)
        );
    }
}

fn run(args: &RunArgs, mode: &str) -> Result<()> {
    match mode {
        "train" if args.pairs.0.len() != 1 || args.beta.0.len() != 1 => {
            return Err(config_error(
                "train takes a single --pairs and --beta value; use sweep or ablate",
            ));
        }
        "sweep" if args.beta.0.len() != 1 => return Err(config_error("sweep takes a single --beta value")),
        "ablate" if args.pairs.0.len() != 1 => return Err(config_error("ablate takes a single --pairs value")),
        _ => {}
    }
    let cfg = experiment_config(args)?;
    let report = run_experiment(&cfg)?;
    write_report(&report, &args.out)?;
    if let Some(path) = &args.constraints_out {
        let first = report.runs.iter().find(|r| r.outcome.is_ok());
        write_constraints(path, first.map_or(&[][..], |r| &r.constraints))?;
    }
    if let Some(path) = &args.save_model {
        match report.runs.iter().find_map(|r| r.model.as_ref()) {
            Some(model) => save_model(path, model)?,
            None => log::warn!("no successful run; model not saved"),
        }
    }
    print_summary(&report);
    if report.runs.iter().all(|r| r.outcome.is_err()) {
        return Err(config_error("every run failed"));
    }
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let saved = load_model(&args.load_model)?;
    let data = dataset(&args.data)?.load(args.seed)?;
    let pred = saved.predict(&data.values().view())?;
    if let Some(path) = &args.predictions {
        let text: String = pred.iter().map(|z| format!("{z}\n")).collect();
        write_atomic(path, text.as_bytes())?;
    }
    match data.labels() {
        Some(labels) => {
            println!("accuracy\t{:.6}", clustering_accuracy(&pred, labels)?);
            println!("ari\t{:.6}", adjusted_rand_index(&pred, labels)?);
        }
        None => println!("clustered {} instances", pred.len()),
    }
    Ok(())
}

/// Flags from a `key = value` file; `#` starts a comment.
fn config_file_args(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| config_error(format!("{}:{}: expected key = value", path.display(), n + 1)))?;
        out.push(format!("--{}", key.trim().replace('_', "-")));
        out.push(value.trim().to_string());
    }
    Ok(out)
}

/// Splices config-file flags right after the subcommand so that later
/// command-line flags override them.
fn merged_args() -> Result<Vec<String>> {
    let argv: Vec<String> = std::env::args().collect();
    let Some(pos) = argv.iter().position(|a| a == "--config" || a.starts_with("--config=")) else {
        return Ok(argv);
    };
    let path = match argv[pos].strip_prefix("--config=") {
        Some(p) => p.to_string(),
        None => argv
            .get(pos + 1)
            .cloned()
            .ok_or_else(|| config_error("--config needs a path"))?,
    };
    let mut rest = argv.clone();
    rest.drain(pos..(pos + if argv[pos].contains('=') { 1 } else { 2 }));
    let sub = rest
        .iter()
        .position(|a| matches!(a.as_str(), "train" | "sweep" | "ablate" | "eval"))
        .ok_or_else(|| config_error("no subcommand"))?;
    let extra = config_file_args(Path::new(&path))?;
    rest.splice(sub + 1..sub + 1, extra);
    Ok(rest)
}

fn exit_code(e: &Error) -> u8 {
    if e.is_data_error() || matches!(e, Error::SamplingExhausted { .. }) {
        EXIT_DATA
    } else if matches!(e, Error::InvalidInput(_)) {
        EXIT_CONFIG
    } else {
        1
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = match merged_args() {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG } else { 0 });
        }
    };
    let result = match &cli.command {
        Command::Train(a) => run(a, "train"),
        Command::Sweep(a) => run(a, "sweep"),
        Command::Ablate(a) => run(a, "ablate"),
        Command::Eval(a) => eval(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
