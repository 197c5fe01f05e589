//! `depgraph`: simulate datasets, train and evaluate models, fit baselines
//! and export learned graphs.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use depgraph::dataio::Split;
use depgraph::experiment::{evaluate_checkpoint, run_baseline, run_train, BaselineKind, RunConfig};
use depgraph::export::export_heatmap;
use depgraph::metrics::symmetrize_max;
use depgraph::simulator::{make_dataset, SimConfig, TruthSidecar};
use depgraph::trainer::{Checkpoint, HyperParams, Selection};

#[derive(Parser, Debug)]
#[command(name = "depgraph", version, about = "Dependency-graph learning with graph-attention prediction")]
struct Cli {
    /// Directory for written artifacts.
    #[arg(long, global = true, env = "DEPGRAPH_OUT_DIR", default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a two-class Gaussian graphical-model dataset.
    Simulate(SimulateArgs),
    /// Train one model per seed from a run config.
    Train(TrainArgs),
    /// Score a checkpoint on a CSV file.
    Eval(EvalArgs),
    /// Write the learned graph(s) of a checkpoint as CSV and SVG heatmaps.
    ExportGraph(ExportArgs),
    /// Fit a reference predictor on the run config's data.
    Baseline(BaselineArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Built-in configuration: p5, p10, p20 or 2d.
    #[arg(long, default_value = "p10")]
    preset: String,
    /// JSON simulation config; replaces the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_valid: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    #[arg(long)]
    noise_features: Option<usize>,
    #[arg(long)]
    delta_d: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// File stem of the written CSV, schema and truth files.
    #[arg(long, default_value = "sim")]
    stem: String,
}

macro_rules! hp_overrides {
    ($($field:ident: $ty:ty),* $(,)?) => {
        /// Command-line overrides of every hyperparameter.
        #[derive(Args, Debug, Default)]
        struct HpOverrides {
            $(
                #[arg(long, help_heading = "Hyperparameters")]
                $field: Option<$ty>,
            )*
        }

        impl HpOverrides {
            fn apply(&self, hp: &mut HyperParams) {
                $(
                    if let Some(v) = &self.$field {
                        hp.$field = v.clone();
                    }
                )*
            }
        }
    };
}

hp_overrides! {
    lambda_struct: f64,
    lambda_sparse: f64,
    lambda_dag: f64,
    tau: f64,
    lr: f64,
    epochs: usize,
    pretrain_epochs: usize,
    batch_size: usize,
    struct_hidden: usize,
    struct_layers: usize,
    struct_dropout: f64,
    task_hidden: usize,
    task_layers: usize,
    d_pos: usize,
    heads: usize,
    task_dropout: f64,
    clip_norm: f64,
    seed: u64,
    multi_graph: bool,
    label_node: bool,
    include_full_x: bool,
    selection: Selection,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// JSON run config.
    #[arg(long)]
    config: PathBuf,
    /// Number of consecutive seeds to train.
    #[arg(long)]
    seeds: Option<usize>,
    #[command(flatten)]
    hp: HpOverrides,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
    All,
}

impl SplitArg {
    fn split(self) -> Option<Split> {
        match self {
            SplitArg::Train => Some(Split::Train),
            SplitArg::Valid => Some(Split::Valid),
            SplitArg::Test => Some(Split::Test),
            SplitArg::All => None,
        }
    }
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// CSV file to score.
    #[arg(long)]
    data: PathBuf,
    /// Schema for the CSV; defaults to the one stored in the checkpoint.
    #[arg(long)]
    schema: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Truth sidecar, to also report graph AUC.
    #[arg(long)]
    truth: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Export `max(σ(γ_ij), σ(γ_ji))` instead of directed probabilities.
    #[arg(long)]
    symmetric: bool,
    /// File stem; graphs are written as `<stem>_g<k>.csv/.svg`.
    #[arg(long, default_value = "graph")]
    stem: String,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(value_enum)]
    kind: BaselineArg,
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seeds: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum BaselineArg {
    Qda,
    Mlp,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{}", serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn simulate(args: SimulateArgs, out: &Path) -> Result<()> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<SimConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SimConfig::preset(&args.preset)?,
    };
    if let Some(v) = args.n_train {
        cfg.n_train = v;
    }
    if let Some(v) = args.n_valid {
        cfg.n_valid = v;
    }
    if let Some(v) = args.n_test {
        cfg.n_test = v;
    }
    if let Some(v) = args.noise_features {
        cfg.noise_features = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if args.delta_d.is_some() {
        cfg.delta_d = args.delta_d;
    }
    let sim = make_dataset(&cfg)?;
    sim.write(out, &args.stem)?;
    print_json(&serde_json::json!({
        "csv": out.join(format!("{}.csv", args.stem)),
        "schema": out.join(format!("{}.schema.json", args.stem)),
        "truth": out.join(format!("{}.truth.json", args.stem)),
        "rows": sim.dataset.n_rows(),
        "delta_d": sim.truth.delta_d,
    }))
}

fn train(args: TrainArgs, out: &Path) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    args.hp.apply(&mut cfg.hp);
    if let Some(k) = args.seeds {
        cfg.seeds = k;
    }
    let run = run_train(&cfg, Some(out))?;
    print_json(&run.reports)
}

fn eval(args: EvalArgs, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let schema = args.schema.as_ref().map(depgraph::dataio::Schema::load).transpose()?;
    let truth = args.truth.as_ref().map(TruthSidecar::load).transpose()?;
    let reports = evaluate_checkpoint(&ck, &args.data, schema.as_ref(), args.split.split(), truth.as_ref())?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join("eval_metrics.json"), &reports)?;
    print_json(&reports)
}

fn export_graph(args: ExportArgs, out: &Path) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let mut names = ck.feature_names.clone();
    if ck.model.config().label_node {
        names.push("label".into());
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    for (k, probs) in ck.model.edge_probabilities().iter().enumerate() {
        let scores = if args.symmetric { symmetrize_max(probs) } else { probs.clone() };
        let title = if ck.model.graph_count() > 1 {
            format!("edge probabilities, class graph {k}")
        } else {
            "edge probabilities".to_string()
        };
        let (csv, svg) = export_heatmap(&scores, &names, out.join(format!("{}_g{k}", args.stem)), &title)?;
        written.push(serde_json::json!({ "csv": csv, "svg": svg }));
    }
    print_json(&written)
}

fn baseline(args: BaselineArgs, out: &Path) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(k) = args.seeds {
        cfg.seeds = k;
    }
    let (kind, name) = match args.kind {
        BaselineArg::Qda => (BaselineKind::Qda, "qda"),
        BaselineArg::Mlp => (BaselineKind::Mlp, "mlp"),
    };
    let reports = run_baseline(&cfg, kind)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_json(&out.join(format!("baseline_{name}.json")), &reports)?;
    print_json(&reports)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if cli.out.as_os_str().is_empty() {
        bail!("output directory must not be empty");
    }
    match cli.command {
        Command::Simulate(a) => simulate(a, &cli.out),
        Command::Train(a) => train(a, &cli.out),
        Command::Eval(a) => eval(a, &cli.out),
        Command::ExportGraph(a) => export_graph(a, &cli.out),
        Command::Baseline(a) => baseline(a, &cli.out),
    }
}
