//! The `acf` command-line pipeline: demo data, ingest and split, training,
//! bound tables, prototypes, replay experiments and the session service.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use acf_core::bounds::MeanChangeMethod;
use acf_core::data::FilterMode;
use acf_core::format::ModelKind;
use acf_core::strategies::StrategyKind;
use acf_service::engine::PruningChoice;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::config::{Config, Experiment};

#[derive(Debug, Parser)]
#[command(name = "acf", version, about = "Active collaborative filtering by expected value of information")]
pub struct Cli {
    /// Seed for all randomness (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Cap on worker threads.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    pub print_config: bool,
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a ratings file from a separated ground-truth MCVQ model.
    DemoData(DemoArgs),
    /// Filter a ratings CSV and split it into train and test users.
    Ingest(IngestArgs),
    /// Fit an MCVQ or naive Bayes model on the training split.
    Train(TrainArgs),
    /// Precompute attitude-shift and mean-change bound tables.
    Bounds(BoundsArgs),
    /// Build a query prototype set.
    Prototypes(PrototypeArgs),
    /// Run the replay experiments.
    Evaluate(EvaluateArgs),
    /// Serve live query sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct DemoArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub items: Option<usize>,
    #[arg(long)]
    pub types: Option<usize>,
    #[arg(long)]
    pub attitudes: Option<usize>,
    #[arg(long)]
    pub density: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum FilterArg {
    FixedPoint,
    SinglePass,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Ratings CSV: user, item, rating.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub min_user: Option<usize>,
    #[arg(long)]
    pub min_item: Option<usize>,
    #[arg(long)]
    pub test_users: Option<usize>,
    #[arg(long, value_enum)]
    pub filter: Option<FilterArg>,
    /// Top of the rating scale.
    #[arg(long)]
    pub rho: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    Mcvq,
    NaiveBayes,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `ingest`.
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum)]
    pub model_kind: Option<ModelArg>,
    #[arg(long)]
    pub types: Option<usize>,
    #[arg(long)]
    pub attitudes: Option<usize>,
    #[arg(long)]
    pub components: Option<usize>,
    #[arg(long)]
    pub iters: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Lp,
    Iterative,
}

#[derive(Debug, Args)]
pub struct BoundsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Add the per-VQ zero-sum constraint to the LP.
    #[arg(long)]
    pub tighten: bool,
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
}

#[derive(Debug, Args)]
pub struct PrototypeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Target share of items to keep.
    #[arg(long, conflicts_with = "beta")]
    pub fraction: Option<f64>,
    /// Minimum pairwise signature distance between prototypes.
    #[arg(long)]
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ExperimentArg {
    Query,
    Pruning,
    Prototype,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Evoi,
    Entropy,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PruningArg {
    None,
    Expected,
    PerResponse,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub bounds: Option<PathBuf>,
    /// Prototype set files (repeatable).
    #[arg(long = "prototypes")]
    pub prototypes: Vec<PathBuf>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub experiments: Option<Vec<ExperimentArg>>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub strategies: Option<Vec<StrategyArg>>,
    /// Known-rating counts, e.g. `1,2,3,5`.
    #[arg(long, value_delimiter = ',')]
    pub kappa: Option<Vec<usize>>,
    #[arg(long)]
    pub runs: Option<usize>,
    /// Target pruning for EVOI in the query experiments.
    #[arg(long, value_enum)]
    pub pruning: Option<PruningArg>,
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Directory written by `ingest`, for item labels and entropies.
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    #[arg(long)]
    pub bounds: Option<PathBuf>,
    #[arg(long)]
    pub prototypes: Option<PathBuf>,
    /// Append-only session log.
    #[arg(long)]
    pub store: Option<PathBuf>,
    #[arg(long)]
    pub addr: Option<String>,
    #[arg(long)]
    pub evoi_threshold: Option<f64>,
}

/// Layers this invocation's flags over `cfg`.
pub fn apply_flags(cli: &Cli, cfg: &mut Config) {
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    match &cli.command {
        Command::DemoData(a) => {
            let d = &mut cfg.demo;
            set(&mut d.n_users, a.users);
            set(&mut d.model.n_items, a.items);
            set(&mut d.model.n_types, a.types);
            set(&mut d.model.n_attitudes, a.attitudes);
            set(&mut d.density, a.density);
        }
        Command::Ingest(a) => {
            let i = &mut cfg.ingest;
            set(&mut i.min_ratings_per_user, a.min_user);
            set(&mut i.min_ratings_per_item, a.min_item);
            set(&mut i.n_test_users, a.test_users);
            set(&mut i.rho, a.rho);
            set(
                &mut i.filter_mode,
                a.filter.map(|f| match f {
                    FilterArg::FixedPoint => FilterMode::FixedPoint,
                    FilterArg::SinglePass => FilterMode::SinglePass,
                }),
            );
        }
        Command::Train(a) => {
            let t = &mut cfg.train;
            set(
                &mut t.model_kind,
                a.model_kind.map(|k| match k {
                    ModelArg::Mcvq => ModelKind::Mcvq,
                    ModelArg::NaiveBayes => ModelKind::NaiveBayes,
                }),
            );
            set(&mut t.params.n_types, a.types);
            set(&mut t.params.n_attitudes, a.attitudes);
            set(&mut t.params.n_components, a.components);
            set(&mut t.params.max_iters, a.iters);
            set(&mut t.params.restarts, a.restarts);
        }
        Command::Bounds(a) => {
            if a.tighten {
                cfg.bounds.tighten = true;
            }
            set(
                &mut cfg.bounds.method,
                a.method.map(|m| match m {
                    MethodArg::Lp => MeanChangeMethod::Lp,
                    MethodArg::Iterative => MeanChangeMethod::Iterative,
                }),
            );
        }
        Command::Prototypes(a) => {
            if let Some(b) = a.beta {
                cfg.prototypes.beta = Some(b);
            }
            if let Some(f) = a.fraction {
                cfg.prototypes.fraction = f;
                cfg.prototypes.beta = None;
            }
        }
        Command::Evaluate(a) => {
            let e = &mut cfg.evaluate;
            if let Some(x) = &a.experiments {
                e.experiments = x
                    .iter()
                    .map(|x| match x {
                        ExperimentArg::Query => Experiment::Query,
                        ExperimentArg::Pruning => Experiment::Pruning,
                        ExperimentArg::Prototype => Experiment::Prototype,
                    })
                    .collect();
            }
            if let Some(s) = &a.strategies {
                e.params.strategies = s
                    .iter()
                    .map(|s| match s {
                        StrategyArg::Evoi => StrategyKind::Evoi,
                        StrategyArg::Entropy => StrategyKind::Entropy,
                        StrategyArg::Random => StrategyKind::Random,
                    })
                    .collect();
            }
            set(&mut e.params.kappa_sizes, a.kappa.clone());
            set(&mut e.params.n_runs, a.runs);
            if let Some(p) = a.pruning {
                e.params.pruning = pruning_choice(p).mode();
            }
            if a.svg {
                e.svg = true;
            }
        }
        Command::Serve(a) => {
            set(&mut cfg.serve.addr, a.addr.clone());
            set(&mut cfg.serve.evoi_threshold, a.evoi_threshold);
            if let Some(s) = &a.store {
                cfg.serve.store = Some(s.display().to_string());
            }
        }
    }
}

fn pruning_choice(p: PruningArg) -> PruningChoice {
    match p {
        PruningArg::None => PruningChoice::None,
        PruningArg::Expected => PruningChoice::Expected,
        PruningArg::PerResponse => PruningChoice::PerResponse,
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Resolves the configuration and runs the chosen subcommand.
pub fn run(cli: Cli) -> anyhow::Result<()> {
    let mut cfg = Config::load(cli.config.as_deref())?;
    apply_flags(&cli, &mut cfg);
    if cli.print_config {
        print!("{}", cfg.to_toml()?);
        return Ok(());
    }
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global()?;
    }
    match &cli.command {
        Command::DemoData(a) => commands::demo_data(&cfg, a),
        Command::Ingest(a) => commands::ingest(&cfg, a),
        Command::Train(a) => commands::train(&cfg, a),
        Command::Bounds(a) => commands::bounds(&cfg, a),
        Command::Prototypes(a) => commands::prototypes(&cfg, a),
        Command::Evaluate(a) => commands::evaluate(&cfg, a),
        Command::Serve(a) => commands::serve(&cfg, a),
    }
}
