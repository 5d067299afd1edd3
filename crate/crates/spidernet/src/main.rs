//! Command-line surface over the pipeline module.
//!
//! Exit codes: 0 success, 2 config/input error, 3 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spidernet::data::{SplitFractions, SplitMode, SynthConfig};
use spidernet::error::Error;
use spidernet::features::BwConfig;
use spidernet::pipeline::{
    self, ArchChoice, ArchParams, CompareSpec, EvalSpec, EvalSplit, FeaturesSpec, SynthSpec, TrainSpec,
};
use spidernet::arch::DropoutSchedule;
use spidernet::train::TrainConfig;

/// Environment variable supplying the default seed for commands that accept
/// `--seed`.
const SEED_ENV: &str = "SPIDERNET_SEED";

#[derive(Parser)]
#[command(
    name = "spidernet",
    version,
    about = "Fraud-detection modeling toolkit: synthetic data, B/W-test features, convolutional model training, and economic evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic fraud dataset (data.csv + schema.json)
    Synth(SynthArgs),
    /// Feature selection and B/W-test generation
    Features(FeaturesArgs),
    /// Train a model with early stopping (and grid search when configured)
    Train(TrainArgs),
    /// Evaluate a trained model: AUC metrics with CIs, Prevented Loss
    Eval(EvalArgs),
    /// Sign-test comparison of evaluation reports
    Compare(CompareArgs),
    /// Re-run a command from its manifest
    Rerun(RerunArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Generator config JSON (see configs/synth.example.json)
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed in the config file
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// B/W test definitions JSON (see configs/bw.example.json)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Keep features with at least this non-missing fraction
    #[arg(long = "fill-rate", default_value_t = 0.5)]
    fill_rate: f64,
    /// Drop one of each feature pair correlated above this threshold
    #[arg(long = "corr-threshold", default_value_t = 0.95)]
    corr_threshold: f64,
    /// Skip B/W-test generation (selection steps only)
    #[arg(long = "skip-bw", default_value_t = false)]
    skip_bw: bool,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Architecture: spidernet | cnn | densenet | fdensenet
    #[arg(long, value_parser = ["spidernet", "cnn", "densenet", "fdensenet"])]
    arch: String,
    /// Optional TrainConfig JSON; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,

    /// SpiderNet blocks / CNN convolutional layers
    #[arg(long)]
    blocks: Option<usize>,
    /// F-DenseNet convolutions per block (3 or 4)
    #[arg(long)]
    convolutions: Option<usize>,
    #[arg(long)]
    filters: Option<usize>,
    #[arg(long = "kernel_size")]
    kernel_size: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    /// Fully connected head dropout
    #[arg(long)]
    dropout: Option<f64>,
    /// Block-input dropout schedule: exp | constant | none
    #[arg(long = "dropout_schedule", value_parser = ["exp", "constant", "none"])]
    dropout_schedule: Option<String>,
    /// Rate used by the constant schedule
    #[arg(long = "dropout_constant", default_value_t = 0.25)]
    dropout_constant: f64,

    #[arg(long = "learn_rate")]
    learn_rate: Option<f64>,
    #[arg(long = "weight_decay")]
    weight_decay: Option<f64>,
    #[arg(long = "l2_batch")]
    l2_batch: Option<f64>,
    #[arg(long = "batch_size")]
    batch_size: Option<usize>,
    /// Minimum fraction of fraud rows per training batch
    #[arg(long = "fraud_rate")]
    fraud_rate: Option<f64>,
    #[arg(long = "max_epochs")]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,

    /// Split protocol: entity (leakage guard) | record
    #[arg(long = "split-mode", value_parser = ["entity", "record"], default_value = "entity")]
    split_mode: String,
    #[arg(long = "split-seed")]
    split_seed: Option<u64>,
    #[arg(long = "train-frac", default_value_t = 0.8)]
    train_frac: f64,
    #[arg(long = "val-frac", default_value_t = 0.1)]
    val_frac: f64,
    #[arg(long = "test-frac", default_value_t = 0.1)]
    test_frac: f64,
}

#[derive(Args)]
struct EvalArgs {
    /// model.json written by `train`
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Which split to evaluate: train | validation | test | all
    #[arg(long, value_parser = ["train", "validation", "test", "all"], default_value = "test")]
    split: String,
    /// Investigation budget k for Prevented Loss
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    /// A/B report pair (repeatable): --pair a.json b.json
    #[arg(long = "pair", num_args = 2, action = clap::ArgAction::Append, required = true)]
    pair: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RerunArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Redirect outputs (defaults to the manifest's original out dir)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn env_seed() -> Option<u64> {
    std::env::var(SEED_ENV).ok().and_then(|v| v.parse().ok())
}

fn resolve_seed(flag: Option<u64>, fallback: u64) -> u64 {
    flag.or_else(env_seed).unwrap_or(fallback)
}

fn run(cli: Cli) -> spidernet::Result<()> {
    match cli.command {
        Command::Synth(args) => {
            let mut config: SynthConfig = pipeline::manifest::read_json(&args.config)?;
            if let Some(seed) = args.seed.or_else(env_seed) {
                config.seed = seed;
            }
            run_synth_cmd(config, args.out)
        }
        Command::Features(args) => {
            let bw: BwConfig = match &args.config {
                Some(path) => pipeline::manifest::read_json(path)?,
                None => BwConfig::default(),
            };
            let spec = FeaturesSpec {
                data: args.data,
                schema: args.schema,
                bw,
                fill_rate: args.fill_rate,
                corr_threshold: args.corr_threshold,
                skip_bw: args.skip_bw,
                seed: resolve_seed(args.seed, 0),
                out: args.out,
            };
            pipeline::run_features(&spec).map(|_| ())
        }
        Command::Train(args) => {
            let spec = build_train_spec(args)?;
            pipeline::run_train(&spec).map(|_| ())
        }
        Command::Eval(args) => {
            let spec = EvalSpec {
                model: args.model,
                data: args.data,
                schema: args.schema,
                split: match args.split.as_str() {
                    "train" => EvalSplit::Train,
                    "validation" => EvalSplit::Validation,
                    "all" => EvalSplit::All,
                    _ => EvalSplit::Test,
                },
                budget: args.budget,
                alpha: args.alpha,
                out: args.out,
            };
            pipeline::run_eval(&spec).map(|_| ())
        }
        Command::Compare(args) => {
            let pairs = args
                .pair
                .chunks(2)
                .map(|c| (c[0].clone(), c[1].clone()))
                .collect();
            let spec = CompareSpec { pairs, out: args.out };
            pipeline::run_compare(&spec).map(|_| ())
        }
        Command::Rerun(args) => pipeline::run_rerun(&args.manifest, args.out.as_deref()).map(|_| ()),
    }
}

fn run_synth_cmd(config: SynthConfig, out: PathBuf) -> spidernet::Result<()> {
    let spec = SynthSpec { config, out };
    pipeline::run_synth(&spec).map(|_| ())
}

fn build_train_spec(args: TrainArgs) -> spidernet::Result<TrainSpec> {
    let arch = match args.arch.as_str() {
        "spidernet" => ArchChoice::Spidernet,
        "cnn" => ArchChoice::Cnn,
        "densenet" => ArchChoice::Densenet,
        _ => ArchChoice::Fdensenet,
    };
    let mut train: TrainConfig = match &args.config {
        Some(path) => pipeline::manifest::read_json(path)?,
        None => TrainConfig::default(),
    };
    let mut params = ArchParams::default();

    if let Some(v) = args.blocks {
        params.blocks = v;
    }
    if let Some(v) = args.convolutions {
        params.convolutions = v;
    }
    if let Some(v) = args.filters {
        params.filters = v;
    }
    if let Some(v) = args.kernel_size {
        params.kernel_size = v;
    }
    if let Some(v) = args.hidden {
        params.hidden = v;
    }
    if let Some(v) = args.dropout {
        params.dropout = v;
    }
    if let Some(schedule) = &args.dropout_schedule {
        params.block_dropout = match schedule.as_str() {
            "none" => DropoutSchedule::None,
            "constant" => DropoutSchedule::Constant { rate: args.dropout_constant },
            _ => DropoutSchedule::default(),
        };
    }
    if let Some(v) = args.learn_rate {
        train.learning_rate = v;
    }
    if let Some(v) = args.weight_decay {
        train.weight_decay = v;
    }
    if let Some(v) = args.l2_batch {
        train.l2_batch = v;
    }
    if let Some(v) = args.batch_size {
        train.batch_size = v;
    }
    if let Some(v) = args.fraud_rate {
        train.target_fraud_rate = v;
    }
    if let Some(v) = args.max_epochs {
        train.max_epochs = v;
    }
    if let Some(v) = args.patience {
        train.patience = v;
    }
    train.seed = resolve_seed(args.seed, train.seed);

    let split = pipeline::SplitSettings {
        fractions: SplitFractions {
            train: args.train_frac,
            validation: args.val_frac,
            test: args.test_frac,
        },
        mode: match args.split_mode.as_str() {
            "record" => SplitMode::RecordLevel,
            _ => SplitMode::EntityCoherent,
        },
        seed: args.split_seed.unwrap_or(train.seed),
    };

    Ok(TrainSpec {
        data: args.data,
        schema: args.schema,
        arch,
        params,
        train,
        split,
        out: args.out,
    })
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::NonFiniteLoss { .. } | Error::NonFiniteGradient { .. } | Error::NonFinite { .. } => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}
