use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;

#[derive(Parser, Debug)]
#[command(name = "speechre", version, about = "Multi-order relation extraction from speech features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and keep the best-dev checkpoint.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Training manifest (overrides paths.train_manifest).
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Dev manifest (overrides paths.dev_manifest).
        #[arg(long)]
        dev_manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run six-view ensemble inference and write a prediction file.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for predictions.jsonl and the effective config.
        #[arg(long)]
        out: PathBuf,
        /// Run config supplying [ensemble] defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        lambda_vote: Option<usize>,
        #[arg(long)]
        vote_rule: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
        /// Accepted for symmetry; inference is deterministic.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a prediction file against a gold manifest.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        schema: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Compare surface forms case-insensitively.
        #[arg(long)]
        lowercase: bool,
        /// Directory for report.json and the effective config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Round-trip every sample through all six linearizations.
    CodecCheck {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        schema: PathBuf,
    },
    /// Instance, triplet and relation counts of a manifest.
    DataStats {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Directory for stats.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic toy corpus, its schema and a matching run config.
    ToyData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2000)]
        train: usize,
        #[arg(long, default_value_t = 50)]
        dev: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            config,
            schema,
            manifest,
            dev_manifest,
            out,
            seed,
        } => commands::train(commands::TrainArgs {
            config,
            schema,
            manifest,
            dev_manifest,
            out,
            seed,
        }),
        Command::Infer {
            checkpoint,
            manifest,
            out,
            config,
            lambda_vote,
            vote_rule,
            threshold,
            seed: _,
        } => commands::infer(commands::InferArgs {
            checkpoint,
            manifest,
            out,
            config,
            lambda_vote,
            vote_rule,
            threshold,
        }),
        Command::Eval {
            predictions,
            manifest,
            schema,
            config,
            lowercase,
            out,
        } => commands::eval(commands::EvalArgs {
            predictions,
            manifest,
            schema,
            config,
            lowercase,
            out,
        }),
        Command::CodecCheck { manifest, schema } => commands::codec_check(&manifest, &schema),
        Command::DataStats { manifest, schema, out } => commands::data_stats(&manifest, &schema, out.as_deref()),
        Command::ToyData { out, train, dev, seed } => commands::toy_data(&out, train, dev, seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
