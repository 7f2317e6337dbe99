use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ordimpute::losses::LossMode;
use ordimpute_cli::commands;
use ordimpute_cli::config::{Overrides, RunConfig};
use ordimpute_cli::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "ordimpute",
    version,
    about = "Multi-modal feature imputation pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// JSON run configuration; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory for all artifacts.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    folds: Option<usize>,
    #[arg(long, global = true, value_parser = ["2", "4"])]
    depth: Option<String>,
    #[arg(long, global = true, value_parser = ["ocl", "scl"])]
    loss_mode: Option<String>,
    /// Drop the modality-coherence term.
    #[arg(long, global = true)]
    no_mc: bool,
    /// Train the downstream classifier on complete cases only.
    #[arg(long, global = true)]
    no_imputation: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Write a synthetic cohort: features.csv, ground_truth.csv, manifest.json.
    Generate,
    /// Train encoder then decoder and write one checkpoint plus logs.
    Train,
    /// Fill missing modalities: imputed.csv and provenance.csv.
    Impute,
    /// Per-ROI group tests before and after imputation.
    EvalStats,
    /// Cross-validated diagnosis classification report.
    EvalClassify,
    /// Per-record embeddings of the observed features.
    ExportEmbeddings,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let base = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let overrides = Overrides {
        seed: cli.seed,
        threads: cli.threads,
        out: cli.out.clone(),
        alpha: cli.alpha,
        folds: cli.folds,
        depth: cli.depth.map(|d| d.parse().expect("validated by clap")),
        loss_mode: cli
            .loss_mode
            .map(|m| m.parse::<LossMode>().expect("validated by clap")),
        no_mc: cli.no_mc,
        no_imputation: cli.no_imputation,
    };
    let config = base.resolve(&overrides)?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = config.threads {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| CliError::Internal(e.to_string()))?
    };
    let dir = config.run_dir(overrides.out.as_deref());
    std::fs::create_dir_all(&dir)
        .map_err(|e| CliError::Internal(format!("cannot create {}: {e}", dir.display())))?;
    commands::write_file(&dir.join("effective_config.json"), &config.to_json())?;
    let ctx = commands::Context { config, dir };
    pool.install(|| match cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Impute => commands::impute(&ctx),
        Command::EvalStats => commands::eval_stats(&ctx),
        Command::EvalClassify => commands::eval_classify(&ctx),
        Command::ExportEmbeddings => commands::export_embeddings(&ctx),
    })?;
    println!("{}", ctx.dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
