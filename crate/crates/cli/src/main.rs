use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use popcurve::analysis::RankForm;
use popcurve::dataset::{write_records, IngestMode, SyntheticConfig};
use popcurve::featurepack::PackSet;
use popcurve::harness::{
    cross_validate, evaluate, generate, ingest_cleaned, predict, run_stats, train, write_curves, write_json,
    write_predictions, HarnessError, IngestOutcome, Prepared, RunConfig, StatsReport,
};
use popcurve::metrics::EvalReport;
use popcurve::model::{load_checkpoint, save_checkpoint, Checkpoint, ModelConfig};

#[derive(Parser)]
#[command(name = "popcurve", version, about = "Predict 30-day popularity curves of social-media posts")]
struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Disable the early-popularity input and predict days 1-30.
    #[arg(long, global = true)]
    no_ep: bool,
    /// Output directory; overrides `out_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a records file and write the accepted records.
    Ingest {
        /// Records file; defaults to the configured one.
        records: Option<PathBuf>,
        /// Accept partial view series with at least this many entries.
        #[arg(long)]
        partial: Option<usize>,
    },
    /// Per-day distributions, correlation matrices and group statistics.
    Stats {
        records: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Form::Ranks)]
        form: Form,
    },
    /// Write a synthetic corpus with feature packs and a matching config.
    Gen {
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Train on the configured dataset and save the best checkpoint.
    Train,
    /// Score a checkpoint on the configured dataset.
    Eval {
        /// Defaults to `<out>/model.tpmp`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Score the ground truth against itself instead of a model.
        #[arg(long, conflicts_with = "checkpoint")]
        oracle: bool,
    },
    /// k-fold cross-validation.
    Cv,
    /// Predict curves for records that may carry only early views.
    Predict {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        records: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Form {
    Ranks,
    RawZscore,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, HarnessError> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    if cli.no_ep {
        config.set_ep_mode(false);
    }
    config.validate()?;
    Ok(config)
}

fn out_dir(config: &RunConfig) -> Result<&Path, HarnessError> {
    let dir = config.out_dir.as_path();
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    Ok(dir)
}

/// Ingests records, writes the rejection report and joins the feature packs.
fn load_data(config: &RunConfig, records: &Path, mode: IngestMode, clean: bool, out: &Path) -> Result<Prepared, HarnessError> {
    let outcome = ingest_cleaned(records, mode, clean)?;
    write_json(&out.join("rejections.json"), &outcome)?;
    log::info!(
        "{} records accepted, {} rejected, {} outliers removed",
        outcome.records.len(),
        outcome.report.total_rejected(),
        outcome.outliers.len()
    );
    let packs = PackSet::read_dir(&config.data.packs)?;
    Prepared::build(&outcome.records, &packs, config.model.ep_mode, config.data.missing_features)
}

fn training_data(config: &RunConfig, out: &Path) -> Result<Prepared, HarnessError> {
    config.validate_paths()?;
    let data = load_data(config, &config.data.records, IngestMode::Training, config.data.clean_outliers, out)?;
    data.check_dims(&config.model)?;
    Ok(data)
}

fn checkpoint_for(cli: &Cli, given: &Option<PathBuf>, out: &Path) -> Result<Checkpoint, HarnessError> {
    let path = given.clone().unwrap_or_else(|| out.join("model.tpmp"));
    let ck = load_checkpoint(&path)?;
    if cli.no_ep && ck.model.config().ep_mode {
        return Err(HarnessError::Config(format!(
            "{} was trained with early popularity; --no-ep needs a checkpoint trained without it",
            path.display()
        )));
    }
    Ok(ck)
}

/// Adopts the checkpoint's architecture so data preparation matches it.
fn with_model(mut config: RunConfig, model: &ModelConfig) -> RunConfig {
    config.model = model.clone();
    config
}

fn dump_failure(out: &Path, err: &HarnessError) {
    if let HarnessError::Numerical { epoch, reason, ids } = err {
        let dump = serde_json::json!({ "epoch": epoch, "reason": reason, "batch_ids": ids });
        if let Err(e) = write_json(&out.join("numerical_failure.json"), &dump) {
            log::error!("could not write failure dump: {e}");
        }
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    let config = load_config(&cli)?;
    let out = out_dir(&config)?;
    match &cli.command {
        Command::Ingest { records, partial } => {
            let path = records.clone().unwrap_or_else(|| config.data.records.clone());
            let mode = match partial {
                Some(min_views) => IngestMode::Inference { min_views: *min_views },
                None => IngestMode::Training,
            };
            let clean = partial.is_none() && config.data.clean_outliers;
            let outcome: IngestOutcome = ingest_cleaned(&path, mode, clean)?;
            write_json(&out.join("rejections.json"), &outcome)?;
            write_records(&out.join("records.jsonl"), &outcome.records)?;
            println!(
                "accepted {} rejected {} outliers {}",
                outcome.records.len(),
                outcome.report.total_rejected(),
                outcome.outliers.len()
            );
        }
        Command::Stats { records, form } => {
            let path = records.clone().unwrap_or_else(|| config.data.records.clone());
            let outcome = ingest_cleaned(&path, IngestMode::Training, config.data.clean_outliers)?;
            write_json(&out.join("rejections.json"), &outcome)?;
            let form = match form {
                Form::Ranks => RankForm::Ranks,
                Form::RawZscore => RankForm::RawZScore,
            };
            let stats = run_stats(&outcome.records, form, config.execution)?;
            write_json(&out.join("stats.json"), &stats)?;
            for (name, m) in [("pc_matrix.csv", &stats.correlations.pc), ("src_matrix.csv", &stats.correlations.src)] {
                let path = out.join(name);
                std::fs::write(&path, StatsReport::matrix_csv(m)).map_err(|source| HarnessError::Io { path, source })?;
            }
            println!("{} samples, statistics in {}", stats.samples, out.display());
        }
        Command::Gen { samples } => {
            let syn = SyntheticConfig {
                visual_dim: config.model.visual_dim,
                text_dim: config.model.text_field_dim,
                ..SyntheticConfig::default()
            };
            generate(*samples, config.seed, &syn, out)?;
            let mut generated = config.clone();
            generated.data.records = "records.jsonl".into();
            generated.data.packs = "packs".into();
            generated.out_dir = out.join("run");
            let path = out.join("config.toml");
            std::fs::write(&path, generated.to_toml()).map_err(|source| HarnessError::Io { path, source })?;
            println!("{samples} samples written to {}", out.display());
        }
        Command::Train => {
            let data = training_data(&config, out)?;
            let outcome = train(&config, &data, &data.all_rows()).inspect_err(|e| dump_failure(out, e))?;
            save_checkpoint(&out.join("model.tpmp"), &outcome.best)?;
            save_checkpoint(&out.join("last.tpmp"), &outcome.last)?;
            write_json(&out.join("training_log.json"), &outcome.log)?;
            let best = &outcome.log.epochs[outcome.log.best_epoch];
            write_json(&out.join("eval.json"), &best.val)?;
            write_curves(out, &best.val)?;
            let path = out.join("config.toml");
            std::fs::write(&path, config.to_toml()).map_err(|source| HarnessError::Io { path, source })?;
            println!(
                "best epoch {}: validation AMAE {:.4} ASRC {:.4}",
                best.epoch, best.val.amae, best.val.asrc
            );
        }
        Command::Eval { checkpoint, oracle } => {
            let report = if *oracle {
                let data = training_data(&config, out)?;
                let first = config.model.first_day();
                let truth = data.targets(&data.all_rows(), first);
                EvalReport::compute(&truth, &truth, first)?
            } else {
                let ck = checkpoint_for(&cli, checkpoint, out)?;
                let config = with_model(config.clone(), ck.model.config());
                let data = training_data(&config, out)?;
                evaluate(&ck, &data, config.execution)?
            };
            write_json(&out.join("eval.json"), &report)?;
            write_curves(out, &report)?;
            println!("AMAE {:.4} ASRC {:.4} over {} samples", report.amae, report.asrc, report.samples);
        }
        Command::Cv => {
            let data = training_data(&config, out)?;
            let summary = cross_validate(&config, &data, Some(out)).inspect_err(|e| dump_failure(out, e))?;
            write_json(&out.join("cv_summary.json"), &summary)?;
            println!(
                "AMAE {:.4} ± {:.4}  ASRC {:.4} ± {:.4}",
                summary.amae_mean, summary.amae_std, summary.asrc_mean, summary.asrc_std
            );
        }
        Command::Predict { checkpoint, records } => {
            let ck = checkpoint_for(&cli, checkpoint, out)?;
            let config = with_model(config.clone(), ck.model.config());
            let path = records.clone().unwrap_or_else(|| config.data.records.clone());
            let min_views = usize::from(config.model.ep_mode);
            let data = load_data(&config, &path, IngestMode::Inference { min_views }, false, out)?;
            let pred = predict(&ck, &data, config.execution)?;
            let dir = out.join("predictions");
            write_predictions(&dir, &data.ids, &pred, config.model.first_day())?;
            println!("{} curves written to {}", data.len(), dir.display());
        }
    }
    Ok(())
}
