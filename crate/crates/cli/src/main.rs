//! `answervault` command-line entry point.

mod config;

use std::path::Path;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use answervault::baseline::{CosineBaseline, EmbeddingProvider, EmbeddingTable, RemoteEndpoint};
use answervault::corpus::{DatasetSplit, InputFormat, QuestionRecord};
use answervault::evaluate::{calibrate_threshold, evaluate_accuracy, run_ablation, ComparisonReport, Scorer, REFERENCE_NOTE};
use answervault::siamese::{train, SiameseModel};
use answervault::tune::{append_trial_log, grid_search};
use answervault_serve::ServiceState;
use clap::{Parser, Subcommand};
use serde_json::json;

use config::{Flags, RunConfig, ScorerKind, Split};

#[derive(Debug, Parser)]
#[command(name = "answervault", version, about = "Multiple-choice answer validation with Siamese text encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    flags: Flags,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a dataset and print its split sizes.
    Ingest,
    /// Train a Siamese encoder and write a checkpoint.
    Train,
    /// Report accuracy of a checkpoint or the baseline on one split.
    Eval,
    /// Accuracy per input format.
    Ablate,
    /// Grid search over learning rate, vocabulary, hidden and embedding size.
    Tune,
    /// Fit the free-answer threshold on the validation split.
    Calibrate,
    /// Run the HTTP service.
    Serve,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::resolve(cli.flags)?;
    match cli.command {
        Command::Ingest => ingest(&cfg),
        Command::Train => train_cmd(&cfg),
        Command::Eval => eval(&cfg),
        Command::Ablate => ablate(&cfg),
        Command::Tune => tune(&cfg),
        Command::Calibrate => calibrate(&cfg),
        Command::Serve => serve(&cfg),
    }
}

fn load_split(cfg: &RunConfig) -> Result<DatasetSplit> {
    let path = cfg.data()?;
    DatasetSplit::load(path, cfg.shuffle_seed).with_context(|| format!("loading {}", path.display()))
}

fn limited(records: &[QuestionRecord], limit: Option<usize>) -> &[QuestionRecord] {
    &records[..limit.map_or(records.len(), |n| n.min(records.len()))]
}

fn eval_records(cfg: &RunConfig, split: &DatasetSplit) -> Result<Vec<QuestionRecord>> {
    let records = match cfg.split {
        Split::Train => &split.train,
        Split::Validation => &split.validation,
        Split::Test => &split.test,
    };
    if records.is_empty() {
        bail!("the {:?} split is empty", cfg.split);
    }
    Ok(limited(records, cfg.eval_limit).to_vec())
}

fn write_output(cfg: &RunConfig, value: &serde_json::Value) -> Result<()> {
    if let Some(path) = &cfg.output {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<SiameseModel> {
    SiameseModel::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn load_baseline(cfg: &RunConfig) -> Result<Option<CosineBaseline>> {
    let provider = match (&cfg.embeddings, &cfg.embedding_url) {
        (Some(_), Some(_)) => bail!("give either --embeddings or --embedding-url, not both"),
        (Some(path), None) => EmbeddingProvider::LocalTable(
            EmbeddingTable::load(path).with_context(|| format!("loading embeddings {}", path.display()))?,
        ),
        (None, Some(url)) => EmbeddingProvider::RemoteEndpoint(RemoteEndpoint::new(
            url.clone(),
            Duration::from_millis(cfg.embedding_timeout_ms),
            cfg.embedding_retries,
        )),
        (None, None) => return Ok(None),
    };
    Ok(Some(CosineBaseline::new(provider).with_context(cfg.context)))
}

fn scorer(cfg: &RunConfig) -> Result<Box<dyn Scorer>> {
    Ok(match cfg.scorer {
        ScorerKind::Siamese => Box::new(load_model(cfg.checkpoint()?)?),
        ScorerKind::Baseline => Box::new(
            load_baseline(cfg)?.context("the baseline scorer needs --embeddings or --embedding-url")?,
        ),
    })
}

fn ingest(cfg: &RunConfig) -> Result<()> {
    let split = load_split(cfg)?;
    println!("{}", split.summary());
    write_output(
        cfg,
        &json!({
            "train": split.train.len(),
            "validation": split.validation.len(),
            "test": split.test.len(),
        }),
    )
}

fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let checkpoint = cfg.checkpoint()?.to_path_buf();
    let split = load_split(cfg)?;
    let train_set = limited(&split.train, cfg.train_limit);
    let validation = limited(&split.validation, cfg.eval_limit);
    let start = Instant::now();
    let outcome = train(&cfg.encoder, train_set, validation, cfg.format)?;
    log::info!("trained on {} records in {:.1?}", train_set.len(), start.elapsed());
    for e in &outcome.history.epochs {
        match e.validation_accuracy {
            Some(a) => println!("epoch {:>3}  loss {:.6}  validation {:.4}", e.epoch, e.train_loss, a),
            None => println!("epoch {:>3}  loss {:.6}", e.epoch, e.train_loss),
        }
    }
    outcome.model.save(&checkpoint)?;
    println!("wrote {} ({})", checkpoint.display(), &outcome.model.fingerprint()[..16]);
    write_output(cfg, &serde_json::to_value(&outcome.history)?)
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let split = load_split(cfg)?;
    let records = eval_records(cfg, &split)?;
    let scorer = scorer(cfg)?;
    let accuracy = evaluate_accuracy(scorer.as_ref(), &records, cfg.format)?;
    println!("accuracy {} on {} records ({})", answervault::evaluate::percent(accuracy), records.len(), cfg.format);
    let mut report = ComparisonReport {
        note: Some(REFERENCE_NOTE.to_owned()),
        ..ComparisonReport::default()
    };
    let dataset = cfg.data()?.file_stem().and_then(|s| s.to_str()).unwrap_or("data").to_owned();
    report.push(scorer.name(), dataset, accuracy);
    print!("{}", report.render());
    write_output(
        cfg,
        &json!({
            "scorer": scorer.name(),
            "format": cfg.format,
            "records": records.len(),
            "accuracy": accuracy,
        }),
    )
}

fn ablate(cfg: &RunConfig) -> Result<()> {
    let split = load_split(cfg)?;
    let records = eval_records(cfg, &split)?;
    let scorer = scorer(cfg)?;
    let mut report = run_ablation(scorer.as_ref(), &records, &InputFormat::ALL)?;
    report.note = Some(REFERENCE_NOTE.to_owned());
    print!("{}", report.render());
    write_output(cfg, &serde_json::to_value(&report)?)
}

fn tune(cfg: &RunConfig) -> Result<()> {
    let split = load_split(cfg)?;
    let train_set = limited(&split.train, cfg.train_limit);
    let validation = limited(&split.validation, cfg.eval_limit);
    if validation.is_empty() {
        bail!("tuning needs a nonempty validation split");
    }
    let outcome = grid_search(&cfg.grid, train_set, validation, cfg.format, cfg.workers)?;
    for t in &outcome.trials {
        match (t.validation_accuracy, &t.error) {
            (Some(a), _) => println!(
                "trial {:>2}  lr {:<6} vocab {:<6} hidden {:<4} embed {:<4} accuracy {:.4}",
                t.index, t.config.learning_rate, t.config.vocab_size, t.config.hidden_dim, t.config.embed_dim, a
            ),
            (None, Some(e)) => println!("trial {:>2}  failed: {e}", t.index),
            (None, None) => {}
        }
    }
    if let Some(path) = &cfg.trial_log {
        append_trial_log(path, &outcome.trials)?;
    }
    println!("best trial {}: {}", outcome.best.index, serde_json::to_string(&outcome.best.config)?);
    write_output(cfg, &serde_json::to_value(&outcome.best)?)
}

fn calibrate(cfg: &RunConfig) -> Result<()> {
    let split = load_split(cfg)?;
    let records = limited(&split.validation, cfg.eval_limit);
    if records.is_empty() {
        bail!("calibration needs a nonempty validation split");
    }
    let scorer = scorer(cfg)?;
    let calibration = calibrate_threshold(scorer.as_ref(), records)?;
    println!(
        "threshold {:.6} balanced accuracy {:.4} ({} positive, {} negative pairs){}",
        calibration.threshold,
        calibration.balanced_accuracy,
        calibration.positives,
        calibration.negatives,
        if calibration.degenerate { ", degenerate" } else { "" }
    );
    write_output(cfg, &serde_json::to_value(&calibration)?)
}

fn serve(cfg: &RunConfig) -> Result<()> {
    let split = load_split(cfg)?;
    let questions = eval_records(cfg, &split)?;
    let mut state = ServiceState::new(questions).with_format(cfg.format);
    match &cfg.checkpoint {
        Some(path) => state = state.with_model(load_model(path)?),
        None => log::warn!("no checkpoint given; /health will report unavailable"),
    }
    if let Some(baseline) = load_baseline(cfg)? {
        state = state.with_baseline(baseline);
    }
    if let Some(t) = cfg.threshold {
        state = state.with_threshold(t);
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(answervault_serve::serve(state, cfg.listen, cfg.cors))?;
    Ok(())
}
