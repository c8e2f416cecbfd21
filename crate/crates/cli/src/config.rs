//! Flat TOML config merged with command-line flags.
//!
//! Every key mirrors a long flag (`vocab_size` ↔ `--vocab-size`). Flags win
//! over the file; the file wins over built-in defaults.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use answervault::baseline::ContextSide;
use answervault::corpus::{InputFormat, DEFAULT_SHUFFLE_SEED};
use answervault::siamese::{EncoderConfig, LossKind};
use answervault::tune::GridSpec;
use clap::{Args, ValueEnum};
use serde::Deserialize;

pub const CONFIG_ENV: &str = "ANSWERVAULT_CONFIG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    Siamese,
    Baseline,
}

/// Options shared by all subcommands. All optional so that unset flags
/// fall through to the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Config file; defaults to $ANSWERVAULT_CONFIG when set.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// SciQ directory (train/valid/test.json) or a single JSON file.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_format)]
    pub format: Option<InputFormat>,
    #[arg(long, global = true, value_parser = parse_loss)]
    pub loss: Option<LossKind>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Seed for option shuffling at load time.
    #[arg(long, global = true)]
    pub shuffle_seed: Option<u64>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    #[arg(long, global = true)]
    pub vocab_size: Option<usize>,
    #[arg(long, global = true)]
    pub hidden_dim: Option<usize>,
    #[arg(long, global = true)]
    pub embed_dim: Option<usize>,
    #[arg(long, global = true)]
    pub max_len: Option<usize>,
    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub margin: Option<f64>,
    #[arg(long, global = true)]
    pub init_range: Option<f64>,
    #[arg(long, global = true)]
    pub threshold: Option<f64>,
    #[arg(long, global = true)]
    pub listen: Option<SocketAddr>,
    /// Word-vector text file for the baseline.
    #[arg(long, global = true)]
    pub embeddings: Option<PathBuf>,
    /// Sentence-embedding service for the baseline.
    #[arg(long, global = true)]
    pub embedding_url: Option<String>,
    #[arg(long, global = true)]
    pub embedding_timeout_ms: Option<u64>,
    #[arg(long, global = true)]
    pub embedding_retries: Option<u32>,
    /// Baseline context side: support or question_and_support.
    #[arg(long, global = true, value_parser = parse_context)]
    pub context: Option<ContextSide>,
    #[arg(long, global = true, value_enum)]
    pub scorer: Option<ScorerKind>,
    /// Split evaluated by eval, ablate and serve.
    #[arg(long, global = true, value_enum)]
    pub split: Option<Split>,
    /// Use only the first N training records.
    #[arg(long, global = true)]
    pub train_limit: Option<usize>,
    /// Use only the first N evaluation records.
    #[arg(long, global = true)]
    pub eval_limit: Option<usize>,
    /// Where to write the command's JSON artifact.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true)]
    pub trial_log: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub grid_lr: Option<Vec<f64>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub grid_vocab_size: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub grid_hidden_dim: Option<Vec<usize>>,
    #[arg(long, global = true, value_delimiter = ',')]
    pub grid_embed_dim: Option<Vec<usize>>,
    /// Disable cross-origin headers on the service.
    #[arg(long, global = true)]
    pub no_cors: bool,
}

fn parse_format(s: &str) -> Result<InputFormat, String> {
    s.parse().map_err(|e: answervault::Error| e.to_string())
}

fn parse_loss(s: &str) -> Result<LossKind, String> {
    s.parse().map_err(|e: answervault::Error| e.to_string())
}

fn parse_context(s: &str) -> Result<ContextSide, String> {
    match s {
        "support" => Ok(ContextSide::Support),
        "question_and_support" => Ok(ContextSide::QuestionAndSupport),
        other => Err(format!("unknown context {other:?} (expected support or question_and_support)")),
    }
}

/// Config file contents; same keys as the flags, snake_case.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub format: Option<InputFormat>,
    pub loss: Option<LossKind>,
    pub seed: Option<u64>,
    pub shuffle_seed: Option<u64>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub vocab_size: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub embed_dim: Option<usize>,
    pub max_len: Option<usize>,
    pub batch_size: Option<usize>,
    pub margin: Option<f64>,
    pub init_range: Option<f64>,
    pub threshold: Option<f64>,
    pub listen: Option<SocketAddr>,
    pub embeddings: Option<PathBuf>,
    pub embedding_url: Option<String>,
    pub embedding_timeout_ms: Option<u64>,
    pub embedding_retries: Option<u32>,
    pub context: Option<ContextSide>,
    pub scorer: Option<ScorerKind>,
    pub split: Option<Split>,
    pub train_limit: Option<usize>,
    pub eval_limit: Option<usize>,
    pub output: Option<PathBuf>,
    pub trial_log: Option<PathBuf>,
    pub workers: Option<usize>,
    pub grid_lr: Option<Vec<f64>>,
    pub grid_vocab_size: Option<Vec<usize>>,
    pub grid_hidden_dim: Option<Vec<usize>>,
    pub grid_embed_dim: Option<Vec<usize>>,
    pub no_cors: Option<bool>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&raw).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub format: InputFormat,
    pub shuffle_seed: u64,
    pub encoder: EncoderConfig,
    pub threshold: Option<f64>,
    pub listen: SocketAddr,
    pub embeddings: Option<PathBuf>,
    pub embedding_url: Option<String>,
    pub embedding_timeout_ms: u64,
    pub embedding_retries: u32,
    pub context: ContextSide,
    pub scorer: ScorerKind,
    pub split: Split,
    pub train_limit: Option<usize>,
    pub eval_limit: Option<usize>,
    pub output: Option<PathBuf>,
    pub trial_log: Option<PathBuf>,
    pub workers: usize,
    pub grid: GridSpec,
    pub cors: bool,
}

impl RunConfig {
    pub fn resolve(flags: Flags) -> Result<Self> {
        let file = match &flags.config {
            Some(path) => FileConfig::load(path)?,
            None => FileConfig::default(),
        };
        Self::merge(flags, file)
    }

    pub fn merge(flags: Flags, file: FileConfig) -> Result<Self> {
        let d = EncoderConfig::default();
        let encoder = EncoderConfig {
            vocab_size: flags.vocab_size.or(file.vocab_size).unwrap_or(d.vocab_size),
            embed_dim: flags.embed_dim.or(file.embed_dim).unwrap_or(d.embed_dim),
            hidden_dim: flags.hidden_dim.or(file.hidden_dim).unwrap_or(d.hidden_dim),
            max_len: flags.max_len.or(file.max_len).unwrap_or(d.max_len),
            margin: flags.margin.or(file.margin).unwrap_or(d.margin),
            learning_rate: flags.lr.or(file.lr).unwrap_or(d.learning_rate),
            epochs: flags.epochs.or(file.epochs).unwrap_or(d.epochs),
            batch_size: flags.batch_size.or(file.batch_size).unwrap_or(d.batch_size),
            seed: flags.seed.or(file.seed).unwrap_or(d.seed),
            loss_kind: flags.loss.or(file.loss).unwrap_or(d.loss_kind),
            init_range: flags.init_range.or(file.init_range).unwrap_or(d.init_range),
        };
        encoder.validate()?;

        let g = GridSpec::default();
        let grid = GridSpec {
            learning_rates: flags.grid_lr.or(file.grid_lr).unwrap_or(g.learning_rates),
            vocab_sizes: flags.grid_vocab_size.or(file.grid_vocab_size).unwrap_or(g.vocab_sizes),
            hidden_dims: flags.grid_hidden_dim.or(file.grid_hidden_dim).unwrap_or(g.hidden_dims),
            embed_dims: flags.grid_embed_dim.or(file.grid_embed_dim).unwrap_or(g.embed_dims),
            base: EncoderConfig {
                loss_kind: flags.loss.or(file.loss).unwrap_or(g.base.loss_kind),
                ..encoder.clone()
            },
        };
        grid.validate()?;

        let threshold = flags.threshold.or(file.threshold);
        if let Some(t) = threshold {
            if !t.is_finite() {
                bail!("threshold must be finite, got {t}");
            }
        }
        let workers = flags.workers.or(file.workers).unwrap_or_else(|| {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        });

        Ok(Self {
            data: flags.data.or(file.data),
            checkpoint: flags.checkpoint.or(file.checkpoint),
            format: flags.format.or(file.format).unwrap_or(InputFormat::OptionsOnly),
            shuffle_seed: flags.shuffle_seed.or(file.shuffle_seed).unwrap_or(DEFAULT_SHUFFLE_SEED),
            encoder,
            threshold,
            listen: flags
                .listen
                .or(file.listen)
                .unwrap_or_else(|| SocketAddr::from(([127, 0, 0, 1], 8080))),
            embeddings: flags.embeddings.or(file.embeddings),
            embedding_url: flags.embedding_url.or(file.embedding_url),
            embedding_timeout_ms: flags.embedding_timeout_ms.or(file.embedding_timeout_ms).unwrap_or(10_000),
            embedding_retries: flags.embedding_retries.or(file.embedding_retries).unwrap_or(2),
            context: flags.context.or(file.context).unwrap_or_default(),
            scorer: flags.scorer.or(file.scorer).unwrap_or(ScorerKind::Siamese),
            split: flags.split.or(file.split).unwrap_or(Split::Test),
            train_limit: flags.train_limit.or(file.train_limit),
            eval_limit: flags.eval_limit.or(file.eval_limit),
            output: flags.output.or(file.output),
            trial_log: flags.trial_log.or(file.trial_log),
            workers: workers.max(1),
            grid,
            cors: !(flags.no_cors || file.no_cors.unwrap_or(false)),
        })
    }

    pub fn data(&self) -> Result<&Path> {
        self.data.as_deref().context("no dataset given (--data or `data` in the config file)")
    }

    pub fn checkpoint(&self) -> Result<&Path> {
        self.checkpoint
            .as_deref()
            .context("no checkpoint given (--checkpoint or `checkpoint` in the config file)")
    }
}
