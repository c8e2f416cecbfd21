//! Exhaustive grid search over learning rate, vocabulary size, hidden size
//! and embedding size.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{InputFormat, QuestionRecord};
use crate::evaluate::evaluate_accuracy;
use crate::siamese::{train, EncoderConfig, LossKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub learning_rates: Vec<f64>,
    pub vocab_sizes: Vec<usize>,
    pub hidden_dims: Vec<usize>,
    pub embed_dims: Vec<usize>,
    /// Every other field of each trial's config; `seed` is the base seed.
    pub base: EncoderConfig,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            learning_rates: vec![0.1, 0.01],
            vocab_sizes: vec![5000, 20000],
            hidden_dims: vec![64, 128],
            embed_dims: vec![50, 100],
            base: EncoderConfig {
                loss_kind: LossKind::Bce,
                ..EncoderConfig::default()
            },
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, len) in [
            ("learning_rates", self.learning_rates.len()),
            ("vocab_sizes", self.vocab_sizes.len()),
            ("hidden_dims", self.hidden_dims.len()),
            ("embed_dims", self.embed_dims.len()),
        ] {
            if len == 0 {
                return Err(Error::InvalidConfig(format!("grid list {name} is empty")));
            }
        }
        Ok(())
    }

    /// Cartesian product in lexicographic order (learning rate outermost,
    /// embedding size innermost); trial `i` is seeded `base.seed + i`.
    pub fn trial_configs(&self) -> Vec<EncoderConfig> {
        let mut out = Vec::new();
        for &learning_rate in &self.learning_rates {
            for &vocab_size in &self.vocab_sizes {
                for &hidden_dim in &self.hidden_dims {
                    for &embed_dim in &self.embed_dims {
                        let seed = self.base.seed.wrapping_add(out.len() as u64);
                        out.push(EncoderConfig {
                            learning_rate,
                            vocab_size,
                            hidden_dim,
                            embed_dim,
                            seed,
                            ..self.base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub index: usize,
    pub config: EncoderConfig,
    pub final_loss: Option<f64>,
    pub validation_accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub wall_time_ms: u64,
}

impl TrialResult {
    /// Equality ignoring wall time.
    pub fn same_outcome(&self, other: &TrialResult) -> bool {
        self.index == other.index
            && self.config == other.config
            && self.final_loss.map(f64::to_bits) == other.final_loss.map(f64::to_bits)
            && self.validation_accuracy.map(f64::to_bits) == other.validation_accuracy.map(f64::to_bits)
            && self.error == other.error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: TrialResult,
    pub trials: Vec<TrialResult>,
}

pub fn run_trial(
    index: usize,
    config: EncoderConfig,
    train_set: &[QuestionRecord],
    validation: &[QuestionRecord],
    format: InputFormat,
) -> TrialResult {
    let start = Instant::now();
    let outcome = train(&config, train_set, &[], format)
        .and_then(|o| Ok((o.history.final_loss(), evaluate_accuracy(&o.model, validation, format)?)));
    let wall_time_ms = start.elapsed().as_millis() as u64;
    match outcome {
        Ok((loss, acc)) => TrialResult {
            index,
            config,
            final_loss: Some(loss),
            validation_accuracy: Some(acc),
            error: None,
            wall_time_ms,
        },
        Err(e) => {
            log::warn!("trial {index} failed: {e}");
            TrialResult {
                index,
                config,
                final_loss: None,
                validation_accuracy: None,
                error: Some(e.to_string()),
                wall_time_ms,
            }
        }
    }
}

/// Trains one model per grid point, up to `workers` at a time, and picks
/// the highest validation accuracy (lowest trial index on ties). Failed
/// trials are kept in the result; the search fails only if all of them do.
pub fn grid_search(
    spec: &GridSpec,
    train_set: &[QuestionRecord],
    validation: &[QuestionRecord],
    format: InputFormat,
    workers: usize,
) -> Result<SearchOutcome> {
    spec.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let configs = spec.trial_configs();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("worker pool: {e}")))?;
    let trials: Vec<TrialResult> = pool.install(|| {
        configs
            .into_par_iter()
            .enumerate()
            .map(|(i, c)| run_trial(i, c, train_set, validation, format))
            .collect()
    });

    let mut best: Option<&TrialResult> = None;
    for t in &trials {
        if let Some(acc) = t.validation_accuracy {
            if best.is_none_or(|b| acc > b.validation_accuracy.expect("best has accuracy")) {
                best = Some(t);
            }
        }
    }
    let best = best.cloned().ok_or(Error::AllTrialsFailed(trials.len()))?;
    Ok(SearchOutcome { best, trials })
}

/// Appends one JSON object per trial.
pub fn append_trial_log(path: impl AsRef<Path>, trials: &[TrialResult]) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    for t in trials {
        let mut line = serde_json::to_vec(t)?;
        line.push(b'\n');
        file.write_all(&line).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticSpec};

    fn toy_spec() -> GridSpec {
        GridSpec {
            learning_rates: vec![0.5, 0.05],
            vocab_sizes: vec![100, 300],
            hidden_dims: vec![6],
            embed_dims: vec![6],
            base: EncoderConfig {
                max_len: 24,
                epochs: 2,
                batch_size: 8,
                ..GridSpec::default().base
            },
        }
    }

    #[test]
    fn cartesian_count_and_seeds() {
        let spec = toy_spec();
        let configs = spec.trial_configs();
        assert_eq!(configs.len(), 4);
        assert_eq!(configs.iter().map(|c| c.seed).collect::<Vec<_>>(), vec![13, 14, 15, 16]);
        assert_eq!(GridSpec::default().trial_configs().len(), 16);
        let mut empty = spec.clone();
        empty.hidden_dims.clear();
        assert!(empty.validate().is_err());
    }

    #[test]
    fn best_matches_independent_reruns() {
        let data = generate(&SyntheticSpec { records: 40, ..SyntheticSpec::default() });
        let (train_set, valid) = data.split_at(30);
        let spec = toy_spec();
        let out = grid_search(&spec, train_set, valid, InputFormat::OptionsOnly, 2).unwrap();
        assert_eq!(out.trials.len(), 4);
        for (i, c) in spec.trial_configs().into_iter().enumerate() {
            let rerun = run_trial(i, c, train_set, valid, InputFormat::OptionsOnly);
            assert!(rerun.same_outcome(&out.trials[i]));
        }
        let best_acc = out.best.validation_accuracy.unwrap();
        assert!(out.trials.iter().all(|t| t.validation_accuracy.unwrap() <= best_acc));
        let first_best = out.trials.iter().position(|t| t.validation_accuracy == Some(best_acc)).unwrap();
        assert_eq!(out.best.index, first_best);

        let again = grid_search(&spec, train_set, valid, InputFormat::OptionsOnly, 1).unwrap();
        assert!(again.trials.iter().zip(&out.trials).all(|(a, b)| a.same_outcome(b)));
    }

    #[test]
    fn single_point_grid() {
        let data = generate(&SyntheticSpec { records: 12, ..SyntheticSpec::default() });
        let mut spec = toy_spec();
        spec.learning_rates.truncate(1);
        spec.vocab_sizes.truncate(1);
        let out = grid_search(&spec, &data[..8], &data[8..], InputFormat::OptionsOnly, 1).unwrap();
        assert_eq!(out.trials.len(), 1);
        assert!(out.best.same_outcome(&out.trials[0]));
    }

    #[test]
    fn failed_trials_are_recorded() {
        let data = generate(&SyntheticSpec { records: 12, ..SyntheticSpec::default() });
        let mut spec = toy_spec();
        // vocab_size 1 fails validation; 100 trains
        spec.vocab_sizes = vec![1, 100];
        spec.learning_rates.truncate(1);
        let out = grid_search(&spec, &data[..8], &data[8..], InputFormat::OptionsOnly, 2).unwrap();
        assert!(out.trials[0].error.is_some());
        assert_eq!(out.best.index, 1);

        spec.vocab_sizes = vec![1];
        assert!(matches!(
            grid_search(&spec, &data[..8], &data[8..], InputFormat::OptionsOnly, 1),
            Err(Error::AllTrialsFailed(1))
        ));
    }

    #[test]
    fn trial_log_appends_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.jsonl");
        let t = TrialResult {
            index: 0,
            config: EncoderConfig::default(),
            final_loss: Some(0.5),
            validation_accuracy: Some(0.25),
            error: None,
            wall_time_ms: 3,
        };
        append_trial_log(&path, std::slice::from_ref(&t)).unwrap();
        append_trial_log(&path, std::slice::from_ref(&t)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let back: TrialResult = serde_json::from_str(lines[1]).unwrap();
        assert_eq!(back, t);
    }
}
