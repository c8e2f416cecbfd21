//! Option prediction, accuracy, free-answer validation and ablations.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{normalize_text, InputFormat, QuestionRecord};
use crate::{Error, Result};

/// Threshold used when none has been calibrated.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Attached to accuracy reports: the published Siamese figure on SciQ appears
/// as 84.50% in the comparison table and 79.60% in the results discussion.
pub const REFERENCE_NOTE: &str =
    "published Siamese accuracy on SciQ: 84.50% (comparison table, equal to the options-alone row) vs 79.60% (results text)";

/// Anything that can score the four options of a question and compare two
/// texts. Higher scores mean more similar.
pub trait Scorer: Sync {
    fn name(&self) -> &str;
    fn score_options(&self, record: &QuestionRecord, format: InputFormat) -> Result<[f64; 4]>;
    fn similarity(&self, left: &str, right: &str) -> Result<f64>;
}

/// Index of the largest score; the lowest index wins ties.
pub fn argmax(scores: &[f64; 4]) -> usize {
    let mut best = 0;
    for i in 1..4 {
        if scores[i] > scores[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationVerdict {
    pub per_option_scores: [f64; 4],
    pub chosen_index: usize,
    /// Option text inferred as the answer key.
    pub reference_answer: String,
    pub free_answer_score: Option<f64>,
    pub is_correct: Option<bool>,
    pub threshold: f64,
}

impl ValidationVerdict {
    pub fn from_scores(record: &QuestionRecord, scores: [f64; 4], threshold: f64) -> Self {
        let chosen_index = argmax(&scores);
        Self {
            per_option_scores: scores,
            chosen_index,
            reference_answer: record.options[chosen_index].clone(),
            free_answer_score: None,
            is_correct: None,
            threshold,
        }
    }
}

pub fn predict(scorer: &dyn Scorer, record: &QuestionRecord, format: InputFormat) -> Result<ValidationVerdict> {
    let scores = scorer.score_options(record, format)?;
    Ok(ValidationVerdict::from_scores(record, scores, DEFAULT_THRESHOLD))
}

/// Fraction of verdicts whose chosen option is the correct one.
pub fn accuracy(verdicts: &[ValidationVerdict], records: &[QuestionRecord]) -> Result<f64> {
    if verdicts.is_empty() {
        return Err(Error::Evaluation("accuracy of an empty set".into()));
    }
    if verdicts.len() != records.len() {
        return Err(Error::Evaluation(format!(
            "{} verdicts for {} records",
            verdicts.len(),
            records.len()
        )));
    }
    let hits = verdicts
        .iter()
        .zip(records)
        .filter(|(v, r)| v.chosen_index == r.correct_index)
        .count();
    Ok(hits as f64 / records.len() as f64)
}

/// Predicts every record (in parallel, results in input order).
pub fn predict_all<S: Scorer + ?Sized>(scorer: &S, records: &[QuestionRecord], format: InputFormat) -> Result<Vec<ValidationVerdict>> {
    records
        .par_iter()
        .map(|r| {
            scorer
                .score_options(r, format)
                .map(|s| ValidationVerdict::from_scores(r, s, DEFAULT_THRESHOLD))
        })
        .collect()
}

pub fn evaluate_accuracy<S: Scorer + ?Sized>(scorer: &S, records: &[QuestionRecord], format: InputFormat) -> Result<f64> {
    let verdicts = predict_all(scorer, records, format)?;
    accuracy(&verdicts, records)
}

/// Infers the answer key from the support passage, then compares the
/// student's answer with it: correct iff similarity ≥ `threshold`.
pub fn validate_free_answer(
    scorer: &dyn Scorer,
    record: &QuestionRecord,
    user_answer: &str,
    threshold: f64,
) -> Result<ValidationVerdict> {
    if normalize_text(user_answer).is_empty() {
        return Err(Error::EmptyAnswer);
    }
    let scores = scorer.score_options(record, InputFormat::OptionsOnly)?;
    let mut verdict = ValidationVerdict::from_scores(record, scores, threshold);
    let score = scorer.similarity(user_answer, &verdict.reference_answer)?;
    verdict.free_answer_score = Some(score);
    verdict.is_correct = Some(score >= threshold);
    Ok(verdict)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub threshold: f64,
    pub balanced_accuracy: f64,
    /// All observed scores were identical.
    pub degenerate: bool,
    pub positives: usize,
    pub negatives: usize,
}

/// Threshold maximizing balanced accuracy of `score ≥ t`.
///
/// Candidates are the lowest observed score and the midpoints between
/// consecutive distinct scores; ties go to the lower threshold.
pub fn calibrate_from_scores(positives: &[f64], negatives: &[f64]) -> Result<Calibration> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Evaluation("calibration needs positive and negative scores".into()));
    }
    let mut distinct: Vec<f64> = positives.iter().chain(negatives).copied().collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();

    let balanced = |t: f64| {
        let tpr = positives.iter().filter(|&&s| s >= t).count() as f64 / positives.len() as f64;
        let tnr = negatives.iter().filter(|&&s| s < t).count() as f64 / negatives.len() as f64;
        (tpr + tnr) / 2.0
    };
    let candidates = std::iter::once(distinct[0]).chain(distinct.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    let mut best = (distinct[0], f64::NEG_INFINITY);
    for t in candidates {
        let b = balanced(t);
        if b > best.1 {
            best = (t, b);
        }
    }
    Ok(Calibration {
        threshold: best.0,
        balanced_accuracy: best.1,
        degenerate: distinct.len() == 1,
        positives: positives.len(),
        negatives: negatives.len(),
    })
}

/// Calibrates the free-answer threshold on held-out questions.
///
/// For each question the reference answer is inferred exactly as in
/// [`validate_free_answer`]; the correct option is then a positive example
/// and each distractor a negative one, scored against that reference.
pub fn calibrate_threshold<S: Scorer + ?Sized>(scorer: &S, records: &[QuestionRecord]) -> Result<Calibration> {
    if records.is_empty() {
        return Err(Error::Evaluation("calibration needs at least one record".into()));
    }
    let per_record: Vec<(f64, [f64; 3])> = records
        .par_iter()
        .map(|r| {
            let scores = scorer.score_options(r, InputFormat::OptionsOnly)?;
            let reference = &r.options[argmax(&scores)];
            let pos = scorer.similarity(r.correct_answer(), reference)?;
            let mut neg = [0.0; 3];
            for (slot, (_, o)) in neg
                .iter_mut()
                .zip(r.options.iter().enumerate().filter(|(i, _)| *i != r.correct_index))
            {
                *slot = scorer.similarity(o, reference)?;
            }
            Ok((pos, neg))
        })
        .collect::<Result<_>>()?;
    let positives: Vec<f64> = per_record.iter().map(|p| p.0).collect();
    let negatives: Vec<f64> = per_record.iter().flat_map(|p| p.1).collect();
    calibrate_from_scores(&positives, &negatives)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub format: InputFormat,
    pub label: String,
    pub accuracy: f64,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub scorer: String,
    pub rows: Vec<AblationRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl AblationReport {
    pub fn render(&self) -> String {
        let rows: Vec<[String; 2]> = self
            .rows
            .iter()
            .map(|r| [r.label.clone(), percent(r.accuracy)])
            .collect();
        let mut out = render_table(&["Input Format", "Accuracy"], &rows);
        if let Some(note) = &self.note {
            let _ = writeln!(out, "note: {note}");
        }
        out
    }
}

pub fn run_ablation<S: Scorer + ?Sized>(scorer: &S, records: &[QuestionRecord], formats: &[InputFormat]) -> Result<AblationReport> {
    let rows = formats
        .iter()
        .map(|&format| {
            Ok(AblationRow {
                format,
                label: format.label().to_owned(),
                accuracy: evaluate_accuracy(scorer, records, format)?,
                records: records.len(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(AblationReport {
        scorer: scorer.name().to_owned(),
        rows,
        note: None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub model: String,
    pub dataset: String,
    pub accuracy: f64,
}

/// Model-comparison table: model, dataset, accuracy.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<AccuracyRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl ComparisonReport {
    pub fn push(&mut self, model: impl Into<String>, dataset: impl Into<String>, accuracy: f64) {
        self.rows.push(AccuracyRow {
            model: model.into(),
            dataset: dataset.into(),
            accuracy,
        });
    }

    pub fn render(&self) -> String {
        let rows: Vec<[String; 3]> = self
            .rows
            .iter()
            .map(|r| [r.model.clone(), r.dataset.clone(), percent(r.accuracy)])
            .collect();
        let mut out = render_table(&["Model", "Dataset", "Accuracy"], &rows);
        if let Some(note) = &self.note {
            let _ = writeln!(out, "note: {note}");
        }
        out
    }
}

/// `0.849` → `"84.90%"`.
pub fn percent(fraction: f64) -> String {
    format!("{:.2}%", fraction * 100.0)
}

/// Left-aligned text columns, right-aligned last (numeric) column.
fn render_table<const N: usize>(header: &[&str; N], rows: &[[String; N]]) -> String {
    let mut widths: [usize; N] = header.map(str::len);
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[&str]| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str("  ");
            }
            if i + 1 < N {
                let _ = write!(s, "{cell:<w$}");
            } else {
                let _ = write!(s, "{cell:>w$}");
            }
        }
        s.trim_end().to_owned()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (N - 1)));
    out.push('\n');
    for row in rows {
        let cells: Vec<&str> = row.iter().map(String::as_str).collect();
        out.push_str(&line(&cells));
        out.push('\n');
    }
    out
}
