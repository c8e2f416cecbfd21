//! SciQ-format loading, text normalization and pair construction.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

/// Seed used for option shuffling when none is given.
pub const DEFAULT_SHUFFLE_SEED: u64 = 13;

/// Interrogatives stripped by [`normalize_text`].
pub const DEFAULT_QUESTION_WORDS: [&str; 9] = [
    "what", "which", "who", "whom", "whose", "when", "where", "why", "how",
];

/// One multiple-choice item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionRecord {
    pub id: String,
    pub question: String,
    pub options: [String; 4],
    pub correct_index: usize,
    /// Evidence passage; empty when the source had none.
    pub support: String,
}

impl QuestionRecord {
    pub fn new(
        id: impl Into<String>,
        question: impl Into<String>,
        options: [String; 4],
        correct_index: usize,
        support: impl Into<String>,
    ) -> Result<Self> {
        let record = Self {
            id: id.into(),
            question: question.into(),
            options,
            correct_index,
            support: support.into(),
        };
        record.validate()?;
        Ok(record)
    }

    pub fn validate(&self) -> Result<()> {
        if self.question.trim().is_empty() {
            return Err(Error::InvalidConfig(format!(
                "record {}: question is empty",
                self.id
            )));
        }
        if self.correct_index > 3 {
            return Err(Error::InvalidConfig(format!(
                "record {}: correct_index {} outside 0..=3",
                self.id, self.correct_index
            )));
        }
        Ok(())
    }

    pub fn correct_answer(&self) -> &str {
        &self.options[self.correct_index]
    }
}

/// Text pair fed to a scorer: a candidate answer and its context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerPair {
    pub left: String,
    pub right: String,
    /// 1 when `left` derives from the correct option.
    pub label: u8,
}

/// How candidate and context texts are assembled for scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    /// Option text against the full support passage.
    #[serde(rename = "options")]
    OptionsOnly,
    /// Question text prefixed to the option, against the support passage.
    #[serde(rename = "question")]
    QuestionPrefixed,
    /// Option text against the single best-matching support sentence.
    #[serde(rename = "sentence")]
    SentenceSelected,
}

impl InputFormat {
    pub const ALL: [InputFormat; 3] = [
        InputFormat::OptionsOnly,
        InputFormat::QuestionPrefixed,
        InputFormat::SentenceSelected,
    ];

    /// Stable short name, as accepted by [`FromStr`].
    pub fn name(self) -> &'static str {
        match self {
            InputFormat::OptionsOnly => "options",
            InputFormat::QuestionPrefixed => "question",
            InputFormat::SentenceSelected => "sentence",
        }
    }

    /// Row label used in ablation reports.
    pub fn label(self) -> &'static str {
        match self {
            InputFormat::OptionsOnly => "Options alone",
            InputFormat::QuestionPrefixed => "Options + question",
            InputFormat::SentenceSelected => "Answer sentence selection",
        }
    }
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for InputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        InputFormat::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown input format {s:?} (expected options, question or sentence)"
                ))
            })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetSplit {
    pub train: Vec<QuestionRecord>,
    pub validation: Vec<QuestionRecord>,
    pub test: Vec<QuestionRecord>,
}

impl DatasetSplit {
    /// Loads `train.json`, `valid.json` and `test.json` from a SciQ
    /// distribution directory. Missing validation or test files leave those
    /// splits empty; the training file is required.
    pub fn load_dir(dir: impl AsRef<Path>, seed: u64) -> Result<Self> {
        let dir = dir.as_ref();
        let optional = |name: &str| -> Result<Vec<QuestionRecord>> {
            let path = dir.join(name);
            if path.exists() {
                load_sciq(&path, seed)
            } else {
                Ok(Vec::new())
            }
        };
        let split = Self {
            train: load_sciq(dir.join("train.json"), seed)?,
            validation: optional("valid.json")?,
            test: optional("test.json")?,
        };
        split.check_disjoint()?;
        log::info!("loaded {}", split.summary());
        Ok(split)
    }

    /// Loads a directory via [`DatasetSplit::load_dir`], or a single file
    /// partitioned 80/10/10 in file order.
    pub fn load(path: impl AsRef<Path>, seed: u64) -> Result<Self> {
        let path = path.as_ref();
        if path.is_dir() {
            Self::load_dir(path, seed)
        } else {
            Ok(Self::partition(load_sciq(path, seed)?))
        }
    }

    pub fn partition(records: Vec<QuestionRecord>) -> Self {
        let n = records.len();
        let n_train = n * 8 / 10;
        let n_valid = n / 10;
        let mut iter = records.into_iter();
        let train = iter.by_ref().take(n_train).collect();
        let validation = iter.by_ref().take(n_valid).collect();
        let test = iter.collect();
        Self {
            train,
            validation,
            test,
        }
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in self.train.iter().chain(&self.validation).chain(&self.test) {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::OverlappingSplits(r.id.clone()));
            }
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.validation.len() + self.test.len()
    }

    pub fn summary(&self) -> String {
        let empty_support = self
            .train
            .iter()
            .chain(&self.validation)
            .chain(&self.test)
            .filter(|r| r.support.trim().is_empty())
            .count();
        format!(
            "train={} validation={} test={} total={} empty_support={}",
            self.train.len(),
            self.validation.len(),
            self.test.len(),
            self.total(),
            empty_support
        )
    }
}

/// Loads SciQ records from a JSON array file or line-delimited JSON.
///
/// Options are shuffled per record with a generator keyed on `seed` and the
/// record ordinal, so the correct index varies but is reproducible.
pub fn load_sciq(path: impl AsRef<Path>, seed: u64) -> Result<Vec<QuestionRecord>> {
    let path = path.as_ref();
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("record");
    parse_sciq(&raw, stem, seed)
}

/// Parses SciQ text already in memory; `id_prefix` names generated ids.
pub fn parse_sciq(raw: &str, id_prefix: &str, seed: u64) -> Result<Vec<QuestionRecord>> {
    let trimmed = raw.trim_start();
    let values: Vec<Value> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed)?
    } else {
        let mut values = Vec::new();
        for (i, line) in raw.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let value = serde_json::from_str(line).map_err(|e| Error::MalformedRecord {
                ordinal: values.len() + 1,
                message: format!("line {}: {e}", i + 1),
            })?;
            values.push(value);
        }
        values
    };
    if values.is_empty() {
        return Err(Error::EmptyDataset);
    }
    values
        .iter()
        .enumerate()
        .map(|(i, v)| record_from_json(v, i, id_prefix, seed))
        .collect()
}

fn record_from_json(value: &Value, index: usize, id_prefix: &str, seed: u64) -> Result<QuestionRecord> {
    let ordinal = index + 1;
    let obj = value.as_object().ok_or_else(|| Error::MalformedRecord {
        ordinal,
        message: "not a JSON object".into(),
    })?;
    let field = |key: &str| -> Option<String> {
        match obj.get(key)? {
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            Value::Bool(b) => Some(b.to_string()),
            _ => None,
        }
    };
    let required = |key: &str| -> Result<String> {
        field(key).ok_or_else(|| Error::MalformedRecord {
            ordinal,
            message: format!("missing field {key:?}"),
        })
    };

    let question = required("question")?;
    if question.trim().is_empty() {
        return Err(Error::MalformedRecord {
            ordinal,
            message: "field \"question\" is empty".into(),
        });
    }
    let answers = [
        required("correct_answer")?,
        required("distractor1")?,
        required("distractor2")?,
        required("distractor3")?,
    ];
    let support = field("support").unwrap_or_default();
    let id = field("id").unwrap_or_else(|| format!("{id_prefix}-{index}"));

    let mut order = [0usize, 1, 2, 3];
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    let options = order.map(|k| answers[k].clone());
    let correct_index = order.iter().position(|&k| k == 0).expect("permutation of 0..4");

    Ok(QuestionRecord {
        id,
        question,
        options,
        correct_index,
        support,
    })
}

/// Lowercases, strips punctuation and question words, and collapses
/// whitespace. Idempotent.
#[derive(Debug, Clone)]
pub struct Normalizer {
    stop_words: HashSet<String>,
}

impl Default for Normalizer {
    fn default() -> Self {
        Self::with_stop_words(DEFAULT_QUESTION_WORDS)
    }
}

impl Normalizer {
    pub fn with_stop_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        Self {
            stop_words: words
                .into_iter()
                .map(|w| w.as_ref().to_lowercase())
                .collect(),
        }
    }

    pub fn normalize(&self, raw: &str) -> String {
        let mut cleaned = String::with_capacity(raw.len());
        for ch in raw.chars().flat_map(char::to_lowercase) {
            if ch == '\'' || ch == '\u{2019}' {
                // apostrophes join their word: "don't" -> "dont"
                continue;
            }
            if ch.is_alphanumeric() && !ch.is_uppercase() {
                cleaned.push(ch);
            } else {
                cleaned.push(' ');
            }
        }
        let mut out = String::with_capacity(cleaned.len());
        for token in cleaned.split_whitespace() {
            if self.stop_words.contains(token) {
                continue;
            }
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(token);
        }
        out
    }

    pub fn tokens(&self, raw: &str) -> Vec<String> {
        self.normalize(raw)
            .split(' ')
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect()
    }
}

/// [`Normalizer::normalize`] with the default question-word list.
pub fn normalize_text(raw: &str) -> String {
    thread_local! {
        static DEFAULT: Normalizer = Normalizer::default();
    }
    DEFAULT.with(|n| n.normalize(raw))
}

/// Splits on `.`, `!` or `?` followed by whitespace. Sentences are trimmed
/// and keep their terminal punctuation.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, ch)) = chars.next() {
        if matches!(ch, '.' | '!' | '?') {
            if let Some(&(_, next)) = chars.peek() {
                if next.is_whitespace() {
                    let end = i + ch.len_utf8();
                    sentences.push(&text[start..end]);
                    start = end;
                }
            }
        }
    }
    sentences.push(&text[start..]);
    sentences
        .into_iter()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

/// Bag-of-tokens F1 between two token lists.
pub fn token_f1(candidate: &[String], reference: &[String]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in reference {
        *counts.entry(t.as_str()).or_default() += 1;
    }
    let mut common = 0usize;
    for t in candidate {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / candidate.len() as f64;
    let recall = common as f64 / reference.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// The support sentence with the highest token-overlap F1 against the
/// normalized question; the earliest sentence wins ties. Empty support is
/// returned unchanged.
pub fn select_support_sentence(record: &QuestionRecord) -> String {
    let normalizer = Normalizer::default();
    let sentences = split_sentences(&record.support);
    if sentences.is_empty() {
        return record.support.clone();
    }
    let question = normalizer.tokens(&record.question);
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, sentence) in sentences.iter().enumerate() {
        let f1 = token_f1(&normalizer.tokens(sentence), &question);
        if f1 > best.1 {
            best = (i, f1);
        }
    }
    sentences[best.0].to_owned()
}

/// The four (candidate, context) pairs for a record, in option order.
pub fn make_pairs(record: &QuestionRecord, format: InputFormat) -> [AnswerPair; 4] {
    let context = match format {
        InputFormat::SentenceSelected => select_support_sentence(record),
        InputFormat::OptionsOnly | InputFormat::QuestionPrefixed => record.support.clone(),
    };
    std::array::from_fn(|i| {
        let option = &record.options[i];
        let left = match format {
            InputFormat::QuestionPrefixed => format!("{} {}", record.question, option),
            InputFormat::OptionsOnly | InputFormat::SentenceSelected => option.clone(),
        };
        AnswerPair {
            left,
            right: context.clone(),
            label: u8::from(i == record.correct_index),
        }
    })
}
