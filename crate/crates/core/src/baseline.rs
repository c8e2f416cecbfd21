//! Unsupervised cosine-similarity scorer over sentence embeddings.
//!
//! Text is normalized (lowercase, no punctuation, no question words), turned
//! into a sentence vector by an [`EmbeddingProvider`], and each option is
//! scored by its cosine similarity with the context side.

use std::collections::HashMap;
use std::path::Path;
use std::sync::{Condvar, Mutex, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::autodiff::cosine;
use crate::corpus::{make_pairs, normalize_text, InputFormat, QuestionRecord};
use crate::evaluate::{argmax, Scorer};
use crate::{Error, Result};

/// Word vectors keyed by token.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn from_entries<I>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<f64>)>,
    {
        let mut vectors = HashMap::new();
        for (n, (token, v)) in entries.into_iter().enumerate() {
            if v.len() != dim {
                return Err(Error::Embeddings {
                    line: n + 1,
                    message: format!("{token:?} has {} values, expected {dim}", v.len()),
                });
            }
            vectors.insert(token, v);
        }
        Ok(Self { dim, vectors })
    }

    /// Reads whitespace-separated `token v1 .. vd` lines. The first line
    /// fixes `d`; blank lines are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&raw)
    }

    pub fn parse(raw: &str) -> Result<Self> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (n, line) in raw.lines().enumerate() {
            let line_no = n + 1;
            let mut fields = line.split_whitespace();
            let Some(token) = fields.next() else {
                continue;
            };
            let values = fields
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Embeddings {
                    line: line_no,
                    message: e.to_string(),
                })?;
            if values.is_empty() {
                return Err(Error::Embeddings {
                    line: line_no,
                    message: format!("{token:?} has no values"),
                });
            }
            let d = *dim.get_or_insert(values.len());
            if values.len() != d {
                return Err(Error::Embeddings {
                    line: line_no,
                    message: format!("{} values, expected {d}", values.len()),
                });
            }
            vectors.insert(token.to_owned(), values);
        }
        let dim = dim.ok_or(Error::Embeddings {
            line: 0,
            message: "empty embeddings file".into(),
        })?;
        Ok(Self { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    /// Copy with every vector multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dim: self.dim,
            vectors: self
                .vectors
                .iter()
                .map(|(k, v)| (k.clone(), v.iter().map(|x| x * factor).collect()))
                .collect(),
        }
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vector: Vec<f64>,
}

/// Counting gate bounding concurrent requests.
#[derive(Debug)]
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> GateGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

/// Sentence-embedding service reached over HTTP.
///
/// Each call POSTs `{"text": ..}` to `url` and expects status 200 with
/// `{"vector": [..]}`. The first successful response fixes the dimension;
/// later responses of another length are rejected.
#[derive(Debug)]
pub struct RemoteEndpoint {
    url: String,
    timeout: Duration,
    retries: u32,
    agent: ureq::Agent,
    dim: OnceLock<usize>,
    gate: Gate,
}

impl RemoteEndpoint {
    pub fn new(url: impl Into<String>, timeout: Duration, retries: u32) -> Self {
        Self::with_max_in_flight(url, timeout, retries, 8)
    }

    pub fn with_max_in_flight(url: impl Into<String>, timeout: Duration, retries: u32, max_in_flight: usize) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            url: url.into(),
            timeout,
            retries,
            agent,
            dim: OnceLock::new(),
            gate: Gate::new(max_in_flight),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn retries(&self) -> u32 {
        self.retries
    }

    fn request_once(&self, text: &str) -> std::result::Result<Vec<f64>, String> {
        let _permit = self.gate.acquire();
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(EmbedRequest { text })
            .map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(format!("status {status}"));
        }
        let body: EmbedResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| format!("bad response body: {e}"))?;
        Ok(body.vector)
    }

    pub fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let mut last = String::new();
        for attempt in 0..=self.retries {
            match self.request_once(text) {
                Ok(vector) => return self.check_vector(vector),
                Err(e) => {
                    log::warn!("embedding request {} of {} failed: {e}", attempt + 1, self.retries + 1);
                    last = e;
                }
            }
        }
        Err(Error::Remote(format!(
            "{} failed after {} attempts: {last}",
            self.url,
            self.retries + 1
        )))
    }

    fn check_vector(&self, vector: Vec<f64>) -> Result<Vec<f64>> {
        if vector.is_empty() || vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::Remote("response vector is empty or not finite".into()));
        }
        let dim = *self.dim.get_or_init(|| vector.len());
        if vector.len() != dim {
            return Err(Error::Remote(format!(
                "response has {} dimensions, expected {dim}",
                vector.len()
            )));
        }
        Ok(vector)
    }
}

#[derive(Debug)]
pub enum EmbeddingProvider {
    LocalTable(EmbeddingTable),
    RemoteEndpoint(RemoteEndpoint),
}

/// A sentence vector; `oov` marks a zero vector produced because no token
/// had an embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceEmbedding {
    pub vector: Vec<f64>,
    pub oov: bool,
}

impl EmbeddingProvider {
    /// Normalizes `text`, then embeds it: mean of known word vectors for a
    /// local table, one request for a remote endpoint.
    pub fn embed_sentence(&self, text: &str) -> Result<SentenceEmbedding> {
        let normalized = normalize_text(text);
        match self {
            EmbeddingProvider::LocalTable(table) => {
                let mut sum = vec![0.0; table.dim()];
                let mut known = 0usize;
                for token in normalized.split_whitespace() {
                    if let Some(v) = table.get(token) {
                        sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
                        known += 1;
                    }
                }
                if known == 0 {
                    return Ok(SentenceEmbedding { vector: sum, oov: true });
                }
                let inv = 1.0 / known as f64;
                sum.iter_mut().for_each(|s| *s *= inv);
                Ok(SentenceEmbedding { vector: sum, oov: false })
            }
            EmbeddingProvider::RemoteEndpoint(remote) => {
                if normalized.is_empty() {
                    let dim = remote.dim.get().copied().unwrap_or(0);
                    return Ok(SentenceEmbedding { vector: vec![0.0; dim], oov: true });
                }
                Ok(SentenceEmbedding {
                    vector: remote.embed(&normalized)?,
                    oov: false,
                })
            }
        }
    }
}

/// What the option side is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextSide {
    #[default]
    Support,
    QuestionAndSupport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselinePrediction {
    pub chosen_index: usize,
    pub scores: [f64; 4],
}

/// Cosine scorer over an [`EmbeddingProvider`].
#[derive(Debug)]
pub struct CosineBaseline {
    pub provider: EmbeddingProvider,
    pub context: ContextSide,
}

impl CosineBaseline {
    pub fn new(provider: EmbeddingProvider) -> Self {
        Self {
            provider,
            context: ContextSide::default(),
        }
    }

    pub fn with_context(mut self, context: ContextSide) -> Self {
        self.context = context;
        self
    }

    pub fn scores(&self, record: &QuestionRecord, format: InputFormat) -> Result<[f64; 4]> {
        let pairs = make_pairs(record, format);
        let context_text = match self.context {
            ContextSide::Support => pairs[0].right.clone(),
            ContextSide::QuestionAndSupport => format!("{} {}", record.question, pairs[0].right),
        };
        let context = self.provider.embed_sentence(&context_text)?;
        let mut scores = [0.0; 4];
        for (s, pair) in scores.iter_mut().zip(&pairs) {
            let option = self.provider.embed_sentence(&pair.left)?;
            *s = cosine(&option.vector, &context.vector);
        }
        Ok(scores)
    }

    /// Highest-cosine option, lowest index on ties.
    pub fn predict_option(&self, record: &QuestionRecord, format: InputFormat) -> Result<BaselinePrediction> {
        let scores = self.scores(record, format)?;
        Ok(BaselinePrediction {
            chosen_index: argmax(&scores),
            scores,
        })
    }
}

impl Scorer for CosineBaseline {
    fn name(&self) -> &str {
        "baseline"
    }

    fn score_options(&self, record: &QuestionRecord, format: InputFormat) -> Result<[f64; 4]> {
        self.scores(record, format)
    }

    fn similarity(&self, left: &str, right: &str) -> Result<f64> {
        let u = self.provider.embed_sentence(left)?;
        let v = self.provider.embed_sentence(right)?;
        Ok(cosine(&u.vector, &v.vector))
    }
}
