//! Shared-weight deep-averaging text encoder.
//!
//! Both sides of a pair go through the same parameters:
//! token embeddings, a masked mean over the non-padding positions, then
//! `affine → tanh → affine`. Distance-trained models score a pair as
//! `1 / (1 + D)` with `D` the Euclidean distance of the two encodings; the
//! BCE-trained model scores it as `σ(a·cos + b)`. Higher is always better.

mod checkpoint;
pub mod loss;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{self, Graph, NodeId, ParamId, ParamSet, Tensor};
use crate::corpus::{make_pairs, InputFormat, QuestionRecord};
use crate::evaluate::Scorer;
use crate::text::{TokenSequence, Vocabulary};
use crate::{Error, Result};

pub use checkpoint::{CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use train::{train, train_with_vocab, EpochStats, TrainOutcome, TrainingHistory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Contrastive,
    Triplet,
    Bce,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Contrastive => "contrastive",
            LossKind::Triplet => "triplet",
            LossKind::Bce => "bce",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contrastive" => Ok(LossKind::Contrastive),
            "triplet" => Ok(LossKind::Triplet),
            "bce" => Ok(LossKind::Bce),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss {other:?} (expected contrastive, triplet or bce)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Upper bound on vocabulary entries, PAD and UNK included.
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    /// Tokens kept per text.
    pub max_len: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Questions per gradient step.
    pub batch_size: usize,
    pub seed: u64,
    pub loss_kind: LossKind,
    /// Weights start uniform in `[-init_range, init_range]`.
    pub init_range: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            vocab_size: 5000,
            embed_dim: 50,
            hidden_dim: 64,
            max_len: 128,
            margin: 1.0,
            learning_rate: 0.1,
            epochs: 10,
            batch_size: 16,
            seed: 13,
            loss_kind: LossKind::Contrastive,
            init_range: 0.05,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.vocab_size < 2 {
            return bad(format!("vocab_size must be at least 2, got {}", self.vocab_size));
        }
        for (name, v) in [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("max_len", self.max_len),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad(format!("margin must be non-negative, got {}", self.margin));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.init_range >= 0.0 && self.init_range.is_finite()) {
            return bad(format!("init_range must be non-negative, got {}", self.init_range));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Layout {
    embedding: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    head_scale: ParamId,
    head_bias: ParamId,
}

const PARAM_NAMES: [&str; 7] = ["embedding", "w1", "b1", "w2", "b2", "head_scale", "head_bias"];

impl Layout {
    fn expected_shapes(config: &EncoderConfig, vocab_len: usize) -> [Vec<usize>; 7] {
        let (e, h) = (config.embed_dim, config.hidden_dim);
        [
            vec![vocab_len, e],
            vec![h, e],
            vec![h],
            vec![h, h],
            vec![h],
            vec![],
            vec![],
        ]
    }

    fn from_params(params: &ParamSet) -> Result<Self> {
        let id = |name: &str| {
            params
                .by_name(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name:?}")))
        };
        Ok(Self {
            embedding: id("embedding")?,
            w1: id("w1")?,
            b1: id("b1")?,
            w2: id("w2")?,
            b2: id("b2")?,
            head_scale: id("head_scale")?,
            head_bias: id("head_bias")?,
        })
    }
}

/// Encoder parameters plus the vocabulary they index.
#[derive(Debug, Clone, PartialEq)]
pub struct SiameseModel {
    config: EncoderConfig,
    vocab: Vocabulary,
    params: ParamSet,
    layout: Layout,
}

/// Parameter nodes of one model inside a graph.
#[derive(Debug, Clone, Copy)]
pub(crate) struct BoundParams {
    embedding: NodeId,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
    pub(crate) head_scale: NodeId,
    pub(crate) head_bias: NodeId,
}

impl SiameseModel {
    /// Fresh model: weights uniform in `±init_range`, similarity head
    /// `a = 1, b = 0`.
    pub fn new(config: EncoderConfig, vocab: Vocabulary) -> Result<Self> {
        config.validate()?;
        if vocab.max_size() != config.vocab_size {
            return Err(Error::InvalidConfig(format!(
                "vocabulary max_size {} differs from config vocab_size {}",
                vocab.max_size(),
                config.vocab_size
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let range = config.init_range;
        let mut uniform = |shape: Vec<usize>| {
            let n: usize = shape.iter().product();
            let values = (0..n)
                .map(|_| if range > 0.0 { rng.random_range(-range..=range) } else { 0.0 })
                .collect();
            Tensor::new(shape, values).expect("shape matches value count")
        };
        let shapes = Layout::expected_shapes(&config, vocab.len());
        let mut params = ParamSet::new();
        for (name, shape) in PARAM_NAMES.iter().zip(shapes).take(5) {
            params.add(*name, uniform(shape));
        }
        params.add("head_scale", Tensor::scalar(1.0));
        params.add("head_bias", Tensor::scalar(0.0));
        let layout = Layout::from_params(&params)?;
        Ok(Self {
            config,
            vocab,
            params,
            layout,
        })
    }

    pub(crate) fn from_parts(config: EncoderConfig, vocab: Vocabulary, params: ParamSet) -> Result<Self> {
        config.validate()?;
        if vocab.max_size() != config.vocab_size {
            return Err(Error::Checkpoint(format!(
                "config vocab_size {} does not match vocabulary max_size {}",
                config.vocab_size,
                vocab.max_size()
            )));
        }
        let names: Vec<&str> = params.iter().map(|p| p.name.as_str()).collect();
        if names != PARAM_NAMES {
            return Err(Error::Checkpoint(format!("unexpected parameter list {names:?}")));
        }
        let expected = Layout::expected_shapes(&config, vocab.len());
        for (p, shape) in params.iter().zip(&expected) {
            if p.value.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, config implies {:?}",
                    p.name,
                    p.value.shape(),
                    shape
                )));
            }
        }
        let layout = Layout::from_params(&params)?;
        Ok(Self {
            config,
            vocab,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// SHA-256 over the config, vocabulary and parameter bits, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.config).expect("config serializes"));
        for t in self.vocab.tokens() {
            h.update(t.as_bytes());
            h.update([0]);
        }
        for p in self.params.iter() {
            for v in p.value.values() {
                h.update(v.to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        self.vocab.encode(text, self.config.max_len)
    }

    pub(crate) fn bind(&self, g: &mut Graph<'_>) -> BoundParams {
        let l = self.layout;
        BoundParams {
            embedding: g.param(l.embedding),
            w1: g.param(l.w1),
            b1: g.param(l.b1),
            w2: g.param(l.w2),
            b2: g.param(l.b2),
            head_scale: g.param(l.head_scale),
            head_bias: g.param(l.head_bias),
        }
    }

    /// Gather → masked mean pool → affine → tanh → affine.
    pub(crate) fn encode_node(&self, g: &mut Graph<'_>, p: &BoundParams, seq: &TokenSequence) -> Result<NodeId> {
        let rows = g.gather(p.embedding, &seq.ids)?;
        let pooled = g.mean_pool(rows, seq.length)?;
        let h = g.affine(p.w1, p.b1, pooled)?;
        let h = g.tanh(h);
        g.affine(p.w2, p.b2, h)
    }

    /// Encoding of one token sequence.
    pub fn encode_sequence(&self, seq: &TokenSequence) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let p = self.bind(&mut g);
        let out = self.encode_node(&mut g, &p, seq)?;
        Ok(g.value(out).values().to_vec())
    }

    pub fn encode_text(&self, text: &str) -> Result<Vec<f64>> {
        self.encode_sequence(&self.tokenize(text))
    }

    fn head_values(&self) -> (f64, f64) {
        (
            self.params.value(self.layout.head_scale).item(),
            self.params.value(self.layout.head_bias).item(),
        )
    }

    /// Similarity of two encodings under the model's scoring rule.
    pub fn similarity_of(&self, u: &[f64], v: &[f64]) -> f64 {
        match self.config.loss_kind {
            LossKind::Contrastive | LossKind::Triplet => 1.0 / (1.0 + autodiff::euclidean(u, v)),
            LossKind::Bce => {
                let (a, b) = self.head_values();
                loss::head_probability(autodiff::cosine(u, v), a, b)
            }
        }
    }

    /// Similarity of two raw texts.
    pub fn similarity(&self, left: &str, right: &str) -> Result<f64> {
        let u = self.encode_text(left)?;
        let v = self.encode_text(right)?;
        Ok(self.similarity_of(&u, &v))
    }

    /// Scores of the four options against the context side of `format`.
    pub fn score_options(&self, record: &QuestionRecord, format: InputFormat) -> Result<[f64; 4]> {
        let pairs = make_pairs(record, format);
        let context = self.encode_text(&pairs[0].right)?;
        let mut scores = [0.0; 4];
        for (s, pair) in scores.iter_mut().zip(&pairs) {
            let u = self.encode_text(&pair.left)?;
            *s = self.similarity_of(&u, &context);
        }
        Ok(scores)
    }
}

impl Scorer for SiameseModel {
    fn name(&self) -> &str {
        "siamese"
    }

    fn score_options(&self, record: &QuestionRecord, format: InputFormat) -> Result<[f64; 4]> {
        SiameseModel::score_options(self, record, format)
    }

    fn similarity(&self, left: &str, right: &str) -> Result<f64> {
        SiameseModel::similarity(self, left, right)
    }
}
