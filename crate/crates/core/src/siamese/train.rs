use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{bce_node, contrastive_node, head_node, triplet_node};
use super::{BoundParams, EncoderConfig, LossKind, SiameseModel};
use crate::autodiff::{Graph, NodeId};
use crate::corpus::{make_pairs, InputFormat, QuestionRecord};
use crate::evaluate::evaluate_accuracy;
use crate::text::{TokenSequence, Vocabulary};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-question loss seen during the epoch.
    pub train_loss: f64,
    pub validation_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    /// Mean loss over the training set before any update.
    pub initial_loss: f64,
    pub epochs: Vec<EpochStats>,
}

impl TrainingHistory {
    pub fn final_loss(&self) -> f64 {
        self.epochs
            .last()
            .map_or(self.initial_loss, |e| e.train_loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SiameseModel,
    pub history: TrainingHistory,
}

/// One question's encoded context and options.
struct TrainItem {
    context: TokenSequence,
    candidates: [TokenSequence; 4],
    correct: usize,
}

/// Builds the vocabulary from the training questions, options and support
/// passages, then trains.
pub fn train(
    config: &EncoderConfig,
    train_set: &[QuestionRecord],
    validation: &[QuestionRecord],
    format: InputFormat,
) -> Result<TrainOutcome> {
    config.validate()?;
    let texts: Vec<&str> = train_set
        .iter()
        .flat_map(|r| {
            std::iter::once(r.question.as_str())
                .chain(r.options.iter().map(String::as_str))
                .chain(std::iter::once(r.support.as_str()))
        })
        .collect();
    let vocab = Vocabulary::build(&texts, config.vocab_size)?;
    train_with_vocab(config, vocab, train_set, validation, format)
}

/// Mini-batch SGD on the configured loss.
///
/// Contrastive and BCE losses average over the four (option, context) pairs
/// of each question; triplet loss averages over the three
/// (context, correct option, distractor) triplets. A batch averages over
/// its questions.
pub fn train_with_vocab(
    config: &EncoderConfig,
    vocab: Vocabulary,
    train_set: &[QuestionRecord],
    validation: &[QuestionRecord],
    format: InputFormat,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut model = SiameseModel::new(config.clone(), vocab)?;
    let items: Vec<TrainItem> = train_set
        .iter()
        .map(|r| {
            let pairs = make_pairs(r, format);
            TrainItem {
                context: model.tokenize(&pairs[0].right),
                candidates: std::array::from_fn(|i| model.tokenize(&pairs[i].left)),
                correct: r.correct_index,
            }
        })
        .collect();

    let initial_loss = mean_loss(&model, &items)?;
    if !initial_loss.is_finite() {
        return Err(Error::Diverged { epoch: 0, loss: initial_loss });
    }
    log::debug!("initial loss {initial_loss:.6}");

    // init consumed seed; shuffles use a separate stream
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5EED));
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let batch_loss = {
                let params = model.params();
                let mut g = Graph::new(params);
                let bound = model.bind(&mut g);
                let mut losses = Vec::with_capacity(batch.len());
                for &i in batch {
                    losses.push(item_loss(&mut g, &model, &bound, &items[i])?);
                }
                let sum = g.add_n(&losses)?;
                let loss = g.scale(sum, 1.0 / batch.len() as f64);
                let value = g.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Diverged { epoch, loss: value });
                }
                let grads = g.backward(loss)?;
                (value, grads)
            };
            let (value, grads) = batch_loss;
            total += value * batch.len() as f64;
            let params = model.params_mut();
            grads.accumulate_into(params);
            params.sgd_step(config.learning_rate);
            params.zero_grad();
        }
        let train_loss = total / items.len() as f64;
        if !train_loss.is_finite() || !model.params().all_finite() {
            return Err(Error::Diverged { epoch, loss: train_loss });
        }
        let validation_accuracy = if validation.is_empty() {
            None
        } else {
            Some(evaluate_accuracy(&model, validation, format)?)
        };
        log::info!(
            "epoch {epoch}/{}: loss {train_loss:.6}{}",
            config.epochs,
            validation_accuracy.map_or(String::new(), |a| format!(" validation accuracy {:.4}", a))
        );
        epochs.push(EpochStats {
            epoch,
            train_loss,
            validation_accuracy,
        });
    }

    Ok(TrainOutcome {
        model,
        history: TrainingHistory {
            initial_loss,
            epochs,
        },
    })
}

fn item_loss(g: &mut Graph<'_>, model: &SiameseModel, p: &BoundParams, item: &TrainItem) -> Result<NodeId> {
    let config = model.config();
    let ctx = model.encode_node(g, p, &item.context)?;
    let mut cands = Vec::with_capacity(4);
    for seq in &item.candidates {
        cands.push(model.encode_node(g, p, seq)?);
    }
    let mut terms = Vec::with_capacity(4);
    match config.loss_kind {
        LossKind::Contrastive => {
            for (i, &c) in cands.iter().enumerate() {
                let label = u8::from(i == item.correct);
                terms.push(contrastive_node(g, c, ctx, label, config.margin)?);
            }
        }
        LossKind::Bce => {
            for (i, &c) in cands.iter().enumerate() {
                let label = u8::from(i == item.correct);
                let prob = head_node(g, c, ctx, p.head_scale, p.head_bias)?;
                terms.push(bce_node(g, prob, label));
            }
        }
        LossKind::Triplet => {
            let positive = cands[item.correct];
            for (i, &negative) in cands.iter().enumerate() {
                if i != item.correct {
                    terms.push(triplet_node(g, ctx, positive, negative, config.margin)?);
                }
            }
        }
    }
    let n = terms.len() as f64;
    let sum = g.add_n(&terms)?;
    Ok(g.scale(sum, 1.0 / n))
}

fn mean_loss(model: &SiameseModel, items: &[TrainItem]) -> Result<f64> {
    let mut total = 0.0;
    for item in items {
        let mut g = Graph::new(model.params());
        let bound = model.bind(&mut g);
        let loss = item_loss(&mut g, model, &bound, item)?;
        total += g.value(loss).item();
    }
    Ok(total / items.len() as f64)
}

/// Loss graph for one question, exposed for gradient checking.
#[cfg(test)]
pub(crate) fn record_loss_node(
    g: &mut Graph<'_>,
    model: &SiameseModel,
    record: &QuestionRecord,
    format: InputFormat,
) -> Result<NodeId> {
    let pairs = make_pairs(record, format);
    let item = TrainItem {
        context: model.tokenize(&pairs[0].right),
        candidates: std::array::from_fn(|i| model.tokenize(&pairs[i].left)),
        correct: record.correct_index,
    };
    let bound = model.bind(g);
    item_loss(g, model, &bound, &item)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check;
    use crate::synthetic::{generate, SyntheticSpec};

    fn tiny_config(loss_kind: LossKind) -> EncoderConfig {
        EncoderConfig {
            vocab_size: 200,
            embed_dim: 8,
            hidden_dim: 8,
            max_len: 24,
            epochs: 5,
            batch_size: 4,
            learning_rate: 0.5,
            loss_kind,
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let data = generate(&SyntheticSpec { records: 8, ..SyntheticSpec::default() });
        let config = EncoderConfig { epochs: 0, ..tiny_config(LossKind::Contrastive) };
        let out = train(&config, &data, &[], InputFormat::OptionsOnly).unwrap();
        let fresh = SiameseModel::new(config, out.model.vocab().clone()).unwrap();
        assert_eq!(out.model, fresh);
        assert!(out.history.epochs.is_empty());
    }

    #[test]
    fn loss_decreases_on_separable_data() {
        let data = generate(&SyntheticSpec { records: 40, ..SyntheticSpec::default() });
        for kind in [LossKind::Contrastive, LossKind::Triplet, LossKind::Bce] {
            let out = train(&tiny_config(kind), &data, &data[..8], InputFormat::OptionsOnly).unwrap();
            let h = &out.history;
            assert_eq!(h.epochs.len(), 5);
            assert!(h.final_loss() < h.initial_loss, "{kind}: {h:?}");
            assert!(out.model.params().all_finite());
        }
    }

    #[test]
    fn same_seed_same_parameters() {
        let data = generate(&SyntheticSpec { records: 20, ..SyntheticSpec::default() });
        let config = tiny_config(LossKind::Contrastive);
        let a = train(&config, &data, &[], InputFormat::QuestionPrefixed).unwrap();
        let b = train(&config, &data, &[], InputFormat::QuestionPrefixed).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn empty_training_set_is_an_error() {
        let config = tiny_config(LossKind::Contrastive);
        assert!(matches!(train(&config, &[], &[], InputFormat::OptionsOnly), Err(Error::EmptyDataset)));
    }

    #[test]
    fn divergence_names_the_epoch() {
        let data = generate(&SyntheticSpec { records: 16, ..SyntheticSpec::default() });
        let config = EncoderConfig {
            learning_rate: 1e300,
            init_range: 1.0,
            ..tiny_config(LossKind::Contrastive)
        };
        match train(&config, &data, &[], InputFormat::OptionsOnly) {
            Err(Error::Diverged { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
        }
    }

    #[test]
    fn full_loss_graphs_pass_grad_check() {
        let data = generate(&SyntheticSpec { records: 3, ..SyntheticSpec::default() });
        for kind in [LossKind::Contrastive, LossKind::Triplet, LossKind::Bce] {
            let config = EncoderConfig {
                vocab_size: 40,
                embed_dim: 3,
                hidden_dim: 3,
                max_len: 6,
                init_range: 0.8,
                loss_kind: kind,
                ..EncoderConfig::default()
            };
            let outcome = train(&EncoderConfig { epochs: 0, ..config }, &data, &[], InputFormat::OptionsOnly).unwrap();
            let model = outcome.model;
            let mut params = model.params().clone();
            let err = grad_check(
                |g| record_loss_node(g, &model, &data[0], InputFormat::OptionsOnly),
                &mut params,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{kind}: {err}");
        }
    }
}
