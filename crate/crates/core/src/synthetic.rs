//! Generated multiple-choice datasets with a known answer key.
//!
//! Each support passage has one sentence that repeats the question's topic
//! words and contains the correct answer verbatim; the remaining sentences
//! are filler. Distractors are drawn from the answer pool but never share a
//! token with the support passage, so a pure overlap scorer is always right.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::baseline::EmbeddingTable;
use crate::corpus::QuestionRecord;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub records: usize,
    pub seed: u64,
    /// Distinct words answers and distractors are drawn from.
    pub answer_words: usize,
    pub topic_words: usize,
    pub filler_words: usize,
    /// Sentences per support passage, one of which holds the answer.
    pub sentences: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            records: 200,
            seed: 7,
            answer_words: 60,
            topic_words: 60,
            filler_words: 60,
            sentences: 3,
        }
    }
}

const ONSETS: [&str; 12] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 4] = ["", "n", "r", "x"];

/// `count` distinct three-syllable pseudo-words, skipping any in `taken`.
fn pseudo_words(rng: &mut ChaCha8Rng, count: usize, taken: &mut HashSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let mut w = String::new();
        for _ in 0..3 {
            w.push_str(ONSETS.choose(rng).expect("nonempty"));
            w.push_str(VOWELS.choose(rng).expect("nonempty"));
        }
        w.push_str(CODAS.choose(rng).expect("nonempty"));
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

struct Pools {
    answers: Vec<String>,
    topics: Vec<String>,
    fillers: Vec<String>,
}

fn pools(spec: &SyntheticSpec) -> Pools {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut taken = HashSet::new();
    Pools {
        answers: pseudo_words(&mut rng, spec.answer_words.max(8), &mut taken),
        topics: pseudo_words(&mut rng, spec.topic_words.max(2), &mut taken),
        fillers: pseudo_words(&mut rng, spec.filler_words.max(4), &mut taken),
    }
}

fn phrase(rng: &mut ChaCha8Rng, pool: &[String], avoid: &HashSet<&str>) -> Vec<String> {
    let len = rng.random_range(1..=2);
    let mut words: Vec<String> = Vec::with_capacity(len);
    while words.len() < len {
        let w = pool.choose(rng).expect("nonempty pool");
        if !avoid.contains(w.as_str()) && !words.contains(w) {
            words.push(w.clone());
        }
    }
    words
}

pub fn generate(spec: &SyntheticSpec) -> Vec<QuestionRecord> {
    let pools = pools(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(1));
    (0..spec.records)
        .map(|i| {
            let topic: Vec<&String> = pools.topics.choose_multiple(&mut rng, 2).collect();
            let answer = phrase(&mut rng, &pools.answers, &HashSet::new());

            let fillers = |rng: &mut ChaCha8Rng, n: usize| -> Vec<String> {
                (0..n)
                    .map(|_| pools.fillers.choose(rng).expect("nonempty").clone())
                    .collect()
            };
            let key = format!(
                "The {} {} {} is {} {}.",
                topic[0],
                topic[1],
                fillers(&mut rng, 1)[0],
                answer.join(" "),
                fillers(&mut rng, 1)[0]
            );
            let mut sentences: Vec<String> = (1..spec.sentences.max(1))
                .map(|_| {
                    let mut words = fillers(&mut rng, 5);
                    words[0] = capitalize(&words[0]);
                    format!("{}.", words.join(" "))
                })
                .collect();
            let at = rng.random_range(0..=sentences.len());
            sentences.insert(at, key);
            let support = sentences.join(" ");

            let mut avoid: HashSet<&str> = support
                .split(|c: char| !c.is_alphanumeric())
                .filter(|w| !w.is_empty())
                .collect();
            let lowered: Vec<String> = avoid.iter().map(|w| w.to_lowercase()).collect();
            avoid.extend(lowered.iter().map(String::as_str));
            let mut options = vec![answer.join(" ")];
            while options.len() < 4 {
                let candidate = phrase(&mut rng, &pools.answers, &avoid).join(" ");
                if !options.contains(&candidate) {
                    options.push(candidate);
                }
            }
            let mut order = [0usize, 1, 2, 3];
            order.shuffle(&mut rng);
            let options: [String; 4] = order.map(|k| options[k].clone());
            let correct_index = order.iter().position(|&k| k == 0).expect("permutation");

            QuestionRecord {
                id: format!("synthetic-{i}"),
                question: format!("What is the {} {}?", topic[0], topic[1]),
                options,
                correct_index,
                support,
            }
        })
        .collect()
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    match c.next() {
        Some(first) => first.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Random Gaussian word vectors for every pseudo-word the spec can emit.
pub fn embedding_table(spec: &SyntheticSpec, dim: usize) -> EmbeddingTable {
    let pools = pools(spec);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(2));
    let entries = pools
        .answers
        .iter()
        .chain(&pools.topics)
        .chain(&pools.fillers)
        .map(|w| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            (w.clone(), v)
        });
    EmbeddingTable::from_entries(dim, entries).expect("consistent dims")
}
