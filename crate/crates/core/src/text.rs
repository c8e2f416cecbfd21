//! Vocabulary construction and fixed-length integer encoding.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::normalize_text;
use crate::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Frequency-ranked token ids. Id 0 is padding, id 1 is unknown.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
    max_size: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    max_size: usize,
    tokens: Vec<String>,
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        Self {
            max_size: v.max_size,
            tokens: v.tokens,
        }
    }
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;

    fn try_from(repr: VocabularyRepr) -> Result<Self> {
        Vocabulary::from_tokens(repr.tokens, repr.max_size)
    }
}

impl Vocabulary {
    /// Keeps the `max_size - 2` most frequent tokens of the normalized
    /// texts, ties broken lexicographically.
    pub fn build<S: AsRef<str>>(texts: &[S], max_size: usize) -> Result<Self> {
        if max_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "vocabulary max_size must be at least 2, got {max_size}"
            )));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for token in normalize_text(text.as_ref()).split_whitespace() {
                *counts.entry(token.to_owned()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

        let mut tokens = vec![PAD_TOKEN.to_owned(), UNK_TOKEN.to_owned()];
        tokens.extend(ranked.into_iter().take(max_size - 2).map(|(t, _)| t));
        Self::from_tokens(tokens, max_size)
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>, max_size: usize) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::InvalidConfig(
                "vocabulary must start with <pad>, <unk>".into(),
            ));
        }
        if tokens.len() > max_size {
            return Err(Error::InvalidConfig(format!(
                "vocabulary has {} tokens, more than max_size {max_size}",
                tokens.len()
            )));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self {
            tokens,
            ids,
            max_size,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Whitespace-tokenizes the normalized text, maps OOV to UNK, keeps
    /// the first `max_len` tokens and right-pads with PAD.
    pub fn encode(&self, text: &str, max_len: usize) -> TokenSequence {
        let mut ids = vec![PAD_ID; max_len];
        let mut length = 0;
        for (slot, token) in ids
            .iter_mut()
            .zip(normalize_text(text).split_whitespace())
        {
            *slot = self.id(token);
            length += 1;
        }
        TokenSequence { ids, length }
    }

    /// Writes `token<TAB>id` lines in id order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = Vec::new();
        for (i, t) in self.tokens.iter().enumerate() {
            writeln!(out, "{t}\t{i}").expect("write to Vec");
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Reads a `token<TAB>id` file. `max_size` defaults to the token count.
    pub fn load(path: impl AsRef<Path>, max_size: Option<usize>) -> Result<Self> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut tokens = Vec::new();
        for (n, line) in raw.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let bad = || Error::InvalidConfig(format!("vocabulary line {}: {line:?}", n + 1));
            let (token, id) = line.split_once('\t').ok_or_else(bad)?;
            let id: usize = id.trim().parse().map_err(|_| bad())?;
            if id != tokens.len() {
                return Err(bad());
            }
            tokens.push(token.to_owned());
        }
        let max = max_size.unwrap_or(tokens.len());
        Self::from_tokens(tokens, max)
    }
}

/// Fixed-length encoded text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    /// Number of leading non-PAD positions.
    pub length: usize,
}

impl TokenSequence {
    pub fn max_len(&self) -> usize {
        self.ids.len()
    }

    /// The non-padded prefix.
    pub fn active(&self) -> &[u32] {
        &self.ids[..self.length]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab(texts: &[&str], max: usize) -> Vocabulary {
        Vocabulary::build(texts, max).unwrap()
    }

    #[test]
    fn frequency_ranking() {
        let v = vocab(&["a a b"], 4);
        assert_eq!(v.tokens(), ["<pad>", "<unk>", "a", "b"]);
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("zzz"), UNK_ID);
    }

    #[test]
    fn reserved_only() {
        let v = vocab(&["a a b"], 2);
        assert_eq!(v.len(), 2);
        assert!(Vocabulary::build(&["a"], 1).is_err());
    }

    #[test]
    fn lexicographic_ties() {
        let v = vocab(&["y x"], 10);
        assert_eq!(v.tokens()[2..], ["x", "y"]);
    }

    #[test]
    fn encode_pads_and_truncates() {
        let v = vocab(&["a a b"], 4);
        let seq = v.encode("a b", 4);
        assert_eq!(seq.ids, vec![2, 3, 0, 0]);
        assert_eq!(seq.length, 2);

        let empty = v.encode("", 4);
        assert_eq!(empty.ids, vec![0; 4]);
        assert_eq!(empty.length, 0);

        let long = v.encode("b a c b a c b a c b", 4);
        assert_eq!(long.ids, vec![3, 2, 1, 3]);
        assert_eq!(long.length, 4);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.tsv");
        let v = vocab(&["the cell wall", "the cell"], 10);
        v.save(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<pad>\t0\n<unk>\t1\ncell\t2\n"));
        assert_eq!(Vocabulary::load(&path, Some(10)).unwrap(), v);
    }

    proptest! {
        #[test]
        fn encode_stays_in_range(
            corpus in proptest::collection::vec("[a-e ]{0,20}", 1..5),
            text in "[a-h ]{0,40}",
            max_size in 2usize..8,
            max_len in 1usize..12,
        ) {
            let v = Vocabulary::build(&corpus, max_size).unwrap();
            let seq = v.encode(&text, max_len);
            let count = normalize_text(&text).split_whitespace().count();
            prop_assert!(seq.ids.iter().all(|&id| (id as usize) < v.len()));
            prop_assert_eq!(seq.length, count.min(max_len));
            prop_assert!(seq.ids[seq.length..].iter().all(|&id| id == PAD_ID));
            prop_assert!(v.len() <= max_size);
        }
    }
}
