use std::collections::{BTreeSet, HashMap};

use super::Question;

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const SEP: usize = 2;
pub const EOS: usize = 3;
pub const UNK: usize = 4;
pub const NUM_RESERVED: usize = 5;

/// Closed word-level vocabulary. Ids `0..5` are reserved for
/// PAD/BOS/SEP/EOS/UNK; words follow in sorted order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words<I: IntoIterator<Item = S>, S: AsRef<str>>(words: I) -> Self {
        let sorted: BTreeSet<String> = words
            .into_iter()
            .map(|w| w.as_ref().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        let words: Vec<String> = sorted.into_iter().collect();
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i + NUM_RESERVED))
            .collect();
        Vocabulary { words, index }
    }

    pub fn from_questions<'a>(questions: impl Iterator<Item = &'a Question>) -> Self {
        let mut words = Vec::new();
        for q in questions {
            words.extend(q.text.split_whitespace().map(str::to_owned));
            for c in &q.candidates {
                words.extend(c.text.split_whitespace().map(str::to_owned));
            }
        }
        Self::from_words(words)
    }

    /// Number of ids including the reserved ones.
    pub fn size(&self) -> usize {
        self.words.len() + NUM_RESERVED
    }

    pub fn id(&self, word: &str) -> usize {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    /// Whitespace split, lowercase, unknown words map to [`UNK`].
    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        text.split_whitespace()
            .map(|w| self.id(&w.to_lowercase()))
            .collect()
    }
}
