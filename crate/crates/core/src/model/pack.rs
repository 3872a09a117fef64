use crate::data::{Vocabulary, BOS, EOS, SEP};
use crate::error::{Error, Result};
use crate::tensor::Segment;

/// Question/answer token pairs laid out as `[BOS] q [SEP] a [EOS]` sequences,
/// concatenated row-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedBatch {
    pub tokens: Vec<usize>,
    pub positions: Vec<usize>,
    pub segments: Vec<Segment>,
    /// Number of pairs whose answer was cut to fit `max_len`.
    pub truncated: usize,
}

impl PackedBatch {
    pub fn new<'a, I>(pairs: I, max_len: usize) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [usize], &'a [usize])>,
    {
        let mut batch = PackedBatch {
            tokens: Vec::new(),
            positions: Vec::new(),
            segments: Vec::new(),
            truncated: 0,
        };
        for (q, a) in pairs {
            batch.push(q, a, max_len)?;
        }
        if batch.segments.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        Ok(batch)
    }

    fn push(&mut self, question: &[usize], answer: &[usize], max_len: usize) -> Result<()> {
        let fixed = question.len() + 3;
        if fixed > max_len {
            return Err(Error::Contract(format!(
                "question of {} tokens cannot fit in {max_len} positions",
                question.len()
            )));
        }
        let keep = answer.len().min(max_len - fixed);
        if keep < answer.len() {
            self.truncated += 1;
        }
        let start = self.tokens.len();
        self.tokens.push(BOS);
        self.tokens.extend_from_slice(question);
        self.tokens.push(SEP);
        self.tokens.extend_from_slice(&answer[..keep]);
        self.tokens.push(EOS);
        let len = self.tokens.len() - start;
        self.positions.extend(0..len);
        self.segments.push(Segment { start, len });
        Ok(())
    }

    pub fn num_pairs(&self) -> usize {
        self.segments.len()
    }

    /// Row index of each sequence's first position.
    pub fn first_rows(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.start).collect()
    }

    /// Tokenize and pack text pairs.
    pub fn from_text(vocab: &Vocabulary, pairs: &[(&str, &str)], max_len: usize) -> Result<Self> {
        let toks: Vec<(Vec<usize>, Vec<usize>)> = pairs
            .iter()
            .map(|(q, a)| (vocab.tokenize(q), vocab.tokenize(a)))
            .collect();
        Self::new(
            toks.iter().map(|(q, a)| (q.as_slice(), a.as_slice())),
            max_len,
        )
    }
}
