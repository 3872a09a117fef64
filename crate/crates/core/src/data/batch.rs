use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{EncodedQuestion, Question};
use crate::error::{Error, Result};

/// Anything that carries an ordered list of candidate labels.
pub trait Labeled {
    fn candidate_labels(&self) -> Vec<u8>;
}

impl Labeled for Question {
    fn candidate_labels(&self) -> Vec<u8> {
        self.labels()
    }
}

impl Labeled for EncodedQuestion {
    fn candidate_labels(&self) -> Vec<u8> {
        self.labels()
    }
}

/// One point-wise training example: a (question, candidate) pair and its label.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PairRef {
    pub question: usize,
    pub candidate: usize,
    pub label: u8,
}

pub fn all_pairs<Q: Labeled>(questions: &[Q]) -> Vec<PairRef> {
    questions
        .iter()
        .enumerate()
        .flat_map(|(qi, q)| {
            q.candidate_labels()
                .into_iter()
                .enumerate()
                .map(move |(ci, label)| PairRef {
                    question: qi,
                    candidate: ci,
                    label,
                })
        })
        .collect()
}

/// Shuffle every pair of the split with a stream determined by
/// `(seed, epoch)` and cut it into batches; the last batch may be short.
pub fn make_batches<Q: Labeled>(
    questions: &[Q],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<PairRef>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut pairs = all_pairs(questions);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    pairs.shuffle(&mut rng);
    Ok(pairs.chunks(batch_size).map(<[PairRef]>::to_vec).collect())
}
