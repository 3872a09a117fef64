//! Answer-sentence-selection datasets: types, JSONL I/O, tokenization,
//! point-wise batching, and a synthetic generator.

mod batch;
mod dataset;
mod encoded;
mod generate;
mod jsonl;
mod tokenize;

pub use batch::{all_pairs, make_batches, Labeled, PairRef};
pub use dataset::{As2Dataset, Candidate, Question, Split};
pub use encoded::{encode_questions, EncodedCandidate, EncodedQuestion};
pub use generate::{generate, GeneratorConfig};
pub use jsonl::{load_dataset, load_split, save_dataset, save_split, split_path};
pub use tokenize::{Vocabulary, BOS, EOS, NUM_RESERVED, PAD, SEP, UNK};
