//! Transformer encoder rankers: the single-head student and the multi-head
//! Cerberus model, with pooled inference and checkpoint I/O.

mod cerberus;
mod config;
mod layers;
mod pack;
mod student;

use std::path::Path;

pub use cerberus::{split_into_cerberus, CerberusModel};
pub use config::{CerberusConfig, EncoderConfig, PoolingSpace};
pub use pack::PackedBatch;
pub use student::StudentModel;

use crate::data::{EncodedQuestion, Vocabulary};
use crate::error::{Error, Result};
use crate::tensor::{read_archive, write_archive, NamedTensorArchive, ParamStore, Tape, Var};

/// Pairs per forward pass when scoring whole splits.
pub const SCORE_CHUNK: usize = 128;

/// Anything that maps packed (question, answer) pairs to per-head 2-class
/// logits.
pub trait Ranker {
    fn encoder_config(&self) -> &EncoderConfig;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn num_heads(&self) -> usize;
    fn pooling(&self) -> PoolingSpace;
    /// One `(pairs, 2)` logit node per head.
    fn head_logits(&self, tape: &mut Tape, batch: &PackedBatch) -> Result<Vec<Var>>;
    fn to_archive(&self) -> NamedTensorArchive;

    fn param_count(&self) -> usize {
        self.params().numel()
    }

    fn save(&self, path: &Path) -> Result<()> {
        write_archive(&self.to_archive(), path)
    }
}

/// Forward output for one pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PairOutput {
    pub per_head: Vec<[f64; 2]>,
    /// Mean of head logits, or of head probabilities, per the pooling space.
    pub pooled: [f64; 2],
    /// Probability of class 1.
    pub score: f64,
}

pub fn softmax2(z: [f64; 2]) -> [f64; 2] {
    let m = z[0].max(z[1]);
    let (a, b) = ((z[0] - m).exp(), (z[1] - m).exp());
    [a / (a + b), b / (a + b)]
}

/// Mean over heads. Values are visited in ascending order so the result does
/// not depend on head order, and a running mean returns `z` exactly when every
/// head emits `z`.
pub fn pool(per_head: &[[f64; 2]], space: PoolingSpace) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (c, slot) in out.iter_mut().enumerate() {
        let mut vals: Vec<f64> = per_head
            .iter()
            .map(|z| match space {
                PoolingSpace::LogitMean => z[c],
                PoolingSpace::ProbabilityMean => softmax2(*z)[c],
            })
            .collect();
        vals.sort_by(f64::total_cmp);
        *slot = vals
            .iter()
            .enumerate()
            .fold(0.0, |m, (i, &x)| m + (x - m) / (i + 1) as f64);
    }
    out
}

pub fn pooled_score(pooled: [f64; 2], space: PoolingSpace) -> f64 {
    match space {
        PoolingSpace::LogitMean => softmax2(pooled)[1],
        PoolingSpace::ProbabilityMean => pooled[1],
    }
}

fn outputs_from_heads(tape: &Tape, heads: &[Var], space: PoolingSpace) -> Vec<PairOutput> {
    let rows = tape.value(heads[0]).rows();
    (0..rows)
        .map(|r| {
            let per_head: Vec<[f64; 2]> = heads
                .iter()
                .map(|&h| {
                    let row = tape.value(h).row(r);
                    [row[0], row[1]]
                })
                .collect();
            let pooled = pool(&per_head, space);
            PairOutput {
                score: pooled_score(pooled, space),
                per_head,
                pooled,
            }
        })
        .collect()
}

pub fn forward_batch<R: Ranker + ?Sized>(
    model: &R,
    batch: &PackedBatch,
) -> Result<Vec<PairOutput>> {
    let mut tape = Tape::new();
    let heads = model.head_logits(&mut tape, batch)?;
    Ok(outputs_from_heads(&tape, &heads, model.pooling()))
}

/// Forward arbitrary many token pairs in chunks of [`SCORE_CHUNK`].
pub fn forward_pairs<R: Ranker + ?Sized>(
    model: &R,
    pairs: &[(&[usize], &[usize])],
) -> Result<Vec<PairOutput>> {
    let max_len = model.encoder_config().max_sequence_len;
    let mut out = Vec::with_capacity(pairs.len());
    for chunk in pairs.chunks(SCORE_CHUNK) {
        let batch = PackedBatch::new(chunk.iter().copied(), max_len)?;
        out.extend(forward_batch(model, &batch)?);
    }
    Ok(out)
}

/// Per-question forward outputs for a whole encoded split.
pub fn forward_questions<R: Ranker + ?Sized>(
    model: &R,
    questions: &[EncodedQuestion],
) -> Result<Vec<Vec<PairOutput>>> {
    let pairs: Vec<(&[usize], &[usize])> = questions
        .iter()
        .flat_map(|q| (0..q.candidates.len()).map(move |c| q.pair(c)))
        .collect();
    let mut flat = forward_pairs(model, &pairs)?.into_iter();
    Ok(questions
        .iter()
        .map(|q| flat.by_ref().take(q.candidates.len()).collect())
        .collect())
}

/// Point-wise p(correct) for each candidate answer of `question`.
pub fn score_candidates<R: Ranker + ?Sized, S: AsRef<str>>(
    model: &R,
    vocab: &Vocabulary,
    question: &str,
    candidates: &[S],
) -> Result<Vec<f64>> {
    if candidates.is_empty() {
        return Err(Error::Contract("no candidates to score".into()));
    }
    let q = vocab.tokenize(question);
    let toks: Vec<Vec<usize>> = candidates
        .iter()
        .map(|c| vocab.tokenize(c.as_ref()))
        .collect();
    let pairs: Vec<(&[usize], &[usize])> =
        toks.iter().map(|a| (q.as_slice(), a.as_slice())).collect();
    Ok(forward_pairs(model, &pairs)?
        .into_iter()
        .map(|o| o.score)
        .collect())
}

/// A checkpoint of either architecture.
#[derive(Clone, Debug)]
pub enum Model {
    Student(StudentModel),
    Cerberus(CerberusModel),
}

impl Model {
    pub fn kind(&self) -> &'static str {
        match self {
            Model::Student(_) => "student",
            Model::Cerberus(_) => "cerberus",
        }
    }

    fn inner(&self) -> &dyn Ranker {
        match self {
            Model::Student(m) => m,
            Model::Cerberus(m) => m,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Ranker {
        match self {
            Model::Student(m) => m,
            Model::Cerberus(m) => m,
        }
    }

    pub fn from_archive(archive: NamedTensorArchive) -> Result<Self> {
        let meta = |key: &str| {
            archive
                .metadata
                .get(key)
                .cloned()
                .ok_or_else(|| Error::Archive(format!("checkpoint metadata lacks `{key}`")))
        };
        let kind = meta("kind")?;
        let encoder: EncoderConfig = serde_json::from_value(meta("encoder")?)?;
        let cerberus = match kind.as_str() {
            Some("student") => None,
            Some("cerberus") => Some(serde_json::from_value::<CerberusConfig>(meta("cerberus")?)?),
            _ => return Err(Error::Archive(format!("unknown model kind {kind}"))),
        };
        let mut store = ParamStore::new();
        for (name, t) in archive.tensors {
            store.insert(name, t)?;
        }
        let expected = match &cerberus {
            None => encoder.student_params(),
            Some(c) => c.param_count(&encoder),
        };
        if store.numel() != expected {
            return Err(Error::Archive(format!(
                "checkpoint holds {} parameters, configuration implies {expected}",
                store.numel()
            )));
        }
        Ok(match cerberus {
            None => Model::Student(StudentModel::from_store(encoder, store)?),
            Some(c) => Model::Cerberus(CerberusModel::from_store(encoder, c, store)?),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(read_archive(path)?)
    }
}

impl Ranker for Model {
    fn encoder_config(&self) -> &EncoderConfig {
        self.inner().encoder_config()
    }

    fn params(&self) -> &ParamStore {
        self.inner().params()
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        self.inner_mut().params_mut()
    }

    fn num_heads(&self) -> usize {
        self.inner().num_heads()
    }

    fn pooling(&self) -> PoolingSpace {
        self.inner().pooling()
    }

    fn head_logits(&self, tape: &mut Tape, batch: &PackedBatch) -> Result<Vec<Var>> {
        self.inner().head_logits(tape, batch)
    }

    fn to_archive(&self) -> NamedTensorArchive {
        self.inner().to_archive()
    }
}

impl From<StudentModel> for Model {
    fn from(m: StudentModel) -> Self {
        Model::Student(m)
    }
}

impl From<CerberusModel> for Model {
    fn from(m: CerberusModel) -> Self {
        Model::Cerberus(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_examples() {
        let heads = [[2.0, 0.0], [0.0, 2.0], [1.0, 1.0]];
        assert_eq!(pool(&heads, PoolingSpace::LogitMean), [1.0, 1.0]);
        let z = [[0.3, -1.7]; 4];
        assert_eq!(pool(&z, PoolingSpace::LogitMean), [0.3, -1.7]);
        let p = pool(&heads, PoolingSpace::ProbabilityMean);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-15);
        assert!((p[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax2_is_stable() {
        let p = softmax2([1e308, -1e308]);
        assert_eq!(p, [1.0, 0.0]);
        assert_eq!(softmax2([0.0, 0.0]), [0.5, 0.5]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn pooling_is_permutation_invariant_bit_exact(
                heads in prop::collection::vec(prop::array::uniform2(-50.0f64..50.0), 1..8),
                seed in any::<u64>(),
            ) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let mut shuffled = heads.clone();
                shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                for space in [PoolingSpace::LogitMean, PoolingSpace::ProbabilityMean] {
                    let a = pool(&heads, space);
                    let b = pool(&shuffled, space);
                    prop_assert_eq!(a[0].to_bits(), b[0].to_bits());
                    prop_assert_eq!(a[1].to_bits(), b[1].to_bits());
                }
            }
        }
    }
}
