use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{run_blocks, Block, Embedding, Projection};
use super::{EncoderConfig, PackedBatch, PoolingSpace, Ranker};
use crate::error::Result;
use crate::tensor::{NamedTensorArchive, ParamStore, Tape, Tensor, Var};

/// Single-output ranker: embeddings, `n` encoder blocks, one 2-class
/// projection on the first position.
#[derive(Clone, Debug)]
pub struct StudentModel {
    config: EncoderConfig,
    store: ParamStore,
    embed: Embedding,
    blocks: Vec<Block>,
    proj: Projection,
}

impl StudentModel {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let embed = Embedding::init(&mut store, &config, &mut rng)?;
        let blocks = (0..config.num_layers)
            .map(|i| Block::init(&mut store, &format!("block.{i}"), &config, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let proj = Projection::init(&mut store, "proj", &config, &mut rng)?;
        Ok(StudentModel {
            config,
            store,
            embed,
            blocks,
            proj,
        })
    }

    pub(crate) fn from_store(config: EncoderConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let embed = Embedding::lookup(&store)?;
        let blocks = (0..config.num_layers)
            .map(|i| Block::lookup(&store, &format!("block.{i}")))
            .collect::<Result<Vec<_>>>()?;
        let proj = Projection::lookup(&store, "proj")?;
        Ok(StudentModel {
            config,
            store,
            embed,
            blocks,
            proj,
        })
    }

    pub(crate) fn parts(&self) -> (&Embedding, &[Block], &Projection) {
        (&self.embed, &self.blocks, &self.proj)
    }

    /// Final-layer hidden states for every packed row.
    pub fn hidden(&self, tape: &mut Tape, batch: &PackedBatch) -> Result<Var> {
        let x = self
            .embed
            .forward(tape, &self.store, batch, self.config.dropout_rate)?;
        run_blocks(tape, &self.store, x, &self.blocks, batch, &self.config, 1)
    }

    /// First-position representation of one packed pair, shape `(d,)`.
    pub fn encode_pair(&self, question: &[usize], answer: &[usize]) -> Result<(Tensor, usize)> {
        let batch = PackedBatch::new([(question, answer)], self.config.max_sequence_len)?;
        let mut tape = Tape::new();
        let h = self.hidden(&mut tape, &batch)?;
        let first = tape.select_rows(h, &[0])?;
        let rep = tape
            .value(first)
            .clone()
            .reshape(vec![self.config.hidden_dim])?;
        Ok((rep, batch.truncated))
    }
}

impl Ranker for StudentModel {
    fn encoder_config(&self) -> &EncoderConfig {
        &self.config
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn num_heads(&self) -> usize {
        1
    }

    fn pooling(&self) -> PoolingSpace {
        PoolingSpace::LogitMean
    }

    fn head_logits(&self, tape: &mut Tape, batch: &PackedBatch) -> Result<Vec<Var>> {
        let h = self.hidden(tape, batch)?;
        Ok(vec![self.proj.forward(tape, &self.store, h, batch)?])
    }

    fn to_archive(&self) -> NamedTensorArchive {
        let mut archive = NamedTensorArchive::default();
        archive.metadata.insert("kind".into(), "student".into());
        archive.metadata.insert(
            "encoder".into(),
            serde_json::to_value(&self.config).expect("config serializes"),
        );
        archive.tensors = self
            .store
            .iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        archive
    }
}
