use super::layers::{run_blocks, Block, Embedding, Projection};
use super::{CerberusConfig, EncoderConfig, PackedBatch, PoolingSpace, Ranker, StudentModel};
use crate::error::Result;
use crate::tensor::{NamedTensorArchive, ParamStore, Tape, Var};

#[derive(Clone, Debug)]
struct Head {
    blocks: Vec<Block>,
    proj: Projection,
}

/// Shared embedding and body followed by `k` independent ranking heads.
#[derive(Clone, Debug)]
pub struct CerberusModel {
    encoder: EncoderConfig,
    config: CerberusConfig,
    store: ParamStore,
    embed: Embedding,
    body: Vec<Block>,
    heads: Vec<Head>,
}

/// Build a Cerberus model from a trained single-head model. Blocks `[0, b)`
/// become the body; every head starts as a copy of blocks `[b, n)` and of the
/// source projection. The source is not modified.
pub fn split_into_cerberus(source: &StudentModel, config: CerberusConfig) -> Result<CerberusModel> {
    let encoder = source.encoder_config().clone();
    config.validate(encoder.num_layers)?;
    let src = source.params();
    let (embed, blocks, proj) = source.parts();
    let mut store = ParamStore::new();
    let embed = Embedding {
        token: store.insert("embed.token", src.value(embed.token).clone())?,
        position: store.insert("embed.position", src.value(embed.position).clone())?,
    };
    let b = config.body_depth;
    let body = blocks[..b]
        .iter()
        .enumerate()
        .map(|(i, blk)| blk.copy_to(src, &mut store, &format!("body.{i}")))
        .collect::<Result<Vec<_>>>()?;
    let mut heads = Vec::with_capacity(config.num_heads);
    for j in 0..config.num_heads {
        let hb = blocks[b..]
            .iter()
            .enumerate()
            .map(|(i, blk)| blk.copy_to(src, &mut store, &format!("head.{j}.{i}")))
            .collect::<Result<Vec<_>>>()?;
        let proj = proj.copy_to(src, &mut store, &format!("head.{j}.proj"))?;
        heads.push(Head { blocks: hb, proj });
    }
    Ok(CerberusModel {
        encoder,
        config,
        store,
        embed,
        body,
        heads,
    })
}

impl CerberusModel {
    pub(crate) fn from_store(
        encoder: EncoderConfig,
        config: CerberusConfig,
        store: ParamStore,
    ) -> Result<Self> {
        encoder.validate()?;
        config.validate(encoder.num_layers)?;
        let embed = Embedding::lookup(&store)?;
        let body = (0..config.body_depth)
            .map(|i| Block::lookup(&store, &format!("body.{i}")))
            .collect::<Result<Vec<_>>>()?;
        let heads = (0..config.num_heads)
            .map(|j| {
                let blocks = (0..config.head_depth)
                    .map(|i| Block::lookup(&store, &format!("head.{j}.{i}")))
                    .collect::<Result<Vec<_>>>()?;
                let proj = Projection::lookup(&store, &format!("head.{j}.proj"))?;
                Ok(Head { blocks, proj })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CerberusModel {
            encoder,
            config,
            store,
            embed,
            body,
            heads,
        })
    }

    pub fn cerberus_config(&self) -> &CerberusConfig {
        &self.config
    }

    pub fn head_weights(&self) -> &[f64] {
        &self.config.head_weights
    }

    pub fn set_pooling(&mut self, pooling: PoolingSpace) {
        self.config.pooling = pooling;
    }

    /// Parameter names that belong to head `j`.
    pub fn is_head_param(name: &str, j: usize) -> bool {
        name.starts_with(&format!("head.{j}."))
    }
}

impl Ranker for CerberusModel {
    fn encoder_config(&self) -> &EncoderConfig {
        &self.encoder
    }

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn num_heads(&self) -> usize {
        self.heads.len()
    }

    fn pooling(&self) -> PoolingSpace {
        self.config.pooling
    }

    fn head_logits(&self, tape: &mut Tape, batch: &PackedBatch) -> Result<Vec<Var>> {
        let cfg = &self.encoder;
        let x = self
            .embed
            .forward(tape, &self.store, batch, cfg.dropout_rate)?;
        let shared = run_blocks(tape, &self.store, x, &self.body, batch, cfg, 1)?;
        let first_head_layer = self.body.len() + 1;
        self.heads
            .iter()
            .map(|head| {
                let h = run_blocks(
                    tape,
                    &self.store,
                    shared,
                    &head.blocks,
                    batch,
                    cfg,
                    first_head_layer,
                )?;
                head.proj.forward(tape, &self.store, h, batch)
            })
            .collect()
    }

    fn to_archive(&self) -> NamedTensorArchive {
        let mut archive = NamedTensorArchive::default();
        archive.metadata.insert("kind".into(), "cerberus".into());
        archive.metadata.insert(
            "encoder".into(),
            serde_json::to_value(&self.encoder).expect("config serializes"),
        );
        archive.metadata.insert(
            "cerberus".into(),
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
