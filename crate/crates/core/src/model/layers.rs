use rand::Rng;
use rand_distr::StandardNormal;

use super::{EncoderConfig, PackedBatch};
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

/// Embeddings start at unit scale and weight matrices at `1/sqrt(fan_in)`,
/// so first-layer attention logits are O(1) without an embedding norm.
const EMBED_STD: f64 = 1.0;

fn weight_std(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

fn normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Block parameter suffixes in checkpoint order.
pub(crate) const BLOCK_PARAMS: [&str; 16] = [
    "attn.q.weight",
    "attn.q.bias",
    "attn.k.weight",
    "attn.k.bias",
    "attn.v.weight",
    "attn.v.bias",
    "attn.out.weight",
    "attn.out.bias",
    "ln1.gain",
    "ln1.bias",
    "ff.in.weight",
    "ff.in.bias",
    "ff.out.weight",
    "ff.out.bias",
    "ln2.gain",
    "ln2.bias",
];

fn block_param_init(cfg: &EncoderConfig, suffix: &str, rng: &mut impl Rng) -> Tensor {
    let (d, f) = (cfg.hidden_dim, cfg.feedforward_dim);
    match suffix {
        "ff.in.weight" => normal(&[d, f], weight_std(d), rng),
        "ff.in.bias" => Tensor::zeros(&[f]),
        "ff.out.weight" => normal(&[f, d], weight_std(f), rng),
        s if s.ends_with(".gain") => Tensor::full(&[d], 1.0),
        s if s.ends_with(".weight") => normal(&[d, d], weight_std(d), rng),
        _ => Tensor::zeros(&[d]),
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct Embedding {
    pub token: ParamId,
    pub position: ParamId,
}

impl Embedding {
    pub fn init(store: &mut ParamStore, cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        let d = cfg.hidden_dim;
        Ok(Embedding {
            token: store.insert("embed.token", normal(&[cfg.vocab_size, d], EMBED_STD, rng))?,
            position: store.insert(
                "embed.position",
                normal(&[cfg.max_sequence_len, d], EMBED_STD, rng),
            )?,
        })
    }

    pub fn lookup(store: &ParamStore) -> Result<Self> {
        Ok(Embedding {
            token: store.id("embed.token")?,
            position: store.id("embed.position")?,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &PackedBatch,
        dropout: f64,
    ) -> Result<Var> {
        let tok = tape.param(store, self.token);
        let pos = tape.param(store, self.position);
        let x = tape.gather(tok, &batch.tokens)?;
        let p = tape.gather(pos, &batch.positions)?;
        let x = tape.add(x, p)?;
        tape.dropout(x, dropout)
    }
}

/// Post-norm transformer encoder block.
#[derive(Clone, Debug)]
pub(crate) struct Block {
    ids: [ParamId; 16],
}

impl Block {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut ids = Vec::with_capacity(BLOCK_PARAMS.len());
        for suffix in BLOCK_PARAMS {
            let t = block_param_init(cfg, suffix, rng);
            ids.push(store.insert(format!("{prefix}.{suffix}"), t)?);
        }
        Ok(Block {
            ids: ids.try_into().expect("16 ids"),
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        let ids: Result<Vec<ParamId>> = BLOCK_PARAMS
            .iter()
            .map(|s| store.id(&format!("{prefix}.{s}")))
            .collect();
        Ok(Block {
            ids: ids?.try_into().expect("16 ids"),
        })
    }

    /// Copy this block's tensors into `dst` under a new prefix.
    pub fn copy_to(&self, src: &ParamStore, dst: &mut ParamStore, prefix: &str) -> Result<Block> {
        let mut ids = Vec::with_capacity(BLOCK_PARAMS.len());
        for (suffix, id) in BLOCK_PARAMS.iter().zip(self.ids) {
            ids.push(dst.insert(format!("{prefix}.{suffix}"), src.value(id).clone())?);
        }
        Ok(Block {
            ids: ids.try_into().expect("16 ids"),
        })
    }

    fn linear(tape: &mut Tape, store: &ParamStore, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let w = tape.param(store, w);
        let b = tape.param(store, b);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        batch: &PackedBatch,
        cfg: &EncoderConfig,
    ) -> Result<Var> {
        let [qw, qb, kw, kb, vw, vb, ow, ob, g1, b1, fw, fb, gw, gb, g2, b2] = self.ids;
        let q = Self::linear(tape, store, x, qw, qb)?;
        let k = Self::linear(tape, store, x, kw, kb)?;
        let v = Self::linear(tape, store, x, vw, vb)?;
        let a = tape.attention(q, k, v, &batch.segments, cfg.num_attention_heads)?;
        let a = Self::linear(tape, store, a, ow, ob)?;
        let a = tape.dropout(a, cfg.dropout_rate)?;
        let x = tape.add(x, a)?;
        let (g1, b1) = (tape.param(store, g1), tape.param(store, b1));
        let x = tape.layer_norm(x, g1, b1, cfg.layer_norm_eps)?;
        let h = Self::linear(tape, store, x, fw, fb)?;
        let h = tape.gelu(h);
        let h = Self::linear(tape, store, h, gw, gb)?;
        let h = tape.dropout(h, cfg.dropout_rate)?;
        let x = tape.add(x, h)?;
        let (g2, b2) = (tape.param(store, g2), tape.param(store, b2));
        tape.layer_norm(x, g2, b2, cfg.layer_norm_eps)
    }
}

/// Run `blocks` in order; `first_layer` numbers the first block (1-based) for
/// error reports.
pub(crate) fn run_blocks(
    tape: &mut Tape,
    store: &ParamStore,
    mut x: Var,
    blocks: &[Block],
    batch: &PackedBatch,
    cfg: &EncoderConfig,
    first_layer: usize,
) -> Result<Var> {
    for (i, block) in blocks.iter().enumerate() {
        x = block.forward(tape, store, x, batch, cfg)?;
        if !tape.value(x).all_finite() {
            return Err(Error::NonFiniteActivation {
                layer: first_layer + i,
            });
        }
    }
    Ok(x)
}

/// Two-class output projection applied to first-position representations.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Projection {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Projection {
    pub fn init(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &EncoderConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Projection {
            weight: store.insert(
                format!("{prefix}.weight"),
                normal(&[cfg.hidden_dim, 2], weight_std(cfg.hidden_dim), rng),
            )?,
            bias: store.insert(format!("{prefix}.bias"), Tensor::zeros(&[2]))?,
        })
    }

    pub fn lookup(store: &ParamStore, prefix: &str) -> Result<Self> {
        Ok(Projection {
            weight: store.id(&format!("{prefix}.weight"))?,
            bias: store.id(&format!("{prefix}.bias"))?,
        })
    }

    pub fn copy_to(&self, src: &ParamStore, dst: &mut ParamStore, prefix: &str) -> Result<Self> {
        Ok(Projection {
            weight: dst.insert(format!("{prefix}.weight"), src.value(self.weight).clone())?,
            bias: dst.insert(format!("{prefix}.bias"), src.value(self.bias).clone())?,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        batch: &PackedBatch,
    ) -> Result<Var> {
        let cls = tape.select_rows(x, &batch.first_rows())?;
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(cls, w)?;
        tape.add_row(y, b)
    }
}
