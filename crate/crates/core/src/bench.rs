//! Parameter accounting and forward-pass latency measurement.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::NUM_RESERVED;
use crate::error::{Error, Result};
use crate::model::{forward_batch, PackedBatch, Ranker};

pub fn count_params<R: Ranker + ?Sized>(model: &R) -> usize {
    model.param_count()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatencyConfig {
    pub batch_size: usize,
    pub repetitions: usize,
    pub warmup_reps: usize,
}

impl Default for LatencyConfig {
    fn default() -> Self {
        LatencyConfig {
            batch_size: 128,
            repetitions: 30,
            warmup_reps: 10,
        }
    }
}

impl LatencyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 2 {
            return Err(Error::Config("repetitions must be >= 2".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Wall-clock latency of one forward pass over a batch. Times are in
/// microseconds, per batch unless the field says per example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub model_id: String,
    pub batch_size: usize,
    pub repetitions: usize,
    pub warmup_reps: usize,
    pub per_rep_us: Vec<f64>,
    pub mean_us: f64,
    /// Sample standard deviation (n - 1).
    pub std_us: f64,
    pub mean_us_per_example: f64,
    pub std_us_per_example: f64,
    pub param_count: Option<usize>,
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Time `f` after `warmup_reps` untimed calls.
pub fn measure<F: FnMut() -> Result<()>>(
    model_id: &str,
    cfg: &LatencyConfig,
    mut f: F,
) -> Result<LatencyReport> {
    cfg.validate()?;
    for _ in 0..cfg.warmup_reps {
        f()?;
    }
    let mut per_rep_us = Vec::with_capacity(cfg.repetitions);
    for _ in 0..cfg.repetitions {
        let t = Instant::now();
        f()?;
        per_rep_us.push(t.elapsed().as_secs_f64() * 1e6);
    }
    let (mean_us, std_us) = mean_std(&per_rep_us);
    let b = cfg.batch_size as f64;
    Ok(LatencyReport {
        model_id: model_id.to_string(),
        batch_size: cfg.batch_size,
        repetitions: cfg.repetitions,
        warmup_reps: cfg.warmup_reps,
        per_rep_us,
        mean_us,
        std_us,
        mean_us_per_example: mean_us / b,
        std_us_per_example: std_us / b,
        param_count: None,
    })
}

/// A pre-tokenized batch of random pairs; token ids avoid the reserved range.
pub fn synthetic_batch(
    vocab_size: usize,
    batch_size: usize,
    question_len: usize,
    answer_len: usize,
    max_len: usize,
    seed: u64,
) -> Result<PackedBatch> {
    if vocab_size <= NUM_RESERVED {
        return Err(Error::Config("vocabulary has no content words".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |n: usize| -> Vec<usize> {
        (0..n)
            .map(|_| rng.gen_range(NUM_RESERVED..vocab_size))
            .collect()
    };
    let pairs: Vec<(Vec<usize>, Vec<usize>)> = (0..batch_size)
        .map(|_| (draw(question_len), draw(answer_len)))
        .collect();
    PackedBatch::new(
        pairs.iter().map(|(q, a)| (q.as_slice(), a.as_slice())),
        max_len,
    )
}

pub fn measure_model<R: Ranker + ?Sized>(
    model_id: &str,
    model: &R,
    batch: &PackedBatch,
    cfg: &LatencyConfig,
) -> Result<LatencyReport> {
    let mut r = measure(model_id, cfg, || forward_batch(model, batch).map(drop))?;
    r.param_count = Some(count_params(model));
    Ok(r)
}

/// Independent forward passes of every member, as a score-level ensemble runs.
pub fn measure_ensemble<R: Ranker>(
    model_id: &str,
    members: &[&R],
    batch: &PackedBatch,
    cfg: &LatencyConfig,
) -> Result<LatencyReport> {
    let mut r = measure(model_id, cfg, || {
        for m in members {
            forward_batch(*m, batch)?;
        }
        Ok(())
    })?;
    r.param_count = Some(members.iter().map(|m| count_params(*m)).sum());
    Ok(r)
}

/// Append one JSON line per report; never truncates.
pub fn append_jsonl(path: &Path, reports: &[LatencyReport]) -> Result<()> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    for r in reports {
        let mut line = serde_json::to_string(r)?;
        line.push('\n');
        f.write_all(line.as_bytes())?;
    }
    Ok(())
}

pub fn to_csv(reports: &[LatencyReport]) -> String {
    let mut out = String::from(
        "model_id,batch_size,repetitions,mean_us,std_us,mean_us_per_example,std_us_per_example,param_count\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.model_id,
            r.batch_size,
            r.repetitions,
            r.mean_us,
            r.std_us,
            r.mean_us_per_example,
            r.std_us_per_example,
            r.param_count.map(|p| p.to_string()).unwrap_or_default()
        ));
    }
    out
}
