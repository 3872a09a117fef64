use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::loss::{
    cerberus_loss_var, cross_entropy_var, kd_loss_var, kd_rr_index, kd_sum_loss_var,
};
use super::{Strategy, StrategyConfig, TeacherLogits, TrainLoopConfig};
use crate::data::{make_batches, EncodedQuestion, PairRef};
use crate::error::{Error, Result};
use crate::model::{Model, PackedBatch, Ranker};
use crate::ranking::RankingReport;
use crate::scoring::evaluate_model;
use crate::tensor::{AdamConfig, AdamState, Tape, Tensor, WarmupLinearSchedule};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DevMetrics {
    pub map: f64,
    pub mrr: f64,
    pub p_at_1: f64,
}

impl From<&RankingReport> for DevMetrics {
    fn from(r: &RankingReport) -> Self {
        DevMetrics {
            map: r.map,
            mrr: r.mrr,
            p_at_1: r.p_at_1,
        }
    }
}

/// One line of a training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogRecord {
    Start {
        strategy: Strategy,
        teachers: Vec<String>,
        alpha: f64,
        tau: f64,
        lr: f64,
        batch_size: usize,
        max_iterations: usize,
        validate_every: usize,
        patience_validations: usize,
        seed: u64,
    },
    /// Dev metrics of the untrained starting point; not a validation.
    Initial { dev: DevMetrics },
    Validation {
        index: usize,
        iteration: usize,
        dev: DevMetrics,
        /// Mean training loss since the previous validation.
        train_loss: f64,
        lr: f64,
        improved: bool,
    },
    End {
        best_validation: usize,
        best_iteration: usize,
        best_dev_map: f64,
        iterations_run: usize,
        stopped_early: bool,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        w.write_all(self.to_jsonl()?.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    pub fn validations(&self) -> impl Iterator<Item = (usize, &DevMetrics)> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Validation { iteration, dev, .. } => Some((*iteration, dev)),
            _ => None,
        })
    }

    pub fn initial(&self) -> Option<&DevMetrics> {
        self.records.iter().find_map(|r| match r {
            LogRecord::Initial { dev } => Some(dev),
            _ => None,
        })
    }

    pub fn best_dev_map(&self) -> Option<f64> {
        self.records.iter().find_map(|r| match r {
            LogRecord::End { best_dev_map, .. } => Some(*best_dev_map),
            _ => None,
        })
    }

    pub fn num_validations(&self) -> usize {
        self.validations().count()
    }
}

/// Head weights used by a per-head run.
fn head_weights(model: &Model, strategy: &StrategyConfig) -> Vec<f64> {
    match (&strategy.head_weights, model) {
        (Some(w), _) => w.clone(),
        (None, Model::Cerberus(c)) => c.head_weights().to_vec(),
        (None, Model::Student(_)) => vec![1.0],
    }
}

/// Check that model, strategy and precomputed teacher logits fit together.
pub fn check_compatible(
    model: &Model,
    strategy: &StrategyConfig,
    teachers: &[TeacherLogits],
    train: &[EncodedQuestion],
) -> Result<()> {
    strategy.validate()?;
    let s = strategy.strategy;
    match (s.is_per_head(), model) {
        (true, Model::Student(_)) => {
            return Err(Error::Config(format!(
                "strategy {} requires a multi-head cerberus model, got a single-head student",
                s.name()
            )))
        }
        (false, Model::Cerberus(_)) => {
            return Err(Error::Config(format!(
                "strategy {} requires a single-head student model, got a cerberus model",
                s.name()
            )))
        }
        _ => {}
    }
    if s.is_per_head() && model.num_heads() != strategy.teachers.len() {
        return Err(Error::Config(format!(
            "{} heads but {} teachers",
            model.num_heads(),
            strategy.teachers.len()
        )));
    }
    if s.is_per_head() && head_weights(model, strategy).len() != model.num_heads() {
        return Err(Error::Config("one head weight per head required".into()));
    }
    if teachers.len() != strategy.teachers.len() {
        return Err(Error::Config(format!(
            "strategy lists {} teachers, {} provided",
            strategy.teachers.len(),
            teachers.len()
        )));
    }
    for (want, t) in strategy.teachers.iter().zip(teachers) {
        if *want != t.teacher_id {
            return Err(Error::Config(format!(
                "teacher order mismatch: expected {want}, got {}",
                t.teacher_id
            )));
        }
        if !t.matches(train) {
            return Err(Error::Contract(format!(
                "teacher {} logits do not cover the training split",
                t.teacher_id
            )));
        }
    }
    Ok(())
}

fn teacher_tensor(t: &TeacherLogits, batch: &[PairRef]) -> Tensor {
    let data = batch
        .iter()
        .flat_map(|p| t.get(p.question, p.candidate))
        .collect();
    Tensor::new(vec![batch.len(), 2], data).expect("batch rows")
}

struct Step<'a> {
    model: &'a Model,
    strategy: &'a StrategyConfig,
    teachers: &'a [TeacherLogits],
    train: &'a [EncodedQuestion],
    lambda: &'a [f64],
    dropout_seed: Option<u64>,
}

impl Step<'_> {
    /// Build the loss for one batch; returns the tape and loss node.
    fn loss(&self, batch: &[PairRef], batch_index: u64) -> Result<(Tape, crate::tensor::Var)> {
        let max_len = self.model.encoder_config().max_sequence_len;
        let packed = PackedBatch::new(
            batch
                .iter()
                .map(|p| self.train[p.question].pair(p.candidate)),
            max_len,
        )?;
        let labels: Vec<u8> = batch.iter().map(|p| p.label).collect();
        let mut tape = match self.dropout_seed {
            Some(seed) => Tape::with_dropout(seed),
            None => Tape::new(),
        };
        let heads = self.model.head_logits(&mut tape, &packed)?;
        let cfg = &self.strategy.distill;
        let ts = || -> Vec<Tensor> {
            self.teachers
                .iter()
                .map(|t| teacher_tensor(t, batch))
                .collect()
        };
        let loss = match self.strategy.strategy {
            Strategy::NoTeacher => cross_entropy_var(&mut tape, heads[0], &labels)?,
            Strategy::SingleTeacher => {
                let t = teacher_tensor(&self.teachers[0], batch);
                kd_loss_var(&mut tape, heads[0], &t, &labels, cfg)?
            }
            Strategy::KdSum => kd_sum_loss_var(&mut tape, heads[0], &ts(), &labels, cfg)?,
            Strategy::KdRr => {
                let i = kd_rr_index(batch_index, self.teachers.len())?;
                let t = teacher_tensor(&self.teachers[i], batch);
                kd_loss_var(&mut tape, heads[0], &t, &labels, cfg)?
            }
            Strategy::PerHeadHeterogeneous | Strategy::PerHeadHomogeneous => {
                cerberus_loss_var(&mut tape, &heads, &ts(), &labels, self.lambda, cfg)?
            }
        };
        Ok((tape, loss))
    }
}

/// Train `model` in place and leave it at the parameters of the best dev MAP
/// validation. The initial dev evaluation is logged but is not a validation.
pub fn train(
    model: &mut Model,
    strategy: &StrategyConfig,
    train: &[EncodedQuestion],
    dev: &[EncodedQuestion],
    teachers: &[TeacherLogits],
    cfg: &TrainLoopConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    if dev.is_empty() {
        return Err(Error::Config("dev split is empty".into()));
    }
    if train.is_empty() {
        return Err(Error::Config("train split is empty".into()));
    }
    check_compatible(model, strategy, teachers, train)?;
    let lambda = head_weights(model, strategy);
    let schedule = WarmupLinearSchedule::new(cfg.warmup_fraction, cfg.max_iterations, cfg.lr)?;
    let mut adam = AdamState::new(
        model.params(),
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let dropout = model.encoder_config().dropout_rate > 0.0;

    let mut log = TrainLog::default();
    log.records.push(LogRecord::Start {
        strategy: strategy.strategy,
        teachers: strategy.teachers.clone(),
        alpha: strategy.distill.alpha,
        tau: strategy.distill.tau,
        lr: cfg.lr,
        batch_size: cfg.batch_size,
        max_iterations: cfg.max_iterations,
        validate_every: cfg.validate_every,
        patience_validations: cfg.patience_validations,
        seed: cfg.seed,
    });
    let initial = evaluate_model(model, dev)?;
    log.records.push(LogRecord::Initial {
        dev: DevMetrics::from(&initial),
    });

    let mut epoch = 0u64;
    let mut batches = make_batches(train, cfg.batch_size, cfg.seed, epoch)?;
    let mut next = 0usize;
    let mut best: Option<(f64, usize, usize, crate::tensor::ParamStore)> = None;
    let mut stale = 0usize;
    let mut loss_sum = 0.0;
    let mut loss_count = 0usize;
    let mut validations = 0usize;
    let mut iterations_run = 0usize;
    let mut stopped_early = false;

    for it in 1..=cfg.max_iterations {
        if next == batches.len() {
            epoch += 1;
            batches = make_batches(train, cfg.batch_size, cfg.seed, epoch)?;
            next = 0;
        }
        let batch = &batches[next];
        next += 1;
        let step = Step {
            model,
            strategy,
            teachers,
            train,
            lambda: &lambda,
            dropout_seed: dropout
                .then(|| cfg.seed ^ (it as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)),
        };
        let (tape, loss) = step.loss(batch, (it - 1) as u64)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NanLoss { iteration: it });
        }
        tape.backward_into(loss, model.params_mut())?;
        drop(tape);
        let lr = schedule.lr(it);
        adam.step(model.params_mut(), lr)?;
        loss_sum += value;
        loss_count += 1;
        iterations_run = it;

        if it % cfg.validate_every == 0 || it == cfg.max_iterations {
            validations += 1;
            let report = evaluate_model(model, dev)?;
            let improved = best.as_ref().is_none_or(|b| report.map > b.0);
            log.records.push(LogRecord::Validation {
                index: validations,
                iteration: it,
                dev: DevMetrics::from(&report),
                train_loss: loss_sum / loss_count as f64,
                lr,
                improved,
            });
            loss_sum = 0.0;
            loss_count = 0;
            if improved {
                best = Some((report.map, validations, it, model.params().clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience_validations {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let (best_map, best_validation, best_iteration, params) =
        best.expect("at least one validation runs");
    model.params_mut().copy_values_from(&params)?;
    log.records.push(LogRecord::End {
        best_validation,
        best_iteration,
        best_dev_map: best_map,
        iterations_run,
        stopped_early,
    });
    Ok(log)
}
