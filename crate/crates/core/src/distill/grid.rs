use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{
    train, DistillConfig, DistillGrids, StrategyConfig, TeacherLogits, TrainLog, TrainLoopConfig,
};
use crate::data::EncodedQuestion;
use crate::error::{Error, Result};
use crate::model::Model;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperConfig {
    pub alpha: f64,
    pub tau: f64,
    pub lr: f64,
    pub batch_size: usize,
}

impl HyperConfig {
    /// Lexicographic order on `(alpha, tau, lr, batch_size)`.
    pub fn lex_cmp(&self, other: &Self) -> Ordering {
        self.alpha
            .total_cmp(&other.alpha)
            .then(self.tau.total_cmp(&other.tau))
            .then(self.lr.total_cmp(&other.lr))
            .then(self.batch_size.cmp(&other.batch_size))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub config: HyperConfig,
    pub best_dev_map: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridReport {
    pub entries: Vec<GridEntry>,
    pub best: HyperConfig,
    pub best_dev_map: f64,
}

/// Highest dev MAP; ties go to the lexicographically smallest config.
pub fn select_best(entries: &[GridEntry]) -> Option<&GridEntry> {
    entries.iter().min_by(|a, b| {
        b.best_dev_map
            .total_cmp(&a.best_dev_map)
            .then(a.config.lex_cmp(&b.config))
    })
}

pub fn grid_configs(grids: &DistillGrids) -> Result<Vec<HyperConfig>> {
    if grids.alpha.is_empty()
        || grids.tau.is_empty()
        || grids.lr.is_empty()
        || grids.batch_size.is_empty()
    {
        return Err(Error::Config("every grid needs at least one value".into()));
    }
    let mut out = Vec::new();
    for &alpha in &grids.alpha {
        for &tau in &grids.tau {
            DistillConfig { alpha, tau }.validate()?;
            for &lr in &grids.lr {
                for &batch_size in &grids.batch_size {
                    out.push(HyperConfig {
                        alpha,
                        tau,
                        lr,
                        batch_size,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Train one fresh copy of `init` per grid point and keep the best.
pub fn grid_search(
    init: &Model,
    strategy: &StrategyConfig,
    train_split: &[EncodedQuestion],
    dev: &[EncodedQuestion],
    teachers: &[TeacherLogits],
    base: &TrainLoopConfig,
    grids: &DistillGrids,
) -> Result<(Model, TrainLog, GridReport)> {
    let configs = grid_configs(grids)?;
    let mut entries = Vec::with_capacity(configs.len());
    let mut runs = Vec::with_capacity(configs.len());
    for hc in configs {
        let mut s = strategy.clone();
        s.distill = DistillConfig {
            alpha: hc.alpha,
            tau: hc.tau,
        };
        let lc = TrainLoopConfig {
            lr: hc.lr,
            batch_size: hc.batch_size,
            ..base.clone()
        };
        let mut model = init.clone();
        let log = train(&mut model, &s, train_split, dev, teachers, &lc)?;
        entries.push(GridEntry {
            config: hc,
            best_dev_map: log.best_dev_map().expect("completed run"),
        });
        runs.push((model, log));
    }
    let best = select_best(&entries).expect("nonempty grid").clone();
    let idx = entries
        .iter()
        .position(|e| e.config.lex_cmp(&best.config) == Ordering::Equal)
        .expect("best is an entry");
    let (model, log) = runs.swap_remove(idx);
    Ok((
        model,
        log,
        GridReport {
            best: best.config,
            best_dev_map: best.best_dev_map,
            entries,
        },
    ))
}
