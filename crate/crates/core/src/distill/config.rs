use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub alpha: f64,
    pub tau: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            alpha: 0.5,
            tau: 3.0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha {} outside [0, 1]",
                self.alpha
            )));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Config(format!("tau {} must be positive", self.tau)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Hard labels only.
    NoTeacher,
    SingleTeacher,
    KdSum,
    KdRr,
    PerHeadHeterogeneous,
    PerHeadHomogeneous,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::NoTeacher,
        Strategy::SingleTeacher,
        Strategy::KdSum,
        Strategy::KdRr,
        Strategy::PerHeadHeterogeneous,
        Strategy::PerHeadHomogeneous,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::NoTeacher => "no_teacher",
            Strategy::SingleTeacher => "single_teacher",
            Strategy::KdSum => "kd_sum",
            Strategy::KdRr => "kd_rr",
            Strategy::PerHeadHeterogeneous => "per_head_heterogeneous",
            Strategy::PerHeadHomogeneous => "per_head_homogeneous",
        }
    }

    pub fn is_per_head(self) -> bool {
        matches!(
            self,
            Strategy::PerHeadHeterogeneous | Strategy::PerHeadHomogeneous
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyConfig {
    pub strategy: Strategy,
    /// Teacher ids in head / rotation order.
    #[serde(default)]
    pub teachers: Vec<String>,
    /// Per-head loss weights; defaults to the model's own.
    #[serde(default)]
    pub head_weights: Option<Vec<f64>>,
    #[serde(default)]
    pub distill: DistillConfig,
}

impl StrategyConfig {
    pub fn new(strategy: Strategy, teachers: Vec<String>) -> Self {
        StrategyConfig {
            strategy,
            teachers,
            head_weights: None,
            distill: DistillConfig::default(),
        }
    }

    /// Checks that do not depend on the model.
    pub fn validate(&self) -> Result<()> {
        self.distill.validate()?;
        let m = self.teachers.len();
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "strategy {} {what}, got {m} teachers",
                    self.strategy.name()
                )))
            }
        };
        match self.strategy {
            Strategy::NoTeacher => need(m == 0, "takes no teachers"),
            Strategy::SingleTeacher => need(m == 1, "needs exactly one teacher"),
            Strategy::KdSum => need(m >= 1, "needs at least one teacher"),
            Strategy::KdRr => need(m >= 2, "needs at least two teachers"),
            Strategy::PerHeadHeterogeneous | Strategy::PerHeadHomogeneous => {
                need(m >= 1, "needs one teacher per head")
            }
        }?;
        if let Some(w) = &self.head_weights {
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Config("head weights must be finite and >= 0".into()));
            }
        }
        Ok(())
    }
}

fn d_max_iterations() -> usize {
    2000
}
fn d_validate_every() -> usize {
    50
}
fn d_patience() -> usize {
    10
}
fn d_lr() -> f64 {
    1e-3
}
fn d_batch_size() -> usize {
    32
}
fn d_warmup() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLoopConfig {
    #[serde(default = "d_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "d_validate_every")]
    pub validate_every: usize,
    #[serde(default = "d_patience")]
    pub patience_validations: usize,
    #[serde(default = "d_lr")]
    pub lr: f64,
    #[serde(default = "d_batch_size")]
    pub batch_size: usize,
    #[serde(default = "d_warmup")]
    pub warmup_fraction: f64,
    pub seed: u64,
}

impl TrainLoopConfig {
    pub fn desk(seed: u64) -> Self {
        TrainLoopConfig {
            max_iterations: d_max_iterations(),
            validate_every: d_validate_every(),
            patience_validations: d_patience(),
            lr: d_lr(),
            batch_size: d_batch_size(),
            warmup_fraction: d_warmup(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counters = [
            ("max_iterations", self.max_iterations),
            ("validate_every", self.validate_every),
            ("patience_validations", self.patience_validations),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = counters.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.patience_validations > self.max_iterations / self.validate_every {
            return Err(Error::Config(format!(
                "patience {} exceeds the {} validations available",
                self.patience_validations,
                self.max_iterations / self.validate_every
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warmup_fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillGrids {
    pub alpha: Vec<f64>,
    pub tau: Vec<f64>,
    pub lr: Vec<f64>,
    pub batch_size: Vec<usize>,
}

impl Default for DistillGrids {
    fn default() -> Self {
        DistillGrids {
            alpha: vec![0.0, 0.1, 0.5, 0.9],
            tau: vec![1.0, 3.0, 5.0],
            lr: vec![1e-3],
            batch_size: vec![8, 16, 24, 32, 64],
        }
    }
}
