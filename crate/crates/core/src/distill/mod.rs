//! Knowledge-distillation losses, teacher routing strategies, and the
//! early-stopping training loop.

mod config;
mod grid;
mod loss;
mod teacher;
mod train;

pub use config::{DistillConfig, DistillGrids, Strategy, StrategyConfig, TrainLoopConfig};
pub use grid::{grid_configs, grid_search, select_best, GridEntry, GridReport, HyperConfig};
pub use loss::{
    cerberus_loss, cerberus_loss_var, cross_entropy, cross_entropy_var, kd_loss, kd_loss_var,
    kd_rr_index, kd_rr_select, kd_sum_loss, kd_sum_loss_var, soft_loss, soft_loss_var, soften,
};
pub use teacher::{
    CacheRecord, CachedTeacher, EnsembleTeacher, ModelTeacher, Teacher, TeacherLogits,
};
pub use train::{check_compatible, train, DevMetrics, LogRecord, TrainLog};
