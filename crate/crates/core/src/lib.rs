//! Multi-head distilled rankers for answer sentence selection.

pub mod bench;
pub mod data;
pub mod distill;
pub mod ensemble;
pub mod error;
pub mod model;
pub mod ranking;
pub mod scoring;
pub mod tensor;

pub use error::{Error, Result};
