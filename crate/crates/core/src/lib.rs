//! Block-level suggestion selection.
//!
//! A four-pointer dynamic decoder picks an ordered block of suggestions from
//! a variable-size candidate pool. The crate bundles a small reverse-mode
//! autodiff engine, a synthetic click-log pipeline, the decoder and its
//! mixed training objectives, an MMR baseline and the evaluation metrics.

pub mod autodiff;
pub mod baseline;
pub mod data;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod exec;
pub mod gradcheck;
pub mod objectives;
pub mod train;

pub use error::{Error, Result};
