//! Minimal dense reverse-mode automatic differentiation.

pub mod checkpoint;
mod lstm;
mod optim;
mod params;
mod tape;
mod tensor;

pub use lstm::{lstm_cell, LstmParams};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use params::{ParamId, ParamStore};
pub use tape::{log_sum_exp, softmax, Gradients, Tape, Var};
pub use tensor::Tensor;
