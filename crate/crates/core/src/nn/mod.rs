//! Differentiable building blocks: tensors, parameters, LSTM, pointwise ops,
//! Adam, gradient checking and checkpoints.

pub mod adam;
pub mod checkpoint;
pub mod gradcheck;
pub mod lstm;
pub mod ops;
pub mod param;
pub mod tensor;

pub use adam::Adam;
pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport, Pass};
pub use lstm::{Lstm, LstmTrace};
pub use param::{Module, Parameter};
pub use tensor::{Real, Tensor};
