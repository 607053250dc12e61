//! Minimal tensor, reverse-mode differentiation, Adam and gradient checking.
//!
//! Everything runs in double precision with a fixed summation order, so a
//! forward pass is bit-deterministic for fixed inputs.

mod gemm;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod tensor;

pub use gradcheck::{
    grad_check, relative_error, relative_error_with_floor, GradCheckReport, DEFAULT_STEP,
};
pub use graph::{sigmoid, softplus, Gradients, Graph, RowOp, Var};
pub use optim::{optimizer_step, AdamConfig, OptimizerState};
pub use tensor::{ParamStore, Tensor};
