//! Dense `f64` tensors, a reverse-mode tape, and a finite-difference checker.

mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Graph, SmoothingWeights, Var};
pub use params::{ParamGrads, ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
