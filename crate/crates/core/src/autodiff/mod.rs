//! Reverse-mode automatic differentiation over dense `f64` tensors, the Adam
//! optimizer, finite-difference gradient checking and parameter checkpoints.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod graph;
mod params;
mod tensor;

pub use adam::{Adam, BETA1, BETA2, EPSILON};
pub use gradcheck::{
    check_gradients, grad_check, relative_error, GradCheckEntry, GradCheckReport, DEFAULT_STEP,
    DEFAULT_TOL,
};
pub use graph::{backward, Gradients, Graph, Var};
pub use params::{ParamGrads, ParameterStore};
pub use tensor::Tensor;
