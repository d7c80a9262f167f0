//! Minimal differentiable computation substrate: tensors, a reverse-mode
//! tape, the parameter registry, gradient checking and checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod params;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{GradCheck, GradCheckReport};
pub use graph::{Graph, Var, LAYER_NORM_EPS};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::{Scalar, Tensor};
