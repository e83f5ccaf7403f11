//! Minimal CPU autodiff engine backing the translator and the detectors.

mod optim;
mod params;
mod tape;
mod tensor;

pub use optim::{Optimizer, OptimizerConfig};
pub use params::{Conv, Init, Linear, ParamBuilder, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Element, Tensor};
