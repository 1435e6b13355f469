//! Dense tensors, a reverse-mode tape, Adam, and checkpoint files.

pub mod checkpoint;
pub mod gradcheck;
mod ops;
pub mod optim;
mod tape;
mod tensor;

pub use ops::sigmoid;
pub use optim::{Adam, AdamConfig, LrSchedule, OptimizerState};
pub use tape::{Backward, Gradients, Tape, Var};
pub use tensor::Tensor;
