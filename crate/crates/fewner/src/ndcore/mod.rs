//! Minimal reverse-mode autodiff core: dense 2-D tensors, a Wengert-list
//! tape with the op set the sequence models need, Adam, a deterministic
//! forkable RNG, and a finite-difference gradient checker.

pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod rng;
pub mod tensor;

pub use gradcheck::{check_grads, GradReport};
pub use graph::{Mode, NodeId, Tape};
pub use optim::{Adam, ParamUpdate};
pub use rng::{mix_seed, Rng};
pub use tensor::Tensor;
