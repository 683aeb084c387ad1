//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Parameters live in [`Tensor`]s owned by the caller. A forward pass records
//! operations on a [`Graph`] tape that borrows those tensors; [`Graph::backward`]
//! replays the tape in reverse and returns per-leaf gradients which the caller
//! accumulates back into the owning tensors before an optimizer step.

mod graph;
mod init;
mod optim;
mod rng;
mod tensor;

pub use graph::{Gradients, Graph, Var};
pub use init::{init_normal, init_orthogonal, init_zeros};
pub use optim::{adam_step, clip_global_norm, AdamState};
pub use rng::RngState;
pub use tensor::Tensor;
