//! Dense `f64` tensors with a tape-based reverse-mode differentiator.
//!
//! Forward ops are methods on [`Var`]; a scalar result is differentiated
//! with [`Tape::backward`]:
//!
//! ```
//! use grelax_autodiff::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(Tensor::scalar(3.0));
//! let y = (x * x).sum();
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).item(), 6.0);
//! ```
//!
//! Only the primitives the graph models and attacks need are provided;
//! broadcasting is limited to the explicit row/column helpers.

mod adam;
mod grad;
mod kernels;
mod numeric;
mod ops;
mod tape;
mod tensor;

pub use adam::{Adam, AdamState};
pub use numeric::finite_difference;
pub use ops::interp_slots;
pub use tape::{Gradients, InterpSlot, PathTable, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("backward: loss must be a scalar, got shape {shape:?}")]
    NonScalarLoss { shape: Vec<usize> },
    #[error("non-finite value produced by `{op}`")]
    NonFinite { op: &'static str },
}
