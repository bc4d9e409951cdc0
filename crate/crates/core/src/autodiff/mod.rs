//! Minimal reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] records operations in topological order. [`Graph::evaluate`]
//! computes every node once for a set of input [`Bindings`], and
//! [`Graph::backward`] propagates the derivative of a scalar node back to
//! every trainable leaf. [`finite_difference_grad`] is the independent
//! central-difference oracle used to check those gradients.
//!
//! ```
//! use deskmt::autodiff::{Array, Graph, Bindings};
//! use std::sync::Arc;
//!
//! let mut g = Graph::new();
//! let x = g.param("x", Arc::new(Array::scalar(3.0)));
//! let y = g.mul(x, x);
//! let values = g.evaluate(Bindings::new()).unwrap();
//! assert_eq!(values.get(y).item(), 9.0);
//! let grads = g.backward(&values, y).unwrap();
//! assert_eq!(grads.get(x).unwrap().item(), 6.0);
//! ```

mod array;
mod gradcheck;
mod graph;
mod store;

pub use array::Array;
pub use gradcheck::{finite_difference_grad, relative_error};
pub use graph::{Bindings, Gradients, Graph, NodeId, Op, Values};
pub use store::{ParamSet, FORMAT_VERSION, MAGIC};

pub(crate) use array::{axpy, dot, log_sum_exp, matvec_into, sigmoid, softmax_in_place};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AutodiffError {
    #[error("shape mismatch at node {node}: {detail}")]
    ShapeMismatch { node: usize, detail: String },
    #[error("non-finite value produced at node {node}")]
    NonFinite { node: usize },
    #[error("input node {node} has no binding")]
    Unbound { node: usize },
    #[error("backward seed node {node} is not scalar ({len} values)")]
    NonScalarSeed { node: usize, len: usize },
    #[error("invalid array: {0}")]
    InvalidArray(String),
    #[error("malformed parameter container: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
