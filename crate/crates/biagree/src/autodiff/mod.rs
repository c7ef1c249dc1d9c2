//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Graph`] records primitives as they are evaluated and replays them
//! backwards from a scalar root. Graphs are cheap and meant to be rebuilt for
//! every example; parameters live in a [`ParamStore`] that the graph borrows.
//!
//! ```
//! use biagree::autodiff::{Array, Graph, ParamStore};
//!
//! let mut store = ParamStore::new();
//! store.insert("x", Array::scalar(2.0)?)?;
//! store.insert("y", Array::scalar(3.0)?)?;
//! let mut g = Graph::with_params(&store);
//! let (x, y) = (g.param("x")?, g.param("y")?);
//! let xy = g.mul(x, y)?;
//! let grads = g.backward(xy)?;
//! assert_eq!(grads.get("x")?.data(), &[3.0]);
//! assert_eq!(grads.get("y")?.data(), &[2.0]);
//! # Ok::<(), biagree::Error>(())
//! ```

mod array;
mod gradcheck;
mod graph;
mod params;

pub use array::Array;
pub use gradcheck::{compare_gradients, finite_diff_check, numeric_gradient, relative_error, FiniteDiffReport};
pub use graph::{Adjoints, Graph, NodeId, Primitive};
pub use params::{Gradients, ParamStore};
