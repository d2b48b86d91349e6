//! Define-by-run reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Graph`] records every operation as it runs; [`Graph::backward`]
//! sweeps the record once in reverse. Parameters live in a [`ParamStore`]
//! and are bound into each step's graph either as trainable leaves or as
//! frozen constants.
//!
//! ```
//! use e2ebt_tensor::{Graph, Tensor};
//!
//! let g = Graph::<f64>::new();
//! let x = g.var(Tensor::vector(vec![1.0, -2.0, 3.0]));
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, -4.0, 6.0]);
//! ```

mod backward;
mod error;
pub mod gradcheck;
mod graph;
mod params;
mod scalar;
mod tensor;

pub use backward::Gradients;
pub use error::{Result, TensorError};
pub use graph::{Counters, Graph, Var};
pub use params::{Param, ParamId, ParamStore, Params};
pub use scalar::{gemm, MatView, Scalar};
pub use tensor::{argmax, Tensor};
