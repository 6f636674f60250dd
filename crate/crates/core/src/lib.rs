//! Reconciled polynomial networks.
//!
//! A layer computes `Σ_h Σ_c ⟨κ_h(x), ψ_h(w_{h,c})⟩ + π_h(x)`: a data
//! expansion `κ`, a parameter reconciliation `ψ` that fabricates the
//! weight matrix from a short vector, and a remainder `π`. Layers stack.

pub mod catalog;
pub mod data;
pub mod error;
pub mod expand;
pub mod model;
pub mod prob;
pub mod process;
pub mod reconcile;
pub mod remainder;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod unify;

pub use error::{Error, Result};
pub use expand::{ExpansionKind, ExpansionSpec};
pub use process::Processor;
pub use rng::Rng;
pub use tensor::Tensor;
