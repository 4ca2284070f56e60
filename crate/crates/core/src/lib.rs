//! Federated fine-tuning of a key-value cache adapter sitting on top of a
//! frozen zero-shot classification head.
//!
//! The crate is organised bottom-up:
//!
//! - [`numerics`]: dense row-major matrices and the loss kernels.
//! - [`features`]: labelled feature datasets, the text head, the `CFF1` file
//!   format and the synthetic world generator.
//! - [`cache`]: the cache adapter (trainable keys, frozen one-hot values),
//!   fused logits and the analytic key gradient.
//! - [`partition`]: iid / Dirichlet / pathological client splits.
//! - [`federation`]: the round loop (sampling, local SGD, weighted averaging).
//! - [`convergence`]: synthetic strongly convex objectives used to check the
//!   `O(1/t)` rate bound of local SGD with periodic averaging.
//! - [`reporting`]: sweeps, experiment records and CSV/JSON emission.
//!
//! Everything is deterministic for a fixed seed, including under parallel
//! client execution.

pub mod cache;
pub mod convergence;
pub mod error;
pub mod federation;
pub mod features;
pub mod io;
pub mod numerics;
pub mod partition;
pub mod reporting;
pub mod rng;

pub use error::{Error, Result};
pub use numerics::Matrix;
