//! Nonparametric Bayesian accelerated failure time regression.
//!
//! `log T = m(A, x) + W`, with `m` a sum of regression trees under the BART
//! prior and `W` drawn from a mean-zero (centered) Dirichlet-process mixture
//! of normals. Right-censored times are handled by data augmentation. The
//! crate also provides heterogeneous-treatment-effect summaries of the
//! posterior and the simulation benchmarks used to evaluate them.

pub mod aft;
pub mod cdp;
pub mod data;
pub mod error;
pub mod forest;
pub mod gibbs;
pub mod grid;
pub mod hte;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
