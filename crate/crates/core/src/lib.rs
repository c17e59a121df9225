//! Byzantine-resilient federated subspace estimation.
//!
//! The building blocks are a geometric-median aggregator ([`gm`]), a simulated
//! federation with adversarial nodes ([`fed`], [`attacks`]) and the estimators
//! built on top of them ([`estimators`]). [`pca`] and [`lrcs`] instantiate
//! them for federated PCA and low-rank column-wise sensing, and [`bench`]
//! runs experiment grids and writes reports.

pub mod attacks;
pub mod bench;
pub mod error;
pub mod estimators;
pub mod fed;
pub mod gm;
pub mod linalg;
pub mod lrcs;
pub mod pca;
pub mod rng;

pub use error::{Error, Result};
