//! Desk-scale simulator for prototype-based federated learning where every
//! client holds data from a single class.
//!
//! Clients train a shared embedding network with a contrastive loss against
//! proxy class prototypes instead of true ones. Four proxy generators are
//! provided (neighbor blending, Gaussian perturbation, fixed-cosine sampling,
//! and the share-the-prototype baseline), together with a prototype-leakage
//! measure, verification/classification metrics, and convergence-bound
//! calculators with trace-based constant estimation.

pub mod convergence;
pub mod dataset;
pub mod error;
pub mod federation;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod proxy;
pub mod rng;
pub mod vecmath;

pub use error::{Error, Result};
