//! Single-process simulator for Byzantine-robust decentralized stochastic
//! optimization on random network topologies.
//!
//! The pipeline has three phases: a robust warm-up that produces stable
//! per-node parameters, a statistical screening phase that scores and prunes
//! suspicious in-neighbors, and a rescaled decentralized SGD phase that runs
//! over the pruned directed graph. Everything is deterministic given a master
//! seed; heavy per-node and Monte Carlo loops go through [`exec`], which is
//! parallelized with rayon when the `parallel` feature (default) is enabled.

pub mod config;
pub mod csvio;
pub mod detect;
pub mod error;
pub mod exec;
pub mod harness;
pub mod linalg;
pub mod optim;
pub mod problem;
pub mod rng;
pub mod robust;
pub mod topology;

pub use error::{Error, Result};
