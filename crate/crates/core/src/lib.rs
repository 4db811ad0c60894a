//! Split-merge MCMC clustering of UMI count matrices under a Dirichlet
//! process mixture of multinomials.
//!
//! The engine instantiates mixing weights and cluster parameters so that
//! cell assignments can be drawn in parallel, and changes the number of
//! clusters only through Metropolis-Hastings split and merge moves.

pub mod bench;
pub mod dm;
pub mod error;
pub mod io;
pub mod metrics;
pub mod rng;
pub mod sampler;
pub mod state;
pub mod synth;

pub use error::{Error, Result};
pub use sampler::{run, Estimator, IterationTrace, RunReport, Sampler, SamplerConfig};
pub use state::{ClusterStats, CountMatrix, Hyperparams, ModelState, Partition};
