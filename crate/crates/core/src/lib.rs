//! Batch Bayesian optimization for experiments with few rounds and many
//! arms per round.
//!
//! The main designer picks each batch by minimizing the expected terminal
//! posterior variance of a Gaussian-process surrogate, weighted by the
//! probability that each location is the maximizer.

pub mod baseline;
pub mod error;
pub mod fit;
pub mod gp;
pub mod harness;
pub mod mountain_car;
pub mod mtv;
pub mod optim;
pub mod pstar;
pub mod session;
pub mod sobol;
pub mod testbed;

pub use error::{Error, Result};
pub use gp::{Dataset, GpPosterior, KernelParams};
pub use mtv::{design_batch, initial_batch, Batch, MtvConfig};
pub use pstar::{sample_pstar, PStarConfig, SampleSet};
pub use sobol::SobolStream;
pub use testbed::{Problem, TestFunction};
