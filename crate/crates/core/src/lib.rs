//! Maximum-entropy reinforcement learning from scratch.
//!
//! * [`autodiff`] and [`nn`]: reverse-mode gradients, ReLU MLPs, Adam, Polyak averaging.
//! * [`policy`]: tanh-squashed diagonal Gaussian policies.
//! * [`tabular`]: exact soft policy evaluation/improvement/iteration and the
//!   finite-horizon entropy-constrained dual solver.
//! * [`replay`], [`env`], [`agent`], [`train`]: the deep actor-critic and its
//!   training loop.
//! * [`verify`]: property suites shared by the CLI and the acceptance tests.

pub mod agent;
pub mod autodiff;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod nn;
pub mod policy;
pub mod quadrature;
pub mod replay;
pub mod tabular;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
