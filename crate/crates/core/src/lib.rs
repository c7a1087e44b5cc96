//! Transfer Bayesian optimization with Gaussian processes whose mean and
//! covariance functions are neural networks conditioned on a task descriptor.
//!
//! The shared networks and kernel parameters are fit once on a collection of
//! source tasks by maximizing the summed log marginal likelihood. A new target
//! task is then optimized over a finite candidate pool with expected
//! improvement, conditioning the model on target observations in closed form.
//!
//! Modules, bottom-up:
//!
//! - [`nnet`]: dense networks with exact backprop, and Adam.
//! - [`kernels`]: RBF and linear kernels with input/parameter derivatives.
//! - [`linalg`]: Cholesky with escalating jitter.
//! - [`model`]: the task-conditioned GP, its likelihood, gradient and posterior.
//! - [`training`]: minibatch Adam over source tasks with early stopping.
//! - [`bayesopt`]: expected improvement, the pool BO loop and baselines.
//! - [`data`]: task/dataset types, JSON persistence, splits, synthetic tasks.
//! - [`bench`]: benchmark harness and reports.
//! - [`cli`]: the `ngp` command-line front end.

pub mod bayesopt;
pub mod bench;
pub mod cli;
pub mod data;
pub mod error;
pub mod kernels;
pub mod linalg;
pub mod model;
pub mod nnet;
pub mod training;

pub use error::{Error, Result};
