//! Backward error analysis of gradient descent.
//!
//! Gradient descent with learning rate `h` follows, to second order in `h`,
//! the exact gradient flow of the modified loss
//! `Ẽ(θ) = E(θ) + (h/4)‖∇E(θ)‖²`. This crate provides the pieces needed to
//! check that numerically and to study the implicit regularizer it reveals:
//!
//! - [`model`]: differentiable losses (a 2-parameter bilinear model, MLP
//!   classifiers, least-squares regressors) with exact gradients and
//!   Hessian-vector products;
//! - [`flow`]: discrete gradient descent, the first-order modified vector
//!   field, RK4 reference flows and local-error order fits;
//! - [`metrics`]: the implicit regularizer, loss-surface geometry, the
//!   per-step norm bound and the kernel form of the modified loss;
//! - [`egr`]: explicit gradient regularization;
//! - [`dataset`]: IDX loading, a synthetic fallback and batching;
//! - [`harness`]: preset 2-d experiments, MLP sweeps, stopping rules and
//!   perturbation robustness;
//! - [`cli`]: the `igr` command-line front end and run persistence.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod egr;
pub mod error;
pub mod flow;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod stats;

pub use error::{Error, Result};
pub use model::{Batch, LossModel, ParamVector, Targets};
