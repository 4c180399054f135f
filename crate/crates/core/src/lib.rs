//! Generalization-bound tracing for mini-batch SGD.
//!
//! The crate trains small multilayer perceptrons with plain or clipped SGD and,
//! alongside training, evaluates the components of information-theoretic
//! generalization bounds built on perturbed surrogate iterates:
//!
//! * the *cumulative* surrogate `θ_k + Σ_{t≤k} ε_t` (noise accumulates), and
//! * the *fresh* surrogate `θ_k + ε_k` (a new perturbation every step).
//!
//! Each bound is a flatness term (expected loss change under the perturbation)
//! plus a trajectory term accumulated over the optimization path.
//!
//! Modules:
//!
//! * [`ndnet`]: dense tensors, MLP forward/backward, losses.
//! * [`data`]: MNIST IDX files, synthetic mixtures, seeded batch sampling.
//! * [`optim`]: SGD and clipped SGD, noise schedules, surrogate bookkeeping, training loop.
//! * [`bounds`]: flatness and trajectory estimators, closed-form bounds, divergences.
//! * [`cli`]: experiment configuration and the `train | sweep | check | render` commands.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod cli;
pub mod data;
pub mod error;
pub mod ndnet;
pub mod optim;
pub mod rng;

pub use error::{Error, Result};
