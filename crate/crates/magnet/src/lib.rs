//! MagNet: a detector + reformer defense against adversarial examples.
//!
//! The crate is organized around the experiment lifecycle:
//!
//! - [`data`] loads MNIST / CIFAR-10 into normalized `[0,1]` image batches.
//! - [`nn`] is a small CPU neural-network substrate (convolutions, pooling,
//!   dense layers) with exact reverse-mode gradients for both parameters and
//!   inputs. Everything else builds on it.
//! - [`models`] defines the target classifiers and defensive autoencoders,
//!   their training loops, and the on-disk model archive format.
//! - [`detectors`] scores inputs by autoencoder reconstruction error or by
//!   probability divergence under a temperature softmax, and calibrates
//!   rejection thresholds on normal validation data.
//! - [`reformer`] moves inputs toward the manifold of normal examples before
//!   classification.
//! - [`diversity`] trains an ensemble of autoencoders under a resemblance
//!   penalty and picks one at random at test time.
//! - [`attacks`] generates untargeted adversarial examples (FGSM, iterative,
//!   DeepFool, Carlini L2) against any differentiable classifier.
//! - [`pipeline`] assembles detectors + reformer + classifier, applies the
//!   correct-decision metric, and produces evaluation reports and the
//!   graybox cross-evaluation matrix.
//! - [`config`] and [`experiment`] drive the whole lifecycle from a single
//!   TOML experiment description; the `magnet-cli` crate wraps them.

// Link against the system BLAS for the GEMM kernels behind `ndarray::dot`.
extern crate blas_src;

pub mod attacks;
pub mod config;
pub mod data;
pub mod detectors;
pub mod diversity;
pub mod error;
pub mod experiment;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod reformer;

pub use error::{Error, Result};
