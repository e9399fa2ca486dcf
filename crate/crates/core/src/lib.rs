//! Continual-learning training engine.
//!
//! The crate is organised bottom-up:
//!
//! - [`net`]: dense feed-forward networks, Kaiming-uniform initialization,
//!   forward traces and exact reverse-mode gradients.
//! - [`optim`]: per-example SGD (with momentum), Adam with per-weight step
//!   counters, L2, shrink-and-perturb and inverted dropout.
//! - [`cbp`]: continual backpropagation, i.e. utility tracking and selective
//!   reinitialization of hidden units.
//! - [`diagnostics`]: dead/saturated unit counts, weight magnitude and
//!   effective rank of hidden representations.
//! - [`problems`]: the Slowly-Changing Regression stream and Online Permuted
//!   MNIST, including an IDX reader.
//! - [`learner`]: glue that runs one online training step with any
//!   combination of the above.
//!
//! All arithmetic is `f64`.

pub mod cbp;
pub mod diagnostics;
pub mod error;
pub mod learner;
pub mod net;
pub mod optim;
pub mod problems;
pub mod rng;

pub use error::{Error, Result};
