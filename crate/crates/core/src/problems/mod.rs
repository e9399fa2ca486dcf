//! Benchmark streams: Slowly-Changing Regression and Online Permuted MNIST.

pub mod mnist;
pub mod pmnist;
pub mod scr;

use rand::Rng;

use crate::error::Result;
use crate::net::{Activation, Network};

/// Affine learner with no hidden layers, used as the no-plasticity-loss
/// reference on every stream.
pub fn linear_baseline<R: Rng + ?Sized>(
    input: usize,
    output: usize,
    rng: &mut R,
) -> Result<Network> {
    Network::init_kaiming_uniform(&[input, output], &[Activation::Linear], rng)
}
