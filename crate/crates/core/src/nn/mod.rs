//! Small f64 neural-network toolkit: dense, convolutional and recurrent layers
//! with hand-written backward passes.

mod adam;
mod conv;
mod layers;
mod lstm;
mod norm;
mod tensor;

pub use adam::Adam;
pub use conv::{Conv2d, ConvTranspose2d};
pub use layers::{Flatten, Layer, Linear, Relu, Reshape, Sequential, Sigmoid, Tanh};
pub use lstm::{Lstm, LstmCache, LstmState};
pub use norm::BatchNorm;
pub use tensor::{gemm, Param, Tensor};

use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
pub(crate) fn init_uniform<R: Rng>(rng: &mut R, n: usize, fan_in: usize) -> Vec<f64> {
    let a = 1.0 / (fan_in.max(1) as f64).sqrt();
    let d = Uniform::new_inclusive(-a, a);
    (0..n).map(|_| d.sample(rng)).collect()
}
