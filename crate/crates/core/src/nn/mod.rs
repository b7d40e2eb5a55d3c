//! The convolutional-recurrent backbone: 2-D convolutions with ReLU per
//! timestep, an LSTM across timesteps and a dense head.

mod conv;
mod dense;
mod lstm;
mod network;

pub use conv::Conv2dLayer;
pub use dense::DenseLayer;
pub use lstm::{lstm_step, LstmCell};
pub use network::{
    Backbone, BoundForecaster, Forecaster, InferencePermutation, NetworkShape, PermutationMode,
};

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::optim::Param;
use crate::tensor::Tensor;

/// Anything owning trainable parameters in a fixed order.
pub trait Module {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    /// Binds every parameter to `tape` as a tracked leaf, in `params()` order.
    fn bind<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params()
            .into_iter()
            .map(|p| tape.leaf(p.value.clone()))
            .collect()
    }
}

/// Uniform in `±1/√fan_in`.
pub(crate) fn fan_in_uniform(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches generated data")
}
