use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{fan_in_uniform, Module};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::optim::Param;
use crate::tensor::Tensor;

/// `y = W x + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `(out, in)`
    pub weight: Param,
    /// `(out)`
    pub bias: Param,
}

impl DenseLayer {
    pub fn new(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        DenseLayer {
            weight: Param::new(fan_in_uniform(&[outputs, inputs], inputs, rng)),
            bias: Param::new(Tensor::zeros(&[outputs])),
        }
    }

    /// Maps a rank-1 `x` of length `in` to a rank-1 output of length `out`.
    pub fn forward<'t>(&self, x: Var<'t>, vars: &[Var<'t>]) -> Result<Var<'t>> {
        let [weight, bias] = vars else {
            return Err(Error::Contract("dense layer takes 2 bound params".into()));
        };
        let n = x.value().len();
        let out = bias.value().len();
        weight
            .matmul(x.reshape(&[n, 1])?)?
            .reshape(&[out])?
            .add(*bias)
    }
}

impl Module for DenseLayer {
    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }
}
