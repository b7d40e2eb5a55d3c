use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{fan_in_uniform, Module};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::optim::Param;
use crate::tensor::{Padding, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Conv2dLayer {
    /// `(out_ch, in_ch, kh, kw)`
    pub kernel: Param,
    /// `(out_ch)`
    pub bias: Param,
    pub padding: Padding,
}

impl Conv2dLayer {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel_size: usize,
        padding: Padding,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if padding == Padding::Same && kernel_size % 2 == 0 {
            return Err(Error::Parameter(format!(
                "same padding needs an odd kernel, got {kernel_size}"
            )));
        }
        let fan_in = in_ch * kernel_size * kernel_size;
        Ok(Conv2dLayer {
            kernel: Param::new(fan_in_uniform(
                &[out_ch, in_ch, kernel_size, kernel_size],
                fan_in,
                rng,
            )),
            bias: Param::new(Tensor::zeros(&[out_ch])),
            padding,
        })
    }

    pub fn in_channels(&self) -> usize {
        self.kernel.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.kernel.value.shape()[0]
    }

    /// `vars` are this layer's bound parameters (kernel, bias).
    pub fn forward<'t>(&self, x: Var<'t>, vars: &[Var<'t>]) -> Result<Var<'t>> {
        let [kernel, bias] = vars else {
            return Err(Error::Contract("conv layer takes 2 bound params".into()));
        };
        x.conv2d(*kernel, *bias, self.padding)
    }
}

impl Module for Conv2dLayer {
    fn params(&self) -> Vec<&Param> {
        vec![&self.kernel, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.kernel, &mut self.bias]
    }
}
