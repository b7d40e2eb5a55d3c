use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{fan_in_uniform, Module};
use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::optim::Param;
use crate::tensor::Tensor;

/// LSTM cell with the four gates stacked in `i, f, g, o` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LstmCell {
    /// `(4h, in)`
    pub w_input: Param,
    /// `(4h, h)`
    pub w_hidden: Param,
    /// `(4h)`
    pub bias: Param,
}

impl LstmCell {
    /// Forget-gate bias starts at 1.
    pub fn new(inputs: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden].fill(1.0);
        LstmCell {
            w_input: Param::new(fan_in_uniform(&[4 * hidden, inputs], inputs, rng)),
            w_hidden: Param::new(fan_in_uniform(&[4 * hidden, hidden], hidden, rng)),
            bias: Param::new(bias),
        }
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hidden.value.shape()[1]
    }

    pub fn input_size(&self) -> usize {
        self.w_input.value.shape()[1]
    }
}

impl Module for LstmCell {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w_input, &self.w_hidden, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_input, &mut self.w_hidden, &mut self.bias]
    }
}

/// One step of the standard LSTM recurrence:
///
/// ```text
/// z = W_x x + W_h h + b;  i, f, o = σ(z_i, z_f, z_o);  g = tanh(z_g)
/// c' = f ⊙ c + i ⊙ g;     h' = o ⊙ tanh(c')
/// ```
///
/// `vars` are the cell's bound parameters; `x`, `h_prev`, `c_prev` are rank-1.
pub fn lstm_step<'t>(
    x: Var<'t>,
    h_prev: Var<'t>,
    c_prev: Var<'t>,
    vars: &[Var<'t>],
) -> Result<(Var<'t>, Var<'t>)> {
    let [w_input, w_hidden, bias] = vars else {
        return Err(Error::Contract("lstm cell takes 3 bound params".into()));
    };
    let w_shape = w_input.shape();
    let (four_h, inputs) = (w_shape[0], w_shape[1]);
    let hidden = four_h / 4;
    if x.shape() != [inputs] || h_prev.shape() != [hidden] || c_prev.shape() != [hidden] {
        return Err(Error::shape(format!(
            "lstm step: x {:?}, h {:?}, c {:?} for input {inputs}, hidden {hidden}",
            x.shape(),
            h_prev.shape(),
            c_prev.shape()
        )));
    }
    let z = w_input
        .matmul(x.reshape(&[inputs, 1])?)?
        .add(w_hidden.matmul(h_prev.reshape(&[hidden, 1])?)?)?
        .reshape(&[four_h])?
        .add(*bias)?;
    let input_gate = z.slice(0, hidden)?.sigmoid();
    let forget_gate = z.slice(hidden, hidden)?.sigmoid();
    let candidate = z.slice(2 * hidden, hidden)?.tanh();
    let output_gate = z.slice(3 * hidden, hidden)?.sigmoid();
    let c = forget_gate
        .mul(c_prev)?
        .add(input_gate.mul(candidate)?)?;
    let h = output_gate.mul(c.tanh())?;
    Ok((h, c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    fn zero_cell(inputs: usize, hidden: usize) -> LstmCell {
        LstmCell {
            w_input: Param::new(Tensor::zeros(&[4 * hidden, inputs])),
            w_hidden: Param::new(Tensor::zeros(&[4 * hidden, hidden])),
            bias: Param::new(Tensor::zeros(&[4 * hidden])),
        }
    }

    #[test]
    fn all_zero_cell_stays_at_zero() {
        let cell = zero_cell(3, 2);
        let tape = Tape::new();
        let vars = cell.bind(&tape);
        let x = tape.constant(Tensor::zeros(&[3]));
        let h0 = tape.constant(Tensor::zeros(&[2]));
        let (h, c) = lstm_step(x, h0, h0, &vars).unwrap();
        assert_eq!(*h.value(), Tensor::zeros(&[2]));
        assert_eq!(*c.value(), Tensor::zeros(&[2]));
    }

    #[test]
    fn saturated_forget_gate_keeps_cell_state() {
        let mut cell = zero_cell(3, 2);
        cell.bias.value.data_mut()[2..4].fill(20.0);
        let tape = Tape::new();
        let vars = cell.bind(&tape);
        let x = tape.constant(Tensor::zeros(&[3]));
        let h0 = tape.constant(Tensor::zeros(&[2]));
        let c0 = tape.constant(Tensor::vector(vec![0.7, -1.3]));
        let (_, c) = lstm_step(x, h0, c0, &vars).unwrap();
        for (got, want) in c.value().data().iter().zip([0.7, -1.3]) {
            assert!((got - want).abs() < 1e-8, "{got} vs {want}");
        }
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let cell = zero_cell(3, 2);
        let tape = Tape::new();
        let vars = cell.bind(&tape);
        let x = tape.constant(Tensor::zeros(&[4]));
        let h0 = tape.constant(Tensor::zeros(&[2]));
        assert!(lstm_step(x, h0, h0, &vars).is_err());
    }
}
