//! Trainable parameters and the gradient-descent update rules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A trainable tensor with its accumulated gradient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub value: Tensor,
    #[serde(skip)]
    grad: Option<Tensor>,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        Param { value, grad: None }
    }

    pub fn grad(&self) -> Tensor {
        self.grad
            .clone()
            .unwrap_or_else(|| Tensor::zeros(self.value.shape()))
    }

    pub fn accumulate_grad(&mut self, g: &Tensor) -> Result<()> {
        if g.shape() != self.value.shape() {
            return Err(Error::shape(format!(
                "gradient {:?} for parameter {:?}",
                g.shape(),
                self.value.shape()
            )));
        }
        match &mut self.grad {
            Some(acc) => acc.add_assign(g)?,
            None => self.grad = Some(g.clone()),
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

/// Stateful optimizer over an ordered parameter list. The list must be
/// presented in the same order on every step.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(lr)),
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, params: &mut [&mut Param]) {
        match self {
            Optimizer::Sgd { lr } => sgd_step(params, *lr),
            Optimizer::Adam(adam) => adam.step(params),
        }
    }
}

/// `W' = W - lr * grad` for every parameter.
pub fn sgd_step(params: &mut [&mut Param], lr: f64) {
    for p in params.iter_mut() {
        if let Some(g) = p.grad.take() {
            for (w, g) in p.value.data_mut().iter_mut().zip(g.data()) {
                *w -= lr * g;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param]) {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in params.iter_mut().zip(&mut self.first).zip(&mut self.second) {
            let Some(g) = p.grad.take() else {
                // No gradient this step is the same as a zero gradient.
                for (mi, vi) in m.iter_mut().zip(v.iter_mut()) {
                    *mi *= self.beta1;
                    *vi *= self.beta2;
                }
                for ((w, mi), vi) in p.value.data_mut().iter_mut().zip(m.iter()).zip(v.iter()) {
                    *w -= self.lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
                }
                continue;
            };
            for (((w, g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                *w -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
    }
}
