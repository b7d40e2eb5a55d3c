use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::NetworkShape;
use crate::optim::OptimizerKind;
use crate::par::Execution;
use crate::rco::DEFAULT_TAU_MIN;

/// Every knob of one training run. Loadable from TOML or JSON; missing
/// fields take the defaults below.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// One optimizer step per epoch over the whole training split.
    pub full_batch: bool,
    pub learning_rate: f64,
    /// Step size for the permutation logits; `learning_rate` when unset.
    pub rco_learning_rate: Option<f64>,
    pub optimizer: OptimizerKind,
    pub lambda: f64,
    pub gamma: f64,
    pub tau_min: f64,
    /// Input length `t`.
    pub history: usize,
    /// Forecast length `s`.
    pub horizon: usize,
    pub network: NetworkShape,
    pub seed: u64,
    /// Which frame axes (turbine, attribute) get a learned matrix.
    pub axis_enabled: Vec<bool>,
    pub rco_enabled: bool,
    pub gumbel_noise: bool,
    /// Evaluate with hardened matrices instead of the soft ones.
    pub hard_eval: bool,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 32,
            full_batch: false,
            learning_rate: 1e-3,
            rco_learning_rate: None,
            optimizer: OptimizerKind::Adam,
            lambda: 1.0,
            gamma: 1.0,
            tau_min: DEFAULT_TAU_MIN,
            history: 50,
            horizon: 6,
            network: NetworkShape::desk(),
            seed: 0,
            axis_enabled: vec![true, true],
            rco_enabled: true,
            gumbel_noise: false,
            hard_eval: false,
            execution: Execution::Parallel,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
            ("history", self.history),
            ("horizon", self.horizon),
            ("network.kernel_size", self.network.kernel_size),
            ("network.lstm_hidden", self.network.lstm_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Parameter(format!("{name} must be positive")));
            }
        }
        if self.network.conv_channels.contains(&0) {
            return Err(Error::Parameter("conv channel counts must be positive".into()));
        }
        let lr_ok = |lr: f64| lr > 0.0 && lr.is_finite();
        if !lr_ok(self.learning_rate) || !self.rco_learning_rate.map_or(true, lr_ok) {
            return Err(Error::Parameter("learning rates must be positive and finite".into()));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Parameter(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::Parameter(format!("gamma must lie in [0, 1], got {}", self.gamma)));
        }
        if !(self.tau_min > 0.0 && self.tau_min <= 1.0) {
            return Err(Error::Parameter(format!("tau_min must lie in (0, 1], got {}", self.tau_min)));
        }
        if self.axis_enabled.len() != 2 {
            return Err(Error::Parameter("axis_enabled takes one flag per frame axis (2)".into()));
        }
        Ok(())
    }

    pub fn rco_lr(&self) -> f64 {
        self.rco_learning_rate.unwrap_or(self.learning_rate)
    }

    /// Parses TOML, or JSON when the path ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: TrainConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text)?
        } else {
            toml::from_str(&text).map_err(|e| Error::Format(e.to_string()))?
        };
        config.validate()?;
        Ok(config)
    }
}
