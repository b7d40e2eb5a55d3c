use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{lstm_step, Conv2dLayer, DenseLayer, LstmCell, Module};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::optim::Param;
use crate::rco::{self, RcoState};
use crate::tensor::{Padding, Tensor};

/// Layer sizes of the backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkShape {
    pub conv_channels: Vec<usize>,
    pub kernel_size: usize,
    pub lstm_hidden: usize,
    pub padding: Padding,
}

impl NetworkShape {
    /// Two 3×3 layers of 8 and 16 channels, LSTM hidden size 32.
    pub fn desk() -> Self {
        NetworkShape {
            conv_channels: vec![8, 16],
            kernel_size: 3,
            lstm_hidden: 32,
            padding: Padding::Same,
        }
    }

    /// Two 3×3 layers of 32 and 64 channels, LSTM hidden size 128.
    pub fn full() -> Self {
        NetworkShape {
            conv_channels: vec![32, 64],
            lstm_hidden: 128,
            ..Self::desk()
        }
    }
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self::desk()
    }
}

/// CNN per timestep, LSTM over time, dense head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Backbone {
    pub convs: Vec<Conv2dLayer>,
    pub lstm: LstmCell,
    pub head: DenseLayer,
    /// Extent of each input frame.
    pub grid: [usize; 2],
    pub horizon: usize,
}

impl Backbone {
    pub fn new(grid: [usize; 2], horizon: usize, shape: &NetworkShape, rng: &mut ChaCha8Rng) -> Result<Self> {
        if grid.contains(&0) || horizon == 0 || shape.lstm_hidden == 0 {
            return Err(Error::Parameter("grid, horizon and hidden size must be positive".into()));
        }
        let mut convs = Vec::with_capacity(shape.conv_channels.len());
        let mut in_ch = 1;
        let [mut h, mut w] = grid;
        for &out_ch in &shape.conv_channels {
            convs.push(Conv2dLayer::new(in_ch, out_ch, shape.kernel_size, shape.padding, rng)?);
            in_ch = out_ch;
            if shape.padding == Padding::Valid {
                if h < shape.kernel_size || w < shape.kernel_size {
                    return Err(Error::Parameter(format!(
                        "grid {grid:?} too small for {} valid convolutions",
                        shape.conv_channels.len()
                    )));
                }
                h -= shape.kernel_size - 1;
                w -= shape.kernel_size - 1;
            }
        }
        let flat = in_ch * h * w;
        let lstm = LstmCell::new(flat, shape.lstm_hidden, rng);
        let head = DenseLayer::new(shape.lstm_hidden, horizon, rng);
        Ok(Backbone {
            convs,
            lstm,
            head,
            grid,
            horizon,
        })
    }

    /// Runs the backbone on already-permuted frames. `vars` are the bound
    /// parameters in `params()` order.
    pub fn forward<'t>(&self, vars: &[Var<'t>], frames: &[Var<'t>]) -> Result<Var<'t>> {
        let expected = self.params().len();
        if vars.len() != expected {
            return Err(Error::Contract(format!(
                "backbone takes {expected} bound params, got {}",
                vars.len()
            )));
        }
        let Some(first) = frames.first() else {
            return Err(Error::shape("empty input window"));
        };
        let tape = first.tape();
        let (conv_vars, rest) = vars.split_at(2 * self.convs.len());
        let (lstm_vars, head_vars) = rest.split_at(3);
        let hidden = self.lstm.hidden_size();
        let mut h = tape.constant(Tensor::zeros(&[hidden]));
        let mut c = h;
        for frame in frames {
            if frame.shape() != self.grid {
                return Err(Error::shape(format!(
                    "frame {:?} for grid {:?}",
                    frame.shape(),
                    self.grid
                )));
            }
            let mut x = frame.reshape(&[1, self.grid[0], self.grid[1]])?;
            for (layer, lv) in self.convs.iter().zip(conv_vars.chunks(2)) {
                x = layer.forward(x, lv)?.relu();
            }
            let n = x.value().len();
            let features = x.reshape(&[n])?;
            (h, c) = lstm_step(features, h, c, lstm_vars)?;
        }
        self.head.forward(h, head_vars)
    }

    /// Binds parameters as constants (inference).
    pub fn bind_constants<'t>(&self, tape: &'t Tape) -> Vec<Var<'t>> {
        self.params()
            .into_iter()
            .map(|p| tape.constant(p.value.clone()))
            .collect()
    }
}

impl Module for Backbone {
    fn params(&self) -> Vec<&Param> {
        let mut out: Vec<&Param> = self.convs.iter().flat_map(Module::params).collect();
        out.extend(self.lstm.params());
        out.extend(self.head.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.convs.iter_mut().flat_map(Module::params_mut).collect();
        out.extend(self.lstm.params_mut());
        out.extend(self.head.params_mut());
        out
    }
}

/// How learned permutations are applied at inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PermutationMode {
    /// The tempered-softmax matrices at the current temperature.
    #[default]
    Soft,
    /// Row-wise argmax of the soft matrices, applied by index selection.
    Hard,
}

/// Optional permutation operator in front of the backbone. Each frame of a
/// window is permuted with the same matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forecaster {
    pub rco: Option<RcoState>,
    pub backbone: Backbone,
}

/// Parameters of a [`Forecaster`] bound to one tape.
pub struct BoundForecaster<'t> {
    /// Logit leaves per axis (enabled axes only).
    pub logits: Vec<Option<Var<'t>>>,
    pub theta: Vec<Var<'t>>,
}

impl BoundForecaster<'_> {
    /// All tracked leaves in [`Forecaster::params`] order.
    pub fn leaves(&self) -> Vec<Var<'_>> {
        self.logits.iter().flatten().chain(&self.theta).copied().collect()
    }
}

/// Precomputed permutations for repeated inference.
#[derive(Clone, Debug)]
pub enum InferencePermutation {
    Identity,
    Soft(Vec<Option<Tensor>>),
    Hard(Vec<Option<Vec<usize>>>),
}

impl Forecaster {
    /// Backbone weights come from a ChaCha8 stream seeded with `seed`; the
    /// operator logits are deterministic (all ones), so enabling it does not
    /// perturb the backbone initialization.
    pub fn new(
        grid: [usize; 2],
        horizon: usize,
        shape: &NetworkShape,
        rco: Option<RcoState>,
        seed: u64,
    ) -> Result<Self> {
        if let Some(r) = &rco {
            if r.axis_lengths() != grid {
                return Err(Error::shape(format!(
                    "operator axes {:?} for grid {grid:?}",
                    r.axis_lengths()
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Forecaster {
            rco,
            backbone: Backbone::new(grid, horizon, shape, &mut rng)?,
        })
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut out = self.rco.as_ref().map(RcoState::params).unwrap_or_default();
        out.extend(self.backbone.params());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = self.rco.as_mut().map(RcoState::params_mut).unwrap_or_default();
        out.extend(self.backbone.params_mut());
        out
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundForecaster<'t> {
        BoundForecaster {
            logits: self.rco.as_ref().map(|r| r.bind(tape)).unwrap_or_default(),
            theta: self.backbone.bind(tape),
        }
    }

    /// Tracked forward pass over one window of `(turbine, attribute)` frames
    /// using the soft permutations.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        bound: &BoundForecaster<'t>,
        window: &[Tensor],
        noise: Option<&[Option<Tensor>]>,
    ) -> Result<Var<'t>> {
        let perms = match &self.rco {
            Some(r) => Some(r.permutation_vars(&bound.logits, noise)?),
            None => None,
        };
        let frames = window
            .iter()
            .map(|f| {
                let x = tape.constant(f.clone());
                match &perms {
                    Some(p) => rco::permute(x, p),
                    None => Ok(x),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        self.backbone.forward(&bound.theta, &frames)
    }

    pub fn inference_permutation(&self, mode: PermutationMode) -> Result<InferencePermutation> {
        Ok(match (&self.rco, mode) {
            (None, _) => InferencePermutation::Identity,
            (Some(r), PermutationMode::Soft) => InferencePermutation::Soft(r.soft_matrices()?),
            (Some(r), PermutationMode::Hard) => InferencePermutation::Hard(r.hard_selections()?),
        })
    }

    /// Untracked prediction for one window.
    pub fn predict_with(&self, perm: &InferencePermutation, window: &[Tensor]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let theta = self.backbone.bind_constants(&tape);
        let frames = window
            .iter()
            .map(|f| {
                let x = match perm {
                    InferencePermutation::Identity => f.clone(),
                    InferencePermutation::Soft(p) => rco::permute_tensor(f, p)?,
                    InferencePermutation::Hard(s) => rco::permute_hard(f, s)?,
                };
                Ok(tape.constant(x))
            })
            .collect::<Result<Vec<_>>>()?;
        let out = self.backbone.forward(&theta, &frames)?;
        let values = out.value().data().to_vec();
        Ok(values)
    }

    pub fn predict(&self, window: &[Tensor], mode: PermutationMode) -> Result<Vec<f64>> {
        self.predict_with(&self.inference_permutation(mode)?, window)
    }
}
