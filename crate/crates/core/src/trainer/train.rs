use std::io::Write;
use std::path::Path;

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::autodiff::Tape;
use crate::data::{Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::metrics::{self, LossReport};
use crate::nn::{Forecaster, PermutationMode};
use crate::optim::Optimizer;
use crate::par::{self, Execution};
use crate::rco::{self, RcoState};
use crate::tensor::Tensor;

/// Salt mixed into the seed for the batch-order stream, so shuffling does
/// not share a stream with weight initialization.
const SHUFFLE_SALT: u64 = 0x5eed_0f_ba7c4;

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub report: LossReport,
    pub rmse: f64,
    /// Temperature used during the epoch.
    pub tau: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricLog {
    pub rows: Vec<EpochMetrics>,
}

impl MetricLog {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &EpochMetrics> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn last(&self, split: Split) -> Option<&EpochMetrics> {
        self.split(split).last()
    }

    /// `epoch,split,task_loss,reg_loss,total_loss,rmse,tau,gap_axis0,…`
    pub fn to_csv(&self) -> String {
        let axes = self.rows.first().map_or(0, |r| r.report.gaps.len());
        let mut out = String::from("epoch,split,task_loss,reg_loss,total_loss,rmse,tau");
        for k in 0..axes {
            out.push_str(&format!(",gap_axis{k}"));
        }
        out.push('\n');
        for r in &self.rows {
            let tau = r.tau.map(|t| t.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{}",
                r.epoch, r.split, r.report.task, r.report.regularizer, r.report.total, r.rmse, tau
            ));
            for g in &r.report.gaps {
                out.push(',');
                if let Some(g) = g {
                    out.push_str(&g.to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Forecaster,
    pub log: MetricLog,
}

/// Builds the untrained forecaster a config describes.
pub fn build_model(config: &TrainConfig, grid: [usize; 2], horizon: usize) -> Result<Forecaster> {
    config.validate()?;
    let rco = if config.rco_enabled {
        let mut state = RcoState::new(&grid, config.axis_enabled.clone(), config.gamma, config.lambda)?
            .with_tau_min(config.tau_min)?;
        state.gumbel_noise = config.gumbel_noise;
        Some(state)
    } else {
        None
    };
    Forecaster::new(grid, horizon, &config.network, rco, config.seed)
}

/// Epoch-at-a-time driver behind [`train`].
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Forecaster,
    rng: ChaCha8Rng,
    rco_optimizer: Optimizer,
    net_optimizer: Optimizer,
    epoch: usize,
}

impl Trainer {
    pub fn new(config: &TrainConfig, data: &WindowedDataset) -> Result<Self> {
        let model = build_model(config, data.grid(), data.horizon())?;
        Self::resume(config, data, model, 0)
    }

    /// Continues from an existing model. Optimizer moments start from zero.
    pub fn resume(config: &TrainConfig, data: &WindowedDataset, model: Forecaster, epoch: usize) -> Result<Self> {
        config.validate()?;
        if data.history() != config.history || data.horizon() != config.horizon {
            return Err(Error::Contract(format!(
                "dataset windows are t={}, s={} but the config asks for t={}, s={}",
                data.history(),
                data.horizon(),
                config.history,
                config.horizon
            )));
        }
        if model.backbone.grid != data.grid() {
            return Err(Error::shape(format!(
                "model grid {:?} vs dataset grid {:?}",
                model.backbone.grid,
                data.grid()
            )));
        }
        if data.split(Split::Train).is_empty() {
            return Err(Error::Contract("training split is empty".into()));
        }
        Ok(Trainer {
            config: config.clone(),
            model,
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_SALT),
            rco_optimizer: Optimizer::new(config.optimizer, config.rco_lr()),
            net_optimizer: Optimizer::new(config.optimizer, config.learning_rate),
            epoch,
        })
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// One pass over the training split followed by annealing. Returns the
    /// train row and, when the validation split is non-empty, a val row.
    pub fn run_epoch(&mut self, data: &WindowedDataset) -> Result<Vec<EpochMetrics>> {
        let mut order: Vec<usize> = data.split(Split::Train).collect();
        if !self.config.full_batch {
            order.shuffle(&mut self.rng);
        }
        let batch = if self.config.full_batch {
            order.len()
        } else {
            self.config.batch_size
        };
        let tau = self.model.rco.as_ref().map(|r| r.tau);
        let mut task_sum = 0.0;
        for indices in order.chunks(batch) {
            task_sum += self.step(data, indices)?;
        }
        let task = task_sum / order.len() as f64;

        let regularizer = self.regularizer_value()?;
        let gaps = self.gaps()?;
        let lambda = self.config.lambda;
        let mut rows = vec![EpochMetrics {
            epoch: self.epoch,
            split: Split::Train,
            report: LossReport::new(task, regularizer, lambda, gaps.clone()),
            rmse: task.sqrt(),
            tau,
        }];
        if !data.split(Split::Val).is_empty() {
            let eval = evaluate(&self.model, data, Split::Val, self.eval_mode(), self.config.execution)?;
            let mse = eval.rmse * eval.rmse;
            rows.push(EpochMetrics {
                epoch: self.epoch,
                split: Split::Val,
                report: LossReport::new(mse, regularizer, lambda, gaps),
                rmse: eval.rmse,
                tau,
            });
        }
        for r in &rows {
            info!(
                "epoch {:>4} {:<5} L_T {:.6} L_P {:.6} L {:.6} rmse {:.6} tau {}",
                r.epoch,
                r.split,
                r.report.task,
                r.report.regularizer,
                r.report.total,
                r.rmse,
                r.tau.map_or("-".into(), |t| format!("{t:.5}"))
            );
        }
        if let Some(r) = self.model.rco.as_mut() {
            r.anneal();
        }
        self.epoch += 1;
        Ok(rows)
    }

    pub fn eval_mode(&self) -> PermutationMode {
        if self.config.hard_eval {
            PermutationMode::Hard
        } else {
            PermutationMode::Soft
        }
    }

    fn regularizer_value(&self) -> Result<f64> {
        let Some(r) = &self.model.rco else { return Ok(0.0) };
        let soft: Vec<Tensor> = r.soft_matrices()?.into_iter().flatten().collect();
        rco::regularization_value(&soft, r.gamma)
    }

    fn gaps(&self) -> Result<Vec<Option<f64>>> {
        match &self.model.rco {
            Some(r) => r.gaps(),
            None => Ok(vec![None; 2]),
        }
    }

    fn non_finite(&self) -> Error {
        let r = self.model.rco.as_ref();
        Error::NonFiniteLoss {
            epoch: self.epoch,
            tau: r.map_or(f64::NAN, |r| r.tau),
            max_abs_logit: r.map_or(0.0, RcoState::max_abs_logit),
        }
    }

    /// One optimizer step on the batch; returns the summed task loss.
    fn step(&mut self, data: &WindowedDataset, indices: &[usize]) -> Result<f64> {
        let noise = self.model.rco.as_ref().and_then(|r| r.sample_noise(&mut self.rng));
        let (task_sum, mut grads) =
            batch_gradients(&self.model, data, indices, noise.as_deref(), self.config.execution)?;
        let scale = 1.0 / indices.len() as f64;
        for g in &mut grads {
            *g = g.scale(scale);
        }
        if let Some(reg) = self.regularizer_gradients(noise.as_deref())? {
            for (g, r) in grads.iter_mut().zip(reg) {
                g.add_assign(&r)?;
            }
        }
        if !task_sum.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(self.non_finite());
        }
        let n_rco = self.model.rco.as_ref().map_or(0, |r| r.params().len());
        let mut params = self.model.params_mut();
        for (p, g) in params.iter_mut().zip(&grads) {
            p.accumulate_grad(g)?;
        }
        let (rco_params, net_params) = params.split_at_mut(n_rco);
        self.rco_optimizer.step(rco_params);
        self.net_optimizer.step(net_params);
        debug!("step over {} windows, mean L_T {:.6}", indices.len(), task_sum * scale);
        Ok(task_sum)
    }

    /// `λ·∂L_P/∂W` per enabled axis, computed on its own tape.
    fn regularizer_gradients(&self, noise: Option<&[Option<Tensor>]>) -> Result<Option<Vec<Tensor>>> {
        let Some(r) = &self.model.rco else { return Ok(None) };
        if r.params().is_empty() || self.config.lambda == 0.0 {
            return Ok(None);
        }
        let tape = Tape::new();
        let bound = r.bind(&tape);
        let perms: Vec<_> = r.permutation_vars(&bound, noise)?.into_iter().flatten().collect();
        let loss = rco::regularization_loss(&perms, r.gamma)?.scale(self.config.lambda);
        let grads = tape.backward(loss)?;
        Ok(Some(bound.iter().flatten().map(|w| grads.wrt(*w)).collect()))
    }
}

/// Per-window gradients of the task loss, summed in window order. Returns
/// the summed loss and one gradient per parameter in
/// [`Forecaster::params`] order.
pub fn batch_gradients(
    model: &Forecaster,
    data: &WindowedDataset,
    indices: &[usize],
    noise: Option<&[Option<Tensor>]>,
    execution: Execution,
) -> Result<(f64, Vec<Tensor>)> {
    let per_window = par::map(indices, execution, |&i| window_gradient(model, data, i, noise));
    let mut loss = 0.0;
    let mut total: Option<Vec<Tensor>> = None;
    for result in per_window {
        let (l, grads) = result?;
        loss += l;
        match total.as_mut() {
            None => total = Some(grads),
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.add_assign(g)?;
                }
            }
        }
    }
    let total = total.ok_or_else(|| Error::Contract("empty batch".into()))?;
    Ok((loss, total))
}

fn window_gradient(
    model: &Forecaster,
    data: &WindowedDataset,
    index: usize,
    noise: Option<&[Option<Tensor>]>,
) -> Result<(f64, Vec<Tensor>)> {
    let tape = Tape::new();
    let bound = model.bind(&tape);
    let prediction = model.forward(&tape, &bound, data.window(index), noise)?;
    let loss = metrics::task_loss(prediction, &data.label(index))?;
    let value = loss.item();
    let mut grads = tape.backward(loss)?;
    Ok((value, bound.leaves().into_iter().map(|v| grads.take(v)).collect()))
}

/// Runs `config.epochs` epochs from a fresh model.
pub fn train(config: &TrainConfig, data: &WindowedDataset) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config, data)?;
    let mut log = MetricLog::default();
    for _ in 0..config.epochs {
        log.rows.extend(trainer.run_epoch(data)?);
    }
    Ok(TrainOutcome {
        model: trainer.model,
        log,
    })
}

/// Predictions and RMSE over one split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub split: Split,
    pub mode: PermutationMode,
    pub rmse: f64,
    /// Index of the first window in the split.
    pub first_window: usize,
    pub labels: Vec<Vec<f64>>,
    pub predictions: Vec<Vec<f64>>,
}

impl Evaluation {
    /// `window,step,label,prediction`, one row per forecast entry.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["window", "step", "label", "prediction"])?;
        for (k, (l, p)) in self.labels.iter().zip(&self.predictions).enumerate() {
            for (step, (lv, pv)) in l.iter().zip(p).enumerate() {
                w.write_record([
                    (self.first_window + k).to_string(),
                    (step + 1).to_string(),
                    lv.to_string(),
                    pv.to_string(),
                ])?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// RMSE of `model` over a split, with soft or hardened permutations.
pub fn evaluate(
    model: &Forecaster,
    data: &WindowedDataset,
    split: Split,
    mode: PermutationMode,
    execution: Execution,
) -> Result<Evaluation> {
    let range = data.split(split);
    let indices: Vec<usize> = range.clone().collect();
    let perm = model.inference_permutation(mode)?;
    let predictions = par::map(&indices, execution, |&i| model.predict_with(&perm, data.window(i)))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<Vec<f64>> = indices.iter().map(|&i| data.label(i)).collect();
    let rmse = metrics::rmse(&labels, &predictions)?;
    Ok(Evaluation {
        split,
        mode,
        rmse,
        first_window: range.start,
        labels,
        predictions,
    })
}
