use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, Trainer};
use crate::data::{Split, WindowedDataset};
use crate::error::{Error, Result};
use crate::nn::PermutationMode;

/// Wall-clock comparison of the same run with and without the operator.
/// Times are medians in seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub epochs: usize,
    pub train_epoch_baseline: f64,
    pub train_epoch_rco: f64,
    pub train_ratio: f64,
    pub infer_sample_baseline: f64,
    pub infer_sample_rco: f64,
    pub infer_ratio: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Trains both variants for `epochs` epochs, alternating epoch by epoch so
/// drift in machine load hits both equally, then times per-window inference
/// with hardened permutations over `inference_rounds` passes of the
/// validation split (training split if validation is empty).
pub fn timing_report(
    config: &TrainConfig,
    data: &WindowedDataset,
    epochs: usize,
    inference_rounds: usize,
) -> Result<TimingReport> {
    if epochs == 0 || inference_rounds == 0 {
        return Err(Error::Parameter("timing needs at least one epoch and one round".into()));
    }
    let variant = |rco: bool| TrainConfig {
        rco_enabled: rco,
        ..config.clone()
    };
    let mut baseline = Trainer::new(&variant(false), data)?;
    let mut with_rco = Trainer::new(&variant(true), data)?;
    let (mut base_times, mut rco_times) = (Vec::new(), Vec::new());
    for e in 0..epochs {
        // Alternate which variant goes first.
        let order: [(bool, &mut Trainer); 2] = if e % 2 == 0 {
            [(false, &mut baseline), (true, &mut with_rco)]
        } else {
            [(true, &mut with_rco), (false, &mut baseline)]
        };
        for (is_rco, trainer) in order {
            let started = Instant::now();
            trainer.run_epoch(data)?;
            let secs = started.elapsed().as_secs_f64();
            if is_rco {
                rco_times.push(secs);
            } else {
                base_times.push(secs);
            }
        }
    }

    let split = if data.split(Split::Val).is_empty() {
        Split::Train
    } else {
        Split::Val
    };
    let windows: Vec<usize> = data.split(split).collect();
    let base_perm = baseline.model.inference_permutation(PermutationMode::Hard)?;
    let rco_perm = with_rco.model.inference_permutation(PermutationMode::Hard)?;
    let (mut base_inf, mut rco_inf) = (Vec::new(), Vec::new());
    for round in 0..inference_rounds {
        for first_rco in [round % 2 == 1, round % 2 == 0] {
            let (model, perm, sink) = if first_rco {
                (&with_rco.model, &rco_perm, &mut rco_inf)
            } else {
                (&baseline.model, &base_perm, &mut base_inf)
            };
            let started = Instant::now();
            for &i in &windows {
                std::hint::black_box(model.predict_with(perm, data.window(i))?);
            }
            sink.push(started.elapsed().as_secs_f64() / windows.len() as f64);
        }
    }

    let train_epoch_baseline = median(base_times);
    let train_epoch_rco = median(rco_times);
    let infer_sample_baseline = median(base_inf);
    let infer_sample_rco = median(rco_inf);
    Ok(TimingReport {
        epochs,
        train_epoch_baseline,
        train_epoch_rco,
        train_ratio: train_epoch_rco / train_epoch_baseline,
        infer_sample_baseline,
        infer_sample_rco,
        infer_ratio: infer_sample_rco / infer_sample_baseline,
    })
}

#[cfg(test)]
mod tests {
    use super::median;

    #[test]
    fn median_of_odd_and_even() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
