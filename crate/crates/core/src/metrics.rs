//! Task loss, the combined training objective and evaluation metrics.
//!
//! Both the training loss and RMSE average over every element (samples ×
//! horizon) rather than taking per-sample norms, so values are comparable
//! across horizons.

use serde::{Deserialize, Serialize};

use crate::autodiff::Var;
use crate::error::{Error, Result};

/// Mean squared error between a rank-1 prediction and its label.
pub fn task_loss<'t>(prediction: Var<'t>, label: &[f64]) -> Result<Var<'t>> {
    if prediction.shape() != [label.len()] {
        return Err(Error::shape(format!(
            "prediction {:?} vs label of length {}",
            prediction.shape(),
            label.len()
        )));
    }
    let target = prediction
        .tape()
        .constant(crate::Tensor::vector(label.to_vec()));
    Ok(prediction.sub(target)?.square().mean())
}

/// `L = L_T + λ·L_P`.
pub fn total_loss<'t>(task: Var<'t>, regularizer: Var<'t>, lambda: f64) -> Result<Var<'t>> {
    for v in [task, regularizer] {
        if v.value().len() != 1 {
            return Err(Error::shape("total_loss takes scalar terms"));
        }
    }
    task.add(regularizer.scale(lambda))
}

/// Root of the element-wise mean squared error over `n × s` arrays.
pub fn rmse(labels: &[Vec<f64>], predictions: &[Vec<f64>]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Contract("rmse over zero samples".into()));
    }
    if labels.len() != predictions.len() {
        return Err(Error::shape(format!(
            "{} labels vs {} predictions",
            labels.len(),
            predictions.len()
        )));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (l, p) in labels.iter().zip(predictions) {
        if l.len() != p.len() {
            return Err(Error::shape("label and prediction horizons differ"));
        }
        sum += l.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        count += l.len();
    }
    if count == 0 {
        return Err(Error::Contract("rmse over zero-length horizons".into()));
    }
    Ok((sum / count as f64).sqrt())
}

/// Loss breakdown for one epoch and split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub task: f64,
    pub regularizer: f64,
    pub lambda: f64,
    pub total: f64,
    /// Column-balance gap per axis (`None` for axes without a learned matrix).
    pub gaps: Vec<Option<f64>>,
}

impl LossReport {
    pub fn new(task: f64, regularizer: f64, lambda: f64, gaps: Vec<Option<f64>>) -> Self {
        LossReport {
            task,
            regularizer,
            lambda,
            total: task + lambda * regularizer,
            gaps,
        }
    }
}

/// Mean and sample standard deviation, rendered as `mean±std`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let p = f.precision().unwrap_or(4);
        write!(f, "{:.p$}±{:.p$}", self.mean, self.std)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::Tensor;

    #[test]
    fn perfect_fit_has_zero_loss() {
        let tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![1.0, -2.0]));
        assert_eq!(task_loss(p, &[1.0, -2.0]).unwrap().item(), 0.0);
    }

    #[test]
    fn hand_evaluated_loss_and_gradient() {
        let tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        let l = task_loss(p, &[0.0, 0.0]).unwrap();
        assert_eq!(l.item(), 12.5);
        let g = tape.backward(l).unwrap().wrt(p);
        // 2 (pred - label) / s
        assert_eq!(g.data(), &[3.0, 4.0]);
    }

    #[test]
    fn loss_length_mismatch() {
        let tape = Tape::new();
        let p = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        assert!(task_loss(p, &[0.0]).is_err());
    }

    #[test]
    fn total_loss_examples() {
        let tape = Tape::new();
        let lt = tape.constant(Tensor::scalar(0.5));
        let lp = tape.constant(Tensor::scalar(0.2));
        assert!((total_loss(lt, lp, 1.0).unwrap().item() - 0.7).abs() < 1e-15);
        assert_eq!(total_loss(lt, lp, 0.0).unwrap().item(), 0.5);
        let zero = tape.constant(Tensor::scalar(0.0));
        assert_eq!(total_loss(lt, zero, 3.0).unwrap().item(), 0.5);
    }

    #[test]
    fn rmse_examples() {
        let labels = vec![vec![0.0, 0.0]];
        assert_eq!(rmse(&labels, &labels).unwrap(), 0.0);
        let r = rmse(&labels, &[vec![3.0, 4.0]]).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-15);
        let base = vec![vec![1.0, 2.0], vec![-1.0, 0.5]];
        let shifted: Vec<Vec<f64>> = base.iter().map(|r| r.iter().map(|v| v - 0.75).collect()).collect();
        assert!((rmse(&base, &shifted).unwrap() - 0.75).abs() < 1e-15);
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn report_total_is_exact() {
        let r = LossReport::new(0.5, 0.2, 1.0, vec![]);
        assert_eq!(r.total, 0.5 + 1.0 * 0.2);
    }

    #[test]
    fn mean_std_format() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!(m.mean, 2.0);
        assert_eq!(m.std, 1.0);
        assert_eq!(format!("{m:.2}"), "2.00±1.00");
    }
}
