use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SeriesTable;
use crate::error::{Error, Result};
use crate::rco;
use crate::tensor::Tensor;

/// Window geometry, target channel and split fractions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    /// Input length `t`.
    pub history: usize,
    /// Forecast length `s`.
    pub horizon: usize,
    pub target_turbine: usize,
    pub target_attribute: usize,
    pub train_fraction: f64,
    pub val_fraction: f64,
    /// Express labels in z-score units of the target attribute.
    pub normalize_labels: bool,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            history: 50,
            horizon: 6,
            target_turbine: 0,
            target_attribute: 0,
            train_fraction: 0.7,
            val_fraction: 0.1,
            normalize_labels: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Parameter(format!("unknown split {other:?}"))),
        }
    }
}

/// Per-attribute z-score statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Statistics of the target channel's attribute, used for labels.
    pub label_mean: f64,
    pub label_std: f64,
    /// Timesteps `[0, fit_end)` the statistics were computed from.
    pub fit_end: usize,
}

/// Stride-1 sliding windows over a normalized series, split chronologically.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindowedDataset {
    pub config: WindowConfig,
    pub stats: NormStats,
    /// One normalized `(turbine, attribute)` frame per timestep.
    frames: Vec<Tensor>,
    /// Target channel before normalization.
    raw_target: Vec<f64>,
    train: usize,
    val: usize,
}

impl WindowedDataset {
    /// Number of windows, `T − t − s + 1`.
    pub fn len(&self) -> usize {
        self.frames.len() + 1 - self.config.history - self.config.horizon
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn grid(&self) -> [usize; 2] {
        let s = self.frames[0].shape();
        [s[0], s[1]]
    }

    pub fn history(&self) -> usize {
        self.config.history
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    pub fn timesteps(&self) -> usize {
        self.frames.len()
    }

    pub fn split(&self, split: Split) -> Range<usize> {
        match split {
            Split::Train => 0..self.train,
            Split::Val => self.train..self.train + self.val,
            Split::Test => self.train + self.val..self.len(),
        }
    }

    /// The `t` normalized frames of window `i`.
    pub fn window(&self, i: usize) -> &[Tensor] {
        &self.frames[i..i + self.config.history]
    }

    pub fn raw_label(&self, i: usize) -> &[f64] {
        let start = i + self.config.history;
        &self.raw_target[start..start + self.config.horizon]
    }

    /// Training target for window `i`.
    pub fn label(&self, i: usize) -> Vec<f64> {
        let raw = self.raw_label(i);
        if !self.config.normalize_labels {
            return raw.to_vec();
        }
        raw.iter()
            .map(|v| (v - self.stats.label_mean) / self.stats.label_std)
            .collect()
    }

    /// Maps label-space values back to raw units.
    pub fn denormalize(&self, values: &[f64]) -> Vec<f64> {
        if !self.config.normalize_labels {
            return values.to_vec();
        }
        values
            .iter()
            .map(|v| v * self.stats.label_std + self.stats.label_mean)
            .collect()
    }

    /// A copy whose frames are reordered by hard row selections per axis.
    /// Labels are untouched; `config` still names the target's original
    /// position.
    pub fn permuted(&self, selections: &[Option<Vec<usize>>]) -> Result<WindowedDataset> {
        let frames = self
            .frames
            .iter()
            .map(|f| rco::permute_hard(f, selections))
            .collect::<Result<Vec<_>>>()?;
        let mut stats = self.stats.clone();
        if let Some(Some(sel)) = selections.get(1) {
            stats.mean = sel.iter().map(|&j| self.stats.mean[j]).collect();
            stats.std = sel.iter().map(|&j| self.stats.std[j]).collect();
        }
        Ok(WindowedDataset {
            frames,
            stats,
            ..self.clone()
        })
    }
}

/// Builds stride-1 windows and a chronological train/val/test split.
///
/// Normalization statistics are fitted on the timesteps touched by training
/// windows (inputs and labels), or by the first window when the training
/// split is empty.
pub fn make_windows(table: &SeriesTable, config: &WindowConfig) -> Result<WindowedDataset> {
    let (t, s) = (config.history, config.horizon);
    if t == 0 || s == 0 {
        return Err(Error::Parameter("history and horizon must be positive".into()));
    }
    let total = table.len();
    if total < t + s {
        return Err(Error::Contract(format!(
            "{total} timesteps cannot hold a window of {t} + {s}"
        )));
    }
    let [g, a] = table.grid();
    if config.target_turbine >= g || config.target_attribute >= a {
        return Err(Error::Parameter(format!(
            "target ({}, {}) outside grid {g}×{a}",
            config.target_turbine, config.target_attribute
        )));
    }
    let fractions_ok = (0.0..=1.0).contains(&config.train_fraction)
        && (0.0..=1.0).contains(&config.val_fraction)
        && config.train_fraction + config.val_fraction <= 1.0;
    if !fractions_ok {
        return Err(Error::Parameter("split fractions must lie in [0, 1] and sum to at most 1".into()));
    }

    let n = total - t - s + 1;
    let train = (config.train_fraction * n as f64).floor() as usize;
    let val = ((config.val_fraction * n as f64).floor() as usize).min(n - train);
    let fit_end = (train.max(1) + t + s - 1).min(total);

    let data = table.values.data();
    let frame_len = g * a;
    let mut mean = vec![0.0; a];
    let mut sq = vec![0.0; a];
    for step in 0..fit_end {
        for (k, v) in data[step * frame_len..(step + 1) * frame_len].iter().enumerate() {
            mean[k % a] += v;
        }
    }
    let count = (fit_end * g) as f64;
    mean.iter_mut().for_each(|m| *m /= count);
    for step in 0..fit_end {
        for (k, v) in data[step * frame_len..(step + 1) * frame_len].iter().enumerate() {
            sq[k % a] += (v - mean[k % a]).powi(2);
        }
    }
    let std: Vec<f64> = sq
        .iter()
        .map(|q| {
            let sd = (q / count).sqrt();
            if sd > 1e-12 {
                sd
            } else {
                1.0
            }
        })
        .collect();

    let frames = (0..total)
        .map(|step| {
            let values = data[step * frame_len..(step + 1) * frame_len]
                .iter()
                .enumerate()
                .map(|(k, v)| (v - mean[k % a]) / std[k % a])
                .collect();
            Tensor::new(vec![g, a], values)
        })
        .collect::<Result<Vec<_>>>()?;
    let raw_target = (0..total)
        .map(|step| table.value(step, config.target_turbine, config.target_attribute))
        .collect();
    Ok(WindowedDataset {
        config: config.clone(),
        stats: NormStats {
            label_mean: mean[config.target_attribute],
            label_std: std[config.target_attribute],
            mean,
            std,
            fit_end,
        },
        frames,
        raw_target,
        train,
        val,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(total: usize, g: usize, a: usize) -> SeriesTable {
        let values = (0..total * g * a).map(|v| v as f64).collect();
        SeriesTable::new(
            (0..total as i64).map(|t| t * 600).collect(),
            (0..g).map(|i| format!("T{i}")).collect(),
            (0..a).map(|i| format!("a{i}")).collect(),
            Tensor::new(vec![total, g, a], values).unwrap(),
        )
        .unwrap()
    }

    fn config(t: usize, s: usize) -> WindowConfig {
        WindowConfig {
            history: t,
            horizon: s,
            ..WindowConfig::default()
        }
    }

    #[test]
    fn window_counts() {
        assert_eq!(make_windows(&ramp(100, 2, 2), &config(50, 6)).unwrap().len(), 45);
        assert_eq!(make_windows(&ramp(56, 2, 2), &config(50, 6)).unwrap().len(), 1);
        assert!(matches!(
            make_windows(&ramp(55, 2, 2), &config(50, 6)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn first_label_is_steps_51_to_56() {
        let table = ramp(100, 2, 3);
        let mut cfg = config(50, 6);
        cfg.target_turbine = 1;
        cfg.target_attribute = 2;
        let d = make_windows(&table, &cfg).unwrap();
        let expected: Vec<f64> = (50..56).map(|step| table.value(step, 1, 2)).collect();
        assert_eq!(d.raw_label(0), expected.as_slice());
    }

    #[test]
    fn chronological_split() {
        let d = make_windows(&ramp(109, 1, 1), &config(5, 5)).unwrap();
        assert_eq!(d.len(), 100);
        assert_eq!(d.split(Split::Train), 0..70);
        assert_eq!(d.split(Split::Val), 70..80);
        assert_eq!(d.split(Split::Test), 80..100);
    }

    #[test]
    fn statistics_ignore_later_splits() {
        let mut table = ramp(109, 1, 1);
        let base = make_windows(&table, &config(5, 5)).unwrap();
        // Windows 0..70 touch timesteps 0..79; overwrite everything after.
        for v in &mut table.values.data_mut()[79..] {
            *v = 1e6;
        }
        let spiked = make_windows(&table, &config(5, 5)).unwrap();
        assert_eq!(base.stats, spiked.stats);
        assert_eq!(base.stats.fit_end, 79);
    }

    #[test]
    fn permuting_frames_keeps_labels() {
        let mut cfg = config(10, 3);
        cfg.target_attribute = 1;
        let d = make_windows(&ramp(100, 3, 2), &cfg).unwrap();
        let p = d.permuted(&[Some(vec![2, 0, 1]), Some(vec![1, 0])]).unwrap();
        assert_eq!(p.label(7), d.label(7));
        assert_eq!(p.window(7)[0].get(&[0, 0]), d.window(7)[0].get(&[2, 1]));
    }

    #[test]
    fn labels_normalize_and_denormalize() {
        let d = make_windows(&ramp(100, 2, 2), &config(10, 3)).unwrap();
        let back = d.denormalize(&d.label(4));
        for (a, b) in back.iter().zip(d.raw_label(4)) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
