//! The permutation operator: one learnable logit matrix per tensor axis,
//! relaxed to a right-stochastic matrix by a tempered row softmax and applied
//! axis by axis ahead of the convolutional backbone.
//!
//! For an input `X₀` of rank K the operator computes, for `k = 1..K`,
//!
//! ```text
//! X_k = SwapAxes(P_k · SwapAxes(X_{k-1}, 1, k), 1, k)
//! P_kij = exp(W_kij / τ) / Σ_u exp(W_kiu / τ)
//! ```
//!
//! and contributes the column-balance penalty
//!
//! ```text
//! L_P = Σ_k ReLU( (1/n_k) Σ_j (Σ_i P_kij − 1)² − γ·n_k )
//! ```
//!
//! to the training loss. Axes can be disabled, in which case `P_k` is the
//! identity and the axis is left untouched.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::optim::Param;
use crate::tensor::Tensor;

/// Multiplier applied to τ once per epoch.
pub const ANNEAL_FACTOR: f64 = 0.9;
pub const DEFAULT_TAU_MIN: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RcoState {
    /// Logit matrix `W_k` per axis (`n_k × n_k`). Disabled axes keep theirs
    /// untouched.
    pub logits: Vec<Param>,
    pub tau: f64,
    pub tau_min: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub axis_enabled: Vec<bool>,
    /// Perturb logits with standard Gumbel noise before the softmax.
    #[serde(default)]
    pub gumbel_noise: bool,
}

impl RcoState {
    /// Logits filled with ones and `τ = 1`.
    pub fn new(axis_lengths: &[usize], axis_enabled: Vec<bool>, gamma: f64, lambda: f64) -> Result<Self> {
        if axis_lengths.len() != axis_enabled.len() {
            return Err(Error::Parameter(format!(
                "{} axis lengths but {} enable flags",
                axis_lengths.len(),
                axis_enabled.len()
            )));
        }
        check_gamma(gamma)?;
        if !(lambda >= 0.0) {
            return Err(Error::Parameter(format!("lambda must be >= 0, got {lambda}")));
        }
        Ok(RcoState {
            logits: axis_lengths
                .iter()
                .map(|&n| Param::new(Tensor::ones(&[n, n])))
                .collect(),
            tau: 1.0,
            tau_min: DEFAULT_TAU_MIN,
            gamma,
            lambda,
            axis_enabled,
            gumbel_noise: false,
        })
    }

    pub fn with_tau_min(mut self, tau_min: f64) -> Result<Self> {
        if !(tau_min > 0.0) {
            return Err(Error::Parameter(format!("tau floor must be > 0, got {tau_min}")));
        }
        self.tau_min = tau_min;
        Ok(self)
    }

    pub fn rank(&self) -> usize {
        self.logits.len()
    }

    pub fn axis_lengths(&self) -> Vec<usize> {
        self.logits.iter().map(|p| p.value.shape()[0]).collect()
    }

    pub fn enabled_axes(&self) -> impl Iterator<Item = usize> + '_ {
        self.axis_enabled
            .iter()
            .enumerate()
            .filter_map(|(k, &on)| on.then_some(k))
    }

    /// Trainable logits, enabled axes only, in axis order.
    pub fn params(&self) -> Vec<&Param> {
        self.enabled_axes().map(|k| &self.logits[k]).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let enabled = self.axis_enabled.clone();
        self.logits
            .iter_mut()
            .zip(enabled)
            .filter_map(|(p, on)| on.then_some(p))
            .collect()
    }

    /// One annealing step: `τ ← max(0.9·τ, τ_min)`.
    pub fn anneal(&mut self) {
        self.tau = (self.tau * ANNEAL_FACTOR).max(self.tau_min);
    }

    pub fn max_abs_logit(&self) -> f64 {
        self.params().iter().fold(0.0, |m, p| m.max(p.value.max_abs()))
    }

    /// Current soft matrices `P_k` (`None` for disabled axes).
    pub fn soft_matrices(&self) -> Result<Vec<Option<Tensor>>> {
        self.logits
            .iter()
            .zip(&self.axis_enabled)
            .map(|(w, &on)| on.then(|| soft_permutation_tensor(&w.value, self.tau)).transpose())
            .collect()
    }

    pub fn hard_matrices(&self) -> Result<Vec<Option<Tensor>>> {
        self.soft_matrices()?
            .into_iter()
            .map(|p| p.map(|p| harden(&p)).transpose())
            .collect()
    }

    /// Row selections of the hardened matrices: entry `i` of axis `k` is the
    /// source index copied to position `i`.
    pub fn hard_selections(&self) -> Result<Vec<Option<Vec<usize>>>> {
        self.soft_matrices()?
            .into_iter()
            .map(|p| p.map(|p| p.argmax_rows()).transpose())
            .collect()
    }

    /// Per-axis column-balance gaps of the current soft matrices.
    pub fn gaps(&self) -> Result<Vec<Option<f64>>> {
        self.soft_matrices()?
            .into_iter()
            .map(|p| p.map(|p| doubly_stochastic_gap(&p)).transpose())
            .collect()
    }

    /// Standard Gumbel noise for every enabled axis, when noise is on.
    pub fn sample_noise(&self, rng: &mut impl Rng) -> Option<Vec<Option<Tensor>>> {
        self.gumbel_noise.then(|| {
            self.logits
                .iter()
                .zip(&self.axis_enabled)
                .map(|(w, &on)| on.then(|| gumbel(w.value.shape(), rng)))
                .collect()
        })
    }

    /// Binds the enabled logits to `tape` as tracked leaves.
    pub fn bind<'t>(&self, tape: &'t Tape) -> Vec<Option<Var<'t>>> {
        self.logits
            .iter()
            .zip(&self.axis_enabled)
            .map(|(w, &on)| on.then(|| tape.leaf(w.value.clone())))
            .collect()
    }

    /// Soft permutation vars for bound logits, with optional additive noise.
    pub fn permutation_vars<'t>(
        &self,
        bound: &[Option<Var<'t>>],
        noise: Option<&[Option<Tensor>]>,
    ) -> Result<Vec<Option<Var<'t>>>> {
        bound
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let Some(w) = w else { return Ok(None) };
                let logits = match noise.and_then(|n| n[k].as_ref()) {
                    Some(n) => w.add(w.tape().constant(n.clone()))?,
                    None => *w,
                };
                soft_permutation(logits, self.tau).map(Some)
            })
            .collect()
    }

    pub fn exports(&self) -> Result<Vec<PermutationExport>> {
        let soft = self.soft_matrices()?;
        let mut out = Vec::new();
        for (axis, p) in soft.into_iter().enumerate() {
            let Some(p) = p else { continue };
            out.push(PermutationExport {
                axis,
                n: p.shape()[0],
                hard: harden(&p)?.rows()?,
                soft: p.rows()?,
                tau: self.tau,
                gamma: self.gamma,
            });
        }
        Ok(out)
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Parameter(format!("gamma must lie in [0, 1], got {gamma}")));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if !(tau > 0.0) {
        return Err(Error::Parameter(format!("temperature must be > 0, got {tau}")));
    }
    Ok(())
}

fn gumbel(shape: &[usize], rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            -(-u.ln()).ln()
        })
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// `P = softmax_rows(W / τ)`, tracked.
pub fn soft_permutation<'t>(logits: Var<'t>, tau: f64) -> Result<Var<'t>> {
    check_tau(tau)?;
    logits.scale(1.0 / tau).softmax_rows()
}

pub fn soft_permutation_tensor(logits: &Tensor, tau: f64) -> Result<Tensor> {
    check_tau(tau)?;
    logits.scale(1.0 / tau).softmax_rows()
}

fn check_perms(shape: &[usize], sides: impl Iterator<Item = (usize, Option<usize>)>) -> Result<()> {
    for (k, side) in sides {
        if let Some(n) = side {
            if shape.get(k) != Some(&n) {
                return Err(Error::shape(format!(
                    "permutation for axis {k} has side {n}, tensor shape is {shape:?}"
                )));
            }
        }
    }
    Ok(())
}

/// Applies `P_k` along every axis that has one, in axis order.
pub fn permute<'t>(x: Var<'t>, perms: &[Option<Var<'t>>]) -> Result<Var<'t>> {
    let shape = x.shape();
    if perms.len() != shape.len() {
        return Err(Error::shape(format!(
            "{} permutation slots for a rank-{} tensor",
            perms.len(),
            shape.len()
        )));
    }
    check_perms(
        &shape,
        perms
            .iter()
            .enumerate()
            .map(|(k, p)| (k, p.as_ref().map(|p| p.shape()[0]))),
    )?;
    let mut x = x;
    for (k, p) in perms.iter().enumerate() {
        let Some(p) = p else { continue };
        let front = if k == 0 { x } else { x.swap_axes(0, k)? };
        let front_shape = front.shape();
        let n = front_shape[0];
        let rest: usize = front_shape[1..].iter().product();
        let flat = front.reshape(&[n, rest])?;
        let mixed = p.matmul(flat)?.reshape(&front_shape)?;
        x = if k == 0 { mixed } else { mixed.swap_axes(0, k)? };
    }
    Ok(x)
}

/// Untracked counterpart of [`permute`].
pub fn permute_tensor(x: &Tensor, perms: &[Option<Tensor>]) -> Result<Tensor> {
    if perms.len() != x.rank() {
        return Err(Error::shape(format!(
            "{} permutation slots for a rank-{} tensor",
            perms.len(),
            x.rank()
        )));
    }
    let mut x = x.clone();
    for (k, p) in perms.iter().enumerate() {
        let Some(p) = p else { continue };
        x = if k == 0 {
            Tensor::mode1_matmul(p, &x)?
        } else {
            Tensor::mode1_matmul(p, &x.swap_axes(0, k)?)?.swap_axes(0, k)?
        };
    }
    Ok(x)
}

/// Applies hard (one-hot row) permutations by index selection: position `i`
/// along axis `k` takes source index `selections[k][i]`. Equivalent to
/// [`permute_tensor`] with the matching 0/1 matrices.
pub fn permute_hard(x: &Tensor, selections: &[Option<Vec<usize>>]) -> Result<Tensor> {
    if selections.len() != x.rank() {
        return Err(Error::shape(format!(
            "{} selection slots for a rank-{} tensor",
            selections.len(),
            x.rank()
        )));
    }
    check_perms(
        x.shape(),
        selections.iter().enumerate().map(|(k, s)| (k, s.as_ref().map(Vec::len))),
    )?;
    for (k, sel) in selections.iter().enumerate() {
        if let Some(sel) = sel {
            if sel.iter().any(|&j| j >= x.shape()[k]) {
                return Err(Error::shape(format!("selection index out of range on axis {k}")));
            }
        }
    }
    let shape = x.shape();
    let strides = x.strides();
    let rank = shape.len();
    let mut out = Vec::with_capacity(x.len());
    let mut index = vec![0usize; rank];
    for _ in 0..x.len() {
        let offset: usize = (0..rank)
            .map(|k| {
                let i = selections[k].as_ref().map_or(index[k], |s| s[index[k]]);
                i * strides[k]
            })
            .sum();
        out.push(x.data()[offset]);
        for ax in (0..rank).rev() {
            index[ax] += 1;
            if index[ax] < shape[ax] {
                break;
            }
            index[ax] = 0;
        }
    }
    Tensor::new(shape.to_vec(), out)
}

/// Column-balance penalty over the given soft permutations.
pub fn regularization_loss<'t>(perms: &[Var<'t>], gamma: f64) -> Result<Var<'t>> {
    check_gamma(gamma)?;
    let mut total: Option<Var<'t>> = None;
    for p in perms {
        let shape = p.shape();
        let [n, m] = shape[..] else {
            return Err(Error::shape("permutation must be a matrix"));
        };
        if n != m {
            return Err(Error::shape(format!("permutation must be square, got {shape:?}")));
        }
        let nf = n as f64;
        let term = p
            .sum_axis(0)?
            .add_scalar(-1.0)
            .square()
            .sum()
            .scale(1.0 / nf)
            .add_scalar(-gamma * nf)
            .relu();
        total = Some(match total {
            Some(t) => t.add(term)?,
            None => term,
        });
    }
    total.ok_or_else(|| Error::Contract("regularization over zero axes".into()))
}

/// Untracked value of [`regularization_loss`]; zero for an empty list.
pub fn regularization_value(perms: &[Tensor], gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let mut total = 0.0;
    for p in perms {
        let n = p.as_matrix()?.0 as f64;
        total += (doubly_stochastic_gap(p)? / n - gamma * n).max(0.0);
    }
    Ok(total)
}

/// One-hot rows at each row's argmax (lowest index wins ties).
pub fn harden(p: &Tensor) -> Result<Tensor> {
    let (rows, cols) = p.as_matrix()?;
    let mut out = Tensor::zeros(&[rows, cols]);
    for (i, j) in p.argmax_rows()?.into_iter().enumerate() {
        out.data_mut()[i * cols + j] = 1.0;
    }
    Ok(out)
}

/// `Σ_j (Σ_i P_ij − 1)²`: zero exactly when every column sums to one.
pub fn doubly_stochastic_gap(p: &Tensor) -> Result<f64> {
    let (rows, cols) = p.as_matrix()?;
    if rows != cols {
        return Err(Error::shape(format!("gap needs a square matrix, got {:?}", p.shape())));
    }
    Ok(p.sum_axis(0)?.data().iter().map(|c| (c - 1.0).powi(2)).sum())
}

/// Plot-ready snapshot of one learned matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationExport {
    pub axis: usize,
    pub n: usize,
    pub soft: Vec<Vec<f64>>,
    pub hard: Vec<Vec<f64>>,
    pub tau: f64,
    pub gamma: f64,
}

/// Writes a matrix as headerless row-major CSV.
pub fn write_matrix_csv(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for row in rows {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(f, "{}", line.join(",")).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn symmetric_logits_give_uniform_rows() {
        let p = soft_permutation_tensor(&Tensor::zeros(&[3, 3]), 1.0).unwrap();
        for v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn log_two_logit() {
        let p = soft_permutation_tensor(&mat(&[&[std::f64::consts::LN_2, 0.0], &[0.0, 0.0]]), 1.0).unwrap();
        assert!((p.data()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.data()[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn low_temperature_approaches_one_hot() {
        let p = soft_permutation_tensor(&mat(&[&[1.0, 0.0, 0.0]]), 0.01).unwrap();
        assert!(p.data()[0] >= 1.0 - 1e-6);
    }

    #[test]
    fn nonpositive_temperature_is_rejected() {
        assert!(soft_permutation_tensor(&Tensor::zeros(&[2, 2]), 0.0).is_err());
        assert!(soft_permutation_tensor(&Tensor::zeros(&[2, 2]), -1.0).is_err());
    }

    #[test]
    fn permute_examples() {
        let x = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let swap = mat(&[&[0.0, 1.0], &[1.0, 0.0]]);
        let rows = permute_tensor(&x, &[Some(swap.clone()), Some(Tensor::eye(2))]).unwrap();
        assert_eq!(rows, mat(&[&[3.0, 4.0], &[1.0, 2.0]]));
        let cols = permute_tensor(&x, &[Some(Tensor::eye(2)), Some(swap)]).unwrap();
        assert_eq!(cols, mat(&[&[2.0, 1.0], &[4.0, 3.0]]));
        let same = permute_tensor(&x, &[Some(Tensor::eye(2)), Some(Tensor::eye(2))]).unwrap();
        assert_eq!(same, x);
    }

    #[test]
    fn permute_checks_sides() {
        let x = Tensor::zeros(&[2, 3]);
        assert!(permute_tensor(&x, &[Some(Tensor::eye(3)), None]).is_err());
        assert!(permute_hard(&x, &[None, Some(vec![0, 1])]).is_err());
        let tape = Tape::new();
        let xv = tape.constant(x);
        let p = tape.constant(Tensor::eye(2));
        assert!(permute(xv, &[None, Some(p)]).is_err());
        assert!(permute(xv, &[Some(p)]).is_err());
    }

    #[test]
    fn regularizer_examples() {
        let tape = Tape::new();
        let eye = tape.constant(Tensor::eye(4));
        for gamma in [0.0, 0.3, 1.0] {
            assert_eq!(regularization_loss(&[eye], gamma).unwrap().item(), 0.0);
        }
        let mut one_col = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            one_col.data_mut()[i * 4] = 1.0;
        }
        let p = tape.constant(one_col.clone());
        assert_eq!(regularization_loss(&[p], 0.0).unwrap().item(), 3.0);
        assert_eq!(regularization_loss(&[p], 1.0).unwrap().item(), 0.0);
        assert_eq!(regularization_value(&[one_col], 0.0).unwrap(), 3.0);
        assert!(regularization_loss(&[p], 1.5).is_err());
        assert!(regularization_loss(&[p], -0.1).is_err());
    }

    #[test]
    fn anneal_schedule() {
        let mut s = RcoState::new(&[2], vec![true], 0.5, 1.0).unwrap();
        assert_eq!(s.tau, 1.0);
        s.anneal();
        s.anneal();
        assert_eq!(s.tau, 1.0 * 0.9 * 0.9);
        assert!((s.tau - 0.81).abs() < 1e-15);
        for _ in 0..200 {
            s.anneal();
        }
        assert_eq!(s.tau, DEFAULT_TAU_MIN);
    }

    #[test]
    fn harden_examples() {
        assert_eq!(harden(&mat(&[&[0.98, 0.01, 0.01]])).unwrap(), mat(&[&[1.0, 0.0, 0.0]]));
        assert_eq!(harden(&mat(&[&[0.5, 0.5]])).unwrap(), mat(&[&[1.0, 0.0]]));
        let soft = mat(&[&[0.7, 0.2, 0.1], &[0.1, 0.8, 0.1], &[0.2, 0.2, 0.6]]);
        assert_eq!(harden(&soft).unwrap(), Tensor::eye(3));
    }

    #[test]
    fn gap_examples() {
        assert_eq!(doubly_stochastic_gap(&Tensor::eye(3)).unwrap(), 0.0);
        assert_eq!(doubly_stochastic_gap(&mat(&[&[1.0, 0.0], &[1.0, 0.0]])).unwrap(), 2.0);
        let uniform = Tensor::full(&[4, 4], 0.25);
        assert_eq!(doubly_stochastic_gap(&uniform).unwrap(), 0.0);
    }

    #[test]
    fn init_is_all_ones() {
        let s = RcoState::new(&[3, 4], vec![true, false], 0.0, 1.0).unwrap();
        assert!(s.logits.iter().all(|w| w.value.data().iter().all(|&v| v == 1.0)));
        assert_eq!(s.params().len(), 1);
        assert_eq!(s.soft_matrices().unwrap()[1], None);
        assert!(RcoState::new(&[3], vec![true], 2.0, 1.0).is_err());
        assert!(RcoState::new(&[3], vec![true, true], 0.0, 1.0).is_err());
    }

    #[test]
    fn hard_gather_matches_matrix_product() {
        let x = Tensor::new(vec![2, 3, 2], (0..12).map(f64::from).collect()).unwrap();
        let sel = vec![Some(vec![1, 1]), None, Some(vec![1, 0])];
        let mats: Vec<Option<Tensor>> = sel
            .iter()
            .zip([2, 3, 2])
            .map(|(s, n): (&Option<Vec<usize>>, usize)| {
                s.as_ref().map(|s| {
                    let mut m = Tensor::zeros(&[n, n]);
                    for (i, &j) in s.iter().enumerate() {
                        m.data_mut()[i * n + j] = 1.0;
                    }
                    m
                })
            })
            .collect();
        assert_eq!(permute_hard(&x, &sel).unwrap(), permute_tensor(&x, &mats).unwrap());
    }
}
