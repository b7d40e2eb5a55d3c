use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SeriesTable;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const PERMUTATION_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Planted-permutation forecasting task.
///
/// A latent field `u_g(τ)` is smooth along the canonical turbine order: each
/// turbine mixes independent AR(1) sources through a Gaussian kernel of
/// width `correlation_length`, so correlation decays with canonical
/// distance. Attributes form a lagged chain in canonical order: attribute 0
/// is the field itself and attribute `j` at step `τ` is a saturating
/// response to attributes `j − 1` and `j − 2` (through their product) at
/// `τ − 1`. The last attribute also reacts, `wake_lag` steps later, to the
/// shear `|u_{g−1} − u_g| + |u_{g+1} − u_g|` against its canonical
/// neighbours.
///
/// The observed table is the canonical one with both axes shuffled:
/// shuffled position `p` holds canonical index `perm[p]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTaskSpec {
    pub turbines: usize,
    pub attributes: usize,
    pub length: usize,
    pub correlation_length: f64,
    /// AR(1) coefficient of the latent sources.
    pub persistence: f64,
    /// Standard deviation of the observation noise.
    pub noise: f64,
    /// Gain of the attribute chain.
    pub chain_gain: f64,
    /// Weight of the product of the two attributes below in the chain.
    pub chain_coupling: f64,
    /// Weight of the neighbour shear term in the last attribute.
    pub wake_weight: f64,
    /// Steps between the shear and its effect.
    pub wake_lag: usize,
    pub seed: u64,
    /// Draw random permutations when none are given explicitly.
    pub shuffle: bool,
    pub turbine_permutation: Option<Vec<usize>>,
    pub attribute_permutation: Option<Vec<usize>>,
    /// Canonical turbine whose last attribute is forecast.
    pub target_turbine: Option<usize>,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            turbines: 6,
            attributes: 4,
            length: 1500,
            correlation_length: 1.0,
            persistence: 0.9,
            noise: 0.02,
            chain_gain: 1.5,
            chain_coupling: 1.0,
            wake_weight: 0.0,
            wake_lag: 2,
            seed: 0,
            shuffle: true,
            turbine_permutation: None,
            attribute_permutation: None,
            target_turbine: None,
        }
    }
}

/// Shuffled table plus the ground truth needed to undo the shuffle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTask {
    pub table: SeriesTable,
    /// Shuffled position → canonical turbine.
    pub turbine_permutation: Vec<usize>,
    /// Shuffled position → canonical attribute.
    pub attribute_permutation: Vec<usize>,
    /// Target location in the shuffled table.
    pub target_turbine: usize,
    pub target_attribute: usize,
}

/// Sidecar describing the planted permutations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationSidecar {
    pub turbine_permutation: Vec<usize>,
    pub attribute_permutation: Vec<usize>,
    pub target_turbine: usize,
    pub target_attribute: usize,
    /// Column names of the target in `series.csv`.
    pub target_turbine_id: String,
    pub target_attribute_name: String,
    pub spec: SyntheticTaskSpec,
}

fn check_permutation(perm: &[usize], n: usize, what: &str) -> Result<()> {
    let mut seen = vec![false; n];
    if perm.len() != n {
        return Err(Error::Parameter(format!("{what} permutation has {} entries for {n}", perm.len())));
    }
    for &p in perm {
        if p >= n || std::mem::replace(&mut seen[p], true) {
            return Err(Error::Parameter(format!("{what} permutation {perm:?} is not a bijection")));
        }
    }
    Ok(())
}

/// `inverse[perm[p]] = p`.
pub fn invert_permutation(perm: &[usize]) -> Vec<usize> {
    let mut inverse = vec![0; perm.len()];
    for (p, &c) in perm.iter().enumerate() {
        inverse[c] = p;
    }
    inverse
}

impl SyntheticTask {
    /// Row selections that map the shuffled table back to canonical order
    /// (see [`crate::rco::permute_hard`]).
    pub fn restoring_selections(&self) -> Vec<Option<Vec<usize>>> {
        vec![
            None,
            Some(invert_permutation(&self.turbine_permutation)),
            Some(invert_permutation(&self.attribute_permutation)),
        ]
    }

    /// Per-frame version of [`Self::restoring_selections`] for `(turbine,
    /// attribute)` frames.
    pub fn frame_restoring_selections(&self) -> Vec<Option<Vec<usize>>> {
        self.restoring_selections().split_off(1)
    }

    pub fn sidecar(&self, spec: &SyntheticTaskSpec) -> PermutationSidecar {
        PermutationSidecar {
            turbine_permutation: self.turbine_permutation.clone(),
            attribute_permutation: self.attribute_permutation.clone(),
            target_turbine: self.target_turbine,
            target_attribute: self.target_attribute,
            target_turbine_id: self.table.turbines[self.target_turbine].clone(),
            target_attribute_name: self.table.attributes[self.target_attribute].clone(),
            spec: spec.clone(),
        }
    }

    /// Writes `series.csv` and `permutation.json` into `dir`.
    pub fn export(&self, spec: &SyntheticTaskSpec, dir: &Path) -> Result<()> {
        self.table.write_csv(&dir.join("series.csv"))?;
        let path = dir.join("permutation.json");
        let json = serde_json::to_string_pretty(&self.sidecar(spec))?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))
    }
}

/// Generates the canonical field, then shuffles turbines and attributes.
pub fn synthesize(spec: &SyntheticTaskSpec) -> Result<SyntheticTask> {
    let (g, a) = (spec.turbines, spec.attributes);
    if g < 2 || a < 2 {
        return Err(Error::Parameter("synthetic task needs at least 2 turbines and 2 attributes".into()));
    }
    if spec.length == 0 || !(spec.correlation_length > 0.0) || !(0.0..1.0).contains(&spec.persistence) {
        return Err(Error::Parameter("length, correlation length or persistence out of range".into()));
    }
    // Separate streams, so the field does not depend on whether we shuffle.
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut perm_rng = ChaCha8Rng::seed_from_u64(spec.seed ^ PERMUTATION_SALT);
    let target = spec.target_turbine.unwrap_or(g / 2);
    if target >= g {
        return Err(Error::Parameter(format!("target turbine {target} outside {g}")));
    }

    let turbine_permutation = match &spec.turbine_permutation {
        Some(p) => p.clone(),
        None => shuffled(g, spec.shuffle, &mut perm_rng),
    };
    let attribute_permutation = match &spec.attribute_permutation {
        Some(p) => p.clone(),
        None => shuffled(a, spec.shuffle, &mut perm_rng),
    };
    check_permutation(&turbine_permutation, g, "turbine")?;
    check_permutation(&attribute_permutation, a, "attribute")?;

    let canonical = canonical_field(spec, &mut rng);

    let len = spec.length;
    let mut values = Vec::with_capacity(len * g * a);
    for step in 0..len {
        for &cg in &turbine_permutation {
            for &ca in &attribute_permutation {
                values.push(canonical[(step * g + cg) * a + ca]);
            }
        }
    }
    let timestamps = (0..len as i64).map(|t| 1_700_000_000 + 600 * t).collect();
    let table = SeriesTable::new(
        timestamps,
        turbine_permutation.iter().map(|c| format!("WT{c:02}")).collect(),
        attribute_permutation.iter().map(|c| format!("attr{c}")).collect(),
        Tensor::new(vec![len, g, a], values)?,
    )?;
    let inverse_t = invert_permutation(&turbine_permutation);
    let inverse_a = invert_permutation(&attribute_permutation);
    Ok(SyntheticTask {
        table,
        target_turbine: inverse_t[target],
        target_attribute: inverse_a[a - 1],
        turbine_permutation,
        attribute_permutation,
    })
}

fn shuffled(n: usize, shuffle: bool, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    if shuffle {
        p.shuffle(rng);
    }
    p
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; one draw per call keeps the stream layout simple.
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Canonical `(time, turbine, attribute)` values, row-major.
fn canonical_field(spec: &SyntheticTaskSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (g, a, len) = (spec.turbines, spec.attributes, spec.length);
    let burn_in = 50 + a + spec.wake_lag;
    let total = len + burn_in;
    let phi = spec.persistence;
    let innovation = (1.0 - phi * phi).sqrt();

    // Kernel rows normalized to unit variance of u_g.
    let kernel: Vec<Vec<f64>> = (0..g)
        .map(|i| {
            let row: Vec<f64> = (0..g)
                .map(|m| {
                    let d = i as f64 - m as f64;
                    (-d * d / (2.0 * spec.correlation_length.powi(2))).exp()
                })
                .collect();
            let norm = row.iter().map(|k| k * k).sum::<f64>().sqrt();
            row.into_iter().map(|k| k / norm).collect()
        })
        .collect();

    let mut sources = vec![0.0; g];
    let mut field = vec![vec![0.0; g]; total];
    for step in 0..total {
        for s in sources.iter_mut() {
            *s = phi * *s + innovation * normal(rng);
        }
        for (i, row) in kernel.iter().enumerate() {
            field[step][i] = row.iter().zip(&sources).map(|(k, s)| k * s).sum();
        }
    }

    // chain[step][turbine][attribute], noise-free.
    let mut chain = vec![vec![vec![0.0; a]; g]; total];
    for step in 0..total {
        for i in 0..g {
            chain[step][i][0] = field[step][i];
            if step == 0 {
                continue;
            }
            let prev = &chain[step - 1][i];
            let mut next = vec![0.0; a];
            for j in 1..a {
                let below = if j >= 2 { prev[j - 2] } else { 0.0 };
                next[j] = (spec.chain_gain * prev[j - 1] + spec.chain_coupling * prev[j - 1] * below).tanh();
            }
            let past = &field[step.saturating_sub(spec.wake_lag)];
            let own = past[i];
            let left = past[i.saturating_sub(1)];
            let right = past[(i + 1).min(g - 1)];
            next[a - 1] += spec.wake_weight * ((left - own).abs() + (right - own).abs() - 1.0);
            chain[step][i][1..].copy_from_slice(&next[1..]);
        }
    }

    let mut out = Vec::with_capacity(len * g * a);
    for frame in &chain[burn_in..] {
        for cells in frame {
            for &c in cells {
                out.push(c + spec.noise * normal(rng));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rco::permute_hard;

    fn canonical_of(spec: &SyntheticTaskSpec) -> SeriesTable {
        synthesize(&SyntheticTaskSpec {
            shuffle: false,
            turbine_permutation: None,
            attribute_permutation: None,
            ..spec.clone()
        })
        .unwrap()
        .table
    }

    #[test]
    fn restoring_selection_undoes_shuffle() {
        let spec = SyntheticTaskSpec {
            length: 40,
            seed: 3,
            ..SyntheticTaskSpec::default()
        };
        let task = synthesize(&spec).unwrap();
        let restored = permute_hard(&task.table.values, &task.restoring_selections()).unwrap();
        assert_eq!(restored, canonical_of(&spec).values);
    }

    #[test]
    fn explicit_permutation_is_used() {
        let spec = SyntheticTaskSpec {
            turbines: 3,
            attributes: 2,
            length: 10,
            turbine_permutation: Some(vec![2, 0, 1]),
            attribute_permutation: Some(vec![1, 0]),
            target_turbine: Some(1),
            ..SyntheticTaskSpec::default()
        };
        let task = synthesize(&spec).unwrap();
        let canon = canonical_of(&spec);
        assert_eq!(task.table.value(4, 0, 0), canon.value(4, 2, 1));
        assert_eq!(task.target_turbine, 2);
        assert_eq!(task.target_attribute, 0);
        assert_eq!(task.table.turbines, vec!["WT02", "WT00", "WT01"]);
    }

    #[test]
    fn rejects_non_bijection() {
        let spec = SyntheticTaskSpec {
            turbine_permutation: Some(vec![0, 0, 1, 2, 3, 4]),
            ..SyntheticTaskSpec::default()
        };
        assert!(synthesize(&spec).is_err());
    }

    #[test]
    fn neighbours_correlate_more_than_distant_turbines() {
        let spec = SyntheticTaskSpec {
            length: 3000,
            noise: 0.0,
            shuffle: false,
            ..SyntheticTaskSpec::default()
        };
        let t = synthesize(&spec).unwrap().table;
        let series = |g: usize| (0..t.len()).map(|s| t.value(s, g, 0)).collect::<Vec<_>>();
        let corr = |x: &[f64], y: &[f64]| {
            let n = x.len() as f64;
            let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
            let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
            let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
            let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
            cov / (vx * vy).sqrt()
        };
        let near = corr(&series(2), &series(3));
        let far = corr(&series(0), &series(5));
        assert!(near > far + 0.3, "near {near}, far {far}");
    }

    #[test]
    fn same_seed_same_table() {
        let spec = SyntheticTaskSpec {
            length: 30,
            ..SyntheticTaskSpec::default()
        };
        assert_eq!(synthesize(&spec).unwrap(), synthesize(&spec).unwrap());
    }
}
