use proptest::prelude::*;
use rco::data::{invert_permutation, make_windows, synthesize, SeriesTable, Split, SyntheticTaskSpec, WindowConfig};
use rco::metrics::rmse;
use rco::rco::{
    doubly_stochastic_gap, harden, permute_hard, permute_tensor, regularization_value, soft_permutation_tensor,
    RcoState,
};
use rco::{Error, Tensor};

fn square(n: usize, values: Vec<f64>) -> Tensor {
    Tensor::new(vec![n, n], values).unwrap()
}

fn logits() -> impl Strategy<Value = (usize, Vec<f64>)> {
    (1usize..=6).prop_flat_map(|n| (Just(n), prop::collection::vec(-20.0f64..20.0, n * n)))
}

fn one_hot(sel: &[usize], n: usize) -> Tensor {
    let mut t = Tensor::zeros(&[sel.len(), n]);
    for (i, &j) in sel.iter().enumerate() {
        t.data_mut()[i * n + j] = 1.0;
    }
    t
}

proptest! {
    #[test]
    fn soft_rows_sum_to_one((n, w) in logits(), tau in 1e-3f64..10.0) {
        let p = soft_permutation_tensor(&square(n, w), tau).unwrap();
        for row in p.rows().unwrap() {
            let sum: f64 = row.iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9, "row sum {sum}");
            prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn hardened_rows_are_one_hot_at_the_argmax((n, w) in logits(), tau in 1e-2f64..5.0) {
        let p = soft_permutation_tensor(&square(n, w), tau).unwrap();
        let h = harden(&p).unwrap();
        for (soft, hard) in p.rows().unwrap().iter().zip(h.rows().unwrap()) {
            prop_assert_eq!(hard.iter().filter(|&&v| v == 1.0).count(), 1);
            prop_assert_eq!(hard.iter().filter(|&&v| v == 0.0).count(), n - 1);
            let j = hard.iter().position(|&v| v == 1.0).unwrap();
            let best = soft.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(soft[j], best);
            prop_assert!(soft[..j].iter().all(|&v| v < best));
        }
    }

    #[test]
    fn regularizer_is_nonnegative_and_monotone_in_gamma((n, w) in logits(), tau in 0.05f64..5.0, g in 0.0f64..1.0) {
        let p = soft_permutation_tensor(&square(n, w), tau).unwrap();
        let at_g = regularization_value(std::slice::from_ref(&p), g).unwrap();
        let at_zero = regularization_value(std::slice::from_ref(&p), 0.0).unwrap();
        prop_assert!(at_g >= 0.0);
        prop_assert!(at_g <= at_zero);
        prop_assert!((at_zero - doubly_stochastic_gap(&p).unwrap() / n as f64).abs() < 1e-12);
    }

    #[test]
    fn permutation_matrices_cost_nothing(perm in (1usize..=6).prop_flat_map(|n| Just((0..n).collect::<Vec<_>>()).prop_shuffle()), g in 0.0f64..=1.0) {
        let n = perm.len();
        let p = one_hot(&perm, n);
        prop_assert_eq!(doubly_stochastic_gap(&p).unwrap(), 0.0);
        prop_assert_eq!(regularization_value(&[p], g).unwrap(), 0.0);
    }

    #[test]
    fn hard_selection_matches_matrix_product(
        dims in (1usize..=4, 1usize..=4, 1usize..=4),
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let shape = [dims.0, dims.1, dims.2];
        let x = Tensor::new(shape.to_vec(), (0..dims.0 * dims.1 * dims.2).map(|_| rng.gen_range(-5.0..5.0)).collect()).unwrap();
        let selections: Vec<Option<Vec<usize>>> = shape
            .iter()
            .map(|&n| rng.gen_bool(0.7).then(|| (0..n).map(|_| rng.gen_range(0..n)).collect()))
            .collect();
        let matrices: Vec<Option<Tensor>> = selections
            .iter()
            .zip(shape)
            .map(|(s, n)| s.as_ref().map(|s| one_hot(s, n)))
            .collect();
        prop_assert_eq!(permute_hard(&x, &selections).unwrap(), permute_tensor(&x, &matrices).unwrap());
    }

    #[test]
    fn inverse_selection_restores(perm in (1usize..=7).prop_flat_map(|n| Just((0..n).collect::<Vec<_>>()).prop_shuffle()), cols in 1usize..4) {
        let n = perm.len();
        let x = Tensor::new(vec![n, cols], (0..n * cols).map(|v| v as f64).collect()).unwrap();
        let shuffled = permute_hard(&x, &[Some(perm.clone()), None]).unwrap();
        let restored = permute_hard(&shuffled, &[Some(invert_permutation(&perm)), None]).unwrap();
        prop_assert_eq!(restored, x);
    }

    #[test]
    fn tau_follows_the_schedule(epochs in 0usize..200, tau_min in 1e-4f64..0.5) {
        let mut state = RcoState::new(&[3], vec![true], 1.0, 1.0).unwrap().with_tau_min(tau_min).unwrap();
        let mut expected = 1.0f64;
        for _ in 0..epochs {
            state.anneal();
            expected = (expected * 0.9).max(tau_min);
        }
        prop_assert_eq!(state.tau, expected);
        prop_assert!(state.tau >= tau_min);
        prop_assert!((state.tau - 0.9f64.powi(epochs as i32).max(tau_min)).abs() <= 1e-12);
    }

    #[test]
    fn rmse_is_a_scaled_distance(values in prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..30), k in 0.1f64..10.0) {
        let a: Vec<Vec<f64>> = values.iter().map(|v| vec![v.0]).collect();
        let b: Vec<Vec<f64>> = values.iter().map(|v| vec![v.1]).collect();
        prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        let ab = rmse(&a, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - rmse(&b, &a).unwrap()).abs() <= 1e-12);
        let scale = |m: &[Vec<f64>]| m.iter().map(|r| vec![r[0] * k]).collect::<Vec<_>>();
        prop_assert!((rmse(&scale(&a), &scale(&b)).unwrap() - k * ab).abs() <= 1e-9 * (1.0 + k * ab));
        let max = values.iter().map(|v| (v.0 - v.1).abs()).fold(0.0, f64::max);
        prop_assert!(ab <= max + 1e-12);
    }

    #[test]
    fn windows_stay_in_bounds(total in 1usize..60, t in 1usize..20, s in 1usize..8, g in 1usize..4, a in 1usize..4, train in 0.0f64..=1.0, val in 0.0f64..=1.0) {
        let values = (0..total * g * a).map(|v| (v as f64 * 0.37).sin()).collect();
        let table = SeriesTable::new(
            (0..total as i64).collect(),
            (0..g).map(|i| format!("T{i}")).collect(),
            (0..a).map(|i| format!("a{i}")).collect(),
            Tensor::new(vec![total, g, a], values).unwrap(),
        ).unwrap();
        let val = val * (1.0 - train);
        let config = WindowConfig { history: t, horizon: s, train_fraction: train, val_fraction: val, target_turbine: g - 1, target_attribute: a - 1, ..WindowConfig::default() };
        match make_windows(&table, &config) {
            Err(Error::Contract(_)) => prop_assert!(total < t + s),
            Err(e) => prop_assert!(false, "unexpected {e}"),
            Ok(d) => {
                prop_assert_eq!(d.len(), total - t - s + 1);
                let (tr, va, te) = (d.split(Split::Train), d.split(Split::Val), d.split(Split::Test));
                prop_assert_eq!(tr.start, 0);
                prop_assert_eq!(tr.end, va.start);
                prop_assert_eq!(va.end, te.start);
                prop_assert_eq!(te.end, d.len());
                for i in 0..d.len() {
                    prop_assert_eq!(d.window(i).len(), t);
                    prop_assert_eq!(d.label(i).len(), s);
                    prop_assert_eq!(d.raw_label(i)[0], table.value(i + t, g - 1, a - 1));
                }
                prop_assert!(d.stats.fit_end <= total);
                prop_assert!(d.stats.std.iter().all(|v| *v > 0.0));
            }
        }
    }

    #[test]
    fn normalization_reproduces(seed in 0u64..50, length in 30usize..120) {
        let task = synthesize(&SyntheticTaskSpec { turbines: 3, attributes: 2, length, seed, ..SyntheticTaskSpec::default() }).unwrap();
        let config = WindowConfig { history: 5, horizon: 2, target_turbine: task.target_turbine, target_attribute: task.target_attribute, ..WindowConfig::default() };
        let a = make_windows(&task.table, &config).unwrap();
        let b = make_windows(&task.table, &config).unwrap();
        prop_assert_eq!(a.stats, b.stats);
    }

    #[test]
    fn synthetic_shuffle_is_undone_exactly(seed in any::<u64>(), g in 2usize..7, a in 2usize..5) {
        let spec = SyntheticTaskSpec { turbines: g, attributes: a, length: 20, seed, ..SyntheticTaskSpec::default() };
        let task = synthesize(&spec).unwrap();
        let canonical = synthesize(&SyntheticTaskSpec { shuffle: false, ..spec }).unwrap();
        let restored = permute_hard(&task.table.values, &task.restoring_selections()).unwrap();
        prop_assert_eq!(restored.data(), canonical.table.values.data());
    }
}

/// Enumerates every hard right-stochastic matrix (n^n row selections).
fn for_each_selection(n: usize, mut f: impl FnMut(&[usize])) {
    let mut sel = vec![0usize; n];
    loop {
        f(&sel);
        let mut k = 0;
        while k < n {
            sel[k] += 1;
            if sel[k] < n {
                break;
            }
            sel[k] = 0;
            k += 1;
        }
        if k == n {
            return;
        }
    }
}

#[test]
fn hard_right_stochastic_is_free_at_gamma_one() {
    for n in 1..=5 {
        let mut count = 0;
        let mut worst = 0.0f64;
        for_each_selection(n, |sel| {
            let p = one_hot(sel, n);
            let normalized = doubly_stochastic_gap(&p).unwrap() / n as f64;
            // The column sums are non-negative integers adding up to n.
            assert!(normalized <= (n - 1) as f64 + 1e-12, "{sel:?}");
            assert_eq!(regularization_value(&[p], 1.0).unwrap(), 0.0, "{sel:?}");
            worst = worst.max(normalized);
            count += 1;
        });
        assert_eq!(count, n.pow(n as u32));
        // All rows on one column attains the bound.
        assert_eq!(worst, (n - 1) as f64);
    }
}

#[test]
fn single_column_matrix_costs_n_minus_one_at_gamma_zero() {
    for n in 1..=8 {
        let p = one_hot(&vec![0; n], n);
        assert_eq!(regularization_value(&[p], 0.0).unwrap(), (n - 1) as f64);
    }
}

#[test]
fn doubly_stochastic_costs_nothing_at_any_gamma() {
    for n in 1..=6 {
        let uniform = square(n, vec![1.0 / n as f64; n * n]);
        let shift: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
        let mix = {
            let a = one_hot(&shift, n);
            let b = one_hot(&(0..n).collect::<Vec<_>>(), n);
            square(n, a.data().iter().zip(b.data()).map(|(x, y)| 0.25 * x + 0.75 * y).collect())
        };
        for g in [0.0, 0.1, 0.5, 1.0] {
            assert!(regularization_value(&[uniform.clone()], g).unwrap() < 1e-25);
            assert_eq!(regularization_value(&[mix.clone()], g).unwrap(), 0.0);
        }
    }
}
