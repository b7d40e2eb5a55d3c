//! Finite-difference gradient checks shared by the gradcheck and acceptance
//! targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rco::autodiff::{Tape, Var};
use rco::nn::{lstm_step, Forecaster, LstmCell, Module, NetworkShape};
use rco::rco::{permute, regularization_loss, soft_permutation, RcoState};
use rco::{metrics, Padding, Tensor};

const STEP: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-5;

/// `(check name, worst relative error)` pairs.
pub type Report = Vec<(String, f64)>;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖)`, or the absolute difference when both are tiny.
fn relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    let norm = |t: &[f64]| t.iter().map(|v| v * v).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.data().iter().zip(numeric.data()).map(|(a, b)| a - b).collect();
    let scale = norm(analytic.data()).max(norm(numeric.data()));
    if scale < 1e-8 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

/// Checks d f / d inputs for a scalar-valued graph builder and records the
/// worst relative error over all inputs.
fn check<F>(report: &mut Report, name: &str, inputs: &[Tensor], f: F)
where
    F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
{
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&tape, &vars);
    let grads = tape.backward(loss).expect("backward");
    let analytic: Vec<Tensor> = vars.iter().map(|v| grads.wrt(*v)).collect();

    let eval = |inputs: &[Tensor]| {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
        f(&tape, &vars).item()
    };
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        let mut numeric = Tensor::zeros(input.shape());
        for i in 0..input.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= STEP;
            numeric.data_mut()[i] = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
        }
        worst = worst.max(relative_error(&analytic[k], &numeric));
    }
    report.push((name.to_string(), worst));
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn project<'t>(v: Var<'t>, seed: u64) -> Var<'t> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = random(&v.shape(), &mut rng);
    v.mul(v.tape().constant(w)).unwrap().sum()
}

pub fn elementwise_ops() -> Report {
    let mut r = Report::new();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&[3, 4], &mut rng);
    let b = random(&[3, 4], &mut rng);
    check(&mut r, "add", &[a.clone(), b.clone()], |_, v| project(v[0].add(v[1]).unwrap(), 1));
    check(&mut r, "sub", &[a.clone(), b.clone()], |_, v| project(v[0].sub(v[1]).unwrap(), 2));
    check(&mut r, "mul", &[a.clone(), b.clone()], |_, v| project(v[0].mul(v[1]).unwrap(), 3));
    check(&mut r, "scale", &[a.clone()], |_, v| project(v[0].scale(-2.5), 4));
    check(&mut r, "add_scalar", &[a.clone()], |_, v| project(v[0].add_scalar(0.3), 5));
    check(&mut r, "exp", &[a.clone()], |_, v| project(v[0].exp(), 6));
    check(&mut r, "relu", &[a.clone()], |_, v| project(v[0].relu(), 7));
    check(&mut r, "sigmoid", &[a.clone()], |_, v| project(v[0].sigmoid(), 8));
    check(&mut r, "tanh", &[a.clone()], |_, v| project(v[0].tanh(), 9));
    check(&mut r, "square", &[a.clone()], |_, v| project(v[0].square(), 10));
    check(&mut r, "sum", &[a.clone()], |_, v| v[0].square().sum());
    check(&mut r, "mean", &[a], |_, v| v[0].exp().mean());
    r
}

pub fn structural_ops() -> Report {
    let mut r = Report::new();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&[2, 3, 4], &mut rng);
    for axis in 0..3 {
        check(&mut r, "sum_axis", &[x.clone()], move |_, v| project(v[0].sum_axis(axis).unwrap(), 11));
    }
    check(&mut r, "reshape", &[x.clone()], |_, v| project(v[0].reshape(&[4, 6]).unwrap(), 12));
    for (a, b) in [(0, 1), (0, 2), (1, 2), (1, 1)] {
        check(&mut r, "swap_axes", &[x.clone()], move |_, v| project(v[0].swap_axes(a, b).unwrap(), 13));
    }
    check(&mut r, "slice", &[x.clone()], |_, v| project(v[0].slice(5, 7).unwrap(), 14));
    let m = random(&[3, 5], &mut rng);
    let n = random(&[5, 2], &mut rng);
    check(&mut r, "matmul", &[m.clone(), n], |_, v| project(v[0].matmul(v[1]).unwrap(), 15));
    let col = random(&[5, 1], &mut rng);
    check(&mut r, "matmul_vector", &[m.clone(), col], |_, v| project(v[0].matmul(v[1]).unwrap(), 16));
    check(&mut r, "softmax_rows", &[m], |_, v| project(v[0].softmax_rows().unwrap(), 17));
    r
}

pub fn convolution() -> Report {
    let mut r = Report::new();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cases = [
        ([2, 4, 5], [3, 2, 3, 3], Padding::Same),
        ([1, 5, 3], [2, 1, 3, 1], Padding::Same),
        ([2, 4, 5], [2, 2, 3, 3], Padding::Valid),
        ([1, 2, 2], [2, 1, 3, 3], Padding::Same),
        ([3, 3, 4], [1, 3, 2, 2], Padding::Valid),
    ];
    for (xs, ks, padding) in cases {
        let inputs = [random(&xs, &mut rng), random(&ks, &mut rng), random(&[ks[0]], &mut rng)];
        check(&mut r, "conv2d", &inputs, move |_, v| project(v[0].conv2d(v[1], v[2], padding).unwrap(), 18));
    }
    r
}

pub fn permutation_operator() -> Report {
    let mut r = Report::new();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let w0 = random(&[4, 4], &mut rng).scale(2.0);
    let w1 = random(&[3, 3], &mut rng).scale(2.0);
    let x = random(&[4, 3], &mut rng);
    for tau in [1.0, 0.5, 0.2] {
        check(&mut r, "soft_permutation", &[w0.clone()], move |_, v| {
            project(soft_permutation(v[0], tau).unwrap(), 19)
        });
        check(&mut r, "permute", &[w0.clone(), w1.clone(), x.clone()], move |_, v| {
            let p0 = soft_permutation(v[0], tau).unwrap();
            let p1 = soft_permutation(v[1], tau).unwrap();
            project(permute(v[2], &[Some(p0), Some(p1)]).unwrap(), 20)
        });
    }
    let x3 = random(&[2, 4, 3], &mut rng);
    check(&mut r, "permute_rank3_middle", &[w0.clone(), x3], |_, v| {
        let p = soft_permutation(v[0], 0.7).unwrap();
        project(permute(v[1], &[None, Some(p), None]).unwrap(), 21)
    });
    for gamma in [0.0, 0.05, 0.3] {
        check(&mut r, "regularizer", &[w0.clone(), w1.clone()], move |_, v| {
            let p0 = soft_permutation(v[0], 0.3).unwrap();
            let p1 = soft_permutation(v[1], 0.3).unwrap();
            regularization_loss(&[p0, p1], gamma).unwrap()
        });
    }
    r
}

pub fn losses() -> Report {
    let mut r = Report::new();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = random(&[3], &mut rng);
    let label = [0.2, -0.4, 1.1];
    check(&mut r, "task_loss", &[p.clone()], move |_, v| metrics::task_loss(v[0], &label).unwrap());
    let w = random(&[3, 3], &mut rng).scale(3.0);
    check(&mut r, "total_loss", &[p, w], move |_, v| {
        let task = metrics::task_loss(v[0], &label).unwrap();
        let reg = regularization_loss(&[soft_permutation(v[1], 0.5).unwrap()], 0.0).unwrap();
        metrics::total_loss(task, reg, 0.7).unwrap()
    });
    r
}

pub fn lstm_unrolled_three_steps() -> Report {
    let mut r = Report::new();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cell = LstmCell::new(3, 4, &mut rng);
    let mut inputs: Vec<Tensor> = cell.params().iter().map(|p| p.value.clone()).collect();
    for _ in 0..3 {
        inputs.push(random(&[3], &mut rng));
    }
    check(&mut r, "lstm", &inputs, |tape, v| {
        let (params, xs) = v.split_at(3);
        let mut h = tape.constant(Tensor::zeros(&[4]));
        let mut c = h;
        for x in xs {
            (h, c) = lstm_step(*x, h, c, params).unwrap();
        }
        project(h.add(c).unwrap(), 22)
    });
    r
}

/// Random softmax → permute → conv → LSTM → MSE chains with sides ≤ 5.
pub fn random_composite_graphs() -> Report {
    let mut r = Report::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..20u64 {
        let grid = [rng.gen_range(2..=5), rng.gen_range(2..=5)];
        let steps = rng.gen_range(1..=3);
        let horizon = rng.gen_range(1..=3);
        let shape = NetworkShape {
            conv_channels: vec![rng.gen_range(1..=3), rng.gen_range(1..=3)],
            kernel_size: 3,
            lstm_hidden: rng.gen_range(2..=5),
            padding: Padding::Same,
        };
        let enabled = vec![rng.gen_bool(0.8), true];
        let mut state = RcoState::new(&grid, enabled, rng.gen_range(0.0..0.2), 1.0).unwrap();
        state.tau = rng.gen_range(0.3..1.0);
        let model = Forecaster::new(grid, horizon, &shape, Some(state), case).unwrap();
        let window: Vec<Tensor> = (0..steps).map(|_| random(&grid, &mut rng)).collect();
        let label: Vec<f64> = (0..horizon).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Fresh random values everywhere: zero-initialized biases would put
        // dead ReLU units exactly on their kink.
        let inputs: Vec<Tensor> = model.params().iter().map(|p| random(p.value.shape(), &mut rng)).collect();
        let n_logits = model.rco.as_ref().unwrap().params().len();

        check(&mut r, &format!("composite {case}"), &inputs, |tape, v| {
            let r = model.rco.as_ref().unwrap();
            let mut it = v[..n_logits].iter();
            let logits: Vec<Option<Var>> = r
                .axis_enabled
                .iter()
                .map(|&on| if on { it.next().copied() } else { None })
                .collect();
            let bound = rco::nn::BoundForecaster {
                logits,
                theta: v[n_logits..].to_vec(),
            };
            let prediction = model.forward(tape, &bound, &window, None).unwrap();
            let task = metrics::task_loss(prediction, &label).unwrap();
            let perms: Vec<Var> = r
                .permutation_vars(&bound.logits, None)
                .unwrap()
                .into_iter()
                .flatten()
                .collect();
            let reg = regularization_loss(&perms, r.gamma).unwrap();
            metrics::total_loss(task, reg, 1.0).unwrap()
        });
    }
    r
}

