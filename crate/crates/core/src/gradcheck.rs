//! Central finite-difference checks against the tape's reverse pass.

use crate::tensor::{Tape, Tensor, TensorError, Var};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Denominator floor of the relative error. Central differences of an O(1)
/// function carry about `1e-16 / step = 1e-11` of round-off, so gradients
/// that are exactly zero (dead ReLUs) still compare cleanly.
pub const NORM_FLOOR: f64 = 1e-6;

/// Per-input comparison of reverse-mode and finite-difference gradients.
#[derive(Debug, Clone)]
pub struct GradCheck {
    /// Norm-wise relative error `|g_ad - g_fd| / max(|g_ad|, |g_fd|, NORM_FLOOR)` per input.
    pub relative_errors: Vec<f64>,
}

impl GradCheck {
    pub fn max_relative_error(&self) -> f64 {
        self.relative_errors.iter().cloned().fold(0.0, f64::max)
    }
}

/// Checks `f`, a scalar function of `inputs` built on a fresh tape.
///
/// The finite-difference side only ever evaluates the forward values.
pub fn check<F>(inputs: &[Tensor], step: f64, f: F) -> Result<GradCheck, TensorError>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let eval = |perturbed: &[Tensor]| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut relative_errors = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[i], input.shape());
        let mut numeric = Tensor::zeros(input.shape());
        for j in 0..input.len() {
            let orig = input.data()[j];
            work[i].data_mut()[j] = orig + step;
            let up = eval(&work)?;
            work[i].data_mut()[j] = orig - step;
            let down = eval(&work)?;
            work[i].data_mut()[j] = orig;
            numeric.data_mut()[j] = (up - down) / (2.0 * step);
        }
        let diff: f64 = analytic
            .data()
            .iter()
            .zip(numeric.data())
            .map(|(a, n)| (a - n) * (a - n))
            .sum::<f64>()
            .sqrt();
        let scale = analytic.norm().max(numeric.norm()).max(NORM_FLOOR);
        relative_errors.push(diff / scale);
    }
    Ok(GradCheck { relative_errors })
}

/// Outcome of one entry of [`suite`].
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteEntry {
    pub name: &'static str,
    pub seeds: u64,
    pub max_relative_error: f64,
    pub passed: bool,
}

pub const SUITE_TOLERANCE: f64 = 1e-4;

fn uniform(seed: u64, name: &str, i: u64, shape: &[usize]) -> Tensor {
    use rand::Rng;
    let mut rng = crate::rng::substream(seed, name, &[i]);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("finite")
}

type Case = (&'static str, Vec<Vec<usize>>, fn(&mut Tape, &[Var]) -> Result<Var, TensorError>);

/// Every tape op, each reduced to a scalar through `mse_loss` against a
/// random target, and the full model in both variants, over `seeds` seeds.
pub fn suite(seeds: u64) -> Result<Vec<SuiteEntry>, crate::Error> {
    let cases: Vec<Case> = vec![
        ("matmul", vec![vec![3, 4], vec![4, 2], vec![3, 2]], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            t.mse_loss(y, v[2])
        }),
        ("add", vec![vec![2, 3], vec![2, 3], vec![2, 3]], |t, v| {
            let y = t.add(v[0], v[1])?;
            t.mse_loss(y, v[2])
        }),
        ("add_bias", vec![vec![4, 3], vec![3], vec![4, 3]], |t, v| {
            let y = t.add_bias(v[0], v[1])?;
            t.mse_loss(y, v[2])
        }),
        ("scale_shift", vec![vec![2, 3], vec![3], vec![3], vec![2, 3]], |t, v| {
            let y = t.scale_shift(v[0], v[1], v[2])?;
            t.mse_loss(y, v[3])
        }),
        ("relu", vec![vec![5, 4], vec![5, 4]], |t, v| {
            let y = t.relu(v[0])?;
            t.mse_loss(y, v[1])
        }),
        ("reshape", vec![vec![2, 6], vec![3, 4]], |t, v| {
            let y = t.reshape(v[0], &[3, 4])?;
            t.mse_loss(y, v[1])
        }),
        ("conv2d", vec![vec![2, 4, 5], vec![3, 2, 3, 3], vec![3], vec![3, 4, 5]], |t, v| {
            let y = t.conv2d(v[0], v[1], v[2])?;
            t.mse_loss(y, v[3])
        }),
        ("mse_loss", vec![vec![3, 3], vec![3, 3]], |t, v| t.mse_loss(v[0], v[1])),
    ];

    let mut entries = Vec::new();
    for (name, shapes, f) in cases {
        let mut worst = 0.0_f64;
        for seed in 0..seeds {
            let inputs: Vec<Tensor> = shapes.iter().enumerate().map(|(i, s)| uniform(seed, name, i as u64, s)).collect();
            worst = worst.max(check(&inputs, DEFAULT_STEP, f)?.max_relative_error());
        }
        entries.push(SuiteEntry { name, seeds, max_relative_error: worst, passed: worst <= SUITE_TOLERANCE });
    }

    for (name, variant) in [("flgcn-fcn", crate::model::HeadVariant::Fcn), ("flgcn-cnn", crate::model::HeadVariant::Cnn)] {
        let mut worst = 0.0_f64;
        for seed in 0..seeds {
            worst = worst.max(model_check(variant, seed)?);
        }
        entries.push(SuiteEntry { name, seeds, max_relative_error: worst, passed: worst <= SUITE_TOLERANCE });
    }
    Ok(entries)
}

/// Largest relative error of the full model's gradient with respect to
/// every parameter and both inputs, on a four-interchange corridor.
pub fn model_check(variant: crate::model::HeadVariant, seed: u64) -> Result<f64, crate::Error> {
    use crate::model::{forward_flgcn, BoundParams, BoundTopology, FlGcnConfig, FlGcnParams, ModelTopology};

    let n_d = 4;
    let net = crate::topology::DirectedNetwork::turnpike(n_d, 5.0)?;
    let topology = ModelTopology::new(&net);
    let config = FlGcnConfig::default().with_variant(variant);
    let mut params = FlGcnParams::init(&config, n_d, seed)?;
    // Non-zero biases so every term of the gradient is exercised.
    for (i, (t, bound)) in params.tensors_mut().iter_mut().zip(FlGcnParams::init(&config, n_d, seed)?.glorot_bounds()).enumerate() {
        if bound.is_none() {
            *t = uniform(seed, "model-bias", i as u64, t.shape());
        }
    }
    let k = config.k_link_lags;
    let mut inputs = params.tensors().to_vec();
    let n_params = inputs.len();
    inputs.push(uniform(seed, "model-z", 0, &[topology.n_l, 2 * k]));
    inputs.push(uniform(seed, "model-xh", 0, &[n_d, n_d - 1]));
    inputs.push(uniform(seed, "model-target", 0, &[n_d, n_d - 1]));
    let (a_hat, incidence) = (topology.a_hat.clone(), topology.incidence.clone());
    let result = check(&inputs, DEFAULT_STEP, |t, v| {
        let topo = BoundTopology { a_hat: t.leaf(a_hat.clone()), incidence: t.leaf(incidence.clone()) };
        let bound = BoundParams::from_vars(&config, v[..n_params].to_vec());
        let y = forward_flgcn(t, v[n_params], v[n_params + 1], topo, &bound)?;
        t.mse_loss(y, v[n_params + 2])
    })?;
    Ok(result.max_relative_error())
}
