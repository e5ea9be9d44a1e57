//! Central finite-difference gradient oracle, shared by unit and integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use wav2text_under_test::diffcore::{BindMode, Bound, Graph, ParameterSet, Tensor, TensorError, Var};

pub const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const SCALE_FLOOR: f64 = 1e-6;

/// Central difference of `f` (value plus rectifier sign pattern) around the
/// current point. If a rectifier changes sign inside the step the step shrinks;
/// as a last resort the one-sided difference on the unchanged side is used.
pub fn central_difference(f: impl Fn(f64) -> (f64, Vec<bool>)) -> f64 {
    let (f0, p0) = f(0.0);
    let mut h = STEP;
    let mut last = (0.0, 0.0, false, false);
    for _ in 0..3 {
        let (fp, pp) = f(h);
        let (fm, pm) = f(-h);
        if pp == p0 && pm == p0 {
            return (fp - fm) / (2.0 * h);
        }
        last = ((fp - f0) / h, (f0 - fm) / h, pp == p0, pm == p0);
        h /= 10.0;
    }
    match last {
        (fwd, _, true, _) => fwd,
        (_, bwd, _, true) => bwd,
        (fwd, bwd, _, _) => 0.5 * (fwd + bwd),
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(SCALE_FLOOR)
}

fn coords(len: usize, max_coords: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if len <= max_coords {
        (0..len).collect()
    } else {
        let mut v = sample(rng, len, max_coords).into_vec();
        v.sort_unstable();
        v
    }
}

/// Max relative error between backward and central differences over (a sample of) every input.
pub fn check_inputs<F>(inputs: &[Tensor], build: F, max_coords: usize, seed: u64) -> f64
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, TensorError>,
{
    let eval = |vals: &[Tensor], grad: bool| -> (f64, Vec<bool>, Vec<Vec<f64>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = vals
            .iter()
            .map(|t| g.leaf(t.shape().to_vec(), t.values().to_vec(), grad).unwrap())
            .collect();
        let loss = build(&mut g, &vars).unwrap();
        let value = g.scalar(loss);
        let pattern = g.activation_pattern();
        if grad {
            g.backward(loss).unwrap();
        }
        let grads = vars
            .iter()
            .map(|v| g.grad(*v).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; g.value(*v).len()]))
            .collect();
        (value, pattern, grads)
    };
    let (_, _, analytic) = eval(inputs, true);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for (k, t) in inputs.iter().enumerate() {
        for i in coords(t.len(), max_coords, &mut rng) {
            let numeric = central_difference(|h| {
                let mut moved = inputs.to_vec();
                moved[k].values_mut()[i] += h;
                let (v, p, _) = eval(&moved, false);
                (v, p)
            });
            worst = worst.max(rel_err(analytic[k][i], numeric));
        }
    }
    worst
}

/// Per-parameter max relative error for a loss built from bound parameters.
pub fn check_params<F>(params: &ParameterSet, build: F, max_coords: usize, seed: u64) -> BTreeMap<String, f64>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var, TensorError>,
{
    let eval = |ps: &ParameterSet, grad: bool| -> (f64, Vec<bool>, Option<ParameterSet>) {
        let mut g = Graph::new();
        let bound = g.bind(ps, BindMode::All).unwrap();
        let loss = build(&mut g, &bound).unwrap();
        let value = g.scalar(loss);
        let pattern = g.activation_pattern();
        if !grad {
            return (value, pattern, None);
        }
        g.backward(loss).unwrap();
        let mut out = ps.clone();
        out.zero_grads();
        g.export_grads(&bound, &mut out).unwrap();
        (value, pattern, Some(out))
    };
    let (_, _, grads) = eval(params, true);
    let grads = grads.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = BTreeMap::new();
    for (path, t) in params.iter() {
        let analytic = grads.get(path).unwrap().grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.len()]);
        let mut worst = 0.0f64;
        for i in coords(t.len(), max_coords, &mut rng) {
            let numeric = central_difference(|h| {
                let mut moved = params.clone();
                moved.get_mut(path).unwrap().values_mut()[i] += h;
                let (v, p, _) = eval(&moved, false);
                (v, p)
            });
            worst = worst.max(rel_err(analytic[i], numeric));
        }
        report.insert(path.clone(), worst);
    }
    report
}

pub fn random_tensor(shape: Vec<usize>, seed: u64) -> Tensor {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}
