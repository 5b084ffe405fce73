#![allow(dead_code)]

pub mod oracle;
pub mod suite;

use geogan_core::{Graph, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Uniform values bounded away from zero (keeps kinks of relu-like ops out of
/// the finite-difference stencil).
pub fn away_from_zero(rng: &mut ChaCha8Rng, n: usize, mag: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..mag);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

pub struct Input {
    pub value: Vec<f64>,
    pub shape: Vec<usize>,
}

impl Input {
    pub fn new(value: Vec<f64>, shape: &[usize]) -> Self {
        Self {
            value,
            shape: shape.to_vec(),
        }
    }
}

fn evaluate<F>(f: &F, inputs: &[Input]) -> f64
where
    F: Fn(&mut Graph<f64>, &[Tensor]) -> Result<Tensor>,
{
    let mut g = Graph::new();
    let ts: Vec<Tensor> = inputs
        .iter()
        .map(|i| g.variable(i.value.clone(), &i.shape).unwrap())
        .collect();
    let out = f(&mut g, &ts).unwrap();
    g.item(out)
}

/// Analytic gradients of a scalar function with respect to every input.
pub fn analytic<F>(f: &F, inputs: &[Input]) -> Vec<Vec<f64>>
where
    F: Fn(&mut Graph<f64>, &[Tensor]) -> Result<Tensor>,
{
    let mut g = Graph::new();
    let ts: Vec<Tensor> = inputs
        .iter()
        .map(|i| g.variable(i.value.clone(), &i.shape).unwrap())
        .collect();
    let out = f(&mut g, &ts).unwrap();
    g.backward(out).unwrap();
    ts.iter()
        .zip(inputs)
        .map(|(&t, i)| {
            g.grad(t)
                .map(|v| v.to_vec())
                .unwrap_or_else(|| vec![0.0; i.value.len()])
        })
        .collect()
}

/// Central finite differences with step `1e-5 * max(1, |x|)`.
pub fn numeric<F>(f: &F, inputs: &[Input]) -> Vec<Vec<f64>>
where
    F: Fn(&mut Graph<f64>, &[Tensor]) -> Result<Tensor>,
{
    let mut work: Vec<Input> = inputs
        .iter()
        .map(|i| Input::new(i.value.clone(), &i.shape))
        .collect();
    let mut out = Vec::new();
    for k in 0..inputs.len() {
        let mut grad = Vec::with_capacity(inputs[k].value.len());
        for j in 0..inputs[k].value.len() {
            let x0 = inputs[k].value[j];
            let h = 1e-5 * x0.abs().max(1.0);
            work[k].value[j] = x0 + h;
            let fp = evaluate(f, &work);
            work[k].value[j] = x0 - h;
            let fm = evaluate(f, &work);
            work[k].value[j] = x0;
            grad.push((fp - fm) / (2.0 * h));
        }
        out.push(grad);
    }
    out
}

/// Largest elementwise `|a - n| / max(|a|, |n|, 1)`.
pub fn max_rel_err(a: &[Vec<f64>], n: &[Vec<f64>]) -> f64 {
    a.iter()
        .flatten()
        .zip(n.iter().flatten())
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// Runs a gradient check and returns the maximum relative error.
pub fn gradcheck<F>(f: F, inputs: &[Input]) -> f64
where
    F: Fn(&mut Graph<f64>, &[Tensor]) -> Result<Tensor>,
{
    let a = analytic(&f, inputs);
    let n = numeric(&f, inputs);
    max_rel_err(&a, &n)
}

/// `sum(t * weights)` with fixed weights, so every output element matters.
pub fn weighted_sum(g: &mut Graph<f64>, t: Tensor, seed: u64) -> Result<Tensor> {
    let n = g.numel(t);
    let shape = g.shape(t).to_vec();
    let mut r = rng(seed);
    let w = g.constant(uniform(&mut r, n, -1.0, 1.0), &shape)?;
    let p = g.mul(t, w)?;
    g.sum(p)
}
