#![allow(dead_code)]

use gclprior::gradcheck::{relative_error, STEP};
use gclprior::params::{Bound, ParamSet};
use gclprior::tape::{Tape, Var};
use gclprior::tensor::Tensor;
use gclprior::Result;
use rand::Rng;

/// Worst relative error between tape gradients of `f` with respect to every
/// entry of `params` and central differences.
pub fn param_grad_error<F>(params: &ParamSet, f: F) -> f64
where
    F: Fn(&mut Tape, &Bound) -> Result<Var>,
{
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let loss = f(&mut tape, &bound).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut analytic = params.clone();
    analytic.zero_grad();
    analytic.accumulate(&bound, &grads);

    let eval = |p: &ParamSet| {
        let mut t = Tape::new();
        let b = p.bind_frozen(&mut t);
        let l = f(&mut t, &b).unwrap();
        t.value(l).item()
    };
    let mut worst: f64 = 0.0;
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in names {
        let base = params.value(&name).unwrap().clone();
        for k in 0..base.len() {
            let mut probe = params.clone();
            let mut up = base.clone();
            up.data_mut()[k] += STEP;
            probe.set_value(&name, up).unwrap();
            let fp = eval(&probe);
            let mut dn = base.clone();
            dn.data_mut()[k] -= STEP;
            probe.set_value(&name, dn).unwrap();
            let fm = eval(&probe);
            let numeric = (fp - fm) / (2.0 * STEP);
            let a = analytic.get(&name).unwrap().grad.data()[k];
            worst = worst.max(relative_error(a, numeric));
        }
    }
    worst
}

/// Fills every parameter with uniform values in `[-scale, scale]`.
pub fn randomize(params: &mut ParamSet, rng: &mut impl Rng, scale: f64) {
    for (_, p) in params.iter_mut() {
        let r = p.value.rows();
        let c = p.value.cols();
        p.value = Tensor::from_fn(r, c, |_, _| rng.random_range(-scale..scale));
    }
}

pub fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

/// Brute-force cosine similarity, written out independently of the crate.
pub fn cos(u: &[f64], v: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for k in 0..u.len() {
        dot += u[k] * v[k];
        nu += u[k] * u[k];
        nv += v[k] * v[k];
    }
    dot / (nu.sqrt().max(1e-8) * nv.sqrt().max(1e-8))
}

/// Double-loop contrastive oracle: per-anchor terms.
pub fn contrastive_oracle(z1: &Tensor, z2: &Tensor) -> Vec<f64> {
    let b = z1.rows();
    (0..b)
        .map(|i| {
            let pos = cos(z1.row(i), z2.row(i));
            let mut acc = 0.0;
            for j in 0..b {
                if j != i {
                    acc += cos(z1.row(i), z2.row(j)).exp();
                }
            }
            -pos + (acc / (b - 1) as f64).ln()
        })
        .collect()
}

// every pair, ties count one half
pub fn brute_auroc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut score = 0.0;
    for &p in pos {
        for &n in neg {
            if p > n {
                score += 1.0;
            } else if p == n {
                score += 0.5;
            }
        }
    }
    score / (pos.len() * neg.len()) as f64
}

// every distinct threshold from the top, recounting hits from scratch
pub fn brute_auprc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut thresholds: Vec<f64> = pos.iter().chain(neg).copied().collect();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let mut area = 0.0;
    let mut prev = 0.0;
    for t in thresholds {
        let tp = pos.iter().filter(|&&s| s >= t).count();
        let fp = neg.iter().filter(|&&s| s >= t).count();
        let recall = tp as f64 / pos.len() as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        area += (recall - prev) * precision;
        prev = recall;
    }
    area
}
