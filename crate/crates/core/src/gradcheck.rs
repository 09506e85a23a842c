//! Finite-difference verification of tape gradients.
//!
//! Every check reduces the function under test to a scalar, compares the
//! tape gradient of each input entry with a central difference, and reports
//! the worst relative error `|a - n| / max(|a|, |n|, SCALE_FLOOR)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tape::{Attrs, Axis, Prim, Tape, Var};
use crate::tensor::Tensor;

/// Central-difference step.
pub const STEP: f64 = 1e-5;
/// A check passes when every relative error is at or below this.
pub const TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared on an absolute scale.
pub const SCALE_FLOOR: f64 = 1e-3;
/// Inputs closer than this to a kink (relu at 0, clamp bounds) are moved away.
pub const KINK_MARGIN: f64 = 1e-3;

#[derive(Clone, Debug)]
pub struct TrialResult {
    pub max_rel_err: f64,
    pub entries: usize,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub trials: Vec<TrialResult>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        !self.trials.is_empty() && self.trials.iter().all(|t| t.max_rel_err <= self.tolerance)
    }

    pub fn worst(&self) -> f64 {
        self.trials.iter().map(|t| t.max_rel_err).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> usize {
        self.trials
            .iter()
            .filter(|t| t.max_rel_err > self.tolerance)
            .count()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(SCALE_FLOOR);
    (analytic - numeric).abs() / scale
}

/// Compares tape gradients of `f` against central differences.
///
/// `f` receives a fresh tape with every element of `inputs` registered as a
/// parameter (in order) and must return a scalar.
pub fn check_gradients<F>(inputs: &[Tensor], f: F) -> Result<TrialResult>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.param(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let mut worst = 0.0f64;
    let mut entries = 0;
    let mut probe = inputs.to_vec();
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(inputs[i].rows(), inputs[i].cols()));
        for k in 0..inputs[i].len() {
            let orig = inputs[i].data()[k];
            probe[i].data_mut()[k] = orig + STEP;
            let plus = eval(&probe)?;
            probe[i].data_mut()[k] = orig - STEP;
            let minus = eval(&probe)?;
            probe[i].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * STEP);
            worst = worst.max(relative_error(analytic.data()[k], numeric));
            entries += 1;
        }
    }
    Ok(TrialResult {
        max_rel_err: worst,
        entries,
    })
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

fn away_from(t: Tensor, kinks: &[f64]) -> Tensor {
    t.map(|v| {
        let mut v = v;
        for &k in kinks {
            if (v - k).abs() < KINK_MARGIN {
                v = if v >= k { k + KINK_MARGIN } else { k - KINK_MARGIN };
            }
        }
        v
    })
}

/// Inputs and attributes for one randomized trial of `prim`.
fn trial_case(prim: Prim, rng: &mut ChaCha8Rng) -> (Vec<Tensor>, Attrs) {
    let mut dim = || rng.random_range(1..=4usize);
    let (r, c, k) = (dim(), dim(), dim());
    let axis = if rng.random_bool(0.5) { Axis::Rows } else { Axis::Cols };
    let base = |rng: &mut ChaCha8Rng| uniform(rng, r, c, -2.0, 2.0);
    match prim {
        Prim::MatMul => (
            vec![uniform(rng, r, k, -2.0, 2.0), uniform(rng, k, c, -2.0, 2.0)],
            Attrs::default(),
        ),
        Prim::Add | Prim::Sub | Prim::Mul | Prim::Div => {
            let shape = match rng.random_range(0..4) {
                0 => [r, c],
                1 => [1, c],
                2 => [r, 1],
                _ => [1, 1],
            };
            let rhs = if prim == Prim::Div {
                // keep the divisor away from zero
                uniform(rng, shape[0], shape[1], 0.5, 2.0).map(|v| if v > 1.25 { -v } else { v })
            } else {
                uniform(rng, shape[0], shape[1], -2.0, 2.0)
            };
            (vec![base(rng), rhs], Attrs::default())
        }
        Prim::Scale | Prim::AddScalar => {
            let s = rng.random_range(-2.0..2.0);
            (vec![base(rng)], Attrs::scalar(s))
        }
        Prim::Log => (vec![uniform(rng, r, c, 0.2, 2.0)], Attrs::default()),
        Prim::Relu => (vec![away_from(base(rng), &[0.0])], Attrs::default()),
        Prim::Clamp => (
            vec![away_from(base(rng), &[-1.0, 1.0])],
            Attrs::bounds(-1.0, 1.0),
        ),
        Prim::SumAxis | Prim::L2Norm | Prim::LogSumExp | Prim::LogMeanExp => {
            (vec![base(rng)], Attrs::axis(axis))
        }
        Prim::Concat => {
            let n = rng.random_range(1..=3);
            let parts = (0..n)
                .map(|_| {
                    let other = rng.random_range(1..=3);
                    match axis {
                        Axis::Rows => uniform(rng, other, c, -2.0, 2.0),
                        Axis::Cols => uniform(rng, r, other, -2.0, 2.0),
                    }
                })
                .collect();
            (parts, Attrs::axis(axis))
        }
        Prim::Gather => {
            let n = rng.random_range(1..=6);
            let idx = (0..n).map(|_| rng.random_range(0..r)).collect();
            (vec![base(rng)], Attrs::indices(idx))
        }
        Prim::Exp | Prim::Sigmoid | Prim::Sum | Prim::Mean | Prim::Transpose => {
            (vec![base(rng)], Attrs::default())
        }
    }
}

/// Randomized gradient check of a single primitive.
///
/// Each trial draws inputs in `[-2, 2]` (restricted to the primitive's
/// domain), contracts the output with fixed random weights, and compares
/// gradients against central differences.
pub fn grad_check(prim: Prim, trials: usize, seed: u64) -> Result<GradCheckReport> {
    let mut results = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
        let (inputs, attrs) = trial_case(prim, &mut rng);
        let weights = {
            let mut probe = Tape::new();
            let vars: Vec<Var> = inputs.iter().map(|t| probe.constant(t.clone())).collect();
            let out = probe.apply(prim, &vars, &attrs)?;
            let [r, c] = probe.shape(out);
            uniform(&mut rng, r, c, -1.0, 1.0)
        };
        let res = check_gradients(&inputs, |tape, vars| {
            let out = tape.apply(prim, vars, &attrs)?;
            let w = tape.constant(weights.clone());
            let prod = tape.mul(out, w)?;
            tape.sum(prod)
        })?;
        results.push(res);
    }
    Ok(GradCheckReport {
        name: prim.name().to_string(),
        trials: results,
        tolerance: TOLERANCE,
    })
}

/// Runs `trials` checks of an arbitrary scalar function over inputs drawn by
/// `make_inputs`.
pub fn grad_check_fn<G, F>(name: &str, trials: usize, seed: u64, make_inputs: G, f: F) -> Result<GradCheckReport>
where
    G: Fn(&mut ChaCha8Rng) -> Vec<Tensor>,
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut results = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(trial as u64));
        let inputs = make_inputs(&mut rng);
        results.push(check_gradients(&inputs, &f)?);
    }
    Ok(GradCheckReport {
        name: name.to_string(),
        trials: results,
        tolerance: TOLERANCE,
    })
}
