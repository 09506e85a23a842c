//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

/// Per-parameter moment accumulators, keyed like the [`ParamSet`] they serve.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    moments: BTreeMap<String, Moments>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamReport {
    /// Parameters whose gradient held a non-finite entry; left untouched.
    pub skipped: Vec<String>,
}

impl AdamState {
    pub fn for_params(params: &ParamSet) -> Self {
        let moments = params
            .iter()
            .map(|(name, p)| {
                let [r, c] = p.value.shape();
                (
                    name.to_string(),
                    Moments {
                        m: Tensor::zeros(r, c),
                        v: Tensor::zeros(r, c),
                        step: 0,
                    },
                )
            })
            .collect();
        AdamState { moments }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.moments.keys().map(String::as_str)
    }

    pub fn get(&self, name: &str) -> Option<&Moments> {
        self.moments.get(name)
    }

    pub fn matches(&self, params: &ParamSet) -> bool {
        self.keys().eq(params.names())
    }
}

/// One Adam step on every parameter of `params` using its accumulated grad.
pub fn adam_update(params: &mut ParamSet, state: &mut AdamState, lr: f64) -> Result<AdamReport> {
    if !state.matches(params) {
        return Err(Error::invalid("optimizer state keys do not match parameters"));
    }
    let mut report = AdamReport::default();
    for (name, p) in params.iter_mut() {
        let mo = state.moments.get_mut(name).expect("keys matched");
        if mo.m.shape() != p.value.shape() || p.grad.shape() != p.value.shape() {
            return Err(Error::ShapeMismatch {
                op: "adam_update",
                left: p.value.shape(),
                right: p.grad.shape(),
            });
        }
        if !p.grad.all_finite() {
            report.skipped.push(name.to_string());
            continue;
        }
        mo.step += 1;
        let t = mo.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        let g = p.grad.data();
        let m = mo.m.data_mut();
        let v = mo.v.data_mut();
        let w = p.value.data_mut();
        for k in 0..w.len() {
            m[k] = BETA1 * m[k] + (1.0 - BETA1) * g[k];
            v[k] = BETA2 * v[k] + (1.0 - BETA2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            w[k] -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
    Ok(report)
}
