//! Contrastive and InfoBN losses, condition values and reward gating.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{Axis, Tape, Var};
use crate::tensor::Tensor;

/// Floor for vector norms in cosine similarity.
pub const COSINE_EPS: f64 = 1e-8;

/// `uᵀv / (max(‖u‖, ε) · max(‖v‖, ε))`; zero when either vector is zero.
pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::LengthMismatch(u.len(), v.len()));
    }
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt().max(COSINE_EPS);
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt().max(COSINE_EPS);
    Ok(u.iter().zip(v).map(|(a, b)| (a / nu) * (b / nv)).sum())
}

fn normalize_rows(tape: &mut Tape, z: Var) -> Result<Var> {
    let norms = tape.l2_norm(z, Axis::Cols)?;
    let norms = tape.clamp(norms, COSINE_EPS, f64::INFINITY)?;
    tape.div(z, norms)
}

/// Matrix of cosine similarities `S_ij = sim(a_i, b_j)`.
pub fn similarity_matrix(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let an = normalize_rows(tape, a)?;
    let bn = normalize_rows(tape, b)?;
    let bt = tape.transpose(bn)?;
    tape.matmul(an, bt)
}

/// Loss nodes: the batch mean and the `B × 1` column of per-anchor terms.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub per_anchor: Var,
}

fn check_pair(tape: &Tape, a: Var, b: Var) -> Result<usize> {
    let (sa, sb) = (tape.shape(a), tape.shape(b));
    if sa != sb {
        return Err(Error::ShapeMismatch {
            op: "contrastive",
            left: sa,
            right: sb,
        });
    }
    if sa[0] < 2 {
        return Err(Error::BatchTooSmall(sa[0]));
    }
    Ok(sa[0])
}

/// Per-anchor terms `−sim(a_i, b_i) + log mean_{j≠i} exp(sim(a_i, b_j))`.
fn anchor_terms(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let batch = check_pair(tape, a, b)?;
    let s = similarity_matrix(tape, a, b)?;
    let eye = tape.constant(Tensor::identity(batch));
    let diag = tape.mul(s, eye)?;
    let pos = tape.sum_axis(diag, Axis::Cols)?;
    let mask = tape.constant(Tensor::from_fn(batch, batch, |i, j| {
        if i == j {
            f64::NEG_INFINITY
        } else {
            0.0
        }
    }));
    let off = tape.add(s, mask)?;
    let neg = tape.log_mean_exp(off, Axis::Cols)?;
    tape.sub(neg, pos)
}

/// Contrastive loss between two batches of projected view embeddings.
pub fn contrastive_on(tape: &mut Tape, z1: Var, z2: Var) -> Result<LossVars> {
    let per_anchor = anchor_terms(tape, z1, z2)?;
    let total = tape.mean(per_anchor)?;
    Ok(LossVars { total, per_anchor })
}

/// InfoBN estimate: the contrastive term between the estimator's and the
/// encoder's embeddings, summed over both views.
pub fn infobn_on(tape: &mut Tape, zpi1: Var, zth1: Var, zpi2: Var, zth2: Var) -> Result<LossVars> {
    let t1 = anchor_terms(tape, zpi1, zth1)?;
    let t2 = anchor_terms(tape, zpi2, zth2)?;
    let per_anchor = tape.add(t1, t2)?;
    let total = tape.mean(per_anchor)?;
    Ok(LossVars { total, per_anchor })
}

/// Evaluated loss: `(mean, per-anchor values)`.
pub type LossValue = (f64, Vec<f64>);

fn read(tape: &Tape, l: LossVars) -> LossValue {
    (tape.value(l.total).item(), tape.value(l.per_anchor).data().to_vec())
}

pub fn contrastive_loss(z1: &Tensor, z2: &Tensor) -> Result<LossValue> {
    let mut tape = Tape::new();
    let a = tape.constant(z1.clone());
    let b = tape.constant(z2.clone());
    let l = contrastive_on(&mut tape, a, b)?;
    Ok(read(&tape, l))
}

pub fn infobn_loss(zpi1: &Tensor, zth1: &Tensor, zpi2: &Tensor, zth2: &Tensor) -> Result<LossValue> {
    let mut tape = Tape::new();
    let vars = [zpi1, zth1, zpi2, zth2].map(|t| tape.constant(t.clone()));
    let l = infobn_on(&mut tape, vars[0], vars[1], vars[2], vars[3])?;
    Ok(read(&tape, l))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Principle {
    None,
    InfoMin,
    InfoBn,
    MinBn,
}

impl Principle {
    pub const ALL: [Principle; 4] = [Principle::None, Principle::InfoMin, Principle::InfoBn, Principle::MinBn];

    pub fn name(self) -> &'static str {
        match self {
            Principle::None => "none",
            Principle::InfoMin => "infomin",
            Principle::InfoBn => "infobn",
            Principle::MinBn => "minbn",
        }
    }

    /// Whether the principle needs the InfoBN estimator.
    pub fn uses_estimator(self) -> bool {
        matches!(self, Principle::InfoBn | Principle::MinBn)
    }
}

impl fmt::Display for Principle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Principle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Principle::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdMode {
    #[serde(rename = "mean-sd")]
    MeanMinusSd,
    #[serde(rename = "mean")]
    Mean,
    #[serde(rename = "mean+sd")]
    MeanPlusSd,
}

impl ThresholdMode {
    pub const ALL: [ThresholdMode; 3] = [ThresholdMode::MeanMinusSd, ThresholdMode::Mean, ThresholdMode::MeanPlusSd];

    pub fn name(self) -> &'static str {
        match self {
            ThresholdMode::MeanMinusSd => "mean-sd",
            ThresholdMode::Mean => "mean",
            ThresholdMode::MeanPlusSd => "mean+sd",
        }
    }

    /// Batch statistic of `values`; the standard deviation is the population one.
    pub fn threshold(self, values: &[f64]) -> f64 {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = || (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        match self {
            ThresholdMode::MeanMinusSd => mean - sd(),
            ThresholdMode::Mean => mean,
            ThresholdMode::MeanPlusSd => mean + sd(),
        }
    }
}

impl fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ThresholdMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownKind(s.to_string()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub principle: Principle,
    pub delta: f64,
    pub threshold_mode: ThresholdMode,
    /// Only set for [`Principle::MinBn`].
    pub gamma: Option<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            principle: Principle::InfoMin,
            delta: 0.01,
            threshold_mode: ThresholdMode::Mean,
            gamma: None,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Config(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        match (self.principle, self.gamma) {
            (Principle::MinBn, None) => Err(Error::Config("gamma required for principle minbn".into())),
            (Principle::MinBn, Some(g)) if !(0.0..=1.0).contains(&g) => {
                Err(Error::Config(format!("gamma must lie in [0, 1], got {g}")))
            }
            (p, Some(_)) if p != Principle::MinBn => {
                Err(Error::Config(format!("gamma is only meaningful for minbn, not {p}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Rewards {
    pub weights: Vec<f64>,
    /// Per-anchor condition values.
    pub condition: Vec<f64>,
    pub threshold: f64,
}

impl Rewards {
    pub fn high_fraction(&self) -> f64 {
        self.weights.iter().filter(|&&w| w == 1.0).count() as f64 / self.weights.len() as f64
    }
}

/// Reward weights from per-anchor condition values.
///
/// Each weight is 1 when the anchor's condition value is strictly above the
/// batch threshold and `delta` otherwise. With [`Principle::None`] every
/// weight is 1; the contrastive terms still define the logged threshold.
pub fn compute_rewards(cl: &[f64], ibn: Option<&[f64]>, cfg: &RewardConfig) -> Result<Rewards> {
    cfg.validate()?;
    if cl.is_empty() {
        return Err(Error::BatchTooSmall(0));
    }
    if let Some(ibn) = ibn {
        if ibn.len() != cl.len() {
            return Err(Error::LengthMismatch(cl.len(), ibn.len()));
        }
    }
    let condition: Vec<f64> = match (cfg.principle, ibn) {
        (Principle::None | Principle::InfoMin, None) => cl.to_vec(),
        (Principle::InfoBn, Some(ibn)) => ibn.to_vec(),
        (Principle::MinBn, Some(ibn)) => {
            let g = cfg.gamma.expect("validated");
            cl.iter().zip(ibn).map(|(c, b)| g * c + (1.0 - g) * b).collect()
        }
        (p, Some(_)) => return Err(Error::invalid(format!("principle {p} takes no InfoBN values"))),
        (p, None) => return Err(Error::invalid(format!("principle {p} needs InfoBN values"))),
    };
    let threshold = cfg.threshold_mode.threshold(&condition);
    let weights = if cfg.principle == Principle::None {
        vec![1.0; condition.len()]
    } else {
        condition
            .iter()
            .map(|&c| if c > threshold { 1.0 } else { cfg.delta })
            .collect()
    };
    Ok(Rewards {
        weights,
        condition,
        threshold,
    })
}
