//! GIN encoder, sum readout and projection head.
//!
//! Each GIN layer computes `h ← relu(MLP((A + I) h))`, i.e. the update
//! `MLP((1 + ε) h_v + Σ_{u ∈ N(v)} h_u)` with ε fixed at zero. The MLP is
//! `linear → relu → linear`. Graph embeddings are per-graph sums of the final
//! node embeddings; the projection head maps them through
//! `linear → relu → linear` with no normalisation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Batch;
use crate::params::{insert_linear, linear, Bound, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
}

impl EncoderConfig {
    pub fn new(input_dim: usize, hidden: usize, layers: usize) -> Self {
        EncoderConfig {
            input_dim,
            hidden,
            layers,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden == 0 || self.layers == 0 {
            return Err(Error::invalid(format!("degenerate encoder dimensions {self:?}")));
        }
        Ok(())
    }
}

/// Encoder parameters: GIN layers `gin.{l}.lin{1,2}` and head `head.lin{1,2}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub params: ParamSet,
}

/// Batch tensors placed on a tape once and shared by every network.
#[derive(Clone, Copy, Debug)]
pub struct Staged {
    /// `A + I`, the GIN aggregation operator.
    pub agg: Var,
    /// `B × N` graph membership matrix.
    pub pool: Var,
    pub x: Var,
}

pub fn stage(tape: &mut Tape, batch: &Batch) -> Staged {
    let n = batch.num_nodes();
    let mut agg = batch.adj.clone();
    for i in 0..n {
        agg.set(i, i, agg.get(i, i) + 1.0);
    }
    let pool = Tensor::from_fn(batch.num_graphs(), n, |g, v| {
        if batch.graph_id[v] == g {
            1.0
        } else {
            0.0
        }
    });
    Staged {
        agg: tape.constant(agg),
        pool: tape.constant(pool),
        x: tape.constant(batch.x.clone()),
    }
}

pub(crate) fn insert_gin(params: &mut ParamSet, rng: &mut impl Rng, prefix: &str, input: usize, hidden: usize, layers: usize) {
    for l in 0..layers {
        let fan_in = if l == 0 { input } else { hidden };
        insert_linear(params, rng, &format!("{prefix}.{l}.lin1"), fan_in, hidden);
        insert_linear(params, rng, &format!("{prefix}.{l}.lin2"), hidden, hidden);
    }
}

/// Runs `layers` GIN rounds with parameters under `prefix`.
pub(crate) fn gin_trunk(tape: &mut Tape, bound: &Bound, prefix: &str, layers: usize, staged: &Staged) -> Result<Var> {
    let mut h = staged.x;
    for l in 0..layers {
        let msg = tape.matmul(staged.agg, h)?;
        let a = linear(tape, bound, &format!("{prefix}.{l}.lin1"), msg)?;
        let a = tape.relu(a)?;
        let b = linear(tape, bound, &format!("{prefix}.{l}.lin2"), a)?;
        h = tape.relu(b)?;
    }
    Ok(h)
}

/// Per-graph sum of node rows.
pub fn readout(tape: &mut Tape, node_embeds: Var, staged: &Staged) -> Result<Var> {
    let [_, n] = tape.shape(staged.pool);
    let [rows, _] = tape.shape(node_embeds);
    if rows != n {
        return Err(Error::ShapeMismatch {
            op: "readout",
            left: tape.shape(staged.pool),
            right: tape.shape(node_embeds),
        });
    }
    tape.matmul(staged.pool, node_embeds)
}

impl Encoder {
    pub fn init(config: EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        insert_gin(&mut params, rng, "gin", config.input_dim, config.hidden, config.layers);
        insert_linear(&mut params, rng, "head.lin1", config.hidden, config.hidden);
        insert_linear(&mut params, rng, "head.lin2", config.hidden, config.hidden);
        Ok(Encoder { config, params })
    }

    fn check_batch(&self, tape: &Tape, staged: &Staged) -> Result<()> {
        let d = tape.shape(staged.x)[1];
        if d != self.config.input_dim {
            return Err(Error::FeatureDimMismatch {
                expected: self.config.input_dim,
                found: d,
            });
        }
        Ok(())
    }

    /// Final node embeddings, `total nodes × hidden`.
    pub fn gin_forward(&self, tape: &mut Tape, bound: &Bound, staged: &Staged) -> Result<Var> {
        self.check_batch(tape, staged)?;
        gin_trunk(tape, bound, "gin", self.config.layers, staged)
    }

    pub fn project(&self, tape: &mut Tape, bound: &Bound, graph_embeds: Var) -> Result<Var> {
        let d = tape.shape(graph_embeds)[1];
        if d != self.config.hidden {
            return Err(Error::FeatureDimMismatch {
                expected: self.config.hidden,
                found: d,
            });
        }
        let a = linear(tape, bound, "head.lin1", graph_embeds)?;
        let a = tape.relu(a)?;
        linear(tape, bound, "head.lin2", a)
    }

    /// Graph embeddings and their projections.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, staged: &Staged) -> Result<(Var, Var)> {
        let h = self.gin_forward(tape, bound, staged)?;
        let g = readout(tape, h, staged)?;
        let z = self.project(tape, bound, g)?;
        Ok((g, z))
    }

    pub fn node_embeddings(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let staged = stage(&mut tape, batch);
        let h = self.gin_forward(&mut tape, &bound, &staged)?;
        Ok(tape.value(h).clone())
    }

    /// Frozen pooled embeddings `f(G)`, one row per graph.
    pub fn graph_embeddings(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let staged = stage(&mut tape, batch);
        let (g, _) = self.forward(&mut tape, &bound, &staged)?;
        Ok(tape.value(g).clone())
    }

    /// Frozen projections `h(f(G))`, one row per graph.
    pub fn projections(&self, batch: &Batch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let staged = stage(&mut tape, batch);
        let (_, z) = self.forward(&mut tape, &bound, &staged)?;
        Ok(tape.value(z).clone())
    }
}
