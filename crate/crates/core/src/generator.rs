//! Variational graph autoencoder used as a learnable view generator.
//!
//! The encoder is a GIN trunk (same layout as [`crate::encoder`]) followed
//! by two linear heads for the per-node posterior mean and log-variance.
//! Edge probabilities come from the inner-product decoder
//! `P_ij = σ(z_i · z_j)` restricted to pairs inside one graph. Discrete
//! views are drawn from `P` by [`sample_view`].

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoder::{gin_trunk, insert_gin, stage, Staged};
use crate::error::{Error, Result};
use crate::graph::{Batch, Graph};
use crate::params::{insert_linear, linear, Bound, ParamSet};
use crate::tape::{sigmoid_scalar, Tape, Var};
use crate::tensor::Tensor;

pub const LOGVAR_MIN: f64 = -10.0;
pub const LOGVAR_MAX: f64 = 10.0;
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub latent_dim: usize,
}

/// Parameters `trunk.{l}.lin{1,2}`, `mu` and `logvar`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator {
    pub config: GeneratorConfig,
    pub params: ParamSet,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatentPosterior {
    pub mu: Tensor,
    pub logvar: Tensor,
}

impl Generator {
    pub fn init(config: GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.input_dim == 0 || config.hidden == 0 || config.layers == 0 || config.latent_dim == 0 {
            return Err(Error::invalid(format!("degenerate generator dimensions {config:?}")));
        }
        let mut params = ParamSet::new();
        insert_gin(&mut params, rng, "trunk", config.input_dim, config.hidden, config.layers);
        insert_linear(&mut params, rng, "mu", config.hidden, config.latent_dim);
        insert_linear(&mut params, rng, "logvar", config.hidden, config.latent_dim);
        Ok(Generator { config, params })
    }

    /// Same architecture with every parameter set to zero.
    pub fn zeroed(config: GeneratorConfig) -> Result<Self> {
        let mut rng = crate::rng::stream(0, crate::rng::Stream::Init);
        let mut g = Self::init(config, &mut rng)?;
        for (_, p) in g.params.iter_mut() {
            p.value.data_mut().fill(0.0);
        }
        Ok(g)
    }

    /// Posterior mean and (clamped) log-variance for every node of the batch.
    pub fn encode(&self, tape: &mut Tape, bound: &Bound, staged: &Staged) -> Result<(Var, Var)> {
        let d = tape.shape(staged.x)[1];
        if d != self.config.input_dim {
            return Err(Error::FeatureDimMismatch {
                expected: self.config.input_dim,
                found: d,
            });
        }
        let h = gin_trunk(tape, bound, "trunk", self.config.layers, staged)?;
        let mu = linear(tape, bound, "mu", h)?;
        let logvar = linear(tape, bound, "logvar", h)?;
        let logvar = tape.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX)?;
        Ok((mu, logvar))
    }

    pub fn vgae_encode(&self, batch: &Batch) -> Result<LatentPosterior> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let staged = stage(&mut tape, batch);
        let (mu, logvar) = self.encode(&mut tape, &bound, &staged)?;
        Ok(LatentPosterior {
            mu: tape.value(mu).clone(),
            logvar: tape.value(logvar).clone(),
        })
    }
}

pub fn standard_normal(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `z = mu + exp(logvar / 2) ⊙ eps`; `eps` enters as a constant.
pub fn reparameterize_on(tape: &mut Tape, mu: Var, logvar: Var, eps: Tensor) -> Result<Var> {
    let half = tape.scale(logvar, 0.5)?;
    let std = tape.exp(half)?;
    let eps = tape.constant(eps);
    let noise = tape.mul(std, eps)?;
    tape.add(mu, noise)
}

/// Draws `z` from the posterior with noise from `rng` (row-major order).
pub fn reparameterize(post: &LatentPosterior, rng: &mut impl Rng) -> Result<Tensor> {
    if post.mu.shape() != post.logvar.shape() {
        return Err(Error::ShapeMismatch {
            op: "reparameterize",
            left: post.mu.shape(),
            right: post.logvar.shape(),
        });
    }
    let eps = standard_normal(post.mu.rows(), post.mu.cols(), rng);
    let mut tape = Tape::new();
    let mu = tape.constant(post.mu.clone());
    let lv = tape.constant(post.logvar.clone());
    let z = reparameterize_on(&mut tape, mu, lv, eps)?;
    Ok(tape.value(z).clone())
}

fn offdiag_mask(n: usize) -> Tensor {
    Tensor::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 })
}

/// Decoded probabilities for the nodes of a single graph.
pub fn decode_block(tape: &mut Tape, z: Var) -> Result<Var> {
    let n = tape.shape(z)[0];
    let zt = tape.transpose(z)?;
    let logits = tape.matmul(z, zt)?;
    let p = tape.sigmoid(logits)?;
    let mask = tape.constant(offdiag_mask(n));
    tape.mul(p, mask)
}

/// Dense decoded probabilities for a whole batch; zero across graphs and on
/// the diagonal.
pub fn decode_edge_probs(z: &Tensor, graph_id: &[usize]) -> Result<Tensor> {
    if z.rows() != graph_id.len() {
        return Err(Error::LengthMismatch(z.rows(), graph_id.len()));
    }
    let logits = z.matmul_t(z)?;
    let n = z.rows();
    Ok(Tensor::from_fn(n, n, |i, j| {
        if i == j || graph_id[i] != graph_id[j] {
            0.0
        } else {
            sigmoid_scalar(logits.get(i, j))
        }
    }))
}

/// Default walk settings for a graph of `n` nodes: `(walk_len, n_walks)`.
pub fn default_walks(n: usize) -> (usize, usize) {
    (n.max(1), n.div_ceil(4).max(1))
}

#[derive(Clone, Debug)]
pub struct SampledView {
    pub graph: Graph,
    /// Walks stopped early at a node whose probability row is all zero.
    pub halted_walks: usize,
}

/// Draws a discrete view of `g` from the probability matrix `p` (`n × n`).
///
/// `n_walks` walks of `walk_len` steps start at uniform nodes and move with
/// probability proportional to the current row of `p`. The view is the set
/// of visited nodes; each visited pair `(i, j)` becomes an edge with
/// probability `p_ij`. Node features are copied from `g`.
pub fn sample_view(g: &Graph, p: &Tensor, walk_len: usize, n_walks: usize, rng: &mut impl Rng) -> Result<SampledView> {
    let n = g.n();
    if p.shape() != [n, n] {
        return Err(Error::ShapeMismatch {
            op: "sample_view",
            left: [n, n],
            right: p.shape(),
        });
    }
    if walk_len == 0 || n_walks == 0 {
        return Err(Error::invalid("walk_len and n_walks must be at least 1"));
    }
    let mut visited = vec![false; n];
    let mut halted = 0;
    for _ in 0..n_walks {
        let mut cur = rng.random_range(0..n);
        visited[cur] = true;
        for _ in 0..walk_len {
            let row = p.row(cur);
            let total: f64 = row.iter().enumerate().filter(|&(j, _)| j != cur).map(|(_, v)| v.max(0.0)).sum();
            if total <= 0.0 {
                halted += 1;
                break;
            }
            let mut u = rng.random::<f64>() * total;
            let mut next = cur;
            for (j, &v) in row.iter().enumerate() {
                if j == cur || v <= 0.0 {
                    continue;
                }
                next = j;
                if u < v {
                    break;
                }
                u -= v;
            }
            cur = next;
            visited[cur] = true;
        }
    }
    let nodes: Vec<usize> = (0..n).filter(|&i| visited[i]).collect();
    let mut edges = Vec::new();
    for (a, &i) in nodes.iter().enumerate() {
        for (b, &j) in nodes.iter().enumerate().skip(a + 1) {
            if rng.random::<f64>() < p.get(i, j) {
                edges.push((a, b));
            }
        }
    }
    let x = g.x().gather_rows(&nodes)?;
    Ok(SampledView {
        graph: Graph::new(nodes.len(), edges, x, g.label())?,
        halted_walks: halted,
    })
}

/// Loss nodes of one graph's generation objective.
#[derive(Clone, Copy, Debug)]
pub struct GenLoss {
    pub total: Var,
    pub bce: Var,
    pub kl: Var,
    /// The graph had no edges, so the positive weight fell back to 1.
    pub no_edges: bool,
}

/// Weight on positive entries: negatives over positives among ordered pairs.
pub fn positive_weight(n: usize, edges: usize) -> f64 {
    if edges == 0 {
        1.0
    } else {
        ((n * n - n) as f64 - 2.0 * edges as f64) / (2.0 * edges as f64)
    }
}

/// Weighted reconstruction BCE plus the per-node KL to `N(0, I)`.
///
/// The BCE is summed over ordered off-diagonal pairs, with positive entries
/// weighted by [`positive_weight`] and probabilities clamped to
/// `[1e-7, 1 - 1e-7]`. The KL term is summed over nodes and latent
/// dimensions and divided by `n`.
pub fn gen_loss(tape: &mut Tape, g: &Graph, p: Var, mu: Var, logvar: Var) -> Result<GenLoss> {
    let n = g.n();
    if tape.shape(p) != [n, n] {
        return Err(Error::ShapeMismatch {
            op: "gen_loss",
            left: [n, n],
            right: tape.shape(p),
        });
    }
    if tape.shape(mu) != tape.shape(logvar) || tape.shape(mu)[0] != n {
        return Err(Error::ShapeMismatch {
            op: "gen_loss",
            left: tape.shape(mu),
            right: tape.shape(logvar),
        });
    }
    let m = g.num_edges();
    let w = positive_weight(n, m);

    let bce = if n > 1 {
        let adj = g.adjacency();
        let pos = adj.map(|a| a * w);
        let neg = Tensor::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 - adj.get(i, j) });
        let pc = tape.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
        let log_p = tape.log(pc)?;
        let flipped = tape.scale(pc, -1.0)?;
        let one_minus = tape.add_scalar(flipped, 1.0)?;
        let log_q = tape.log(one_minus)?;
        let pos = tape.constant(pos);
        let neg = tape.constant(neg);
        let a = tape.mul(log_p, pos)?;
        let b = tape.mul(log_q, neg)?;
        let s = tape.add(a, b)?;
        let s = tape.sum(s)?;
        tape.scale(s, -1.0)?
    } else {
        tape.constant(Tensor::scalar(0.0))
    };

    // KL(N(mu, σ²) ‖ N(0, 1)) = -½ Σ (1 + log σ² − mu² − σ²)
    let mu2 = tape.mul(mu, mu)?;
    let var = tape.exp(logvar)?;
    let t = tape.sub(logvar, mu2)?;
    let t = tape.sub(t, var)?;
    let t = tape.add_scalar(t, 1.0)?;
    let t = tape.sum(t)?;
    let kl = tape.scale(t, -0.5 / n as f64)?;

    let total = tape.add(bce, kl)?;
    Ok(GenLoss {
        total,
        bce,
        kl,
        no_edges: m == 0,
    })
}

/// Value of [`gen_loss`] for plain tensors: `(total, bce, kl)`.
pub fn gen_loss_value(g: &Graph, p: &Tensor, post: &LatentPosterior) -> Result<(f64, f64, f64)> {
    let mut tape = Tape::new();
    let p = tape.constant(p.clone());
    let mu = tape.constant(post.mu.clone());
    let lv = tape.constant(post.logvar.clone());
    let l = gen_loss(&mut tape, g, p, mu, lv)?;
    Ok((
        tape.value(l.total).item(),
        tape.value(l.bce).item(),
        tape.value(l.kl).item(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::make_batch;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> GeneratorConfig {
        GeneratorConfig {
            input_dim: 2,
            hidden: 4,
            layers: 2,
            latent_dim: 3,
        }
    }

    fn clique(n: usize) -> Graph {
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                edges.push((i, j));
            }
        }
        Graph::new(n, edges, Tensor::from_fn(n, 2, |i, j| (i + j) as f64), None).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_posterior() {
        let gen = Generator::zeroed(cfg()).unwrap();
        let post = gen.vgae_encode(&make_batch(&[clique(4)]).unwrap()).unwrap();
        assert!(post.mu.data().iter().all(|&v| v == 0.0));
        assert!(post.logvar.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standard_posterior_returns_raw_noise() {
        let post = LatentPosterior {
            mu: Tensor::zeros(3, 2),
            logvar: Tensor::zeros(3, 2),
        };
        let z = reparameterize(&post, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let eps = standard_normal(3, 2, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(z, eps);
    }

    #[test]
    fn vanishing_variance_returns_mean() {
        let mu = Tensor::from_fn(4, 2, |i, j| i as f64 - j as f64);
        let post = LatentPosterior {
            mu: mu.clone(),
            logvar: Tensor::full(4, 2, LOGVAR_MIN),
        };
        let z = reparameterize(&post, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let eps = standard_normal(4, 2, &mut ChaCha8Rng::seed_from_u64(1));
        for k in 0..8 {
            assert!((z.data()[k] - mu.data()[k]).abs() <= 1e-2 * eps.data()[k].abs());
        }
    }

    #[test]
    fn decoder_cases() {
        let z = Tensor::from_rows(&[[1.0, 0.0], [0.0, 1.0], [1.0, 3.0], [1.0, 3.0]]).unwrap();
        let p = decode_edge_probs(&z, &[0, 0, 0, 1]).unwrap();
        assert_eq!(p.get(0, 1), 0.5);
        assert_eq!(p.get(2, 3), 0.0);
        assert_eq!(p.get(2, 2), 0.0);
        let p = decode_edge_probs(&z, &[0, 0, 0, 0]).unwrap();
        // |z|² = 10 → σ(10)
        let expected = 1.0 / (1.0 + (-10.0f64).exp());
        assert!((p.get(2, 3) - expected).abs() < 1e-15);
        assert!((p.get(2, 3) - 0.99995).abs() < 1e-5);
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(p.get(i, j), p.get(j, i));
            }
        }
    }

    #[test]
    fn block_decoder_agrees_with_dense() {
        let z = Tensor::from_fn(3, 2, |i, j| (i as f64 - 1.0) * (j as f64 + 0.5));
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let p = decode_block(&mut tape, zv).unwrap();
        assert_eq!(tape.value(p), &decode_edge_probs(&z, &[0, 0, 0]).unwrap());
    }

    #[test]
    fn sampler_unit_and_zero_probabilities() {
        let g = clique(4);
        let ones = Tensor::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 1.0 });
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = sample_view(&g, &ones, 20, 4, &mut rng).unwrap();
        assert_eq!(v.graph.n(), 4);
        assert_eq!(v.graph.num_edges(), 6);

        let zeros = Tensor::zeros(4, 4);
        let v = sample_view(&g, &zeros, 5, 2, &mut rng).unwrap();
        assert!(v.graph.n() >= 1 && v.graph.n() <= 2);
        assert_eq!(v.graph.num_edges(), 0);
        assert_eq!(v.halted_walks, 2);
    }

    #[test]
    fn perfect_reconstruction_loss_is_tiny() {
        let g = clique(3).with_edges(vec![(0, 1)]).unwrap();
        let p = Tensor::from_fn(3, 3, |i, j| {
            if i != j && g.has_edge(i, j) {
                1.0 - PROB_CLAMP
            } else {
                PROB_CLAMP
            }
        });
        let post = LatentPosterior {
            mu: Tensor::zeros(3, 2),
            logvar: Tensor::zeros(3, 2),
        };
        let (total, bce, kl) = gen_loss_value(&g, &p, &post).unwrap();
        assert_eq!(kl, 0.0);
        assert!(bce >= 0.0 && bce <= 9.0 * positive_weight(3, 1) * -(1.0 - PROB_CLAMP).ln());
        assert!(total < 1e-5);
    }

    #[test]
    fn kl_closed_form() {
        let g = Graph::new(1, vec![], Tensor::ones(1, 1), None).unwrap();
        let post = LatentPosterior {
            mu: Tensor::scalar(1.0),
            logvar: Tensor::scalar(0.0),
        };
        let (_, bce, kl) = gen_loss_value(&g, &Tensor::zeros(1, 1), &post).unwrap();
        assert_eq!(bce, 0.0);
        assert_eq!(kl, 0.5);
    }

    #[test]
    fn edgeless_graph_flags_weight() {
        let g = Graph::new(3, vec![], Tensor::ones(3, 1), None).unwrap();
        assert_eq!(positive_weight(3, 0), 1.0);
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::full(3, 3, 0.5));
        let mu = tape.constant(Tensor::zeros(3, 1));
        let lv = tape.constant(Tensor::zeros(3, 1));
        assert!(gen_loss(&mut tape, &g, p, mu, lv).unwrap().no_edges);
    }
}
