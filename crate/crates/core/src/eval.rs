//! Frozen-embedding linear probes and link-prediction metrics.

use rand::seq::{index::sample, SliceRandom};
use rand::Rng;

use crate::error::{Error, Result};
use crate::generator::{decode_edge_probs, Generator};
use crate::graph::{make_batch, Graph};
use crate::rng::SeedStream;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ProbeSplit {
    pub train_idx: Vec<usize>,
    pub test_idx: Vec<usize>,
}

/// Stratified `folds`-way split: each class is shuffled and dealt round-robin
/// over the folds, so fold sizes per class differ by at most one.
pub fn kfold_splits(labels: &[usize], folds: usize, rng: &mut SeedStream) -> Result<Vec<ProbeSplit>> {
    if folds < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {folds}")));
    }
    if labels.len() < folds {
        return Err(Error::invalid(format!("{} samples cannot fill {folds} folds", labels.len())));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut fold_of = vec![0; labels.len()];
    let mut next = 0;
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(rng);
        for i in members {
            fold_of[i] = next % folds;
            next += 1;
        }
    }
    Ok((0..folds)
        .map(|f| ProbeSplit {
            train_idx: (0..labels.len()).filter(|&i| fold_of[i] != f).collect(),
            test_idx: (0..labels.len()).filter(|&i| fold_of[i] == f).collect(),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    /// Ridge penalty `l2/2 · ‖W‖²` (bias unpenalised).
    pub l2: f64,
    pub iterations: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            l2: 1e-3,
            iterations: 500,
            lr: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    /// Test accuracy per fold; `None` when the training fold had one class.
    pub fold_accuracy: Vec<Option<f64>>,
    pub mean: f64,
    /// Population standard deviation over the evaluated folds.
    pub sd: f64,
}

impl ProbeResult {
    pub fn skipped(&self) -> usize {
        self.fold_accuracy.iter().filter(|a| a.is_none()).count()
    }
}

/// Multinomial logistic regression fitted by full-batch gradient descent.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub w: Tensor,
    pub b: Vec<f64>,
    pub shift: Vec<f64>,
    pub scale: Vec<f64>,
}

fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

impl LogisticModel {
    /// Standardizes with the training statistics, then runs `iterations`
    /// steps from zero weights on mean cross-entropy plus the ridge term.
    pub fn fit(x: &[&[f64]], y: &[usize], classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(Error::LengthMismatch(x.len(), y.len()));
        }
        let d = x[0].len();
        let n = x.len() as f64;
        let shift: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n).collect();
        let scale: Vec<f64> = (0..d)
            .map(|j| {
                let var = x.iter().map(|r| (r[j] - shift[j]).powi(2)).sum::<f64>() / n;
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let xs: Vec<Vec<f64>> = x
            .iter()
            .map(|r| (0..d).map(|j| (r[j] - shift[j]) / scale[j]).collect())
            .collect();
        let mut w = Tensor::zeros(d.max(1), classes);
        let mut b = vec![0.0; classes];
        let mut p = vec![0.0; classes];
        for _ in 0..cfg.iterations {
            let mut gw = Tensor::zeros(d.max(1), classes);
            let mut gb = vec![0.0; classes];
            for (row, &label) in xs.iter().zip(y) {
                for c in 0..classes {
                    p[c] = b[c] + (0..d).map(|j| row[j] * w.get(j, c)).sum::<f64>();
                }
                softmax_in_place(&mut p);
                p[label] -= 1.0;
                for c in 0..classes {
                    gb[c] += p[c] / n;
                    for j in 0..d {
                        gw.set(j, c, gw.get(j, c) + row[j] * p[c] / n);
                    }
                }
            }
            for k in 0..w.len() {
                let g = gw.data()[k] + cfg.l2 * w.data()[k];
                w.data_mut()[k] -= cfg.lr * g;
            }
            for c in 0..classes {
                b[c] -= cfg.lr * gb[c];
            }
        }
        Ok(LogisticModel { w, b, shift, scale })
    }

    pub fn predict(&self, row: &[f64]) -> usize {
        let classes = self.b.len();
        let d = self.shift.len();
        let mut best = (0, f64::NEG_INFINITY);
        for c in 0..classes {
            let s = self.b[c]
                + (0..d)
                    .map(|j| (row[j] - self.shift[j]) / self.scale[j] * self.w.get(j, c))
                    .sum::<f64>();
            if s > best.1 {
                best = (c, s);
            }
        }
        best.0
    }
}

/// Trains one probe per split on frozen `embeds` rows and reports test
/// accuracy per fold with mean and standard deviation.
pub fn linear_probe(embeds: &Tensor, labels: &[usize], splits: &[ProbeSplit], cfg: &ProbeConfig) -> Result<ProbeResult> {
    if embeds.rows() != labels.len() {
        return Err(Error::LengthMismatch(embeds.rows(), labels.len()));
    }
    let classes = labels.iter().copied().max().map_or(0, |m| m + 1);
    let mut fold_accuracy = Vec::with_capacity(splits.len());
    for split in splits {
        if let Some(&i) = split.train_idx.iter().chain(&split.test_idx).find(|&&i| i >= labels.len()) {
            return Err(Error::invalid(format!("split index {i} out of range")));
        }
        let first = split.train_idx.first().map(|&i| labels[i]);
        if split.test_idx.is_empty() || split.train_idx.iter().all(|&i| Some(labels[i]) == first) {
            fold_accuracy.push(None);
            continue;
        }
        let x: Vec<&[f64]> = split.train_idx.iter().map(|&i| embeds.row(i)).collect();
        let y: Vec<usize> = split.train_idx.iter().map(|&i| labels[i]).collect();
        let model = LogisticModel::fit(&x, &y, classes, cfg)?;
        let correct = split
            .test_idx
            .iter()
            .filter(|&&i| model.predict(embeds.row(i)) == labels[i])
            .count();
        fold_accuracy.push(Some(correct as f64 / split.test_idx.len() as f64));
    }
    let done: Vec<f64> = fold_accuracy.iter().flatten().copied().collect();
    if done.is_empty() {
        return Err(Error::invalid("every probe fold was skipped"));
    }
    let mean = done.iter().sum::<f64>() / done.len() as f64;
    let sd = (done.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / done.len() as f64).sqrt();
    Ok(ProbeResult {
        fold_accuracy,
        mean,
        sd,
    })
}

/// `(AUROC, AUPRC)` of positive against negative scores.
///
/// AUROC counts every (positive, negative) pair, ties as one half. AUPRC is
/// average precision: thresholds are the distinct scores in descending order
/// and each contributes `Δrecall · precision`.
pub fn link_pred_metrics(pos: &[f64], neg: &[f64]) -> Result<(f64, f64)> {
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::invalid("link metrics need positive and negative scores"));
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        return Err(Error::NonFinite("NaN link score".into()));
    }
    let mut sorted_neg = neg.to_vec();
    sorted_neg.sort_by(f64::total_cmp);
    let mut twice = 0u64;
    for &p in pos {
        let below = sorted_neg.partition_point(|&n| n < p) as u64;
        let not_above = sorted_neg.partition_point(|&n| n <= p) as u64;
        twice += 2 * below + (not_above - below);
    }
    let auroc = twice as f64 / (2 * pos.len() * neg.len()) as f64;

    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let total_pos = pos.len() as f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut auprc = 0.0;
    let mut k = 0;
    while k < all.len() {
        let t = all[k].0;
        while k < all.len() && all[k].0 == t {
            if all[k].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            k += 1;
        }
        let recall = tp as f64 / total_pos;
        let precision = tp as f64 / (tp + fp) as f64;
        auprc += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok((auroc, auprc))
}

/// Held-out positive edges and an equal number of sampled non-edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LinkEvalSet {
    pub pos_pairs: Vec<(usize, usize)>,
    pub neg_pairs: Vec<(usize, usize)>,
}

/// Holds out `⌈frac · |E|⌉` edges (at least one when the graph has any) and
/// as many uniformly drawn non-edges. Returns the graph without the held-out
/// edges together with the evaluation pairs.
pub fn make_link_split(g: &Graph, frac: f64, rng: &mut impl Rng) -> Result<(Graph, LinkEvalSet)> {
    if !(frac > 0.0 && frac < 1.0) {
        return Err(Error::invalid(format!("held-out fraction must lie in (0, 1), got {frac}")));
    }
    let m = g.num_edges();
    if m == 0 {
        return Err(Error::invalid("graph has no edges to hold out"));
    }
    let k = ((frac * m as f64).ceil() as usize).clamp(1, m);
    let mut non_edges = Vec::new();
    for i in 0..g.n() {
        for j in (i + 1)..g.n() {
            if !g.has_edge(i, j) {
                non_edges.push((i, j));
            }
        }
    }
    if non_edges.len() < k {
        return Err(Error::invalid("too few non-edges for a balanced held-out set"));
    }
    let mut held = vec![false; m];
    let mut pos_pairs: Vec<(usize, usize)> = sample(rng, m, k)
        .into_iter()
        .map(|e| {
            held[e] = true;
            g.edges()[e]
        })
        .collect();
    pos_pairs.sort_unstable();
    let mut neg_pairs: Vec<(usize, usize)> = sample(rng, non_edges.len(), k).into_iter().map(|i| non_edges[i]).collect();
    neg_pairs.sort_unstable();
    let kept = g
        .edges()
        .iter()
        .zip(&held)
        .filter(|(_, &h)| !h)
        .map(|(&e, _)| e)
        .collect();
    Ok((g.with_edges(kept)?, LinkEvalSet { pos_pairs, neg_pairs }))
}

fn check_pairs(g: &Graph, pairs: &[(usize, usize)]) -> Result<()> {
    for &(i, j) in pairs {
        if i >= g.n() || j >= g.n() || i == j {
            return Err(Error::invalid(format!("pair ({i}, {j}) is not a node pair of a {}-node graph", g.n())));
        }
    }
    Ok(())
}

/// Decoded probabilities at the posterior mean for every node pair of `g`.
pub fn mean_edge_probs(g: &Graph, gen: &Generator) -> Result<Tensor> {
    let post = gen.vgae_encode(&make_batch(std::slice::from_ref(g))?)?;
    decode_edge_probs(&post.mu, &vec![0; g.n()])
}

/// Scores the held-out pairs with the generator run on `g` minus the
/// held-out positive edges.
pub fn eval_generator(g: &Graph, gen: &Generator, held_out: &LinkEvalSet) -> Result<(f64, f64)> {
    check_pairs(g, &held_out.pos_pairs)?;
    check_pairs(g, &held_out.neg_pairs)?;
    let removed: Vec<(usize, usize)> = g
        .edges()
        .iter()
        .copied()
        .filter(|e| !held_out.pos_pairs.iter().any(|&(a, b)| (a.min(b), a.max(b)) == *e))
        .collect();
    let visible = g.with_edges(removed)?;
    let p = mean_edge_probs(&visible, gen)?;
    let pos: Vec<f64> = held_out.pos_pairs.iter().map(|&(i, j)| p.get(i, j)).collect();
    let neg: Vec<f64> = held_out.neg_pairs.iter().map(|&(i, j)| p.get(i, j)).collect();
    link_pred_metrics(&pos, &neg)
}
