//! Alternating bi-level training of the encoder, the two view generators and
//! the optional InfoBN estimator.
//!
//! One step on a batch of anchors runs, in order:
//!
//! 1. each generator encodes the anchors, draws `z` and samples one view per
//!    anchor;
//! 2. the encoder θ takes a gradient step on the contrastive loss between the
//!    two view batches;
//! 3. per-anchor condition values are read off that same forward pass (and
//!    from the estimator π when the principle needs it);
//! 4. rewards gate the anchors;
//! 5. both generators take a step on `(1/B) Σ_i w_i (ℓ1_i + ℓ2_i)`, where
//!    `ℓk_i` is generator `k`'s generation loss on anchor `i`;
//! 6. π takes a step on the InfoBN loss using fresh views.
//!
//! Views are discrete samples, so the contrastive loss never reaches the
//! generator parameters; generators learn only through the gated generation
//! loss.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::AugmentationPolicy;
use crate::encoder::{stage, Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::generator::{
    decode_block, decode_edge_probs, default_walks, gen_loss, reparameterize_on, sample_view, standard_normal,
    Generator, GeneratorConfig,
};
use crate::graph::{make_batch, Batch, Dataset, Graph};
use crate::objectives::{compute_rewards, contrastive_on, infobn_on, RewardConfig};
use crate::optim::{adam_update, AdamState};
use crate::params::ParamSet;
use crate::rng::{indexed_stream, stream, SeedStream, Stream};
use crate::tape::{Precision, Tape, Var};
use crate::tensor::Tensor;

/// Consecutive aborted steps after which a run fails.
pub const MAX_CONSECUTIVE_ABORTS: usize = 3;

/// Where contrastive views come from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ViewSource {
    /// Sampled from the two learnable generators.
    Generated,
    /// Drawn from a fixed augmentation pair; generators are left untouched.
    Augment(AugmentationPolicy),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub reward: RewardConfig,
    /// When false every reward is 1 regardless of the principle.
    pub reward_feedback: bool,
    pub views: ViewSource,
    pub lr_theta: f64,
    pub lr_phi: f64,
    pub lr_pi: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub gen_hidden: usize,
    pub gen_layers: usize,
    pub latent_dim: usize,
    /// Epochs between intermediate checkpoints; 0 disables them.
    pub checkpoint_every: usize,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            reward: RewardConfig::default(),
            reward_feedback: true,
            views: ViewSource::Generated,
            lr_theta: 1e-3,
            lr_phi: 1e-3,
            lr_pi: 1e-3,
            epochs: 20,
            batch_size: 32,
            hidden: 32,
            layers: 3,
            gen_hidden: 32,
            gen_layers: 3,
            latent_dim: 16,
            checkpoint_every: 0,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        for (name, lr) in [("lr_theta", self.lr_theta), ("lr_phi", self.lr_phi), ("lr_pi", self.lr_pi)] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be a finite non-negative rate, got {lr}")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be at least 2, got {}", self.batch_size)));
        }
        if self.hidden == 0 || self.layers == 0 || self.gen_hidden == 0 || self.gen_layers == 0 || self.latent_dim == 0
        {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        Ok(())
    }

    pub fn encoder_config(&self, input_dim: usize) -> EncoderConfig {
        EncoderConfig::new(input_dim, self.hidden, self.layers)
    }

    pub fn generator_config(&self, input_dim: usize) -> GeneratorConfig {
        GeneratorConfig {
            input_dim,
            hidden: self.gen_hidden,
            layers: self.gen_layers,
            latent_dim: self.latent_dim,
        }
    }

    fn tape(&self) -> Tape {
        Tape::with_precision(self.precision)
    }
}

#[derive(Clone, Debug)]
pub struct Streams {
    pub batching: SeedStream,
    pub reparam: SeedStream,
    pub walks: SeedStream,
    pub augment: SeedStream,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams {
            batching: stream(seed, Stream::Batching),
            reparam: stream(seed, Stream::Reparam),
            walks: stream(seed, Stream::Walks),
            augment: stream(seed, Stream::Augment),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub theta: Encoder,
    pub phi1: Generator,
    pub phi2: Generator,
    pub pi: Option<Encoder>,
    pub opt_theta: AdamState,
    pub opt_phi1: AdamState,
    pub opt_phi2: AdamState,
    pub opt_pi: Option<AdamState>,
    pub epoch: usize,
    pub steps: u64,
    pub seed: u64,
    pub rng: Streams,
    pub consecutive_aborts: usize,
}

impl TrainState {
    /// Fresh parameters: θ, φ₁, φ₂ and π are drawn from independent streams.
    pub fn init(cfg: &TrainConfig, input_dim: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let theta = Encoder::init(cfg.encoder_config(input_dim), &mut indexed_stream(seed, Stream::Init, 0))?;
        let phi1 = Generator::init(cfg.generator_config(input_dim), &mut indexed_stream(seed, Stream::Init, 1))?;
        let phi2 = Generator::init(cfg.generator_config(input_dim), &mut indexed_stream(seed, Stream::Init, 2))?;
        let pi = if cfg.reward.principle.uses_estimator() {
            Some(Encoder::init(cfg.encoder_config(input_dim), &mut indexed_stream(seed, Stream::Init, 3))?)
        } else {
            None
        };
        Ok(TrainState {
            opt_theta: AdamState::for_params(&theta.params),
            opt_phi1: AdamState::for_params(&phi1.params),
            opt_phi2: AdamState::for_params(&phi2.params),
            opt_pi: pi.as_ref().map(|p| AdamState::for_params(&p.params)),
            theta,
            phi1,
            phi2,
            pi,
            epoch: 0,
            steps: 0,
            seed,
            rng: Streams::new(seed),
            consecutive_aborts: 0,
        })
    }

    pub fn fingerprints(&self) -> Fingerprints {
        Fingerprints {
            theta: self.theta.params.fingerprint(),
            phi1: self.phi1.params.fingerprint(),
            phi2: self.phi2.params.fingerprint(),
            pi: self.pi.as_ref().map(|p| p.params.fingerprint()),
        }
    }

    fn all_finite(&self) -> bool {
        let ok = |ps: &ParamSet| ps.iter().all(|(_, p)| p.value.all_finite());
        ok(&self.theta.params)
            && ok(&self.phi1.params)
            && ok(&self.phi2.params)
            && self.pi.as_ref().is_none_or(|p| ok(&p.params))
    }
}

/// Parameter hashes of every network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Fingerprints {
    pub theta: u64,
    pub phi1: u64,
    pub phi2: u64,
    pub pi: Option<u64>,
}

/// Hashes taken before the step and after each of its three updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PhaseTrace {
    pub start: Fingerprints,
    pub after_theta: Fingerprints,
    pub after_phi: Fingerprints,
    pub after_pi: Fingerprints,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub loss_cl: f64,
    /// Unweighted mean generation loss of each generator.
    pub loss_gen1: f64,
    pub loss_gen2: f64,
    /// Estimator loss of the π update.
    pub loss_ibn: Option<f64>,
    pub cl_mean: f64,
    pub ibn_mean: Option<f64>,
    pub threshold: f64,
    pub reward_hi_frac: f64,
    pub weights: Vec<f64>,
    pub gen_terms1: Vec<f64>,
    pub gen_terms2: Vec<f64>,
    /// Value of the gated generation objective that was differentiated.
    pub lower_objective: f64,
    pub grad_norm_theta: f64,
    pub grad_norm_phi1: f64,
    pub grad_norm_phi2: f64,
    pub grad_norm_pi: Option<f64>,
    pub halted_walks: usize,
    pub skipped_updates: Vec<String>,
    pub trace: PhaseTrace,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Completed(Box<StepMetrics>),
    /// A loss went non-finite; parameters and optimizer state were restored.
    Aborted(String),
}

/// Views sampled from one generator for a batch of anchors.
#[derive(Clone, Debug)]
pub struct GeneratedViews {
    pub views: Vec<Graph>,
    /// Standard-normal noise behind `z`, kept so the generation loss is
    /// evaluated at the same draw.
    pub eps: Tensor,
    pub halted_walks: usize,
}

fn posterior_vars(gen: &Generator, tape: &mut Tape, batch: &Batch, grad: bool) -> Result<(crate::params::Bound, Var, Var)> {
    let bound = if grad {
        gen.params.bind(tape)
    } else {
        gen.params.bind_frozen(tape)
    };
    let staged = stage(tape, batch);
    let (mu, logvar) = gen.encode(tape, &bound, &staged)?;
    Ok((bound, mu, logvar))
}

/// Draws `z` for every node of `batch` and samples one view per anchor with
/// the default walk settings.
///
/// Noise is one `N × latent` standard-normal block from `reparam`; walks
/// consume `walks` graph by graph.
pub fn generate_views(
    gen: &Generator,
    batch: &Batch,
    precision: Precision,
    reparam: &mut SeedStream,
    walks: &mut SeedStream,
) -> Result<GeneratedViews> {
    let mut tape = Tape::with_precision(precision);
    let (_, mu, logvar) = posterior_vars(gen, &mut tape, batch, false)?;
    let eps = standard_normal(batch.num_nodes(), gen.config.latent_dim, reparam);
    let z = reparameterize_on(&mut tape, mu, logvar, eps.clone())?;
    let z = tape.value(z);
    let mut views = Vec::with_capacity(batch.num_graphs());
    let mut halted = 0;
    for (i, g) in batch.graphs.iter().enumerate() {
        let rows: Vec<usize> = batch.node_range(i).collect();
        let zi = z.gather_rows(&rows)?;
        let p = decode_edge_probs(&zi, &vec![0; rows.len()])?;
        let (walk_len, n_walks) = default_walks(g.n());
        let v = sample_view(g, &p, walk_len, n_walks, walks)?;
        halted += v.halted_walks;
        views.push(v.graph);
    }
    Ok(GeneratedViews {
        views,
        eps,
        halted_walks: halted,
    })
}

/// Per-anchor generation losses on a tape with the generator's parameters
/// bound for gradients.
pub fn generation_terms(
    gen: &Generator,
    tape: &mut Tape,
    batch: &Batch,
    eps: &Tensor,
) -> Result<(crate::params::Bound, Vec<Var>)> {
    let (bound, mu, logvar) = posterior_vars(gen, tape, batch, true)?;
    let z = reparameterize_on(tape, mu, logvar, eps.clone())?;
    let mut terms = Vec::with_capacity(batch.num_graphs());
    for (i, g) in batch.graphs.iter().enumerate() {
        let rows: Vec<usize> = batch.node_range(i).collect();
        let zi = tape.gather(z, rows.clone())?;
        let mui = tape.gather(mu, rows.clone())?;
        let lvi = tape.gather(logvar, rows)?;
        let p = decode_block(tape, zi)?;
        terms.push(gen_loss(tape, g, p, mui, lvi)?.total);
    }
    Ok((bound, terms))
}

fn weighted_sum(tape: &mut Tape, terms: &[Var], weights: &[f64]) -> Result<Var> {
    let b = terms.len() as f64;
    let mut acc = tape.scale(terms[0], weights[0] / b)?;
    for (t, w) in terms.iter().zip(weights).skip(1) {
        let s = tape.scale(*t, w / b)?;
        acc = tape.add(acc, s)?;
    }
    Ok(acc)
}

struct Snapshot {
    theta: ParamSet,
    phi1: ParamSet,
    phi2: ParamSet,
    pi: Option<ParamSet>,
    opt: (AdamState, AdamState, AdamState, Option<AdamState>),
}

impl Snapshot {
    fn take(s: &TrainState) -> Self {
        Snapshot {
            theta: s.theta.params.clone(),
            phi1: s.phi1.params.clone(),
            phi2: s.phi2.params.clone(),
            pi: s.pi.as_ref().map(|p| p.params.clone()),
            opt: (s.opt_theta.clone(), s.opt_phi1.clone(), s.opt_phi2.clone(), s.opt_pi.clone()),
        }
    }

    fn restore(self, s: &mut TrainState) {
        s.theta.params = self.theta;
        s.phi1.params = self.phi1;
        s.phi2.params = self.phi2;
        if let (Some(p), Some(v)) = (s.pi.as_mut(), self.pi) {
            p.params = v;
        }
        (s.opt_theta, s.opt_phi1, s.opt_phi2, s.opt_pi) = self.opt;
    }
}

struct NonFinite(String);

fn finite(what: &str, v: f64) -> std::result::Result<f64, NonFinite> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(NonFinite(format!("{what} is {v}")))
    }
}

enum Failure {
    NonFinite(String),
    Hard(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Hard(e)
    }
}

impl From<NonFinite> for Failure {
    fn from(e: NonFinite) -> Self {
        Failure::NonFinite(e.0)
    }
}

/// One alternating update on a batch of anchor graphs.
///
/// A non-finite loss restores every parameter and optimizer state to its
/// value before the step and reports [`StepOutcome::Aborted`]; the third
/// abort in a row is returned as an error.
pub fn train_step(state: &mut TrainState, anchors: &[Graph], cfg: &TrainConfig) -> Result<StepOutcome> {
    if anchors.len() < 2 {
        return Err(Error::BatchTooSmall(anchors.len()));
    }
    let snapshot = Snapshot::take(state);
    match step_inner(state, anchors, cfg) {
        Ok(m) => {
            state.consecutive_aborts = 0;
            state.steps += 1;
            Ok(StepOutcome::Completed(Box::new(m)))
        }
        Err(Failure::Hard(e)) => {
            snapshot.restore(state);
            Err(e)
        }
        Err(Failure::NonFinite(msg)) => {
            snapshot.restore(state);
            state.consecutive_aborts += 1;
            if state.consecutive_aborts >= MAX_CONSECUTIVE_ABORTS {
                return Err(Error::NonFinite(format!(
                    "{} consecutive aborted steps, last: {msg}",
                    state.consecutive_aborts
                )));
            }
            Ok(StepOutcome::Aborted(msg))
        }
    }
}

fn view_pair(state: &mut TrainState, batch: &Batch, cfg: &TrainConfig) -> Result<(Vec<Graph>, Vec<Graph>, Option<[Tensor; 2]>, usize)> {
    match cfg.views {
        ViewSource::Generated => {
            let rng = &mut state.rng;
            let a = generate_views(&state.phi1, batch, cfg.precision, &mut rng.reparam, &mut rng.walks)?;
            let b = generate_views(&state.phi2, batch, cfg.precision, &mut rng.reparam, &mut rng.walks)?;
            let halted = a.halted_walks + b.halted_walks;
            Ok((a.views, b.views, Some([a.eps, b.eps]), halted))
        }
        ViewSource::Augment(policy) => {
            let mut first = Vec::with_capacity(batch.num_graphs());
            let mut second = Vec::with_capacity(batch.num_graphs());
            for g in &batch.graphs {
                let (a, b) = policy.apply_pair(g, &mut state.rng.augment)?;
                first.push(a);
                second.push(b);
            }
            Ok((first, second, None, 0))
        }
    }
}

fn step_inner(state: &mut TrainState, anchors: &[Graph], cfg: &TrainConfig) -> std::result::Result<StepMetrics, Failure> {
    let principle = cfg.reward.principle;
    if principle.uses_estimator() != state.pi.is_some() {
        return Err(Error::Config(format!("estimator presence does not match principle {principle}")).into());
    }
    let start = state.fingerprints();
    let batch = make_batch(anchors)?;
    let mut skipped = Vec::new();

    // (a) views
    let (v1, v2, eps, halted_walks) = view_pair(state, &batch, cfg)?;
    let b1 = make_batch(&v1)?;
    let b2 = make_batch(&v2)?;

    // (b) encoder step
    let mut tape = cfg.tape();
    let bound = state.theta.params.bind(&mut tape);
    let s1 = stage(&mut tape, &b1);
    let s2 = stage(&mut tape, &b2);
    let (_, zth1) = state.theta.forward(&mut tape, &bound, &s1)?;
    let (_, zth2) = state.theta.forward(&mut tape, &bound, &s2)?;
    let cl = contrastive_on(&mut tape, zth1, zth2)?;
    let loss_cl = finite("contrastive loss", tape.value(cl.total).item())?;
    let cl_terms = tape.value(cl.per_anchor).data().to_vec();
    let zth = [tape.value(zth1).clone(), tape.value(zth2).clone()];
    let grads = tape.backward(cl.total)?;
    state.theta.params.zero_grad();
    state.theta.params.accumulate(&bound, &grads);
    let grad_norm_theta = state.theta.params.grad_norm();
    skipped.extend(adam_update(&mut state.theta.params, &mut state.opt_theta, cfg.lr_theta)?.skipped);
    let after_theta = state.fingerprints();

    // (c) condition values
    let ibn_terms = match &state.pi {
        Some(pi) => {
            let zpi1 = pi.projections(&b1)?;
            let zpi2 = pi.projections(&b2)?;
            let mut t = Tape::new();
            let vars = [&zpi1, &zth[0], &zpi2, &zth[1]].map(|x| t.constant(x.clone()));
            let l = infobn_on(&mut t, vars[0], vars[1], vars[2], vars[3])?;
            finite("InfoBN condition", t.value(l.total).item())?;
            Some(t.value(l.per_anchor).data().to_vec())
        }
        None => None,
    };

    // (d) rewards
    let rewards = compute_rewards(&cl_terms, ibn_terms.as_deref(), &cfg.reward)?;
    let weights = if cfg.reward_feedback {
        rewards.weights.clone()
    } else {
        vec![1.0; anchors.len()]
    };

    // (e) generator step
    let mut gen_terms = [Vec::new(), Vec::new()];
    let mut grad_norm_phi = [0.0; 2];
    let mut lower_objective = 0.0;
    if let Some(eps) = &eps {
        for k in 0..2 {
            let (gen, opt) = match k {
                0 => (&mut state.phi1, &mut state.opt_phi1),
                _ => (&mut state.phi2, &mut state.opt_phi2),
            };
            let mut tape = cfg.tape();
            let (bound, terms) = generation_terms(gen, &mut tape, &batch, &eps[k])?;
            gen_terms[k] = terms.iter().map(|&t| tape.value(t).item()).collect();
            let obj = weighted_sum(&mut tape, &terms, &weights)?;
            lower_objective += finite("generation loss", tape.value(obj).item())?;
            let grads = tape.backward(obj)?;
            gen.params.zero_grad();
            gen.params.accumulate(&bound, &grads);
            grad_norm_phi[k] = gen.params.grad_norm();
            skipped.extend(adam_update(&mut gen.params, opt, cfg.lr_phi)?.skipped);
        }
    }
    let after_phi = state.fingerprints();

    // (f) estimator step on fresh views
    let mut loss_ibn = None;
    let mut grad_norm_pi = None;
    if state.pi.is_some() {
        let (f1, f2, _, _) = view_pair(state, &batch, cfg)?;
        let fb1 = make_batch(&f1)?;
        let fb2 = make_batch(&f2)?;
        let zth1 = state.theta.projections(&fb1)?;
        let zth2 = state.theta.projections(&fb2)?;
        let pi = state.pi.as_mut().expect("checked");
        let opt = state.opt_pi.as_mut().expect("paired with pi");
        let mut tape = cfg.tape();
        let bound = pi.params.bind(&mut tape);
        let s1 = stage(&mut tape, &fb1);
        let s2 = stage(&mut tape, &fb2);
        let (_, zpi1) = pi.forward(&mut tape, &bound, &s1)?;
        let (_, zpi2) = pi.forward(&mut tape, &bound, &s2)?;
        let t1 = tape.constant(zth1);
        let t2 = tape.constant(zth2);
        let l = infobn_on(&mut tape, zpi1, t1, zpi2, t2)?;
        loss_ibn = Some(finite("InfoBN loss", tape.value(l.total).item())?);
        let grads = tape.backward(l.total)?;
        pi.params.zero_grad();
        pi.params.accumulate(&bound, &grads);
        grad_norm_pi = Some(pi.params.grad_norm());
        skipped.extend(adam_update(&mut pi.params, opt, cfg.lr_pi)?.skipped);
    }
    let after_pi = state.fingerprints();

    if !state.all_finite() {
        return Err(Failure::NonFinite("parameters became non-finite".into()));
    }

    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    Ok(StepMetrics {
        loss_cl,
        loss_gen1: mean(&gen_terms[0]),
        loss_gen2: mean(&gen_terms[1]),
        loss_ibn,
        cl_mean: mean(&cl_terms),
        ibn_mean: ibn_terms.as_deref().map(mean),
        threshold: rewards.threshold,
        reward_hi_frac: weights.iter().filter(|&&w| w == 1.0).count() as f64 / weights.len() as f64,
        weights,
        gen_terms1: std::mem::take(&mut gen_terms[0]),
        gen_terms2: std::mem::take(&mut gen_terms[1]),
        lower_objective,
        grad_norm_theta,
        grad_norm_phi1: grad_norm_phi[0],
        grad_norm_phi2: grad_norm_phi[1],
        grad_norm_pi,
        halted_walks,
        skipped_updates: skipped,
        trace: PhaseTrace {
            start,
            after_theta,
            after_phi,
            after_pi,
        },
    })
}

/// Metrics averaged over the completed steps of one epoch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub aborted: usize,
    pub loss_cl: f64,
    pub loss_gen1: f64,
    pub loss_gen2: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loss_ibn: Option<f64>,
    pub cl_mean: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ibn_mean: Option<f64>,
    pub threshold: f64,
    pub reward_hi_frac: f64,
}

impl EpochLog {
    fn from_steps(epoch: usize, steps: &[StepMetrics], aborted: usize) -> Self {
        let n = steps.len().max(1) as f64;
        let avg = |f: &dyn Fn(&StepMetrics) -> f64| steps.iter().map(f).sum::<f64>() / n;
        let avg_opt = |f: &dyn Fn(&StepMetrics) -> Option<f64>| {
            let v: Vec<f64> = steps.iter().filter_map(f).collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        };
        EpochLog {
            epoch,
            steps: steps.len(),
            aborted,
            loss_cl: avg(&|m| m.loss_cl),
            loss_gen1: avg(&|m| m.loss_gen1),
            loss_gen2: avg(&|m| m.loss_gen2),
            loss_ibn: avg_opt(&|m| m.loss_ibn),
            cl_mean: avg(&|m| m.cl_mean),
            ibn_mean: avg_opt(&|m| m.ibn_mean),
            threshold: avg(&|m| m.threshold),
            reward_hi_frac: avg(&|m| m.reward_hi_frac),
        }
    }
}

/// Shuffled batches of indices; a trailing batch of one joins its
/// predecessor.
pub fn epoch_batches(n: usize, batch_size: usize, rng: &mut SeedStream) -> Result<Vec<Vec<usize>>> {
    if n < 2 {
        return Err(Error::BatchTooSmall(n));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().expect("non-empty");
        batches.last_mut().expect("non-empty").extend(tail);
    }
    Ok(batches)
}

/// Per-epoch notification: state after the epoch, its log and wall time.
pub type EpochHook<'a> = dyn FnMut(&TrainState, &EpochLog, Duration) -> Result<()> + 'a;

/// Self-supervised pretraining over the whole dataset.
pub fn pretrain(dataset: &Dataset, cfg: &TrainConfig, seed: u64, on_epoch: &mut EpochHook<'_>) -> Result<(TrainState, Vec<EpochLog>)> {
    let mut state = TrainState::init(cfg, dataset.feature_dim(), seed)?;
    let logs = resume(&mut state, dataset, cfg, on_epoch)?;
    Ok((state, logs))
}

/// Continues training `state` until `cfg.epochs` epochs are done.
pub fn resume(state: &mut TrainState, dataset: &Dataset, cfg: &TrainConfig, on_epoch: &mut EpochHook<'_>) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    let graphs = dataset.graphs();
    let mut logs = Vec::new();
    while state.epoch < cfg.epochs {
        let clock = Instant::now();
        let mut steps = Vec::new();
        let mut aborted = 0;
        for idx in epoch_batches(graphs.len(), cfg.batch_size, &mut state.rng.batching)? {
            let anchors: Vec<Graph> = idx.iter().map(|&i| graphs[i].clone()).collect();
            match train_step(state, &anchors, cfg)? {
                StepOutcome::Completed(m) => steps.push(*m),
                StepOutcome::Aborted(_) => aborted += 1,
            }
        }
        state.epoch += 1;
        let log = EpochLog::from_steps(state.epoch, &steps, aborted);
        on_epoch(state, &log, clock.elapsed())?;
        logs.push(log);
    }
    Ok(logs)
}

/// Trains one generator on its generation loss alone (every weight 1),
/// full batch over `graphs`. Returns the loss before each update.
pub fn train_generator(gen: &mut Generator, graphs: &[Graph], epochs: usize, lr: f64, seed: u64) -> Result<Vec<f64>> {
    let batch = make_batch(graphs)?;
    let mut opt = AdamState::for_params(&gen.params);
    let mut reparam = stream(seed, Stream::Reparam);
    let weights = vec![1.0; graphs.len()];
    let mut losses = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        let eps = standard_normal(batch.num_nodes(), gen.config.latent_dim, &mut reparam);
        let mut tape = Tape::new();
        let (bound, terms) = generation_terms(gen, &mut tape, &batch, &eps)?;
        let obj = weighted_sum(&mut tape, &terms, &weights)?;
        let value = tape.value(obj).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("generation loss is {value}")));
        }
        losses.push(value);
        let grads = tape.backward(obj)?;
        gen.params.zero_grad();
        gen.params.accumulate(&bound, &grads);
        adam_update(&mut gen.params, &mut opt, lr)?;
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{synth_two_community, SynthConfig, SynthFeatures};
    use crate::objectives::Principle;

    fn small() -> (Dataset, TrainConfig) {
        let data = synth_two_community(
            &SynthConfig {
                n_graphs: 6,
                n_nodes: 8,
                features: SynthFeatures::Gaussian(3),
                ..SynthConfig::default()
            },
            1,
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 3,
            hidden: 6,
            layers: 2,
            gen_hidden: 6,
            gen_layers: 2,
            latent_dim: 4,
            ..TrainConfig::default()
        };
        (data, cfg)
    }

    #[test]
    fn batching_covers_every_index_once() {
        let mut rng = stream(0, Stream::Batching);
        let b = epoch_batches(7, 3, &mut rng).unwrap();
        assert_eq!(b.len(), 2);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn estimator_follows_principle() {
        let (data, mut cfg) = small();
        assert!(TrainState::init(&cfg, data.feature_dim(), 0).unwrap().pi.is_none());
        cfg.reward.principle = Principle::InfoBn;
        let s = TrainState::init(&cfg, data.feature_dim(), 0).unwrap();
        assert!(s.pi.is_some() && s.opt_pi.is_some());
    }

    #[test]
    fn zero_encoder_rate_freezes_theta() {
        let (data, mut cfg) = small();
        cfg.lr_theta = 0.0;
        let mut s = TrainState::init(&cfg, data.feature_dim(), 4).unwrap();
        let before = s.theta.params.fingerprint();
        let out = train_step(&mut s, &data.graphs()[..3], &cfg).unwrap();
        assert!(matches!(out, StepOutcome::Completed(_)));
        assert_eq!(s.theta.params.fingerprint(), before);
    }

    #[test]
    fn pretrain_counts_epochs() {
        let (data, cfg) = small();
        let mut seen = 0;
        let (state, logs) = pretrain(&data, &cfg, 3, &mut |_, _, _| {
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, 2);
        assert_eq!(state.epoch, 2);
        assert_eq!(logs.iter().map(|l| l.steps).sum::<usize>(), 4);
    }
}
