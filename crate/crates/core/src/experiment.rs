//! Config-driven runs: pretraining, evaluation, grids and probability dumps.
//!
//! Configs are flat `key = value` files with dotted keys; `#` starts a
//! comment. Every key has a default, unknown keys are rejected, and the
//! resolved config is echoed to `config.echo` in a form that parses back to
//! the same run.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use serde_json::json;

use crate::augment::{AugKind, AugmentationPolicy};
use crate::checkpoint::Checkpoint;
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::eval::{eval_generator, kfold_splits, linear_probe, make_link_split, mean_edge_probs, ProbeConfig, ProbeResult};
use crate::generator::{Generator, GeneratorConfig};
use crate::graph::{load_tudataset, make_batch, synth_two_community, Dataset, LoadOptions, SynthConfig, SynthFeatures};
use crate::objectives::{Principle, ThresholdMode};
use crate::rng::{indexed_stream, stream, Stream};
use crate::trainer::{pretrain, TrainConfig, TrainState, ViewSource};

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSpec {
    Synthetic { config: SynthConfig, seed: u64 },
    TuDataset { path: PathBuf, name: String, max_degree: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSpec {
    pub folds: usize,
    pub probe: ProbeConfig,
    /// Fraction of each graph's edges held out for link prediction.
    pub link_frac: f64,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec {
            folds: 5,
            probe: ProbeConfig::default(),
            link_frac: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub eval: EvalSpec,
    pub out: PathBuf,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetSpec::Synthetic {
                config: SynthConfig::default(),
                seed: 7,
            },
            train: TrainConfig::default(),
            eval: EvalSpec::default(),
            out: PathBuf::from("runs/default"),
            seed: 0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_features(key: &str, value: &str) -> Result<SynthFeatures> {
    match value.split_once(':') {
        Some(("gaussian", d)) => Ok(SynthFeatures::Gaussian(parse(key, d)?)),
        Some(("degree", d)) => Ok(SynthFeatures::Degree(parse(key, d)?)),
        None if value == "constant" => Ok(SynthFeatures::Constant),
        _ => Err(Error::Config(format!("invalid value `{value}` for `{key}`"))),
    }
}

fn features_name(f: SynthFeatures) -> String {
    match f {
        SynthFeatures::Gaussian(d) => format!("gaussian:{d}"),
        SynthFeatures::Degree(d) => format!("degree:{d}"),
        SynthFeatures::Constant => "constant".into(),
    }
}

/// Short names accepted by grids and the command line.
pub fn canonical_key(key: &str) -> &str {
    match key {
        "gamma" => "reward.gamma",
        "delta" => "reward.delta",
        "threshold" | "threshold-mode" | "threshold_mode" => "reward.threshold_mode",
        "principle" => "reward.principle",
        "epochs" => "train.epochs",
        other => other,
    }
}

/// Raw configuration state while keys are being applied.
#[derive(Clone, Debug)]
struct Draft {
    kind: String,
    synth: SynthConfig,
    synth_seed: u64,
    tu_path: Option<PathBuf>,
    tu_name: Option<String>,
    max_degree: usize,
    synth_keys: Vec<String>,
    tu_keys: Vec<String>,
    views: String,
    policy: AugmentationPolicy,
    cfg: ExperimentConfig,
}

impl Draft {
    fn new() -> Self {
        let cfg = ExperimentConfig::default();
        let DatasetSpec::Synthetic { config, seed } = cfg.dataset.clone() else {
            unreachable!("default dataset is synthetic")
        };
        Draft {
            kind: "synthetic".into(),
            synth: config,
            synth_seed: seed,
            tu_path: None,
            tu_name: None,
            max_degree: LoadOptions::default().max_degree,
            synth_keys: Vec::new(),
            tu_keys: Vec::new(),
            views: "generated".into(),
            policy: AugmentationPolicy::default(),
            cfg,
        }
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = canonical_key(key);
        let t = &mut self.cfg.train;
        match key {
            "seed" => self.cfg.seed = parse(key, value)?,
            "out" => self.cfg.out = PathBuf::from(value),
            "dataset.kind" => {
                if value != "synthetic" && value != "tudataset" {
                    return Err(Error::Config(format!("invalid value `{value}` for `{key}`")));
                }
                self.kind = value.into();
            }
            "dataset.path" => {
                self.tu_path = Some(PathBuf::from(value));
                self.tu_keys.push(key.into());
            }
            "dataset.name" => {
                self.tu_name = Some(value.into());
                self.tu_keys.push(key.into());
            }
            "dataset.max_degree" => {
                self.max_degree = parse(key, value)?;
                self.tu_keys.push(key.into());
            }
            "synth.n_graphs" | "synth.n_nodes" | "synth.p_in" | "synth.p_out" | "synth.features" | "synth.seed" => {
                match key {
                    "synth.n_graphs" => self.synth.n_graphs = parse(key, value)?,
                    "synth.n_nodes" => self.synth.n_nodes = parse(key, value)?,
                    "synth.p_in" => self.synth.p_in = parse(key, value)?,
                    "synth.p_out" => self.synth.p_out = parse(key, value)?,
                    "synth.features" => self.synth.features = parse_features(key, value)?,
                    _ => self.synth_seed = parse(key, value)?,
                }
                self.synth_keys.push(key.into());
            }
            "train.epochs" => t.epochs = parse(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.lr_theta" => t.lr_theta = parse(key, value)?,
            "train.lr_phi" => t.lr_phi = parse(key, value)?,
            "train.lr_pi" => t.lr_pi = parse(key, value)?,
            "train.hidden" => t.hidden = parse(key, value)?,
            "train.layers" => t.layers = parse(key, value)?,
            "train.gen_hidden" => t.gen_hidden = parse(key, value)?,
            "train.gen_layers" => t.gen_layers = parse(key, value)?,
            "train.latent_dim" => t.latent_dim = parse(key, value)?,
            "train.checkpoint_every" => t.checkpoint_every = parse(key, value)?,
            "train.reward_feedback" => t.reward_feedback = parse(key, value)?,
            "train.precision" => t.precision = parse(key, value)?,
            "train.views" => {
                if value != "generated" && value != "augment" {
                    return Err(Error::Config(format!("invalid value `{value}` for `{key}`")));
                }
                self.views = value.into();
            }
            "train.augment" => {
                let (a, b) = value
                    .split_once(',')
                    .ok_or_else(|| Error::Config(format!("`{key}` expects two kinds, got `{value}`")))?;
                self.policy.first = a.trim().parse::<AugKind>()?;
                self.policy.second = b.trim().parse::<AugKind>()?;
            }
            "train.aug_ratio" => self.policy.ratio = parse(key, value)?,
            "reward.principle" => t.reward.principle = parse::<Principle>(key, value)?,
            "reward.delta" => t.reward.delta = parse(key, value)?,
            "reward.threshold_mode" => t.reward.threshold_mode = parse::<ThresholdMode>(key, value)?,
            "reward.gamma" => t.reward.gamma = Some(parse(key, value)?),
            "eval.folds" => self.cfg.eval.folds = parse(key, value)?,
            "eval.probe_l2" => self.cfg.eval.probe.l2 = parse(key, value)?,
            "eval.probe_iterations" => self.cfg.eval.probe.iterations = parse(key, value)?,
            "eval.probe_lr" => self.cfg.eval.probe.lr = parse(key, value)?,
            "eval.link_frac" => self.cfg.eval.link_frac = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    fn finish(mut self) -> Result<ExperimentConfig> {
        self.cfg.dataset = match self.kind.as_str() {
            "synthetic" => {
                if let Some(k) = self.tu_keys.first() {
                    return Err(Error::Config(format!("`{k}` given for a synthetic dataset")));
                }
                DatasetSpec::Synthetic {
                    config: self.synth,
                    seed: self.synth_seed,
                }
            }
            _ => {
                if let Some(k) = self.synth_keys.first() {
                    return Err(Error::Config(format!("`{k}` given for a tudataset dataset")));
                }
                DatasetSpec::TuDataset {
                    path: self
                        .tu_path
                        .ok_or_else(|| Error::Config("dataset.path required for tudataset".into()))?,
                    name: self
                        .tu_name
                        .ok_or_else(|| Error::Config("dataset.name required for tudataset".into()))?,
                    max_degree: self.max_degree,
                }
            }
        };
        self.cfg.train.views = match self.views.as_str() {
            "augment" => ViewSource::Augment(self.policy),
            _ => ViewSource::Generated,
        };
        self.cfg.validate()?;
        Ok(self.cfg)
    }
}

impl ExperimentConfig {
    /// Parses config text, then applies `overrides` (`key`, `value`) in order.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut d = Draft::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", no + 1)))?;
            d.set(k.trim(), v.trim())?;
        }
        for (k, v) in overrides {
            d.set(k, v)?;
        }
        d.finish()
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::parse(&fs::read_to_string(path)?, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if self.train.epochs == 0 {
            return Err(Error::Config("train.epochs must be at least 1".into()));
        }
        if self.eval.folds < 2 {
            return Err(Error::Config("eval.folds must be at least 2".into()));
        }
        if !(self.eval.link_frac > 0.0 && self.eval.link_frac < 1.0) {
            return Err(Error::Config("eval.link_frac must lie in (0, 1)".into()));
        }
        if let ViewSource::Augment(p) = self.train.views {
            if !(0.0..=1.0).contains(&p.ratio) {
                return Err(Error::Config("train.aug_ratio must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    /// Every key with its resolved value, in echo order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let mut e: Vec<(&'static str, String)> = vec![("seed", self.seed.to_string())];
        e.push(("out", self.out.display().to_string()));
        match &self.dataset {
            DatasetSpec::Synthetic { config, seed } => {
                e.push(("dataset.kind", "synthetic".into()));
                e.push(("synth.n_graphs", config.n_graphs.to_string()));
                e.push(("synth.n_nodes", config.n_nodes.to_string()));
                e.push(("synth.p_in", config.p_in.to_string()));
                e.push(("synth.p_out", config.p_out.to_string()));
                e.push(("synth.features", features_name(config.features)));
                e.push(("synth.seed", seed.to_string()));
            }
            DatasetSpec::TuDataset { path, name, max_degree } => {
                e.push(("dataset.kind", "tudataset".into()));
                e.push(("dataset.path", path.display().to_string()));
                e.push(("dataset.name", name.clone()));
                e.push(("dataset.max_degree", max_degree.to_string()));
            }
        }
        let t = &self.train;
        e.push(("train.epochs", t.epochs.to_string()));
        e.push(("train.batch_size", t.batch_size.to_string()));
        e.push(("train.lr_theta", t.lr_theta.to_string()));
        e.push(("train.lr_phi", t.lr_phi.to_string()));
        e.push(("train.lr_pi", t.lr_pi.to_string()));
        e.push(("train.hidden", t.hidden.to_string()));
        e.push(("train.layers", t.layers.to_string()));
        e.push(("train.gen_hidden", t.gen_hidden.to_string()));
        e.push(("train.gen_layers", t.gen_layers.to_string()));
        e.push(("train.latent_dim", t.latent_dim.to_string()));
        e.push(("train.checkpoint_every", t.checkpoint_every.to_string()));
        e.push(("train.reward_feedback", t.reward_feedback.to_string()));
        e.push(("train.precision", t.precision.to_string()));
        match t.views {
            ViewSource::Generated => e.push(("train.views", "generated".into())),
            ViewSource::Augment(p) => {
                e.push(("train.views", "augment".into()));
                e.push(("train.augment", format!("{},{}", p.first, p.second)));
                e.push(("train.aug_ratio", p.ratio.to_string()));
            }
        }
        e.push(("reward.principle", t.reward.principle.to_string()));
        e.push(("reward.delta", t.reward.delta.to_string()));
        e.push(("reward.threshold_mode", t.reward.threshold_mode.to_string()));
        if let Some(g) = t.reward.gamma {
            e.push(("reward.gamma", g.to_string()));
        }
        e.push(("eval.folds", self.eval.folds.to_string()));
        e.push(("eval.probe_l2", self.eval.probe.l2.to_string()));
        e.push(("eval.probe_iterations", self.eval.probe.iterations.to_string()));
        e.push(("eval.probe_lr", self.eval.probe.lr.to_string()));
        e.push(("eval.link_frac", self.eval.link_frac.to_string()));
        e
    }

    pub fn echo(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    /// The echo without the output directory, so that identical runs written
    /// to different places carry identical checkpoints.
    pub fn echo_without_out(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries().into_iter().filter(|(k, _)| *k != "out") {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        match &self.dataset {
            DatasetSpec::Synthetic { config, seed } => synth_two_community(config, *seed),
            DatasetSpec::TuDataset { path, name, max_degree } => load_tudataset(
                path,
                name,
                LoadOptions {
                    max_degree: *max_degree,
                },
            ),
        }
    }
}

/// Mean and population standard deviation; `(NaN, NaN)` when empty.
fn mean_sd(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64).sqrt();
    (m, sd)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkSummary {
    pub auroc: (f64, f64),
    pub auprc: (f64, f64),
    pub graphs: usize,
}

/// Link prediction of `gen` averaged over every graph with enough edges and
/// non-edges; splits come from the seeded split stream, one per graph.
pub fn link_eval(dataset: &Dataset, gen: &Generator, frac: f64, seed: u64) -> Result<LinkSummary> {
    let mut rng = stream(seed, Stream::Split);
    let (mut roc, mut pr) = (Vec::new(), Vec::new());
    for g in dataset.graphs() {
        let Ok((_, set)) = make_link_split(g, frac, &mut rng) else {
            continue;
        };
        let (a, b) = eval_generator(g, gen, &set)?;
        roc.push(a);
        pr.push(b);
    }
    Ok(LinkSummary {
        auroc: mean_sd(&roc),
        auprc: mean_sd(&pr),
        graphs: roc.len(),
    })
}

/// Linear probe on frozen graph embeddings of `encoder`.
pub fn probe_encoder(dataset: &Dataset, encoder: &Encoder, eval: &EvalSpec, seed: u64) -> Result<Option<ProbeResult>> {
    let Some(labels) = dataset.labels() else {
        return Ok(None);
    };
    let embeds = encoder.graph_embeddings(&make_batch(dataset.graphs())?)?;
    let splits = kfold_splits(&labels, eval.folds, &mut stream(seed, Stream::Split))?;
    linear_probe(&embeds, &labels, &splits, &eval.probe).map(Some)
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub run_id: String,
    pub probe: Option<ProbeResult>,
    /// Probe of the encoder at its initial parameters.
    pub probe_init: Option<ProbeResult>,
    pub link_phi1: LinkSummary,
    pub link_phi2: LinkSummary,
    pub final_loss_cl: f64,
    pub epochs: Vec<crate::trainer::EpochLog>,
}

pub fn state_checkpoint(state: &TrainState, cfg: &ExperimentConfig, logs: &[crate::trainer::EpochLog]) -> Result<Checkpoint> {
    let meta = json!({
        "config": cfg.echo_without_out(),
        "epoch": state.epoch,
        "seed": state.seed,
        "encoder": state.theta.config,
        "generator": state.phi1.config,
        "principle": cfg.train.reward.principle,
        "metrics": logs,
    });
    let mut ck = Checkpoint::new(meta);
    ck.insert_group("theta", &state.theta.params);
    ck.insert_group("phi1", &state.phi1.params);
    ck.insert_group("phi2", &state.phi2.params);
    if let Some(pi) = &state.pi {
        ck.insert_group("pi", &pi.params);
    }
    Ok(ck)
}

/// Networks restored from a checkpoint written by [`run`].
pub struct Restored {
    pub theta: Encoder,
    pub phi1: Generator,
    pub phi2: Generator,
    pub pi: Option<Encoder>,
    pub config: Option<ExperimentConfig>,
}

pub fn restore(ck: &Checkpoint) -> Result<Restored> {
    let enc: EncoderConfig = serde_json::from_value(ck.meta["encoder"].clone())?;
    let gen: GeneratorConfig = serde_json::from_value(ck.meta["generator"].clone())?;
    let mut rng = stream(0, Stream::Init);
    let mut theta = Encoder::init(enc, &mut rng)?;
    ck.restore_group("theta", &mut theta.params)?;
    let mut phi1 = Generator::init(gen, &mut rng)?;
    ck.restore_group("phi1", &mut phi1.params)?;
    let mut phi2 = Generator::init(gen, &mut rng)?;
    ck.restore_group("phi2", &mut phi2.params)?;
    let pi = if ck.has_group("pi") {
        let mut pi = Encoder::init(enc, &mut rng)?;
        ck.restore_group("pi", &mut pi.params)?;
        Some(pi)
    } else {
        None
    };
    let config = ck.meta["config"]
        .as_str()
        .map(|text| ExperimentConfig::parse(text, &[]))
        .transpose()?;
    Ok(Restored {
        theta,
        phi1,
        phi2,
        pi,
        config,
    })
}

fn csv_row(w: &mut impl Write, run_id: &str, ckpt: &str, metric: &str, value: f64, sd: f64) -> Result<()> {
    writeln!(w, "{run_id},{ckpt},{metric},{value},{sd}")?;
    Ok(())
}

/// Pretrains, evaluates and writes `run.jsonl`, `timing.jsonl`,
/// `final.ckpt` (plus `epoch_N.ckpt` at the configured cadence),
/// `results.csv` and `config.echo` into `cfg.out`.
pub fn run(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let dataset = cfg.load_dataset()?;
    fs::create_dir_all(&cfg.out)?;
    fs::write(cfg.out.join("config.echo"), cfg.echo())?;
    let run_id = cfg
        .out
        .file_name()
        .map_or_else(|| "run".to_string(), |s| s.to_string_lossy().into_owned());

    let mut log = BufWriter::new(File::create(cfg.out.join("run.jsonl"))?);
    let mut timing = BufWriter::new(File::create(cfg.out.join("timing.jsonl"))?);
    let mut so_far = Vec::new();
    let mut writers = Vec::new();
    let (state, logs) = pretrain(&dataset, &cfg.train, cfg.seed, &mut |state, entry, wall| {
        serde_json::to_writer(&mut log, entry)?;
        writeln!(log)?;
        writeln!(timing, "{}", json!({"epoch": entry.epoch, "wall_ms": wall.as_millis() as u64}))?;
        so_far.push(entry.clone());
        let every = cfg.train.checkpoint_every;
        if every > 0 && state.epoch % every == 0 && state.epoch < cfg.train.epochs {
            let ck = state_checkpoint(state, cfg, &so_far)?;
            let path = cfg.out.join(format!("epoch_{}.ckpt", state.epoch));
            writers.push(thread::spawn(move || ck.save(&path)));
        }
        Ok(())
    })?;
    log.flush()?;
    timing.flush()?;
    for w in writers {
        w.join().map_err(|_| Error::Checkpoint("checkpoint writer panicked".into()))??;
    }
    state_checkpoint(&state, cfg, &logs)?.save(&cfg.out.join("final.ckpt"))?;

    let init = Encoder::init(cfg.train.encoder_config(dataset.feature_dim()), &mut indexed_stream(cfg.seed, Stream::Init, 0))?;
    let probe = probe_encoder(&dataset, &state.theta, &cfg.eval, cfg.seed)?;
    let probe_init = probe_encoder(&dataset, &init, &cfg.eval, cfg.seed)?;
    let link_phi1 = link_eval(&dataset, &state.phi1, cfg.eval.link_frac, cfg.seed)?;
    let link_phi2 = link_eval(&dataset, &state.phi2, cfg.eval.link_frac, cfg.seed)?;

    let mut out = BufWriter::new(File::create(cfg.out.join("results.csv"))?);
    writeln!(out, "run_id,checkpoint,metric,value,sd")?;
    if let Some(p) = &probe {
        csv_row(&mut out, &run_id, "final.ckpt", "probe_accuracy", p.mean, p.sd)?;
    }
    if let Some(p) = &probe_init {
        csv_row(&mut out, &run_id, "init", "probe_accuracy", p.mean, p.sd)?;
    }
    for (name, l) in [("phi1", &link_phi1), ("phi2", &link_phi2)] {
        csv_row(&mut out, &run_id, "final.ckpt", &format!("link_auroc_{name}"), l.auroc.0, l.auroc.1)?;
        csv_row(&mut out, &run_id, "final.ckpt", &format!("link_auprc_{name}"), l.auprc.0, l.auprc.1)?;
    }
    let final_loss_cl = logs.last().map_or(f64::NAN, |l| l.loss_cl);
    csv_row(&mut out, &run_id, "final.ckpt", "loss_cl", final_loss_cl, 0.0)?;
    out.flush()?;

    Ok(RunSummary {
        run_id,
        probe,
        probe_init,
        link_phi1,
        link_phi2,
        final_loss_cl,
        epochs: logs,
    })
}

/// One grid axis: a config key (or short name) and its values.
#[derive(Clone, Debug, PartialEq)]
pub struct Axis {
    pub key: String,
    pub values: Vec<String>,
}

impl Axis {
    pub fn new(key: &str, values: &[&str]) -> Self {
        Axis {
            key: canonical_key(key).to_string(),
            values: values.iter().map(|v| v.to_string()).collect(),
        }
    }

    /// Parses `key=v1,v2,...`.
    pub fn parse(spec: &str) -> Result<Self> {
        let (k, vs) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("axis `{spec}` must look like key=v1,v2")))?;
        let values: Vec<&str> = vs.split(',').map(str::trim).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::Config(format!("axis `{k}` has no values")));
        }
        Ok(Axis::new(k.trim(), &values))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GridRow {
    pub point: Vec<(String, String)>,
    pub probe_accuracy: f64,
    pub probe_sd: f64,
    pub link_auroc: f64,
    pub final_loss_cl: f64,
}

/// Every point of the product of `axes`, as override lists.
pub fn grid_points(axes: &[Axis]) -> Vec<Vec<(String, String)>> {
    let mut points = vec![Vec::new()];
    for axis in axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                axis.values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((axis.key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    points
}

fn check_axis_value(key: &str, value: &str) -> Result<()> {
    let bad = || Error::Config(format!("grid value `{value}` out of range for `{key}`"));
    match key {
        "reward.gamma" => {
            let g: f64 = parse(key, value)?;
            (0.0..=1.0).contains(&g).then_some(()).ok_or_else(bad)
        }
        "reward.delta" => {
            let d: f64 = parse(key, value)?;
            (d > 0.0 && d < 1.0).then_some(()).ok_or_else(bad)
        }
        _ => Ok(()),
    }
}

/// Runs the base config at every grid point (one subdirectory each, all
/// with the base seed) and writes `summary.csv` into `base.out`. Every
/// point is validated before the first run starts. `jobs > 1` runs points
/// on that many threads; rows keep grid order.
pub fn grid(base_text: &str, overrides: &[(String, String)], axes: &[Axis], jobs: usize) -> Result<Vec<GridRow>> {
    if axes.is_empty() {
        return Err(Error::Config("grid needs at least one axis".into()));
    }
    let base = ExperimentConfig::parse(base_text, overrides)?;
    let mut configs = Vec::new();
    for point in grid_points(axes) {
        for (k, v) in &point {
            check_axis_value(k, v)?;
        }
        let dir: Vec<String> = point
            .iter()
            .map(|(k, v)| format!("{}={v}", k.rsplit('.').next().unwrap_or(k)))
            .collect();
        let mut all = overrides.to_vec();
        all.extend(point.iter().cloned());
        all.push(("out".into(), base.out.join(dir.join(",")).display().to_string()));
        configs.push((point, ExperimentConfig::parse(base_text, &all)?));
    }

    let results: Vec<Mutex<Option<Result<RunSummary>>>> = configs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    thread::scope(|s| {
        for _ in 0..jobs.max(1).min(configs.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((_, cfg)) = configs.get(i) else {
                    break;
                };
                *results[i].lock().expect("unpoisoned") = Some(run(cfg));
            });
        }
    });

    fs::create_dir_all(&base.out)?;
    let mut rows = Vec::with_capacity(configs.len());
    for ((point, _), slot) in configs.into_iter().zip(results) {
        let summary = slot.into_inner().expect("unpoisoned").expect("every point ran")?;
        let (acc, sd) = summary.probe.as_ref().map_or((f64::NAN, f64::NAN), |p| (p.mean, p.sd));
        let auroc = (summary.link_phi1.auroc.0 + summary.link_phi2.auroc.0) / 2.0;
        rows.push(GridRow {
            point,
            probe_accuracy: acc,
            probe_sd: sd,
            link_auroc: auroc,
            final_loss_cl: summary.final_loss_cl,
        });
    }
    let mut out = BufWriter::new(File::create(base.out.join("summary.csv"))?);
    let header: Vec<&str> = axes.iter().map(|a| a.key.as_str()).collect();
    writeln!(out, "{},probe_accuracy,probe_sd,link_auroc,loss_cl", header.join(","))?;
    for r in &rows {
        let vals: Vec<&str> = r.point.iter().map(|(_, v)| v.as_str()).collect();
        writeln!(
            out,
            "{},{},{},{},{}",
            vals.join(","),
            r.probe_accuracy,
            r.probe_sd,
            r.link_auroc,
            r.final_loss_cl
        )?;
    }
    out.flush()?;
    Ok(rows)
}

/// Writes, per selected graph, `graph_{i}_phi1.csv` and `graph_{i}_phi2.csv`
/// with rows `i,j,p` (decoded at the posterior mean, `i < j`) and
/// `graph_{i}_edges.csv` with the original edges. Returns the files written.
pub fn dump_probs(restored: &Restored, dataset: &Dataset, graphs: &[usize], out: &Path) -> Result<Vec<PathBuf>> {
    if graphs.is_empty() {
        return Err(Error::invalid("no graph indices given"));
    }
    if let Some(&bad) = graphs.iter().find(|&&i| i >= dataset.len()) {
        return Err(Error::invalid(format!(
            "graph index {bad} out of range for {} graphs",
            dataset.len()
        )));
    }
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for &gi in graphs {
        let g = &dataset.graphs()[gi];
        for (name, gen) in [("phi1", &restored.phi1), ("phi2", &restored.phi2)] {
            let p = mean_edge_probs(g, gen)?;
            let path = out.join(format!("graph_{gi}_{name}.csv"));
            let mut w = BufWriter::new(File::create(&path)?);
            writeln!(w, "i,j,p")?;
            for i in 0..g.n() {
                for j in (i + 1)..g.n() {
                    writeln!(w, "{i},{j},{}", p.get(i, j))?;
                }
            }
            w.flush()?;
            written.push(path);
        }
        let path = out.join(format!("graph_{gi}_edges.csv"));
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "i,j")?;
        for &(i, j) in g.edges() {
            writeln!(w, "{i},{j}")?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_parses_back() {
        let text = "seed = 3\nreward.principle = minbn\nreward.gamma = 0.3\ntrain.views = augment\ntrain.augment = subgraph,attrmask\n";
        let cfg = ExperimentConfig::parse(text, &[]).unwrap();
        let again = ExperimentConfig::parse(&cfg.echo(), &[]).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.echo(), again.echo());
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::parse("train.lr = 1", &[]).unwrap_err();
        assert!(err.to_string().contains("train.lr"));
    }

    #[test]
    fn minbn_needs_gamma() {
        let err = ExperimentConfig::parse("reward.principle = minbn", &[]).unwrap_err();
        assert!(err.to_string().contains("gamma required"));
    }

    #[test]
    fn one_dataset_source() {
        assert!(ExperimentConfig::parse("dataset.path = /tmp\nsynth.n_graphs = 4", &[]).is_err());
        assert!(ExperimentConfig::parse("dataset.kind = tudataset\nsynth.n_graphs = 4\ndataset.path = x\ndataset.name = y", &[]).is_err());
        assert!(ExperimentConfig::parse("dataset.kind = tudataset\ndataset.name = y", &[]).is_err());
    }

    #[test]
    fn overrides_apply_last() {
        let cfg = ExperimentConfig::parse("train.epochs = 4", &[("epochs".into(), "9".into())]).unwrap();
        assert_eq!(cfg.train.epochs, 9);
    }

    #[test]
    fn grid_product() {
        let axes = [Axis::parse("delta=0.1,0.01,0.001").unwrap(), Axis::parse("threshold=mean-sd,mean,mean+sd").unwrap()];
        let pts = grid_points(&axes);
        assert_eq!(pts.len(), 9);
        assert_eq!(pts[1], vec![("reward.delta".into(), "0.1".into()), ("reward.threshold_mode".into(), "mean".into())]);
    }
}
