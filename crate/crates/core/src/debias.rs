//! Orthogonal-projection debiasing.
//!
//! The objective is `L = α·L_i + β·L_reg` with
//!
//! ```text
//! L_i   = Σ_d Σ_t Σ_x Σ_{a ∈ d} (v_i(a)ᵀ E_i(t; x; θ))²      summed over selected layers i
//! L_reg = Σ_{x ∈ A} Σ_{w ∈ x} Σ_{i=1}^{N} ‖E_i(w; x; θ) − E_i(w; x; θ_pre)‖²
//! ```
//!
//! `L_i` runs over target sentences and pushes every target embedding towards
//! the orthogonal complement of the frozen attribute directions `v_i(a)`.
//! `L_reg` runs over attribute sentences and keeps every token piece close to
//! its embedding under the reference parameters. Both terms are sums, so
//! logged magnitudes depend on the batch size.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{SentencePool, SentenceRecord};
use crate::embed::{
    AttributeDirections, CheckpointManifest, EmbedError, EncoderBackend, ParamSnapshot, StimulusEmbedding,
    ToyEncoder, TrainableBackend,
};
use crate::lexicon::{Lexicon, TermKind};
use crate::seed;
use crate::ErrorCategory;

#[derive(Debug, Error)]
pub enum DebiasError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite loss in epoch {epoch}, step {step} ({kind:?} batch of {size})")]
    NonFinite {
        epoch: usize,
        step: usize,
        kind: BatchKind,
        size: usize,
    },
    #[error("no training data: {0}")]
    NoData(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

impl DebiasError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            DebiasError::Config(_) | DebiasError::Shape(_) => ErrorCategory::Validation,
            DebiasError::NonFinite { .. } => ErrorCategory::Numeric,
            DebiasError::NoData(_) | DebiasError::Io { .. } => ErrorCategory::Data,
            DebiasError::Embed(e) => e.category(),
        }
    }
}

fn default_alpha() -> f64 {
    0.2
}
fn default_beta() -> f64 {
    0.8
}
fn default_learning_rate() -> f64 {
    5e-5
}
fn default_batch_size() -> usize {
    32
}
fn default_epochs() -> usize {
    3
}
fn default_dimensions() -> Vec<String> {
    vec!["warmth".into(), "competence".into()]
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    /// `θ ← θ − lr·∇L`.
    #[default]
    Sgd,
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

/// Learning-rate schedule over the whole run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    /// Decays linearly from `learning_rate` at the first step to zero after the last.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DebiasConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// 1-based layer numbers for `L_i`; all layers when absent.
    #[serde(default)]
    pub layers: Option<Vec<usize>>,
    #[serde(default = "default_dimensions")]
    pub dimensions: Vec<String>,
    /// Target stimulus sets to debias; every target set when absent.
    #[serde(default)]
    pub target_sets: Option<Vec<String>>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub optimizer: Optimizer,
    #[serde(default)]
    pub schedule: Schedule,
}

impl Default for DebiasConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            beta: default_beta(),
            learning_rate: default_learning_rate(),
            batch_size: default_batch_size(),
            epochs: default_epochs(),
            layers: None,
            dimensions: default_dimensions(),
            target_sets: None,
            seed: 0,
            optimizer: Optimizer::Sgd,
            schedule: Schedule::Constant,
        }
    }
}

impl DebiasConfig {
    pub fn validate(&self) -> Result<(), DebiasError> {
        let unit = 0.0..=1.0;
        if !unit.contains(&self.alpha) || !unit.contains(&self.beta) {
            return Err(DebiasError::Config("alpha and beta must lie in [0, 1]".into()));
        }
        if (self.alpha + self.beta - 1.0).abs() > 1e-9 {
            return Err(DebiasError::Config(format!(
                "alpha + beta must equal 1 (got {} + {})",
                self.alpha, self.beta
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(DebiasError::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(DebiasError::Config("batch_size must be >= 1".into()));
        }
        if self.dimensions.is_empty() {
            return Err(DebiasError::Config("dimensions must not be empty".into()));
        }
        if let Some(layers) = &self.layers {
            if layers.is_empty() || layers.contains(&0) {
                return Err(DebiasError::Config("layers must be a non-empty list of 1-based numbers".into()));
            }
        }
        if let Optimizer::Adam { beta1, beta2, epsilon } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || epsilon <= 0.0 {
                return Err(DebiasError::Config("adam needs beta1, beta2 in [0, 1) and epsilon > 0".into()));
            }
        }
        Ok(())
    }

    /// Selected layers as 0-based indices for an `n`-layer encoder.
    pub fn layer_indices(&self, n: usize) -> Result<Vec<usize>, DebiasError> {
        match &self.layers {
            None => Ok((0..n).collect()),
            Some(layers) => {
                let set: BTreeSet<usize> = layers.iter().copied().collect();
                if let Some(&bad) = set.iter().find(|&&l| l == 0 || l > n) {
                    return Err(DebiasError::Config(format!("layer {bad} outside 1..={n}")));
                }
                Ok(set.into_iter().map(|l| l - 1).collect())
            }
        }
    }

    pub fn hash(&self) -> String {
        seed::config_hash(self)
    }
}

/// `α·L_i + β·L_reg`.
pub fn total_loss(l_i: f64, l_reg: f64, config: &DebiasConfig) -> f64 {
    config.alpha * l_i + config.beta * l_reg
}

fn check_layers(directions: &AttributeDirections, layers: &[usize]) -> Result<(), DebiasError> {
    if let Some(&bad) = layers.iter().find(|&&l| l >= directions.layer_count()) {
        return Err(DebiasError::Shape(format!(
            "layer index {bad} but directions cover {} layers",
            directions.layer_count()
        )));
    }
    Ok(())
}

/// `L_i` over pre-computed target embeddings, using every dimension of
/// `directions` at the given 0-based layers.
pub fn projection_loss(
    targets: &[StimulusEmbedding],
    directions: &AttributeDirections,
    layers: &[usize],
) -> Result<f64, DebiasError> {
    check_layers(directions, layers)?;
    let h = directions.hidden_dim();
    let mut total = 0.0;
    for e in targets {
        for &layer in layers {
            let v = e.per_layer.get(layer).ok_or_else(|| {
                DebiasError::Shape(format!("embedding of {:?} has no layer {layer}", e.stimulus.surface()))
            })?;
            if v.len() != h {
                return Err(DebiasError::Shape(format!("embedding width {} but directions have {h}", v.len())));
            }
            let v = Array1::from(v.clone());
            for d in directions.dimensions() {
                let proj = d.per_layer[layer].dot(&v);
                total += proj.dot(&proj);
            }
        }
    }
    Ok(total)
}

fn reference_backend<B: TrainableBackend>(backend: &B, reference: &ParamSnapshot) -> Result<B, DebiasError> {
    backend.snapshot().check_compatible(reference)?;
    let mut r = backend.clone();
    r.restore(reference)?;
    Ok(r)
}

fn record_reg_loss<B: EncoderBackend>(current: &B, reference: &B, text: &str) -> (f64, Vec<Array2<f64>>) {
    let cur = current.encode(text);
    let pre = reference.encode(text);
    let mut loss = 0.0;
    let diffs: Vec<Array2<f64>> = cur
        .layers
        .iter()
        .zip(&pre.layers)
        .map(|(c, p)| {
            let d = c - p;
            loss += d.iter().map(|x| x * x).sum::<f64>();
            d
        })
        .collect();
    (loss, diffs)
}

/// `L_reg` of `backend` against the reference parameters over the given
/// attribute sentences, summed over every piece and every layer.
pub fn regularization_loss<B: TrainableBackend>(
    backend: &B,
    reference: &ParamSnapshot,
    sentences: &[&SentenceRecord],
) -> Result<f64, DebiasError> {
    let pre = reference_backend(backend, reference)?;
    Ok(sentences
        .par_iter()
        .map(|r| record_reg_loss(backend, &pre, &r.text).0)
        .collect::<Vec<_>>()
        .iter()
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub l_i: f64,
    pub l_reg: f64,
    pub l: f64,
}

/// The training objective with frozen directions and reference parameters.
pub struct Objective<B: TrainableBackend> {
    reference: B,
    /// `Σ_d M_{d,i}ᵀ M_{d,i}` for selected layers.
    gram: Vec<Option<Array2<f64>>>,
    alpha: f64,
    beta: f64,
}

impl<B: TrainableBackend> Objective<B> {
    pub fn new(
        backend: &B,
        reference: &ParamSnapshot,
        directions: &AttributeDirections,
        config: &DebiasConfig,
    ) -> Result<Self, DebiasError> {
        config.validate()?;
        let n = backend.layer_count();
        if directions.layer_count() != n || directions.hidden_dim() != backend.hidden_dim() {
            return Err(DebiasError::Shape(format!(
                "directions are {}×{} but the encoder is {}×{}",
                directions.layer_count(),
                directions.hidden_dim(),
                n,
                backend.hidden_dim()
            )));
        }
        let missing: Vec<&str> = config
            .dimensions
            .iter()
            .filter(|d| directions.dimension(d).is_none())
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            return Err(DebiasError::Config(format!("no directions for dimensions {missing:?}")));
        }
        let selected = config.layer_indices(n)?;
        let gram = (0..n)
            .map(|layer| {
                selected.contains(&layer).then(|| {
                    let h = backend.hidden_dim();
                    let mut g = Array2::<f64>::zeros((h, h));
                    for name in &config.dimensions {
                        let m = &directions.dimension(name).expect("checked above").per_layer[layer];
                        g += &m.t().dot(m);
                    }
                    g
                })
            })
            .collect();
        Ok(Self {
            reference: reference_backend(backend, reference)?,
            gram,
            alpha: config.alpha,
            beta: config.beta,
        })
    }

    fn target_record(&self, backend: &B, record: &SentenceRecord, want_grad: bool) -> Result<(f64, Option<Vec<f64>>), DebiasError> {
        let enc = backend.encode(&record.text);
        let pieces = enc.span_pieces(record.start, record.end);
        if pieces.is_empty() {
            return Err(EmbedError::SpanAlignment {
                source_id: record.source_id.clone(),
                start: record.start,
                end: record.end,
            }
            .into());
        }
        let k = pieces.len() as f64;
        let mut loss = 0.0;
        let mut grads: Vec<Array2<f64>> = enc.layers.iter().map(|m| Array2::zeros(m.raw_dim())).collect();
        for (layer, g) in self.gram.iter().enumerate() {
            let Some(g) = g else { continue };
            let m = &enc.layers[layer];
            let mut e = Array1::<f64>::zeros(m.ncols());
            for &p in &pieces {
                e += &m.row(p);
            }
            e /= k;
            let ge = g.dot(&e);
            loss += e.dot(&ge);
            let row = ge * (2.0 * self.alpha / k);
            for &p in &pieces {
                grads[layer].row_mut(p).assign(&row);
            }
        }
        let grad = want_grad.then(|| backend.backward(&record.text, &grads));
        Ok((loss, grad))
    }

    fn attribute_record(&self, backend: &B, record: &SentenceRecord, want_grad: bool) -> (f64, Option<Vec<f64>>) {
        let (loss, diffs) = record_reg_loss(backend, &self.reference, &record.text);
        let grad = want_grad.then(|| {
            let grads: Vec<Array2<f64>> = diffs.into_iter().map(|d| d * (2.0 * self.beta)).collect();
            backend.backward(&record.text, &grads)
        });
        (loss, grad)
    }

    fn run(
        &self,
        backend: &B,
        targets: &[&SentenceRecord],
        attributes: &[&SentenceRecord],
        want_grad: bool,
    ) -> Result<(LossTerms, Option<Vec<f64>>), DebiasError> {
        let t: Vec<(f64, Option<Vec<f64>>)> = targets
            .par_iter()
            .map(|r| self.target_record(backend, r, want_grad))
            .collect::<Result<_, _>>()?;
        let a: Vec<(f64, Option<Vec<f64>>)> = attributes
            .par_iter()
            .map(|r| self.attribute_record(backend, r, want_grad))
            .collect();
        let l_i = t.iter().fold(0.0, |acc, x| acc + x.0);
        let l_reg = a.iter().fold(0.0, |acc, x| acc + x.0);
        let grad = want_grad.then(|| {
            let mut acc = vec![0.0; backend.parameters().len()];
            for g in t.iter().chain(&a).filter_map(|x| x.1.as_ref()) {
                acc.iter_mut().zip(g).for_each(|(s, v)| *s += v);
            }
            acc
        });
        let l = self.alpha * l_i + self.beta * l_reg;
        Ok((LossTerms { l_i, l_reg, l }, grad))
    }

    pub fn loss(&self, backend: &B, targets: &[&SentenceRecord], attributes: &[&SentenceRecord]) -> Result<LossTerms, DebiasError> {
        Ok(self.run(backend, targets, attributes, false)?.0)
    }

    /// Loss terms and `∇_θ L` over the given sentences.
    pub fn loss_and_gradient(
        &self,
        backend: &B,
        targets: &[&SentenceRecord],
        attributes: &[&SentenceRecord],
    ) -> Result<(LossTerms, Vec<f64>), DebiasError> {
        let (terms, grad) = self.run(backend, targets, attributes, true)?;
        Ok((terms, grad.expect("gradient requested")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchKind {
    Target,
    Attribute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub batch: BatchKind,
    pub size: usize,
    pub l_i: f64,
    pub l_reg: f64,
    pub l: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub steps: usize,
    /// Mean `L_i` over this epoch's target batches.
    pub mean_l_i: f64,
    /// Mean `L_reg` over this epoch's attribute batches.
    pub mean_l_reg: f64,
    /// Mean `L` over all steps of the epoch.
    pub mean_l: f64,
    /// Loss over the monitoring set at the end of the epoch.
    pub dev: Option<LossTerms>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub config_hash: String,
    pub seed: u64,
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochSummary>,
    pub wall_clock_secs: f64,
}

#[derive(Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LogLine<'a> {
    Step(&'a StepLog),
    Epoch(&'a EpochSummary),
    Summary {
        config_hash: &'a str,
        seed: u64,
        wall_clock_secs: f64,
    },
}

impl TrainingLog {
    /// One JSON object per line: steps, then epoch summaries, then a summary.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let lines = self
            .steps
            .iter()
            .map(LogLine::Step)
            .chain(self.epochs.iter().map(LogLine::Epoch))
            .chain(std::iter::once(LogLine::Summary {
                config_hash: &self.config_hash,
                seed: self.seed,
                wall_clock_secs: self.wall_clock_secs,
            }));
        for line in lines {
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Sentences that feed the two loss terms.
#[derive(Debug, Clone, Default)]
pub struct TrainingData<'a> {
    pub targets: Vec<&'a SentenceRecord>,
    pub attributes: Vec<&'a SentenceRecord>,
}

impl<'a> TrainingData<'a> {
    /// Target sentences of the configured target sets and attribute sentences
    /// of the configured dimensions.
    pub fn from_pool(pool: &'a SentencePool, lexicon: &Lexicon, config: &DebiasConfig) -> Result<Self, DebiasError> {
        let sets: Vec<&str> = match &config.target_sets {
            Some(names) => names.iter().map(String::as_str).collect(),
            None => lexicon
                .stimulus_sets()
                .iter()
                .filter(|s| s.kind() == TermKind::Target)
                .map(|s| s.name())
                .collect(),
        };
        let mut targets = Vec::new();
        for name in sets {
            let set = lexicon
                .stimulus_set(name)
                .ok_or_else(|| DebiasError::Config(format!("unknown target set {name:?}")))?;
            for t in set.terms() {
                targets.extend(pool.get(t.surface()));
            }
        }
        let mut attributes = Vec::new();
        for name in &config.dimensions {
            let d = lexicon
                .dimension(name)
                .ok_or_else(|| DebiasError::Config(format!("unknown dimension {name:?}")))?;
            for t in d.attributes() {
                attributes.extend(pool.get(t.surface()));
            }
        }
        Ok(Self { targets, attributes })
    }
}

fn batches(n: usize, size: usize, rng: &mut impl rand::Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(size).map(<[usize]>::to_vec).collect()
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

fn apply_step(params: &mut [f64], grad: &[f64], lr: f64, config: &DebiasConfig, adam: &mut Option<AdamState>) {
    match (config.optimizer, adam) {
        (Optimizer::Adam { beta1, beta2, epsilon }, Some(state)) => {
            state.t += 1;
            let c1 = 1.0 - beta1.powi(state.t);
            let c2 = 1.0 - beta2.powi(state.t);
            for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut state.m).zip(&mut state.v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + epsilon);
            }
        }
        _ => params.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g),
    }
}

/// Fine-tunes `backend` in place.
///
/// Each epoch shuffles target and attribute sentences into separate batches
/// and alternates between them, target batch first. The reference parameters
/// are the backend's parameters on entry; `directions` must have been
/// computed from them. `monitor`, when given, is evaluated without updates
/// at the end of every epoch.
pub fn train<B: TrainableBackend>(
    backend: &mut B,
    data: &TrainingData<'_>,
    directions: &AttributeDirections,
    config: &DebiasConfig,
    monitor: Option<&TrainingData<'_>>,
) -> Result<TrainingLog, DebiasError> {
    let started = Instant::now();
    config.validate()?;
    if !backend.is_trainable() {
        return Err(DebiasError::Config(format!("{} backend is not trainable", backend.backend_kind())));
    }
    if data.targets.is_empty() || data.attributes.is_empty() {
        return Err(DebiasError::NoData(format!(
            "{} target and {} attribute sentences",
            data.targets.len(),
            data.attributes.len()
        )));
    }
    let reference = backend.snapshot();
    let objective = Objective::new(backend, &reference, directions, config)?;
    let mut adam = match config.optimizer {
        Optimizer::Adam { .. } => Some(AdamState {
            m: vec![0.0; backend.parameters().len()],
            v: vec![0.0; backend.parameters().len()],
            t: 0,
        }),
        Optimizer::Sgd => None,
    };
    let mut log = TrainingLog {
        config_hash: config.hash(),
        seed: config.seed,
        steps: Vec::new(),
        epochs: Vec::new(),
        wall_clock_secs: 0.0,
    };
    let mut params = backend.parameters().to_vec();
    let batches_per_epoch = data.targets.len().div_ceil(config.batch_size) + data.attributes.len().div_ceil(config.batch_size);
    let total_steps = (batches_per_epoch * config.epochs) as f64;
    for epoch in 0..config.epochs {
        let mut rng = seed::indexed_rng(config.seed, "debias/shuffle", epoch as u64);
        let tb = batches(data.targets.len(), config.batch_size, &mut rng);
        let ab = batches(data.attributes.len(), config.batch_size, &mut rng);
        let rounds = tb.len().max(ab.len());
        let schedule = (0..rounds).flat_map(|r| {
            [
                tb.get(r).map(|b| (BatchKind::Target, b)),
                ab.get(r).map(|b| (BatchKind::Attribute, b)),
            ]
            .into_iter()
            .flatten()
        });
        let first_step = log.steps.len();
        for (kind, batch) in schedule {
            if batch.is_empty() {
                log::warn!("epoch {epoch}: skipping empty {kind:?} batch");
                continue;
            }
            let (t, a): (Vec<&SentenceRecord>, Vec<&SentenceRecord>) = match kind {
                BatchKind::Target => (batch.iter().map(|&i| data.targets[i]).collect(), Vec::new()),
                BatchKind::Attribute => (Vec::new(), batch.iter().map(|&i| data.attributes[i]).collect()),
            };
            let (terms, grad) = objective.loss_and_gradient(backend, &t, &a)?;
            let step = log.steps.len();
            if !terms.l.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(DebiasError::NonFinite {
                    epoch,
                    step,
                    kind,
                    size: batch.len(),
                });
            }
            let lr = match config.schedule {
                Schedule::Constant => config.learning_rate,
                Schedule::Linear => config.learning_rate * (1.0 - step as f64 / total_steps),
            };
            apply_step(&mut params, &grad, lr, config, &mut adam);
            backend.set_parameters(&params)?;
            log.steps.push(StepLog {
                step,
                epoch,
                batch: kind,
                size: batch.len(),
                l_i: terms.l_i,
                l_reg: terms.l_reg,
                l: terms.l,
            });
        }
        let steps = &log.steps[first_step..];
        let mean_of = |kind: BatchKind, f: fn(&StepLog) -> f64| {
            let xs: Vec<f64> = steps.iter().filter(|s| s.batch == kind).map(f).collect();
            if xs.is_empty() {
                0.0
            } else {
                xs.iter().sum::<f64>() / xs.len() as f64
            }
        };
        let dev = monitor
            .map(|m| objective.loss(backend, &m.targets, &m.attributes))
            .transpose()?;
        log.epochs.push(EpochSummary {
            epoch,
            steps: steps.len(),
            mean_l_i: mean_of(BatchKind::Target, |s| s.l_i),
            mean_l_reg: mean_of(BatchKind::Attribute, |s| s.l_reg),
            mean_l: steps.iter().map(|s| s.l).sum::<f64>() / steps.len().max(1) as f64,
            dev,
        });
        log::info!(
            "epoch {epoch}: mean L_i {:.6e}, mean L_reg {:.6e}",
            log.epochs[epoch].mean_l_i,
            log.epochs[epoch].mean_l_reg
        );
    }
    log.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(log)
}

/// Writes the parameter archive and manifest; reload with [`ToyEncoder::load`].
pub fn export_checkpoint(backend: &ToyEncoder, dir: impl AsRef<Path>) -> Result<CheckpointManifest, DebiasError> {
    Ok(backend.save(dir)?)
}
