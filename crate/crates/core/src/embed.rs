//! Encoder backends and stimulus embeddings.
//!
//! Layer convention: an encoder with `N` layers reports `N` hidden-state
//! matrices, one per encoder layer. The input embedding (layer 0) is not
//! reported. In-memory APIs index layers from 0; the embedding dump and the
//! command line number them from 1.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{SentencePool, SentenceRecord};
use crate::lexicon::{AttributeDimension, StimulusTerm};
use crate::seed;
use crate::ErrorCategory;

#[derive(Debug, Error)]
pub enum EmbedError {
    #[error("record {source_id:?}: span {start}..{end} covers no token piece")]
    SpanAlignment {
        source_id: String,
        start: usize,
        end: usize,
    },
    #[error("no sentences for attribute terms {0:?}")]
    MissingData(Vec<String>),
    #[error("architecture mismatch: {0}")]
    ArchitectureMismatch(String),
    #[error("invalid encoder configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {message}")]
    Format { what: &'static str, message: String },
}

impl EmbedError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            EmbedError::SpanAlignment { .. } | EmbedError::MissingData(_) | EmbedError::Io { .. } => {
                ErrorCategory::Data
            }
            _ => ErrorCategory::Validation,
        }
    }
}

/// A token piece with char offsets into the encoded text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Piece {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

/// Output of one forward pass: one `(pieces × hidden)` matrix per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub pieces: Vec<Piece>,
    pub layers: Vec<Array2<f64>>,
}

impl Encoding {
    /// Indices of pieces whose char range intersects `start..end`.
    pub fn span_pieces(&self, start: usize, end: usize) -> Vec<usize> {
        self.pieces
            .iter()
            .enumerate()
            .filter(|(_, p)| p.start < end && start < p.end)
            .map(|(i, _)| i)
            .collect()
    }

    /// Per-layer mean over the given pieces.
    pub fn mean_over(&self, pieces: &[usize]) -> Vec<Vec<f64>> {
        let k = pieces.len() as f64;
        self.layers
            .iter()
            .map(|m| {
                let mut acc = vec![0.0; m.ncols()];
                for &p in pieces {
                    for (a, v) in acc.iter_mut().zip(m.row(p)) {
                        *a += v;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= k);
                acc
            })
            .collect()
    }
}

/// Frozen copy of a backend's parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSnapshot {
    pub backend_kind: String,
    pub layer_count: usize,
    pub hidden_dim: usize,
    pub config_hash: String,
    pub values: Vec<f64>,
}

impl ParamSnapshot {
    /// Fails unless `other` was taken from the same architecture.
    pub fn check_compatible(&self, other: &ParamSnapshot) -> Result<(), EmbedError> {
        if self.backend_kind != other.backend_kind
            || self.layer_count != other.layer_count
            || self.hidden_dim != other.hidden_dim
            || self.config_hash != other.config_hash
            || self.values.len() != other.values.len()
        {
            return Err(EmbedError::ArchitectureMismatch(format!(
                "{} N={} H={} ({}, {} params) vs {} N={} H={} ({}, {} params)",
                self.backend_kind,
                self.layer_count,
                self.hidden_dim,
                self.config_hash,
                self.values.len(),
                other.backend_kind,
                other.layer_count,
                other.hidden_dim,
                other.config_hash,
                other.values.len()
            )));
        }
        Ok(())
    }
}

/// What the measurement and debiasing code needs from a contextual encoder.
pub trait EncoderBackend: Send + Sync {
    fn backend_kind(&self) -> &'static str;
    fn layer_count(&self) -> usize;
    fn hidden_dim(&self) -> usize;
    fn tokenize(&self, text: &str) -> Vec<Piece>;
    /// Deterministic for fixed parameters.
    fn encode(&self, text: &str) -> Encoding;
    fn is_trainable(&self) -> bool {
        false
    }
    /// Hash of the construction config (not of the parameters).
    fn config_hash(&self) -> String;
    fn snapshot(&self) -> ParamSnapshot;
    fn restore(&mut self, snapshot: &ParamSnapshot) -> Result<(), EmbedError>;
}

/// A backend whose parameters can be trained by gradient descent.
pub trait TrainableBackend: EncoderBackend + Clone {
    fn parameters(&self) -> &[f64];
    fn set_parameters(&mut self, values: &[f64]) -> Result<(), EmbedError>;
    /// Gradient of a scalar loss with respect to the parameters, given the
    /// loss gradient with respect to every layer output of `encode(text)`.
    fn backward(&self, text: &str, output_grads: &[Array2<f64>]) -> Vec<f64>;
}

/// Contextual embedding of one stimulus occurrence.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusEmbedding {
    pub stimulus: StimulusTerm,
    pub per_layer: Vec<Vec<f64>>,
    pub source_id: String,
}

/// Mean-pools the pieces covering the record's span, at every layer.
pub fn embed_stimulus<B: EncoderBackend + ?Sized>(
    backend: &B,
    record: &SentenceRecord,
) -> Result<StimulusEmbedding, EmbedError> {
    let encoding = backend.encode(&record.text);
    embed_from_encoding(&encoding, record)
}

pub fn embed_from_encoding(
    encoding: &Encoding,
    record: &SentenceRecord,
) -> Result<StimulusEmbedding, EmbedError> {
    let pieces = encoding.span_pieces(record.start, record.end);
    if pieces.is_empty() {
        return Err(EmbedError::SpanAlignment {
            source_id: record.source_id.clone(),
            start: record.start,
            end: record.end,
        });
    }
    Ok(StimulusEmbedding {
        stimulus: record.stimulus.clone(),
        per_layer: encoding.mean_over(&pieces),
        source_id: record.source_id.clone(),
    })
}

/// Embeds every record of `pool` for the listed surfaces (all when `None`).
pub fn embed_pool<B: EncoderBackend + ?Sized>(
    backend: &B,
    pool: &SentencePool,
    surfaces: Option<&[&str]>,
) -> Result<BTreeMap<String, Vec<StimulusEmbedding>>, EmbedError> {
    let keys: Vec<&str> = match surfaces {
        Some(s) => s.to_vec(),
        None => pool.entries().keys().map(String::as_str).collect(),
    };
    let mut out = BTreeMap::new();
    for key in keys {
        let embedded: Result<Vec<_>, _> = pool
            .get(key)
            .par_iter()
            .map(|r| embed_stimulus(backend, r))
            .collect();
        out.insert(key.to_owned(), embedded?);
    }
    Ok(out)
}

/// Per-surface vectors at a single layer, the input format of CEAT.
pub type LayerPools = BTreeMap<String, Vec<Vec<f64>>>;

pub fn layer_pools(embeddings: &BTreeMap<String, Vec<StimulusEmbedding>>, layer: usize) -> LayerPools {
    embeddings
        .iter()
        .map(|(k, v)| (k.clone(), v.iter().map(|e| e.per_layer[layer].clone()).collect()))
        .collect()
}

/// Mean attribute embeddings `v_i(a)` for every attribute of every dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeDirections {
    layer_count: usize,
    hidden_dim: usize,
    dimensions: Vec<DimensionDirections>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionDirections {
    pub name: String,
    /// Attribute surfaces, high pole first; row order of `per_layer`.
    pub attributes: Vec<String>,
    /// Number of leading high-pole attributes.
    pub high_count: usize,
    /// One `(attributes × hidden)` matrix per layer.
    pub per_layer: Vec<Array2<f64>>,
}

impl DimensionDirections {
    pub fn high(&self, layer: usize) -> ArrayView2<'_, f64> {
        self.per_layer[layer].slice(ndarray::s![..self.high_count, ..])
    }

    pub fn low(&self, layer: usize) -> ArrayView2<'_, f64> {
        self.per_layer[layer].slice(ndarray::s![self.high_count.., ..])
    }
}

impl AttributeDirections {
    pub fn new(layer_count: usize, hidden_dim: usize, dimensions: Vec<DimensionDirections>) -> Self {
        Self {
            layer_count,
            hidden_dim,
            dimensions,
        }
    }

    pub fn layer_count(&self) -> usize {
        self.layer_count
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn dimensions(&self) -> &[DimensionDirections] {
        &self.dimensions
    }

    pub fn dimension(&self, name: &str) -> Option<&DimensionDirections> {
        self.dimensions.iter().find(|d| d.name == name)
    }

    pub fn get(&self, dimension: &str, attribute: &str, layer: usize) -> Option<ArrayView1<'_, f64>> {
        let d = self.dimension(dimension)?;
        let row = d.attributes.iter().position(|a| a == attribute)?;
        d.per_layer.get(layer).map(|m| m.row(row))
    }

    /// Stacked `(attributes × hidden)` view for one dimension and layer.
    pub fn matrix(&self, dimension: &str, layer: usize) -> Option<&Array2<f64>> {
        self.dimension(dimension)?.per_layer.get(layer)
    }
}

/// Averages the contextual embeddings of each attribute over its sentences.
pub fn attribute_directions<B: EncoderBackend + ?Sized>(
    backend: &B,
    pool: &SentencePool,
    dimensions: &[AttributeDimension],
) -> Result<AttributeDirections, EmbedError> {
    let n = backend.layer_count();
    let h = backend.hidden_dim();
    let missing: Vec<String> = dimensions
        .iter()
        .flat_map(|d| d.attributes())
        .filter(|t| pool.get(t.surface()).is_empty())
        .map(|t| t.surface().to_owned())
        .collect();
    if !missing.is_empty() {
        return Err(EmbedError::MissingData(missing));
    }
    let mut out = Vec::with_capacity(dimensions.len());
    for d in dimensions {
        let attributes: Vec<String> = d.attributes().map(|t| t.surface().to_owned()).collect();
        let mut per_layer = vec![Array2::<f64>::zeros((attributes.len(), h)); n];
        for (row, surface) in attributes.iter().enumerate() {
            let records = pool.get(surface);
            let embedded: Vec<StimulusEmbedding> = records
                .par_iter()
                .map(|r| embed_stimulus(backend, r))
                .collect::<Result<_, _>>()?;
            let k = embedded.len() as f64;
            for (layer, m) in per_layer.iter_mut().enumerate() {
                let mut target = m.row_mut(row);
                for e in &embedded {
                    for (t, v) in target.iter_mut().zip(&e.per_layer[layer]) {
                        *t += v;
                    }
                }
                target.mapv_inplace(|x| x / k);
            }
        }
        out.push(DimensionDirections {
            name: d.name().to_owned(),
            high_count: d.pole_high().len(),
            attributes,
            per_layer,
        });
    }
    Ok(AttributeDirections::new(n, h, out))
}

// ---------------------------------------------------------------------------
// Embedding dump (JSON lines)
// ---------------------------------------------------------------------------

/// `{surface, layer, vector, source_id}` with a 1-based layer number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub surface: String,
    pub layer: usize,
    pub vector: Vec<f64>,
    pub source_id: String,
}

pub fn write_embedding_dump<W: Write>(
    mut writer: W,
    embeddings: &BTreeMap<String, Vec<StimulusEmbedding>>,
) -> std::io::Result<()> {
    for list in embeddings.values() {
        for e in list {
            for (i, v) in e.per_layer.iter().enumerate() {
                let rec = EmbeddingRecord {
                    surface: e.stimulus.surface().to_owned(),
                    layer: i + 1,
                    vector: v.clone(),
                    source_id: e.source_id.clone(),
                };
                serde_json::to_writer(&mut writer, &rec)?;
                writer.write_all(b"\n")?;
            }
        }
    }
    Ok(())
}

/// Reads a dump and keeps the vectors of one 1-based layer number, in file order.
pub fn read_embedding_dump<R: BufRead>(reader: R, layer: usize) -> Result<LayerPools, EmbedError> {
    let mut pools = LayerPools::new();
    let mut width = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EmbedError::Format {
            what: "embedding dump",
            message: format!("line {}: {e}", i + 1),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord = serde_json::from_str(&line).map_err(|e| EmbedError::Format {
            what: "embedding dump",
            message: format!("line {}: {e}", i + 1),
        })?;
        if rec.layer != layer {
            continue;
        }
        if *width.get_or_insert(rec.vector.len()) != rec.vector.len() {
            return Err(EmbedError::Format {
                what: "embedding dump",
                message: format!("line {}: vector width {} differs", i + 1, rec.vector.len()),
            });
        }
        pools.entry(rec.surface).or_default().push(rec.vector);
    }
    Ok(pools)
}

// ---------------------------------------------------------------------------
// Toy encoder
// ---------------------------------------------------------------------------

/// Construction parameters of [`ToyEncoder`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    pub seed: u64,
    pub layers: usize,
    pub hidden_dim: usize,
    /// Neighbours on each side mixed into a piece's input vector.
    pub context_window: usize,
    /// Longer alphanumeric runs are cut into pieces of at most this many chars.
    pub max_piece_chars: usize,
    /// Weight of a piece's own features against the neighbour average.
    pub self_weight: f64,
    /// Half-width of the uniform perturbation added to identity weights.
    pub init_scale: f64,
    /// Rows of the trainable piece-embedding table, indexed by a hash of the
    /// piece text. Zero disables the table.
    pub vocab_buckets: usize,
}

fn default_vocab_buckets() -> usize {
    1024
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            layers: 3,
            hidden_dim: 32,
            context_window: 2,
            max_piece_chars: 6,
            self_weight: 0.5,
            init_scale: 0.1,
            vocab_buckets: default_vocab_buckets(),
        }
    }
}

/// Small deterministic encoder for desk-scale experiments and tests.
///
/// Each piece gets a hashed, signed bag of character 1-3-grams plus a
/// trainable row of a hashed piece-embedding table. That vector is blended
/// with the mean of its neighbours inside `context_window` and then passed
/// through `layers` affine maps `h_i = W_i h_{i-1} + b_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    config: ToyConfig,
    params: Vec<f64>,
}

impl ToyEncoder {
    pub fn new(config: ToyConfig) -> Result<Self, EmbedError> {
        if config.layers < 1 || config.hidden_dim < 2 || config.max_piece_chars < 1 {
            return Err(EmbedError::InvalidConfig(format!(
                "need layers >= 1, hidden_dim >= 2, max_piece_chars >= 1 (got {}, {}, {})",
                config.layers, config.hidden_dim, config.max_piece_chars
            )));
        }
        if !(0.0..=1.0).contains(&config.self_weight) {
            return Err(EmbedError::InvalidConfig("self_weight must lie in [0, 1]".into()));
        }
        let h = config.hidden_dim;
        let mut rng = seed::rng(config.seed, "toy-encoder/init");
        let mut params = Vec::with_capacity(config.layers * (h * h + h));
        for _ in 0..config.layers {
            for r in 0..h {
                for c in 0..h {
                    let noise = if config.init_scale > 0.0 {
                        rng.random_range(-config.init_scale..config.init_scale)
                    } else {
                        0.0
                    };
                    params.push(if r == c { 1.0 } else { 0.0 } + noise);
                }
            }
            params.extend(std::iter::repeat_n(0.0, h));
        }
        params.extend(std::iter::repeat_n(0.0, config.vocab_buckets * h));
        Ok(Self { config, params })
    }

    /// Shorthand for the default config with the given sizes.
    pub fn with_sizes(seed: u64, layers: usize, hidden_dim: usize, context_window: usize) -> Result<Self, EmbedError> {
        Self::new(ToyConfig {
            seed,
            layers,
            hidden_dim,
            context_window,
            ..ToyConfig::default()
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    fn layer_size(&self) -> usize {
        let h = self.config.hidden_dim;
        h * h + h
    }

    fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let h = self.config.hidden_dim;
        let off = layer * self.layer_size();
        ArrayView2::from_shape((h, h), &self.params[off..off + h * h]).expect("weight shape")
    }

    fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let h = self.config.hidden_dim;
        let off = layer * self.layer_size() + h * h;
        ArrayView1::from(&self.params[off..off + h])
    }

    fn table_offset(&self) -> usize {
        self.config.layers * self.layer_size()
    }

    fn bucket(&self, piece: &str) -> Option<usize> {
        let b = self.config.vocab_buckets as u64;
        (b > 0).then(|| (seed::substream(self.config.seed, &format!("piece/{piece}")) % b) as usize)
    }

    /// Neighbours of every piece inside the context window.
    fn neighbours(&self, p: usize) -> Vec<Vec<usize>> {
        let w = self.config.context_window;
        (0..p)
            .map(|i| {
                let lo = i.saturating_sub(w);
                let hi = (i + w).min(p.saturating_sub(1));
                (lo..=hi).filter(|&j| j != i).collect()
            })
            .collect()
    }

    /// Normalised hashed char n-gram features plus the piece's table row.
    fn piece_features(&self, piece: &str) -> Array1<f64> {
        let h = self.config.hidden_dim as u64;
        let chars: Vec<char> = std::iter::once('\u{2}')
            .chain(piece.chars())
            .chain(std::iter::once('\u{3}'))
            .collect();
        let mut f = Array1::<f64>::zeros(self.config.hidden_dim);
        let mut buf = String::new();
        for n in 1..=3 {
            for w in chars.windows(n) {
                buf.clear();
                buf.extend(w);
                let hash = seed::substream(self.config.seed, &buf);
                let bucket = (hash % h) as usize;
                let sign = if hash >> 63 == 1 { -1.0 } else { 1.0 };
                f[bucket] += sign;
            }
        }
        let norm = f.dot(&f).sqrt();
        if norm > 0.0 {
            f /= norm;
        }
        if let Some(b) = self.bucket(piece) {
            let off = self.table_offset() + b * self.config.hidden_dim;
            f += &ArrayView1::from(&self.params[off..off + self.config.hidden_dim]);
        }
        f
    }

    /// Context-mixed input matrix `(pieces × hidden)`.
    fn input(&self, pieces: &[Piece]) -> Array2<f64> {
        let p = pieces.len();
        let h = self.config.hidden_dim;
        let mut feats = Array2::<f64>::zeros((p, h));
        for (i, piece) in pieces.iter().enumerate() {
            feats.row_mut(i).assign(&self.piece_features(&piece.text));
        }
        let sw = self.config.self_weight;
        let mut mixed = Array2::<f64>::zeros((p, h));
        for (i, nb) in self.neighbours(p).iter().enumerate() {
            let mut row = mixed.row_mut(i);
            if nb.is_empty() {
                row.assign(&feats.row(i));
                continue;
            }
            let mut ctx = Array1::<f64>::zeros(h);
            for &j in nb {
                ctx += &feats.row(j);
            }
            ctx /= nb.len() as f64;
            row.assign(&(&feats.row(i) * sw + &ctx * (1.0 - sw)));
        }
        mixed
    }

    /// Forward pass returning the input matrix followed by every layer output.
    fn forward(&self, pieces: &[Piece]) -> Vec<Array2<f64>> {
        let mut acts = Vec::with_capacity(self.config.layers + 1);
        acts.push(self.input(pieces));
        for layer in 0..self.config.layers {
            let prev = acts.last().expect("input present");
            let next = prev.dot(&self.weight(layer).t()) + self.bias(layer);
            acts.push(next);
        }
        acts
    }

    // --- checkpoints ---

    /// Writes `params.bin` (little-endian f64) and `manifest.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<CheckpointManifest, EmbedError> {
        let dir = dir.as_ref();
        let io = |source| EmbedError::Io {
            path: dir.display().to_string(),
            source,
        };
        fs::create_dir_all(dir).map_err(io)?;
        let bytes: Vec<u8> = self.params.iter().flat_map(|v| v.to_le_bytes()).collect();
        let manifest = CheckpointManifest {
            backend_kind: self.backend_kind().to_owned(),
            n: self.config.layers,
            h: self.config.hidden_dim,
            config_hash: self.config_hash(),
            config: serde_json::to_value(&self.config).expect("config serialises"),
            param_count: self.params.len(),
            params_sha256: seed::sha256_hex(&bytes),
        };
        fs::write(dir.join(PARAMS_FILE), &bytes).map_err(io)?;
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        fs::write(dir.join(MANIFEST_FILE), text).map_err(io)?;
        Ok(manifest)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, EmbedError> {
        let dir = dir.as_ref();
        let io = |source| EmbedError::Io {
            path: dir.display().to_string(),
            source,
        };
        let manifest: CheckpointManifest =
            serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE)).map_err(io)?).map_err(|e| {
                EmbedError::Format {
                    what: "checkpoint manifest",
                    message: e.to_string(),
                }
            })?;
        if manifest.backend_kind != TOY_KIND {
            return Err(EmbedError::ArchitectureMismatch(format!(
                "checkpoint holds a {:?} backend",
                manifest.backend_kind
            )));
        }
        let config: ToyConfig = serde_json::from_value(manifest.config.clone()).map_err(|e| EmbedError::Format {
            what: "checkpoint manifest",
            message: e.to_string(),
        })?;
        let bytes = fs::read(dir.join(PARAMS_FILE)).map_err(io)?;
        if seed::sha256_hex(&bytes) != manifest.params_sha256 || bytes.len() != manifest.param_count * 8 {
            return Err(EmbedError::Format {
                what: "checkpoint parameters",
                message: "digest or size does not match manifest".into(),
            });
        }
        let mut enc = ToyEncoder::new(config)?;
        let values: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        enc.set_parameters(&values)?;
        if enc.config_hash() != manifest.config_hash {
            return Err(EmbedError::ArchitectureMismatch("config hash differs from manifest".into()));
        }
        Ok(enc)
    }
}

pub const TOY_KIND: &str = "toy";
pub const PARAMS_FILE: &str = "params.bin";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Written next to an exported parameter archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub backend_kind: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "H")]
    pub h: usize,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub param_count: usize,
    pub params_sha256: String,
}

impl EncoderBackend for ToyEncoder {
    fn backend_kind(&self) -> &'static str {
        TOY_KIND
    }

    fn layer_count(&self) -> usize {
        self.config.layers
    }

    fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn tokenize(&self, text: &str) -> Vec<Piece> {
        let max = self.config.max_piece_chars;
        let mut pieces = Vec::new();
        let mut word: Vec<char> = Vec::new();
        let mut word_start = 0;
        let flush = |word: &mut Vec<char>, start: usize, pieces: &mut Vec<Piece>| {
            for (k, chunk) in word.chunks(max).enumerate() {
                let s = start + k * max;
                pieces.push(Piece {
                    text: chunk.iter().collect(),
                    start: s,
                    end: s + chunk.len(),
                });
            }
            word.clear();
        };
        for (i, c) in text.chars().enumerate() {
            if c.is_alphanumeric() {
                if word.is_empty() {
                    word_start = i;
                }
                word.push(c);
                continue;
            }
            flush(&mut word, word_start, &mut pieces);
            if !c.is_whitespace() {
                pieces.push(Piece {
                    text: c.to_string(),
                    start: i,
                    end: i + 1,
                });
            }
        }
        flush(&mut word, word_start, &mut pieces);
        pieces
    }

    fn encode(&self, text: &str) -> Encoding {
        let pieces = self.tokenize(text);
        let mut acts = self.forward(&pieces);
        acts.remove(0);
        Encoding { pieces, layers: acts }
    }

    fn is_trainable(&self) -> bool {
        true
    }

    fn config_hash(&self) -> String {
        seed::config_hash(&self.config)
    }

    fn snapshot(&self) -> ParamSnapshot {
        ParamSnapshot {
            backend_kind: TOY_KIND.to_owned(),
            layer_count: self.config.layers,
            hidden_dim: self.config.hidden_dim,
            config_hash: self.config_hash(),
            values: self.params.clone(),
        }
    }

    fn restore(&mut self, snapshot: &ParamSnapshot) -> Result<(), EmbedError> {
        self.snapshot().check_compatible(snapshot)?;
        self.params.copy_from_slice(&snapshot.values);
        Ok(())
    }
}

impl TrainableBackend for ToyEncoder {
    fn parameters(&self) -> &[f64] {
        &self.params
    }

    fn set_parameters(&mut self, values: &[f64]) -> Result<(), EmbedError> {
        if values.len() != self.params.len() {
            return Err(EmbedError::ArchitectureMismatch(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                values.len()
            )));
        }
        self.params.copy_from_slice(values);
        Ok(())
    }

    fn backward(&self, text: &str, output_grads: &[Array2<f64>]) -> Vec<f64> {
        let pieces = self.tokenize(text);
        let acts = self.forward(&pieces);
        let n = self.config.layers;
        let h = self.config.hidden_dim;
        assert_eq!(output_grads.len(), n, "one gradient matrix per layer");
        let mut grad = vec![0.0; self.params.len()];
        if pieces.is_empty() {
            return grad;
        }
        let mut delta = output_grads[n - 1].clone();
        for layer in (0..n).rev() {
            let off = layer * self.layer_size();
            let gw = delta.t().dot(&acts[layer]);
            for (g, v) in grad[off..off + h * h].iter_mut().zip(gw.iter()) {
                *g += v;
            }
            let gb = delta.sum_axis(Axis(0));
            for (g, v) in grad[off + h * h..off + h * h + h].iter_mut().zip(gb.iter()) {
                *g += v;
            }
            if layer > 0 {
                delta = delta.dot(&self.weight(layer)) + &output_grads[layer - 1];
            }
        }
        if self.config.vocab_buckets > 0 {
            // delta now holds dL/d(input); push it through the context mix.
            let input_grad = delta.dot(&self.weight(0));
            let sw = self.config.self_weight;
            let mut feat_grad = Array2::<f64>::zeros(input_grad.raw_dim());
            for (i, nb) in self.neighbours(pieces.len()).iter().enumerate() {
                if nb.is_empty() {
                    feat_grad.row_mut(i).scaled_add(1.0, &input_grad.row(i));
                    continue;
                }
                feat_grad.row_mut(i).scaled_add(sw, &input_grad.row(i));
                let share = (1.0 - sw) / nb.len() as f64;
                for &j in nb {
                    feat_grad.row_mut(j).scaled_add(share, &input_grad.row(i));
                }
            }
            let table = self.table_offset();
            for (piece, g) in pieces.iter().zip(feat_grad.rows()) {
                let b = self.bucket(&piece.text).expect("table enabled");
                let off = table + b * h;
                for (dst, v) in grad[off..off + h].iter_mut().zip(g) {
                    *dst += v;
                }
            }
        }
        grad
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::{StimulusTerm, TermKind};

    fn record(text: &str, surface: &str, kind: TermKind) -> SentenceRecord {
        let start = text.find(surface).expect("surface present");
        let start = text[..start].chars().count();
        SentenceRecord {
            text: text.to_owned(),
            stimulus: StimulusTerm::new(surface, kind, "g").unwrap(),
            start,
            end: start + surface.chars().count(),
            token_count: text.split_whitespace().count(),
            source_id: format!("{surface}:{text}"),
        }
    }

    fn toy() -> ToyEncoder {
        ToyEncoder::with_sizes(11, 2, 8, 2).unwrap()
    }

    #[test]
    fn tokenizer_offsets_are_monotone_and_split_long_words() {
        let enc = toy();
        let pieces = enc.tokenize("Hi, Christopher!");
        let texts: Vec<&str> = pieces.iter().map(|p| p.text.as_str()).collect();
        assert_eq!(texts, ["Hi", ",", "Christ", "opher", "!"]);
        for w in pieces.windows(2) {
            assert!(w[0].end <= w[1].start);
        }
    }

    #[test]
    fn single_piece_stimulus_is_unchanged() {
        let enc = toy();
        let r = record("The warm day", "warm", TermKind::Attribute);
        let e = embed_stimulus(&enc, &r).unwrap();
        let full = enc.encode(&r.text);
        for (layer, m) in full.layers.iter().enumerate() {
            assert_eq!(e.per_layer[layer], m.row(1).to_vec());
        }
    }

    #[test]
    fn multi_piece_stimulus_is_mean_pooled() {
        let enc = toy();
        let r = record("Hello Christopher there", "Christopher", TermKind::Target);
        let e = embed_stimulus(&enc, &r).unwrap();
        let full = enc.encode(&r.text);
        let idx = full.span_pieces(r.start, r.end);
        assert_eq!(idx, vec![1, 2]);
        for (layer, m) in full.layers.iter().enumerate() {
            let expect: Vec<f64> = m.row(1).iter().zip(m.row(2)).map(|(u, w)| (u + w) / 2.0).collect();
            assert_eq!(e.per_layer[layer], expect);
        }
    }

    #[test]
    fn misaligned_span_is_an_error() {
        let enc = toy();
        let mut r = record("warm", "warm", TermKind::Attribute);
        r.start = 10;
        r.end = 12;
        assert!(matches!(embed_stimulus(&enc, &r), Err(EmbedError::SpanAlignment { .. })));
    }

    #[test]
    fn toy_is_deterministic_and_contextual() {
        let a = toy();
        let b = toy();
        assert_eq!(a.parameters(), b.parameters());
        let r1 = record("the warm sun shines", "warm", TermKind::Attribute);
        let r2 = record("a warm cup of tea", "warm", TermKind::Attribute);
        let e1 = embed_stimulus(&a, &r1).unwrap();
        let e1b = embed_stimulus(&b, &r1).unwrap();
        let e2 = embed_stimulus(&a, &r2).unwrap();
        assert_eq!(e1, e1b);
        assert_ne!(e1.per_layer[1], e2.per_layer[1]);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(ToyEncoder::with_sizes(0, 0, 8, 1).is_err());
        assert!(ToyEncoder::with_sizes(0, 1, 1, 1).is_err());
    }

    #[test]
    fn snapshot_restore_round_trips_exactly() {
        let mut enc = toy();
        let snap = enc.snapshot();
        let before = enc.encode("Jamal was kind today");
        let mut perturbed = enc.parameters().to_vec();
        perturbed.iter_mut().for_each(|p| *p *= 1.5);
        enc.set_parameters(&perturbed).unwrap();
        assert_ne!(enc.encode("Jamal was kind today"), before);
        enc.restore(&snap).unwrap();
        assert_eq!(enc.encode("Jamal was kind today"), before);

        let other = ToyEncoder::with_sizes(11, 3, 8, 2).unwrap();
        assert!(enc.restore(&other.snapshot()).is_err());
    }

    #[test]
    fn backward_matches_finite_differences_for_quadratic_loss() {
        let enc = ToyEncoder::with_sizes(5, 3, 6, 2).unwrap();
        let text = "Emily said the soup was warm.";
        // loss = sum_i sum_{p,h} c_{i,p,h} * x_{i,p,h}^2 with fixed random weights.
        let shape = enc.encode(text).layers[0].dim();
        let mut rng = seed::rng(3, "test");
        let coeffs: Vec<Array2<f64>> = (0..3)
            .map(|_| Array2::from_shape_fn(shape, |_| rng.random_range(-1.0..1.0)))
            .collect();
        let loss = |e: &ToyEncoder| -> f64 {
            e.encode(text)
                .layers
                .iter()
                .zip(&coeffs)
                .map(|(x, c)| (x * x * c).sum())
                .sum()
        };
        let out = enc.encode(text);
        let grads: Vec<Array2<f64>> = out.layers.iter().zip(&coeffs).map(|(x, c)| x * c * 2.0).collect();
        let analytic = enc.backward(text, &grads);
        let mut probe = enc.clone();
        let step = 1e-5;
        let mut worst: f64 = 0.0;
        let table = enc.table_offset();
        assert!(analytic[table..].iter().any(|g| *g != 0.0), "table rows receive gradient");
        let probes: Vec<usize> = (0..analytic.len())
            .filter(|&k| (k < table && k % 7 == 0) || (k >= table && analytic[k] != 0.0))
            .collect();
        for k in probes {
            let mut p = enc.parameters().to_vec();
            p[k] += step;
            probe.set_parameters(&p).unwrap();
            let up = loss(&probe);
            p[k] -= 2.0 * step;
            probe.set_parameters(&p).unwrap();
            let down = loss(&probe);
            let numeric = (up - down) / (2.0 * step);
            let rel = (numeric - analytic[k]).abs() / numeric.abs().max(analytic[k].abs()).max(1e-8);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-4, "max relative error {worst}");
    }

    #[test]
    fn attribute_directions_average_and_report_missing() {
        let enc = toy();
        let mut pool = SentencePool::default();
        let p = record("a warm fire", "warm", TermKind::Attribute);
        let q = record("warm hands help", "warm", TermKind::Attribute);
        let c = record("so cold outside", "cold", TermKind::Attribute);
        for r in [&p, &q, &c] {
            pool.push(r.clone());
        }
        let dim = AttributeDimension::new(
            "warmth",
            vec![StimulusTerm::attribute("warm", "h").unwrap()],
            vec![StimulusTerm::attribute("cold", "l").unwrap()],
            32,
        )
        .unwrap();
        let dirs = attribute_directions(&enc, &pool, std::slice::from_ref(&dim)).unwrap();
        let ep = embed_stimulus(&enc, &p).unwrap();
        let eq = embed_stimulus(&enc, &q).unwrap();
        let ec = embed_stimulus(&enc, &c).unwrap();
        for layer in 0..2 {
            let got = dirs.get("warmth", "warm", layer).unwrap();
            for (k, g) in got.iter().enumerate() {
                assert!((g - (ep.per_layer[layer][k] + eq.per_layer[layer][k]) / 2.0).abs() < 1e-12);
            }
            assert_eq!(dirs.get("warmth", "cold", layer).unwrap().to_vec(), ec.per_layer[layer]);
            assert_eq!(dirs.dimension("warmth").unwrap().high(layer).nrows(), 1);
        }

        let mut thin = SentencePool::default();
        thin.push(p);
        match attribute_directions(&enc, &thin, &[dim]) {
            Err(EmbedError::MissingData(terms)) => assert_eq!(terms, vec!["cold".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dump_round_trip_by_layer() {
        let enc = toy();
        let r = record("a warm fire", "warm", TermKind::Attribute);
        let mut pool = SentencePool::default();
        pool.push(r);
        let embedded = embed_pool(&enc, &pool, None).unwrap();
        let mut buf = Vec::new();
        write_embedding_dump(&mut buf, &embedded).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        let l2 = read_embedding_dump(buf.as_slice(), 2).unwrap();
        assert_eq!(l2, layer_pools(&embedded, 1));
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut enc = toy();
        let mut p = enc.parameters().to_vec();
        p[3] += 0.25;
        enc.set_parameters(&p).unwrap();
        let manifest = enc.save(dir.path()).unwrap();
        assert_eq!(manifest.config_hash, toy().config_hash());
        let back = ToyEncoder::load(dir.path()).unwrap();
        assert_eq!(back.encode("Probe sentence here."), enc.encode("Probe sentence here."));
    }
}
