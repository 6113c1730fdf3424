//! Measurement runs, before/after reports, projection coordinates and run
//! manifests.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ceat::{self, CeatError, EffectClass, SamplingConfig, SIGNIFICANCE_LEVEL};
use crate::corpus::SentencePool;
use crate::embed::{self, AttributeDirections, EmbedError, EncoderBackend, LayerPools, StimulusEmbedding};
use crate::lexicon::{BiasTestSpec, Lexicon};
use crate::seed;
use crate::ErrorCategory;

/// `|ces_after|` below this counts as reduced to a very small effect.
pub const VERY_SMALL: f64 = 0.2;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("test {test:?}: {source}")]
    Test {
        test: String,
        #[source]
        source: CeatError,
    },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("result sets differ: only before {only_before:?}, only after {only_after:?}")]
    Mismatch {
        only_before: Vec<String>,
        only_after: Vec<String>,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("direction {dimension:?}/{attribute:?} at layer {layer} has zero norm")]
    DegenerateDirection {
        dimension: String,
        attribute: String,
        layer: usize,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Format { path: String, message: String },
}

impl PipelineError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            PipelineError::Test { source, .. } => source.category(),
            PipelineError::Embed(e) => e.category(),
            PipelineError::Mismatch { .. } | PipelineError::InvalidArgument(_) => ErrorCategory::Validation,
            PipelineError::DegenerateDirection { .. } => ErrorCategory::Numeric,
            PipelineError::Io { .. } | PipelineError::Format { .. } => ErrorCategory::Data,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureConfig {
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_per_term_draw")]
    pub per_term_draw: usize,
    /// 1-based layer; the last layer when absent.
    #[serde(default)]
    pub layer: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_samples() -> usize {
    ceat::DEFAULT_SAMPLES
}
fn default_per_term_draw() -> usize {
    1
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            n_samples: default_samples(),
            per_term_draw: 1,
            layer: None,
            seed: 0,
        }
    }
}

impl MeasureConfig {
    /// 0-based layer index for an `n`-layer encoder.
    pub fn layer_index(&self, n: usize) -> Result<usize, PipelineError> {
        match self.layer {
            None => Ok(n - 1),
            Some(l) if (1..=n).contains(&l) => Ok(l - 1),
            Some(l) => Err(PipelineError::InvalidArgument(format!("layer {l} outside 1..={n}"))),
        }
    }
}

/// One row of a results file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureResult {
    pub test_name: String,
    pub ces: f64,
    pub tau2: f64,
    pub se: f64,
    pub z: f64,
    pub p: f64,
    pub n_samples: usize,
    pub classification: EffectClass,
    pub config_hash: String,
    pub seed: u64,
}

/// Results of one `measure` run; `manifest` names the manifest file written
/// alongside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub manifest: String,
    pub results: Vec<MeasureResult>,
}

impl ResultsFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| PipelineError::Format {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self).expect("results serialise");
        text.push('\n');
        fs::write(path, text).map_err(io_err(path))
    }
}

/// Runs CEAT for every spec against per-stimulus embedding pools of one layer.
pub fn measure_pools(
    specs: &[BiasTestSpec],
    pools: &LayerPools,
    config: &MeasureConfig,
) -> Result<Vec<MeasureResult>, PipelineError> {
    let hash = seed::config_hash(config);
    specs
        .iter()
        .map(|spec| {
            let attach = |source| PipelineError::Test {
                test: spec.name().to_owned(),
                source,
            };
            let sampling = SamplingConfig {
                n_samples: config.n_samples,
                per_term_draw: config.per_term_draw,
                seed: config.seed,
            };
            let samples = ceat::sample_combinations(pools, spec, &sampling).map_err(attach)?;
            let meta = ceat::combine_random_effects(&samples).map_err(attach)?;
            Ok(MeasureResult {
                test_name: spec.name().to_owned(),
                ces: meta.ces,
                tau2: meta.tau2,
                se: meta.se,
                z: meta.z,
                p: meta.p,
                n_samples: meta.n_samples,
                classification: meta.classification,
                config_hash: hash.clone(),
                seed: config.seed,
            })
        })
        .collect()
}

/// Embeds the stimuli of every bias test from `pool` and measures each test.
pub fn run_measure<B: EncoderBackend + ?Sized>(
    lexicon: &Lexicon,
    pool: &SentencePool,
    backend: &B,
    config: &MeasureConfig,
) -> Result<Vec<MeasureResult>, PipelineError> {
    let layer = config.layer_index(backend.layer_count())?;
    let surfaces: BTreeSet<&str> = lexicon
        .bias_test_specs()
        .iter()
        .flat_map(|s| s.terms())
        .map(|t| t.surface())
        .collect();
    let surfaces: Vec<&str> = surfaces.into_iter().collect();
    let embeddings = embed::embed_pool(backend, pool, Some(&surfaces))?;
    let pools = embed::layer_pools(&embeddings, layer);
    measure_pools(lexicon.bias_test_specs(), &pools, config)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub test_name: String,
    pub ces_before: f64,
    pub p_before: f64,
    pub ces_after: f64,
    pub p_after: f64,
    pub class_before: EffectClass,
    pub class_after: EffectClass,
    pub reduced_to_very_small: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

/// Pairs before/after results by test name, in the order of `before`.
pub fn compare(before: &[MeasureResult], after: &[MeasureResult]) -> Result<ComparisonReport, PipelineError> {
    let names = |rs: &[MeasureResult]| rs.iter().map(|r| r.test_name.clone()).collect::<BTreeSet<_>>();
    let (b, a) = (names(before), names(after));
    if b != a || b.len() != before.len() || a.len() != after.len() {
        return Err(PipelineError::Mismatch {
            only_before: b.difference(&a).cloned().collect(),
            only_after: a.difference(&b).cloned().collect(),
        });
    }
    let by_name: BTreeMap<&str, &MeasureResult> = after.iter().map(|r| (r.test_name.as_str(), r)).collect();
    let rows = before
        .iter()
        .map(|r| {
            let s = by_name[r.test_name.as_str()];
            ComparisonRow {
                test_name: r.test_name.clone(),
                ces_before: r.ces,
                p_before: r.p,
                ces_after: s.ces,
                p_after: s.p,
                class_before: r.classification,
                class_after: s.classification,
                reduced_to_very_small: s.ces.abs() < VERY_SMALL,
            }
        })
        .collect();
    Ok(ComparisonReport { rows })
}

fn cell(ces: f64, p: f64) -> String {
    let star = if p < SIGNIFICANCE_LEVEL { "*" } else { "" };
    format!("{ces:.2}{star}")
}

impl ComparisonReport {
    /// Fixed-width table with two decimals. `*` marks p < 0.05; after-values
    /// that fell into the very small band are wrapped in `**`.
    pub fn render_text(&self) -> String {
        let header = ["test", "CES before", "CES after", "class before", "class after"];
        let body: Vec<[String; 5]> = self
            .rows
            .iter()
            .map(|r| {
                let after = cell(r.ces_after, r.p_after);
                [
                    r.test_name.clone(),
                    cell(r.ces_before, r.p_before),
                    if r.reduced_to_very_small { format!("**{after}**") } else { after },
                    r.class_before.label().to_owned(),
                    r.class_after.label().to_owned(),
                ]
            })
            .collect();
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let mut line = |cells: [&str; 5]| {
            let parts: Vec<String> = cells.iter().zip(widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(header);
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        line([&rule[0], &rule[1], &rule[2], &rule[3], &rule[4]]);
        for r in &body {
            line([&r[0], &r[1], &r[2], &r[3], &r[4]]);
        }
        out
    }

    /// Full-precision CSV.
    pub fn render_csv(&self) -> String {
        let mut out = String::from(
            "test_name,ces_before,p_before,ces_after,p_after,class_before,class_after,reduced_to_very_small\n",
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:?},{:?},{:?},{:?},{},{},{}",
                csv_field(&r.test_name),
                r.ces_before,
                r.p_before,
                r.ces_after,
                r.p_after,
                class_name(r.class_before),
                class_name(r.class_after),
                r.reduced_to_very_small
            );
        }
        out
    }
}

fn class_name(c: EffectClass) -> String {
    serde_json::to_value(c)
        .ok()
        .and_then(|v| v.as_str().map(str::to_owned))
        .unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

/// One stimulus occurrence in the two-dimensional projection plot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionPoint {
    pub surface: String,
    pub group: String,
    pub x: f64,
    pub y: f64,
}

struct Axis {
    high: Vec<Array1<f64>>,
    low: Vec<Array1<f64>>,
}

impl Axis {
    fn new(directions: &AttributeDirections, dimension: &str, layer: usize) -> Result<Self, PipelineError> {
        let d = directions
            .dimension(dimension)
            .ok_or_else(|| PipelineError::InvalidArgument(format!("no directions for dimension {dimension:?}")))?;
        let m = d
            .per_layer
            .get(layer)
            .ok_or_else(|| PipelineError::InvalidArgument(format!("directions have no layer {}", layer + 1)))?;
        let mut units = Vec::with_capacity(m.nrows());
        for (row, name) in m.rows().into_iter().zip(&d.attributes) {
            let n = row.dot(&row).sqrt();
            if !(n > 0.0 && n.is_finite()) {
                return Err(PipelineError::DegenerateDirection {
                    dimension: dimension.to_owned(),
                    attribute: name.clone(),
                    layer: layer + 1,
                });
            }
            units.push(row.to_owned() / n);
        }
        let low = units.split_off(d.high_count);
        Ok(Self { high: units, low })
    }

    /// Mean projection onto high-pole unit directions minus mean projection
    /// onto low-pole unit directions.
    fn coordinate(&self, e: &Array1<f64>) -> f64 {
        let mean = |us: &[Array1<f64>]| {
            if us.is_empty() {
                0.0
            } else {
                us.iter().map(|u| u.dot(e)).sum::<f64>() / us.len() as f64
            }
        };
        mean(&self.high) - mean(&self.low)
    }
}

/// Maps each embedding to signed coordinates on the two attribute axes at
/// `layer` (0-based).
pub fn emit_projection_coordinates(
    embeddings: &[StimulusEmbedding],
    directions: &AttributeDirections,
    x_dimension: &str,
    y_dimension: &str,
    layer: usize,
) -> Result<Vec<ProjectionPoint>, PipelineError> {
    let ax = Axis::new(directions, x_dimension, layer)?;
    let ay = Axis::new(directions, y_dimension, layer)?;
    embeddings
        .iter()
        .map(|e| {
            let v = e.per_layer.get(layer).ok_or_else(|| {
                PipelineError::InvalidArgument(format!("embedding has no layer {}", layer + 1))
            })?;
            if v.len() != directions.hidden_dim() {
                return Err(PipelineError::InvalidArgument(format!(
                    "embedding width {} but directions have {}",
                    v.len(),
                    directions.hidden_dim()
                )));
            }
            let v = Array1::from(v.clone());
            Ok(ProjectionPoint {
                surface: e.stimulus.surface().to_owned(),
                group: e.stimulus.group().to_owned(),
                x: ax.coordinate(&v),
                y: ay.coordinate(&v),
            })
        })
        .collect()
}

/// CSV with header `surface,group,<x>_coord,<y>_coord`.
pub fn projection_csv(points: &[ProjectionPoint], x_dimension: &str, y_dimension: &str) -> String {
    let mut out = format!("surface,group,{x_dimension}_coord,{y_dimension}_coord\n");
    for p in points {
        let _ = writeln!(out, "{},{},{},{}", csv_field(&p.surface), csv_field(&p.group), p.x, p.y);
    }
    out
}

/// Mean absolute coordinates of a point cloud.
pub fn mean_abs_coordinates(points: &[ProjectionPoint]) -> (f64, f64) {
    let n = points.len().max(1) as f64;
    (
        points.iter().map(|p| p.x.abs()).sum::<f64>() / n,
        points.iter().map(|p| p.y.abs()).sum::<f64>() / n,
    )
}

/// SHA-256 of a file's bytes.
pub fn file_digest(path: impl AsRef<Path>) -> Result<String, PipelineError> {
    let path = path.as_ref();
    Ok(seed::sha256_hex(&fs::read(path).map_err(io_err(path))?))
}

/// Provenance record written next to every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seeds: BTreeMap<String, u64>,
    /// Input path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn new(command: impl Into<String>, config_hash: impl Into<String>) -> Self {
        Self {
            command: command.into(),
            config_hash: config_hash.into(),
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            started_at: String::new(),
            finished_at: String::new(),
        }
    }

    pub fn add_input(&mut self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let path = path.as_ref();
        let digest = if path.is_dir() {
            let mut entries: Vec<_> = fs::read_dir(path)
                .map_err(io_err(path))?
                .filter_map(Result::ok)
                .map(|e| e.path())
                .filter(|p| p.is_file())
                .collect();
            entries.sort();
            let mut joined = String::new();
            for p in entries {
                let _ = writeln!(joined, "{} {}", p.file_name().unwrap_or_default().to_string_lossy(), file_digest(&p)?);
            }
            seed::sha256_hex(joined.as_bytes())
        } else {
            file_digest(path)?
        };
        self.inputs.insert(path.display().to_string(), digest);
        Ok(())
    }

    /// Manifest path for an artifact: `<artifact>.manifest.json`.
    pub fn path_for(artifact: impl AsRef<Path>) -> std::path::PathBuf {
        let a = artifact.as_ref();
        let mut name = a.file_name().unwrap_or_default().to_os_string();
        name.push(".manifest.json");
        a.with_file_name(name)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        fs::write(path, text + "\n").map_err(io_err(path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::DimensionDirections;
    use crate::lexicon::StimulusTerm;
    use ndarray::array;

    fn result(name: &str, ces: f64, p: f64) -> MeasureResult {
        MeasureResult {
            test_name: name.into(),
            ces,
            tau2: 0.0,
            se: 0.1,
            z: ces / 0.1,
            p,
            n_samples: 1000,
            classification: ceat::classify_effect(ces),
            config_hash: "h".into(),
            seed: 0,
        }
    }

    #[test]
    fn report_marks_significance_and_emphasis() {
        let before = vec![result("EA,AA,Warm", 0.77, 0.001), result("EA,AA,Comp", 0.47, 0.2)];
        let after = vec![result("EA,AA,Comp", 0.35, 0.01), result("EA,AA,Warm", -0.12, 0.3)];
        let report = compare(&before, &after).unwrap();
        assert_eq!(report.rows[0].test_name, "EA,AA,Warm");
        assert!(report.rows[0].reduced_to_very_small);
        assert!(!report.rows[1].reduced_to_very_small);
        let text = report.render_text();
        assert!(text.contains("0.77*"));
        assert!(text.contains("**-0.12**"));
        assert!(text.contains("0.47 ") && !text.contains("0.47*"));
        let csv = report.render_csv();
        assert!(csv.contains("\"EA,AA,Warm\",0.77,0.001,-0.12,0.3,medium,very_small,true"));
    }

    #[test]
    fn identical_inputs_only_emphasise_small_rows() {
        let rs = vec![result("a", 0.9, 0.01), result("b", 0.1, 0.5)];
        let report = compare(&rs, &rs).unwrap();
        assert_eq!(
            report.rows.iter().map(|r| r.reduced_to_very_small).collect::<Vec<_>>(),
            vec![false, true]
        );
    }

    #[test]
    fn csv_and_text_agree() {
        let before = vec![result("t1", 0.7749, 0.01), result("t2", -0.2351, 0.04), result("t3", 1.005, 0.5)];
        let after = vec![result("t1", 0.0149, 0.5), result("t2", 0.444, 0.049), result("t3", -0.9, 0.06)];
        let report = compare(&before, &after).unwrap();
        let text = report.render_text();
        let text_rows: Vec<Vec<String>> = text
            .lines()
            .skip(2)
            .map(|l| l.split_whitespace().map(|c| c.trim_matches('*').to_owned()).collect())
            .collect();
        for (line, row) in report.render_csv().lines().skip(1).zip(&text_rows) {
            let f: Vec<&str> = line.split(',').collect();
            let round = |s: &str| format!("{:.2}", s.parse::<f64>().unwrap());
            assert_eq!(round(f[1]), row[1]);
            assert_eq!(round(f[3]), row[2]);
        }
    }

    #[test]
    fn mismatched_tests_are_rejected() {
        let err = compare(&[result("a", 0.1, 0.5)], &[result("b", 0.1, 0.5)]).unwrap_err();
        match err {
            PipelineError::Mismatch { only_before, only_after } => {
                assert_eq!(only_before, vec!["a"]);
                assert_eq!(only_after, vec!["b"]);
            }
            other => panic!("{other}"),
        }
    }

    fn dirs() -> AttributeDirections {
        let dim = |name: &str, high: [f64; 3], low: [f64; 3]| DimensionDirections {
            name: name.into(),
            attributes: vec![format!("{name}-h"), format!("{name}-l")],
            high_count: 1,
            per_layer: vec![array![[high[0], high[1], high[2]], [low[0], low[1], low[2]]]],
        };
        AttributeDirections::new(
            1,
            3,
            vec![dim("warmth", [2.0, 0.0, 0.0], [0.0, 0.0, 3.0]), dim("competence", [0.0, 1.0, 0.0], [0.0, 0.0, -1.0])],
        )
    }

    fn emb(v: Vec<f64>) -> StimulusEmbedding {
        StimulusEmbedding {
            stimulus: StimulusTerm::target("Ann", "x").unwrap(),
            per_layer: vec![v],
            source_id: "s".into(),
        }
    }

    #[test]
    fn projection_examples() {
        let d = dirs();
        let pts = emit_projection_coordinates(&[emb(vec![0.0, 0.0, 0.0]), emb(vec![1.0, 0.5, 0.0])], &d, "warmth", "competence", 0)
            .unwrap();
        assert_eq!((pts[0].x, pts[0].y), (0.0, 0.0));
        assert_eq!(pts[1].x, 1.0);
        assert_eq!(pts[1].y, 0.5);
        let csv = projection_csv(&pts, "warmth", "competence");
        assert!(csv.starts_with("surface,group,warmth_coord,competence_coord\nAnn,x,0,0\n"));

        let mut zero = dirs();
        let mut dims = zero.dimensions().to_vec();
        dims[0].per_layer[0].row_mut(0).fill(0.0);
        zero = AttributeDirections::new(1, 3, dims);
        assert!(matches!(
            emit_projection_coordinates(&[emb(vec![1.0, 0.0, 0.0])], &zero, "warmth", "competence", 0),
            Err(PipelineError::DegenerateDirection { .. })
        ));
    }

    #[test]
    fn manifest_path_and_digest() {
        let dir = tempfile::tempdir().unwrap();
        let f = dir.path().join("results.json");
        fs::write(&f, "abc").unwrap();
        assert_eq!(RunManifest::path_for(&f), dir.path().join("results.json.manifest.json"));
        assert_eq!(
            file_digest(&f).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
        let mut m = RunManifest::new("measure", "h");
        m.add_input(&f).unwrap();
        m.add_input(dir.path()).unwrap();
        assert_eq!(m.inputs.len(), 2);
    }
}
