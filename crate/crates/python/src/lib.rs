//! Python bindings for `scm_debias`.

use pyo3::exceptions::{PyArithmeticError, PyLookupError, PyValueError};
use pyo3::prelude::*;

use scm_debias::ceat::{self, PValueMethod};
use scm_debias::corpus::{self, Document, ExtractConfig, WhitespaceTokenCounter};
use scm_debias::debias::{self, DebiasConfig, TrainingData};
use scm_debias::embed::{self, EncoderBackend, ToyConfig};
use scm_debias::lexicon::{self, AttributeDimension, StimulusTerm};
use scm_debias::pipeline::{self, MeasureConfig};
use scm_debias::{planted, Error, ErrorCategory};

fn to_py(e: impl Into<Error>) -> PyErr {
    let e: Error = e.into();
    let msg = e.to_string();
    match e.category() {
        ErrorCategory::Validation => PyValueError::new_err(msg),
        ErrorCategory::Data => PyLookupError::new_err(msg),
        ErrorCategory::Numeric => PyArithmeticError::new_err(msg),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Target sets, attribute dimensions and bias tests.
#[pyclass(name = "Lexicon", frozen)]
struct PyLexicon(lexicon::Lexicon);

#[pymethods]
impl PyLexicon {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        lexicon::Lexicon::load(path).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        lexicon::Lexicon::from_json_str(text).map(Self).map_err(to_py)
    }

    fn to_json(&self) -> String {
        self.0.to_json_string()
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(to_py)
    }

    /// Bias test names, in file order.
    fn test_names(&self) -> Vec<String> {
        self.0.bias_test_specs().iter().map(|t| t.name().to_owned()).collect()
    }

    fn dimension_names(&self) -> Vec<String> {
        self.0.attribute_dimensions().iter().map(|d| d.name().to_owned()).collect()
    }

    /// `(surface, group)` pairs of a stimulus set.
    fn stimulus_set(&self, name: &str) -> PyResult<Vec<(String, String)>> {
        let set = self
            .0
            .stimulus_set(name)
            .ok_or_else(|| PyLookupError::new_err(format!("no stimulus set {name:?}")))?;
        Ok(set
            .terms()
            .iter()
            .map(|t| (t.surface().to_owned(), t.group().to_owned()))
            .collect())
    }

    /// Surfaces of `dimensions` that also occur in bias test `test`.
    fn overlap(&self, dimensions: Vec<String>, test: &str) -> PyResult<Vec<String>> {
        let spec = self
            .0
            .test(test)
            .ok_or_else(|| PyLookupError::new_err(format!("no bias test {test:?}")))?;
        let mut terms: Vec<StimulusTerm> = Vec::new();
        for d in &dimensions {
            let dim = self
                .0
                .dimension(d)
                .ok_or_else(|| PyLookupError::new_err(format!("no dimension {d:?}")))?;
            terms.extend(dim.attributes().cloned());
        }
        Ok(lexicon::validate_disjoint(&terms, spec).overlaps)
    }

    fn __repr__(&self) -> String {
        format!(
            "Lexicon({} sets, {} dimensions, {} tests)",
            self.0.stimulus_sets().len(),
            self.0.attribute_dimensions().len(),
            self.0.bias_test_specs().len()
        )
    }
}

/// Single-stimulus sentences keyed by stimulus surface.
#[pyclass(name = "SentencePool", frozen)]
struct PySentencePool(corpus::SentencePool);

#[pymethods]
impl PySentencePool {
    /// Extracts a pool from raw text lines, one document per line.
    #[staticmethod]
    #[pyo3(signature = (lines, lexicon, max_tokens = corpus::DEFAULT_MAX_TOKENS))]
    fn extract(py: Python<'_>, lines: Vec<String>, lexicon: PyRef<'_, PyLexicon>, max_tokens: usize) -> PyResult<Self> {
        let stimuli: Vec<StimulusTerm> = lexicon.0.term_index().terms().cloned().collect();
        let config = ExtractConfig {
            max_tokens,
            ..ExtractConfig::default()
        };
        let docs = lines.into_iter().enumerate().map(|(i, body)| {
            Ok(Document {
                source_id: format!("L{}", i + 1),
                body,
            })
        });
        py.detach(|| corpus::extract_pool(docs, &stimuli, &config, &WhitespaceTokenCounter))
            .map(|(pool, _)| Self(pool))
            .map_err(to_py)
    }

    #[staticmethod]
    fn load(path: &str, lexicon: PyRef<'_, PyLexicon>) -> PyResult<Self> {
        corpus::SentencePool::load(path, &lexicon.0.term_index())
            .map(Self)
            .map_err(to_py)
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.0.save(path).map_err(to_py)
    }

    /// Records per stimulus surface.
    fn counts(&self) -> Vec<(String, usize)> {
        self.0.entries().iter().map(|(k, v)| (k.clone(), v.len())).collect()
    }

    /// Sentence texts recorded for `surface`.
    fn sentences(&self, surface: &str) -> Vec<String> {
        self.0.get(surface).iter().map(|r| r.text.clone()).collect()
    }

    fn subsample_dev(&self, n: usize, seed: u64) -> Self {
        Self(corpus::subsample_dev(&self.0, n, seed))
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }
}

/// The deterministic toy encoder.
#[pyclass(name = "ToyEncoder")]
struct PyToyEncoder(embed::ToyEncoder);

#[pymethods]
impl PyToyEncoder {
    /// Keyword arguments override the defaults of the JSON config, e.g.
    /// `ToyEncoder(seed=1, layers=2, hidden_dim=16)`.
    #[new]
    #[pyo3(signature = (config_json = None, *, seed = None, layers = None, hidden_dim = None))]
    fn new(
        config_json: Option<&str>,
        seed: Option<u64>,
        layers: Option<usize>,
        hidden_dim: Option<usize>,
    ) -> PyResult<Self> {
        let mut config: ToyConfig = match config_json {
            Some(text) => serde_json::from_str(text).map_err(json_err)?,
            None => ToyConfig::default(),
        };
        if let Some(s) = seed {
            config.seed = s;
        }
        if let Some(n) = layers {
            config.layers = n;
        }
        if let Some(h) = hidden_dim {
            config.hidden_dim = h;
        }
        embed::ToyEncoder::new(config).map(Self).map_err(to_py)
    }

    #[staticmethod]
    fn load(dir: &str) -> PyResult<Self> {
        embed::ToyEncoder::load(dir).map(Self).map_err(to_py)
    }

    fn save(&self, dir: &str) -> PyResult<()> {
        self.0.save(dir).map(|_| ()).map_err(to_py)
    }

    #[getter]
    fn layer_count(&self) -> usize {
        self.0.layer_count()
    }

    #[getter]
    fn hidden_dim(&self) -> usize {
        self.0.hidden_dim()
    }

    /// `(pieces, layers)`: piece texts and one `pieces × hidden_dim` nested
    /// list per layer.
    fn encode(&self, text: &str) -> (Vec<String>, Vec<Vec<Vec<f64>>>) {
        let enc = self.0.encode(text);
        let pieces = enc.pieces.iter().map(|p| p.text.clone()).collect();
        let layers = enc
            .layers
            .iter()
            .map(|m| m.rows().into_iter().map(|r| r.to_vec()).collect())
            .collect();
        (pieces, layers)
    }

    fn __repr__(&self) -> String {
        format!("ToyEncoder(layers={}, hidden_dim={})", self.0.layer_count(), self.0.hidden_dim())
    }
}

/// One row of a measurement.
#[pyclass(name = "MeasureResult", frozen, from_py_object)]
#[derive(Clone)]
struct PyMeasureResult {
    #[pyo3(get)]
    test_name: String,
    #[pyo3(get)]
    ces: f64,
    #[pyo3(get)]
    tau2: f64,
    #[pyo3(get)]
    se: f64,
    #[pyo3(get)]
    z: f64,
    #[pyo3(get)]
    p: f64,
    #[pyo3(get)]
    n_samples: usize,
    #[pyo3(get)]
    classification: String,
    inner: pipeline::MeasureResult,
}

impl From<pipeline::MeasureResult> for PyMeasureResult {
    fn from(r: pipeline::MeasureResult) -> Self {
        Self {
            test_name: r.test_name.clone(),
            ces: r.ces,
            tau2: r.tau2,
            se: r.se,
            z: r.z,
            p: r.p,
            n_samples: r.n_samples,
            classification: r.classification.label().to_owned(),
            inner: r,
        }
    }
}

#[pymethods]
impl PyMeasureResult {
    fn __repr__(&self) -> String {
        format!(
            "MeasureResult({:?}, ces={:.4}, p={:.3e}, {})",
            self.test_name, self.ces, self.p, self.classification
        )
    }
}

/// Permutation p-values of a WEAT instance.
#[pyclass(name = "PValue", frozen, get_all)]
struct PyPValue {
    one_sided: f64,
    two_sided: f64,
    observed: f64,
    /// `"exact"` or `"monte_carlo"`.
    method: String,
    /// Partitions enumerated or permutations drawn.
    count: u64,
    /// Monte Carlo standard error; zero when exact.
    std_error: f64,
}

/// Random-effects combination.
#[pyclass(name = "MetaAnalysis", frozen, get_all)]
struct PyMetaAnalysis {
    ces: f64,
    tau2: f64,
    se: f64,
    z: f64,
    p: f64,
    p_one_sided: f64,
    q: f64,
    n_samples: usize,
    classification: String,
}

#[pyfunction]
fn association(w: Vec<f64>, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    ceat::association(&w, &a, &b).map_err(to_py)
}

#[pyfunction]
fn weat_effect_size(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    ceat::weat_effect_size(&x, &y, &a, &b).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (
    x, y, a, b,
    max_exact_partitions = ceat::DEFAULT_MAX_EXACT_PARTITIONS,
    mc_draws = ceat::DEFAULT_MC_DRAWS,
    seed = 0,
))]
#[allow(clippy::too_many_arguments)]
fn weat_pvalue(
    x: Vec<Vec<f64>>,
    y: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
    max_exact_partitions: u64,
    mc_draws: usize,
    seed: u64,
) -> PyResult<PyPValue> {
    let p = ceat::weat_pvalue(&x, &y, &a, &b, max_exact_partitions, mc_draws, seed).map_err(to_py)?;
    let (method, count, std_error) = match p.method {
        PValueMethod::Exact { partitions } => ("exact", partitions, 0.0),
        PValueMethod::MonteCarlo { draws, std_error } => ("monte_carlo", draws as u64, std_error),
    };
    Ok(PyPValue {
        one_sided: p.one_sided,
        two_sided: p.two_sided,
        observed: p.observed,
        method: method.to_owned(),
        count,
        std_error,
    })
}

/// Combines `(effect_size, variance)` pairs.
#[pyfunction]
fn combine_effects(samples: Vec<(f64, f64)>) -> PyResult<PyMetaAnalysis> {
    let r = ceat::combine_effects(&samples).map_err(to_py)?;
    Ok(PyMetaAnalysis {
        ces: r.ces,
        tau2: r.tau2,
        se: r.se,
        z: r.z,
        p: r.p,
        p_one_sided: r.p_one_sided,
        q: r.q,
        n_samples: r.n_samples,
        classification: r.classification.label().to_owned(),
    })
}

#[pyfunction]
fn classify_effect(ces: f64) -> &'static str {
    ceat::classify_effect(ces).label()
}

/// CEAT for every bias test of `lexicon`.
#[pyfunction]
#[pyo3(signature = (lexicon, pool, encoder, n_samples = ceat::DEFAULT_SAMPLES, layer = None, seed = 0))]
fn measure(
    py: Python<'_>,
    lexicon: PyRef<'_, PyLexicon>,
    pool: PyRef<'_, PySentencePool>,
    encoder: PyRef<'_, PyToyEncoder>,
    n_samples: usize,
    layer: Option<usize>,
    seed: u64,
) -> PyResult<Vec<PyMeasureResult>> {
    let config = MeasureConfig {
        n_samples,
        layer,
        seed,
        ..MeasureConfig::default()
    };
    let (lex, pool, enc) = (&lexicon.0, &pool.0, &encoder.0);
    let results = py
        .detach(|| pipeline::run_measure(lex, pool, enc, &config))
        .map_err(to_py)?;
    Ok(results.into_iter().map(PyMeasureResult::from).collect())
}

/// Before/after table as text, or CSV when `csv` is set.
#[pyfunction]
#[pyo3(signature = (before, after, csv = false))]
fn report(before: Vec<PyMeasureResult>, after: Vec<PyMeasureResult>, csv: bool) -> PyResult<String> {
    let b: Vec<_> = before.into_iter().map(|r| r.inner).collect();
    let a: Vec<_> = after.into_iter().map(|r| r.inner).collect();
    let table = pipeline::compare(&b, &a).map_err(to_py)?;
    Ok(if csv { table.render_csv() } else { table.render_text() })
}

/// Trains `encoder` in place. `config_json` mirrors the debias config file.
/// Returns `(epoch, mean_l_i, mean_l_reg, mean_l)` per epoch.
#[pyfunction]
#[pyo3(name = "debias", signature = (encoder, lexicon, pool, config_json = None, dev_pool = None))]
fn run_debias(
    py: Python<'_>,
    mut encoder: PyRefMut<'_, PyToyEncoder>,
    lexicon: PyRef<'_, PyLexicon>,
    pool: PyRef<'_, PySentencePool>,
    config_json: Option<&str>,
    dev_pool: Option<PyRef<'_, PySentencePool>>,
) -> PyResult<Vec<(usize, f64, f64, f64)>> {
    let config: DebiasConfig = match config_json {
        Some(text) => serde_json::from_str(text).map_err(json_err)?,
        None => DebiasConfig::default(),
    };
    let (lex, pool) = (&lexicon.0, &pool.0);
    let dev = dev_pool.as_ref().map(|d| &d.0);
    let enc = &mut encoder.0;
    let log = py
        .detach(|| -> Result<_, Error> {
            config.validate()?;
            let dims: Vec<AttributeDimension> = config
                .dimensions
                .iter()
                .map(|d| {
                    lex.dimension(d)
                        .cloned()
                        .ok_or_else(|| debias::DebiasError::Config(format!("lexicon has no dimension {d:?}")))
                })
                .collect::<Result<_, _>>()?;
            let directions = embed::attribute_directions(&*enc, pool, &dims)?;
            let data = TrainingData::from_pool(pool, lex, &config)?;
            let dev_data = dev.map(|d| TrainingData::from_pool(d, lex, &config)).transpose()?;
            Ok(debias::train(enc, &data, &directions, &config, dev_data.as_ref())?)
        })
        .map_err(to_py)?;
    Ok(log
        .epochs
        .iter()
        .map(|e| (e.epoch, e.mean_l_i, e.mean_l_reg, e.mean_l))
        .collect())
}

/// A synthetic problem with a planted bias: `(lexicon, pool)`.
#[pyfunction]
#[pyo3(signature = (seed = 0))]
fn planted_problem(seed: u64) -> PyResult<(PyLexicon, PySentencePool)> {
    let config = planted::PlantedConfig {
        seed,
        ..planted::PlantedConfig::default()
    };
    let problem = planted::planted_problem(&config).map_err(to_py)?;
    let pool = problem.pool().map_err(to_py)?;
    Ok((PyLexicon(problem.lexicon), PySentencePool(pool)))
}

/// The encoder and training configs tuned for [`planted_problem`], as JSON.
#[pyfunction]
fn planted_configs() -> (String, String) {
    let c = planted::ExperimentConfig::default();
    (
        serde_json::to_string(&c.encoder).expect("config serialises"),
        serde_json::to_string(&c.debias).expect("config serialises"),
    )
}

#[pymodule]
#[pyo3(name = "scm_debias")]
pub fn scm_debias_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLexicon>()?;
    m.add_class::<PySentencePool>()?;
    m.add_class::<PyToyEncoder>()?;
    m.add_class::<PyMeasureResult>()?;
    m.add_class::<PyPValue>()?;
    m.add_class::<PyMetaAnalysis>()?;
    m.add_function(wrap_pyfunction!(association, m)?)?;
    m.add_function(wrap_pyfunction!(weat_effect_size, m)?)?;
    m.add_function(wrap_pyfunction!(weat_pvalue, m)?)?;
    m.add_function(wrap_pyfunction!(combine_effects, m)?)?;
    m.add_function(wrap_pyfunction!(classify_effect, m)?)?;
    m.add_function(wrap_pyfunction!(measure, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    m.add_function(wrap_pyfunction!(run_debias, m)?)?;
    m.add_function(wrap_pyfunction!(planted_problem, m)?)?;
    m.add_function(wrap_pyfunction!(planted_configs, m)?)?;
    Ok(())
}
