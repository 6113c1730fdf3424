use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use scm_debias::corpus::{self, ExtractConfig, SentencePool, WhitespaceTokenCounter};
use scm_debias::debias::{self, DebiasConfig, TrainingData};
use scm_debias::embed::{self, EncoderBackend, ToyConfig, ToyEncoder};
use scm_debias::lexicon::{AttributeDimension, FrequencyTable, Lexicon, StimulusTerm, TermKind};
use scm_debias::pipeline::{self, MeasureConfig, ResultsFile, RunManifest};
use scm_debias::planted::{self, ExperimentConfig, PlantedConfig};
use scm_debias::{seed, ErrorCategory};

#[derive(Parser)]
#[command(name = "scm-debias", version, about = "Measure and remove stereotype-content bias in contextual encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a lexicon and optionally keep the most frequent attributes.
    BuildLexicon {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Term → corpus count JSON object.
        #[arg(long, requires = "top_k")]
        frequencies: Option<PathBuf>,
        /// Attributes kept per pole.
        #[arg(long, requires = "frequencies")]
        top_k: Option<usize>,
    },
    /// Extract single-stimulus sentences from a corpus.
    Sample {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = corpus::DEFAULT_MAX_TOKENS)]
        max_tokens: usize,
        #[arg(long, default_value_t = corpus::DEFAULT_MIN_PER_DIMENSION)]
        min_per_dimension: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Records kept per stimulus in the development pool.
        #[arg(long, default_value_t = corpus::DEFAULT_DEV_SUBSAMPLE)]
        dev_subsample: usize,
        /// Development pool path; defaults to `<out>` with a `.dev.json` suffix.
        #[arg(long)]
        dev_out: Option<PathBuf>,
    },
    /// Run CEAT for every bias test of the lexicon.
    Measure {
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        /// Encoder checkpoint directory.
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = scm_debias::ceat::DEFAULT_SAMPLES)]
        samples: usize,
        /// 1-based layer; the last layer by default.
        #[arg(long)]
        layer: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fine-tune an encoder to remove the configured dimensions from targets.
    Debias {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        lexicon: PathBuf,
        /// Encoder checkpoint directory to start from.
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Development pool for per-epoch loss monitoring.
        #[arg(long)]
        dev_pool: Option<PathBuf>,
        /// Overrides the seed in the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Compare two results files.
    Report {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write target coordinates on two attribute dimensions as CSV.
    Project {
        #[arg(long)]
        lexicon: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long)]
        encoder: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "warmth")]
        x: String,
        #[arg(long, default_value = "competence")]
        y: String,
        #[arg(long)]
        layer: Option<usize>,
    },
    /// Write a freshly initialised toy encoder checkpoint.
    InitToy {
        #[arg(long)]
        out: PathBuf,
        /// JSON toy encoder config; defaults apply to missing fields.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a synthetic corpus with a planted bias, plus matching lexicon,
    /// encoder and training config.
    Planted {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

struct Run {
    manifest: RunManifest,
}

impl Run {
    fn start(command: &str, config_hash: String) -> Self {
        let mut manifest = RunManifest::new(command, config_hash);
        manifest.started_at = now();
        Self { manifest }
    }

    fn seed(&mut self, name: &str, value: u64) {
        self.manifest.seeds.insert(name.to_owned(), value);
    }

    fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        Ok(self.manifest.add_input(path)?)
    }

    /// Writes one manifest per artifact.
    fn finish(mut self, artifacts: &[&Path]) -> anyhow::Result<()> {
        self.manifest.outputs = artifacts.iter().map(|p| p.display().to_string()).collect();
        self.manifest.finished_at = now();
        for a in artifacts {
            let target = if a.is_dir() { a.join("run") } else { a.to_path_buf() };
            self.manifest.save(RunManifest::path_for(target))?;
        }
        Ok(())
    }
}

fn load_pool(path: &Path, lexicon: &Lexicon) -> anyhow::Result<SentencePool> {
    Ok(SentencePool::load(path, &lexicon.term_index())?)
}

fn build_lexicon(
    input: &Path,
    out: &Path,
    frequencies: Option<&Path>,
    top_k: Option<usize>,
) -> anyhow::Result<()> {
    let mut run = Run::start("build-lexicon", seed::config_hash(&top_k));
    run.input(input)?;
    let mut lexicon = Lexicon::load(input)?;
    if let (Some(path), Some(k)) = (frequencies, top_k) {
        run.input(path)?;
        let table = FrequencyTable::load(path)?;
        let (selected, warnings) = lexicon.select_attributes(&table, k)?;
        for w in warnings {
            log::warn!("{w}");
        }
        lexicon = selected;
    }
    lexicon.save(out)?;
    for set in lexicon.stimulus_sets() {
        println!("{}: {} terms", set.name(), set.terms().len());
    }
    for d in lexicon.attribute_dimensions() {
        println!("{}: {} high, {} low", d.name(), d.pole_high().len(), d.pole_low().len());
    }
    println!("{} bias tests", lexicon.bias_test_specs().len());
    run.finish(&[out])
}

#[allow(clippy::too_many_arguments)]
fn sample(
    corpus_path: &Path,
    lexicon_path: &Path,
    out: &Path,
    max_tokens: usize,
    min_per_dimension: usize,
    seed_value: u64,
    dev_subsample: usize,
    dev_out: Option<PathBuf>,
) -> anyhow::Result<()> {
    let config = ExtractConfig {
        max_tokens,
        corpus_id: corpus_path.display().to_string(),
    };
    let mut run = Run::start("sample", seed::config_hash(&(&config, min_per_dimension, dev_subsample)));
    run.seed("dev-subsample", seed_value);
    run.input(corpus_path)?;
    run.input(lexicon_path)?;
    let lexicon = Lexicon::load(lexicon_path)?;
    let stimuli: Vec<StimulusTerm> = lexicon.term_index().terms().cloned().collect();
    let file = File::open(corpus_path).with_context(|| format!("opening {}", corpus_path.display()))?;
    let docs = corpus::read_documents(BufReader::new(file));
    let (pool, stats) = corpus::extract_pool(docs, &stimuli, &config, &WhitespaceTokenCounter)?;
    println!(
        "{} documents ({} unreadable), {} sentences: {} kept, {} without stimulus, {} with several, {} over budget",
        stats.documents,
        stats.unreadable,
        stats.sentences,
        stats.kept,
        stats.without_stimulus,
        stats.multiple_stimuli,
        stats.over_budget
    );
    let counts = corpus::pool_stats(&pool, &lexicon, min_per_dimension);
    for d in &counts.dimensions {
        println!(
            "{}: {} sentences, at least {} per term{}",
            d.name,
            d.total,
            d.min_per_term,
            if d.sufficient { "" } else { " (below floor)" }
        );
        if !d.sufficient {
            log::warn!("{} has {} sentences, below the floor of {}", d.name, d.total, counts.floor);
        }
    }
    pool.save(out)?;
    let dev_path = dev_out.unwrap_or_else(|| out.with_extension("dev.json"));
    corpus::subsample_dev(&pool, dev_subsample, seed_value).save(&dev_path)?;
    run.finish(&[out, &dev_path])
}

#[allow(clippy::too_many_arguments)]
fn measure(
    lexicon_path: &Path,
    pool_path: &Path,
    encoder_path: &Path,
    out: &Path,
    samples: usize,
    layer: Option<usize>,
    seed_value: u64,
) -> anyhow::Result<()> {
    let config = MeasureConfig {
        n_samples: samples,
        layer,
        seed: seed_value,
        ..MeasureConfig::default()
    };
    let mut run = Run::start("measure", seed::config_hash(&config));
    run.seed("ceat", seed_value);
    for p in [lexicon_path, pool_path, encoder_path] {
        run.input(p)?;
    }
    let lexicon = Lexicon::load(lexicon_path)?;
    let pool = load_pool(pool_path, &lexicon)?;
    let encoder = ToyEncoder::load(encoder_path)?;
    let results = pipeline::run_measure(&lexicon, &pool, &encoder, &config)?;
    for r in &results {
        println!("{}: CES {:.2} (p {:.2e}, {})", r.test_name, r.ces, r.p, r.classification.label());
    }
    let manifest = RunManifest::path_for(out)
        .file_name()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned();
    ResultsFile { manifest, results }.save(out)?;
    run.finish(&[out])
}

#[allow(clippy::too_many_arguments)]
fn run_debias(
    config_path: &Path,
    pool_path: &Path,
    lexicon_path: &Path,
    encoder_path: &Path,
    out: &Path,
    dev_pool: Option<&Path>,
    seed_override: Option<u64>,
) -> anyhow::Result<()> {
    let text = fs::read_to_string(config_path).with_context(|| format!("reading {}", config_path.display()))?;
    let mut config: DebiasConfig = serde_json::from_str(&text)
        .map_err(|e| debias::DebiasError::Config(format!("{}: {e}", config_path.display())))?;
    if let Some(s) = seed_override {
        config.seed = s;
    }
    config.validate()?;
    let mut run = Run::start("debias", config.hash());
    run.seed("training-shuffle", config.seed);
    for p in [config_path, pool_path, lexicon_path, encoder_path] {
        run.input(p)?;
    }
    let lexicon = Lexicon::load(lexicon_path)?;
    let pool = load_pool(pool_path, &lexicon)?;
    let mut encoder = ToyEncoder::load(encoder_path)?;
    let dims: Vec<AttributeDimension> = config
        .dimensions
        .iter()
        .map(|d| {
            lexicon
                .dimension(d)
                .cloned()
                .ok_or_else(|| debias::DebiasError::Config(format!("lexicon has no dimension {d:?}")))
        })
        .collect::<Result<_, _>>()?;
    let directions = embed::attribute_directions(&encoder, &pool, &dims)?;
    let data = TrainingData::from_pool(&pool, &lexicon, &config)?;
    let dev = match dev_pool {
        Some(p) => {
            run.input(p)?;
            Some(load_pool(p, &lexicon)?)
        }
        None => None,
    };
    let dev_data = dev
        .as_ref()
        .map(|d| TrainingData::from_pool(d, &lexicon, &config))
        .transpose()?;
    let log = debias::train(&mut encoder, &data, &directions, &config, dev_data.as_ref())?;
    for e in &log.epochs {
        match &e.dev {
            Some(d) => println!("epoch {}: mean L {:.6}, dev L {:.6}", e.epoch, e.mean_l, d.l),
            None => println!("epoch {}: mean L {:.6}", e.epoch, e.mean_l),
        }
    }
    debias::export_checkpoint(&encoder, out)?;
    let log_path = out.join("training_log.jsonl");
    let mut writer = BufWriter::new(File::create(&log_path)?);
    log.write_jsonl(&mut writer)?;
    writer.flush()?;
    run.finish(&[out, &log_path])
}

fn report(before: &Path, after: &Path, format: Format, out: Option<&Path>) -> anyhow::Result<()> {
    let b = ResultsFile::load(before)?;
    let a = ResultsFile::load(after)?;
    let table = pipeline::compare(&b.results, &a.results)?;
    let rendered = match format {
        Format::Text => table.render_text(),
        Format::Csv => table.render_csv(),
    };
    match out {
        Some(path) => {
            let mut run = Run::start("report", seed::config_hash(&matches!(format, Format::Csv)));
            run.input(before)?;
            run.input(after)?;
            fs::write(path, &rendered).with_context(|| format!("writing {}", path.display()))?;
            run.finish(&[path])
        }
        None => {
            print!("{rendered}");
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn project(
    lexicon_path: &Path,
    pool_path: &Path,
    encoder_path: &Path,
    out: &Path,
    x: &str,
    y: &str,
    layer: Option<usize>,
) -> anyhow::Result<()> {
    let mut run = Run::start("project", seed::config_hash(&(x, y, layer)));
    for p in [lexicon_path, pool_path, encoder_path] {
        run.input(p)?;
    }
    let lexicon = Lexicon::load(lexicon_path)?;
    let pool = load_pool(pool_path, &lexicon)?;
    let encoder = ToyEncoder::load(encoder_path)?;
    let layer0 = MeasureConfig {
        layer,
        ..MeasureConfig::default()
    }
    .layer_index(encoder.layer_count())?;
    let dims: Vec<AttributeDimension> = [x, y]
        .iter()
        .map(|d| {
            lexicon
                .dimension(d)
                .cloned()
                .ok_or_else(|| pipeline::PipelineError::InvalidArgument(format!("lexicon has no dimension {d:?}")))
        })
        .collect::<Result<_, _>>()?;
    let directions = embed::attribute_directions(&encoder, &pool, &dims)?;
    let embeddings: Vec<_> = pool
        .records_of_kind(TermKind::Target)
        .into_iter()
        .map(|r| embed::embed_stimulus(&encoder, r))
        .collect::<Result<_, _>>()?;
    let points = pipeline::emit_projection_coordinates(&embeddings, &directions, x, y, layer0)?;
    let (mx, my) = pipeline::mean_abs_coordinates(&points);
    println!("{} points, mean |{x}| {mx:.4}, mean |{y}| {my:.4}", points.len());
    fs::write(out, pipeline::projection_csv(&points, x, y)).with_context(|| format!("writing {}", out.display()))?;
    run.finish(&[out])
}

fn init_toy(out: &Path, config_path: Option<&Path>, seed_value: Option<u64>) -> anyhow::Result<()> {
    let mut config: ToyConfig = match config_path {
        Some(p) => serde_json::from_str(&fs::read_to_string(p)?)
            .map_err(|e| embed::EmbedError::InvalidConfig(format!("{}: {e}", p.display())))?,
        None => ToyConfig::default(),
    };
    if let Some(s) = seed_value {
        config.seed = s;
    }
    let mut run = Run::start("init-toy", seed::config_hash(&config));
    run.seed("init", config.seed);
    if let Some(p) = config_path {
        run.input(p)?;
    }
    let encoder = ToyEncoder::new(config)?;
    encoder.save(out)?;
    println!(
        "toy encoder: {} layers, hidden size {}",
        encoder.layer_count(),
        encoder.hidden_dim()
    );
    run.finish(&[out])
}

fn write_planted(out: &Path, seed_value: u64) -> anyhow::Result<()> {
    let defaults = ExperimentConfig::default();
    let config = ExperimentConfig {
        problem: PlantedConfig {
            seed: seed_value,
            ..defaults.problem
        },
        encoder: ToyConfig {
            seed: seed_value,
            ..defaults.encoder
        },
        debias: DebiasConfig {
            seed: seed_value,
            ..defaults.debias
        },
        measure: defaults.measure,
    };
    let mut run = Run::start("planted", seed::config_hash(&config));
    run.seed("planted", seed_value);
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let problem = planted::planted_problem(&config.problem)?;
    let corpus_path = out.join("corpus.jsonl");
    let mut w = BufWriter::new(File::create(&corpus_path)?);
    for d in &problem.documents {
        serde_json::to_writer(&mut w, &serde_json::json!({ "id": d.source_id, "body": d.body }))?;
        writeln!(w)?;
    }
    w.flush()?;
    let lexicon_path = out.join("lexicon.json");
    problem.lexicon.save(&lexicon_path)?;
    let debias_path = out.join("debias.json");
    fs::write(&debias_path, serde_json::to_string_pretty(&config.debias)? + "\n")?;
    let encoder_path = out.join("encoder");
    ToyEncoder::new(config.encoder.clone())?.save(&encoder_path)?;
    println!(
        "{} documents, {} bias tests",
        problem.documents.len(),
        problem.lexicon.bias_test_specs().len()
    );
    run.finish(&[&corpus_path, &lexicon_path, &debias_path, &encoder_path])
}

fn category(error: &anyhow::Error) -> Option<ErrorCategory> {
    use scm_debias::{ceat, corpus, debias, embed, lexicon, pipeline, Error};
    for cause in error.chain() {
        let found = if let Some(e) = cause.downcast_ref::<Error>() {
            Some(e.category())
        } else if let Some(e) = cause.downcast_ref::<lexicon::LexiconError>() {
            Some(e.category())
        } else if let Some(e) = cause.downcast_ref::<corpus::CorpusError>() {
            Some(e.category())
        } else if let Some(e) = cause.downcast_ref::<embed::EmbedError>() {
            Some(e.category())
        } else if let Some(e) = cause.downcast_ref::<ceat::CeatError>() {
            Some(e.category())
        } else if let Some(e) = cause.downcast_ref::<debias::DebiasError>() {
            Some(e.category())
        } else if let Some(e) = cause.downcast_ref::<pipeline::PipelineError>() {
            Some(e.category())
        } else if cause.is::<std::io::Error>() {
            Some(ErrorCategory::Data)
        } else if cause.is::<serde_json::Error>() {
            Some(ErrorCategory::Validation)
        } else {
            None
        };
        if found.is_some() {
            return found;
        }
    }
    None
}

fn exit_code(error: &anyhow::Error) -> u8 {
    match category(error) {
        Some(ErrorCategory::Data) => 3,
        Some(ErrorCategory::Numeric) => 4,
        Some(ErrorCategory::Validation) | None => 2,
    }
}

/// The error chain, skipping causes already quoted by their parent.
fn describe(error: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in error.chain() {
        let text = cause.to_string();
        if !out.contains(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn dispatch(command: Command) -> anyhow::Result<()> {
    match command {
        Command::BuildLexicon {
            input,
            out,
            frequencies,
            top_k,
        } => build_lexicon(&input, &out, frequencies.as_deref(), top_k),
        Command::Sample {
            corpus,
            lexicon,
            out,
            max_tokens,
            min_per_dimension,
            seed,
            dev_subsample,
            dev_out,
        } => sample(&corpus, &lexicon, &out, max_tokens, min_per_dimension, seed, dev_subsample, dev_out),
        Command::Measure {
            lexicon,
            pool,
            encoder,
            out,
            samples,
            layer,
            seed,
        } => measure(&lexicon, &pool, &encoder, &out, samples, layer, seed),
        Command::Debias {
            config,
            pool,
            lexicon,
            encoder,
            out,
            dev_pool,
            seed,
        } => run_debias(&config, &pool, &lexicon, &encoder, &out, dev_pool.as_deref(), seed),
        Command::Report {
            before,
            after,
            format,
            out,
        } => report(&before, &after, format, out.as_deref()),
        Command::Project {
            lexicon,
            pool,
            encoder,
            out,
            x,
            y,
            layer,
        } => project(&lexicon, &pool, &encoder, &out, &x, &y, layer),
        Command::InitToy { out, config, seed } => init_toy(&out, config.as_deref(), seed),
        Command::Planted { out, seed } => write_planted(&out, seed),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::from(exit_code(&e))
        }
    }
}
