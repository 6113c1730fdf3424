use scm_debias::corpus::SentencePool;
use scm_debias::embed::{self, EncoderBackend, StimulusEmbedding, ToyEncoder};
use scm_debias::lexicon::{AttributeDimension, Lexicon, TermKind};
use scm_debias::pipeline::{self, ResultsFile, RunManifest};
use scm_debias::planted::{self, ExperimentConfig, PlantedProblem};

fn target_embeddings(encoder: &ToyEncoder, pool: &SentencePool) -> Vec<StimulusEmbedding> {
    pool.records_of_kind(TermKind::Target)
        .into_iter()
        .map(|r| embed::embed_stimulus(encoder, r).unwrap())
        .collect()
}

fn directions(encoder: &ToyEncoder, lexicon: &Lexicon, pool: &SentencePool) -> embed::AttributeDirections {
    let dims: Vec<AttributeDimension> = lexicon.attribute_dimensions().to_vec();
    embed::attribute_directions(encoder, pool, &dims).unwrap()
}

#[test]
fn default_experiment_postconditions() {
    let config = ExperimentConfig::default();
    let (outcome, trained) = planted::run_experiment(&config).unwrap();
    let PlantedProblem { lexicon, .. } = planted::planted_problem(&config.problem).unwrap();
    let pool = planted::planted_problem(&config.problem).unwrap().pool().unwrap();

    // Epoch-mean training objective.
    let means: Vec<f64> = outcome.log.epochs.iter().map(|e| e.mean_l).collect();
    let dev: Vec<f64> = outcome.log.epochs.iter().map(|e| e.dev.as_ref().unwrap().l).collect();
    println!("epoch mean L: {means:?}");
    println!("dev L: {dev:?}");
    assert!(means.last().unwrap() < &means[0]);
    assert!(dev.last().unwrap() < &dev[0]);

    // Projection onto the two dimensions shrinks towards the origin.
    let original = ToyEncoder::new(config.encoder.clone()).unwrap();
    let layer = original.layer_count() - 1;
    let project = |enc: &ToyEncoder| {
        let points = pipeline::emit_projection_coordinates(
            &target_embeddings(enc, &pool),
            &directions(enc, &lexicon, &pool),
            "warmth",
            "competence",
            layer,
        )
        .unwrap();
        pipeline::mean_abs_coordinates(&points)
    };
    let (bx, by) = project(&original);
    let (ax, ay) = project(&trained);
    println!("mean |x|, |y| before ({bx:.4}, {by:.4}) after ({ax:.4}, {ay:.4})");
    assert!(ax < bx && ay < by);

    // An exported checkpoint reproduces the post-debias measurements.
    let dir = tempfile::tempdir().unwrap();
    let manifest = scm_debias::debias::export_checkpoint(&trained, dir.path()).unwrap();
    assert_eq!(manifest.n, trained.layer_count());
    let reloaded = ToyEncoder::load(dir.path()).unwrap();
    let again = pipeline::run_measure(&lexicon, &pool, &reloaded, &config.measure).unwrap();
    assert_eq!(again, outcome.after);
}

#[test]
fn measurement_output_is_byte_identical_across_runs() {
    let mut config = ExperimentConfig::default();
    config.measure.n_samples = 100;
    let problem = planted::planted_problem(&config.problem).unwrap();
    let pool = problem.pool().unwrap();
    let encoder = ToyEncoder::new(config.encoder.clone()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut bytes: Vec<Vec<u8>> = Vec::new();
    for i in 0..2 {
        let results = pipeline::run_measure(&problem.lexicon, &pool, &encoder, &config.measure).unwrap();
        let path = dir.path().join(i.to_string()).join("results.json");
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        let manifest = RunManifest::path_for("results.json").display().to_string();
        ResultsFile { manifest, results }.save(&path).unwrap();
        bytes.push(std::fs::read(&path).unwrap());
    }
    assert_eq!(bytes[0], bytes[1]);
}
