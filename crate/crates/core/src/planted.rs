//! Synthetic planted-bias problems.
//!
//! Two groups of invented names are placed in sentences whose neighbouring
//! cue words also surround the attribute terms of one pole: group X shares
//! cues with the warm and competent poles, group Y with the cold and
//! incompetent poles. An encoder that mixes context into each piece then
//! associates X with the high poles, which a CEAT measurement picks up.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::ceat::DEFAULT_SAMPLES;
use crate::corpus::{self, Document, DEFAULT_DEV_SUBSAMPLE, ExtractConfig, SentencePool, WhitespaceTokenCounter};
use crate::debias::{self, DebiasConfig, Optimizer, Schedule, TrainingData, TrainingLog};
use crate::embed::{self, EncoderBackend, ToyConfig, ToyEncoder};
use crate::lexicon::{AttributeDimension, BiasTestSpec, Lexicon, StimulusSet, StimulusTerm, TermGroup, TermKind};
use crate::pipeline::{self, MeasureConfig, MeasureResult};
use crate::seed;
use crate::Error;

pub const GROUP_X: &str = "group-x";
pub const GROUP_Y: &str = "group-y";

const WARM: [&str; 4] = ["warm", "friendly", "kind", "sincere"];
const COLD: [&str; 4] = ["cold", "hostile", "cruel", "rude"];
const COMPETENT: [&str; 4] = ["capable", "skilled", "clever", "efficient"];
const INCOMPETENT: [&str; 4] = ["inept", "lazy", "foolish", "clumsy"];

const WARM_CUES: [&str; 5] = ["hug", "smile", "gift", "cheer", "sunny"];
const COLD_CUES: [&str; 5] = ["storm", "shout", "fight", "sneer", "frost"];
const COMPETENT_CUES: [&str; 5] = ["award", "degree", "solved", "expert", "patent"];
const INCOMPETENT_CUES: [&str; 5] = ["failed", "mess", "dropped", "broke", "late"];

const NEUTRAL: [&str; 24] = [
    "the", "a", "and", "then", "today", "we", "they", "saw", "met", "near", "city", "street", "after", "before",
    "morning", "evening", "with", "about", "again", "there", "room", "train", "park", "week",
];

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub seed: u64,
    pub names_per_group: usize,
    pub sentences_per_term: usize,
    /// Probability that a target sentence carries its group's cue words
    /// rather than neutral filler.
    pub bias: f64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            names_per_group: 12,
            sentences_per_term: 40,
            bias: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedProblem {
    pub lexicon: Lexicon,
    pub documents: Vec<Document>,
}

fn invent_names(rng: &mut impl Rng, n: usize, taken: &mut BTreeSet<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=3);
        let mut name = String::new();
        for _ in 0..syllables {
            name.push_str(ONSETS.choose(rng).expect("non-empty"));
            name.push_str(VOWELS.choose(rng).expect("non-empty"));
        }
        let mut chars = name.chars();
        let first = chars.next().expect("non-empty").to_ascii_uppercase();
        let name: String = std::iter::once(first).chain(chars).collect();
        if taken.insert(name.clone()) {
            out.push(name);
        }
    }
    out
}

fn target_set(name: &str, surfaces: &[String]) -> Result<StimulusSet, Error> {
    let terms = surfaces
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let sub = if i % 2 == 0 { "female" } else { "male" };
            StimulusTerm::target(s.clone(), format!("{name}-{sub}"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(StimulusSet::new(name, TermKind::Target, terms)?)
}

fn pole(words: &[&str], group: &str) -> Result<Vec<StimulusTerm>, Error> {
    Ok(words
        .iter()
        .map(|w| StimulusTerm::attribute(*w, group))
        .collect::<Result<Vec<_>, _>>()?)
}

/// One sentence: neutral filler around `centre`, whose two neighbours on
/// each side are drawn from `cues` (in order) or from the filler list.
fn sentence(rng: &mut impl Rng, centre: &str, cues: &[&[&str]]) -> String {
    let mut words: Vec<String> = Vec::new();
    for _ in 0..rng.random_range(1..=3) {
        words.push((*NEUTRAL.choose(rng).expect("non-empty")).to_owned());
    }
    let pick = |rng: &mut _, i: usize| -> String {
        match cues.get(i) {
            Some(list) => (*list.choose(rng).expect("non-empty")).to_owned(),
            None => (*NEUTRAL.choose(rng).expect("non-empty")).to_owned(),
        }
    };
    words.push(pick(rng, 0));
    words.push(pick(rng, 1));
    words.push(centre.to_owned());
    words.push(pick(rng, 2));
    words.push(pick(rng, 3));
    for _ in 0..rng.random_range(1..=3) {
        words.push((*NEUTRAL.choose(rng).expect("non-empty")).to_owned());
    }
    let mut text = words.join(" ");
    text.push('.');
    text
}

/// Builds the lexicon and a one-sentence-per-document corpus.
pub fn planted_problem(config: &PlantedConfig) -> Result<PlantedProblem, Error> {
    let mut rng = seed::rng(config.seed, "planted/names");
    let mut taken = BTreeSet::new();
    let xs = invent_names(&mut rng, config.names_per_group, &mut taken);
    let ys = invent_names(&mut rng, config.names_per_group, &mut taken);
    let sets = vec![target_set(GROUP_X, &xs)?, target_set(GROUP_Y, &ys)?];
    let warmth = AttributeDimension::new("warmth", pole(&WARM, "warmth-high")?, pole(&COLD, "warmth-low")?, 32)?;
    let competence = AttributeDimension::new(
        "competence",
        pole(&COMPETENT, "competence-high")?,
        pole(&INCOMPETENT, "competence-low")?,
        32,
    )?;
    let group = |set: &StimulusSet| TermGroup::new(set.name(), set.terms().to_vec());
    let specs = [(&warmth, "X,Y,warmth"), (&competence, "X,Y,competence")]
        .into_iter()
        .map(|(d, name)| {
            BiasTestSpec::new(
                name,
                group(&sets[0]),
                group(&sets[1]),
                TermGroup::new(format!("{}.high", d.name()), d.pole_high().to_vec()),
                TermGroup::new(format!("{}.low", d.name()), d.pole_low().to_vec()),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let lexicon = Lexicon::new(sets, vec![warmth, competence], specs)?;

    let mut rng = seed::rng(config.seed, "planted/sentences");
    let mut lines = Vec::new();
    let n = config.sentences_per_term;
    for (words, cues) in [
        (&WARM, &WARM_CUES),
        (&COLD, &COLD_CUES),
        (&COMPETENT, &COMPETENT_CUES),
        (&INCOMPETENT, &INCOMPETENT_CUES),
    ] {
        for w in words {
            for _ in 0..n {
                let cues: &[&str] = cues;
                lines.push(sentence(&mut rng, w, &[cues; 4]));
            }
        }
    }
    for (names, warm_cues, comp_cues) in [(&xs, &WARM_CUES, &COMPETENT_CUES), (&ys, &COLD_CUES, &INCOMPETENT_CUES)] {
        for name in names {
            for _ in 0..n {
                let cues: Vec<&[&str]> = if rng.random_bool(config.bias) {
                    let mut slots: Vec<&[&str]> = vec![warm_cues, comp_cues, warm_cues, comp_cues];
                    slots.shuffle(&mut rng);
                    slots
                } else {
                    Vec::new()
                };
                lines.push(sentence(&mut rng, name, &cues));
            }
        }
    }
    let documents = lines
        .into_iter()
        .enumerate()
        .map(|(i, body)| Document {
            source_id: format!("P{}", i + 1),
            body,
        })
        .collect();
    Ok(PlantedProblem { lexicon, documents })
}

impl PlantedProblem {
    pub fn pool(&self) -> Result<SentencePool, Error> {
        let stimuli: Vec<StimulusTerm> = self.lexicon.term_index().terms().cloned().collect();
        let config = ExtractConfig {
            corpus_id: "planted".into(),
            ..ExtractConfig::default()
        };
        let (pool, _) = corpus::extract_pool(
            self.documents.iter().cloned().map(Ok),
            &stimuli,
            &config,
            &WhitespaceTokenCounter,
        )?;
        Ok(pool)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: PlantedConfig,
    pub encoder: ToyConfig,
    pub debias: DebiasConfig,
    pub measure: MeasureConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            problem: PlantedConfig::default(),
            encoder: ToyConfig {
                hidden_dim: 64,
                layers: 2,
                context_window: 2,
                self_weight: 0.4,
                ..ToyConfig::default()
            },
            debias: DebiasConfig {
                learning_rate: 3e-3,
                epochs: 20,
                optimizer: Optimizer::Adam {
                    beta1: 0.9,
                    beta2: 0.999,
                    epsilon: 1e-8,
                },
                schedule: Schedule::Linear,
                ..DebiasConfig::default()
            },
            measure: MeasureConfig {
                n_samples: DEFAULT_SAMPLES,
                ..MeasureConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub before: Vec<MeasureResult>,
    pub after: Vec<MeasureResult>,
    /// Mean per-occurrence drift `sqrt(Σ_i ‖E_i^post − E_i^pre‖²)`.
    pub target_drift: f64,
    pub attribute_drift: f64,
    pub log: TrainingLog,
}

fn mean_drift(before: &ToyEncoder, after: &ToyEncoder, pool: &SentencePool, kind: TermKind) -> Result<f64, Error> {
    let records = pool.records_of_kind(kind);
    let mut total = 0.0;
    for r in &records {
        let a = embed::embed_stimulus(before, r)?;
        let b = embed::embed_stimulus(after, r)?;
        let sq: f64 = a
            .per_layer
            .iter()
            .zip(&b.per_layer)
            .flat_map(|(u, v)| u.iter().zip(v).map(|(x, y)| (x - y).powi(2)))
            .sum();
        total += sq.sqrt();
    }
    Ok(total / records.len().max(1) as f64)
}

/// Measures, debiases and re-measures a planted problem on the toy encoder.
pub fn run_experiment(config: &ExperimentConfig) -> Result<(ExperimentOutcome, ToyEncoder), Error> {
    let problem = planted_problem(&config.problem)?;
    let pool = problem.pool()?;
    let mut encoder = ToyEncoder::new(config.encoder.clone())?;
    let before = pipeline::run_measure(&problem.lexicon, &pool, &encoder, &config.measure)?;
    let dims: Vec<AttributeDimension> = config
        .debias
        .dimensions
        .iter()
        .filter_map(|d| problem.lexicon.dimension(d).cloned())
        .collect();
    let directions = embed::attribute_directions(&encoder, &pool, &dims)?;
    let data = TrainingData::from_pool(&pool, &problem.lexicon, &config.debias)?;
    let dev_pool = corpus::subsample_dev(&pool, DEFAULT_DEV_SUBSAMPLE, config.debias.seed);
    let dev = TrainingData::from_pool(&dev_pool, &problem.lexicon, &config.debias)?;
    let original = encoder.clone();
    let log = debias::train(&mut encoder, &data, &directions, &config.debias, Some(&dev))?;
    let after = pipeline::run_measure(&problem.lexicon, &pool, &encoder, &config.measure)?;
    let outcome = ExperimentOutcome {
        before,
        after,
        target_drift: mean_drift(&original, &encoder, &pool, TermKind::Target)?,
        attribute_drift: mean_drift(&original, &encoder, &pool, TermKind::Attribute)?,
        log,
    };
    debug_assert_eq!(encoder.layer_count(), original.layer_count());
    Ok((outcome, encoder))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn problem_is_deterministic_and_well_formed() {
        let cfg = PlantedConfig {
            names_per_group: 6,
            sentences_per_term: 5,
            ..PlantedConfig::default()
        };
        let a = planted_problem(&cfg).unwrap();
        let b = planted_problem(&cfg).unwrap();
        assert_eq!(a.lexicon, b.lexicon);
        assert_eq!(a.documents, b.documents);
        assert_eq!(a.lexicon.stimulus_set(GROUP_X).unwrap().terms().len(), 6);
        assert_eq!(a.lexicon.bias_test_specs().len(), 2);
        let pool = a.pool().unwrap();
        for t in a.lexicon.term_index().terms() {
            assert_eq!(pool.get(t.surface()).len(), 5, "{}", t.surface());
        }
    }
}
