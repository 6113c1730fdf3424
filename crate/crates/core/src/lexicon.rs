//! Target and attribute stimulus sets.
//!
//! A lexicon file is UTF-8 JSON with three top-level keys:
//!
//! ```json
//! {
//!   "stimulus_sets": [
//!     {"name": "EA-names", "kind": "target", "terms": [{"surface": "Emily", "group": "EA-female"}]}
//!   ],
//!   "attribute_dimensions": [
//!     {"name": "warmth",
//!      "pole_high": [{"surface": "friendly", "group": "warmth-high"}],
//!      "pole_low":  [{"surface": "cold", "group": "warmth-low"}]}
//!   ],
//!   "bias_test_specs": [
//!     {"name": "EA,AA,Warm", "targets_x": "EA-names", "targets_y": "AA-names",
//!      "attributes_a": "warmth.high", "attributes_b": "warmth.low"}
//!   ]
//! }
//! ```
//!
//! Bias tests refer to term lists by name: either a stimulus set name or
//! `<dimension>.high` / `<dimension>.low` for an attribute pole.
//!
//! Target surfaces (proper names) are kept verbatim; attribute surfaces are
//! lowercased on construction.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ErrorCategory;

/// Default maximum number of terms per attribute pole.
pub const DEFAULT_POLE_CAP: usize = 32;

#[derive(Debug, Error)]
pub enum LexiconError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid {type_name}: {message}")]
    Validation {
        type_name: &'static str,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl LexiconError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            LexiconError::Io { .. } => ErrorCategory::Data,
            _ => ErrorCategory::Validation,
        }
    }

    fn validation(type_name: &'static str, message: impl Into<String>) -> Self {
        LexiconError::Validation {
            type_name,
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for LexiconError {
    fn from(e: serde_json::Error) -> Self {
        LexiconError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TermKind {
    Target,
    Attribute,
}

/// A single stimulus word: an identity term or an attribute term.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StimulusTerm {
    surface: String,
    kind: TermKind,
    group: String,
}

impl StimulusTerm {
    pub fn new(
        surface: impl Into<String>,
        kind: TermKind,
        group: impl Into<String>,
    ) -> Result<Self, LexiconError> {
        let surface = surface.into();
        let group = group.into();
        if surface.is_empty() {
            return Err(LexiconError::validation("StimulusTerm", "empty surface"));
        }
        if surface.chars().any(char::is_whitespace) {
            return Err(LexiconError::validation(
                "StimulusTerm",
                format!("surface {surface:?} contains whitespace"),
            ));
        }
        if group.trim().is_empty() {
            return Err(LexiconError::validation(
                "StimulusTerm",
                format!("term {surface:?} has an empty group label"),
            ));
        }
        let surface = match kind {
            TermKind::Target => surface,
            TermKind::Attribute => surface.to_lowercase(),
        };
        Ok(Self {
            surface,
            kind,
            group,
        })
    }

    pub fn target(surface: impl Into<String>, group: impl Into<String>) -> Result<Self, LexiconError> {
        Self::new(surface, TermKind::Target, group)
    }

    pub fn attribute(
        surface: impl Into<String>,
        group: impl Into<String>,
    ) -> Result<Self, LexiconError> {
        Self::new(surface, TermKind::Attribute, group)
    }

    pub fn surface(&self) -> &str {
        &self.surface
    }

    pub fn kind(&self) -> TermKind {
        self.kind
    }

    pub fn group(&self) -> &str {
        &self.group
    }
}

fn check_unique(type_name: &'static str, owner: &str, terms: &[StimulusTerm]) -> Result<(), LexiconError> {
    let mut seen = HashSet::new();
    for t in terms {
        if !seen.insert(t.surface()) {
            return Err(LexiconError::validation(
                type_name,
                format!("{owner:?} lists {:?} twice", t.surface()),
            ));
        }
    }
    Ok(())
}

/// A named list of stimuli of one kind, e.g. the European American names.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StimulusSet {
    name: String,
    kind: TermKind,
    terms: Vec<StimulusTerm>,
}

impl StimulusSet {
    pub fn new(
        name: impl Into<String>,
        kind: TermKind,
        terms: Vec<StimulusTerm>,
    ) -> Result<Self, LexiconError> {
        let name = name.into();
        if name.is_empty() {
            return Err(LexiconError::validation("StimulusSet", "empty name"));
        }
        if terms.is_empty() {
            return Err(LexiconError::validation(
                "StimulusSet",
                format!("{name:?} has no terms"),
            ));
        }
        if let Some(t) = terms.iter().find(|t| t.kind() != kind) {
            return Err(LexiconError::validation(
                "StimulusSet",
                format!("{name:?} mixes kinds at {:?}", t.surface()),
            ));
        }
        check_unique("StimulusSet", &name, &terms)?;
        Ok(Self { name, kind, terms })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> TermKind {
        self.kind
    }

    pub fn terms(&self) -> &[StimulusTerm] {
        &self.terms
    }

    /// Term counts per subgroup label (e.g. `AA-female`).
    pub fn group_counts(&self) -> BTreeMap<&str, usize> {
        let mut counts = BTreeMap::new();
        for t in &self.terms {
            *counts.entry(t.group()).or_insert(0) += 1;
        }
        counts
    }
}

/// One stereotype-content axis with its two poles (e.g. warm vs cold).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttributeDimension {
    name: String,
    pole_high: Vec<StimulusTerm>,
    pole_low: Vec<StimulusTerm>,
}

impl AttributeDimension {
    pub fn new(
        name: impl Into<String>,
        pole_high: Vec<StimulusTerm>,
        pole_low: Vec<StimulusTerm>,
        pole_cap: usize,
    ) -> Result<Self, LexiconError> {
        let name = name.into();
        const T: &str = "AttributeDimension";
        if name.is_empty() || name.contains('.') {
            return Err(LexiconError::validation(
                T,
                format!("name {name:?} must be non-empty and contain no '.'"),
            ));
        }
        for (label, pole) in [("pole_high", &pole_high), ("pole_low", &pole_low)] {
            if pole.is_empty() {
                return Err(LexiconError::validation(T, format!("{name:?}: {label} is empty")));
            }
            if pole.len() > pole_cap {
                return Err(LexiconError::validation(
                    T,
                    format!("{name:?}: {label} has {} terms, cap is {pole_cap}", pole.len()),
                ));
            }
            if let Some(t) = pole.iter().find(|t| t.kind() != TermKind::Attribute) {
                return Err(LexiconError::validation(
                    T,
                    format!("{name:?}: {:?} is not an attribute term", t.surface()),
                ));
            }
            check_unique(T, &name, pole)?;
        }
        let high: HashSet<&str> = pole_high.iter().map(StimulusTerm::surface).collect();
        if let Some(t) = pole_low.iter().find(|t| high.contains(t.surface())) {
            return Err(LexiconError::validation(
                T,
                format!("{name:?}: {:?} appears in both poles", t.surface()),
            ));
        }
        Ok(Self {
            name,
            pole_high,
            pole_low,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn pole_high(&self) -> &[StimulusTerm] {
        &self.pole_high
    }

    pub fn pole_low(&self) -> &[StimulusTerm] {
        &self.pole_low
    }

    /// High pole followed by low pole.
    pub fn attributes(&self) -> impl Iterator<Item = &StimulusTerm> {
        self.pole_high.iter().chain(&self.pole_low)
    }
}

/// A resolved term list inside a bias test, remembering where it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermGroup {
    pub source: String,
    pub terms: Vec<StimulusTerm>,
}

impl TermGroup {
    pub fn new(source: impl Into<String>, terms: Vec<StimulusTerm>) -> Self {
        Self {
            source: source.into(),
            terms,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(StimulusTerm::surface)
    }
}

/// A CEAT configuration: two target sets tested against two attribute sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BiasTestSpec {
    name: String,
    targets_x: TermGroup,
    targets_y: TermGroup,
    attributes_a: TermGroup,
    attributes_b: TermGroup,
}

impl BiasTestSpec {
    /// Builds a test, rejecting empty or overlapping term lists.
    ///
    /// `|X| != |Y|` is allowed; it is logged as a warning.
    pub fn new(
        name: impl Into<String>,
        targets_x: TermGroup,
        targets_y: TermGroup,
        attributes_a: TermGroup,
        attributes_b: TermGroup,
    ) -> Result<Self, LexiconError> {
        let name = name.into();
        const T: &str = "BiasTestSpec";
        let groups = [
            ("targets_x", &targets_x),
            ("targets_y", &targets_y),
            ("attributes_a", &attributes_a),
            ("attributes_b", &attributes_b),
        ];
        for (label, g) in groups {
            if g.is_empty() {
                return Err(LexiconError::validation(T, format!("{name:?}: {label} is empty")));
            }
        }
        for i in 0..groups.len() {
            for j in (i + 1)..groups.len() {
                let left: HashSet<&str> = groups[i].1.surfaces().collect();
                let mut shared: Vec<&str> =
                    groups[j].1.surfaces().filter(|s| left.contains(s)).collect();
                if !shared.is_empty() {
                    shared.sort_unstable();
                    return Err(LexiconError::validation(
                        T,
                        format!(
                            "{name:?}: {} and {} share {:?}",
                            groups[i].0, groups[j].0, shared
                        ),
                    ));
                }
            }
        }
        if targets_x.len() != targets_y.len() {
            log::warn!(
                "bias test {name:?}: unequal target set sizes ({} vs {})",
                targets_x.len(),
                targets_y.len()
            );
        }
        Ok(Self {
            name,
            targets_x,
            targets_y,
            attributes_a,
            attributes_b,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn targets_x(&self) -> &TermGroup {
        &self.targets_x
    }

    pub fn targets_y(&self) -> &TermGroup {
        &self.targets_y
    }

    pub fn attributes_a(&self) -> &TermGroup {
        &self.attributes_a
    }

    pub fn attributes_b(&self) -> &TermGroup {
        &self.attributes_b
    }

    pub fn has_unequal_targets(&self) -> bool {
        self.targets_x.len() != self.targets_y.len()
    }

    /// All four term lists in X, Y, A, B order.
    pub fn groups(&self) -> [&TermGroup; 4] {
        [
            &self.targets_x,
            &self.targets_y,
            &self.attributes_a,
            &self.attributes_b,
        ]
    }

    pub fn terms(&self) -> impl Iterator<Item = &StimulusTerm> {
        self.groups().into_iter().flat_map(|g| g.terms.iter())
    }
}

/// Surfaces present both in the fine-tuning stimuli and in an evaluation test.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OverlapReport {
    pub test_name: String,
    pub overlaps: Vec<String>,
}

impl OverlapReport {
    pub fn is_valid(&self) -> bool {
        self.overlaps.is_empty()
    }
}

/// Lists every fine-tuning surface that also appears anywhere in `evaluation`.
///
/// Evaluating bias on the very words used for debiasing would only show that
/// those words moved, so callers normally treat a non-empty report as fatal.
pub fn validate_disjoint<'a>(
    debias_terms: impl IntoIterator<Item = &'a StimulusTerm>,
    evaluation: &BiasTestSpec,
) -> OverlapReport {
    let evaluated: HashSet<&str> = evaluation.terms().map(StimulusTerm::surface).collect();
    let overlaps: BTreeSet<String> = debias_terms
        .into_iter()
        .map(StimulusTerm::surface)
        .filter(|s| evaluated.contains(s))
        .map(str::to_owned)
        .collect();
    OverlapReport {
        test_name: evaluation.name().to_owned(),
        overlaps: overlaps.into_iter().collect(),
    }
}

/// Term → corpus count map, loaded from a JSON object.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FrequencyTable(pub BTreeMap<String, u64>);

impl FrequencyTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn get(&self, term: &str) -> Option<u64> {
        self.0.get(term).copied()
    }
}

impl FromIterator<(String, u64)> for FrequencyTable {
    fn from_iter<I: IntoIterator<Item = (String, u64)>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopFrequent {
    pub terms: Vec<String>,
    /// Set when fewer than `k` candidates were available.
    pub under_supplied: bool,
}

/// Picks the `k` most frequent candidates, breaking count ties by ascending
/// lexicographic order.
pub fn select_top_frequent(
    candidates: &[String],
    frequencies: &FrequencyTable,
    k: i64,
) -> Result<TopFrequent, LexiconError> {
    if k < 0 {
        return Err(LexiconError::InvalidArgument(format!("k must be >= 0, got {k}")));
    }
    let k = k as usize;
    let mut scored = Vec::with_capacity(candidates.len());
    let mut seen = HashSet::new();
    for c in candidates {
        if !seen.insert(c.as_str()) {
            continue;
        }
        let count = frequencies.get(c).ok_or_else(|| {
            LexiconError::InvalidArgument(format!("no frequency recorded for {c:?}"))
        })?;
        scored.push((count, c.as_str()));
    }
    scored.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    let under_supplied = scored.len() < k;
    if under_supplied {
        log::warn!("only {} candidates available, {k} requested", scored.len());
    }
    Ok(TopFrequent {
        terms: scored.into_iter().take(k).map(|(_, t)| t.to_owned()).collect(),
        under_supplied,
    })
}

// ---------------------------------------------------------------------------
// File form
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TermFile {
    surface: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StimulusSetFile {
    name: String,
    kind: TermKind,
    terms: Vec<TermFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DimensionFile {
    name: String,
    pole_high: Vec<TermFile>,
    pole_low: Vec<TermFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct BiasTestFile {
    name: String,
    targets_x: String,
    targets_y: String,
    attributes_a: String,
    attributes_b: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LexiconFile {
    stimulus_sets: Vec<StimulusSetFile>,
    attribute_dimensions: Vec<DimensionFile>,
    #[serde(default)]
    bias_test_specs: Vec<BiasTestFile>,
}

fn terms_from_file(
    files: Vec<TermFile>,
    kind: TermKind,
    default_group: &str,
) -> Result<Vec<StimulusTerm>, LexiconError> {
    files
        .into_iter()
        .map(|t| StimulusTerm::new(t.surface, kind, t.group.unwrap_or_else(|| default_group.to_owned())))
        .collect()
}

fn terms_to_file(terms: &[StimulusTerm]) -> Vec<TermFile> {
    terms
        .iter()
        .map(|t| TermFile {
            surface: t.surface().to_owned(),
            group: Some(t.group().to_owned()),
        })
        .collect()
}

/// Everything a bias measurement or debiasing run needs to know about words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    stimulus_sets: Vec<StimulusSet>,
    attribute_dimensions: Vec<AttributeDimension>,
    bias_test_specs: Vec<BiasTestSpec>,
}

impl Lexicon {
    /// Assembles a lexicon; names must be unique and every test's term groups
    /// must be resolvable from the sets and dimensions given.
    pub fn new(
        stimulus_sets: Vec<StimulusSet>,
        attribute_dimensions: Vec<AttributeDimension>,
        bias_test_specs: Vec<BiasTestSpec>,
    ) -> Result<Self, LexiconError> {
        let lex = Self {
            stimulus_sets,
            attribute_dimensions,
            bias_test_specs,
        };
        let mut names = HashSet::new();
        for s in &lex.stimulus_sets {
            if !names.insert(s.name().to_owned()) {
                return Err(LexiconError::validation("Lexicon", format!("duplicate set name {:?}", s.name())));
            }
        }
        for d in &lex.attribute_dimensions {
            for pole in ["high", "low"] {
                if !names.insert(format!("{}.{pole}", d.name())) {
                    return Err(LexiconError::validation(
                        "Lexicon",
                        format!("duplicate dimension name {:?}", d.name()),
                    ));
                }
            }
        }
        let mut test_names = HashSet::new();
        for t in &lex.bias_test_specs {
            if !test_names.insert(t.name()) {
                return Err(LexiconError::validation("Lexicon", format!("duplicate test name {:?}", t.name())));
            }
            for g in t.groups() {
                match lex.resolve(&g.source) {
                    Some(terms) if terms == g.terms => {}
                    _ => {
                        return Err(LexiconError::validation(
                            "BiasTestSpec",
                            format!("{:?}: term list {:?} does not resolve in this lexicon", t.name(), g.source),
                        ))
                    }
                }
            }
        }
        Ok(lex)
    }

    pub fn from_json_str(text: &str) -> Result<Self, LexiconError> {
        Self::from_json_str_with_cap(text, DEFAULT_POLE_CAP)
    }

    pub fn from_json_str_with_cap(text: &str, pole_cap: usize) -> Result<Self, LexiconError> {
        let file: LexiconFile = serde_json::from_str(text)?;
        let stimulus_sets = file
            .stimulus_sets
            .into_iter()
            .map(|s| {
                let terms = terms_from_file(s.terms, s.kind, &s.name)?;
                StimulusSet::new(s.name, s.kind, terms)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let attribute_dimensions = file
            .attribute_dimensions
            .into_iter()
            .map(|d| {
                let high = terms_from_file(d.pole_high, TermKind::Attribute, &format!("{}-high", d.name))?;
                let low = terms_from_file(d.pole_low, TermKind::Attribute, &format!("{}-low", d.name))?;
                AttributeDimension::new(d.name, high, low, pole_cap)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let partial = Self {
            stimulus_sets,
            attribute_dimensions,
            bias_test_specs: Vec::new(),
        };
        let mut specs = Vec::with_capacity(file.bias_test_specs.len());
        for t in file.bias_test_specs {
            let group = |source: &str| -> Result<TermGroup, LexiconError> {
                partial
                    .resolve(source)
                    .map(|terms| TermGroup::new(source, terms))
                    .ok_or_else(|| {
                        LexiconError::validation(
                            "BiasTestSpec",
                            format!("{:?}: unknown term list {source:?}", t.name),
                        )
                    })
            };
            specs.push(BiasTestSpec::new(
                t.name.clone(),
                group(&t.targets_x)?,
                group(&t.targets_y)?,
                group(&t.attributes_a)?,
                group(&t.attributes_b)?,
            )?);
        }
        Self::new(partial.stimulus_sets, partial.attribute_dimensions, specs)
    }

    /// Canonical pretty-printed JSON form.
    pub fn to_json_string(&self) -> String {
        let file = LexiconFile {
            stimulus_sets: self
                .stimulus_sets
                .iter()
                .map(|s| StimulusSetFile {
                    name: s.name().to_owned(),
                    kind: s.kind(),
                    terms: terms_to_file(s.terms()),
                })
                .collect(),
            attribute_dimensions: self
                .attribute_dimensions
                .iter()
                .map(|d| DimensionFile {
                    name: d.name().to_owned(),
                    pole_high: terms_to_file(d.pole_high()),
                    pole_low: terms_to_file(d.pole_low()),
                })
                .collect(),
            bias_test_specs: self
                .bias_test_specs
                .iter()
                .map(|t| BiasTestFile {
                    name: t.name().to_owned(),
                    targets_x: t.targets_x().source.clone(),
                    targets_y: t.targets_y().source.clone(),
                    attributes_a: t.attributes_a().source.clone(),
                    attributes_b: t.attributes_b().source.clone(),
                })
                .collect(),
        };
        let mut out = serde_json::to_string_pretty(&file).expect("lexicon serialises");
        out.push('\n');
        out
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, LexiconError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), LexiconError> {
        let path = path.as_ref();
        fs::write(path, self.to_json_string()).map_err(|source| LexiconError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// Looks up a term list by set name or `<dimension>.high|low`.
    pub fn resolve(&self, source: &str) -> Option<Vec<StimulusTerm>> {
        if let Some(s) = self.stimulus_set(source) {
            return Some(s.terms().to_vec());
        }
        let (dim, pole) = source.rsplit_once('.')?;
        let d = self.dimension(dim)?;
        match pole {
            "high" => Some(d.pole_high().to_vec()),
            "low" => Some(d.pole_low().to_vec()),
            _ => None,
        }
    }

    pub fn stimulus_sets(&self) -> &[StimulusSet] {
        &self.stimulus_sets
    }

    pub fn attribute_dimensions(&self) -> &[AttributeDimension] {
        &self.attribute_dimensions
    }

    pub fn bias_test_specs(&self) -> &[BiasTestSpec] {
        &self.bias_test_specs
    }

    pub fn stimulus_set(&self, name: &str) -> Option<&StimulusSet> {
        self.stimulus_sets.iter().find(|s| s.name() == name)
    }

    pub fn dimension(&self, name: &str) -> Option<&AttributeDimension> {
        self.attribute_dimensions.iter().find(|d| d.name() == name)
    }

    pub fn test(&self, name: &str) -> Option<&BiasTestSpec> {
        self.bias_test_specs.iter().find(|t| t.name() == name)
    }

    /// Every distinct stimulus, keyed by surface. The first definition of a
    /// surface wins.
    pub fn term_index(&self) -> TermIndex {
        let mut index = TermIndex::default();
        let all = self
            .stimulus_sets
            .iter()
            .flat_map(|s| s.terms().iter())
            .chain(self.attribute_dimensions.iter().flat_map(|d| d.attributes()));
        for t in all {
            index.insert(t.clone());
        }
        index
    }

    /// Replaces each attribute pole with its `k` most frequent members.
    ///
    /// Bias tests referring to a trimmed pole are re-resolved.
    pub fn select_attributes(
        &self,
        frequencies: &FrequencyTable,
        k: usize,
    ) -> Result<(Lexicon, Vec<String>), LexiconError> {
        let mut warnings = Vec::new();
        let mut dims = Vec::new();
        for d in &self.attribute_dimensions {
            let mut poles = Vec::new();
            for (label, pole) in [("high", d.pole_high()), ("low", d.pole_low())] {
                let candidates: Vec<String> = pole.iter().map(|t| t.surface().to_owned()).collect();
                let top = select_top_frequent(&candidates, frequencies, k as i64)?;
                if top.under_supplied {
                    warnings.push(format!(
                        "{}.{label}: only {} candidates for k = {k}",
                        d.name(),
                        top.terms.len()
                    ));
                }
                let keep: Vec<StimulusTerm> = top
                    .terms
                    .iter()
                    .filter_map(|s| pole.iter().find(|t| t.surface() == s).cloned())
                    .collect();
                poles.push(keep);
            }
            let low = poles.pop().expect("two poles");
            let high = poles.pop().expect("two poles");
            dims.push(AttributeDimension::new(d.name(), high, low, k.max(1))?);
        }
        let partial = Lexicon {
            stimulus_sets: self.stimulus_sets.clone(),
            attribute_dimensions: dims,
            bias_test_specs: Vec::new(),
        };
        let mut specs = Vec::new();
        for t in &self.bias_test_specs {
            let regroup = |g: &TermGroup| {
                TermGroup::new(g.source.clone(), partial.resolve(&g.source).unwrap_or_default())
            };
            specs.push(BiasTestSpec::new(
                t.name(),
                regroup(t.targets_x()),
                regroup(t.targets_y()),
                regroup(t.attributes_a()),
                regroup(t.attributes_b()),
            )?);
        }
        Ok((
            Lexicon::new(partial.stimulus_sets, partial.attribute_dimensions, specs)?,
            warnings,
        ))
    }
}

/// Surface → stimulus lookup used to re-key pools loaded from disk.
#[derive(Debug, Clone, Default)]
pub struct TermIndex {
    terms: BTreeMap<String, StimulusTerm>,
}

impl TermIndex {
    pub fn insert(&mut self, term: StimulusTerm) {
        self.terms.entry(term.surface().to_owned()).or_insert(term);
    }

    pub fn get(&self, surface: &str) -> Option<&StimulusTerm> {
        self.terms.get(surface)
    }

    pub fn terms(&self) -> impl Iterator<Item = &StimulusTerm> {
        self.terms.values()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}

impl FromIterator<StimulusTerm> for TermIndex {
    fn from_iter<I: IntoIterator<Item = StimulusTerm>>(iter: I) -> Self {
        let mut index = TermIndex::default();
        for t in iter {
            index.insert(t);
        }
        index
    }
}
