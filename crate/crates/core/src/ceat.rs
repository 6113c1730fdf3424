//! Contextualised embedding association test.
//!
//! A WEAT effect size compares how strongly two target sets `X`, `Y` associate
//! with two attribute sets `A`, `B` by cosine similarity:
//!
//! ```text
//! s(w, A, B) = mean_{a in A} cos(w, a) - mean_{b in B} cos(w, b)
//! d          = (mean_{x in X} s(x) - mean_{y in Y} s(y)) / stdev_{w in X ∪ Y} s(w)
//! ```
//!
//! with the sample standard deviation (`n - 1` denominator). CEAT draws one
//! contextual embedding per stimulus many times, computes `d` for every draw,
//! and pools the draws with a DerSimonian-Laird random-effects model.

use std::collections::BTreeSet;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use libm::erfc;
use thiserror::Error;

use crate::embed::LayerPools;
use crate::lexicon::{BiasTestSpec, TermGroup};
use crate::seed;
use crate::ErrorCategory;

/// Variances at or below zero are raised to this floor before weighting.
pub const VARIANCE_FLOOR: f64 = 1e-12;
pub const DEFAULT_SAMPLES: usize = 1000;
pub const DEFAULT_MAX_EXACT_PARTITIONS: u64 = 100_000;
pub const DEFAULT_MC_DRAWS: usize = 100_000;
/// Significance level for the `*` marker.
pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

const MC_CHUNK: usize = 4096;

#[derive(Debug, Error)]
pub enum CeatError {
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("degenerate distribution: association scores have zero spread")]
    DegenerateDistribution,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("no embeddings for stimuli {0:?}")]
    MissingData(Vec<String>),
    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl CeatError {
    pub fn category(&self) -> ErrorCategory {
        match self {
            CeatError::MissingData(_) => ErrorCategory::Data,
            CeatError::InvalidArgument(_) | CeatError::DimensionMismatch { .. } => ErrorCategory::Validation,
            _ => ErrorCategory::Numeric,
        }
    }
}

fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

fn unit<V: AsRef<[f64]>>(v: V, dim: usize) -> Result<Vec<f64>, CeatError> {
    let v = v.as_ref();
    if v.len() != dim {
        return Err(CeatError::DimensionMismatch {
            expected: dim,
            found: v.len(),
        });
    }
    let norm = dot(v, v).sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return Err(CeatError::DegenerateInput("zero-norm or non-finite vector".into()));
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

fn units<V: AsRef<[f64]>>(vs: &[V], dim: usize) -> Result<Vec<Vec<f64>>, CeatError> {
    vs.iter().map(|v| unit(v, dim)).collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Association of unit `w` with unit sets `a` and `b`.
fn association_unit(w: &[f64], a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let ma = a.iter().map(|x| dot(w, x)).sum::<f64>() / a.len() as f64;
    let mb = b.iter().map(|x| dot(w, x)).sum::<f64>() / b.len() as f64;
    ma - mb
}

/// `s(w, A, B)`: mean cosine with `A` minus mean cosine with `B`. Lies in `[-2, 2]`.
pub fn association<V: AsRef<[f64]>>(w: &[f64], a: &[V], b: &[V]) -> Result<f64, CeatError> {
    if a.is_empty() || b.is_empty() {
        return Err(CeatError::InvalidArgument("attribute sets must be non-empty".into()));
    }
    let dim = w.len();
    let w = unit(w, dim)?;
    Ok(association_unit(&w, &units(a, dim)?, &units(b, dim)?))
}

fn check_sets<V: AsRef<[f64]>>(x: &[V], y: &[V], a: &[V], b: &[V]) -> Result<usize, CeatError> {
    if x.is_empty() || y.is_empty() || a.is_empty() || b.is_empty() {
        return Err(CeatError::InvalidArgument("all four sets must be non-empty".into()));
    }
    if x.len() + y.len() < 2 {
        return Err(CeatError::InvalidArgument("need at least two target vectors".into()));
    }
    Ok(x[0].as_ref().len())
}

/// Association scores of every target: `X` first, then `Y`.
fn target_scores<V: AsRef<[f64]>>(x: &[V], y: &[V], a: &[V], b: &[V]) -> Result<Vec<f64>, CeatError> {
    let dim = check_sets(x, y, a, b)?;
    let a = units(a, dim)?;
    let b = units(b, dim)?;
    x.iter()
        .chain(y)
        .map(|w| Ok(association_unit(&unit(w, dim)?, &a, &b)))
        .collect()
}

fn effect_from_scores(scores: &[f64], nx: usize) -> Result<f64, CeatError> {
    let (sx, sy) = scores.split_at(nx);
    let m = mean(scores);
    let var = scores.iter().map(|s| (s - m).powi(2)).sum::<f64>() / (scores.len() - 1) as f64;
    let sd = var.sqrt();
    let scale = scores.iter().fold(0.0f64, |acc, s| acc.max(s.abs()));
    if sd.is_nan() || sd <= 1e-15 * (1.0 + scale) {
        return Err(CeatError::DegenerateDistribution);
    }
    let d = (mean(sx) - mean(sy)) / sd;
    if !d.is_finite() {
        return Err(CeatError::NonFinite("effect size".into()));
    }
    Ok(d)
}

/// Standardised WEAT effect size `d`.
pub fn weat_effect_size<V: AsRef<[f64]>>(x: &[V], y: &[V], a: &[V], b: &[V]) -> Result<f64, CeatError> {
    let scores = target_scores(x, y, a, b)?;
    effect_from_scores(&scores, x.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PValueMethod {
    Exact { partitions: u64 },
    MonteCarlo { draws: usize, std_error: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PermutationPValue {
    /// Share of partitions whose statistic is at least the observed one.
    pub one_sided: f64,
    /// Share of partitions whose |statistic| is at least the observed |statistic|.
    pub two_sided: f64,
    pub observed: f64,
    pub method: PValueMethod,
}

/// Number of ways to choose `k` of `n`, saturating at `u64::MAX`.
pub fn binomial(n: usize, k: usize) -> u64 {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

fn tie_tolerance(observed: f64) -> f64 {
    1e-12 * (1.0 + observed.abs())
}

/// Permutation test of the WEAT statistic `mean_X s - mean_Y s` over all
/// re-partitions of `X ∪ Y` into sets of sizes `|X|` and `|Y|`.
///
/// Enumerates partitions exactly when there are at most
/// `max_exact_partitions` of them, otherwise draws `mc_draws` random
/// partitions from the `weat-pvalue` substream of `seed`.
pub fn weat_pvalue<V: AsRef<[f64]>>(
    x: &[V],
    y: &[V],
    a: &[V],
    b: &[V],
    max_exact_partitions: u64,
    mc_draws: usize,
    seed_value: u64,
) -> Result<PermutationPValue, CeatError> {
    let scores = target_scores(x, y, a, b)?;
    // Also rejects zero-spread inputs, matching the effect size contract.
    effect_from_scores(&scores, x.len())?;
    let nx = x.len();
    let n = scores.len();
    let total: f64 = scores.iter().sum();
    let stat = |sum_x: f64| sum_x / nx as f64 - (total - sum_x) / (n - nx) as f64;
    let observed = stat(scores[..nx].iter().sum());
    let tol = tie_tolerance(observed);
    let partitions = binomial(n, nx);
    if partitions <= max_exact_partitions {
        let (mut upper, mut both) = (0u64, 0u64);
        for combo in (0..n).combinations(nx) {
            let t = stat(combo.iter().map(|&i| scores[i]).sum());
            upper += u64::from(t >= observed - tol);
            both += u64::from(t.abs() >= observed.abs() - tol);
        }
        return Ok(PermutationPValue {
            one_sided: upper as f64 / partitions as f64,
            two_sided: both as f64 / partitions as f64,
            observed,
            method: PValueMethod::Exact { partitions },
        });
    }
    if mc_draws == 0 {
        return Err(CeatError::InvalidArgument("mc_draws must be positive".into()));
    }
    let chunks = mc_draws.div_ceil(MC_CHUNK);
    let counts: Vec<(u64, u64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = seed::indexed_rng(seed_value, "weat-pvalue", c as u64);
            let mut idx: Vec<usize> = (0..n).collect();
            let draws = MC_CHUNK.min(mc_draws - c * MC_CHUNK);
            let (mut upper, mut both) = (0u64, 0u64);
            for _ in 0..draws {
                let (chosen, _) = idx.partial_shuffle(&mut rng, nx);
                let t = stat(chosen.iter().map(|&i| scores[i]).sum());
                upper += u64::from(t >= observed - tol);
                both += u64::from(t.abs() >= observed.abs() - tol);
            }
            (upper, both)
        })
        .collect();
    let upper: u64 = counts.iter().map(|c| c.0).sum();
    let both: u64 = counts.iter().map(|c| c.1).sum();
    let one_sided = upper as f64 / mc_draws as f64;
    Ok(PermutationPValue {
        one_sided,
        two_sided: both as f64 / mc_draws as f64,
        observed,
        method: PValueMethod::MonteCarlo {
            draws: mc_draws,
            std_error: (one_sided * (1.0 - one_sided) / mc_draws as f64).sqrt(),
        },
    })
}

/// One drawn embedding: stimulus surface and index into its pool.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DrawnMember {
    pub surface: String,
    pub index: usize,
}

/// Effect size of one sampled combination of contexts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectSizeSample {
    pub es: f64,
    pub variance: f64,
    pub draw_seed: u64,
    pub members: Vec<DrawnMember>,
}

/// Asymptotic variance of a standardised mean difference with group sizes
/// `nx`, `ny`.
pub fn smd_variance(d: f64, nx: usize, ny: usize) -> f64 {
    let (nx, ny) = (nx as f64, ny as f64);
    (nx + ny) / (nx * ny) + d * d / (2.0 * (nx + ny))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    pub n_samples: usize,
    /// Contextual embeddings drawn per stimulus per combination.
    pub per_term_draw: usize,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            n_samples: DEFAULT_SAMPLES,
            per_term_draw: 1,
            seed: 0,
        }
    }
}

struct UnitPool<'a> {
    surface: &'a str,
    vectors: Vec<Vec<f64>>,
}

fn unit_pools<'a>(pools: &LayerPools, group: &'a TermGroup, dim: usize) -> Result<Vec<UnitPool<'a>>, CeatError> {
    group
        .terms
        .iter()
        .map(|t| {
            Ok(UnitPool {
                surface: t.surface(),
                vectors: units(&pools[t.surface()], dim)?,
            })
        })
        .collect()
}

fn draw<R: Rng>(pool: &UnitPool<'_>, k: usize, rng: &mut R, out: &mut Vec<usize>) {
    out.clear();
    let n = pool.vectors.len();
    if k <= n {
        out.extend(rand::seq::index::sample(rng, n, k).iter());
    } else {
        out.extend((0..k).map(|_| rng.random_range(0..n)));
    }
}

/// Draws `n_samples` combinations of contextual embeddings for `spec` and
/// computes the effect size and SMD variance of each.
///
/// Sample `j` uses its own substream, so the result does not depend on how
/// samples are scheduled across threads.
pub fn sample_combinations(
    pools: &LayerPools,
    spec: &BiasTestSpec,
    config: &SamplingConfig,
) -> Result<Vec<EffectSizeSample>, CeatError> {
    if config.n_samples == 0 || config.per_term_draw == 0 {
        return Err(CeatError::InvalidArgument("n_samples and per_term_draw must be >= 1".into()));
    }
    let missing: BTreeSet<String> = spec
        .terms()
        .map(|t| t.surface())
        .filter(|s| pools.get(*s).is_none_or(Vec::is_empty))
        .map(str::to_owned)
        .collect();
    if !missing.is_empty() {
        return Err(CeatError::MissingData(missing.into_iter().collect()));
    }
    let dim = pools[spec.targets_x().terms[0].surface()][0].len();
    let groups = [
        unit_pools(pools, spec.targets_x(), dim)?,
        unit_pools(pools, spec.targets_y(), dim)?,
        unit_pools(pools, spec.attributes_a(), dim)?,
        unit_pools(pools, spec.attributes_b(), dim)?,
    ];
    let k = config.per_term_draw;
    let nx = spec.targets_x().len() * k;
    let ny = spec.targets_y().len() * k;
    let label = format!("ceat/{}", spec.name());
    (0..config.n_samples)
        .into_par_iter()
        .map(|j| {
            let draw_seed = seed::indexed_substream(config.seed, &label, j as u64);
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(draw_seed);
            let mut members = Vec::new();
            let mut picked: [Vec<&[f64]>; 4] = Default::default();
            let mut idx = Vec::with_capacity(k);
            for (g, out) in groups.iter().zip(picked.iter_mut()) {
                for pool in g {
                    draw(pool, k, &mut rng, &mut idx);
                    for &i in &idx {
                        out.push(&pool.vectors[i]);
                        members.push(DrawnMember {
                            surface: pool.surface.to_owned(),
                            index: i,
                        });
                    }
                }
            }
            let [xs, ys, a, b] = picked;
            let scores: Vec<f64> = xs
                .iter()
                .chain(&ys)
                .map(|w| {
                    let ma = a.iter().map(|v| dot(w, v)).sum::<f64>() / a.len() as f64;
                    let mb = b.iter().map(|v| dot(w, v)).sum::<f64>() / b.len() as f64;
                    ma - mb
                })
                .collect();
            let es = effect_from_scores(&scores, nx)?;
            Ok(EffectSizeSample {
                es,
                variance: smd_variance(es, nx, ny),
                draw_seed,
                members,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectClass {
    VerySmall,
    Small,
    Medium,
    Large,
}

impl EffectClass {
    pub fn label(self) -> &'static str {
        match self {
            EffectClass::VerySmall => "very small",
            EffectClass::Small => "small",
            EffectClass::Medium => "medium",
            EffectClass::Large => "large",
        }
    }
}

/// Conventional effect-size bands on `|ces|`: 0.2, 0.5 and 0.8.
pub fn classify_effect(ces: f64) -> EffectClass {
    let m = ces.abs();
    if m >= 0.8 {
        EffectClass::Large
    } else if m >= 0.5 {
        EffectClass::Medium
    } else if m >= 0.2 {
        EffectClass::Small
    } else {
        EffectClass::VerySmall
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaAnalysisResult {
    pub ces: f64,
    pub tau2: f64,
    pub se: f64,
    pub z: f64,
    /// Two-tailed normal p-value of `z`.
    pub p: f64,
    /// Upper-tail normal p-value, `P(Z >= z)`.
    pub p_one_sided: f64,
    /// Cochran's heterogeneity statistic.
    pub q: f64,
    pub n_samples: usize,
    pub classification: EffectClass,
    /// How many variances were raised to [`VARIANCE_FLOOR`].
    pub clamped_variances: usize,
}

impl MetaAnalysisResult {
    pub fn is_significant(&self) -> bool {
        self.p < SIGNIFICANCE_LEVEL
    }
}

/// `base + Σ w_j (x_j - base) / Σ w_j`: exact when all `x_j` are equal.
fn weighted_mean(xs: &[f64], ws: &[f64]) -> f64 {
    let base = xs[0];
    let sw: f64 = ws.iter().sum();
    base + xs.iter().zip(ws).map(|(x, w)| w * (x - base)).sum::<f64>() / sw
}

/// DerSimonian-Laird random-effects combination of `(es, variance)` pairs.
pub fn combine_effects(pairs: &[(f64, f64)]) -> Result<MetaAnalysisResult, CeatError> {
    let n = pairs.len();
    if n < 2 {
        return Err(CeatError::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    let mut clamped = 0;
    let mut es = Vec::with_capacity(n);
    let mut var = Vec::with_capacity(n);
    for &(e, v) in pairs {
        if !e.is_finite() || !v.is_finite() {
            return Err(CeatError::NonFinite(format!("sample ({e}, {v})")));
        }
        if v < 0.0 {
            return Err(CeatError::InvalidArgument(format!("negative variance {v}")));
        }
        let v = if v <= VARIANCE_FLOOR {
            clamped += 1;
            VARIANCE_FLOOR
        } else {
            v
        };
        es.push(e);
        var.push(v);
    }
    if clamped > 0 {
        log::warn!("{clamped} sample variances raised to {VARIANCE_FLOOR:e}");
    }
    let w: Vec<f64> = var.iter().map(|v| 1.0 / v).collect();
    let sw: f64 = w.iter().sum();
    let fixed = weighted_mean(&es, &w);
    let q: f64 = w.iter().zip(&es).map(|(wj, e)| wj * (e - fixed).powi(2)).sum();
    let c = sw - w.iter().map(|x| x * x).sum::<f64>() / sw;
    let df = (n - 1) as f64;
    let tau2 = if q <= df || c <= 0.0 { 0.0 } else { (q - df) / c };
    let v_star: Vec<f64> = var.iter().map(|v| 1.0 / (v + tau2)).collect();
    let lo = es.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = es.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ces = weighted_mean(&es, &v_star).clamp(lo, hi);
    let se = v_star.iter().sum::<f64>().powf(-0.5);
    let z = ces / se;
    let p = erfc(z.abs() / std::f64::consts::SQRT_2);
    let p_one_sided = 0.5 * erfc(z / std::f64::consts::SQRT_2);
    Ok(MetaAnalysisResult {
        ces,
        tau2,
        se,
        z,
        p,
        p_one_sided,
        q,
        n_samples: n,
        classification: classify_effect(ces),
        clamped_variances: clamped,
    })
}

pub fn combine_random_effects(samples: &[EffectSizeSample]) -> Result<MetaAnalysisResult, CeatError> {
    let pairs: Vec<(f64, f64)> = samples.iter().map(|s| (s.es, s.variance)).collect();
    combine_effects(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lexicon::StimulusTerm;
    use proptest::prelude::*;
    use rand::Rng;

    fn v(xs: &[&[f64]]) -> Vec<Vec<f64>> {
        xs.iter().map(|x| x.to_vec()).collect()
    }

    #[test]
    fn association_basic_cases() {
        let a = v(&[&[1.0, 0.0], &[0.3, 0.7]]);
        assert_eq!(association(&[0.2, 0.9], &a, &a).unwrap(), 0.0);
        let s = association(&[1.0, 0.0], &v(&[&[1.0, 0.0]]), &v(&[&[0.0, 1.0]])).unwrap();
        assert!((s - 1.0).abs() < 1e-15);
        assert!(matches!(
            association(&[0.0, 0.0], &a, &a),
            Err(CeatError::DegenerateInput(_))
        ));
        assert!(matches!(
            association(&[1.0, 0.0, 0.0], &a, &a),
            Err(CeatError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn weat_fixed_2d_instance() {
        // Frozen from an independent plain-loop evaluation of the definition.
        let x = v(&[&[1.0, 0.0], &[0.9, 0.1]]);
        let y = v(&[&[0.0, 1.0], &[0.1, 0.9]]);
        let a = v(&[&[1.0, 0.0]]);
        let b = v(&[&[0.0, 1.0]]);
        let d = weat_effect_size(&x, &y, &a, &b).unwrap();
        assert!((d - 1.7287441861257802).abs() < 1e-12, "{d}");
        assert!((weat_effect_size(&y, &x, &a, &b).unwrap() + d).abs() < 1e-12);
        assert!((weat_effect_size(&x, &y, &b, &a).unwrap() + d).abs() < 1e-12);
        let p = weat_pvalue(&x, &y, &a, &b, 1000, 0, 0).unwrap();
        assert_eq!(p.method, PValueMethod::Exact { partitions: 6 });
        assert!((p.one_sided - 1.0 / 6.0).abs() < 1e-15);
        assert!((p.two_sided - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn identical_target_sets_give_zero() {
        let x = v(&[&[0.2, 1.0], &[0.5, 0.8], &[1.0, 0.2], &[0.8, 0.5]]);
        let a = v(&[&[1.0, 0.0]]);
        let b = v(&[&[0.0, 1.0]]);
        assert!(weat_effect_size(&x, &x, &a, &b).unwrap().abs() < 1e-15);
        let same = v(&[&[1.0, 1.0], &[2.0, 2.0]]);
        assert!(matches!(
            weat_effect_size(&same, &same, &a, &b),
            Err(CeatError::DegenerateDistribution)
        ));
    }

    #[test]
    fn singleton_partitions() {
        let a = v(&[&[1.0, 0.0]]);
        let b = v(&[&[0.0, 1.0]]);
        let hi = v(&[&[1.0, 0.1]]);
        let lo = v(&[&[0.1, 1.0]]);
        let p = weat_pvalue(&hi, &lo, &a, &b, 10, 0, 0).unwrap();
        assert_eq!(p.one_sided, 0.5);
        let p = weat_pvalue(&lo, &hi, &a, &b, 10, 0, 0).unwrap();
        assert_eq!(p.one_sided, 1.0);
    }

    #[test]
    fn binomial_counts() {
        assert_eq!(binomial(10, 5), 252);
        assert_eq!(binomial(4, 0), 1);
        assert_eq!(binomial(16, 8), 12870);
        assert_eq!(binomial(200, 100), u64::MAX);
    }

    #[test]
    fn classification_bands() {
        assert_eq!(classify_effect(0.77), EffectClass::Medium);
        assert_eq!(classify_effect(0.47), EffectClass::Small);
        assert_eq!(classify_effect(-0.12), EffectClass::VerySmall);
        assert_eq!(classify_effect(0.17), EffectClass::VerySmall);
        assert_eq!(classify_effect(-0.8), EffectClass::Large);
        assert_eq!(classify_effect(0.5), EffectClass::Medium);
        assert_eq!(classify_effect(0.2), EffectClass::Small);
    }

    #[test]
    fn random_effects_hand_computed() {
        // Hand-evaluated DerSimonian-Laird: W = 10, Q = 5, C = 10, tau2 = 0.4.
        let r = combine_effects(&[(0.0, 0.1), (1.0, 0.1)]).unwrap();
        assert!((r.ces - 0.5).abs() < 1e-12);
        assert!((r.tau2 - 0.4).abs() < 1e-12);
        assert!((r.se - 0.5).abs() < 1e-12);
        assert!((r.z - 1.0).abs() < 1e-12);
        assert!((r.p - 0.31731050786291415).abs() < 1e-12, "{}", r.p);
        assert!((r.q - 5.0).abs() < 1e-12);

        let r = combine_effects(&[(0.2, 0.04), (0.5, 0.05), (0.9, 0.1)]).unwrap();
        assert!((r.q - 3.627272727272727).abs() < 1e-12);
        assert!((r.tau2 - 0.047105263157894726).abs() < 1e-12);
        assert!((r.ces - 0.4746304819072958).abs() < 1e-12);
        assert!((r.se - 0.18706686093620695).abs() < 1e-12);
        assert!((r.z - 2.5372237473378734).abs() < 1e-12);
        assert!((r.p - 0.011173551522018465).abs() < 1e-12);
    }

    #[test]
    fn random_effects_homogeneous_and_errors() {
        let r = combine_effects(&[(0.3, 0.02); 7]).unwrap();
        assert_eq!(r.ces, 0.3);
        assert_eq!(r.tau2, 0.0);
        assert!(combine_effects(&[(0.3, 0.02)]).is_err());
        let r = combine_effects(&[(0.3, 0.0), (0.3, 0.0)]).unwrap();
        assert_eq!(r.clamped_variances, 2);
        assert!(combine_effects(&[(f64::NAN, 0.1), (0.0, 0.1)]).is_err());
    }

    fn term_group(prefix: &str, n: usize, target: bool) -> TermGroup {
        let terms = (0..n)
            .map(|i| {
                if target {
                    StimulusTerm::target(format!("{prefix}{i}"), prefix).unwrap()
                } else {
                    StimulusTerm::attribute(format!("{prefix}{i}"), prefix).unwrap()
                }
            })
            .collect();
        TermGroup::new(prefix, terms)
    }

    fn spec() -> BiasTestSpec {
        BiasTestSpec::new(
            "t",
            term_group("X", 3, true),
            term_group("Y", 3, true),
            term_group("a", 2, false),
            term_group("b", 2, false),
        )
        .unwrap()
    }

    fn pools(per_term: usize, seed_value: u64) -> LayerPools {
        let mut rng = seed::rng(seed_value, "pools");
        spec()
            .terms()
            .map(|t| {
                let vs = (0..per_term)
                    .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
                    .collect();
                (t.surface().to_owned(), vs)
            })
            .collect()
    }

    #[test]
    fn one_embedding_per_stimulus_gives_identical_samples() {
        let samples = sample_combinations(&pools(1, 1), &spec(), &SamplingConfig { n_samples: 20, per_term_draw: 1, seed: 3 }).unwrap();
        assert!(samples.windows(2).all(|w| w[0].es == w[1].es));
    }

    #[test]
    fn sampling_is_deterministic_and_checks_supply() {
        let p = pools(5, 2);
        let cfg = SamplingConfig { n_samples: 30, per_term_draw: 2, seed: 9 };
        let a = sample_combinations(&p, &spec(), &cfg).unwrap();
        let b = sample_combinations(&p, &spec(), &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[0].members.len(), 20);
        let first: Vec<_> = a[0].members.iter().filter(|m| m.surface == "X0").collect();
        assert_ne!(first[0].index, first[1].index, "no replacement within a sample");

        let mut thin = p.clone();
        thin.remove("b1");
        assert!(matches!(
            sample_combinations(&thin, &spec(), &cfg),
            Err(CeatError::MissingData(m)) if m == vec!["b1".to_string()]
        ));
    }

    fn brute_cos(u: &[f64], w: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut nu = 0.0;
        let mut nw = 0.0;
        for i in 0..u.len() {
            num += u[i] * w[i];
            nu += u[i] * u[i];
            nw += w[i] * w[i];
        }
        num / (nu.sqrt() * nw.sqrt())
    }

    proptest! {
        #[test]
        fn effect_size_antisymmetry_and_scale_invariance(
            seed_value in 0u64..1000,
            scale in 0.01f64..100.0,
        ) {
            let mut rng = seed::rng(seed_value, "prop");
            let mut set = |n: usize| -> Vec<Vec<f64>> {
                (0..n).map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
            };
            let (x, y, a, b) = (set(3), set(4), set(2), set(3));
            let d = weat_effect_size(&x, &y, &a, &b).unwrap();
            prop_assert!((weat_effect_size(&y, &x, &a, &b).unwrap() + d).abs() < 1e-10);
            prop_assert!((weat_effect_size(&x, &y, &b, &a).unwrap() + d).abs() < 1e-10);
            let sc = |s: &Vec<Vec<f64>>| s.iter().map(|v| v.iter().map(|e| e * scale).collect()).collect::<Vec<Vec<f64>>>();
            prop_assert!((weat_effect_size(&sc(&x), &sc(&y), &sc(&a), &sc(&b)).unwrap() - d).abs() < 1e-10);
            let w = &x[0];
            let s = association(w, &a, &b).unwrap();
            let brute = a.iter().map(|q| brute_cos(w, q)).sum::<f64>() / a.len() as f64
                - b.iter().map(|q| brute_cos(w, q)).sum::<f64>() / b.len() as f64;
            prop_assert!((s - brute).abs() < 1e-12);
            prop_assert!((-2.0..=2.0).contains(&s));
        }

        #[test]
        fn random_effects_properties(
            pairs in proptest::collection::vec((-2.0f64..2.0, 0.001f64..1.0), 2..40),
        ) {
            let r = combine_effects(&pairs).unwrap();
            let lo = pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            let hi = pairs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(r.ces >= lo && r.ces <= hi);
            prop_assert!(r.tau2 >= 0.0);
            if r.q <= (pairs.len() - 1) as f64 {
                prop_assert_eq!(r.tau2, 0.0);
            }
            let neg: Vec<(f64, f64)> = pairs.iter().map(|&(e, v)| (-e, v)).collect();
            let rn = combine_effects(&neg).unwrap();
            prop_assert!((rn.ces + r.ces).abs() < 1e-12);
            prop_assert!((rn.z + r.z).abs() < 1e-9);
            prop_assert!((rn.tau2 - r.tau2).abs() < 1e-12);
            prop_assert!((rn.se - r.se).abs() < 1e-12);
            prop_assert!((rn.p - r.p).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&r.p));
        }
    }
}
