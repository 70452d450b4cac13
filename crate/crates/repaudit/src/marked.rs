//! Weighted log-odds z-scores with informative priors: the uncalibrated
//! baseline, regularizer computation, the calibrated scoring pass, and the
//! binary-search calibration of the prior-strength constants.

use std::collections::{BTreeSet, HashMap};

use crate::corpus::CountTable;
use crate::{Error, Result};

/// One-sided significance cutoff applied per group orientation.
pub const DEFAULT_THRESHOLD: f64 = 1.96;
/// Default weight of the topic prior in the hybrid mixture.
pub const DEFAULT_MIX: f64 = 0.25;
/// Bisection stops when the interval is narrower than this.
const SEARCH_TOLERANCE: f64 = 1e-3;
/// Hard cap on bisection probes per constant.
const SEARCH_MAX_ITERATIONS: usize = 20;

/// Real-valued word table produced by mixing integer count tables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorTable {
    weights: HashMap<String, f64>,
    total: f64,
}

impl PriorTable {
    pub fn get(&self, word: &str) -> f64 {
        self.weights.get(word).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.weights.iter().map(|(w, v)| (w.as_str(), *v))
    }
}

/// `P[w] = mix * topic[w] + (1 - mix) * english[w]` over the topic prior's
/// support; words missing from the English table contribute zero there.
pub fn hybrid_prior(topic: &CountTable, english: &CountTable, mix: f64) -> PriorTable {
    let mut weights = HashMap::with_capacity(topic.len());
    let mut total = 0.0;
    for (word, count) in topic.iter() {
        let value = mix * count as f64 + (1.0 - mix) * english.get(word) as f64;
        total += value;
        weights.insert(word.to_string(), value);
    }
    PriorTable { weights, total }
}

/// Priors and strength constants feeding the regularizer computation.
#[derive(Debug, Clone, Copy)]
pub struct PriorSpec<'a> {
    pub topic: &'a CountTable,
    pub english: &'a CountTable,
    /// Mixture weight of the topic prior, in [0, 1].
    pub mix: f64,
    pub c_topic: f64,
    pub c_english: f64,
}

impl PriorSpec<'_> {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.mix) {
            return Err(Error::Config(format!(
                "mix must be in [0, 1], got {}",
                self.mix
            )));
        }
        if self.c_topic <= 0.0 || self.c_english <= 0.0 {
            return Err(Error::Config(
                "prior strength constants must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Mixed strength constant `C = mix * c_topic + (1 - mix) * c_english`.
    pub fn combined_constant(&self) -> f64 {
        self.mix * self.c_topic + (1.0 - self.mix) * self.c_english
    }
}

/// Hybrid prior plus the per-group scale factors that divide it inside the
/// log-odds formula.
#[derive(Debug, Clone)]
pub struct RegularizerPair {
    pub prior: PriorTable,
    pub r1: f64,
    pub r2: f64,
}

/// Computes `r1 = C * w_p / w_g1` and `r2 = C * w_p / w_g2`, where the
/// `w_*` are the calibration-word masses under the hybrid prior and each
/// group. Errors when a group (or the prior) carries no calibration mass.
pub fn regularizers(
    calibration_words: &BTreeSet<String>,
    group1: &CountTable,
    group2: &CountTable,
    spec: &PriorSpec,
) -> Result<RegularizerPair> {
    spec.validate()?;
    if calibration_words.is_empty() {
        return Err(Error::EmptyInput("calibration word set".into()));
    }
    let prior = hybrid_prior(spec.topic, spec.english, spec.mix);
    let mut prior_mass = 0.0;
    let mut mass1 = 0u64;
    let mut mass2 = 0u64;
    for word in calibration_words {
        prior_mass += prior.get(word);
        mass1 += group1.get(word);
        mass2 += group2.get(word);
    }
    if mass1 == 0 {
        return Err(Error::CalibrationMassMissing("group 1".into()));
    }
    if mass2 == 0 {
        return Err(Error::CalibrationMassMissing("group 2".into()));
    }
    if prior_mass <= 0.0 {
        return Err(Error::CalibrationMassMissing("the prior".into()));
    }
    let c = spec.combined_constant();
    Ok(RegularizerPair {
        prior,
        r1: c * prior_mass / mass1 as f64,
        r2: c * prior_mass / mass2 as f64,
    })
}

/// Which corpus total anchors the group-1 odds denominator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OddsDenominator {
    /// Each group's odds use its own total.
    #[default]
    PerGroup,
    /// Both odds use the unmarked group's total. Kept behind a flag so
    /// results can be compared against implementations that do this.
    SharedUnmarked,
}

/// Scoring knobs; the defaults match the CLI defaults.
#[derive(Debug, Clone, Copy)]
pub struct ScoreOptions {
    pub threshold: f64,
    pub denominator: OddsDenominator,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            threshold: DEFAULT_THRESHOLD,
            denominator: OddsDenominator::default(),
        }
    }
}

/// Signed z-score per word, with the significance threshold carried along
/// for downstream filtering. Every key is in the hybrid prior's support.
#[derive(Debug, Clone, Default)]
pub struct ZScoreTable {
    pub scores: HashMap<String, f64>,
    pub threshold: f64,
}

impl ZScoreTable {
    pub fn get(&self, word: &str) -> Option<f64> {
        self.scores.get(word).copied()
    }

    /// Same scores with every sign flipped; scoring the swapped orientation
    /// produces exactly this table.
    pub fn negated(&self) -> ZScoreTable {
        ZScoreTable {
            scores: self.scores.iter().map(|(w, s)| (w.clone(), -s)).collect(),
            threshold: self.threshold,
        }
    }
}

/// Weighted log-odds z-scores of `group` against `unmarked` under the
/// given prior, with the prior divided by `r1`/`r2` per side.
///
/// For each word in the prior support with smoothed mass on both sides:
/// the log-odds of each group's smoothed rate are differenced and divided
/// by the estimated standard deviation. Words with zero smoothed mass on
/// either side carry no evidence and are omitted. A non-positive odds
/// denominator means the prior is too small relative to a word dominating
/// a corpus, and errors.
pub fn calibrated_zscores(
    group: &CountTable,
    unmarked: &CountTable,
    prior: &PriorTable,
    r1: f64,
    r2: f64,
) -> Result<ZScoreTable> {
    calibrated_zscores_with(group, unmarked, prior, r1, r2, &ScoreOptions::default())
}

/// `calibrated_zscores` with explicit options.
pub fn calibrated_zscores_with(
    group: &CountTable,
    unmarked: &CountTable,
    prior: &PriorTable,
    r1: f64,
    r2: f64,
    options: &ScoreOptions,
) -> Result<ZScoreTable> {
    if r1 <= 0.0 || r2 <= 0.0 {
        return Err(Error::Config("regularizers must be positive".into()));
    }
    let n_group = group.total() as f64;
    let n_unmarked = unmarked.total() as f64;
    let n_prior = prior.total();
    let group1_total = match options.denominator {
        OddsDenominator::PerGroup => n_group,
        OddsDenominator::SharedUnmarked => n_unmarked,
    };

    let mut scores = HashMap::with_capacity(prior.len());
    for (word, prior_mass) in prior.iter() {
        let a1 = group.get(word) as f64 + prior_mass / r1;
        let a2 = unmarked.get(word) as f64 + prior_mass / r2;
        if a1 <= 0.0 || a2 <= 0.0 {
            continue;
        }
        let d1 = (group1_total + n_prior / r1) - a1;
        let d2 = (n_unmarked + n_prior / r2) - a2;
        if d1 <= 0.0 || d2 <= 0.0 {
            return Err(Error::PriorTooSmall(word.to_string()));
        }
        let variance = 1.0 / a1 + 1.0 / a2;
        let delta = ((a1 / d1).ln() - (a2 / d2).ln()) / variance.sqrt();
        scores.insert(word.to_string(), delta);
    }
    Ok(ZScoreTable {
        scores,
        threshold: options.threshold,
    })
}

/// The uncalibrated method: identical to `calibrated_zscores` with both
/// regularizers fixed at 1.
pub fn baseline_zscores(
    group: &CountTable,
    unmarked: &CountTable,
    prior: &PriorTable,
) -> Result<ZScoreTable> {
    calibrated_zscores(group, unmarked, prior, 1.0, 1.0)
}

/// Words whose z-score clears the table's threshold and that actually
/// occur in the group, sorted by descending score (ties lexicographic).
/// The group-count requirement keeps prior-only artifacts out.
pub fn significant_words(z: &ZScoreTable, group_counts: &CountTable) -> Vec<String> {
    let mut hits: Vec<(&str, f64)> = z
        .scores
        .iter()
        .filter(|(word, score)| **score > z.threshold && group_counts.get(word) > 0)
        .map(|(w, s)| (w.as_str(), *s))
        .collect();
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    hits.into_iter().map(|(w, _)| w.to_string()).collect()
}

/// Calibration words from `calibration_words` that remain significant (in
/// either orientation) under the given spec.
fn offending_words(
    calibration_words: &BTreeSet<String>,
    group1: &CountTable,
    group2: &CountTable,
    spec: &PriorSpec,
    options: &ScoreOptions,
) -> Result<Vec<String>> {
    let reg = regularizers(calibration_words, group1, group2, spec)?;
    let z = calibrated_zscores_with(group1, group2, &reg.prior, reg.r1, reg.r2, options)?;
    let mut out = Vec::new();
    for word in calibration_words {
        let Some(score) = z.get(word) else { continue };
        let for_group1 = score > options.threshold && group1.get(word) > 0;
        let for_group2 = -score > options.threshold && group2.get(word) > 0;
        if for_group1 || for_group2 {
            out.push(word.clone());
        }
    }
    Ok(out)
}

/// Bisects a strength constant over (0, 1]. A probe passes when no
/// calibration word is significant; a failing probe moves the interval
/// toward smaller values (stronger prior). Returns the largest passing
/// probe once the interval converges, and errors when every probe fails.
fn search_constant<F>(mut check: F) -> Result<f64>
where
    F: FnMut(f64) -> Result<Vec<String>>,
{
    if check(1.0)?.is_empty() {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best = None;
    let mut last_offending = Vec::new();
    for _ in 0..SEARCH_MAX_ITERATIONS {
        if hi - lo < SEARCH_TOLERANCE {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let offending = check(mid)?;
        if offending.is_empty() {
            best = Some(mid);
            lo = mid;
        } else {
            last_offending = offending;
            hi = mid;
        }
    }
    best.ok_or(Error::CalibrationFailed(last_offending))
}

/// Tunes `(c_topic, c_english)` so that no calibration word scores as
/// significant. The English constant is searched first with the mixture
/// pinned to the English prior, then the topic constant with the mixture
/// pinned to the topic prior; the pair is finally verified at the real
/// mixture weight and any surviving calibration word is an error.
pub fn calibrate_constants(
    calibration_words: &BTreeSet<String>,
    group1: &CountTable,
    group2: &CountTable,
    topic: &CountTable,
    english: &CountTable,
    mix: f64,
    options: &ScoreOptions,
) -> Result<(f64, f64)> {
    let spec_with = |mix: f64, c_topic: f64, c_english: f64| PriorSpec {
        topic,
        english,
        mix,
        c_topic,
        c_english,
    };

    let c_english = search_constant(|c| {
        offending_words(
            calibration_words,
            group1,
            group2,
            &spec_with(0.0, 1.0, c),
            options,
        )
    })?;
    let c_topic = search_constant(|c| {
        offending_words(
            calibration_words,
            group1,
            group2,
            &spec_with(1.0, c, 1.0),
            options,
        )
    })?;

    let verify = offending_words(
        calibration_words,
        group1,
        group2,
        &spec_with(mix, c_topic, c_english),
        options,
    )?;
    if !verify.is_empty() {
        return Err(Error::CalibrationFailed(verify));
    }
    Ok((c_topic, c_english))
}
