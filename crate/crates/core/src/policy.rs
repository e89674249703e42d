//! Environment-level model reselection.
//!
//! Per-model profiles carry a reward weight, a time weight and a stability
//! factor. Between correction rounds every model is scored against the
//! current environment (code length, accumulated run time) and the best
//! score wins; the incumbent's score is multiplied by its stability factor.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{BenchReport, Method};

pub const BASIC_PASS_REWARD: f64 = 2.0;
pub const CHALLENGE_PASS_REWARD: f64 = 3.0;
pub const BASIC_FAIL_PENALTY: f64 = 0.5;
pub const CHALLENGE_FAIL_PENALTY: f64 = 0.2;

pub const DEFAULT_STABILITY: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("all inputs must be strictly positive, got {0}")]
    NonPositiveInput(f64),
    #[error("cannot normalize an empty list")]
    EmptyInput,
    #[error("thresholds must satisfy t1 < t2, got ({0}, {1})")]
    InvalidThresholds(u64, u64),
    #[error("model ranking needs exactly 3 entries, got {0}")]
    InvalidRanking(usize),
    #[error("no model profiles to choose from")]
    EmptyProfiles,
    #[error("unknown model `{0}`")]
    UnknownModel(ModelId),
    #[error("run time must be finite and non-negative, got {0}")]
    InvalidRunTime(f64),
    #[error("invalid profile for `{model}`: {reason}")]
    InvalidProfile { model: ModelId, reason: &'static str },
    #[error("invalid parameter weights: {0}")]
    InvalidWeights(&'static str),
    #[error("calibration reports cover different task sets")]
    MismatchedCorpora,
    #[error("calibration needs fixed-model reports, got `{0}`")]
    NotFixedModel(String),
    #[error("model `{0}` has more than one calibration report")]
    DuplicateReport(ModelId),
}

/// Identifier of a language model backend. Ordered lexicographically, which
/// is also the default tie-break order for selection.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelId(pub String);

impl ModelId {
    pub fn new(id: impl Into<String>) -> Self {
        ModelId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ModelId {
    fn from(s: &str) -> Self {
        ModelId(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LlmProfile {
    pub reward_weight: f64,
    pub time_weight: f64,
    pub stability: f64,
}

impl LlmProfile {
    pub fn validate(&self, model: &ModelId) -> Result<(), PolicyError> {
        let bad = |reason| PolicyError::InvalidProfile {
            model: model.clone(),
            reason,
        };
        if !(0.0..=1.0).contains(&self.reward_weight) {
            return Err(bad("reward_weight outside [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.time_weight) {
            return Err(bad("time_weight outside [0, 1]"));
        }
        if !(self.stability > 0.0 && self.stability <= 1.0) {
            return Err(bad("stability outside (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterWeights {
    pub length: f64,
    pub reward: f64,
    pub time: f64,
    pub run_time: f64,
}

impl Default for ParameterWeights {
    fn default() -> Self {
        ParameterWeights {
            length: 0.001,
            reward: 1.0,
            time: 1.0,
            run_time: 0.01,
        }
    }
}

impl ParameterWeights {
    pub fn validate(&self) -> Result<(), PolicyError> {
        let all = [self.length, self.reward, self.time, self.run_time];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(PolicyError::InvalidWeights("weights must be finite and >= 0"));
        }
        if all.iter().all(|w| *w == 0.0) {
            return Err(PolicyError::InvalidWeights("at least one weight must be > 0"));
        }
        Ok(())
    }
}

/// Order used to break exact score ties.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "order")]
pub enum TieBreak {
    #[default]
    Lexicographic,
    /// Earlier entries win; models missing from the list rank after all
    /// listed ones, lexicographically among themselves.
    Ordered(Vec<ModelId>),
}

impl TieBreak {
    fn rank<'a>(&self, model: &'a ModelId) -> (usize, &'a ModelId) {
        match self {
            TieBreak::Lexicographic => (0, model),
            TieBreak::Ordered(order) => (
                order.iter().position(|m| m == model).unwrap_or(order.len()),
                model,
            ),
        }
    }
}

/// Policy configuration file contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub weights: ParameterWeights,
    /// Length bands for the initial model: `<= t1`, `<= t2`, above.
    pub thresholds: (u64, u64),
    /// Fastest first, strongest last.
    pub ranking: Vec<ModelId>,
    pub profiles: BTreeMap<ModelId, LlmProfile>,
    pub tie_break: TieBreak,
}

impl Default for PolicyConfig {
    /// Three-model setup with profiles calibrated from fixed-model bench
    /// statistics; mirrored by `data/default_policy.json`.
    fn default() -> Self {
        let profile = |reward_weight, time_weight| LlmProfile {
            reward_weight,
            time_weight,
            stability: DEFAULT_STABILITY,
        };
        PolicyConfig {
            weights: ParameterWeights::default(),
            thresholds: (79, 143),
            ranking: vec!["spark".into(), "llama".into(), "ernie".into()],
            profiles: BTreeMap::from([
                ("ernie".into(), profile(0.4338, 0.4732)),
                ("llama".into(), profile(0.4466, 0.4335)),
                ("spark".into(), profile(0.3731, 0.3486)),
            ]),
            tie_break: TieBreak::Lexicographic,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        self.weights.validate()?;
        let (t1, t2) = self.thresholds;
        if t1 >= t2 {
            return Err(PolicyError::InvalidThresholds(t1, t2));
        }
        if self.ranking.len() != 3 {
            return Err(PolicyError::InvalidRanking(self.ranking.len()));
        }
        if self.profiles.is_empty() {
            return Err(PolicyError::EmptyProfiles);
        }
        for (model, profile) in &self.profiles {
            profile.validate(model)?;
        }
        if let Some(missing) = self.ranking.iter().find(|m| !self.profiles.contains_key(*m)) {
            return Err(PolicyError::UnknownModel(missing.clone()));
        }
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        cfg.validate().map_err(|e| format!("{}: {e}", path.display()))?;
        Ok(cfg)
    }
}

/// Divides each value by the sum of all values.
pub fn normalize_linear(values: &[f64]) -> Result<Vec<f64>, PolicyError> {
    if values.is_empty() {
        return Err(PolicyError::EmptyInput);
    }
    if let Some(bad) = values.iter().find(|v| v.is_nan() || **v <= 0.0 || !v.is_finite()) {
        return Err(PolicyError::NonPositiveInput(*bad));
    }
    let total: f64 = values.iter().sum();
    Ok(values.iter().map(|v| v / total).collect())
}

/// `1 / (1 + e^(-2 (x - 0.5)))`, centred so that 0.5 maps to 0.5.
pub fn logistic_weight(x: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * (x - 0.5)).exp())
}

/// Picks the initial model from the length of the code to fix: short code
/// goes to the fastest model, long code to the strongest.
pub fn initial_model_by_length(
    code_length: u64,
    thresholds: (u64, u64),
    ranking: &[ModelId],
) -> Result<ModelId, PolicyError> {
    let (t1, t2) = thresholds;
    if t1 >= t2 {
        return Err(PolicyError::InvalidThresholds(t1, t2));
    }
    if ranking.len() != 3 {
        return Err(PolicyError::InvalidRanking(ranking.len()));
    }
    let idx = if code_length <= t1 {
        0
    } else if code_length <= t2 {
        1
    } else {
        2
    };
    Ok(ranking[idx].clone())
}

/// Score of one model in the current environment, before tie-breaking.
pub fn model_score(
    code_length: u64,
    run_time: f64,
    is_incumbent: bool,
    profile: &LlmProfile,
    weights: &ParameterWeights,
) -> f64 {
    let len_w = code_length as f64 * weights.length * profile.reward_weight;
    let rew_w = weights.reward * profile.reward_weight;
    let time_w = weights.time * profile.time_weight;
    let rt_w = weights.run_time * run_time * profile.reward_weight;
    let raw = len_w + rew_w - time_w - rt_w;
    if is_incumbent {
        raw * profile.stability
    } else {
        raw
    }
}

/// Scores every profiled model, in lexicographic model order.
pub fn score_models(
    code_length: u64,
    run_time: f64,
    recent: &ModelId,
    profiles: &BTreeMap<ModelId, LlmProfile>,
    weights: &ParameterWeights,
) -> Result<Vec<(ModelId, f64)>, PolicyError> {
    if profiles.is_empty() {
        return Err(PolicyError::EmptyProfiles);
    }
    if !run_time.is_finite() || run_time < 0.0 {
        return Err(PolicyError::InvalidRunTime(run_time));
    }
    Ok(profiles
        .iter()
        .map(|(model, profile)| {
            let score = model_score(code_length, run_time, model == recent, profile, weights);
            (model.clone(), score)
        })
        .collect())
}

/// Returns the highest-scoring model. Exact ties go to the model ranked
/// first by `tie_break`.
pub fn select_model(
    code_length: u64,
    run_time: f64,
    recent: &ModelId,
    profiles: &BTreeMap<ModelId, LlmProfile>,
    weights: &ParameterWeights,
    tie_break: &TieBreak,
) -> Result<ModelId, PolicyError> {
    let scores = score_models(code_length, run_time, recent, profiles, weights)?;
    let mut best: Option<&(ModelId, f64)> = None;
    for entry in &scores {
        best = match best {
            None => Some(entry),
            Some(current) => {
                let better = entry.1 > current.1
                    || (entry.1 == current.1 && tie_break.rank(&entry.0) < tie_break.rank(&current.0));
                Some(if better { entry } else { current })
            }
        };
    }
    Ok(best.expect("profiles non-empty").0.clone())
}

/// Pass/fail of the two assert tiers of one test round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TierVerdict {
    pub basic_passed: bool,
    pub challenge_passed: bool,
}

impl TierVerdict {
    pub fn reward(&self) -> f64 {
        let basic = if self.basic_passed {
            BASIC_PASS_REWARD
        } else {
            -BASIC_FAIL_PENALTY
        };
        let challenge = if self.challenge_passed {
            CHALLENGE_PASS_REWARD
        } else {
            -CHALLENGE_FAIL_PENALTY
        };
        basic + challenge
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub score: f64,
    pub elapsed_s: f64,
    /// `loop_histogram[k]` counts sessions solved on loop `k + 1`.
    pub loop_histogram: Vec<u64>,
    pub failures: u64,
}

impl ModelRecord {
    fn new(max_loops: usize) -> Self {
        ModelRecord {
            score: 0.0,
            elapsed_s: 0.0,
            loop_histogram: vec![0; max_loops],
            failures: 0,
        }
    }
}

/// Per-model reward, time and loop bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardLedger {
    max_loops: usize,
    models: BTreeMap<ModelId, ModelRecord>,
}

impl RewardLedger {
    pub fn new<'a>(models: impl IntoIterator<Item = &'a ModelId>, max_loops: usize) -> Self {
        RewardLedger {
            max_loops,
            models: models
                .into_iter()
                .map(|m| (m.clone(), ModelRecord::new(max_loops)))
                .collect(),
        }
    }

    pub fn record(&self, model: &ModelId) -> Option<&ModelRecord> {
        self.models.get(model)
    }

    pub fn models(&self) -> impl Iterator<Item = (&ModelId, &ModelRecord)> {
        self.models.iter()
    }

    pub fn total_score(&self) -> f64 {
        self.models.values().map(|r| r.score).sum()
    }

    fn entry(&mut self, model: &ModelId) -> Result<&mut ModelRecord, PolicyError> {
        self.models
            .get_mut(model)
            .ok_or_else(|| PolicyError::UnknownModel(model.clone()))
    }

    /// Credits one test round to `model`; returns the applied delta.
    pub fn apply_test_reward(&mut self, model: &ModelId, verdict: TierVerdict) -> Result<f64, PolicyError> {
        let delta = verdict.reward();
        self.entry(model)?.score += delta;
        Ok(delta)
    }

    pub fn record_elapsed(&mut self, model: &ModelId, seconds: f64) -> Result<(), PolicyError> {
        self.entry(model)?.elapsed_s += seconds;
        Ok(())
    }

    /// Books a finished session against the model that closed it.
    pub fn record_session(
        &mut self,
        model: &ModelId,
        solved_at_loop: Option<usize>,
    ) -> Result<(), PolicyError> {
        let max_loops = self.max_loops;
        let rec = self.entry(model)?;
        match solved_at_loop {
            Some(k) if (1..=max_loops).contains(&k) => rec.loop_histogram[k - 1] += 1,
            _ => rec.failures += 1,
        }
        Ok(())
    }

    /// Folds another shard into this one. Unknown models are added.
    pub fn merge(&mut self, other: &RewardLedger) {
        for (model, theirs) in &other.models {
            let max_loops = self.max_loops.max(theirs.loop_histogram.len());
            let ours = self
                .models
                .entry(model.clone())
                .or_insert_with(|| ModelRecord::new(max_loops));
            ours.score += theirs.score;
            ours.elapsed_s += theirs.elapsed_s;
            ours.failures += theirs.failures;
            if ours.loop_histogram.len() < theirs.loop_histogram.len() {
                ours.loop_histogram.resize(theirs.loop_histogram.len(), 0);
            }
            for (o, t) in ours.loop_histogram.iter_mut().zip(&theirs.loop_histogram) {
                *o += t;
            }
        }
        self.max_loops = self.max_loops.max(other.max_loops);
    }
}

/// Derives profiles from one fixed-model benchmark report per model.
///
/// Cumulative rewards and average running times are each normalized across
/// models and then passed through [`logistic_weight`].
pub fn calibrate_profiles(
    reports: &[BenchReport],
    stability: &BTreeMap<ModelId, f64>,
    default_stability: f64,
) -> Result<BTreeMap<ModelId, LlmProfile>, PolicyError> {
    if reports.is_empty() {
        return Err(PolicyError::EmptyProfiles);
    }
    let mut models = Vec::with_capacity(reports.len());
    for report in reports {
        match &report.method {
            Method::Fixed { model } => {
                if models.contains(model) {
                    return Err(PolicyError::DuplicateReport(model.clone()));
                }
                models.push(model.clone());
            }
            other => return Err(PolicyError::NotFixedModel(other.label())),
        }
    }
    let task_set =
        |r: &BenchReport| -> BTreeSet<String> { r.rows.iter().map(|row| row.task_id.clone()).collect() };
    let first = task_set(&reports[0]);
    if reports[1..].iter().any(|r| task_set(r) != first) {
        return Err(PolicyError::MismatchedCorpora);
    }

    let rewards: Vec<f64> = reports.iter().map(|r| r.cumulative_reward).collect();
    let times: Vec<f64> = reports.iter().map(|r| r.average_running_time).collect();
    let reward_w = normalize_linear(&rewards)?;
    let time_w = normalize_linear(&times)?;

    let mut profiles = BTreeMap::new();
    for (i, model) in models.into_iter().enumerate() {
        let profile = LlmProfile {
            reward_weight: logistic_weight(reward_w[i]),
            time_weight: logistic_weight(time_w[i]),
            stability: stability.get(&model).copied().unwrap_or(default_stability),
        };
        profile.validate(&model)?;
        profiles.insert(model, profile);
    }
    Ok(profiles)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(s: &str) -> ModelId {
        ModelId::from(s)
    }

    fn profile(r: f64, t: f64, s: f64) -> LlmProfile {
        LlmProfile {
            reward_weight: r,
            time_weight: t,
            stability: s,
        }
    }

    #[test]
    fn normalize_examples() {
        let third = 1.0 / 3.0;
        assert_eq!(normalize_linear(&[1.0, 1.0, 1.0]).unwrap(), vec![third; 3]);
        assert_eq!(normalize_linear(&[1.0, 1.0, 2.0]).unwrap(), vec![0.25, 0.25, 0.5]);
        let same = normalize_linear(&[0.2, 0.3, 0.5]).unwrap();
        for (a, b) in same.iter().zip([0.2, 0.3, 0.5]) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn normalize_rejects_non_positive() {
        assert_eq!(
            normalize_linear(&[1.0, 0.0, 2.0]),
            Err(PolicyError::NonPositiveInput(0.0))
        );
        assert_eq!(
            normalize_linear(&[1.0, -3.0, 2.0]),
            Err(PolicyError::NonPositiveInput(-3.0))
        );
        assert_eq!(normalize_linear(&[]), Err(PolicyError::EmptyInput));
    }

    #[test]
    fn logistic_reference_points() {
        assert_eq!(logistic_weight(0.5), 0.5);
        assert!((logistic_weight(1.0) - 0.731_058_578_630_004_9).abs() < 1e-12);
        assert!((logistic_weight(0.0) - 0.268_941_421_369_995_1).abs() < 1e-12);
    }

    #[test]
    fn initial_model_bands() {
        let ranking = [m("spark"), m("llama"), m("ernie")];
        let pick = |len| initial_model_by_length(len, (200, 400), &ranking).unwrap();
        assert_eq!(pick(10), m("spark"));
        assert_eq!(pick(200), m("spark"));
        assert_eq!(pick(201), m("llama"));
        assert_eq!(pick(400), m("llama"));
        assert_eq!(pick(401), m("ernie"));
        assert_eq!(
            initial_model_by_length(5, (400, 400), &ranking),
            Err(PolicyError::InvalidThresholds(400, 400))
        );
        assert_eq!(
            initial_model_by_length(5, (1, 2), &ranking[..2]),
            Err(PolicyError::InvalidRanking(2))
        );
    }

    #[test]
    fn singleton_profile_wins() {
        let profiles = BTreeMap::from([(m("only"), profile(0.1, 0.9, 0.5))]);
        let pick = select_model(
            10,
            0.0,
            &m("only"),
            &profiles,
            &ParameterWeights::default(),
            &TieBreak::default(),
        );
        assert_eq!(pick.unwrap(), m("only"));
    }

    #[test]
    fn empty_profiles_and_bad_run_time() {
        let w = ParameterWeights::default();
        let tb = TieBreak::default();
        assert_eq!(
            select_model(1, 0.0, &m("a"), &BTreeMap::new(), &w, &tb),
            Err(PolicyError::EmptyProfiles)
        );
        let profiles = BTreeMap::from([(m("a"), profile(0.5, 0.5, 0.9))]);
        assert!(matches!(
            select_model(1, -1.0, &m("a"), &profiles, &w, &tb),
            Err(PolicyError::InvalidRunTime(_))
        ));
    }

    #[test]
    fn exact_tie_goes_to_lexicographic_first() {
        let profiles = BTreeMap::from([(m("b"), profile(0.4, 0.1, 1.0)), (m("a"), profile(0.4, 0.1, 1.0))]);
        let w = ParameterWeights::default();
        assert_eq!(
            select_model(100, 5.0, &m("none"), &profiles, &w, &TieBreak::Lexicographic).unwrap(),
            m("a")
        );
        let ordered = TieBreak::Ordered(vec![m("b")]);
        assert_eq!(
            select_model(100, 5.0, &m("none"), &profiles, &w, &ordered).unwrap(),
            m("b")
        );
    }

    #[test]
    fn reward_point_values() {
        let v = |b, c| TierVerdict {
            basic_passed: b,
            challenge_passed: c,
        };
        assert_eq!(v(true, true).reward(), 5.0);
        assert_eq!(v(false, false).reward(), -0.7);
        assert_eq!(v(true, false).reward(), 1.8);
        assert_eq!(v(false, true).reward(), 2.5);
    }

    #[test]
    fn ledger_rejects_unknown_model() {
        let mut ledger = RewardLedger::new([&m("a")], 5);
        let verdict = TierVerdict {
            basic_passed: true,
            challenge_passed: true,
        };
        assert_eq!(
            ledger.apply_test_reward(&m("zzz"), verdict),
            Err(PolicyError::UnknownModel(m("zzz")))
        );
        assert_eq!(ledger.apply_test_reward(&m("a"), verdict), Ok(5.0));
        assert_eq!(ledger.record(&m("a")).unwrap().score, 5.0);
    }

    #[test]
    fn ledger_histogram_and_merge() {
        let mut a = RewardLedger::new([&m("x")], 5);
        a.record_session(&m("x"), Some(2)).unwrap();
        a.record_session(&m("x"), None).unwrap();
        a.record_elapsed(&m("x"), 1.5).unwrap();
        let mut b = RewardLedger::new([&m("x"), &m("y")], 5);
        b.record_session(&m("x"), Some(2)).unwrap();
        b.record_session(&m("y"), Some(1)).unwrap();
        a.merge(&b);
        let x = a.record(&m("x")).unwrap();
        assert_eq!(x.loop_histogram, vec![0, 2, 0, 0, 0]);
        assert_eq!(x.failures, 1);
        assert_eq!(x.elapsed_s, 1.5);
        assert_eq!(a.record(&m("y")).unwrap().loop_histogram[0], 1);
    }

    #[test]
    fn profile_and_weight_validation() {
        assert!(profile(0.5, 0.5, 1.0).validate(&m("a")).is_ok());
        assert!(profile(1.5, 0.5, 1.0).validate(&m("a")).is_err());
        assert!(profile(0.5, -0.1, 1.0).validate(&m("a")).is_err());
        assert!(profile(0.5, 0.5, 0.0).validate(&m("a")).is_err());
        assert!(ParameterWeights::default().validate().is_ok());
        let zero = ParameterWeights {
            length: 0.0,
            reward: 0.0,
            time: 0.0,
            run_time: 0.0,
        };
        assert!(zero.validate().is_err());
    }
}
