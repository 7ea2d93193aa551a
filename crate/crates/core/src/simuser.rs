//! Simulated answerers and maximum-likelihood estimation of rationality
//! coefficients from answer logs.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{Feature, FeatureVector, RewardWeights, FEATURE_COUNT};
use crate::math::{log_sigmoid, log_sum_exp};
use crate::observation::{
    is_near_uniform, p_comparison, p_feature, Answer, Choice, Query, QueryId, Rationality,
};
use crate::rng;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EstimateError {
    #[error("answer log is empty")]
    EmptyLog,
    #[error("answer log has no feature answers")]
    NoFeatureAnswers,
    #[error("invalid estimation grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimUserConfig {
    pub theta_gt: RewardWeights,
    pub beta_c: Rationality,
    pub beta_f: Rationality,
    /// Skip band half-width. Zero disables skipping.
    pub epsilon: f64,
    pub seed: u64,
}

/// A seeded answerer. Comparison and feature draws come from separate
/// streams, and each answer consumes exactly one draw from each, so two users
/// with the same seed see the same comparison noise whether or not they are
/// asked the feature question.
#[derive(Debug, Clone)]
pub struct SimulatedUser {
    cfg: SimUserConfig,
    comparison_rng: ChaCha8Rng,
    feature_rng: ChaCha8Rng,
}

impl SimulatedUser {
    pub fn new(cfg: SimUserConfig) -> Self {
        Self {
            comparison_rng: rng::stream(cfg.seed, "user-comparison", &[]),
            feature_rng: rng::stream(cfg.seed, "user-feature", &[]),
            cfg,
        }
    }

    pub fn config(&self) -> &SimUserConfig {
        &self.cfg
    }

    /// Sample an answer. Infinite rationality answers by argmax; exact ties
    /// are split uniformly by the draw. With `ask_feature` false the answer
    /// carries no feature.
    pub fn answer(&mut self, q: &Query, ask_feature: bool) -> Answer {
        let theta = &self.cfg.theta_gt;
        let u: f64 = self.comparison_rng.random();
        let comparison = if u < p_comparison(theta, q, self.cfg.beta_c) {
            Choice::A
        } else {
            Choice::B
        };
        let v: f64 = self.feature_rng.random();
        if !ask_feature {
            return Answer::comparison_only(comparison);
        }
        let p = p_feature(theta, q, self.cfg.beta_f);
        if self.cfg.epsilon > 0.0 && is_near_uniform(&p, self.cfg.epsilon) {
            return Answer::comparison_only(comparison);
        }
        Answer::rich(comparison, sample_categorical(&p, v))
    }
}

fn sample_categorical(p: &[f64; FEATURE_COUNT], u: f64) -> Feature {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            last = i;
            acc += pi;
            if u < acc {
                return Feature::ALL[i];
            }
        }
    }
    // Rounding left the cumulative sum just below one.
    Feature::ALL[last]
}

/// One answered query with the standardized features it was shown with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogEntry {
    pub query_id: QueryId,
    pub answer: Answer,
    pub phi_a: FeatureVector,
    pub phi_b: FeatureVector,
}

impl LogEntry {
    pub fn new(q: &Query, answer: Answer) -> Self {
        Self {
            query_id: q.id,
            answer,
            phi_a: q.phi_a,
            phi_b: q.phi_b,
        }
    }

    pub fn delta(&self) -> FeatureVector {
        self.phi_a - self.phi_b
    }
}

/// Append-only record of answers.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnswerLog {
    entries: Vec<LogEntry>,
}

impl AnswerLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: LogEntry) {
        self.entries.push(entry);
    }

    pub fn record(&mut self, q: &Query, answer: Answer) {
        self.push(LogEntry::new(q, answer));
    }

    pub fn entries(&self) -> &[LogEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn extend(&mut self, other: &AnswerLog) {
        self.entries.extend_from_slice(&other.entries);
    }
}

impl FromIterator<LogEntry> for AnswerLog {
    fn from_iter<I: IntoIterator<Item = LogEntry>>(iter: I) -> Self {
        Self {
            entries: iter.into_iter().collect(),
        }
    }
}

/// Log-spaced search grid for β.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaGrid {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for BetaGrid {
    fn default() -> Self {
        Self {
            min: 1e-3,
            max: 1e3,
            points: 4000,
        }
    }
}

impl BetaGrid {
    pub fn values(&self) -> Result<Vec<f64>, EstimateError> {
        if !(self.min > 0.0 && self.max > self.min && self.max.is_finite()) || self.points < 2 {
            return Err(EstimateError::InvalidGrid(format!("{self:?}")));
        }
        let (lo, hi) = (self.min.ln(), self.max.ln());
        let n = (self.points - 1) as f64;
        let mut v: Vec<f64> = (0..self.points)
            .map(|i| (lo + (hi - lo) * i as f64 / n).exp())
            .collect();
        v[0] = self.min;
        v[self.points - 1] = self.max;
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaEstimate {
    pub value: f64,
    pub log_likelihood: f64,
    /// The maximum sits on the lowest grid point.
    pub at_lower_bound: bool,
    /// The maximum sits on the highest grid point.
    pub at_upper_bound: bool,
    /// Every informative comparison agrees with `theta_star`, so the
    /// likelihood increases without bound and the estimate is the grid
    /// maximum.
    pub separable: bool,
}

fn grid_argmax(grid: &[f64], ll: impl Fn(f64) -> f64 + Sync) -> (usize, f64) {
    let values: Vec<f64> = grid.par_iter().map(|&b| ll(b)).collect();
    let mut best = (0, f64::NEG_INFINITY);
    for (i, &v) in values.iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best
}

fn estimate(grid: &[f64], ll: impl Fn(f64) -> f64 + Sync, separable: bool) -> BetaEstimate {
    let (i, v) = grid_argmax(grid, ll);
    BetaEstimate {
        value: grid[i],
        log_likelihood: v,
        at_lower_bound: i == 0,
        at_upper_bound: i + 1 == grid.len(),
        separable,
    }
}

/// Comparison-stage MLE: maximize `Σ log σ(I_i β θ*·ΔΦ_i)` over the grid,
/// with `I_i = +1` when A was chosen.
pub fn estimate_beta_c(
    log: &AnswerLog,
    theta_star: &RewardWeights,
    grid: &BetaGrid,
) -> Result<BetaEstimate, EstimateError> {
    if log.is_empty() {
        return Err(EstimateError::EmptyLog);
    }
    let margins: Vec<f64> = log
        .entries()
        .iter()
        .map(|e| {
            e.answer.comparison.sign()
                * theta_star
                    .values()
                    .iter()
                    .zip(e.delta().0)
                    .map(|(t, d)| t * d)
                    .sum::<f64>()
        })
        .collect();
    let separable = margins.iter().any(|&m| m > 0.0) && margins.iter().all(|&m| m >= 0.0);
    let grid = grid.values()?;
    Ok(estimate(
        &grid,
        |b| margins.iter().map(|&m| log_sigmoid(b * m)).sum(),
        separable,
    ))
}

/// Feature-stage MLE with the comparison stage held fixed. In the decoupled
/// form the feature likelihood does not involve `beta_c`, so `_beta_c_star`
/// only documents the two-stage order. Skipped answers are ignored.
pub fn estimate_beta_f(
    log: &AnswerLog,
    theta_star: &RewardWeights,
    _beta_c_star: f64,
    grid: &BetaGrid,
) -> Result<BetaEstimate, EstimateError> {
    if log.is_empty() {
        return Err(EstimateError::EmptyLog);
    }
    let rows: Vec<([f64; FEATURE_COUNT], usize)> = log
        .entries()
        .iter()
        .filter_map(|e| {
            let f = e.answer.feature?;
            let d = e.delta();
            let s = std::array::from_fn(|k| (theta_star.values()[k] * d.0[k]).abs());
            Some((s, f.index()))
        })
        .collect();
    if rows.is_empty() {
        return Err(EstimateError::NoFeatureAnswers);
    }
    let grid = grid.values()?;
    let ll = |b: f64| {
        rows.iter()
            .map(|(s, f)| {
                let logits = s.map(|v| b * v);
                logits[*f] - log_sum_exp(&logits)
            })
            .sum()
    };
    // Separation here means the chosen feature is always the unique most
    // salient one.
    let separable = rows
        .iter()
        .all(|(s, f)| s.iter().enumerate().all(|(k, &v)| k == *f || v < s[*f]));
    Ok(estimate(&grid, ll, separable))
}

/// Both stages in order: `beta_c` first, then `beta_f` given it.
pub fn estimate_betas(
    log: &AnswerLog,
    theta_star: &RewardWeights,
    grid: &BetaGrid,
) -> Result<(BetaEstimate, Result<BetaEstimate, EstimateError>), EstimateError> {
    let c = estimate_beta_c(log, theta_star, grid)?;
    let f = estimate_beta_f(log, theta_star, c.value, grid);
    Ok((c, f))
}

/// Per-mode comparison rationality used by simulations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaPreset {
    pub comparison_only: Rationality,
    pub rich: Rationality,
}

impl BetaPreset {
    /// Pilot-study averages: 1.6 for comparison-only, 5.65 for rich.
    pub fn for_mode(&self, comparison_only: bool) -> Rationality {
        if comparison_only {
            self.comparison_only
        } else {
            self.rich
        }
    }

    pub fn pilot() -> Self {
        Self {
            comparison_only: Rationality::new(1.6).expect("finite"),
            rich: Rationality::new(5.65).expect("finite"),
        }
    }

    /// The second value pair (5 and 2), with the larger value on rich queries
    /// as in the pilot pair.
    pub fn figure() -> Self {
        Self {
            comparison_only: Rationality::new(2.0).expect("finite"),
            rich: Rationality::new(5.0).expect("finite"),
        }
    }

    /// The second value pair under the opposite assignment: 5 for
    /// comparison-only, 2 for rich.
    pub fn figure_as_labeled() -> Self {
        Self::figure().swapped()
    }

    pub fn swapped(self) -> Self {
        Self {
            comparison_only: self.rich,
            rich: self.comparison_only,
        }
    }

    /// The same value for both modes.
    pub fn common(beta_c: Rationality) -> Self {
        Self {
            comparison_only: beta_c,
            rich: beta_c,
        }
    }
}

/// Default feature rationality for simulations.
pub const DEFAULT_BETA_F: f64 = 2.5;
