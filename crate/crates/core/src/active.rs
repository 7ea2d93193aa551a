//! Query selection by expected volume removal.
//!
//! With belief weights `b` and per-hypothesis answer probabilities
//! `P(a|θ,q)`, define the marginal `m_a = Σ_θ b(θ) P(a|θ,q)`. The volume an
//! answer removes is `1 - m_a`, so the expected volume is `Σ_a m_a (1 - m_a)`.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{Belief, HypothesisSet};
use crate::features::FEATURE_COUNT;
use crate::observation::{
    p_answer, p_comparison, Answer, AnswerProbabilities, Choice, Query, QueryId, RationalityParams,
    ANSWER_COUNT,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ActiveError {
    #[error("every query in the pool has been asked")]
    PoolExhausted,
    #[error("selection mode {0:?} is not supported")]
    UnsupportedMode(String),
    #[error("unknown selection mode {0:?}")]
    UnknownMode(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Comparison plus feature answers.
    Rich,
    /// Comparison answers only.
    ComparisonOnly,
    /// Rich answers, scoring the possibility that the feature part is skipped.
    RichWithSkip,
}

impl SelectionMode {
    pub const ALL: [SelectionMode; 3] = [
        SelectionMode::Rich,
        SelectionMode::ComparisonOnly,
        SelectionMode::RichWithSkip,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMode::Rich => "rich",
            SelectionMode::ComparisonOnly => "comparison_only",
            SelectionMode::RichWithSkip => "rich_with_skip",
        }
    }

    /// Whether users are asked the feature question in this mode.
    pub fn asks_feature(self) -> bool {
        !matches!(self, SelectionMode::ComparisonOnly)
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionMode {
    type Err = ActiveError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        match norm.as_str() {
            "rich" => Ok(SelectionMode::Rich),
            "comparison_only" | "comparison" => Ok(SelectionMode::ComparisonOnly),
            "rich_with_skip" | "skip_aware" => Ok(SelectionMode::RichWithSkip),
            "information_gain" | "info_gain" => Err(ActiveError::UnsupportedMode(s.to_string())),
            _ => Err(ActiveError::UnknownMode(s.to_string())),
        }
    }
}

/// `E_θ[1 - P(a|θ,q)]` for a full answer. For a skip answer this is the
/// comparison-only volume `E_θ[1 - P(c|θ,q)]`.
pub fn volume_removed(b: &Belief, q: &Query, a: &Answer, params: &RationalityParams) -> f64 {
    let hs = b.hypotheses();
    (0..b.len())
        .map(|i| {
            let theta = hs.get(i);
            let p = match p_answer(theta, q, params, a) {
                Some(p) => p,
                None => comparison_prob(p_comparison(theta, q, params.beta_c), a.comparison),
            };
            b.probability(i) * (1.0 - p)
        })
        .sum()
}

fn comparison_prob(p_a: f64, c: Choice) -> f64 {
    match c {
        Choice::A => p_a,
        Choice::B => 1.0 - p_a,
    }
}

/// Accumulates the marginals needed by every criterion.
#[derive(Debug, Clone, Copy)]
struct Marginals {
    joint: [f64; ANSWER_COUNT],
    comparison: [f64; 2],
    skip_comparison: [f64; 2],
    noskip_joint: [f64; ANSWER_COUNT],
}

impl Marginals {
    fn new() -> Self {
        Self {
            joint: [0.0; ANSWER_COUNT],
            comparison: [0.0; 2],
            skip_comparison: [0.0; 2],
            noskip_joint: [0.0; ANSWER_COUNT],
        }
    }

    fn add(&mut self, w: f64, p: &AnswerProbabilities, mode: SelectionMode) {
        for c in 0..2 {
            self.comparison[c] += w * p.comparison[c];
        }
        match mode {
            SelectionMode::ComparisonOnly => {}
            SelectionMode::Rich => {
                for (i, m) in self.joint.iter_mut().enumerate() {
                    *m += w * p.joint(i);
                }
            }
            SelectionMode::RichWithSkip => {
                for (i, m) in self.joint.iter_mut().enumerate() {
                    *m += w * p.joint(i);
                }
                if p.skip {
                    for c in 0..2 {
                        self.skip_comparison[c] += w * p.comparison[c];
                    }
                } else {
                    for (i, m) in self.noskip_joint.iter_mut().enumerate() {
                        *m += w * p.joint(i);
                    }
                }
            }
        }
    }

    fn score(&self, mode: SelectionMode) -> f64 {
        let ev = |m: &[f64]| m.iter().map(|x| x * (1.0 - x)).sum::<f64>();
        match mode {
            SelectionMode::ComparisonOnly => ev(&self.comparison),
            SelectionMode::Rich => ev(&self.joint),
            SelectionMode::RichWithSkip => {
                let skip: f64 = (0..2)
                    .map(|c| self.skip_comparison[c] * (1.0 - self.comparison[c]))
                    .sum();
                let full: f64 = (0..ANSWER_COUNT)
                    .map(|i| self.noskip_joint[i] * (1.0 - self.joint[i]))
                    .sum();
                skip + full
            }
        }
    }
}

fn score_with(
    b: &Belief,
    mode: SelectionMode,
    probs: impl Fn(usize) -> AnswerProbabilities,
) -> f64 {
    let mut m = Marginals::new();
    for i in 0..b.len() {
        let w = b.probability(i);
        if w > 0.0 {
            m.add(w, &probs(i), mode);
        }
    }
    m.score(mode)
}

/// Expected volume removed over the 14 rich answers.
pub fn expected_volume(b: &Belief, q: &Query, params: &RationalityParams) -> f64 {
    criterion(b, q, params, SelectionMode::Rich)
}

/// Expected volume removed over the two comparison answers.
pub fn expected_volume_comparison(b: &Belief, q: &Query, params: &RationalityParams) -> f64 {
    criterion(b, q, params, SelectionMode::ComparisonOnly)
}

/// Expected volume when hypotheses whose feature distribution is within
/// `epsilon` of uniform answer with a skip, which only removes comparison
/// volume.
pub fn expected_volume_with_skip(b: &Belief, q: &Query, params: &RationalityParams) -> f64 {
    criterion(b, q, params, SelectionMode::RichWithSkip)
}

pub fn criterion(b: &Belief, q: &Query, params: &RationalityParams, mode: SelectionMode) -> f64 {
    let hs = b.hypotheses();
    score_with(b, mode, |i| {
        AnswerProbabilities::compute(hs.get(i), q, params)
    })
}

fn argmax_unasked(
    scores: &[f64],
    queries: &[Query],
    asked: &BTreeSet<QueryId>,
) -> Result<QueryId, ActiveError> {
    let mut best: Option<(f64, QueryId)> = None;
    for (q, &s) in queries.iter().zip(scores) {
        if asked.contains(&q.id) || s.is_nan() {
            continue;
        }
        let better = match best {
            None => true,
            Some((bs, bid)) => s > bs || (s == bs && q.id < bid),
        };
        if better {
            best = Some((s, q.id));
        }
    }
    best.map(|(_, id)| id).ok_or(ActiveError::PoolExhausted)
}

/// Highest-scoring unasked query under `mode`; ties go to the lowest id.
pub fn select_query(
    b: &Belief,
    queries: &[Query],
    params: &RationalityParams,
    mode: SelectionMode,
    asked: &BTreeSet<QueryId>,
) -> Result<QueryId, ActiveError> {
    let scores: Vec<f64> = queries
        .par_iter()
        .map(|q| {
            if asked.contains(&q.id) {
                f64::NAN
            } else {
                criterion(b, q, params, mode)
            }
        })
        .collect();
    argmax_unasked(&scores, queries, asked)
}

/// Answer probabilities for every (query, hypothesis) pair, stored
/// query-major. Lets repeated selections skip recomputing the models.
#[derive(Debug, Clone)]
pub struct LikelihoodTable {
    hypotheses: usize,
    params: RationalityParams,
    rows: Vec<AnswerProbabilities>,
}

impl LikelihoodTable {
    pub fn build(hs: &HypothesisSet, queries: &[Query], params: &RationalityParams) -> Self {
        let n = hs.len();
        let rows = queries
            .par_iter()
            .flat_map_iter(|q| {
                hs.thetas()
                    .iter()
                    .map(move |t| AnswerProbabilities::compute(t, q, params))
            })
            .collect();
        Self {
            hypotheses: n,
            params: *params,
            rows,
        }
    }

    pub fn params(&self) -> &RationalityParams {
        &self.params
    }

    pub fn query_count(&self) -> usize {
        self.rows.len() / self.hypotheses.max(1)
    }

    pub fn get(&self, query_index: usize, hypothesis: usize) -> &AnswerProbabilities {
        &self.rows[query_index * self.hypotheses + hypothesis]
    }

    /// Criterion for the query at `query_index` of the slice the table was
    /// built from.
    pub fn score(&self, b: &Belief, query_index: usize, mode: SelectionMode) -> f64 {
        assert_eq!(
            b.len(),
            self.hypotheses,
            "belief and table disagree on hypothesis count"
        );
        let row = &self.rows[query_index * self.hypotheses..(query_index + 1) * self.hypotheses];
        score_with(b, mode, |i| row[i])
    }

    pub fn select(
        &self,
        b: &Belief,
        queries: &[Query],
        mode: SelectionMode,
        asked: &BTreeSet<QueryId>,
    ) -> Result<QueryId, ActiveError> {
        assert_eq!(
            queries.len(),
            self.query_count(),
            "table built for a different query list"
        );
        let scores: Vec<f64> = (0..queries.len())
            .into_par_iter()
            .map(|k| {
                if asked.contains(&queries[k].id) {
                    f64::NAN
                } else {
                    self.score(b, k, mode)
                }
            })
            .collect();
        argmax_unasked(&scores, queries, asked)
    }
}

/// Direct enumeration of the criteria, answer by answer. Slow; used to check
/// the marginal formulation.
pub mod reference {
    use super::*;

    fn weights(b: &Belief) -> Vec<f64> {
        b.probabilities()
    }

    fn p_full(b: &Belief, q: &Query, params: &RationalityParams, i: usize, a: &Answer) -> f64 {
        p_answer(b.hypotheses().get(i), q, params, a).expect("full answer")
    }

    fn p_comp(b: &Belief, q: &Query, params: &RationalityParams, i: usize, c: Choice) -> f64 {
        comparison_prob(p_comparison(b.hypotheses().get(i), q, params.beta_c), c)
    }

    fn all_answers() -> Vec<Answer> {
        (0..2 * FEATURE_COUNT)
            .map(Answer::from_table_index)
            .collect()
    }

    pub fn expected_volume(b: &Belief, q: &Query, params: &RationalityParams) -> f64 {
        let w = weights(b);
        let mut total = 0.0;
        for a in all_answers() {
            let v = volume_removed(b, q, &a, params);
            for (i, wi) in w.iter().enumerate() {
                total += wi * p_full(b, q, params, i, &a) * v;
            }
        }
        total
    }

    pub fn expected_volume_comparison(b: &Belief, q: &Query, params: &RationalityParams) -> f64 {
        let w = weights(b);
        let mut total = 0.0;
        for c in Choice::BOTH {
            let v = volume_removed(b, q, &Answer::comparison_only(c), params);
            for (i, wi) in w.iter().enumerate() {
                total += wi * p_comp(b, q, params, i, c) * v;
            }
        }
        total
    }

    pub fn expected_volume_with_skip(b: &Belief, q: &Query, params: &RationalityParams) -> f64 {
        let w = weights(b);
        let mut total = 0.0;
        for (i, wi) in w.iter().enumerate() {
            let theta = b.hypotheses().get(i);
            let inner = if crate::observation::p_skip(theta, q, params) {
                Choice::BOTH
                    .iter()
                    .map(|&c| {
                        p_comp(b, q, params, i, c)
                            * volume_removed(b, q, &Answer::comparison_only(c), params)
                    })
                    .sum::<f64>()
            } else {
                all_answers()
                    .iter()
                    .map(|a| p_full(b, q, params, i, a) * volume_removed(b, q, a, params))
                    .sum()
            };
            total += wi * inner;
        }
        total
    }
}
