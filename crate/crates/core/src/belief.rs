//! Discrete belief over a fixed hypothesis set of unit-norm reward weights.
//!
//! Weights are held in log space and renormalized after every update, so long
//! answer sequences with sharp likelihoods neither underflow nor drift.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{RewardWeights, FEATURE_COUNT};
use crate::math::log_sum_exp;
use crate::observation::{self, Answer, Query, RationalityParams};
use crate::rng;

/// Dot-product threshold for a hypothesis to count as close to the truth.
pub const DEFAULT_CLOSE_THRESHOLD: f64 = 0.9;

/// Tolerance on `log_sum_exp(log_weights) == 0`.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Two hypotheses closer than this (by `1 - dot`) are treated as duplicates.
const DISTINCT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BeliefError {
    #[error("hypothesis set needs at least 2 hypotheses, got {0}")]
    TooFewHypotheses(usize),
    #[error("hypotheses {0} and {1} coincide")]
    DuplicateHypothesis(usize, usize),
    #[error("every hypothesis has zero likelihood under this answer")]
    DegenerateUpdate,
    #[error("ground truth requested but none was injected into the hypothesis set")]
    MissingGroundTruth,
    #[error("log weights do not match the hypothesis set: {0}")]
    InvalidWeights(String),
}

/// How a hypothesis set was generated; enough to regenerate it exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HypothesisSpec {
    pub sampled: usize,
    pub seed: u64,
    /// Appended after the sampled hypotheses when present.
    pub injected: Option<RewardWeights>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisSet {
    thetas: Vec<RewardWeights>,
    /// `None` for explicit hypothesis lists, which cannot be regenerated.
    spec: Option<HypothesisSpec>,
    seed: u64,
    injected_gt: Option<usize>,
    /// Seeded rank of each index, used to break exact ties.
    tie_rank: Vec<u32>,
}

/// Uniform sample on the unit sphere in feature space.
pub fn sample_unit_sphere(rng: &mut impl Rng) -> RewardWeights {
    loop {
        let v: [f64; FEATURE_COUNT] = std::array::from_fn(|_| rng.sample(StandardNormal));
        if let Ok(w) = RewardWeights::normalized(v) {
            return w;
        }
    }
}

impl HypothesisSet {
    /// `n` hypotheses uniform on the unit sphere.
    pub fn sample(n: usize, seed: u64) -> Result<Self, BeliefError> {
        Self::from_spec(HypothesisSpec {
            sampled: n,
            seed,
            injected: None,
        })
    }

    pub fn from_spec(spec: HypothesisSpec) -> Result<Self, BeliefError> {
        let mut rng = rng::stream(spec.seed, "hypotheses", &[]);
        let mut thetas: Vec<RewardWeights> = (0..spec.sampled)
            .map(|_| sample_unit_sphere(&mut rng))
            .collect();
        let injected_gt = spec.injected.map(|gt| {
            thetas.push(gt);
            thetas.len() - 1
        });
        Self::build(thetas, Some(spec), spec.seed, injected_gt)
    }

    /// An explicit hypothesis list. `seed` only drives tie-breaking.
    pub fn from_thetas(
        thetas: Vec<RewardWeights>,
        seed: u64,
        injected_gt: Option<usize>,
    ) -> Result<Self, BeliefError> {
        if let Some(i) = injected_gt {
            if i >= thetas.len() {
                return Err(BeliefError::InvalidWeights(format!(
                    "ground-truth index {i} out of range"
                )));
            }
        }
        Self::build(thetas, None, seed, injected_gt)
    }

    /// Append `gt` to the set and mark it as the ground truth, replacing any
    /// previously injected one.
    pub fn with_ground_truth(&self, gt: RewardWeights) -> Result<Self, BeliefError> {
        match self.spec {
            Some(spec) => Self::from_spec(HypothesisSpec {
                injected: Some(gt),
                ..spec
            }),
            None => {
                let mut thetas = self.thetas.clone();
                if let Some(i) = self.injected_gt {
                    thetas.remove(i);
                }
                thetas.push(gt);
                let i = thetas.len() - 1;
                Self::build(thetas, None, self.seed, Some(i))
            }
        }
    }

    fn build(
        thetas: Vec<RewardWeights>,
        spec: Option<HypothesisSpec>,
        seed: u64,
        injected_gt: Option<usize>,
    ) -> Result<Self, BeliefError> {
        if thetas.len() < 2 {
            return Err(BeliefError::TooFewHypotheses(thetas.len()));
        }
        for i in 0..thetas.len() {
            for j in (i + 1)..thetas.len() {
                if 1.0 - thetas[i].dot(&thetas[j]) < DISTINCT_TOLERANCE {
                    return Err(BeliefError::DuplicateHypothesis(i, j));
                }
            }
        }
        let mut order: Vec<u32> = (0..thetas.len() as u32).collect();
        order.shuffle(&mut rng::stream(seed, "tie-break", &[thetas.len() as u64]));
        let mut tie_rank = vec![0u32; thetas.len()];
        for (rank, &idx) in order.iter().enumerate() {
            tie_rank[idx as usize] = rank as u32;
        }
        Ok(Self {
            thetas,
            spec,
            seed,
            injected_gt,
            tie_rank,
        })
    }

    pub fn len(&self) -> usize {
        self.thetas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.thetas.is_empty()
    }

    pub fn thetas(&self) -> &[RewardWeights] {
        &self.thetas
    }

    pub fn get(&self, i: usize) -> &RewardWeights {
        &self.thetas[i]
    }

    pub fn spec(&self) -> Option<&HypothesisSpec> {
        self.spec.as_ref()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn ground_truth_index(&self) -> Option<usize> {
        self.injected_gt
    }

    pub fn ground_truth(&self) -> Option<&RewardWeights> {
        self.injected_gt.map(|i| &self.thetas[i])
    }

    pub fn tie_rank(&self, i: usize) -> u32 {
        self.tie_rank[i]
    }
}

/// Ground-truth accuracy measures of a belief.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GroundTruthMetrics {
    pub p_gt: f64,
    pub close_mass: f64,
    pub map_dot_gt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub map_index: usize,
    pub map_theta: RewardWeights,
    pub entropy: f64,
    pub ground_truth: Option<GroundTruthMetrics>,
}

/// Immutable belief snapshot; updates return a new snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    hypotheses: Arc<HypothesisSet>,
    log_weights: Vec<f64>,
}

impl Belief {
    pub fn uniform(hypotheses: Arc<HypothesisSet>) -> Self {
        let n = hypotheses.len();
        Self {
            log_weights: vec![-(n as f64).ln(); n],
            hypotheses,
        }
    }

    /// Rebuild from stored log weights; they must already be normalized.
    pub fn from_log_weights(
        hypotheses: Arc<HypothesisSet>,
        log_weights: Vec<f64>,
    ) -> Result<Self, BeliefError> {
        if log_weights.len() != hypotheses.len() {
            return Err(BeliefError::InvalidWeights(format!(
                "{} weights for {} hypotheses",
                log_weights.len(),
                hypotheses.len()
            )));
        }
        if log_weights
            .iter()
            .any(|w| w.is_nan() || *w == f64::INFINITY)
        {
            return Err(BeliefError::InvalidWeights("NaN or +inf log weight".into()));
        }
        let lse = log_sum_exp(&log_weights);
        if !lse.is_finite() || lse.abs() > NORMALIZATION_TOLERANCE {
            return Err(BeliefError::InvalidWeights(format!(
                "log weights sum to {lse}, not 0"
            )));
        }
        Ok(Self {
            hypotheses,
            log_weights,
        })
    }

    pub fn hypotheses(&self) -> &Arc<HypothesisSet> {
        &self.hypotheses
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn len(&self) -> usize {
        self.log_weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_weights.is_empty()
    }

    pub fn probability(&self, i: usize) -> f64 {
        self.log_weights[i].exp()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    pub fn log_normalizer(&self) -> f64 {
        log_sum_exp(&self.log_weights)
    }

    /// Bayes update with arbitrary per-hypothesis log-likelihoods.
    pub fn update_with(
        &self,
        log_likelihood: impl Fn(usize) -> f64,
    ) -> Result<Belief, BeliefError> {
        let mut next: Vec<f64> = self
            .log_weights
            .iter()
            .enumerate()
            .map(|(i, &w)| {
                if w == f64::NEG_INFINITY {
                    w
                } else {
                    w + log_likelihood(i)
                }
            })
            .collect();
        if next.iter().any(|w| w.is_nan()) {
            return Err(BeliefError::DegenerateUpdate);
        }
        let lse = log_sum_exp(&next);
        if !lse.is_finite() {
            return Err(BeliefError::DegenerateUpdate);
        }
        for w in &mut next {
            *w -= lse;
        }
        Ok(Belief {
            hypotheses: Arc::clone(&self.hypotheses),
            log_weights: next,
        })
    }

    /// Posterior after observing answer `a` to query `q`. Skipped feature
    /// answers contribute only the comparison likelihood.
    pub fn update(
        &self,
        q: &Query,
        a: &Answer,
        params: &RationalityParams,
    ) -> Result<Belief, BeliefError> {
        let thetas = self.hypotheses.thetas();
        self.update_with(|i| observation::log_likelihood(&thetas[i], q, params, a))
    }

    /// Entropy in nats.
    pub fn entropy(&self) -> f64 {
        -self
            .log_weights
            .iter()
            .filter(|w| w.is_finite())
            .map(|&w| w.exp() * w)
            .sum::<f64>()
    }

    /// Highest-probability hypothesis; exact ties go to the lowest seeded rank.
    pub fn map_index(&self) -> usize {
        let hs = &self.hypotheses;
        (0..self.len())
            .max_by(|&a, &b| {
                self.log_weights[a]
                    .total_cmp(&self.log_weights[b])
                    .then_with(|| hs.tie_rank(b).cmp(&hs.tie_rank(a)))
            })
            .expect("belief is never empty")
    }

    pub fn map_theta(&self) -> &RewardWeights {
        self.hypotheses.get(self.map_index())
    }

    /// Total probability of hypotheses with `theta . reference > threshold`.
    pub fn close_mass(&self, reference: &RewardWeights, threshold: f64) -> f64 {
        self.hypotheses
            .thetas()
            .iter()
            .zip(&self.log_weights)
            .filter(|(t, _)| t.dot(reference) > threshold)
            .map(|(_, w)| w.exp())
            .sum()
    }

    /// Metrics against the injected ground truth.
    pub fn ground_truth_metrics(
        &self,
        close_threshold: f64,
    ) -> Result<GroundTruthMetrics, BeliefError> {
        let gt_index = self
            .hypotheses
            .ground_truth_index()
            .ok_or(BeliefError::MissingGroundTruth)?;
        let gt = self.hypotheses.get(gt_index);
        Ok(GroundTruthMetrics {
            p_gt: self.probability(gt_index),
            close_mass: self.close_mass(gt, close_threshold),
            map_dot_gt: self.map_theta().dot(gt),
        })
    }

    /// MAP, entropy, and (when `theta_gt` is given) ground-truth metrics.
    /// `theta_gt` must be the injected ground truth.
    pub fn summaries(
        &self,
        theta_gt: Option<&RewardWeights>,
        close_threshold: f64,
    ) -> Result<Summary, BeliefError> {
        let ground_truth = match theta_gt {
            None => None,
            Some(gt) => match self.hypotheses.ground_truth() {
                Some(injected) if injected == gt => {
                    Some(self.ground_truth_metrics(close_threshold)?)
                }
                _ => return Err(BeliefError::MissingGroundTruth),
            },
        };
        let map_index = self.map_index();
        Ok(Summary {
            map_index,
            map_theta: *self.hypotheses.get(map_index),
            entropy: self.entropy(),
            ground_truth,
        })
    }

    /// Hypothesis indices ordered by decreasing probability.
    pub fn top(&self, k: usize) -> Vec<usize> {
        let hs = &self.hypotheses;
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| {
            self.log_weights[b]
                .total_cmp(&self.log_weights[a])
                .then_with(|| hs.tie_rank(a).cmp(&hs.tie_rank(b)))
        });
        idx.truncate(k);
        idx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureVector;
    use crate::observation::{Choice, Rationality};
    use proptest::prelude::*;
    use rand::Rng;

    fn hs(n: usize, seed: u64) -> Arc<HypothesisSet> {
        Arc::new(HypothesisSet::sample(n, seed).unwrap())
    }

    fn params(bc: f64, bf: f64) -> RationalityParams {
        RationalityParams::new(
            Rationality::new(bc).unwrap(),
            Rationality::new(bf).unwrap(),
            0.0,
        )
        .unwrap()
    }

    fn query(seed: u64) -> Query {
        let mut r = rng::stream(seed, "test-query", &[]);
        let a: [f64; 7] = std::array::from_fn(|_| r.random_range(-3.0..3.0));
        let b: [f64; 7] = std::array::from_fn(|_| r.random_range(-3.0..3.0));
        Query::from_features(seed as u32, FeatureVector(a), FeatureVector(b)).unwrap()
    }

    #[test]
    fn sampled_hypotheses_are_unit_norm_and_reproducible() {
        let a = HypothesisSet::sample(200, 4).unwrap();
        let b = HypothesisSet::sample(200, 4).unwrap();
        assert_eq!(a, b);
        for t in a.thetas() {
            let n: f64 = t.values().iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert_ne!(a, HypothesisSet::sample(200, 5).unwrap());
    }

    #[test]
    fn hypothesis_set_validation() {
        assert_eq!(
            HypothesisSet::sample(1, 0).unwrap_err(),
            BeliefError::TooFewHypotheses(1)
        );
        let t = RewardWeights::basis(crate::features::Feature::Speed);
        assert_eq!(
            HypothesisSet::from_thetas(vec![t, t], 0, None).unwrap_err(),
            BeliefError::DuplicateHypothesis(0, 1)
        );
    }

    #[test]
    fn uniform_two_hypotheses() {
        let b = Belief::uniform(hs(2, 0));
        assert_eq!(b.probabilities(), vec![0.5, 0.5]);
        assert!((b.entropy() - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn uniform_entropy_is_log_n() {
        let b = Belief::uniform(hs(100, 1));
        assert!((b.entropy() - 100f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_map_is_lowest_tie_rank() {
        let h = hs(50, 3);
        let b = Belief::uniform(Arc::clone(&h));
        let expected = (0..50).find(|&i| h.tie_rank(i) == 0).unwrap();
        assert_eq!(b.map_index(), expected);
        assert_eq!(b.top(1), vec![expected]);
    }

    #[test]
    fn uninformative_answer_leaves_belief_unchanged() {
        let b = Belief::uniform(hs(40, 2));
        let q = query(1);
        let after = b
            .update(
                &q,
                &Answer::rich(Choice::A, crate::features::Feature::Speed),
                &params(0.0, 0.0),
            )
            .unwrap();
        for (x, y) in b.log_weights().iter().zip(after.log_weights()) {
            assert!((x - y).abs() < 1e-12);
        }
        // the original snapshot is untouched
        assert_eq!(b, Belief::uniform(hs(40, 2)));
    }

    #[test]
    fn three_hypothesis_bayes_table() {
        let thetas = vec![
            RewardWeights::basis(crate::features::Feature::LaneCenter),
            RewardWeights::basis(crate::features::Feature::Speed),
            RewardWeights::normalized([1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0]).unwrap(),
        ];
        let h = Arc::new(HypothesisSet::from_thetas(thetas, 0, None).unwrap());
        let q = Query::from_features(
            0,
            FeatureVector([2.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            FeatureVector([1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0]),
        )
        .unwrap();
        let p = params(1.0, 1.0);
        let post = Belief::uniform(Arc::clone(&h))
            .update(&q, &Answer::comparison_only(Choice::A), &p)
            .unwrap();
        // Reward gaps: +1, -1, +sqrt(2).
        let lik = [
            1.0 / (1.0 + (-1.0f64).exp()),
            1.0 / (1.0 + 1.0f64.exp()),
            1.0 / (1.0 + (-(2f64.sqrt())).exp()),
        ];
        let z: f64 = lik.iter().sum();
        for i in 0..3 {
            assert!((post.probability(i) - lik[i] / z).abs() < 1e-14, "{i}");
        }
    }

    #[test]
    fn all_zero_likelihood_is_an_error() {
        let h = Arc::new(
            HypothesisSet::from_thetas(
                vec![
                    RewardWeights::basis(crate::features::Feature::Speed),
                    RewardWeights::normalized([0.0, 0.0, 0.0, 0.0, 1.0, 0.1, 0.0]).unwrap(),
                ],
                0,
                None,
            )
            .unwrap(),
        );
        let q = Query::from_features(
            0,
            FeatureVector([0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0]),
            FeatureVector([0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
        )
        .unwrap();
        let oracle = RationalityParams::oracle();
        let b = Belief::uniform(h);
        assert_eq!(
            b.update(&q, &Answer::comparison_only(Choice::B), &oracle),
            Err(BeliefError::DegenerateUpdate)
        );
        assert!(b
            .update(&q, &Answer::comparison_only(Choice::A), &oracle)
            .is_ok());
    }

    #[test]
    fn ground_truth_metrics_on_uniform_belief() {
        let base = HypothesisSet::sample(99, 8).unwrap();
        let gt = RewardWeights::normalized([0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7]).unwrap();
        let h = Arc::new(base.with_ground_truth(gt).unwrap());
        let b = Belief::uniform(Arc::clone(&h));
        let m = b.ground_truth_metrics(DEFAULT_CLOSE_THRESHOLD).unwrap();
        assert!((m.p_gt - 0.01).abs() < 1e-15);
        assert!(m.close_mass >= m.p_gt);
        let brute: f64 = h
            .thetas()
            .iter()
            .enumerate()
            .filter(|(_, t)| t.dot(&gt) > 0.9)
            .map(|(i, _)| b.probability(i))
            .sum();
        assert_eq!(m.close_mass, brute);
        let s = b.summaries(Some(&gt), DEFAULT_CLOSE_THRESHOLD).unwrap();
        assert_eq!(s.ground_truth, Some(m));
    }

    #[test]
    fn missing_ground_truth_is_reported() {
        let b = Belief::uniform(hs(10, 0));
        assert_eq!(
            b.ground_truth_metrics(0.9),
            Err(BeliefError::MissingGroundTruth)
        );
        let t = RewardWeights::basis(crate::features::Feature::Speed);
        assert_eq!(
            b.summaries(Some(&t), 0.9),
            Err(BeliefError::MissingGroundTruth)
        );
        assert!(b.summaries(None, 0.9).unwrap().ground_truth.is_none());
    }

    #[test]
    fn updates_commute() {
        let b = Belief::uniform(hs(60, 11));
        let p = params(2.0, 2.5);
        let (q1, q2) = (query(3), query(4));
        let a1 = Answer::rich(Choice::A, crate::features::Feature::Heading);
        let a2 = Answer::comparison_only(Choice::B);
        let x = b
            .update(&q1, &a1, &p)
            .unwrap()
            .update(&q2, &a2, &p)
            .unwrap();
        let y = b
            .update(&q2, &a2, &p)
            .unwrap()
            .update(&q1, &a1, &p)
            .unwrap();
        for (u, v) in x.probabilities().iter().zip(y.probabilities()) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn normalization_survives_many_updates() {
        let mut b = Belief::uniform(hs(30, 12));
        let p = params(5.65, 2.5);
        let queries: Vec<Query> = (0..20).map(query).collect();
        for i in 0..10_000 {
            let q = &queries[i % queries.len()];
            let a = if i % 3 == 0 {
                Answer::comparison_only(Choice::BOTH[i % 2])
            } else {
                Answer::rich(Choice::BOTH[i % 2], crate::features::Feature::ALL[i % 7])
            };
            b = b.update(q, &a, &p).unwrap();
        }
        assert!(b.log_normalizer().abs() < NORMALIZATION_TOLERANCE);
        assert!(b.log_weights().iter().all(|w| !w.is_nan()));
    }

    #[test]
    fn from_log_weights_validates() {
        let h = hs(3, 0);
        assert!(Belief::from_log_weights(Arc::clone(&h), vec![0.0; 3]).is_err());
        assert!(Belief::from_log_weights(Arc::clone(&h), vec![0.0; 2]).is_err());
        let ok = Belief::from_log_weights(
            Arc::clone(&h),
            vec![0.0, f64::NEG_INFINITY, f64::NEG_INFINITY],
        )
        .unwrap();
        assert_eq!(ok.map_index(), 0);
        assert_eq!(ok.entropy(), 0.0);
    }

    proptest! {
        #[test]
        fn entropy_is_bounded(seed in 0u64..200, answers in prop::collection::vec((0usize..14, 0u64..50), 1..8)) {
            let mut b = Belief::uniform(hs(25, seed));
            let p = params(3.0, 2.0);
            for (a, qs) in answers {
                b = b.update(&query(qs), &Answer::from_table_index(a), &p).unwrap();
            }
            let e = b.entropy();
            prop_assert!(e >= -1e-12 && e <= 25f64.ln() + 1e-12);
        }

        #[test]
        fn update_is_deterministic(seed in 0u64..100, a in 0usize..14) {
            let b = Belief::uniform(hs(20, seed));
            let q = query(seed);
            let p = params(2.0, 2.5);
            let x = b.update(&q, &Answer::from_table_index(a), &p).unwrap();
            let y = b.update(&q, &Answer::from_table_index(a), &p).unwrap();
            prop_assert_eq!(x, y);
        }
    }
}
