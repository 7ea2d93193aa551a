//! Noisily-rational models of how a person answers a rich query.
//!
//! A rich answer is a comparison `c` (which trajectory is better) and an
//! optional feature `f` (which feature explains the difference best). Given
//! the reward weights both parts are modeled as conditionally independent:
//!
//! * comparison: logistic in `beta_c * (R_A - R_B)`;
//! * feature: softmax over `beta_f * |theta_f * (Phi_A,f - Phi_B,f)|`;
//! * skip: the person declines the feature part whenever the feature
//!   distribution lies within `+-epsilon` of uniform.
//!
//! `beta = inf` is the argmax limit. Feature vectors carried by a [`Query`]
//! are already standardized by the pool's feature scales.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{reward, Feature, FeatureVector, RewardWeights, FEATURE_COUNT};
use crate::math;

pub const ANSWER_COUNT: usize = 2 * FEATURE_COUNT;

/// Minimum sup-norm separation between the two trajectories of a query.
pub const MIN_QUERY_SEPARATION: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservationError {
    #[error("rationality coefficient must be >= 0 or inf, got {0}")]
    InvalidRationality(f64),
    #[error("skip half-width must lie in [0, 1/7], got {0}")]
    InvalidEpsilon(f64),
    #[error("query {0}: trajectories have identical features")]
    IndistinctQuery(u32),
    #[error("query {0}: non-finite features")]
    NonFiniteQuery(u32),
}

/// Which trajectory was preferred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
}

impl Choice {
    pub const BOTH: [Choice; 2] = [Choice::A, Choice::B];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn other(self) -> Choice {
        match self {
            Choice::A => Choice::B,
            Choice::B => Choice::A,
        }
    }

    /// `+1` for A, `-1` for B.
    pub fn sign(self) -> f64 {
        match self {
            Choice::A => 1.0,
            Choice::B => -1.0,
        }
    }
}

/// An answer: the comparison is always present; the feature is absent when
/// the person skipped (or was never asked).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Answer {
    pub comparison: Choice,
    pub feature: Option<Feature>,
}

impl Answer {
    pub fn rich(comparison: Choice, feature: Feature) -> Self {
        Self {
            comparison,
            feature: Some(feature),
        }
    }

    pub fn comparison_only(comparison: Choice) -> Self {
        Self {
            comparison,
            feature: None,
        }
    }

    pub fn is_skip(&self) -> bool {
        self.feature.is_none()
    }

    /// Position in the 14-answer table: `comparison * 7 + feature`.
    pub fn table_index(&self) -> Option<usize> {
        self.feature
            .map(|f| self.comparison.index() * FEATURE_COUNT + f.index())
    }

    pub fn from_table_index(i: usize) -> Answer {
        let c = if i < FEATURE_COUNT {
            Choice::A
        } else {
            Choice::B
        };
        Answer::rich(c, Feature::ALL[i % FEATURE_COUNT])
    }
}

/// Rationality (inverse temperature), `>= 0` or infinite.
///
/// Serialized as a JSON number, or the string `"inf"` when infinite.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Rationality(f64);

impl Rationality {
    pub const INFINITE: Rationality = Rationality(f64::INFINITY);
    pub const ZERO: Rationality = Rationality(0.0);

    pub fn new(beta: f64) -> Result<Self, ObservationError> {
        if beta.is_nan() || beta < 0.0 {
            return Err(ObservationError::InvalidRationality(beta));
        }
        Ok(Self(beta))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for Rationality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for Rationality {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let t = s.trim();
        let v = match t.to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "+inf" => f64::INFINITY,
            _ => t
                .parse::<f64>()
                .map_err(|e| format!("invalid rationality {s:?}: {e}"))?,
        };
        Rationality::new(v).map_err(|e| e.to_string())
    }
}

impl Serialize for Rationality {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Rationality {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Rationality::new(v).map_err(serde::de::Error::custom),
            Raw::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Model (or simulated user) noise parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RationalityParams {
    pub beta_c: Rationality,
    pub beta_f: Rationality,
    /// Skip band half-width.
    pub epsilon: f64,
}

impl RationalityParams {
    pub fn new(
        beta_c: Rationality,
        beta_f: Rationality,
        epsilon: f64,
    ) -> Result<Self, ObservationError> {
        let p = Self {
            beta_c,
            beta_f,
            epsilon,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn oracle() -> Self {
        Self {
            beta_c: Rationality::INFINITE,
            beta_f: Rationality::INFINITE,
            epsilon: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ObservationError> {
        Rationality::new(self.beta_c.0)?;
        Rationality::new(self.beta_f.0)?;
        if !(0.0..=1.0 / FEATURE_COUNT as f64).contains(&self.epsilon) {
            return Err(ObservationError::InvalidEpsilon(self.epsilon));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QueryId(pub u32);

impl fmt::Display for QueryId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// A pair of trajectories in one environment, with their standardized
/// cumulative features cached.
#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub id: QueryId,
    /// Index into the pool's environment list.
    pub env: usize,
    /// Indices into that environment's trajectory list.
    pub traj_a: usize,
    pub traj_b: usize,
    pub phi_a: FeatureVector,
    pub phi_b: FeatureVector,
}

impl Query {
    pub fn new(
        id: QueryId,
        env: usize,
        traj_a: usize,
        traj_b: usize,
        phi_a: FeatureVector,
        phi_b: FeatureVector,
    ) -> Result<Self, ObservationError> {
        if !phi_a.is_finite() || !phi_b.is_finite() {
            return Err(ObservationError::NonFiniteQuery(id.0));
        }
        if (phi_a - phi_b).max_abs() <= MIN_QUERY_SEPARATION {
            return Err(ObservationError::IndistinctQuery(id.0));
        }
        Ok(Self {
            id,
            env,
            traj_a,
            traj_b,
            phi_a,
            phi_b,
        })
    }

    /// A free-standing query from two feature vectors, for tests and tools.
    pub fn from_features(
        id: u32,
        phi_a: FeatureVector,
        phi_b: FeatureVector,
    ) -> Result<Self, ObservationError> {
        Self::new(QueryId(id), 0, 0, 1, phi_a, phi_b)
    }

    pub fn delta(&self) -> FeatureVector {
        self.phi_a - self.phi_b
    }

    pub fn swapped(&self) -> Query {
        Query {
            id: self.id,
            env: self.env,
            traj_a: self.traj_b,
            traj_b: self.traj_a,
            phi_a: self.phi_b,
            phi_b: self.phi_a,
        }
    }
}

/// Reward difference `R_A - R_B`.
pub fn reward_gap(theta: &RewardWeights, q: &Query) -> f64 {
    reward(theta, &q.phi_a) - reward(theta, &q.phi_b)
}

/// `log P(c | theta, q)`.
pub fn log_p_comparison(theta: &RewardWeights, q: &Query, beta_c: Rationality, c: Choice) -> f64 {
    log_p_comparison_from_gap(reward_gap(theta, q), beta_c, c)
}

pub(crate) fn log_p_comparison_from_gap(gap: f64, beta_c: Rationality, c: Choice) -> f64 {
    let signed = c.sign() * gap;
    if beta_c.is_infinite() {
        if signed > 0.0 {
            0.0
        } else if signed < 0.0 {
            f64::NEG_INFINITY
        } else {
            -std::f64::consts::LN_2
        }
    } else {
        math::log_sigmoid(beta_c.value() * signed)
    }
}

/// Probability that trajectory A is preferred.
pub fn p_comparison(theta: &RewardWeights, q: &Query, beta_c: Rationality) -> f64 {
    log_p_comparison(theta, q, beta_c, Choice::A).exp()
}

/// Feature salience `|theta_f * dPhi_f|`, the logits before scaling by beta.
pub fn feature_salience(theta: &RewardWeights, q: &Query) -> [f64; FEATURE_COUNT] {
    let d = q.delta();
    std::array::from_fn(|i| (theta.values()[i] * d.0[i]).abs())
}

/// `log P(f | theta, q)` for every feature.
pub fn log_p_feature(
    theta: &RewardWeights,
    q: &Query,
    beta_f: Rationality,
) -> [f64; FEATURE_COUNT] {
    log_p_feature_from_salience(&feature_salience(theta, q), beta_f)
}

pub(crate) fn log_p_feature_from_salience(
    salience: &[f64; FEATURE_COUNT],
    beta_f: Rationality,
) -> [f64; FEATURE_COUNT] {
    let mut out = [0.0; FEATURE_COUNT];
    if beta_f.is_infinite() {
        let max = salience.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ties = salience.iter().filter(|&&s| s == max).count() as f64;
        for (o, &s) in out.iter_mut().zip(salience) {
            *o = if s == max {
                -ties.ln()
            } else {
                f64::NEG_INFINITY
            };
        }
    } else {
        let logits = salience.map(|s| beta_f.value() * s);
        math::log_softmax_into(&logits, &mut out);
    }
    out
}

/// Distribution over which feature the person names.
pub fn p_feature(theta: &RewardWeights, q: &Query, beta_f: Rationality) -> [f64; FEATURE_COUNT] {
    log_p_feature(theta, q, beta_f).map(f64::exp)
}

/// `P(c, f | theta, q)` for a full answer. A skip answer has no joint
/// probability; its likelihood is the comparison part alone (see
/// [`log_likelihood`]).
pub fn p_answer(
    theta: &RewardWeights,
    q: &Query,
    params: &RationalityParams,
    a: &Answer,
) -> Option<f64> {
    let f = a.feature?;
    let pc = log_p_comparison(theta, q, params.beta_c, a.comparison).exp();
    let pf = log_p_feature(theta, q, params.beta_f)[f.index()].exp();
    Some(pc * pf)
}

/// `true` when every feature probability lies in `[1/7 - eps, 1/7 + eps]`.
pub fn is_near_uniform(p: &[f64; FEATURE_COUNT], epsilon: f64) -> bool {
    let u = 1.0 / FEATURE_COUNT as f64;
    p.iter().all(|&v| v >= u - epsilon && v <= u + epsilon)
}

/// Deterministic skip indicator.
pub fn p_skip(theta: &RewardWeights, q: &Query, params: &RationalityParams) -> bool {
    is_near_uniform(&p_feature(theta, q, params.beta_f), params.epsilon)
}

/// Log-likelihood used by belief updates: the joint answer when a feature
/// was given, the comparison alone otherwise.
pub fn log_likelihood(
    theta: &RewardWeights,
    q: &Query,
    params: &RationalityParams,
    a: &Answer,
) -> f64 {
    let lc = log_p_comparison(theta, q, params.beta_c, a.comparison);
    match a.feature {
        Some(f) => lc + log_p_feature(theta, q, params.beta_f)[f.index()],
        None => lc,
    }
}

/// Per-hypothesis answer probabilities for one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnswerProbabilities {
    /// `P(c)` indexed by [`Choice::index`].
    pub comparison: [f64; 2],
    pub feature: [f64; FEATURE_COUNT],
    pub skip: bool,
}

impl AnswerProbabilities {
    pub fn compute(theta: &RewardWeights, q: &Query, params: &RationalityParams) -> Self {
        let gap = reward_gap(theta, q);
        let comparison =
            Choice::BOTH.map(|c| log_p_comparison_from_gap(gap, params.beta_c, c).exp());
        let feature =
            log_p_feature_from_salience(&feature_salience(theta, q), params.beta_f).map(f64::exp);
        let skip = is_near_uniform(&feature, params.epsilon);
        Self {
            comparison,
            feature,
            skip,
        }
    }

    pub fn joint(&self, i: usize) -> f64 {
        self.comparison[i / FEATURE_COUNT] * self.feature[i % FEATURE_COUNT]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn query(a: [f64; 7], b: [f64; 7]) -> Query {
        Query::from_features(0, FeatureVector(a), FeatureVector(b)).unwrap()
    }

    fn beta(v: f64) -> Rationality {
        Rationality::new(v).unwrap()
    }

    fn theta(v: [f64; 7]) -> RewardWeights {
        RewardWeights::normalized(v).unwrap()
    }

    #[test]
    fn equal_rewards_give_even_odds() {
        let t = theta([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let q = query(
            [1.0, 2.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        );
        assert_eq!(p_comparison(&t, &q, beta(3.0)), 0.5);
        assert_eq!(p_comparison(&t, &q, Rationality::INFINITE), 0.5);
    }

    #[test]
    fn zero_rationality_is_uniform() {
        let t = theta([0.3, -0.2, 0.5, 0.1, 0.9, -0.4, 0.2]);
        let q = query(
            [1.0, 2.0, 3.0, 0.0, 1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        );
        assert_eq!(p_comparison(&t, &q, Rationality::ZERO), 0.5);
        for p in p_feature(&t, &q, Rationality::ZERO) {
            assert!((p - 1.0 / 7.0).abs() < 1e-15);
        }
    }

    #[test]
    fn unit_gap_logistic_value() {
        let t = RewardWeights::basis(Feature::Speed);
        let q = query(
            [0.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0],
        );
        let p = p_comparison(&t, &q, beta(1.0));
        assert!((p - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        assert!((p - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn infinite_rationality_picks_better_trajectory() {
        let t = RewardWeights::basis(Feature::Speed);
        let q = query(
            [0.0, 0.0, 0.0, 0.0, 3.0, 0.0, 0.0],
            [0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0],
        );
        assert_eq!(p_comparison(&t, &q, Rationality::INFINITE), 1.0);
        assert_eq!(p_comparison(&t, &q.swapped(), Rationality::INFINITE), 0.0);
    }

    #[test]
    fn extreme_gaps_do_not_overflow() {
        let t = RewardWeights::basis(Feature::Speed);
        let q = query([0.0, 0.0, 0.0, 0.0, 1e6, 0.0, 0.0], [0.0; 7]);
        let lb = log_p_comparison(&t, &q, beta(1e3), Choice::B);
        assert!(lb.is_finite() && lb < -1e8);
        assert_eq!(log_p_comparison(&t, &q, beta(1e3), Choice::A), 0.0);
        let lf = log_p_feature(&t, &q, beta(1e3));
        assert!(lf.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn single_feature_dominates_at_high_rationality() {
        let t = RewardWeights::basis(Feature::Heading);
        let q = query(
            [0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 0.0],
            [0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        );
        let p = p_feature(&t, &q, beta(60.0));
        assert!(p[Feature::Heading.index()] > 0.999_999);
        let p = p_feature(&t, &q, Rationality::INFINITE);
        assert_eq!(p[Feature::Heading.index()], 1.0);
    }

    #[test]
    fn feature_softmax_matches_direct_formula() {
        // One logit at 1, six at 0.
        let t = RewardWeights::basis(Feature::LaneCenter);
        let q = query([1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0; 7]);
        let p = p_feature(&t, &q, beta(1.0));
        let e = 1f64.exp();
        let oracle_top = e / (e + 6.0);
        let oracle_rest = 1.0 / (e + 6.0);
        assert!((p[0] - oracle_top).abs() < 1e-15);
        for v in &p[1..] {
            assert!((v - oracle_rest).abs() < 1e-15);
        }
    }

    #[test]
    fn infinite_feature_ties_split_evenly() {
        let t = theta([1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let q = query([1.0, -1.0, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0; 7]);
        let p = p_feature(&t, &q, Rationality::INFINITE);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        assert_eq!(p[2..].iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn negative_weights_are_salient() {
        let t = theta([-1.0, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let q = query([2.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0], [0.0; 7]);
        let p = p_feature(&t, &q, Rationality::INFINITE);
        assert_eq!(p[0], 1.0);
    }

    #[test]
    fn uniform_joint_over_fourteen_answers() {
        let t = theta([0.2, 0.1, -0.3, 0.5, 0.4, 0.2, -0.1]);
        let q = query([1.0, 2.0, 3.0, 0.0, 1.0, 0.0, 0.0], [0.5; 7]);
        let params = RationalityParams::new(Rationality::ZERO, Rationality::ZERO, 0.0).unwrap();
        for i in 0..ANSWER_COUNT {
            let p = p_answer(&t, &q, &params, &Answer::from_table_index(i)).unwrap();
            assert!((p - 1.0 / 14.0).abs() < 1e-15);
        }
    }

    #[test]
    fn skip_band_examples() {
        let t = theta([0.2, 0.1, -0.3, 0.5, 0.4, 0.2, -0.1]);
        let q = query([1.0, 2.0, 3.0, 0.0, 1.0, 0.0, 0.0], [0.5; 7]);
        let zero_f = RationalityParams::new(beta(1.0), Rationality::ZERO, 0.01).unwrap();
        assert!(p_skip(&t, &q, &zero_f));
        let degenerate = RationalityParams::new(beta(1.0), beta(1.0), 0.0).unwrap();
        assert!(!p_skip(&t, &q, &degenerate));

        let u = 1.0 / 7.0;
        let spread = |d: f64| {
            let mut p = [u; 7];
            p[0] += d;
            p[1] -= d;
            p
        };
        assert!(is_near_uniform(&spread(0.05), 0.066));
        assert!(!is_near_uniform(&spread(0.10), 0.066));
    }

    #[test]
    fn skip_answers_use_comparison_likelihood() {
        let t = theta([0.2, 0.1, -0.3, 0.5, 0.4, 0.2, -0.1]);
        let q = query([1.0, 2.0, 3.0, 0.0, 1.0, 0.0, 0.0], [0.5; 7]);
        let params = RationalityParams::new(beta(2.0), beta(2.5), 0.0).unwrap();
        let skip = Answer::comparison_only(Choice::B);
        assert_eq!(
            log_likelihood(&t, &q, &params, &skip),
            log_p_comparison(&t, &q, params.beta_c, Choice::B)
        );
        assert_eq!(p_answer(&t, &q, &params, &skip), None);
    }

    #[test]
    fn params_validation() {
        assert!(Rationality::new(-1.0).is_err());
        assert!(Rationality::new(f64::NAN).is_err());
        assert!(RationalityParams::new(beta(1.0), beta(1.0), 0.2).is_err());
        assert_eq!("inf".parse::<Rationality>().unwrap(), Rationality::INFINITE);
        assert_eq!("2.5".parse::<Rationality>().unwrap(), beta(2.5));
        let json = serde_json::to_string(&RationalityParams::oracle()).unwrap();
        assert_eq!(json, r#"{"beta_c":"inf","beta_f":"inf","epsilon":0.0}"#);
        let back: RationalityParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, RationalityParams::oracle());
        assert!(serde_json::from_str::<Rationality>("-3").is_err());
    }

    #[test]
    fn query_rejects_identical_trajectories() {
        let v = FeatureVector([1.0; 7]);
        assert_eq!(
            Query::from_features(4, v, v).unwrap_err(),
            ObservationError::IndistinctQuery(4)
        );
    }

    #[test]
    fn answer_table_indexing_round_trips() {
        for i in 0..ANSWER_COUNT {
            assert_eq!(Answer::from_table_index(i).table_index(), Some(i));
        }
    }

    fn arb_theta() -> impl Strategy<Value = RewardWeights> {
        prop::array::uniform7(-1.0f64..1.0)
            .prop_filter("nonzero", |v| v.iter().any(|x| x.abs() > 1e-3))
            .prop_map(|v| RewardWeights::normalized(v).unwrap())
    }

    fn arb_query() -> impl Strategy<Value = Query> {
        (
            prop::array::uniform7(-5.0f64..5.0),
            prop::array::uniform7(-5.0f64..5.0),
        )
            .prop_filter_map("distinct", |(a, b)| {
                Query::from_features(0, FeatureVector(a), FeatureVector(b)).ok()
            })
    }

    fn arb_beta() -> impl Strategy<Value = Rationality> {
        prop_oneof![
            Just(Rationality::INFINITE),
            (0.0f64..20.0).prop_map(|b| Rationality::new(b).unwrap())
        ]
    }

    proptest! {
        #[test]
        fn comparison_probabilities_complement(t in arb_theta(), q in arb_query(), b in arb_beta()) {
            let pa = log_p_comparison(&t, &q, b, Choice::A).exp();
            let pb = log_p_comparison(&t, &q, b, Choice::B).exp();
            prop_assert!((pa + pb - 1.0).abs() <= 1e-15);
        }

        #[test]
        fn feature_distribution_normalized(t in arb_theta(), q in arb_query(), b in arb_beta()) {
            let p = p_feature(&t, &q, b);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn softmax_shift_invariant(s in prop::array::uniform7(0.0f64..5.0), shift in -50.0f64..50.0, b in 0.0f64..5.0) {
            let b = Rationality::new(b).unwrap();
            let base = log_p_feature_from_salience(&s, b);
            let logits = s.map(|v| b.value() * v + shift);
            let mut shifted = [0.0; 7];
            math::log_softmax_into(&logits, &mut shifted);
            for i in 0..7 {
                prop_assert!((base[i] - shifted[i]).abs() <= 1e-12);
            }
        }

        #[test]
        fn swapping_trajectories_mirrors_comparison(t in arb_theta(), q in arb_query(), b in arb_beta()) {
            let s = q.swapped();
            let pa = p_comparison(&t, &q, b);
            let pb_swapped = log_p_comparison(&t, &s, b, Choice::B).exp();
            prop_assert!((pa - pb_swapped).abs() <= 1e-15);
            prop_assert_eq!(p_feature(&t, &q, b), p_feature(&t, &s, b));
        }

        #[test]
        fn positive_scaling_keeps_argmax_and_sign(t in arb_theta(), q in arb_query(), k in 0.1f64..10.0) {
            let scaled = t.values().map(|v| v * k);
            let gap = reward_gap(&t, &q);
            let scaled_gap: f64 = scaled.iter().zip(q.delta().0).map(|(a, d)| a * d).sum();
            prop_assert!(gap.signum() == scaled_gap.signum() || gap.abs() < 1e-12);
            let s1 = feature_salience(&t, &q);
            let d = q.delta();
            let s2: [f64; 7] = std::array::from_fn(|i| (scaled[i] * d.0[i]).abs());
            let argmax = |s: &[f64; 7]| (0..7).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
            prop_assert_eq!(argmax(&s1), argmax(&s2));
        }

        #[test]
        fn joint_table_matches_enumeration(t in arb_theta(), q in arb_query(), bc in arb_beta(), bf in arb_beta()) {
            let params = RationalityParams { beta_c: bc, beta_f: bf, epsilon: 0.0 };
            let table = AnswerProbabilities::compute(&t, &q, &params);
            let mut total = 0.0;
            for i in 0..ANSWER_COUNT {
                let a = Answer::from_table_index(i);
                let direct = p_answer(&t, &q, &params, &a).unwrap();
                prop_assert!((direct - table.joint(i)).abs() <= 1e-15);
                total += direct;
            }
            prop_assert!((total - 1.0).abs() <= 1e-12);
        }
    }
}
