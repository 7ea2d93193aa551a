//! Request and response bodies. Every response carries a `schema` tag.

use richpref::active::SelectionMode;
use richpref::features::{Feature, RewardWeights};
use richpref::observation::{Answer, Choice};
use richpref::world::{CarState, Control, Environment};
use serde::{Deserialize, Serialize};

use crate::session::{Phase, Slot};

pub const QUERY_SCHEMA: &str = "richpref.query/1";
pub const SESSION_SCHEMA: &str = "richpref.session/1";
pub const BELIEF_SUMMARY_SCHEMA: &str = "richpref.belief_summary/1";
pub const VALIDATION_SCHEMA: &str = "richpref.validation/1";
pub const FEATURES_SCHEMA: &str = "richpref.features/1";
pub const ERROR_SCHEMA: &str = "richpref.error/1";

/// Largest request body accepted by [`parse_answer_payload`] and friends.
pub const MAX_BODY_BYTES: usize = 64 * 1024;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum WireError {
    #[error("malformed body: {0}")]
    Malformed(String),
    #[error("body larger than {MAX_BODY_BYTES} bytes")]
    TooLarge,
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, WireError> {
    if text.len() > MAX_BODY_BYTES {
        return Err(WireError::TooLarge);
    }
    serde_json::from_str(text).map_err(|e| WireError::Malformed(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSessionRequest {
    pub pool: String,
    pub mode: SelectionMode,
    #[serde(default)]
    pub budget: Option<usize>,
    /// Sessions with the same participant and pool are validated against
    /// each other.
    #[serde(default)]
    pub participant: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

pub fn parse_create_session(text: &str) -> Result<CreateSessionRequest, WireError> {
    parse(text)
}

/// A feature given by number (1..=7) or label, or the string `"skip"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum FeatureField {
    Number(u8),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnswer {
    query_id: u32,
    comparison: Choice,
    #[serde(default)]
    feature: Option<FeatureField>,
}

/// A submitted answer. A missing, `null` or `"skip"` feature means no
/// feature answer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnswerPayload {
    pub query_id: u32,
    pub answer: Answer,
}

pub fn parse_answer_payload(text: &str) -> Result<AnswerPayload, WireError> {
    let raw: RawAnswer = parse(text)?;
    let feature = match raw.feature {
        None => None,
        Some(FeatureField::Number(n)) => Some(
            Feature::from_number(n)
                .ok_or_else(|| WireError::Malformed(format!("feature number {n} outside 1..=7")))?,
        ),
        Some(FeatureField::Text(s)) if s == "skip" => None,
        Some(FeatureField::Text(s)) => Some(
            Feature::ALL
                .into_iter()
                .find(|f| f.label() == s)
                .ok_or_else(|| WireError::Malformed(format!("unknown feature label {s:?}")))?,
        ),
    };
    Ok(AnswerPayload {
        query_id: raw.query_id,
        answer: Answer {
            comparison: raw.comparison,
            feature,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteRequest {
    pub env_index: usize,
    pub choice: Slot,
}

pub fn parse_vote(text: &str) -> Result<VoteRequest, WireError> {
    parse(text)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureLabel {
    pub number: u8,
    pub label: &'static str,
    pub description: &'static str,
}

pub fn feature_table() -> Vec<FeatureLabel> {
    Feature::ALL
        .iter()
        .map(|f| FeatureLabel {
            number: f.number(),
            label: f.label(),
            description: f.description(),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeaturesResponse {
    pub schema: &'static str,
    pub features: Vec<FeatureLabel>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryPayload {
    pub controls: Vec<Control>,
    pub states: Vec<CarState>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResponse {
    pub schema: &'static str,
    pub session_id: String,
    pub query_id: u32,
    /// Answers submitted so far.
    pub iteration: usize,
    pub budget: usize,
    pub asks_feature: bool,
    pub skip_allowed: bool,
    pub features: Vec<FeatureLabel>,
    pub environment: Environment,
    pub trajectory_a: TrajectoryPayload,
    pub trajectory_b: TrajectoryPayload,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionResponse {
    pub schema: &'static str,
    pub session_id: String,
    pub pool: String,
    pub mode: SelectionMode,
    pub participant: Option<String>,
    pub phase: Phase,
    pub iteration: usize,
    pub budget: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankedHypothesis {
    pub index: usize,
    pub probability: f64,
    pub weights: RewardWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeliefSummaryResponse {
    pub schema: &'static str,
    pub session_id: String,
    pub phase: Phase,
    pub iteration: usize,
    pub budget: usize,
    pub entropy: f64,
    /// `ln N`, the entropy of the uniform belief.
    pub max_entropy: f64,
    pub map_weights: RewardWeights,
    pub top: Vec<RankedHypothesis>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationItemPayload {
    pub env_index: usize,
    pub environment: Environment,
    pub first: TrajectoryPayload,
    pub second: TrajectoryPayload,
    pub vote: Option<Slot>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodShare {
    pub method: String,
    pub votes: usize,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub total: usize,
    pub methods: Vec<MethodShare>,
}

/// Validation items never name the method behind each trajectory; the
/// report does, once every vote is in.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationResponse {
    pub schema: &'static str,
    pub session_id: String,
    pub phase: Phase,
    pub items: Vec<ValidationItemPayload>,
    pub report: Option<ValidationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorResponse {
    pub schema: String,
    pub error: String,
    pub message: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_feature_forms() {
        let p = parse_answer_payload(r#"{"query_id":3,"comparison":"A","feature":5}"#).unwrap();
        assert_eq!(p.answer, Answer::rich(Choice::A, Feature::Speed));
        let p =
            parse_answer_payload(r#"{"query_id":3,"comparison":"B","feature":"heading"}"#).unwrap();
        assert_eq!(p.answer, Answer::rich(Choice::B, Feature::Heading));
        for body in [
            r#"{"query_id":3,"comparison":"B","feature":"skip"}"#,
            r#"{"query_id":3,"comparison":"B","feature":null}"#,
            r#"{"query_id":3,"comparison":"B"}"#,
        ] {
            assert_eq!(
                parse_answer_payload(body).unwrap().answer,
                Answer::comparison_only(Choice::B)
            );
        }
    }

    #[test]
    fn answer_rejects_bad_input() {
        for body in [
            r#"{"query_id":3,"comparison":"C"}"#,
            r#"{"query_id":3,"comparison":"A","feature":0}"#,
            r#"{"query_id":3,"comparison":"A","feature":8}"#,
            r#"{"query_id":3,"comparison":"A","feature":"fast"}"#,
            r#"{"query_id":-1,"comparison":"A"}"#,
            r#"{"query_id":3,"comparison":"A","extra":1}"#,
            "",
        ] {
            assert!(parse_answer_payload(body).is_err(), "{body}");
        }
        assert_eq!(
            parse_answer_payload(&" ".repeat(MAX_BODY_BYTES + 1)),
            Err(WireError::TooLarge)
        );
    }

    #[test]
    fn create_session_defaults() {
        let r = parse_create_session(r#"{"pool":"desk","mode":"rich"}"#).unwrap();
        assert_eq!(r.budget, None);
        assert_eq!(r.mode, SelectionMode::Rich);
        assert!(parse_create_session(r#"{"pool":"desk","mode":"information_gain"}"#).is_err());
    }
}
