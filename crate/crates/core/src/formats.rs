//! File formats. All are UTF-8 JSON; field-by-field descriptions live in
//! `docs/formats.md`. Every parser here accepts untrusted input and reports
//! errors instead of panicking.

use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::belief::{Belief, BeliefError, HypothesisSet, HypothesisSpec};
use crate::features::{Feature, FeatureScales, RewardWeights, FEATURE_COUNT};
use crate::observation::{Query, QueryId};
use crate::querygen::{OptimizerConfig, Provenance, QueryGenError, QueryPool};
use crate::simuser::{AnswerLog, LogEntry};
use crate::world::{Environment, Simulator, Trajectory};

pub const POOL_SCHEMA: &str = "richpref.pool/1";
pub const ANSWER_LOG_SCHEMA: &str = "richpref.answer_log/1";
pub const BELIEF_SCHEMA: &str = "richpref.belief/1";

/// Largest hypothesis set accepted from a file. Building a set checks all
/// pairs for distinctness, so this bounds the work an input can demand.
pub const MAX_FILE_HYPOTHESES: usize = 10_000;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("line {line}: {source}")]
    Json {
        line: usize,
        source: serde_json::Error,
    },
    #[error("expected schema {expected:?}, found {found:?}")]
    Schema {
        expected: &'static str,
        found: String,
    },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Pool(#[from] QueryGenError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn json_err(source: serde_json::Error) -> FormatError {
    FormatError::Json {
        line: source.line(),
        source,
    }
}

fn check_schema(expected: &'static str, found: &str) -> Result<(), FormatError> {
    if found != expected {
        return Err(FormatError::Schema {
            expected,
            found: found.to_string(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------- environments

/// Write one environment per line.
pub fn write_environments(mut w: impl Write, envs: &[Environment]) -> Result<(), FormatError> {
    for env in envs {
        serde_json::to_writer(&mut w, env).map_err(json_err)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn environments_to_string(envs: &[Environment]) -> String {
    let mut buf = Vec::new();
    write_environments(&mut buf, envs).expect("writing to memory");
    String::from_utf8(buf).expect("JSON is UTF-8")
}

/// Parse an environment set. Blank lines are ignored. All environments
/// must share one horizon and have distinct ids.
pub fn read_environments(r: impl BufRead) -> Result<Vec<Environment>, FormatError> {
    let mut envs: Vec<Environment> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let env: Environment = serde_json::from_str(&line).map_err(|source| FormatError::Json {
            line: i + 1,
            source,
        })?;
        let horizon = envs.first().map_or(env.horizon(), Environment::horizon);
        env.validate(horizon)
            .map_err(|e| FormatError::Invalid(format!("line {}: {e}", i + 1)))?;
        if envs.iter().any(|e| e.id == env.id) {
            return Err(FormatError::Invalid(format!(
                "line {}: duplicate environment id {}",
                i + 1,
                env.id
            )));
        }
        envs.push(env);
    }
    Ok(envs)
}

pub fn parse_environments(text: &str) -> Result<Vec<Environment>, FormatError> {
    read_environments(text.as_bytes())
}

// ---------------------------------------------------------------- pool

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QueryRecord {
    id: u32,
    env: usize,
    a: usize,
    b: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PoolFile {
    schema: String,
    feature_labels: Vec<String>,
    feature_scales: FeatureScales,
    simulator: Simulator,
    optimizer: OptimizerConfig,
    provenance: Provenance,
    environments: Vec<Environment>,
    plausible_thetas: Vec<RewardWeights>,
    trajectories: Vec<Vec<Trajectory>>,
    queries: Vec<QueryRecord>,
}

fn labels() -> Vec<String> {
    Feature::ALL.iter().map(|f| f.label().to_string()).collect()
}

pub fn pool_to_string(pool: &QueryPool) -> String {
    let file = PoolFile {
        schema: POOL_SCHEMA.to_string(),
        feature_labels: labels(),
        feature_scales: pool.feature_scales,
        simulator: pool.simulator,
        optimizer: pool.optimizer,
        provenance: pool.provenance.clone(),
        environments: pool.environments.clone(),
        plausible_thetas: pool.plausible_thetas.clone(),
        trajectories: pool.trajectories.clone(),
        queries: pool
            .queries
            .iter()
            .map(|q| QueryRecord {
                id: q.id.0,
                env: q.env,
                a: q.traj_a,
                b: q.traj_b,
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("pool serializes")
}

/// Parse and fully validate a pool, re-simulating every trajectory.
pub fn pool_from_str(text: &str) -> Result<QueryPool, FormatError> {
    let file: PoolFile = serde_json::from_str(text).map_err(json_err)?;
    check_schema(POOL_SCHEMA, &file.schema)?;
    if file.feature_labels != labels() {
        return Err(FormatError::Invalid(
            "feature labels do not match this build".into(),
        ));
    }
    if !file.feature_scales.validate() {
        return Err(FormatError::Invalid(
            "feature scales must be positive and finite".into(),
        ));
    }
    let mut queries = Vec::with_capacity(file.queries.len());
    for r in &file.queries {
        let pair = file
            .trajectories
            .get(r.env)
            .and_then(|ts| Some((ts.get(r.a)?, ts.get(r.b)?)));
        let Some((a, b)) = pair else {
            return Err(FormatError::Invalid(format!(
                "query {} references a missing trajectory",
                r.id
            )));
        };
        let q = Query::new(
            QueryId(r.id),
            r.env,
            r.a,
            r.b,
            file.feature_scales.standardize(&a.phi),
            file.feature_scales.standardize(&b.phi),
        )
        .map_err(|e| FormatError::Invalid(e.to_string()))?;
        queries.push(q);
    }
    let pool = QueryPool {
        simulator: file.simulator,
        optimizer: file.optimizer,
        environments: file.environments,
        plausible_thetas: file.plausible_thetas,
        trajectories: file.trajectories,
        queries,
        feature_scales: file.feature_scales,
        provenance: file.provenance,
    };
    pool.validate()?;
    Ok(pool)
}

pub fn save_pool(path: &Path, pool: &QueryPool) -> Result<(), FormatError> {
    std::fs::write(path, pool_to_string(pool))?;
    Ok(())
}

pub fn load_pool(path: &Path) -> Result<QueryPool, FormatError> {
    pool_from_str(&std::fs::read_to_string(path)?)
}

// ---------------------------------------------------------------- answer log

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnswerLogFile {
    schema: String,
    feature_labels: Vec<String>,
    entries: Vec<LogEntry>,
}

pub fn answer_log_to_string(log: &AnswerLog) -> String {
    let file = AnswerLogFile {
        schema: ANSWER_LOG_SCHEMA.to_string(),
        feature_labels: labels(),
        entries: log.entries().to_vec(),
    };
    serde_json::to_string_pretty(&file).expect("log serializes")
}

pub fn answer_log_from_str(text: &str) -> Result<AnswerLog, FormatError> {
    let file: AnswerLogFile = serde_json::from_str(text).map_err(json_err)?;
    check_schema(ANSWER_LOG_SCHEMA, &file.schema)?;
    if file.feature_labels != labels() {
        return Err(FormatError::Invalid(
            "feature labels do not match this build".into(),
        ));
    }
    for (i, e) in file.entries.iter().enumerate() {
        if !e.phi_a.is_finite() || !e.phi_b.is_finite() {
            return Err(FormatError::Invalid(format!(
                "entry {i} has non-finite features"
            )));
        }
    }
    Ok(file.entries.into_iter().collect())
}

// ---------------------------------------------------------------- belief

/// How the hypothesis set of a snapshot is stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HypothesisRecord {
    /// Regenerated from its sampling recipe.
    Sampled { spec: HypothesisSpec },
    /// Stored verbatim.
    Explicit {
        thetas: Vec<RewardWeights>,
        seed: u64,
        injected_gt: Option<usize>,
    },
}

impl HypothesisRecord {
    pub fn of(hs: &HypothesisSet) -> Self {
        match hs.spec() {
            Some(spec) => HypothesisRecord::Sampled { spec: *spec },
            None => HypothesisRecord::Explicit {
                thetas: hs.thetas().to_vec(),
                seed: hs.seed(),
                injected_gt: hs.ground_truth_index(),
            },
        }
    }

    pub fn build(&self) -> Result<HypothesisSet, FormatError> {
        match self {
            HypothesisRecord::Sampled { spec } => {
                if spec.sampled > MAX_FILE_HYPOTHESES {
                    return Err(FormatError::Invalid(format!(
                        "more than {MAX_FILE_HYPOTHESES} hypotheses"
                    )));
                }
                Ok(HypothesisSet::from_spec(*spec)?)
            }
            HypothesisRecord::Explicit {
                thetas,
                seed,
                injected_gt,
            } => {
                if thetas.len() > MAX_FILE_HYPOTHESES {
                    return Err(FormatError::Invalid(format!(
                        "more than {MAX_FILE_HYPOTHESES} hypotheses"
                    )));
                }
                Ok(HypothesisSet::from_thetas(
                    thetas.clone(),
                    *seed,
                    *injected_gt,
                )?)
            }
        }
    }
}

/// A serializable belief. Log weights of `-inf` are stored as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeliefSnapshot {
    pub schema: String,
    pub hypotheses: HypothesisRecord,
    pub log_weights: Vec<Option<f64>>,
}

impl BeliefSnapshot {
    pub fn of(b: &Belief) -> Self {
        Self {
            schema: BELIEF_SCHEMA.to_string(),
            hypotheses: HypothesisRecord::of(b.hypotheses()),
            log_weights: b
                .log_weights()
                .iter()
                .map(|&w| (w > f64::NEG_INFINITY).then_some(w))
                .collect(),
        }
    }

    /// Rebuild the belief. `known` is reused when it matches the stored
    /// hypothesis set, which avoids regenerating shared sets.
    pub fn restore(&self, known: Option<&Arc<HypothesisSet>>) -> Result<Belief, FormatError> {
        check_schema(BELIEF_SCHEMA, &self.schema)?;
        let hs = match known {
            Some(h) if HypothesisRecord::of(h) == self.hypotheses => h.clone(),
            _ => Arc::new(self.hypotheses.build()?),
        };
        if self.log_weights.len() != hs.len() {
            return Err(FormatError::Invalid(format!(
                "{} log weights for {} hypotheses",
                self.log_weights.len(),
                hs.len()
            )));
        }
        let w = self
            .log_weights
            .iter()
            .map(|w| w.unwrap_or(f64::NEG_INFINITY))
            .collect();
        Ok(Belief::from_log_weights(hs, w)?)
    }
}

pub fn belief_to_string(b: &Belief) -> String {
    serde_json::to_string(&BeliefSnapshot::of(b)).expect("belief serializes")
}

pub fn belief_from_str(text: &str) -> Result<Belief, FormatError> {
    let snap: BeliefSnapshot = serde_json::from_str(text).map_err(json_err)?;
    snap.restore(None)
}

/// Feature labels in index order, as served to clients.
pub fn feature_labels() -> [&'static str; FEATURE_COUNT] {
    Feature::ALL.map(Feature::label)
}
