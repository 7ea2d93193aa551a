//! Simulated learning experiments: run sessions against simulated users,
//! track the learning metrics per iteration, and write result tables.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::active::{select_query, ActiveError, LikelihoodTable, SelectionMode};
use crate::belief::{
    sample_unit_sphere, Belief, BeliefError, HypothesisSet, DEFAULT_CLOSE_THRESHOLD,
};
use crate::features::{reward, FeatureVector, RewardWeights};
use crate::formats::{BeliefSnapshot, FormatError};
use crate::math::quantile_sorted;
use crate::observation::{Answer, ObservationError, QueryId, Rationality, RationalityParams};
use crate::querygen::{config_hash, QueryGenError, QueryPool};
use crate::rng;
use crate::simuser::{BetaPreset, SimUserConfig, SimulatedUser, DEFAULT_BETA_F};
use crate::world::{generate_environments, Environment, SceneConfig};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid experiment configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Active(#[from] ActiveError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Observation(#[from] ObservationError),
    #[error(transparent)]
    QueryGen(#[from] QueryGenError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Noise assumed by the learner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    pub beta_c: BetaPreset,
    pub beta_f: Rationality,
    pub epsilon: f64,
}

/// Behavior of the simulated users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserSettings {
    pub beta_c: BetaPreset,
    pub beta_f: Rationality,
    /// Skip band half-width; zero means users never skip.
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub modes: Vec<SelectionMode>,
    pub model: ModelSettings,
    pub user: UserSettings,
    /// Queries per run.
    pub budget: usize,
    pub ground_truths: usize,
    pub repetitions: usize,
    /// Sampled hypotheses; the ground truth is appended to these.
    pub hypotheses: usize,
    /// Environments used for regret; zero disables regret.
    pub test_environments: usize,
    pub close_threshold: f64,
    pub seed: u64,
}

impl ExperimentConfig {
    /// Perfect users modeled as perfect.
    pub fn oracle() -> Self {
        let inf = Rationality::INFINITE;
        Self {
            modes: vec![SelectionMode::Rich, SelectionMode::ComparisonOnly],
            model: ModelSettings {
                beta_c: BetaPreset::common(inf),
                beta_f: inf,
                epsilon: 0.0,
            },
            user: UserSettings {
                beta_c: BetaPreset::common(inf),
                beta_f: inf,
                epsilon: 0.0,
            },
            budget: 40,
            ground_truths: 10,
            repetitions: 1,
            hypotheses: 500,
            test_environments: 10,
            close_threshold: DEFAULT_CLOSE_THRESHOLD,
            seed: 1,
        }
    }

    /// Noisy users, accurately modeled, with the given comparison preset.
    pub fn noisy(beta_c: BetaPreset) -> Self {
        let bf = Rationality::new(DEFAULT_BETA_F).expect("finite");
        Self {
            model: ModelSettings {
                beta_c,
                beta_f: bf,
                epsilon: 0.0,
            },
            user: UserSettings {
                beta_c,
                beta_f: bf,
                epsilon: 0.0,
            },
            repetitions: 20,
            ..Self::oracle()
        }
    }

    pub fn validate(&self, pool: &QueryPool) -> Result<(), RunError> {
        let bad = |m: String| Err(RunError::Config(m));
        if self.modes.is_empty() {
            return bad("at least one mode is required".into());
        }
        if BTreeSet::from_iter(&self.modes).len() != self.modes.len() {
            return bad("modes must be distinct".into());
        }
        if self.budget > pool.len() {
            return bad(format!(
                "budget {} exceeds pool size {}",
                self.budget,
                pool.len()
            ));
        }
        if self.ground_truths == 0 || self.repetitions == 0 {
            return bad("need at least one ground truth and one repetition".into());
        }
        if self.hypotheses < 1 {
            return bad("need at least one sampled hypothesis".into());
        }
        if !(-1.0..1.0).contains(&self.close_threshold) {
            return bad("close threshold must lie in [-1, 1)".into());
        }
        for mode in &self.modes {
            self.model_params(*mode)?;
            self.user_params(*mode)?;
        }
        Ok(())
    }

    pub fn model_params(&self, mode: SelectionMode) -> Result<RationalityParams, RunError> {
        let bc = self
            .model
            .beta_c
            .for_mode(mode == SelectionMode::ComparisonOnly);
        Ok(RationalityParams::new(
            bc,
            self.model.beta_f,
            self.model.epsilon,
        )?)
    }

    fn user_params(&self, mode: SelectionMode) -> Result<RationalityParams, RunError> {
        let bc = self
            .user
            .beta_c
            .for_mode(mode == SelectionMode::ComparisonOnly);
        Ok(RationalityParams::new(
            bc,
            self.user.beta_f,
            self.user.epsilon,
        )?)
    }

    pub fn ground_truth(&self, g: usize) -> RewardWeights {
        sample_unit_sphere(&mut rng::stream(self.seed, "ground-truth", &[g as u64]))
    }

    pub fn user_seed(&self, g: usize, rep: usize) -> u64 {
        rng::derive_seed(self.seed, "user", &[g as u64, rep as u64])
    }
}

/// Learning metrics after one iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRow {
    pub iteration: usize,
    pub p_gt: f64,
    pub close_mass: f64,
    pub map_dot_gt: f64,
    pub regret: Option<f64>,
    /// `None` on the prior row.
    pub query_id: Option<QueryId>,
    pub answer: Option<Answer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub mode: SelectionMode,
    pub gt: usize,
    pub rep: usize,
    pub rows: Vec<IterationRow>,
    pub final_belief: Belief,
    /// Wall time since the session started, per row.
    pub elapsed: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunFailure {
    pub mode: SelectionMode,
    pub gt: usize,
    pub rep: usize,
    pub error: String,
}

/// Regret of acting on learned weights, averaged over test environments:
/// the ground-truth reward of the best trajectory known for the ground
/// truth minus that of the trajectory optimized for the learned weights.
/// Trajectory features are memoized per (environment, weights).
pub struct RegretEvaluator<'p> {
    pool: &'p QueryPool,
    envs: Vec<Environment>,
    cache: Mutex<HashMap<(usize, [u64; 7]), FeatureVector>>,
    memoize: bool,
}

impl<'p> RegretEvaluator<'p> {
    pub fn new(pool: &'p QueryPool, envs: Vec<Environment>) -> Self {
        Self {
            pool,
            envs,
            cache: Mutex::new(HashMap::new()),
            memoize: true,
        }
    }

    pub fn without_memo(pool: &'p QueryPool, envs: Vec<Environment>) -> Self {
        Self {
            memoize: false,
            ..Self::new(pool, envs)
        }
    }

    /// Test environments generated from the pool's scene settings, with ids
    /// that do not collide with pool environments.
    pub fn test_environments(pool: &QueryPool, count: usize, seed: u64) -> Vec<Environment> {
        let scene = pool.provenance.config.map_or_else(
            || SceneConfig {
                road: pool.environments[0].road,
                ..SceneConfig::default()
            },
            |c| c.scene,
        );
        let first = pool
            .environments
            .iter()
            .map(|e| e.id)
            .max()
            .map_or(0, |m| m.saturating_add(1));
        generate_environments(
            count,
            first,
            rng::derive_seed(seed, "test-environments", &[]),
            &scene,
            &pool.simulator.world,
        )
    }

    pub fn environments(&self) -> &[Environment] {
        &self.envs
    }

    fn features(&self, e: usize, theta: &RewardWeights) -> Result<FeatureVector, RunError> {
        let key = (e, theta.key());
        if self.memoize {
            if let Some(v) = self.cache.lock().expect("cache lock").get(&key) {
                return Ok(*v);
            }
        }
        let t = self.pool.optimize(&self.envs[e], theta)?;
        let phi = self.pool.feature_scales.standardize(&t.phi);
        if self.memoize {
            self.cache.lock().expect("cache lock").insert(key, phi);
        }
        Ok(phi)
    }

    pub fn regret(
        &self,
        theta_gt: &RewardWeights,
        learned: &RewardWeights,
    ) -> Result<f64, RunError> {
        if self.envs.is_empty() {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for e in 0..self.envs.len() {
            let best = reward(theta_gt, &self.features(e, theta_gt)?);
            let got = reward(theta_gt, &self.features(e, learned)?);
            total += (best - got).max(0.0);
        }
        Ok(total / self.envs.len() as f64)
    }
}

/// Shared, read-only state for running sessions of one experiment.
pub struct Experiment<'p> {
    pub config: ExperimentConfig,
    pub pool: &'p QueryPool,
    base: HypothesisSet,
    regret: Option<RegretEvaluator<'p>>,
}

impl<'p> Experiment<'p> {
    pub fn new(config: ExperimentConfig, pool: &'p QueryPool) -> Result<Self, RunError> {
        config.validate(pool)?;
        let base = HypothesisSet::sample(
            config.hypotheses,
            rng::derive_seed(config.seed, "hypotheses", &[]),
        )?;
        let regret = (config.test_environments > 0).then(|| {
            RegretEvaluator::new(
                pool,
                RegretEvaluator::test_environments(pool, config.test_environments, config.seed),
            )
        });
        Ok(Self {
            config,
            pool,
            base,
            regret,
        })
    }

    pub fn hypotheses_for(&self, g: usize) -> Result<Arc<HypothesisSet>, RunError> {
        Ok(Arc::new(
            self.base.with_ground_truth(self.config.ground_truth(g))?,
        ))
    }

    fn measure(
        &self,
        b: &Belief,
        theta_gt: &RewardWeights,
        iteration: usize,
    ) -> Result<IterationRow, RunError> {
        let s = b.summaries(Some(theta_gt), self.config.close_threshold)?;
        let gt = s.ground_truth.expect("ground truth requested");
        let regret = match &self.regret {
            Some(r) => Some(r.regret(theta_gt, &s.map_theta)?),
            None => None,
        };
        Ok(IterationRow {
            iteration,
            p_gt: gt.p_gt,
            close_mass: gt.close_mass,
            map_dot_gt: gt.map_dot_gt,
            regret,
            query_id: None,
            answer: None,
        })
    }

    /// One simulated session. `table`, when given, must have been built for
    /// this ground truth's hypothesis set and the mode's model parameters.
    pub fn run_session(
        &self,
        mode: SelectionMode,
        g: usize,
        rep: usize,
        hs: &Arc<HypothesisSet>,
        table: Option<&LikelihoodTable>,
    ) -> Result<RunRecord, RunError> {
        let start = Instant::now();
        let cfg = &self.config;
        let theta_gt = cfg.ground_truth(g);
        let model = cfg.model_params(mode)?;
        let up = cfg.user_params(mode)?;
        let mut user = SimulatedUser::new(SimUserConfig {
            theta_gt,
            beta_c: up.beta_c,
            beta_f: up.beta_f,
            epsilon: up.epsilon,
            seed: cfg.user_seed(g, rep),
        });
        let queries = &self.pool.queries;
        let mut belief = Belief::uniform(hs.clone());
        let mut asked = BTreeSet::new();
        let mut rows = vec![self.measure(&belief, &theta_gt, 0)?];
        let mut elapsed = vec![start.elapsed().as_secs_f64()];
        for it in 1..=cfg.budget {
            let id = match table {
                Some(t) => t.select(&belief, queries, mode, &asked)?,
                None => select_query(&belief, queries, &model, mode, &asked)?,
            };
            let q = &queries[id.0 as usize];
            let answer = user.answer(q, mode.asks_feature());
            belief = belief.update(q, &answer, &model)?;
            asked.insert(id);
            let mut row = self.measure(&belief, &theta_gt, it)?;
            row.query_id = Some(id);
            row.answer = Some(answer);
            rows.push(row);
            elapsed.push(start.elapsed().as_secs_f64());
        }
        Ok(RunRecord {
            mode,
            gt: g,
            rep,
            rows,
            final_belief: belief,
            elapsed,
        })
    }

    /// Every (mode, ground truth, repetition) session. Ground truths are
    /// processed in turn so only one set of likelihood tables is alive.
    pub fn run_suite(&self) -> SuiteResult {
        let cfg = &self.config;
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        for g in 0..cfg.ground_truths {
            let hs = match self.hypotheses_for(g) {
                Ok(h) => h,
                Err(e) => {
                    for &mode in &cfg.modes {
                        for rep in 0..cfg.repetitions {
                            failures.push(RunFailure {
                                mode,
                                gt: g,
                                rep,
                                error: e.to_string(),
                            });
                        }
                    }
                    continue;
                }
            };
            let tables: BTreeMap<SelectionMode, LikelihoodTable> = cfg
                .modes
                .par_iter()
                .filter_map(|&m| {
                    let p = cfg.model_params(m).ok()?;
                    Some((m, LikelihoodTable::build(&hs, &self.pool.queries, &p)))
                })
                .collect();
            let jobs: Vec<(SelectionMode, usize)> = cfg
                .modes
                .iter()
                .flat_map(|&m| (0..cfg.repetitions).map(move |r| (m, r)))
                .collect();
            let results: Vec<_> = jobs
                .par_iter()
                .map(|&(mode, rep)| {
                    (
                        mode,
                        rep,
                        self.run_session(mode, g, rep, &hs, tables.get(&mode)),
                    )
                })
                .collect();
            for (mode, rep, r) in results {
                match r {
                    Ok(rec) => runs.push(rec),
                    Err(e) => failures.push(RunFailure {
                        mode,
                        gt: g,
                        rep,
                        error: e.to_string(),
                    }),
                }
            }
        }
        runs.sort_by_key(|r| (r.mode, r.gt, r.rep));
        failures.sort_by_key(|f| (f.mode, f.gt, f.rep));
        let aggregate = aggregate(&runs, cfg.budget);
        SuiteResult {
            runs,
            failures,
            aggregate,
        }
    }
}

pub const METRICS: [&str; 4] = ["p_gt", "close_mass", "map_dot_gt", "regret"];

fn metric(row: &IterationRow, name: &str) -> Option<f64> {
    match name {
        "p_gt" => Some(row.p_gt),
        "close_mass" => Some(row.close_mass),
        "map_dot_gt" => Some(row.map_dot_gt),
        "regret" => row.regret,
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub mode: SelectionMode,
    pub iteration: usize,
    pub metric: &'static str,
    pub runs: usize,
    pub mean: f64,
    pub median: f64,
    pub p25: f64,
    pub p75: f64,
}

/// Per-mode, per-iteration summary statistics over runs.
pub fn aggregate(runs: &[RunRecord], budget: usize) -> Vec<AggregateRow> {
    let modes: BTreeSet<SelectionMode> = runs.iter().map(|r| r.mode).collect();
    let mut out = Vec::new();
    for mode in modes {
        let of_mode: Vec<&RunRecord> = runs.iter().filter(|r| r.mode == mode).collect();
        for it in 0..=budget {
            for name in METRICS {
                let mut v: Vec<f64> = of_mode
                    .iter()
                    .filter_map(|r| r.rows.get(it).and_then(|row| metric(row, name)))
                    .collect();
                if v.is_empty() {
                    continue;
                }
                v.sort_by(f64::total_cmp);
                out.push(AggregateRow {
                    mode,
                    iteration: it,
                    metric: name,
                    runs: v.len(),
                    mean: v.iter().sum::<f64>() / v.len() as f64,
                    median: quantile_sorted(&v, 0.5),
                    p25: quantile_sorted(&v, 0.25),
                    p75: quantile_sorted(&v, 0.75),
                });
            }
        }
    }
    out
}

pub struct SuiteResult {
    pub runs: Vec<RunRecord>,
    pub failures: Vec<RunFailure>,
    pub aggregate: Vec<AggregateRow>,
}

impl SuiteResult {
    /// Final-iteration values of a metric for one mode, ordered by (gt, rep).
    pub fn final_values(&self, mode: SelectionMode, name: &str) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.mode == mode)
            .filter_map(|r| r.rows.last().and_then(|row| metric(row, name)))
            .collect()
    }

    pub fn runs_csv(&self) -> Result<String, RunError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "mode",
            "gt",
            "rep",
            "iteration",
            "p_gt",
            "close_mass",
            "map_dot_gt",
            "regret",
            "query_id",
            "comparison",
            "feature",
        ])?;
        for r in &self.runs {
            for row in &r.rows {
                let (comparison, feature) = match row.answer {
                    None => (String::new(), String::new()),
                    Some(a) => (
                        format!("{:?}", a.comparison),
                        match a.feature {
                            Some(f) => f.number().to_string(),
                            None if r.mode.asks_feature() => "skip".into(),
                            None => String::new(),
                        },
                    ),
                };
                w.write_record([
                    r.mode.to_string(),
                    r.gt.to_string(),
                    r.rep.to_string(),
                    row.iteration.to_string(),
                    row.p_gt.to_string(),
                    row.close_mass.to_string(),
                    row.map_dot_gt.to_string(),
                    row.regret.map(|v| v.to_string()).unwrap_or_default(),
                    row.query_id.map(|q| q.to_string()).unwrap_or_default(),
                    comparison,
                    feature,
                ])?;
            }
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
    }

    pub fn aggregate_csv(&self) -> Result<String, RunError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "mode",
            "iteration",
            "metric",
            "runs",
            "mean",
            "median",
            "p25",
            "p75",
        ])?;
        for a in &self.aggregate {
            w.write_record([
                a.mode.to_string(),
                a.iteration.to_string(),
                a.metric.to_string(),
                a.runs.to_string(),
                a.mean.to_string(),
                a.median.to_string(),
                a.p25.to_string(),
                a.p75.to_string(),
            ])?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
    }

    pub fn timings_csv(&self) -> Result<String, RunError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["mode", "gt", "rep", "iteration", "elapsed_seconds"])?;
        for r in &self.runs {
            for (row, t) in r.rows.iter().zip(&r.elapsed) {
                w.write_record([
                    r.mode.to_string(),
                    r.gt.to_string(),
                    r.rep.to_string(),
                    row.iteration.to_string(),
                    t.to_string(),
                ])?;
            }
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| e.into_error())?).expect("utf-8"))
    }

    pub fn beliefs_jsonl(&self, cfg: &ExperimentConfig) -> String {
        let mut out = String::new();
        for r in &self.runs {
            let rec = BeliefRecord {
                mode: r.mode,
                gt: r.gt,
                rep: r.rep,
                theta_gt: cfg.ground_truth(r.gt),
                belief: BeliefSnapshot::of(&r.final_belief),
            };
            out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
            out.push('\n');
        }
        out
    }
}

/// One final belief per run, as stored in `beliefs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeliefRecord {
    pub mode: SelectionMode,
    pub gt: usize,
    pub rep: usize,
    pub theta_gt: RewardWeights,
    pub belief: BeliefSnapshot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunProvenance {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub pool_config_hash: String,
    pub pool_seed: u64,
    pub hypothesis_seed: u64,
    pub failures: usize,
}

/// Output file names inside a run directory. `timings.csv` holds wall-clock
/// time and is the only file that differs between identical reruns.
pub const RUNS_FILE: &str = "runs.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const TIMINGS_FILE: &str = "timings.csv";
pub const BELIEFS_FILE: &str = "beliefs.jsonl";
pub const PROVENANCE_FILE: &str = "provenance.json";
pub const FAILURES_FILE: &str = "failures.csv";

pub fn write_outputs(
    dir: &Path,
    exp: &Experiment<'_>,
    result: &SuiteResult,
) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join(RUNS_FILE), result.runs_csv()?)?;
    std::fs::write(dir.join(AGGREGATE_FILE), result.aggregate_csv()?)?;
    std::fs::write(dir.join(TIMINGS_FILE), result.timings_csv()?)?;
    std::fs::write(dir.join(BELIEFS_FILE), result.beliefs_jsonl(&exp.config))?;
    let prov = RunProvenance {
        config: exp.config.clone(),
        config_hash: config_hash(&exp.config),
        pool_config_hash: exp.pool.provenance.config_hash.clone(),
        pool_seed: exp.pool.provenance.seed,
        hypothesis_seed: rng::derive_seed(exp.config.seed, "hypotheses", &[]),
        failures: result.failures.len(),
    };
    std::fs::write(
        dir.join(PROVENANCE_FILE),
        serde_json::to_string_pretty(&prov).expect("serializes") + "\n",
    )?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["mode", "gt", "rep", "error"])?;
    for f in &result.failures {
        w.write_record([
            f.mode.to_string(),
            f.gt.to_string(),
            f.rep.to_string(),
            f.error.clone(),
        ])?;
    }
    std::fs::write(
        dir.join(FAILURES_FILE),
        w.into_inner().map_err(|e| e.into_error())?,
    )?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScatterRow {
    pub mode: SelectionMode,
    pub gt: usize,
    pub rep: usize,
    pub hypothesis: usize,
    pub dot: f64,
    pub probability: f64,
}

/// One row per hypothesis per stored belief: its dot product with the
/// ground truth and its final probability.
pub fn scatter(records: &[BeliefRecord]) -> Result<Vec<ScatterRow>, RunError> {
    let mut sets: Vec<Arc<HypothesisSet>> = Vec::new();
    let mut out = Vec::new();
    for rec in records {
        let known = sets
            .iter()
            .find(|h| crate::formats::HypothesisRecord::of(h) == rec.belief.hypotheses);
        let b = rec.belief.restore(known)?;
        if known.is_none() {
            sets.push(b.hypotheses().clone());
        }
        for (i, theta) in b.hypotheses().thetas().iter().enumerate() {
            out.push(ScatterRow {
                mode: rec.mode,
                gt: rec.gt,
                rep: rec.rep,
                hypothesis: i,
                dot: theta.dot(&rec.theta_gt).clamp(-1.0, 1.0),
                probability: b.probability(i),
            });
        }
    }
    Ok(out)
}

pub fn read_belief_records(r: impl BufRead) -> Result<Vec<BeliefRecord>, RunError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|source| FormatError::Json {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}

pub fn write_scatter_csv(w: impl Write, rows: &[ScatterRow]) -> Result<(), RunError> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["mode", "gt", "rep", "hypothesis", "dot", "probability"])?;
    for r in rows {
        w.write_record([
            r.mode.to_string(),
            r.gt.to_string(),
            r.rep.to_string(),
            r.hypothesis.to_string(),
            r.dot.to_string(),
            r.probability.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
