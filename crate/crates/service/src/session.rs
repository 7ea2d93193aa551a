//! Sessions: the training loop for one answerer, followed by the validation
//! vote. Every mutation is an event appended to the session's log before it
//! takes effect; replaying the log rebuilds the session.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use rand::Rng;
use richpref::active::{select_query, ActiveError, SelectionMode};
use richpref::belief::{Belief, HypothesisSet};
use richpref::features::RewardWeights;
use richpref::formats::{answer_log_to_string, BeliefSnapshot};
use richpref::observation::{Answer, QueryId, Rationality, RationalityParams};
use richpref::querygen::QueryPool;
use richpref::rng;
use richpref::runner::RegretEvaluator;
use richpref::simuser::{AnswerLog, BetaPreset, DEFAULT_BETA_F};
use richpref::world::{Environment, Trajectory};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::wire::*;

pub const EVENT_SCHEMA: &str = "richpref.session_events/1";
pub const SNAPSHOT_SCHEMA: &str = "richpref.session_snapshot/1";
pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_FILE: &str = "snapshot.json";
/// Method label of the prior's MAP reward in unpaired validation.
pub const PRIOR_METHOD: &str = "prior";
/// Number of hypotheses listed in belief summaries.
pub const TOP_K: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Training,
    Validation,
    Done,
}

/// Presentation position of a validation trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    First,
    Second,
}

impl Slot {
    fn index(self) -> usize {
        match self {
            Slot::First => 0,
            Slot::Second => 1,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SessionError {
    #[error("unknown pool {0:?}")]
    UnknownPool(String),
    #[error("unknown session {0:?}")]
    UnknownSession(String),
    #[error("session is in phase {actual:?}, operation needs {expected:?}")]
    WrongPhase { expected: Phase, actual: Phase },
    #[error("answer for query {got} but the pending query is {pending:?}")]
    StaleAnswer { pending: Option<u32>, got: u32 },
    #[error("environment {0} already has a vote")]
    DuplicateVote(usize),
    #[error("every query in the pool has been asked")]
    PoolExhausted,
    #[error("the partner session has not finished training")]
    AwaitingPartner,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("corrupt session log: {0}")]
    Corrupt(String),
    #[error("storage error: {0}")]
    Io(String),
}

impl SessionError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::UnknownPool(_) => "unknown_pool",
            SessionError::UnknownSession(_) => "unknown_session",
            SessionError::WrongPhase { .. } => "wrong_phase",
            SessionError::StaleAnswer { .. } => "stale_answer",
            SessionError::DuplicateVote(_) => "duplicate_vote",
            SessionError::PoolExhausted => "pool_exhausted",
            SessionError::AwaitingPartner => "awaiting_partner",
            SessionError::InvalidRequest(_) => "invalid_request",
            SessionError::Corrupt(_) => "corrupt",
            SessionError::Io(_) => "io",
        }
    }
}

impl From<std::io::Error> for SessionError {
    fn from(e: std::io::Error) -> Self {
        SessionError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceConfig {
    pub hypotheses: usize,
    pub hypothesis_seed: u64,
    pub default_budget: usize,
    pub validation_environments: usize,
    pub validation_seed: u64,
    /// Comparison rationality assumed per mode.
    pub beta_c: BetaPreset,
    pub beta_f: Rationality,
    /// Skip band used by skip-aware selection.
    pub epsilon: f64,
    /// Where sessions are persisted; `None` keeps them in memory only.
    pub data_dir: Option<PathBuf>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            hypotheses: 500,
            hypothesis_seed: 1,
            default_budget: 20,
            validation_environments: 10,
            validation_seed: 1,
            beta_c: BetaPreset::pilot(),
            beta_f: Rationality::new(DEFAULT_BETA_F).expect("finite"),
            epsilon: 0.066,
            data_dir: None,
        }
    }
}

impl ServiceConfig {
    pub fn params(&self, mode: SelectionMode) -> Result<RationalityParams, SessionError> {
        RationalityParams::new(
            self.beta_c.for_mode(mode == SelectionMode::ComparisonOnly),
            self.beta_f,
            self.epsilon,
        )
        .map_err(|e| SessionError::InvalidRequest(e.to_string()))
    }
}

/// A loaded pool with the state shared by its sessions.
pub struct PoolEntry {
    pub name: String,
    pub pool: QueryPool,
    pub hypotheses: Arc<HypothesisSet>,
    pub validation_envs: Vec<Environment>,
}

impl PoolEntry {
    pub fn new(name: String, pool: QueryPool, cfg: &ServiceConfig) -> Result<Self, SessionError> {
        let hypotheses = HypothesisSet::sample(cfg.hypotheses, cfg.hypothesis_seed)
            .map_err(|e| SessionError::InvalidRequest(e.to_string()))?;
        let validation_envs = RegretEvaluator::test_environments(
            &pool,
            cfg.validation_environments,
            cfg.validation_seed,
        );
        Ok(Self {
            name,
            pool,
            hypotheses: Arc::new(hypotheses),
            validation_envs,
        })
    }

    fn hash(&self) -> &str {
        &self.pool.provenance.config_hash
    }
}

/// One line of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case", deny_unknown_fields)]
pub enum SessionEvent {
    Created {
        schema: String,
        session_id: String,
        pool: String,
        pool_hash: String,
        mode: SelectionMode,
        budget: usize,
        participant: Option<String>,
        seed: u64,
    },
    QueryIssued {
        query_id: u32,
    },
    Answered {
        query_id: u32,
        answer: Answer,
    },
    /// The two rewards compared in validation and, per environment, which
    /// method is shown first.
    ValidationReady {
        rewards: BTreeMap<String, RewardWeights>,
        order: Vec<[String; 2]>,
    },
    Voted {
        env_index: usize,
        choice: Slot,
    },
}

/// Parse a session log (one JSON event per line; blank lines ignored).
pub fn parse_events(text: &str) -> Result<Vec<SessionEvent>, SessionError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| SessionError::Corrupt(format!("line {}: {e}", i + 1)))
        })
        .collect()
}

#[derive(Debug, Clone)]
struct Validation {
    rewards: BTreeMap<String, RewardWeights>,
    order: Vec<[String; 2]>,
    /// Per environment, in presentation order.
    trajectories: Vec<[Trajectory; 2]>,
}

#[derive(Clone)]
pub struct Session {
    id: String,
    pool: Arc<PoolEntry>,
    mode: SelectionMode,
    budget: usize,
    participant: Option<String>,
    seed: u64,
    params: RationalityParams,
    belief: Belief,
    asked: BTreeSet<QueryId>,
    log: AnswerLog,
    pending: Option<QueryId>,
    phase: Phase,
    validation: Option<Validation>,
    votes: BTreeMap<usize, Slot>,
    events: usize,
}

fn require(phase: Phase, expected: Phase) -> Result<(), SessionError> {
    if phase == expected {
        Ok(())
    } else {
        Err(SessionError::WrongPhase {
            expected,
            actual: phase,
        })
    }
}

impl Session {
    fn from_created(
        ev: &SessionEvent,
        pools: &BTreeMap<String, Arc<PoolEntry>>,
        cfg: &ServiceConfig,
    ) -> Result<Self, SessionError> {
        let SessionEvent::Created {
            schema,
            session_id,
            pool,
            pool_hash,
            mode,
            budget,
            participant,
            seed,
        } = ev
        else {
            return Err(SessionError::Corrupt(
                "log does not start with a created event".into(),
            ));
        };
        if schema != EVENT_SCHEMA {
            return Err(SessionError::Corrupt(format!(
                "schema {schema:?}, expected {EVENT_SCHEMA:?}"
            )));
        }
        let entry = pools
            .get(pool)
            .ok_or_else(|| SessionError::UnknownPool(pool.clone()))?
            .clone();
        if entry.hash() != pool_hash {
            return Err(SessionError::Corrupt(format!(
                "pool {pool:?} changed since the session was created"
            )));
        }
        if *budget == 0 || *budget > entry.pool.len() {
            return Err(SessionError::InvalidRequest(format!(
                "budget must be in 1..={}",
                entry.pool.len()
            )));
        }
        Ok(Self {
            id: session_id.clone(),
            mode: *mode,
            budget: *budget,
            participant: participant.clone(),
            seed: *seed,
            params: cfg.params(*mode)?,
            belief: Belief::uniform(entry.hypotheses.clone()),
            pool: entry,
            asked: BTreeSet::new(),
            log: AnswerLog::new(),
            pending: None,
            phase: Phase::Training,
            validation: None,
            votes: BTreeMap::new(),
            events: 1,
        })
    }

    fn apply(&mut self, ev: &SessionEvent) -> Result<(), SessionError> {
        match ev {
            SessionEvent::Created { .. } => {
                return Err(SessionError::Corrupt("repeated created event".into()))
            }
            SessionEvent::QueryIssued { query_id } => {
                require(self.phase, Phase::Training)?;
                let id = QueryId(*query_id);
                if self.pending.is_some()
                    || self.asked.contains(&id)
                    || self.pool.pool.query(id).is_none()
                {
                    return Err(SessionError::Corrupt(format!(
                        "query {query_id} cannot be issued now"
                    )));
                }
                self.pending = Some(id);
            }
            SessionEvent::Answered { query_id, answer } => {
                require(self.phase, Phase::Training)?;
                if self.pending != Some(QueryId(*query_id)) {
                    return Err(SessionError::StaleAnswer {
                        pending: self.pending.map(|q| q.0),
                        got: *query_id,
                    });
                }
                if answer.feature.is_some() && !self.mode.asks_feature() {
                    return Err(SessionError::InvalidRequest(
                        "this session does not ask the feature question".into(),
                    ));
                }
                let q = self
                    .pool
                    .pool
                    .query(QueryId(*query_id))
                    .expect("pending query exists");
                self.belief = self
                    .belief
                    .update(q, answer, &self.params)
                    .map_err(|e| SessionError::InvalidRequest(e.to_string()))?;
                self.log.record(q, *answer);
                self.asked.insert(q.id);
                self.pending = None;
                if self.asked.len() == self.budget {
                    self.phase = Phase::Validation;
                }
            }
            SessionEvent::ValidationReady { rewards, order } => {
                require(self.phase, Phase::Validation)?;
                if self.validation.is_some() {
                    return Err(SessionError::Corrupt("validation prepared twice".into()));
                }
                let envs = &self.pool.validation_envs;
                if rewards.len() != 2 || order.len() != envs.len() {
                    return Err(SessionError::Corrupt(
                        "validation needs two rewards and one order per environment".into(),
                    ));
                }
                let mut trajectories = Vec::with_capacity(envs.len());
                for (env, pair) in envs.iter().zip(order) {
                    if pair[0] == pair[1] || !pair.iter().all(|m| rewards.contains_key(m)) {
                        return Err(SessionError::Corrupt(
                            "validation order must name both methods".into(),
                        ));
                    }
                    let opt = |m: &String| {
                        self.pool
                            .pool
                            .optimize(env, &rewards[m])
                            .map_err(|e| SessionError::Corrupt(e.to_string()))
                    };
                    trajectories.push([opt(&pair[0])?, opt(&pair[1])?]);
                }
                self.validation = Some(Validation {
                    rewards: rewards.clone(),
                    order: order.clone(),
                    trajectories,
                });
            }
            SessionEvent::Voted { env_index, choice } => {
                require(self.phase, Phase::Validation)?;
                let Some(v) = &self.validation else {
                    return Err(SessionError::AwaitingPartner);
                };
                if *env_index >= v.order.len() {
                    return Err(SessionError::InvalidRequest(format!(
                        "environment {env_index} out of range"
                    )));
                }
                if self.votes.contains_key(env_index) {
                    return Err(SessionError::DuplicateVote(*env_index));
                }
                self.votes.insert(*env_index, *choice);
                if self.votes.len() == v.order.len() {
                    self.phase = Phase::Done;
                }
            }
        }
        self.events += 1;
        Ok(())
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn belief(&self) -> &Belief {
        &self.belief
    }

    pub fn log(&self) -> &AnswerLog {
        &self.log
    }

    fn describe(&self) -> SessionResponse {
        SessionResponse {
            schema: SESSION_SCHEMA,
            session_id: self.id.clone(),
            pool: self.pool.name.clone(),
            mode: self.mode,
            participant: self.participant.clone(),
            phase: self.phase,
            iteration: self.asked.len(),
            budget: self.budget,
        }
    }

    fn summary(&self) -> BeliefSummaryResponse {
        let b = &self.belief;
        let hs = b.hypotheses();
        BeliefSummaryResponse {
            schema: BELIEF_SUMMARY_SCHEMA,
            session_id: self.id.clone(),
            phase: self.phase,
            iteration: self.asked.len(),
            budget: self.budget,
            entropy: b.entropy(),
            max_entropy: (b.len() as f64).ln(),
            map_weights: *b.map_theta(),
            top: b
                .top(TOP_K)
                .into_iter()
                .map(|i| RankedHypothesis {
                    index: i,
                    probability: b.probability(i),
                    weights: *hs.get(i),
                })
                .collect(),
        }
    }

    fn query_payload(&self, id: QueryId) -> QueryResponse {
        let pool = &self.pool.pool;
        let q = pool.query(id).expect("issued query exists");
        let (a, b) = pool.trajectory_pair(q);
        let payload = |t: &Trajectory| TrajectoryPayload {
            controls: t.controls.clone(),
            states: t.states.clone(),
        };
        QueryResponse {
            schema: QUERY_SCHEMA,
            session_id: self.id.clone(),
            query_id: id.0,
            iteration: self.asked.len(),
            budget: self.budget,
            asks_feature: self.mode.asks_feature(),
            skip_allowed: self.mode.asks_feature(),
            features: feature_table(),
            environment: pool.environment(q).clone(),
            trajectory_a: payload(a),
            trajectory_b: payload(b),
        }
    }

    fn validation_payload(&self) -> ValidationResponse {
        let v = self.validation.as_ref().expect("validation prepared");
        let payload = |t: &Trajectory| TrajectoryPayload {
            controls: t.controls.clone(),
            states: t.states.clone(),
        };
        let items = self
            .pool
            .validation_envs
            .iter()
            .zip(&v.trajectories)
            .enumerate()
            .map(|(i, (env, [first, second]))| ValidationItemPayload {
                env_index: i,
                environment: env.clone(),
                first: payload(first),
                second: payload(second),
                vote: self.votes.get(&i).copied(),
            })
            .collect();
        let report = (self.phase == Phase::Done).then(|| {
            let total = self.votes.len();
            let methods = v
                .rewards
                .keys()
                .map(|m| {
                    let votes = self
                        .votes
                        .iter()
                        .filter(|(&i, s)| &v.order[i][s.index()] == m)
                        .count();
                    MethodShare {
                        method: m.clone(),
                        votes,
                        share: votes as f64 / total as f64,
                    }
                })
                .collect();
            ValidationReport { total, methods }
        });
        ValidationResponse {
            schema: VALIDATION_SCHEMA,
            session_id: self.id.clone(),
            phase: self.phase,
            items,
            report,
        }
    }

    fn validation_order(&self, methods: [&String; 2]) -> Vec<[String; 2]> {
        let mut rng = rng::stream(self.seed, "validation-order", &[]);
        (0..self.pool.validation_envs.len())
            .map(|_| {
                let (a, b) = if rng.random_bool(0.5) {
                    (methods[1], methods[0])
                } else {
                    (methods[0], methods[1])
                };
                [a.clone(), b.clone()]
            })
            .collect()
    }
}

fn valid_id(id: &str) -> bool {
    id.len() == 32
        && id
            .bytes()
            .all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase())
}

/// Session logs and snapshots under `<data_dir>/sessions/<id>/`.
struct Store {
    dir: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SnapshotFile {
    schema: String,
    events: usize,
    phase: Phase,
    belief: BeliefSnapshot,
}

impl Store {
    fn session_dir(&self, id: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join("sessions").join(id))
    }

    fn append(&self, id: &str, ev: &SessionEvent) -> Result<(), SessionError> {
        let Some(dir) = self.session_dir(id) else {
            return Ok(());
        };
        fs::create_dir_all(&dir)?;
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(EVENTS_FILE))?;
        let mut line = serde_json::to_string(ev).expect("event serializes");
        line.push('\n');
        f.write_all(line.as_bytes())?;
        f.sync_data()?;
        Ok(())
    }

    fn snapshot(&self, s: &Session) -> Result<(), SessionError> {
        let Some(dir) = self.session_dir(&s.id) else {
            return Ok(());
        };
        let snap = SnapshotFile {
            schema: SNAPSHOT_SCHEMA.into(),
            events: s.events,
            phase: s.phase,
            belief: BeliefSnapshot::of(&s.belief),
        };
        let tmp = dir.join(format!("{SNAPSHOT_FILE}.tmp"));
        fs::write(
            &tmp,
            serde_json::to_string(&snap).expect("snapshot serializes"),
        )?;
        fs::rename(tmp, dir.join(SNAPSHOT_FILE))?;
        Ok(())
    }

    fn session_ids(&self) -> Result<Vec<String>, SessionError> {
        let Some(dir) = &self.dir else {
            return Ok(Vec::new());
        };
        let root = dir.join("sessions");
        if !root.exists() {
            return Ok(Vec::new());
        }
        let mut ids: Vec<String> = fs::read_dir(root)?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| valid_id(n))
            .collect();
        ids.sort();
        Ok(ids)
    }
}

/// Rebuild a session from its log, checking it against the stored snapshot
/// when the snapshot covers the whole log.
pub fn replay(
    events: &[SessionEvent],
    pools: &BTreeMap<String, Arc<PoolEntry>>,
    cfg: &ServiceConfig,
    snapshot: Option<&str>,
) -> Result<Session, SessionError> {
    let first = events
        .first()
        .ok_or_else(|| SessionError::Corrupt("empty log".into()))?;
    let mut s = Session::from_created(first, pools, cfg)?;
    for ev in &events[1..] {
        s.apply(ev)?;
    }
    if let Some(text) = snapshot {
        let snap: SnapshotFile =
            serde_json::from_str(text).map_err(|e| SessionError::Corrupt(e.to_string()))?;
        if snap.schema != SNAPSHOT_SCHEMA {
            return Err(SessionError::Corrupt(format!(
                "snapshot schema {:?}",
                snap.schema
            )));
        }
        if snap.events == s.events
            && (snap.phase != s.phase || snap.belief != BeliefSnapshot::of(&s.belief))
        {
            return Err(SessionError::Corrupt(
                "snapshot disagrees with the replayed log".into(),
            ));
        }
    }
    Ok(s)
}

#[derive(Debug, Clone)]
struct Status {
    pool: String,
    participant: Option<String>,
    mode: SelectionMode,
    phase: Phase,
    map: RewardWeights,
}

/// All sessions of a running service. Mutations of one session are
/// serialized by its lock; the status table lets sessions read their
/// partner's latest committed state without taking the partner's lock.
pub struct SessionManager {
    config: ServiceConfig,
    pools: BTreeMap<String, Arc<PoolEntry>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    status: Mutex<HashMap<String, Status>>,
    store: Store,
}

impl SessionManager {
    /// Load pools and every persisted session. Sessions that fail to replay
    /// are skipped and reported.
    pub fn open(
        config: ServiceConfig,
        pools: Vec<(String, QueryPool)>,
    ) -> Result<(Self, Vec<(String, SessionError)>), SessionError> {
        let mut map = BTreeMap::new();
        for (name, pool) in pools {
            let entry = PoolEntry::new(name.clone(), pool, &config)?;
            if map.insert(name.clone(), Arc::new(entry)).is_some() {
                return Err(SessionError::InvalidRequest(format!(
                    "pool {name:?} given twice"
                )));
            }
        }
        let mgr = Self {
            store: Store {
                dir: config.data_dir.clone(),
            },
            config,
            pools: map,
            sessions: RwLock::new(HashMap::new()),
            status: Mutex::new(HashMap::new()),
        };
        let mut skipped = Vec::new();
        for id in mgr.store.session_ids()? {
            let dir = mgr.store.session_dir(&id).expect("store has a directory");
            match mgr.load(&dir) {
                Ok(s) => mgr.install(s),
                Err(e) => skipped.push((id, e)),
            }
        }
        Ok((mgr, skipped))
    }

    fn load(&self, dir: &Path) -> Result<Session, SessionError> {
        let events = parse_events(&fs::read_to_string(dir.join(EVENTS_FILE))?)?;
        let snapshot = fs::read_to_string(dir.join(SNAPSHOT_FILE)).ok();
        let s = replay(&events, &self.pools, &self.config, snapshot.as_deref())?;
        if dir.file_name().and_then(|n| n.to_str()) != Some(s.id.as_str()) {
            return Err(SessionError::Corrupt(
                "session id does not match its directory".into(),
            ));
        }
        Ok(s)
    }

    fn install(&self, s: Session) {
        self.set_status(&s);
        self.sessions
            .write()
            .expect("sessions lock")
            .insert(s.id.clone(), Arc::new(Mutex::new(s)));
    }

    fn set_status(&self, s: &Session) {
        let st = Status {
            pool: s.pool.name.clone(),
            participant: s.participant.clone(),
            mode: s.mode,
            phase: s.phase,
            map: *s.belief.map_theta(),
        };
        self.status
            .lock()
            .expect("status lock")
            .insert(s.id.clone(), st);
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn pool_names(&self) -> Vec<(String, usize)> {
        self.pools
            .iter()
            .map(|(n, p)| (n.clone(), p.pool.len()))
            .collect()
    }

    pub fn pool(&self, name: &str) -> Result<&Arc<PoolEntry>, SessionError> {
        self.pools
            .get(name)
            .ok_or_else(|| SessionError::UnknownPool(name.to_string()))
    }

    fn handle(&self, id: &str) -> Result<Arc<Mutex<Session>>, SessionError> {
        self.sessions
            .read()
            .expect("sessions lock")
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    /// Run `f` on the session under its lock; events it returns are applied
    /// to a copy, persisted, and only then committed.
    fn mutate<T>(
        &self,
        id: &str,
        f: impl FnOnce(&Session) -> Result<Vec<SessionEvent>, SessionError>,
        then: impl FnOnce(&Session) -> T,
    ) -> Result<T, SessionError> {
        let h = self.handle(id)?;
        let mut s = h.lock().expect("session lock");
        let events = f(&s)?;
        if !events.is_empty() {
            let mut next = s.clone();
            for ev in &events {
                next.apply(ev)?;
            }
            for ev in &events {
                self.store.append(id, ev)?;
            }
            if events
                .iter()
                .any(|e| matches!(e, SessionEvent::Answered { .. }))
            {
                self.store.snapshot(&next)?;
            }
            *s = next;
            self.set_status(&s);
        }
        Ok(then(&s))
    }

    fn read<T>(
        &self,
        id: &str,
        f: impl FnOnce(&Session) -> Result<T, SessionError>,
    ) -> Result<T, SessionError> {
        let h = self.handle(id)?;
        let s = h.lock().expect("session lock");
        f(&s)
    }

    pub fn create(&self, req: &CreateSessionRequest) -> Result<SessionResponse, SessionError> {
        let entry = self.pool(&req.pool)?;
        let budget = req.budget.unwrap_or(self.config.default_budget);
        if budget == 0 || budget > entry.pool.len() {
            return Err(SessionError::InvalidRequest(format!(
                "budget must be in 1..={}",
                entry.pool.len()
            )));
        }
        let mut random = rand::rng();
        let id: String = (0..16)
            .map(|_| format!("{:02x}", random.random::<u8>()))
            .collect();
        let created = SessionEvent::Created {
            schema: EVENT_SCHEMA.into(),
            session_id: id.clone(),
            pool: req.pool.clone(),
            pool_hash: entry.hash().to_string(),
            mode: req.mode,
            budget,
            participant: req.participant.clone(),
            seed: req.seed.unwrap_or_else(|| random.random()),
        };
        let s = Session::from_created(&created, &self.pools, &self.config)?;
        // Held across the check and the insert so two requests cannot both
        // claim the same participant slot.
        let mut status = self.status.lock().expect("status lock");
        if let Some(p) = &req.participant {
            let taken = status.values().any(|st| {
                st.participant.as_ref() == Some(p) && st.pool == req.pool && st.mode == req.mode
            });
            if taken {
                return Err(SessionError::InvalidRequest(format!(
                    "participant {p:?} already has a {} session on this pool",
                    req.mode
                )));
            }
        }
        self.store.append(&id, &created)?;
        status.insert(
            id.clone(),
            Status {
                pool: req.pool.clone(),
                participant: req.participant.clone(),
                mode: req.mode,
                phase: s.phase,
                map: *s.belief.map_theta(),
            },
        );
        drop(status);
        let out = s.describe();
        self.sessions
            .write()
            .expect("sessions lock")
            .insert(id, Arc::new(Mutex::new(s)));
        Ok(out)
    }

    pub fn describe(&self, id: &str) -> Result<SessionResponse, SessionError> {
        self.read(id, |s| Ok(s.describe()))
    }

    /// The pending query, choosing one if none is pending.
    pub fn next_query(&self, id: &str) -> Result<QueryResponse, SessionError> {
        self.mutate(
            id,
            |s| {
                require(s.phase, Phase::Training)?;
                if s.pending.is_some() {
                    return Ok(Vec::new());
                }
                let q = select_query(&s.belief, &s.pool.pool.queries, &s.params, s.mode, &s.asked)
                    .map_err(|e| match e {
                        ActiveError::PoolExhausted => SessionError::PoolExhausted,
                        other => SessionError::InvalidRequest(other.to_string()),
                    })?;
                Ok(vec![SessionEvent::QueryIssued { query_id: q.0 }])
            },
            |s| s.query_payload(s.pending.expect("query pending after issue")),
        )
    }

    pub fn submit(
        &self,
        id: &str,
        a: &AnswerPayload,
    ) -> Result<BeliefSummaryResponse, SessionError> {
        self.mutate(
            id,
            |_| {
                Ok(vec![SessionEvent::Answered {
                    query_id: a.query_id,
                    answer: a.answer,
                }])
            },
            Session::summary,
        )
    }

    pub fn belief_summary(&self, id: &str) -> Result<BeliefSummaryResponse, SessionError> {
        self.read(id, |s| Ok(s.summary()))
    }

    /// The two rewards to compare: this session's MAP against its partner's,
    /// or against the prior's MAP when the session has no partner.
    fn validation_rewards(
        &self,
        s: &Session,
    ) -> Result<BTreeMap<String, RewardWeights>, SessionError> {
        let mut rewards = BTreeMap::new();
        rewards.insert(s.mode.to_string(), *s.belief.map_theta());
        let partner = s.participant.as_ref().and_then(|p| {
            let status = self.status.lock().expect("status lock");
            let mut others: Vec<(&String, &Status)> = status
                .iter()
                .filter(|(oid, st)| {
                    *oid != &s.id && st.participant.as_ref() == Some(p) && st.pool == s.pool.name
                })
                .collect();
            others.sort_by_key(|(oid, _)| oid.as_str());
            others.first().map(|(_, st)| (*st).clone())
        });
        match partner {
            Some(st) if st.phase == Phase::Training => return Err(SessionError::AwaitingPartner),
            Some(st) => rewards.insert(st.mode.to_string(), st.map),
            None => rewards.insert(
                PRIOR_METHOD.into(),
                *Belief::uniform(s.pool.hypotheses.clone()).map_theta(),
            ),
        };
        Ok(rewards)
    }

    fn prepare_validation(&self, s: &Session) -> Result<Vec<SessionEvent>, SessionError> {
        require(s.phase, Phase::Validation)?;
        if s.validation.is_some() {
            return Ok(Vec::new());
        }
        let rewards = self.validation_rewards(s)?;
        let keys: Vec<&String> = rewards.keys().collect();
        let order = s.validation_order([keys[0], keys[1]]);
        Ok(vec![SessionEvent::ValidationReady { rewards, order }])
    }

    pub fn validation(&self, id: &str) -> Result<ValidationResponse, SessionError> {
        self.mutate(
            id,
            |s| {
                if s.phase == Phase::Done {
                    Ok(Vec::new())
                } else {
                    self.prepare_validation(s)
                }
            },
            Session::validation_payload,
        )
    }

    pub fn vote(&self, id: &str, v: &VoteRequest) -> Result<ValidationResponse, SessionError> {
        self.mutate(
            id,
            |s| {
                let mut evs = if s.phase == Phase::Done {
                    Vec::new()
                } else {
                    self.prepare_validation(s)?
                };
                evs.push(SessionEvent::Voted {
                    env_index: v.env_index,
                    choice: v.choice,
                });
                Ok(evs)
            },
            Session::validation_payload,
        )
    }

    /// The answer log in the standard answer-log file format.
    pub fn export_log(&self, id: &str) -> Result<String, SessionError> {
        self.read(id, |s| Ok(answer_log_to_string(&s.log)))
    }

    /// A copy of the session's current belief.
    pub fn belief(&self, id: &str) -> Result<Belief, SessionError> {
        self.read(id, |s| Ok(s.belief.clone()))
    }

    pub fn model_params(&self, id: &str) -> Result<RationalityParams, SessionError> {
        self.read(id, |s| Ok(s.params))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_are_lowercase_hex() {
        assert!(valid_id("0123456789abcdef0123456789abcdef"));
        assert!(!valid_id("0123456789ABCDEF0123456789abcdef"));
        assert!(!valid_id("../../etc/passwd"));
        assert!(!valid_id(""));
    }

    #[test]
    fn events_round_trip() {
        let evs = vec![
            SessionEvent::QueryIssued { query_id: 4 },
            SessionEvent::Answered {
                query_id: 4,
                answer: Answer::comparison_only(richpref::observation::Choice::B),
            },
            SessionEvent::Voted {
                env_index: 2,
                choice: Slot::Second,
            },
        ];
        let text: String = evs
            .iter()
            .map(|e| serde_json::to_string(e).unwrap() + "\n")
            .collect();
        assert_eq!(parse_events(&text).unwrap(), evs);
        assert!(parse_events("{\"event\":\"voted\",\"env_index\":1}").is_err());
        assert!(parse_events("{\"event\":\"query_issued\",\"query_id\":1,\"x\":2}").is_err());
    }
}
