//! Query pool construction: the per-(environment, reward) trajectory
//! optimizer, rejection sampling of plausible rewards, and pairing of
//! optimized trajectories into queries.

use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::belief::sample_unit_sphere;
use crate::features::{
    reward, Feature, FeatureParams, FeatureScales, RewardWeights, FEATURE_COUNT,
};
use crate::observation::{ObservationError, Query, QueryId, MIN_QUERY_SEPARATION};
use crate::rng;
use crate::world::{
    generate_environments, Control, Environment, SceneConfig, Simulator, Trajectory, WorldConfig,
    WorldError,
};

/// Scale below which a feature's mean pool difference counts as zero; such
/// features keep a unit scale.
const SCALE_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum QueryGenError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Observation(#[from] ObservationError),
    #[error("accepted {accepted} of {requested} plausible rewards after {draws} draws")]
    RejectionBudgetExceeded {
        requested: usize,
        accepted: usize,
        draws: u64,
    },
    #[error("a pool needs at least two rewards and one environment")]
    TooSmall,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid pool: {0}")]
    InvalidPool(String),
}

/// How control sequences are parameterized during optimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlSpace {
    /// Any control within the world's bounds.
    Continuous,
    /// Each control component takes one of `levels` evenly spaced values
    /// spanning its bounds.
    Discrete { levels: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    /// Random control sequences drawn before refinement (M).
    pub candidates: usize,
    /// Coordinate-descent passes (L).
    pub passes: usize,
    pub seed: u64,
    pub control_space: ControlSpace,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            candidates: 200,
            passes: 3,
            seed: 0x5eed_0001,
            control_space: ControlSpace::Continuous,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<(), QueryGenError> {
        if self.candidates == 0 {
            return Err(QueryGenError::InvalidConfig(
                "optimizer needs at least one candidate".into(),
            ));
        }
        if let ControlSpace::Discrete { levels } = self.control_space {
            if levels < 2 {
                return Err(QueryGenError::InvalidConfig(
                    "discrete controls need at least two levels".into(),
                ));
            }
        }
        Ok(())
    }
}

fn level_value(max: f64, levels: u32, k: u32) -> f64 {
    -max + 2.0 * max * f64::from(k) / f64::from(levels - 1)
}

/// Decode a discrete sequence index into controls (mixed radix, first
/// coordinate least significant).
fn decode_grid(world: &WorldConfig, levels: u32, horizon: usize, mut code: u128) -> Vec<Control> {
    let l = u128::from(levels);
    (0..horizon)
        .map(|_| {
            let s = (code % l) as u32;
            code /= l;
            let a = (code % l) as u32;
            code /= l;
            Control {
                steer: level_value(world.steer_max, levels, s),
                accel: level_value(world.accel_max, levels, a),
            }
        })
        .collect()
}

fn grid_size(levels: u32, horizon: usize) -> Option<u128> {
    u128::from(levels).checked_pow(u32::try_from(2 * horizon).ok()?)
}

/// The random candidate sequences the optimizer starts from. Exposed so
/// callers can check the result against every candidate.
///
/// Discrete grids with no more sequences than `candidates` are enumerated in
/// full rather than sampled.
pub fn candidate_controls(
    sim: &Simulator,
    env: &Environment,
    cfg: &OptimizerConfig,
) -> Vec<Vec<Control>> {
    let world = &sim.world;
    let horizon = sim.horizon();
    let mut rng = rng::stream(cfg.seed, "optimizer", &[u64::from(env.id)]);
    match cfg.control_space {
        ControlSpace::Continuous => {
            let mut out = Vec::with_capacity(cfg.candidates);
            out.push(vec![Control::default(); horizon]);
            while out.len() < cfg.candidates {
                out.push(
                    (0..horizon)
                        .map(|_| Control {
                            steer: rng.random_range(-world.steer_max..=world.steer_max),
                            accel: rng.random_range(-world.accel_max..=world.accel_max),
                        })
                        .collect(),
                );
            }
            out
        }
        ControlSpace::Discrete { levels } => match grid_size(levels, horizon) {
            Some(n) if n <= cfg.candidates as u128 => (0..n)
                .map(|code| decode_grid(world, levels, horizon, code))
                .collect(),
            _ => (0..cfg.candidates)
                .map(|_| {
                    (0..horizon)
                        .map(|_| Control {
                            steer: level_value(
                                world.steer_max,
                                levels,
                                rng.random_range(0..levels),
                            ),
                            accel: level_value(
                                world.accel_max,
                                levels,
                                rng.random_range(0..levels),
                            ),
                        })
                        .collect()
                })
                .collect(),
        },
    }
}

struct Objective<'a> {
    sim: &'a Simulator,
    env: &'a Environment,
    theta: &'a RewardWeights,
    scales: &'a FeatureScales,
}

impl Objective<'_> {
    fn eval(&self, controls: &[Control]) -> Result<f64, WorldError> {
        let phi = self.sim.features_of(self.env, controls)?;
        Ok(reward(self.theta, &self.scales.standardize(&phi)))
    }
}

/// Approximately maximize `theta · standardize(Phi)` over control sequences
/// in `env`: best of the random candidates, then coordinate descent. The
/// candidate stream depends on the environment id and the optimizer seed,
/// not on `theta`.
pub fn optimize_trajectory(
    sim: &Simulator,
    env: &Environment,
    theta: &RewardWeights,
    scales: &FeatureScales,
    cfg: &OptimizerConfig,
) -> Result<Trajectory, QueryGenError> {
    cfg.validate()?;
    if env.horizon() != sim.horizon() {
        return Err(WorldError::HorizonMismatch {
            expected: sim.horizon(),
            got: env.horizon(),
        }
        .into());
    }
    let obj = Objective {
        sim,
        env,
        theta,
        scales,
    };

    let mut best: Option<(f64, Vec<Control>)> = None;
    for c in candidate_controls(sim, env, cfg) {
        let v = obj.eval(&c)?;
        if best.as_ref().is_none_or(|(b, _)| v > *b) {
            best = Some((v, c));
        }
    }
    let (mut best_v, mut best_c) = best.expect("at least one candidate");

    let world = &sim.world;
    match cfg.control_space {
        ControlSpace::Continuous => {
            let mut steps = [world.steer_max / 2.0, world.accel_max / 2.0];
            for _ in 0..cfg.passes {
                for t in 0..best_c.len() {
                    for (dim, &step) in steps.iter().enumerate() {
                        for dir in [1.0, -1.0] {
                            let mut trial = best_c.clone();
                            let slot = &mut trial[t];
                            if dim == 0 {
                                slot.steer = (slot.steer + dir * step)
                                    .clamp(-world.steer_max, world.steer_max);
                            } else {
                                slot.accel = (slot.accel + dir * step)
                                    .clamp(-world.accel_max, world.accel_max);
                            }
                            let v = obj.eval(&trial)?;
                            if v > best_v {
                                best_v = v;
                                best_c = trial;
                            }
                        }
                    }
                }
                steps = steps.map(|s| s / 2.0);
            }
        }
        ControlSpace::Discrete { levels } => {
            for _ in 0..cfg.passes {
                for t in 0..best_c.len() {
                    for dim in 0..2 {
                        for k in 0..levels {
                            let mut trial = best_c.clone();
                            if dim == 0 {
                                trial[t].steer = level_value(world.steer_max, levels, k);
                            } else {
                                trial[t].accel = level_value(world.accel_max, levels, k);
                            }
                            let v = obj.eval(&trial)?;
                            if v > best_v {
                                best_v = v;
                                best_c = trial;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(sim.rollout(env, &best_c)?)
}

/// Rejection thresholds for plausible rewards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlausibilityConfig {
    /// Minimum allowed center distance to the traffic car, in lane widths.
    pub d_min: f64,
    pub max_draws: u64,
}

impl Default for PlausibilityConfig {
    fn default() -> Self {
        Self {
            d_min: 0.5,
            max_draws: 1_000_000,
        }
    }
}

/// Whether a trajectory ends on the road and keeps `d_min` from the traffic
/// car at every step after the start.
pub fn is_plausible(env: &Environment, traj: &Trajectory, d_min: f64) -> bool {
    let Some(last) = traj.states.last() else {
        return false;
    };
    if !env.road.on_road(last.y) {
        return false;
    }
    traj.states
        .iter()
        .zip(&env.other_trajectory)
        .skip(1)
        .all(|(s, o)| {
            let (dx, dy) = (s.x - o.x, s.y - o.y);
            (dx * dx + dy * dy).sqrt() >= d_min
        })
}

/// Draw unit-norm rewards until `count` of them optimize to plausible
/// behavior in `probe`. Optimization uses raw (unit-scale) features.
pub fn sample_plausible_rewards(
    count: usize,
    seed: u64,
    sim: &Simulator,
    probe: &Environment,
    optimizer: &OptimizerConfig,
    plausibility: &PlausibilityConfig,
) -> Result<Vec<RewardWeights>, QueryGenError> {
    if count == 0 {
        return Err(QueryGenError::InvalidConfig(
            "plausible reward count must be at least 1".into(),
        ));
    }
    let scales = FeatureScales::default();
    let mut rng = rng::stream(seed, "plausible", &[]);
    let mut out = Vec::with_capacity(count);
    let mut draws = 0u64;
    while out.len() < count {
        if draws >= plausibility.max_draws {
            return Err(QueryGenError::RejectionBudgetExceeded {
                requested: count,
                accepted: out.len(),
                draws,
            });
        }
        draws += 1;
        let theta = sample_unit_sphere(&mut rng);
        let traj = optimize_trajectory(sim, probe, &theta, &scales, optimizer)?;
        if is_plausible(probe, &traj, plausibility.d_min) {
            out.push(theta);
        }
    }
    Ok(out)
}

/// Which trajectory pairs become queries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairingConfig {
    /// Cap on the number of queries; pairs are subsampled with the seed.
    pub pool_size: usize,
    /// Allow A/B-swapped copies of pairs when `pool_size` exceeds the
    /// number of usable pairs.
    pub order_variants: bool,
    /// Two trajectories form a query only if the ego positions are at least
    /// this far apart (lane widths) at some step. Pairs below it look the
    /// same to a viewer.
    pub min_separation: f64,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            pool_size: 500,
            order_variants: false,
            min_separation: 1.0,
        }
    }
}

impl PairingConfig {
    pub fn validate(&self) -> Result<(), QueryGenError> {
        if !(self.min_separation.is_finite() && self.min_separation >= 0.0) {
            return Err(QueryGenError::InvalidConfig(
                "min_separation must be a nonnegative number".into(),
            ));
        }
        Ok(())
    }

    /// Whether two trajectories of one environment may be paired.
    pub fn accepts(&self, a: &Trajectory, b: &Trajectory) -> bool {
        (a.phi - b.phi).max_abs() > MIN_QUERY_SEPARATION
            && max_position_gap(a, b) >= self.min_separation
    }
}

/// Largest ego position difference between two trajectories over all steps.
pub fn max_position_gap(a: &Trajectory, b: &Trajectory) -> f64 {
    a.states
        .iter()
        .zip(&b.states)
        .map(|(s, t)| (s.x - t.x).hypot(s.y - t.y))
        .fold(0.0, f64::max)
}

/// Everything needed to rebuild a pool from scratch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub seed: u64,
    pub environments: usize,
    pub rewards: usize,
    pub pairing: PairingConfig,
    pub world: WorldConfig,
    pub features: FeatureParams,
    pub scene: SceneConfig,
    pub optimizer: OptimizerConfig,
    pub plausibility: PlausibilityConfig,
}

impl Default for PoolConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl PoolConfig {
    /// 40 environments, 19 rewards, 500 queries.
    pub fn desk() -> Self {
        Self {
            seed: 2019,
            environments: 40,
            rewards: 19,
            pairing: PairingConfig::default(),
            world: WorldConfig::default(),
            features: FeatureParams::default(),
            scene: SceneConfig::default(),
            optimizer: OptimizerConfig::default(),
            plausibility: PlausibilityConfig::default(),
        }
    }

    /// Same recipe with 7000 queries; pairs are topped up with swapped
    /// copies since 40 environments give at most 6840 distinct pairs.
    pub fn full() -> Self {
        let desk = Self::desk();
        Self {
            pairing: PairingConfig {
                pool_size: 7000,
                order_variants: true,
                ..desk.pairing
            },
            ..desk
        }
    }

    pub fn simulator(&self) -> Simulator {
        Simulator::new(self.world, self.features)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    /// Subsampling and orientation seed.
    pub seed: u64,
    /// Hex SHA-256 of the canonical JSON of the build inputs.
    pub config_hash: String,
    /// Present when the pool was built from a [`PoolConfig`].
    pub config: Option<PoolConfig>,
}

/// A precomputed set of queries. Trajectories are stored per environment,
/// one per plausible reward, and queries index into them.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPool {
    pub simulator: Simulator,
    pub optimizer: OptimizerConfig,
    pub environments: Vec<Environment>,
    pub plausible_thetas: Vec<RewardWeights>,
    /// `trajectories[env][reward]`.
    pub trajectories: Vec<Vec<Trajectory>>,
    pub queries: Vec<Query>,
    pub feature_scales: FeatureScales,
    pub provenance: Provenance,
}

pub fn config_hash<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Number of same-environment pairs accepted by `pairing` before
/// subsampling.
pub fn usable_pair_count(trajectories: &[Vec<Trajectory>], pairing: &PairingConfig) -> usize {
    trajectories
        .iter()
        .map(|ts| {
            let mut n = 0;
            for i in 0..ts.len() {
                for j in i + 1..ts.len() {
                    if pairing.accepts(&ts[i], &ts[j]) {
                        n += 1;
                    }
                }
            }
            n
        })
        .sum()
}

/// Build a pool from explicit environments and rewards.
pub fn build_pool(
    sim: &Simulator,
    optimizer: &OptimizerConfig,
    envs: Vec<Environment>,
    thetas: Vec<RewardWeights>,
    pairing: &PairingConfig,
    seed: u64,
) -> Result<QueryPool, QueryGenError> {
    #[derive(Serialize)]
    struct Inputs<'a> {
        simulator: &'a Simulator,
        optimizer: &'a OptimizerConfig,
        environments: &'a [Environment],
        thetas: &'a [RewardWeights],
        pairing: &'a PairingConfig,
        seed: u64,
    }
    let hash = config_hash(&Inputs {
        simulator: sim,
        optimizer,
        environments: &envs,
        thetas: &thetas,
        pairing,
        seed,
    });
    assemble(
        sim,
        optimizer,
        envs,
        thetas,
        pairing,
        Provenance {
            seed,
            config_hash: hash,
            config: None,
        },
    )
}

/// Generate environments, sample plausible rewards, and build the pool.
pub fn build_pool_from_config(cfg: &PoolConfig) -> Result<QueryPool, QueryGenError> {
    cfg.world.validate()?;
    if cfg.environments == 0 || cfg.rewards < 2 {
        return Err(QueryGenError::TooSmall);
    }
    let sim = cfg.simulator();
    let envs = generate_environments(
        cfg.environments,
        0,
        rng::derive_seed(cfg.seed, "environments", &[]),
        &cfg.scene,
        &cfg.world,
    );
    let thetas = sample_plausible_rewards(
        cfg.rewards,
        rng::derive_seed(cfg.seed, "rewards", &[]),
        &sim,
        &envs[0],
        &cfg.optimizer,
        &cfg.plausibility,
    )?;
    let provenance = Provenance {
        seed: cfg.seed,
        config_hash: config_hash(cfg),
        config: Some(*cfg),
    };
    assemble(&sim, &cfg.optimizer, envs, thetas, &cfg.pairing, provenance)
}

fn assemble(
    sim: &Simulator,
    optimizer: &OptimizerConfig,
    envs: Vec<Environment>,
    thetas: Vec<RewardWeights>,
    pairing: &PairingConfig,
    provenance: Provenance,
) -> Result<QueryPool, QueryGenError> {
    if envs.is_empty() || thetas.len() < 2 {
        return Err(QueryGenError::TooSmall);
    }
    optimizer.validate()?;
    pairing.validate()?;
    sim.world.validate()?;
    for env in &envs {
        env.validate(sim.horizon())?;
    }
    let unit = FeatureScales::default();
    let cells: Vec<(usize, usize)> = (0..envs.len())
        .flat_map(|e| (0..thetas.len()).map(move |k| (e, k)))
        .collect();
    let flat = cells
        .par_iter()
        .map(|&(e, k)| optimize_trajectory(sim, &envs[e], &thetas[k], &unit, optimizer))
        .collect::<Result<Vec<_>, _>>()?;
    let mut flat = flat.into_iter();
    let trajectories: Vec<Vec<Trajectory>> = envs
        .iter()
        .map(|_| flat.by_ref().take(thetas.len()).collect())
        .collect();

    let mut rng = rng::stream(provenance.seed, "pool", &[]);
    let mut pairs = Vec::new();
    for (e, ts) in trajectories.iter().enumerate() {
        for i in 0..ts.len() {
            for j in i + 1..ts.len() {
                if pairing.accepts(&ts[i], &ts[j]) {
                    pairs.push(if rng.random_bool(0.5) {
                        (e, j, i)
                    } else {
                        (e, i, j)
                    });
                }
            }
        }
    }
    let n = pairs.len();
    let pool_size = pairing.pool_size;
    let chosen: Vec<(usize, usize, usize)> = if pool_size <= n || !pairing.order_variants {
        let pool_size = pool_size.min(n);
        let mut idx = index::sample(&mut rng, n, pool_size).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| pairs[i]).collect()
    } else {
        let extra = (pool_size - n).min(n);
        let mut idx = index::sample(&mut rng, n, extra).into_vec();
        idx.sort_unstable();
        let swapped: Vec<_> = idx
            .into_iter()
            .map(|i| (pairs[i].0, pairs[i].2, pairs[i].1))
            .collect();
        pairs.iter().copied().chain(swapped).collect()
    };

    let feature_scales = pool_scales(&trajectories, &chosen);
    let queries = chosen
        .iter()
        .enumerate()
        .map(|(id, &(e, a, b))| {
            Query::new(
                QueryId(id as u32),
                e,
                a,
                b,
                feature_scales.standardize(&trajectories[e][a].phi),
                feature_scales.standardize(&trajectories[e][b].phi),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(QueryPool {
        simulator: *sim,
        optimizer: *optimizer,
        environments: envs,
        plausible_thetas: thetas,
        trajectories,
        queries,
        feature_scales,
        provenance,
    })
}

/// Per-feature mean absolute raw difference over the chosen pairs, with a
/// unit fallback for features that never differ.
fn pool_scales(
    trajectories: &[Vec<Trajectory>],
    chosen: &[(usize, usize, usize)],
) -> FeatureScales {
    let mut sums = [0.0; FEATURE_COUNT];
    for &(e, a, b) in chosen {
        let d = trajectories[e][a].phi - trajectories[e][b].phi;
        for (s, v) in sums.iter_mut().zip(d.0) {
            *s += v.abs();
        }
    }
    let count = chosen.len().max(1) as f64;
    FeatureScales(sums.map(|s| {
        let m = s / count;
        if m > SCALE_FLOOR {
            m
        } else {
            1.0
        }
    }))
}

impl QueryPool {
    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }

    pub fn query(&self, id: QueryId) -> Option<&Query> {
        self.queries.get(id.0 as usize)
    }

    pub fn environment(&self, q: &Query) -> &Environment {
        &self.environments[q.env]
    }

    pub fn trajectory_pair(&self, q: &Query) -> (&Trajectory, &Trajectory) {
        let ts = &self.trajectories[q.env];
        (&ts[q.traj_a], &ts[q.traj_b])
    }

    pub fn feature_labels(&self) -> [&'static str; FEATURE_COUNT] {
        Feature::ALL.map(Feature::label)
    }

    /// The trajectory a reward would produce, scored against the pool's
    /// standardized features. Used for regret and validation.
    pub fn optimize(
        &self,
        env: &Environment,
        theta: &RewardWeights,
    ) -> Result<Trajectory, QueryGenError> {
        optimize_trajectory(
            &self.simulator,
            env,
            theta,
            &self.feature_scales,
            &self.optimizer,
        )
    }

    /// Structural and numerical consistency checks, including re-simulating
    /// every stored trajectory.
    pub fn validate(&self) -> Result<(), QueryGenError> {
        let bad = |m: String| Err(QueryGenError::InvalidPool(m));
        self.simulator.world.validate()?;
        self.optimizer.validate()?;
        if !self.feature_scales.validate() {
            return bad("feature scales must be positive and finite".into());
        }
        if self.trajectories.len() != self.environments.len() {
            return bad("one trajectory list per environment required".into());
        }
        for (e, (env, ts)) in self.environments.iter().zip(&self.trajectories).enumerate() {
            env.validate(self.simulator.horizon())?;
            if ts.len() != self.plausible_thetas.len() {
                return bad(format!("environment {e} has {} trajectories", ts.len()));
            }
            for (k, t) in ts.iter().enumerate() {
                if !self.simulator.verify(env, t) {
                    return bad(format!(
                        "trajectory {k} of environment {e} does not re-simulate"
                    ));
                }
            }
        }
        for (i, q) in self.queries.iter().enumerate() {
            if q.id.0 as usize != i {
                return bad(format!("query at position {i} has id {}", q.id));
            }
            let Some(ts) = self.trajectories.get(q.env) else {
                return bad(format!(
                    "query {i} references missing environment {}",
                    q.env
                ));
            };
            let (Some(a), Some(b)) = (ts.get(q.traj_a), ts.get(q.traj_b)) else {
                return bad(format!("query {i} references a missing trajectory"));
            };
            let expect = Query::new(
                q.id,
                q.env,
                q.traj_a,
                q.traj_b,
                self.feature_scales.standardize(&a.phi),
                self.feature_scales.standardize(&b.phi),
            )?;
            if expect != *q {
                return bad(format!("query {i} features disagree with its trajectories"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::CarState;

    fn small_sim(horizon: usize) -> Simulator {
        Simulator::new(
            WorldConfig {
                horizon,
                ..WorldConfig::default()
            },
            FeatureParams::default(),
        )
    }

    fn envs(n: usize, horizon: usize, seed: u64) -> Vec<Environment> {
        let world = WorldConfig {
            horizon,
            ..WorldConfig::default()
        };
        generate_environments(n, 0, seed, &SceneConfig::default(), &world)
    }

    fn theta(seed: u64) -> RewardWeights {
        sample_unit_sphere(&mut rng::stream(seed, "test-theta", &[]))
    }

    #[test]
    fn discrete_t2_matches_exhaustive_search() {
        let sim = small_sim(2);
        let cfg = OptimizerConfig {
            control_space: ControlSpace::Discrete { levels: 3 },
            ..OptimizerConfig::default()
        };
        let scales = FeatureScales::default();
        for (i, env) in envs(10, 2, 3).iter().enumerate() {
            let th = theta(i as u64);
            let got = optimize_trajectory(&sim, env, &th, &scales, &cfg).unwrap();
            let mut best = f64::NEG_INFINITY;
            for s1 in [-0.3, 0.0, 0.3] {
                for a1 in [-0.25, 0.0, 0.25] {
                    for s2 in [-0.3, 0.0, 0.3] {
                        for a2 in [-0.25, 0.0, 0.25] {
                            let c = [
                                Control {
                                    steer: s1,
                                    accel: a1,
                                },
                                Control {
                                    steer: s2,
                                    accel: a2,
                                },
                            ];
                            best = best.max(reward(&th, &sim.features_of(env, &c).unwrap()));
                        }
                    }
                }
            }
            assert_eq!(reward(&th, &got.phi), best);
        }
    }

    #[test]
    fn pure_speed_beats_random_rollouts() {
        let sim = Simulator::default();
        let env = &envs(1, 10, 9)[0];
        let th = RewardWeights::basis(Feature::Speed);
        let best = optimize_trajectory(
            &sim,
            env,
            &th,
            &FeatureScales::default(),
            &OptimizerConfig::default(),
        )
        .unwrap();
        let mean_speed = |t: &Trajectory| t.states[1..].iter().map(|s| s.speed).sum::<f64>() / 10.0;
        let mut rng = rng::stream(1, "baseline", &[]);
        for _ in 0..1000 {
            let c: Vec<Control> = (0..10)
                .map(|_| Control {
                    steer: rng.random_range(-0.3..=0.3),
                    accel: rng.random_range(-0.25..=0.25),
                })
                .collect();
            assert!(mean_speed(&best) >= mean_speed(&sim.rollout(env, &c).unwrap()));
        }
    }

    #[test]
    fn rescaled_theta_gives_identical_trajectory() {
        let sim = Simulator::default();
        let env = &envs(1, 10, 4)[0];
        let th = theta(11);
        let doubled = RewardWeights::normalized(th.values().map(|v| 2.0 * v)).unwrap();
        let cfg = OptimizerConfig::default();
        let s = FeatureScales::default();
        assert_eq!(
            optimize_trajectory(&sim, env, &th, &s, &cfg).unwrap(),
            optimize_trajectory(&sim, env, &doubled, &s, &cfg).unwrap()
        );
    }

    #[test]
    fn never_worse_than_any_candidate() {
        let sim = Simulator::default();
        let cfg = OptimizerConfig::default();
        let s = FeatureScales([0.5, 1.0, 2.0, 1.0, 3.0, 1.0, 1.0]);
        for (i, env) in envs(3, 10, 5).iter().enumerate() {
            let th = theta(100 + i as u64);
            let got = reward(
                &th,
                &s.standardize(&optimize_trajectory(&sim, env, &th, &s, &cfg).unwrap().phi),
            );
            for c in candidate_controls(&sim, env, &cfg) {
                assert!(got >= reward(&th, &s.standardize(&sim.features_of(env, &c).unwrap())));
            }
        }
    }

    #[test]
    fn full_enumeration_only_when_grid_fits() {
        let sim = small_sim(2);
        let env = &envs(1, 2, 1)[0];
        let cfg = OptimizerConfig {
            control_space: ControlSpace::Discrete { levels: 3 },
            ..OptimizerConfig::default()
        };
        assert_eq!(candidate_controls(&sim, env, &cfg).len(), 81);
        let cfg = OptimizerConfig {
            control_space: ControlSpace::Discrete { levels: 5 },
            ..cfg
        };
        assert_eq!(candidate_controls(&sim, env, &cfg).len(), 200);
    }

    #[test]
    fn plausible_rewards_satisfy_rejection_tests() {
        let sim = Simulator::default();
        let probe = &envs(1, 10, 21)[0];
        let cfg = OptimizerConfig::default();
        let p = PlausibilityConfig::default();
        let a = sample_plausible_rewards(5, 8, &sim, probe, &cfg, &p).unwrap();
        assert_eq!(a.len(), 5);
        for th in &a {
            let t = optimize_trajectory(&sim, probe, th, &FeatureScales::default(), &cfg).unwrap();
            assert!(is_plausible(probe, &t, p.d_min));
        }
        assert_eq!(
            a,
            sample_plausible_rewards(5, 8, &sim, probe, &cfg, &p).unwrap()
        );
    }

    #[test]
    fn rejection_budget_is_enforced() {
        let sim = Simulator::default();
        let probe = &envs(1, 10, 21)[0];
        let p = PlausibilityConfig {
            d_min: 1e9,
            max_draws: 10,
        };
        let err = sample_plausible_rewards(1, 0, &sim, probe, &OptimizerConfig::default(), &p)
            .unwrap_err();
        assert!(matches!(
            err,
            QueryGenError::RejectionBudgetExceeded {
                draws: 10,
                accepted: 0,
                ..
            }
        ));
    }

    #[test]
    fn implausible_when_off_road_or_colliding() {
        let sim = Simulator::default();
        let mut env = envs(1, 10, 2)[0].clone();
        let t = sim.rollout(&env, &[Control::default(); 10]).unwrap();
        env.other_trajectory = t.states.clone();
        assert!(!is_plausible(&env, &t, 0.5));
        env.other_trajectory = t
            .states
            .iter()
            .map(|s| CarState {
                x: s.x + 10.0,
                ..*s
            })
            .collect();
        assert!(is_plausible(&env, &t, 0.5));
        let mut off = t.clone();
        off.states.last_mut().unwrap().y = -5.0;
        assert!(!is_plausible(&env, &off, 0.5));
    }

    fn pairing(pool_size: usize, order_variants: bool) -> PairingConfig {
        PairingConfig {
            pool_size,
            order_variants,
            ..PairingConfig::default()
        }
    }

    #[test]
    fn close_pairs_are_rejected() {
        let sim = Simulator::default();
        let env = envs(1, 10, 14)[0].clone();
        let a = sim.rollout(&env, &[Control::default(); 10]).unwrap();
        let b = sim
            .rollout(
                &env,
                &[Control {
                    steer: 0.0,
                    accel: 0.01,
                }; 10],
            )
            .unwrap();
        let gap = max_position_gap(&a, &b);
        assert!(gap > 0.0 && (a.phi - b.phi).max_abs() > MIN_QUERY_SEPARATION);
        let loose = PairingConfig {
            min_separation: gap,
            ..PairingConfig::default()
        };
        let strict = PairingConfig {
            min_separation: gap * 1.01,
            ..PairingConfig::default()
        };
        assert!(loose.accepts(&a, &b));
        assert!(!strict.accepts(&a, &b));
        assert!(!loose.accepts(&a, &a));
    }

    #[test]
    fn pool_respects_min_separation() {
        let sim = Simulator::default();
        let e = envs(3, 10, 15);
        let thetas: Vec<_> = (0..5).map(|i| theta(20 + i)).collect();
        let pool = build_pool(
            &sim,
            &OptimizerConfig::default(),
            e,
            thetas,
            &pairing(1000, false),
            2,
        )
        .unwrap();
        for q in &pool.queries {
            let (a, b) = pool.trajectory_pair(q);
            assert!(max_position_gap(a, b) >= 1.0);
        }
    }

    #[test]
    fn two_rewards_one_environment_gives_one_query() {
        let sim = Simulator::default();
        let e = envs(1, 10, 6);
        let thetas = vec![
            RewardWeights::basis(Feature::Speed),
            RewardWeights::basis(Feature::Reverse),
        ];
        let pool = build_pool(
            &sim,
            &OptimizerConfig::default(),
            e,
            thetas,
            &pairing(500, false),
            1,
        )
        .unwrap();
        assert_eq!(pool.len(), 1);
        pool.validate().unwrap();
    }

    #[test]
    fn pool_invariants_and_reproducibility() {
        let sim = Simulator::default();
        let e = envs(4, 10, 7);
        let thetas: Vec<_> = (0..5).map(theta).collect();
        let cfg = OptimizerConfig::default();
        let pool = build_pool(
            &sim,
            &cfg,
            e.clone(),
            thetas.clone(),
            &pairing(25, false),
            3,
        )
        .unwrap();
        let bound = usable_pair_count(&pool.trajectories, &pairing(0, false));
        assert!(bound <= 4 * 10);
        assert_eq!(pool.len(), 25.min(bound));
        for q in &pool.queries {
            assert!((q.phi_a - q.phi_b).max_abs() > MIN_QUERY_SEPARATION);
            let (a, b) = pool.trajectory_pair(q);
            assert_eq!(a.states[0], pool.environment(q).ego_init);
            assert_eq!(b.states[0], pool.environment(q).ego_init);
        }
        pool.validate().unwrap();
        assert_eq!(
            pool,
            build_pool(&sim, &cfg, e, thetas, &pairing(25, false), 3).unwrap()
        );
    }

    #[test]
    fn oversized_request_adds_swapped_variants() {
        let sim = Simulator::default();
        let e = envs(2, 10, 8);
        let thetas: Vec<_> = (0..3).map(|i| theta(40 + i)).collect();
        let pool = build_pool(
            &sim,
            &OptimizerConfig::default(),
            e,
            thetas,
            &pairing(1000, true),
            3,
        )
        .unwrap();
        let n = usable_pair_count(&pool.trajectories, &pairing(0, false));
        assert_eq!(pool.len(), 2 * n);
        pool.validate().unwrap();
    }

    #[test]
    fn scales_are_mean_absolute_differences() {
        let sim = Simulator::default();
        let e = envs(3, 10, 12);
        let thetas: Vec<_> = (0..4).map(|i| theta(70 + i)).collect();
        let pool = build_pool(
            &sim,
            &OptimizerConfig::default(),
            e,
            thetas,
            &pairing(1000, true),
            5,
        )
        .unwrap();
        for f in 0..FEATURE_COUNT {
            let m = pool
                .queries
                .iter()
                .map(|q| {
                    let (a, b) = pool.trajectory_pair(q);
                    (a.phi.0[f] - b.phi.0[f]).abs()
                })
                .sum::<f64>()
                / pool.len() as f64;
            let expect = if m > SCALE_FLOOR { m } else { 1.0 };
            assert!((pool.feature_scales.0[f] - expect).abs() <= 1e-12 * expect.max(1.0));
        }
    }

    #[test]
    fn tampered_pool_fails_validation() {
        let sim = Simulator::default();
        let e = envs(2, 10, 13);
        let thetas: Vec<_> = (0..3).map(|i| theta(90 + i)).collect();
        let mut pool = build_pool(
            &sim,
            &OptimizerConfig::default(),
            e,
            thetas,
            &pairing(10, false),
            1,
        )
        .unwrap();
        pool.trajectories[0][0].phi.0[0] += 1e-6;
        assert!(pool.validate().is_err());
    }
}
