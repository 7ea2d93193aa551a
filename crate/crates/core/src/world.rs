//! Top-down 2D driving world: a kinematic bicycle ego car on a straight
//! multi-lane road, sharing it with one scripted traffic car.
//!
//! Coordinates are in lane widths. The road runs along `+x`; lateral
//! position `y` spans `[0, lane_count * lane_width]` with lane 0 (the
//! rightmost lane) at the bottom.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{self, FeatureParams, FeatureVector};
use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("expected {expected} controls, got {got}")]
    HorizonMismatch { expected: usize, got: usize },
    #[error("invalid environment {id}: {reason}")]
    InvalidEnvironment { id: u32, reason: String },
    #[error("invalid world configuration: {0}")]
    InvalidConfig(String),
}

/// Ego (or traffic) car state. Serialized as `[x, y, heading, speed]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct CarState {
    pub x: f64,
    pub y: f64,
    /// Radians in `[-pi, pi)`.
    pub heading: f64,
    /// Lane widths per unit time; negative when reversing.
    pub speed: f64,
}

impl From<[f64; 4]> for CarState {
    fn from([x, y, heading, speed]: [f64; 4]) -> Self {
        Self {
            x,
            y,
            heading,
            speed,
        }
    }
}

impl From<CarState> for [f64; 4] {
    fn from(s: CarState) -> Self {
        [s.x, s.y, s.heading, s.speed]
    }
}

impl CarState {
    pub fn is_finite(&self) -> bool {
        self.x.is_finite()
            && self.y.is_finite()
            && self.heading.is_finite()
            && self.speed.is_finite()
    }
}

/// Serialized as `[steer, accel]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Control {
    /// Steering angle, radians.
    pub steer: f64,
    /// Speed change per step.
    pub accel: f64,
}

impl From<[f64; 2]> for Control {
    fn from([steer, accel]: [f64; 2]) -> Self {
        Self { steer, accel }
    }
}

impl From<Control> for [f64; 2] {
    fn from(c: Control) -> Self {
        [c.steer, c.accel]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub dt: f64,
    pub wheelbase: f64,
    pub steer_max: f64,
    pub accel_max: f64,
    pub speed_max: f64,
    /// Number of control steps `T`; trajectories hold `T + 1` states.
    pub horizon: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            dt: 0.5,
            wheelbase: 1.0,
            steer_max: 0.3,
            accel_max: 0.25,
            speed_max: 2.0,
            horizon: 10,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), WorldError> {
        let positive = [
            ("dt", self.dt),
            ("wheelbase", self.wheelbase),
            ("steer_max", self.steer_max),
            ("accel_max", self.accel_max),
            ("speed_max", self.speed_max),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(WorldError::InvalidConfig(format!(
                    "{name} must be positive and finite"
                )));
            }
        }
        if self.steer_max >= PI / 2.0 {
            return Err(WorldError::InvalidConfig(
                "steer_max must be below pi/2".into(),
            ));
        }
        Ok(())
    }

    /// Clamp a control into bounds, reporting whether clamping happened.
    pub fn clamp_control(&self, c: Control) -> (Control, bool) {
        let steer = c.steer.clamp(-self.steer_max, self.steer_max);
        let accel = c.accel.clamp(-self.accel_max, self.accel_max);
        // NaN inputs collapse to zero rather than poisoning the rollout.
        let steer = if steer.is_nan() { 0.0 } else { steer };
        let accel = if accel.is_nan() { 0.0 } else { accel };
        let clamped = steer != c.steer || accel != c.accel;
        (Control { steer, accel }, clamped)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadGeometry {
    pub lane_count: u32,
    pub lane_width: f64,
    pub road_length: f64,
}

impl Default for RoadGeometry {
    fn default() -> Self {
        Self {
            lane_count: 3,
            lane_width: 1.0,
            road_length: 40.0,
        }
    }
}

impl RoadGeometry {
    pub fn width(&self) -> f64 {
        f64::from(self.lane_count) * self.lane_width
    }

    pub fn lane_center(&self, lane: u32) -> f64 {
        (f64::from(lane) + 0.5) * self.lane_width
    }

    /// Distance from `y` to the closest lane center.
    pub fn distance_to_lane_center(&self, y: f64) -> f64 {
        let lane = (y / self.lane_width)
            .floor()
            .clamp(0.0, f64::from(self.lane_count.saturating_sub(1)));
        (y - (lane + 0.5) * self.lane_width).abs()
    }

    /// Distance from `y` to the closest road boundary, measured outward as
    /// well when the car is off the road.
    pub fn distance_to_edge(&self, y: f64) -> f64 {
        y.abs().min((self.width() - y).abs())
    }

    pub fn in_rightmost_lane(&self, y: f64) -> bool {
        (0.0..=self.lane_width).contains(&y)
    }

    pub fn on_road(&self, y: f64) -> bool {
        (0.0..=self.width()).contains(&y)
    }
}

/// An initial scene: road, ego start, and the scripted traffic car.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Environment {
    pub id: u32,
    pub road: RoadGeometry,
    pub ego_init: CarState,
    /// Traffic car states for steps `0..=T`.
    pub other_trajectory: Vec<CarState>,
}

impl Environment {
    pub fn horizon(&self) -> usize {
        self.other_trajectory.len().saturating_sub(1)
    }

    pub fn validate(&self, horizon: usize) -> Result<(), WorldError> {
        let bad = |reason: &str| WorldError::InvalidEnvironment {
            id: self.id,
            reason: reason.to_string(),
        };
        let r = &self.road;
        if r.lane_count == 0 || !(r.lane_width.is_finite() && r.lane_width > 0.0) {
            return Err(bad("road needs at least one lane of positive width"));
        }
        if !(r.road_length.is_finite() && r.road_length > 0.0) {
            return Err(bad("road length must be positive"));
        }
        if !self.ego_init.is_finite() || !self.other_trajectory.iter().all(CarState::is_finite) {
            return Err(bad("non-finite state"));
        }
        if !r.on_road(self.ego_init.y) || !(0.0..=r.road_length).contains(&self.ego_init.x) {
            return Err(bad("ego start outside the road"));
        }
        if !(-PI..PI).contains(&self.ego_init.heading) {
            return Err(bad("ego heading outside [-pi, pi)"));
        }
        if self.other_trajectory.len() != horizon + 1 {
            return Err(bad(&format!(
                "traffic trajectory has {} states, expected {}",
                self.other_trajectory.len(),
                horizon + 1
            )));
        }
        Ok(())
    }
}

/// A rolled-out ego trajectory with its cached cumulative features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trajectory {
    pub controls: Vec<Control>,
    pub states: Vec<CarState>,
    /// Raw (unscaled) cumulative features.
    pub phi: FeatureVector,
}

/// Outcome of one dynamics step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: CarState,
    pub clamped: bool,
}

pub fn wrap_angle(a: f64) -> f64 {
    if (-PI..PI).contains(&a) {
        return a;
    }
    let w = (a + PI).rem_euclid(2.0 * PI) - PI;
    // rem_euclid can round up to exactly 2*pi for tiny negative inputs.
    if w >= PI {
        w - 2.0 * PI
    } else {
        w
    }
}

/// Dynamics plus feature evaluation: everything needed to turn a control
/// sequence into a scored trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Simulator {
    pub world: WorldConfig,
    pub features: FeatureParams,
}

impl Simulator {
    pub fn new(world: WorldConfig, features: FeatureParams) -> Self {
        Self { world, features }
    }

    pub fn horizon(&self) -> usize {
        self.world.horizon
    }

    /// Kinematic bicycle update with semi-implicit position integration.
    pub fn step(&self, s: CarState, control: Control) -> Step {
        let cfg = &self.world;
        let (c, clamped) = cfg.clamp_control(control);
        let heading = wrap_angle(s.heading + s.speed * c.steer.tan() / cfg.wheelbase * cfg.dt);
        let speed = (s.speed + c.accel).clamp(-cfg.speed_max, cfg.speed_max);
        let state = CarState {
            x: s.x + speed * heading.cos() * cfg.dt,
            y: s.y + speed * heading.sin() * cfg.dt,
            heading,
            speed,
        };
        Step { state, clamped }
    }

    /// Cumulative features of a control sequence without materializing the
    /// trajectory. Step `t` is scored on the state reached after applying
    /// `controls[t]`, against the traffic car at `t + 1`.
    pub fn features_of(
        &self,
        env: &Environment,
        controls: &[Control],
    ) -> Result<FeatureVector, WorldError> {
        self.check_len(controls)?;
        let mut s = env.ego_init;
        let mut phi = FeatureVector::zeros();
        for (t, &c) in controls.iter().enumerate() {
            let (c, _) = self.world.clamp_control(c);
            s = self.step(s, c).state;
            phi += features::per_step_features(&self.features, env, &s, &c, t + 1);
        }
        Ok(phi)
    }

    pub fn rollout(
        &self,
        env: &Environment,
        controls: &[Control],
    ) -> Result<Trajectory, WorldError> {
        self.check_len(controls)?;
        let mut states = Vec::with_capacity(controls.len() + 1);
        let mut clamped_controls = Vec::with_capacity(controls.len());
        states.push(env.ego_init);
        let mut phi = FeatureVector::zeros();
        for (t, &c) in controls.iter().enumerate() {
            let (c, _) = self.world.clamp_control(c);
            let next = self.step(states[t], c).state;
            phi += features::per_step_features(&self.features, env, &next, &c, t + 1);
            states.push(next);
            clamped_controls.push(c);
        }
        Ok(Trajectory {
            controls: clamped_controls,
            states,
            phi,
        })
    }

    /// Re-derive states and features from the controls and compare exactly.
    pub fn verify(&self, env: &Environment, traj: &Trajectory) -> bool {
        match self.rollout(env, &traj.controls) {
            Ok(t) => t == *traj,
            Err(_) => false,
        }
    }

    fn check_len(&self, controls: &[Control]) -> Result<(), WorldError> {
        if controls.len() != self.world.horizon {
            return Err(WorldError::HorizonMismatch {
                expected: self.world.horizon,
                got: controls.len(),
            });
        }
        Ok(())
    }
}

/// Randomized scene layout for generated environment sets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub road: RoadGeometry,
    pub ego_speed: (f64, f64),
    pub other_speed: (f64, f64),
    /// Longitudinal offset of the traffic car relative to the ego start.
    pub other_offset: (f64, f64),
    pub lane_change_probability: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            road: RoadGeometry::default(),
            ego_speed: (0.6, 1.4),
            other_speed: (0.3, 1.2),
            other_offset: (0.5, 4.0),
            lane_change_probability: 0.35,
        }
    }
}

/// Generate `count` environments deterministically from `seed`. Environment
/// ids are `first_id..first_id + count`.
pub fn generate_environments(
    count: usize,
    first_id: u32,
    seed: u64,
    scene: &SceneConfig,
    world: &WorldConfig,
) -> Vec<Environment> {
    (0..count)
        .map(|i| {
            let id = first_id + i as u32;
            let mut rng = rng::stream(seed, "environment", &[u64::from(id)]);
            generate_one(id, &mut rng, scene, world)
        })
        .collect()
}

fn generate_one(
    id: u32,
    rng: &mut impl Rng,
    scene: &SceneConfig,
    world: &WorldConfig,
) -> Environment {
    let road = scene.road;
    let lanes = road.lane_count;
    let ego_lane = rng.random_range(0..lanes);
    let ego_init = CarState {
        x: 0.0,
        y: road.lane_center(ego_lane),
        heading: 0.0,
        speed: rng.random_range(scene.ego_speed.0..=scene.ego_speed.1),
    };

    let other_lane = rng.random_range(0..lanes);
    let target_lane = if lanes > 1 && rng.random_bool(scene.lane_change_probability) {
        if other_lane == 0 {
            1
        } else if other_lane == lanes - 1 || rng.random_bool(0.5) {
            other_lane - 1
        } else {
            other_lane + 1
        }
    } else {
        other_lane
    };
    let x0 = rng.random_range(scene.other_offset.0..=scene.other_offset.1);
    let v = rng.random_range(scene.other_speed.0..=scene.other_speed.1);
    let change_start = rng.random_range(0..=world.horizon / 2);
    let change_steps = (world.horizon / 2).max(1);
    let (y0, y1) = (road.lane_center(other_lane), road.lane_center(target_lane));

    let lateral = |t: usize| -> f64 {
        let frac = (t.saturating_sub(change_start) as f64 / change_steps as f64).min(1.0);
        y0 + (y1 - y0) * frac
    };
    let other_trajectory = (0..=world.horizon)
        .map(|t| {
            let x = x0 + v * world.dt * t as f64;
            let y = lateral(t);
            let dy = lateral(t + 1) - y;
            let dx = v * world.dt;
            CarState {
                x,
                y,
                heading: dy.atan2(dx),
                speed: v,
            }
        })
        .collect();

    Environment {
        id,
        road,
        ego_init,
        other_trajectory,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sim() -> Simulator {
        Simulator::default()
    }

    fn env() -> Environment {
        generate_environments(1, 0, 3, &SceneConfig::default(), &WorldConfig::default()).remove(0)
    }

    #[test]
    fn straight_step_advances_along_x() {
        let s = CarState {
            x: 1.0,
            y: 1.5,
            heading: 0.0,
            speed: 1.2,
        };
        let next = sim().step(s, Control::default()).state;
        assert_eq!(next.heading, 0.0);
        assert!((next.x - (1.0 + 1.2 * 0.5)).abs() < 1e-15);
        assert_eq!(next.y, 1.5);
    }

    #[test]
    fn standstill_ignores_steering() {
        let s = CarState {
            x: 2.0,
            y: 0.5,
            heading: 0.3,
            speed: 0.0,
        };
        let next = sim()
            .step(
                s,
                Control {
                    steer: 0.25,
                    accel: 0.0,
                },
            )
            .state;
        assert_eq!((next.x, next.y, next.heading), (s.x, s.y, s.heading));
    }

    #[test]
    fn heading_update_matches_formula() {
        let world = WorldConfig {
            dt: 0.1,
            wheelbase: 1.0,
            steer_max: 0.5,
            ..WorldConfig::default()
        };
        let sim = Simulator::new(world, FeatureParams::default());
        let s = CarState {
            x: 0.0,
            y: 0.5,
            heading: 0.0,
            speed: 1.0,
        };
        let next = sim
            .step(
                s,
                Control {
                    steer: 0.1,
                    accel: 0.0,
                },
            )
            .state;
        let expected = 1.0 * 0.1f64.tan() / 1.0 * 0.1;
        assert!((next.heading - expected).abs() < 1e-15);
        assert!((next.heading - 0.010_033_467).abs() < 1e-8);
    }

    #[test]
    fn out_of_bounds_controls_are_clamped_and_flagged() {
        let s = CarState {
            x: 0.0,
            y: 0.5,
            heading: 0.0,
            speed: 1.0,
        };
        let step = sim().step(
            s,
            Control {
                steer: 2.0,
                accel: -9.0,
            },
        );
        assert!(step.clamped);
        assert!((step.state.speed - 0.75).abs() < 1e-15);
        assert!(
            !sim()
                .step(
                    s,
                    Control {
                        steer: 0.1,
                        accel: 0.1
                    }
                )
                .clamped
        );
    }

    #[test]
    fn reverse_speed_is_bounded() {
        let mut s = CarState {
            x: 5.0,
            y: 0.5,
            heading: 0.0,
            speed: 0.0,
        };
        for _ in 0..20 {
            s = sim()
                .step(
                    s,
                    Control {
                        steer: 0.0,
                        accel: -0.25,
                    },
                )
                .state;
        }
        assert_eq!(s.speed, -2.0);
        assert!(s.x < 5.0);
    }

    #[test]
    fn wrap_angle_range() {
        for a in [-10.0, -PI, -1e-18, 0.0, PI, 3.5, 100.0] {
            let w = wrap_angle(a);
            assert!((-PI..PI).contains(&w), "{a} -> {w}");
        }
    }

    #[test]
    fn rollout_rejects_wrong_horizon() {
        let err = sim().rollout(&env(), &[Control::default(); 3]).unwrap_err();
        assert_eq!(
            err,
            WorldError::HorizonMismatch {
                expected: 10,
                got: 3
            }
        );
    }

    #[test]
    fn zero_controls_from_standstill_stay_put() {
        let mut e = env();
        e.ego_init.speed = 0.0;
        let t = sim().rollout(&e, &[Control::default(); 10]).unwrap();
        assert_eq!(t.states.len(), 11);
        assert!(t.states.iter().all(|s| *s == e.ego_init));
    }

    #[test]
    fn empty_horizon_rollout() {
        let world = WorldConfig {
            horizon: 0,
            ..WorldConfig::default()
        };
        let sim = Simulator::new(world, FeatureParams::default());
        let mut e = env();
        e.other_trajectory.truncate(1);
        let t = sim.rollout(&e, &[]).unwrap();
        assert_eq!(t.states, vec![e.ego_init]);
        assert_eq!(t.phi, FeatureVector::zeros());
    }

    #[test]
    fn rollout_states_follow_step() {
        let e = env();
        let controls: Vec<Control> = (0..10)
            .map(|i| Control {
                steer: 0.03 * i as f64 - 0.1,
                accel: 0.05,
            })
            .collect();
        let t = sim().rollout(&e, &controls).unwrap();
        for i in 0..10 {
            assert_eq!(t.states[i + 1], sim().step(t.states[i], controls[i]).state);
        }
        assert!(sim().verify(&e, &t));
        assert_eq!(sim().features_of(&e, &controls).unwrap(), t.phi);
    }

    #[test]
    fn generated_environments_are_valid_and_deterministic() {
        let w = WorldConfig::default();
        let a = generate_environments(25, 0, 11, &SceneConfig::default(), &w);
        let b = generate_environments(25, 0, 11, &SceneConfig::default(), &w);
        assert_eq!(a, b);
        for e in &a {
            e.validate(w.horizon).unwrap();
        }
    }

    #[test]
    fn environment_validation_catches_bad_records() {
        let mut e = env();
        e.ego_init.y = -0.1;
        assert!(e.validate(10).is_err());
        let mut e = env();
        e.other_trajectory.pop();
        assert!(e.validate(10).is_err());
        let mut e = env();
        e.road.lane_count = 0;
        assert!(e.validate(10).is_err());
    }
}
