//! The seven interpretable driving features and the linear reward over them.
//!
//! | # | label              | per-step value                                   |
//! |---|--------------------|--------------------------------------------------|
//! | 1 | `lane_center`      | `exp(-k_lane * d_center^2)`                      |
//! | 2 | `road_edge`        | `exp(-k_edge * d_edge^2)`                        |
//! | 3 | `heading`          | `cos(heading - road_direction)`                  |
//! | 4 | `car_distance`     | `exp(-k_car * (dx^2 + lateral_weight * dy^2))`   |
//! | 5 | `speed`            | `speed`                                          |
//! | 6 | `right_lane`       | `1` inside the rightmost lane, else `0`          |
//! | 7 | `reverse`          | `min(speed, 0)`                                  |
//!
//! `car_distance` is a quadratic-form proximity stand-in; the lateral term is
//! weighted more heavily because lane separation matters more than headway.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::world::{CarState, Control, Environment};

pub const FEATURE_COUNT: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Feature {
    LaneCenter,
    RoadEdge,
    Heading,
    CarDistance,
    Speed,
    RightLane,
    Reverse,
}

impl Feature {
    pub const ALL: [Feature; FEATURE_COUNT] = [
        Feature::LaneCenter,
        Feature::RoadEdge,
        Feature::Heading,
        Feature::CarDistance,
        Feature::Speed,
        Feature::RightLane,
        Feature::Reverse,
    ];

    /// Zero-based position in feature vectors.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Feature> {
        Self::ALL.get(i).copied()
    }

    /// One-based wire number (`1..=7`).
    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    pub fn from_number(n: u8) -> Option<Feature> {
        n.checked_sub(1).and_then(|i| Self::from_index(i as usize))
    }

    pub fn label(self) -> &'static str {
        match self {
            Feature::LaneCenter => "lane_center",
            Feature::RoadEdge => "road_edge",
            Feature::Heading => "heading",
            Feature::CarDistance => "car_distance",
            Feature::Speed => "speed",
            Feature::RightLane => "right_lane",
            Feature::Reverse => "reverse",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Feature::LaneCenter => "Staying close to the middle of a lane",
            Feature::RoadEdge => "Being close to the edge of the road",
            Feature::Heading => "Pointing in the direction of the road",
            Feature::CarDistance => "Being close to the other car",
            Feature::Speed => "Driving fast",
            Feature::RightLane => "Being in the right lane",
            Feature::Reverse => "Driving in reverse (negative when reversing)",
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl Serialize for Feature {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.number())
    }
}

impl<'de> Deserialize<'de> for Feature {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let n = u8::deserialize(d)?;
        Feature::from_number(n)
            .ok_or_else(|| serde::de::Error::custom(format!("feature number {n} outside 1..=7")))
    }
}

/// A value per feature, indexed by [`Feature`] or by position.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn zeros() -> Self {
        Self([0.0; FEATURE_COUNT])
    }

    pub fn dot(&self, other: &FeatureVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self(self.0.map(f))
    }
}

impl Index<Feature> for FeatureVector {
    type Output = f64;
    fn index(&self, f: Feature) -> &f64 {
        &self.0[f.index()]
    }
}

impl IndexMut<Feature> for FeatureVector {
    fn index_mut(&mut self, f: Feature) -> &mut f64 {
        &mut self.0[f.index()]
    }
}

impl Add for FeatureVector {
    type Output = FeatureVector;
    fn add(mut self, rhs: FeatureVector) -> FeatureVector {
        self += rhs;
        self
    }
}

impl AddAssign for FeatureVector {
    fn add_assign(&mut self, rhs: FeatureVector) {
        for (a, b) in self.0.iter_mut().zip(rhs.0) {
            *a += b;
        }
    }
}

impl Sub for FeatureVector {
    type Output = FeatureVector;
    fn sub(self, rhs: FeatureVector) -> FeatureVector {
        let mut out = self;
        for (a, b) in out.0.iter_mut().zip(rhs.0) {
            *a -= b;
        }
        out
    }
}

impl Mul<f64> for FeatureVector {
    type Output = FeatureVector;
    fn mul(self, k: f64) -> FeatureVector {
        self.map(|v| v * k)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightsError {
    #[error("reward weights must be finite and nonzero")]
    Degenerate,
    #[error("reward weights are not unit norm (norm = {0})")]
    NotUnitNorm(f64),
}

/// Unit-norm reward weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(transparent)]
pub struct RewardWeights([f64; FEATURE_COUNT]);

impl RewardWeights {
    pub const NORM_TOLERANCE: f64 = 1e-9;

    /// Normalize an arbitrary nonzero vector.
    pub fn normalized(values: [f64; FEATURE_COUNT]) -> Result<Self, WeightsError> {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(WeightsError::Degenerate);
        }
        Ok(Self(values.map(|v| v / norm)))
    }

    /// Accept an already unit-norm vector as-is.
    pub fn from_unit(values: [f64; FEATURE_COUNT]) -> Result<Self, WeightsError> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(WeightsError::Degenerate);
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > Self::NORM_TOLERANCE {
            return Err(WeightsError::NotUnitNorm(norm));
        }
        Ok(Self(values))
    }

    pub fn basis(f: Feature) -> Self {
        let mut v = [0.0; FEATURE_COUNT];
        v[f.index()] = 1.0;
        Self(v)
    }

    pub fn values(&self) -> &[f64; FEATURE_COUNT] {
        &self.0
    }

    pub fn get(&self, f: Feature) -> f64 {
        self.0[f.index()]
    }

    pub fn dot(&self, other: &RewardWeights) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    /// Bit pattern, usable as an exact memoization key.
    pub fn key(&self) -> [u64; FEATURE_COUNT] {
        self.0.map(f64::to_bits)
    }
}

impl<'de> Deserialize<'de> for RewardWeights {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = <[f64; FEATURE_COUNT]>::deserialize(d)?;
        RewardWeights::from_unit(v).map_err(serde::de::Error::custom)
    }
}

/// Linear reward `theta . phi`.
pub fn reward(theta: &RewardWeights, phi: &FeatureVector) -> f64 {
    theta.0.iter().zip(&phi.0).map(|(a, b)| a * b).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureParams {
    pub k_lane: f64,
    pub k_edge: f64,
    pub k_car: f64,
    pub car_lateral_weight: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            k_lane: 4.0,
            k_edge: 4.0,
            k_car: 1.0,
            car_lateral_weight: 4.0,
        }
    }
}

/// Features of a single state. `t` indexes the traffic car trajectory and
/// is clamped to its last state.
pub fn per_step_features(
    params: &FeatureParams,
    env: &Environment,
    state: &CarState,
    _control: &Control,
    t: usize,
) -> FeatureVector {
    let road = &env.road;
    let d_center = road.distance_to_lane_center(state.y);
    let d_edge = road.distance_to_edge(state.y);
    let other = env
        .other_trajectory
        .get(t)
        .or_else(|| env.other_trajectory.last())
        .copied();
    let proximity = match other {
        Some(o) => {
            let dx = state.x - o.x;
            let dy = state.y - o.y;
            (-params.k_car * (dx * dx + params.car_lateral_weight * dy * dy)).exp()
        }
        None => 0.0,
    };
    FeatureVector([
        (-params.k_lane * d_center * d_center).exp(),
        (-params.k_edge * d_edge * d_edge).exp(),
        // The road runs along +x.
        state.heading.cos(),
        proximity,
        state.speed,
        if road.in_rightmost_lane(state.y) {
            1.0
        } else {
            0.0
        },
        state.speed.min(0.0),
    ])
}

/// Sum of per-step features over a trajectory, re-derived from its states.
/// Step `t` scores `states[t + 1]` against the traffic car at `t + 1`.
pub fn cumulative_features(
    params: &FeatureParams,
    env: &Environment,
    states: &[CarState],
    controls: &[Control],
) -> FeatureVector {
    let mut phi = FeatureVector::zeros();
    for (t, c) in controls.iter().enumerate() {
        if let Some(s) = states.get(t + 1) {
            phi += per_step_features(params, env, s, c, t + 1);
        }
    }
    phi
}

/// Per-feature divisors applied before features enter the observation models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FeatureScales(pub [f64; FEATURE_COUNT]);

impl Default for FeatureScales {
    fn default() -> Self {
        Self([1.0; FEATURE_COUNT])
    }
}

impl FeatureScales {
    pub fn validate(&self) -> bool {
        self.0.iter().all(|s| s.is_finite() && *s > 0.0)
    }

    pub fn standardize(&self, phi: &FeatureVector) -> FeatureVector {
        let mut out = *phi;
        for (v, s) in out.0.iter_mut().zip(self.0) {
            *v /= s;
        }
        out
    }
}
