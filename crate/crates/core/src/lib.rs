//! Active reward learning from rich queries: pairwise trajectory comparisons
//! augmented with "which feature mattered most" answers.
//!
//! The crate is organized bottom-up:
//!
//! * [`world`] and [`features`]: a 2D driving world and the seven reward
//!   features evaluated on its trajectories;
//! * [`observation`]: probabilistic models of comparison, feature, and skip
//!   answers given reward weights;
//! * [`belief`]: a discrete belief over sampled reward weights with Bayesian
//!   updates;
//! * [`querygen`]: trajectory optimization and query pool construction;
//! * [`active`]: expected-volume-removal query selection;
//! * [`simuser`]: simulated answerers and rationality estimation;
//! * [`runner`]: experiment sessions, metrics, and result tables;
//! * [`formats`]: on-disk formats for environment sets, pools, answer logs,
//!   and belief snapshots.

pub mod active;
pub mod belief;
pub mod features;
pub mod formats;
pub mod math;
pub mod observation;
pub mod querygen;
pub mod rng;
pub mod runner;
pub mod simuser;
pub mod world;

pub use belief::{Belief, HypothesisSet};
pub use features::{Feature, FeatureVector, RewardWeights, FEATURE_COUNT};
pub use observation::{Answer, Choice, Query, QueryId, Rationality, RationalityParams};
pub use querygen::{PairingConfig, PoolConfig, QueryPool};

pub use world::{Environment, Simulator, Trajectory};
