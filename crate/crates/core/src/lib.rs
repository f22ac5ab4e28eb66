//! Simulation of offline multi-agent policy-gradient learning on two-player
//! polynomial games.
//!
//! Agents learn by best-responding to the partner actions stored in a replay
//! buffer or static dataset. The crate provides the games, datasets, a
//! sum-tree replay buffer, the training loops, joint-action prioritised
//! sampling, and closed-form analysis of where offline learning converges.

pub mod analysis;
pub mod buffer;
pub mod datasets;
pub mod learner;
pub mod pjap;
pub mod polygame;
pub mod rng;

pub use analysis::{
    brud_field, brud_fixed_point, sigma_condition, true_optima_twin_peaks, AnalysisError,
    FixedPointClass, FixedPointReport, SigmaBranches,
};
pub use buffer::{BufferError, Capacity, ReplayBuffer, SampleBatch};
pub use datasets::{
    compute_stats, generate, DatasetError, DatasetKind, DatasetSpec, DatasetStats,
    JointActionSample,
};
pub use learner::{
    brud_gradient_exact, brud_gradient_minibatch, gradient_ascent_step, train_offline,
    train_online, GradientMode, JointPolicy, LearnConfig, LearnError, RunRecord, RunRow,
};
pub use pjap::{DistanceKind, PjapConfig, PjapError};
pub use polygame::{build_game, GameError, GameKind, GameSpec, Polynomial2, TwinPeaksParams};
