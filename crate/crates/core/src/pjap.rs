//! Proximal joint-action prioritisation.
//!
//! Stored joint actions stand in for the policy that produced them. Each
//! entry's priority is a Gaussian of its distance to the current joint policy,
//! floored at `epsilon` so distant data is rare but never unreachable:
//!
//! ```text
//! priority = max(exp(-alpha * d^2), epsilon)
//! ```
//!
//! Recomputing every priority on every step is wasteful, so [`refresh`] only
//! rewrites a fraction of the buffer per call. The ids of the batch that was
//! just sampled are always part of that fraction.

use std::collections::HashSet;

use rand::Rng;
use thiserror::Error;

use crate::buffer::{BufferError, ReplayBuffer};
use crate::datasets::JointActionSample;
use crate::learner::JointPolicy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PjapError {
    #[error("distance must be non-negative, got {0}")]
    NegativeDistance(f64),
    #[error("trajectory has no steps")]
    EmptyTrajectory,
    #[error("invalid prioritisation config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Buffer(#[from] BufferError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DistanceKind {
    /// `|a_x - theta_x| + |a_y - theta_y|`
    #[default]
    JointActionL1,
    /// Per-agent, per-step mean of absolute differences. A stored sample is a
    /// one-step trajectory, which gives half the joint L1 distance.
    TrajectoryMeanL1,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PjapConfig {
    pub alpha: f64,
    pub epsilon: f64,
    pub refresh_fraction: f64,
    pub distance: DistanceKind,
}

impl Default for PjapConfig {
    fn default() -> Self {
        Self {
            alpha: 5.0,
            epsilon: 0.01,
            refresh_fraction: 0.1,
            distance: DistanceKind::JointActionL1,
        }
    }
}

impl PjapConfig {
    pub fn validate(&self) -> Result<(), PjapError> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(PjapError::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(PjapError::InvalidConfig(format!(
                "epsilon must be in (0, 1], got {}",
                self.epsilon
            )));
        }
        if !(self.refresh_fraction > 0.0 && self.refresh_fraction <= 1.0) {
            return Err(PjapError::InvalidConfig(format!(
                "refresh_fraction must be in (0, 1], got {}",
                self.refresh_fraction
            )));
        }
        Ok(())
    }
}

/// Ordered joint actions of one two-agent trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionTrajectory {
    steps: Vec<(f64, f64)>,
}

impl ActionTrajectory {
    pub fn new(steps: Vec<(f64, f64)>) -> Result<Self, PjapError> {
        if steps.is_empty() {
            return Err(PjapError::EmptyTrajectory);
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> &[(f64, f64)] {
        &self.steps
    }
}

impl From<&JointActionSample> for ActionTrajectory {
    fn from(s: &JointActionSample) -> Self {
        Self {
            steps: vec![(s.a_x, s.a_y)],
        }
    }
}

pub fn distance_joint_action(sample: &JointActionSample, policy: &JointPolicy) -> f64 {
    (sample.a_x - policy.theta_x).abs() + (sample.a_y - policy.theta_y).abs()
}

/// Mean absolute action gap over both agents and all steps.
pub fn distance_trajectory(traj: &ActionTrajectory, policy: &JointPolicy) -> Result<f64, PjapError> {
    const AGENTS: f64 = 2.0;
    if traj.steps.is_empty() {
        return Err(PjapError::EmptyTrajectory);
    }
    let total: f64 = traj
        .steps
        .iter()
        .map(|&(x, y)| (x - policy.theta_x).abs() + (y - policy.theta_y).abs())
        .sum();
    Ok(total / (AGENTS * traj.steps.len() as f64))
}

pub fn sample_distance(sample: &JointActionSample, policy: &JointPolicy, kind: DistanceKind) -> f64 {
    match kind {
        DistanceKind::JointActionL1 => distance_joint_action(sample, policy),
        DistanceKind::TrajectoryMeanL1 => 0.5 * distance_joint_action(sample, policy),
    }
}

pub fn priority(distance: f64, config: &PjapConfig) -> Result<f64, PjapError> {
    if distance < 0.0 || distance.is_nan() {
        return Err(PjapError::NegativeDistance(distance));
    }
    Ok((-config.alpha * distance * distance).exp().max(config.epsilon))
}

/// Number of entries [`refresh`] rewrites for a buffer of `len` entries.
pub fn refresh_quota(len: usize, refresh_fraction: f64) -> usize {
    // guard against 0.1 * 5000 = 500.00000000000006 style round-up
    let q = (refresh_fraction * len as f64 - 1e-9).ceil();
    (q.max(1.0) as usize).min(len)
}

/// Recomputes priorities for the last sampled batch plus uniformly chosen
/// entries until `refresh_quota` entries are covered. Returns how many
/// entries were rewritten, which exceeds the quota only when the last batch
/// alone does.
pub fn refresh<R: Rng + ?Sized>(
    buf: &mut ReplayBuffer,
    policy: &JointPolicy,
    config: &PjapConfig,
    rng: &mut R,
) -> Result<usize, PjapError> {
    if buf.is_empty() {
        return Err(BufferError::EmptyBuffer.into());
    }
    let n = buf.len();
    let quota = refresh_quota(n, config.refresh_fraction);

    let mut chosen: Vec<usize> = buf
        .last_sampled()
        .iter()
        .copied()
        .filter(|&id| buf.contains(id))
        .collect();
    chosen.sort_unstable();
    chosen.dedup();

    let extra = quota.saturating_sub(chosen.len());
    if extra > 0 {
        let taken: HashSet<usize> = chosen.iter().copied().collect();
        let first = buf.ids().start;
        let draws = (extra + taken.len()).min(n);
        let picks: Vec<usize> = rand::seq::index::sample(rng, n, draws)
            .into_iter()
            .map(|pos| first + pos)
            .filter(|id| !taken.contains(id))
            .take(extra)
            .collect();
        chosen.extend(picks);
    }

    let priorities = chosen
        .iter()
        .map(|&id| {
            let s = buf.get(id).expect("chosen ids are live");
            priority(sample_distance(s, policy, config.distance), config)
        })
        .collect::<Result<Vec<_>, _>>()?;
    buf.update_priorities(&chosen, &priorities)?;
    Ok(chosen.len())
}

/// Mean L1 distance from a fixed set of joint actions to arbitrary policies,
/// answered in `O(log n)` per query from sorted marginals and prefix sums.
#[derive(Debug, Clone)]
pub struct MeanL1Distance {
    xs: SortedPrefix,
    ys: SortedPrefix,
}

#[derive(Debug, Clone)]
struct SortedPrefix {
    sorted: Vec<f64>,
    // prefix[k] = sum of the k smallest values
    prefix: Vec<f64>,
}

impl SortedPrefix {
    fn new(mut values: Vec<f64>) -> Self {
        values.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(values.len() + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for v in &values {
            acc += v;
            prefix.push(acc);
        }
        Self {
            sorted: values,
            prefix,
        }
    }

    fn mean_abs_dev(&self, t: f64) -> f64 {
        let n = self.sorted.len();
        let k = self.sorted.partition_point(|&v| v < t);
        let below = t * k as f64 - self.prefix[k];
        let above = (self.prefix[n] - self.prefix[k]) - t * (n - k) as f64;
        (below + above) / n as f64
    }
}

impl MeanL1Distance {
    pub fn new(samples: &[JointActionSample]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        Some(Self {
            xs: SortedPrefix::new(samples.iter().map(|s| s.a_x).collect()),
            ys: SortedPrefix::new(samples.iter().map(|s| s.a_y).collect()),
        })
    }

    pub fn mean_distance(&self, policy: &JointPolicy) -> f64 {
        self.xs.mean_abs_dev(policy.theta_x) + self.ys.mean_abs_dev(policy.theta_y)
    }
}
