//! Best-response-under-data policy gradients and the training loops built on them.
//!
//! Each agent's policy is a single scalar whose output is the action itself.
//! Agent `x` ascends `E_{a_y ~ data}[dR/da_x (theta_x, a_y)]` and agent `y`
//! mirrors it: every agent best-responds to the *stored* actions of its
//! partner, not to the partner's current policy.

use std::io::Write;

use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::buffer::{BufferError, Capacity, ReplayBuffer};
use crate::datasets::{self, DatasetError, DatasetStats, JointActionSample};
use crate::pjap::{self, MeanL1Distance, PjapConfig, PjapError};
use crate::polygame::Polynomial2;
use crate::rng;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("moments up to power {needed} required, stats carry {available}")]
    InsufficientMoments { needed: usize, available: usize },
    #[error("gradient ({0}, {1}) is not finite")]
    NonFiniteGradient(f64, f64),
    #[error("invalid learning config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Pjap(#[from] PjapError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Two scalar deterministic policies; `theta_x` is agent x's action.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointPolicy {
    pub theta_x: f64,
    pub theta_y: f64,
    pub updates: u64,
}

impl JointPolicy {
    pub fn new(theta_x: f64, theta_y: f64) -> Self {
        Self {
            theta_x,
            theta_y,
            updates: 0,
        }
    }

    pub fn as_pair(&self) -> (f64, f64) {
        (self.theta_x, self.theta_y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// Full-dataset expectation from power moments, no sampling.
    #[default]
    ExactMoments,
    /// Average over a sampled minibatch.
    Minibatch,
}

/// Training hyperparameters.
///
/// `gradient_mode` applies to offline training only; online training always
/// samples minibatches from its live buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub gradient_mode: GradientMode,
    pub exploration_noise_sigma: f64,
    pub param_clamp: Option<(f64, f64)>,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 64,
            steps: 50_000,
            gradient_mode: GradientMode::ExactMoments,
            exploration_noise_sigma: 0.3,
            param_clamp: None,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: String| Err(LearnError::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.exploration_noise_sigma >= 0.0 && self.exploration_noise_sigma.is_finite()) {
            return bad(format!(
                "exploration_noise_sigma must be >= 0, got {}",
                self.exploration_noise_sigma
            ));
        }
        if let Some((lo, hi)) = self.param_clamp {
            if lo.is_nan() || hi.is_nan() || lo > hi {
                return bad(format!("param_clamp needs low <= high, got ({lo}, {hi})"));
            }
        }
        Ok(())
    }
}

/// A reward surface together with its two partial-derivative polynomials.
#[derive(Debug, Clone)]
pub struct BrudObjective {
    reward: Polynomial2,
    d_dx: Polynomial2,
    d_dy: Polynomial2,
}

impl BrudObjective {
    pub fn new(reward: &Polynomial2) -> Self {
        Self {
            reward: reward.clone(),
            d_dx: reward.partial_x(),
            d_dy: reward.partial_y(),
        }
    }

    pub fn reward(&self) -> &Polynomial2 {
        &self.reward
    }

    pub fn d_dx(&self) -> &Polynomial2 {
        &self.d_dx
    }

    pub fn d_dy(&self) -> &Polynomial2 {
        &self.d_dy
    }

    /// Highest moment power the exact gradient reads.
    pub fn required_power(&self) -> usize {
        self.reward.effective_deg_x().max(self.reward.effective_deg_y())
    }

    pub fn minibatch_gradient(
        &self,
        policy: &JointPolicy,
        batch: &[JointActionSample],
    ) -> Result<(f64, f64), LearnError> {
        if batch.is_empty() {
            return Err(LearnError::EmptyBatch);
        }
        let n = batch.len() as f64;
        let (mut gx, mut gy) = (0.0, 0.0);
        for s in batch {
            gx += self.d_dx.eval(policy.theta_x, s.a_y);
            gy += self.d_dy.eval(s.a_x, policy.theta_y);
        }
        Ok((gx / n, gy / n))
    }

    pub fn exact_gradient(
        &self,
        policy: &JointPolicy,
        stats: &DatasetStats,
    ) -> Result<(f64, f64), LearnError> {
        // agent x needs E[a_y^j] up to deg_y, agent y needs E[a_x^i] up to deg_x
        let need_y = self.d_dx.effective_deg_y();
        let need_x = self.d_dy.effective_deg_x();
        if stats.moments_y.len() <= need_y || stats.moments_x.len() <= need_x {
            return Err(LearnError::InsufficientMoments {
                needed: need_x.max(need_y),
                available: stats.moments_x.len().min(stats.moments_y.len()).saturating_sub(1),
            });
        }
        Ok((
            self.d_dx.expect_over_y(policy.theta_x, &stats.moments_y),
            self.d_dy.expect_over_x(&stats.moments_x, policy.theta_y),
        ))
    }
}

/// Per-agent partial of `poly` at the agent's own parameter, averaged over
/// the partner's actions in `batch`.
pub fn brud_gradient_minibatch(
    poly: &Polynomial2,
    policy: &JointPolicy,
    batch: &[JointActionSample],
) -> Result<(f64, f64), LearnError> {
    BrudObjective::new(poly).minibatch_gradient(policy, batch)
}

/// Full-data expectation of the minibatch gradient, from raw power moments.
pub fn brud_gradient_exact(
    poly: &Polynomial2,
    policy: &JointPolicy,
    stats: &DatasetStats,
) -> Result<(f64, f64), LearnError> {
    BrudObjective::new(poly).exact_gradient(policy, stats)
}

/// Simultaneous ascent step for both agents, then the optional clamp.
pub fn gradient_ascent_step(
    policy: &JointPolicy,
    gradient: (f64, f64),
    config: &LearnConfig,
) -> Result<JointPolicy, LearnError> {
    if !(gradient.0.is_finite() && gradient.1.is_finite()) {
        return Err(LearnError::NonFiniteGradient(gradient.0, gradient.1));
    }
    let mut x = policy.theta_x + config.learning_rate * gradient.0;
    let mut y = policy.theta_y + config.learning_rate * gradient.1;
    if let Some((lo, hi)) = config.param_clamp {
        x = x.clamp(lo, hi);
        y = y.clamp(lo, hi);
    }
    Ok(JointPolicy {
        theta_x: x,
        theta_y: y,
        updates: policy.updates + 1,
    })
}

/// One row of a training trace.
///
/// Row `k > 0` holds the policy after update `k`, the gradient that produced
/// it, and the mean L1 distance between the data used for that update and
/// the policy it was evaluated at. Row 0 is the initial policy; its gradient
/// and distance are NaN.
///
/// Equality is bitwise, so two identical traces compare equal despite the NaNs.
#[derive(Debug, Clone, Copy)]
pub struct RunRow {
    pub step: usize,
    pub theta_x: f64,
    pub theta_y: f64,
    pub reward: f64,
    pub grad_x: f64,
    pub grad_y: f64,
    pub mean_distance: f64,
    pub total_priority: f64,
}

impl RunRow {
    fn fields(&self) -> [f64; 7] {
        [
            self.theta_x,
            self.theta_y,
            self.reward,
            self.grad_x,
            self.grad_y,
            self.mean_distance,
            self.total_priority,
        ]
    }
}

impl PartialEq for RunRow {
    fn eq(&self, other: &Self) -> bool {
        self.step == other.step
            && self
                .fields()
                .iter()
                .zip(other.fields())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

pub const RUN_CSV_HEADER: &str =
    "step,theta_x,theta_y,reward,grad_x,grad_y,mean_distance,total_priority";

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunRecord {
    pub rows: Vec<RunRow>,
}

impl RunRecord {
    pub fn last(&self) -> &RunRow {
        self.rows.last().expect("a run record always holds the initial row")
    }

    pub fn final_policy(&self) -> (f64, f64) {
        let r = self.last();
        (r.theta_x, r.theta_y)
    }

    /// Mean of `mean_distance` over the trailing `fraction` of update rows.
    pub fn tail_mean_distance(&self, fraction: f64) -> f64 {
        let updates = &self.rows[1..];
        let n = ((updates.len() as f64 * fraction).ceil() as usize).clamp(1, updates.len().max(1));
        let tail = &updates[updates.len().saturating_sub(n)..];
        tail.iter().map(|r| r.mean_distance).sum::<f64>() / tail.len() as f64
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{RUN_CSV_HEADER}")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.step,
                r.theta_x,
                r.theta_y,
                r.reward,
                r.grad_x,
                r.grad_y,
                r.mean_distance,
                r.total_priority
            )?;
        }
        out.flush()
    }
}

fn initial_row(obj: &BrudObjective, policy: &JointPolicy, total_priority: f64) -> RunRow {
    RunRow {
        step: 0,
        theta_x: policy.theta_x,
        theta_y: policy.theta_y,
        reward: obj.reward.eval(policy.theta_x, policy.theta_y),
        grad_x: f64::NAN,
        grad_y: f64::NAN,
        mean_distance: f64::NAN,
        total_priority,
    }
}

fn batch_mean_distance(batch: &[JointActionSample], policy: &JointPolicy) -> f64 {
    batch
        .iter()
        .map(|s| pjap::distance_joint_action(s, policy))
        .sum::<f64>()
        / batch.len() as f64
}

/// Trains on a static dataset.
///
/// The dataset is loaded into an unbounded buffer with unit priorities. Each
/// step computes the gradient (exact or from a minibatch), ascends, and, when
/// a prioritizer is given, refreshes part of the buffer's priorities against
/// the new policy. With a prioritizer in `ExactMoments` mode the expectation
/// is taken under the priority-weighted data distribution.
pub fn train_offline(
    poly: &Polynomial2,
    dataset: &[JointActionSample],
    policy0: JointPolicy,
    config: &LearnConfig,
    prioritizer: Option<&PjapConfig>,
    seed: u64,
) -> Result<RunRecord, LearnError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    if let Some(p) = prioritizer {
        p.validate()?;
    }
    let obj = BrudObjective::new(poly);
    let power = obj.required_power().max(2);
    let mut buffer = ReplayBuffer::from_samples(dataset, 1.0)?;
    let mut sample_rng = rng::stream(seed, rng::STREAM_SAMPLING);
    let mut refresh_rng = rng::stream(seed, rng::STREAM_REFRESH);

    // uniform exact mode never changes its expectation
    let fixed = match (config.gradient_mode, prioritizer) {
        (GradientMode::ExactMoments, None) => Some((
            datasets::compute_stats(dataset, power)?,
            MeanL1Distance::new(dataset).expect("dataset is non-empty"),
        )),
        _ => None,
    };

    let mut policy = policy0;
    let mut rows = Vec::with_capacity(config.steps + 1);
    rows.push(initial_row(&obj, &policy, buffer.total_priority()));

    for step in 1..=config.steps {
        let (grad, distance) = match (config.gradient_mode, &fixed) {
            (GradientMode::ExactMoments, Some((stats, dist))) => {
                (obj.exact_gradient(&policy, stats)?, dist.mean_distance(&policy))
            }
            (GradientMode::ExactMoments, None) => {
                let (samples, weights): (Vec<_>, Vec<_>) = buffer.slots().map(|(s, w)| (*s, w)).unzip();
                let stats = datasets::compute_weighted_stats(&samples, &weights, power)?;
                let total: f64 = weights.iter().sum();
                let distance = samples
                    .iter()
                    .zip(&weights)
                    .map(|(s, w)| w * pjap::distance_joint_action(s, &policy))
                    .sum::<f64>()
                    / total;
                (obj.exact_gradient(&policy, &stats)?, distance)
            }
            (GradientMode::Minibatch, _) => {
                let batch = if prioritizer.is_some() {
                    buffer.sample_prioritized(config.batch_size, &mut sample_rng)?
                } else {
                    buffer.sample_uniform(config.batch_size, &mut sample_rng)?
                };
                (
                    obj.minibatch_gradient(&policy, &batch.actions)?,
                    batch_mean_distance(&batch.actions, &policy),
                )
            }
        };
        policy = gradient_ascent_step(&policy, grad, config)?;
        if let Some(p) = prioritizer {
            pjap::refresh(&mut buffer, &policy, p, &mut refresh_rng)?;
        }
        rows.push(RunRow {
            step,
            theta_x: policy.theta_x,
            theta_y: policy.theta_y,
            reward: obj.reward.eval(policy.theta_x, policy.theta_y),
            grad_x: grad.0,
            grad_y: grad.1,
            mean_distance: distance,
            total_priority: buffer.total_priority(),
        });
    }
    Ok(RunRecord { rows })
}

/// Trains while acting: each step executes the noisy current policy, stores
/// the joint action in a FIFO buffer, and learns from a uniform minibatch.
/// Returns the trace and the final buffer.
pub fn train_online(
    poly: &Polynomial2,
    policy0: JointPolicy,
    config: &LearnConfig,
    capacity: Capacity,
    seed: u64,
) -> Result<(RunRecord, ReplayBuffer), LearnError> {
    config.validate()?;
    if let Capacity::Bounded(c) = capacity {
        if c < config.batch_size {
            return Err(LearnError::InvalidConfig(format!(
                "buffer capacity {c} is smaller than batch size {}",
                config.batch_size
            )));
        }
    }
    let obj = BrudObjective::new(poly);
    let mut buffer = ReplayBuffer::new(capacity)?;
    let mut sample_rng = rng::stream(seed, rng::STREAM_SAMPLING);
    let mut noise_rng = rng::stream(seed, rng::STREAM_EXPLORATION);
    let noise = if config.exploration_noise_sigma > 0.0 {
        Some(
            Normal::new(0.0, config.exploration_noise_sigma)
                .map_err(|e| LearnError::InvalidConfig(e.to_string()))?,
        )
    } else {
        None
    };

    let mut policy = policy0;
    let mut rows = Vec::with_capacity(config.steps + 1);
    rows.push(initial_row(&obj, &policy, buffer.total_priority()));

    for step in 1..=config.steps {
        let (eta_x, eta_y) = match &noise {
            Some(d) => (d.sample(&mut noise_rng), d.sample(&mut noise_rng)),
            None => (0.0, 0.0),
        };
        let action = JointActionSample::new(0, policy.theta_x + eta_x, policy.theta_y + eta_y);
        let priority = buffer.max_priority();
        buffer.insert(action, priority)?;

        let batch = buffer.sample_uniform(config.batch_size, &mut sample_rng)?;
        let grad = obj.minibatch_gradient(&policy, &batch.actions)?;
        let distance = batch_mean_distance(&batch.actions, &policy);
        policy = gradient_ascent_step(&policy, grad, config)?;
        rows.push(RunRow {
            step,
            theta_x: policy.theta_x,
            theta_y: policy.theta_y,
            reward: obj.reward.eval(policy.theta_x, policy.theta_y),
            grad_x: grad.0,
            grad_y: grad.1,
            mean_distance: distance,
            total_priority: buffer.total_priority(),
        });
    }
    Ok((RunRecord { rows }, buffer))
}
