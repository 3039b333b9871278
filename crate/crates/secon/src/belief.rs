//! The belief MDP wrapping a model and the EKF.
//!
//! Beliefs are Gaussian; a transition samples a true successor and an
//! observation through the model, runs one EKF predict/correct cycle, and
//! scores the action against the updated mean state.

use nalgebra::DVector;
use rand::Rng;
use thiserror::Error;

use crate::filter::{correct, predict, FilterError, GaussianBelief};
use crate::models::{wrap_angle, Model};

#[derive(Debug, Error)]
pub enum RewardError {
    #[error("reward weights must be nonpositive penalties, got {0}")]
    PositiveWeight(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewardKind {
    L1,
    L2,
}

/// Nonpositive stage-reward weights for position, velocity, and effort.
#[derive(Debug, Clone, Copy)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub r_pos: f64,
    pub r_vel: f64,
    pub r_u: f64,
}

impl RewardSpec {
    pub fn new(kind: RewardKind, r_pos: f64, r_vel: f64, r_u: f64) -> Result<Self, RewardError> {
        for w in [r_pos, r_vel, r_u] {
            if w > 0.0 {
                return Err(RewardError::PositiveWeight(w));
            }
        }
        Ok(Self { kind, r_pos, r_vel, r_u })
    }
}

/// Stage reward of a mean state and action.
///
/// Angles among the position components are wrapped to `(-pi, pi]` before
/// being penalized.
pub fn reward<M: Model + ?Sized>(
    model: &M,
    spec: &RewardSpec,
    state_mean: &DVector<f64>,
    u: &DVector<f64>,
) -> f64 {
    let term = |v: f64| match spec.kind {
        RewardKind::L1 => v.abs(),
        RewardKind::L2 => v * v,
    };
    let mut total = 0.0;
    for &i in model.position_indices() {
        let v = if model.angle_indices().contains(&i) {
            wrap_angle(state_mean[i])
        } else {
            state_mean[i]
        };
        total += spec.r_pos * term(v);
    }
    for &i in model.velocity_indices() {
        total += spec.r_vel * term(state_mean[i]);
    }
    for v in u.iter() {
        total += spec.r_u * term(*v);
    }
    total
}

/// One sampled belief transition.
#[derive(Debug, Clone)]
pub struct BeliefTransition {
    pub next_belief: GaussianBelief,
    pub reward: f64,
    pub observation: DVector<f64>,
}

/// A model plus reward weights, viewed as an MDP over Gaussian beliefs.
#[derive(Clone, Copy)]
pub struct BeliefMdp<'a, M: Model> {
    pub model: &'a M,
    pub reward_spec: &'a RewardSpec,
}

impl<'a, M: Model> BeliefMdp<'a, M> {
    pub fn new(model: &'a M, reward_spec: &'a RewardSpec) -> Self {
        Self { model, reward_spec }
    }

    /// Generative transition: samples a successor of the belief mean through
    /// the true dynamics, observes it, and filters. The sampled observation
    /// comes from the sampled state, not the most likely one.
    pub fn generate<R: Rng + ?Sized>(
        &self,
        belief: &GaussianBelief,
        u: &DVector<f64>,
        rng: &mut R,
    ) -> Result<BeliefTransition, FilterError> {
        let u = self.model.saturate(u);
        let sampled_next = self.model.step_truth(&belief.mean, &u, rng);
        let observation = self.model.observe(&sampled_next, &u, rng);
        let predicted = predict(self.model, belief, &u)?;
        let next_belief = correct(self.model, &predicted, &u, &observation)?;
        let r = reward(self.model, self.reward_spec, &next_belief.state_mean(self.model), &u);
        Ok(BeliefTransition { next_belief, reward: r, observation })
    }
}
