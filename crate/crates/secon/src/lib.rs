//! Simultaneous estimation and control for linear-parametric systems.
//!
//! A system with unknown physical parameters (mass, inertia, friction,
//! contact geometry) is controlled while those parameters are estimated
//! online. An extended Kalman filter tracks a joint Gaussian belief over the
//! state and parameters, turning the task into an MDP over beliefs. Two
//! planners act on that belief MDP:
//!
//! * [`mcts`] — Monte Carlo tree search with double progressive widening,
//!   which plans through sampled future observations and so weighs
//!   information gathering against progress toward the goal;
//! * [`mpc`] — certainty-equivalent model predictive control, the benchmark,
//!   which plans on the mean parameter estimate alone.
//!
//! [`models`] ships two domains: a 1D double integrator with unknown mass
//! and a planar manipulation task with five unknown parameters. [`harness`]
//! runs seeded closed-loop trials and sweeps, and the `secon` binary exposes
//! them on the command line.

pub mod belief;
pub mod config;
pub mod convex;
pub mod filter;
pub mod harness;
pub mod mcts;
pub mod models;
pub mod mpc;

pub use belief::{reward, BeliefMdp, BeliefTransition, RewardKind, RewardSpec};
pub use filter::{correct, jacobians, predict, FilterError, GaussianBelief, Jacobians};
pub use harness::{
    aggregate, derive_seed, run_sweep, run_trial, ExperimentConfig, ModelKind, PolicyKind,
    SweepAxis, SweepTable, TrialResult, TruthMode,
};
pub use mcts::{MctsConfig, PlanError, PlanOutcome};
pub use models::{DoubleIntegrator, Model, PlanarManipulation};
pub use mpc::{plan_mpc, MpcConfig, MpcError, MpcPlan};
