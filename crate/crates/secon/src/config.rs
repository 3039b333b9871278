//! Plain-text configuration files.
//!
//! One `key = value` pair per line; `#` starts a comment. Unknown keys are
//! rejected. The `model` key is read first so that the remaining keys
//! override the right set of model defaults. Lists are comma-separated.
//!
//! Recognized keys:
//!
//! ```text
//! model            1d | pm
//! policy           mcts | mpc
//! reward           l1 | l2
//! r_pos r_vel r_u  nonpositive reward weights
//! steps            steps per trial
//! trials           trials per sweep point
//! seed             master seed
//! process_noise    sigma of the process noise
//! measurement_noise sigma of the measurement noise
//! param_drift      sigma of the parameter random walk
//! mass_sigma       prior sigma of the mass
//! param_sigma      prior sigma of the other parameters
//! param_mean       prior mean of floored parameters
//! initial_state    comma list, length = state dimension
//! initial_state_sigma  sigma of the true initial state around the mean
//! truth            prior | fixed:v1,v2,...
//! sweep            process_noise | mass_sigma
//! sweep_values     comma list of positive sigmas
//! dt               integration step
//! u_max            control bound
//! mcts_iterations mcts_depth mcts_exploration dpw_k dpw_alpha rollout_gain discount
//! mpc_horizon mpc_tolerance
//! ```

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::belief::RewardKind;
use crate::harness::{ExperimentConfig, ModelKind, PolicyKind, SweepAxis, TruthMode};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected 'key = value', got '{text}'")]
    Syntax { line: usize, text: String },
    #[error("line {line}: unknown key '{key}'")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for '{key}': {message}")]
    BadValue { line: usize, key: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
}

pub fn parse_model(text: &str) -> Option<ModelKind> {
    match text {
        "1d" => Some(ModelKind::OneD),
        "pm" => Some(ModelKind::Planar),
        _ => None,
    }
}

pub fn parse_policy(text: &str) -> Option<PolicyKind> {
    match text {
        "mcts" => Some(PolicyKind::Mcts),
        "mpc" => Some(PolicyKind::Mpc),
        _ => None,
    }
}

pub fn parse_reward(text: &str) -> Option<RewardKind> {
    match text {
        "l1" => Some(RewardKind::L1),
        "l2" => Some(RewardKind::L2),
        _ => None,
    }
}

fn entries(text: &str) -> Result<Vec<(usize, &str, &str)>, ConfigError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::Syntax { line: idx + 1, text: raw.to_string() })?;
        out.push((idx + 1, key.trim(), value.trim()));
    }
    Ok(out)
}

fn float_list(value: &str) -> Result<Vec<f64>, String> {
    value
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| e.to_string()))
        .collect()
}

/// Parses a configuration from text, starting from the model defaults.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let entries = entries(text)?;
    let model = entries
        .iter()
        .find(|(_, key, _)| *key == "model")
        .map(|&(line, _, value)| {
            parse_model(value).ok_or_else(|| ConfigError::BadValue {
                line,
                key: "model".into(),
                message: format!("expected 1d or pm, got '{value}'"),
            })
        })
        .transpose()?
        .unwrap_or(ModelKind::OneD);

    let mut cfg = ExperimentConfig::defaults(model);
    let mut sweep_values_set = false;
    for (line, key, value) in entries {
        let bad = |message: String| ConfigError::BadValue { line, key: key.to_string(), message };
        let float = |value: &str| value.parse::<f64>().map_err(|e| bad(e.to_string()));
        let int = |value: &str| value.parse::<usize>().map_err(|e| bad(e.to_string()));
        match key {
            "model" => {}
            "policy" => {
                cfg.policy = parse_policy(value)
                    .ok_or_else(|| bad(format!("expected mcts or mpc, got '{value}'")))?;
            }
            "reward" => {
                cfg.reward = parse_reward(value)
                    .ok_or_else(|| bad(format!("expected l1 or l2, got '{value}'")))?;
            }
            "r_pos" => cfg.reward_weights.0 = float(value)?,
            "r_vel" => cfg.reward_weights.1 = float(value)?,
            "r_u" => cfg.reward_weights.2 = float(value)?,
            "steps" => cfg.steps_per_trial = int(value)?,
            "trials" => cfg.trials = int(value)?,
            "seed" => {
                cfg.master_seed = value.parse::<u64>().map_err(|e| bad(e.to_string()))?;
            }
            "process_noise" => cfg.process_noise_sigma = float(value)?,
            "measurement_noise" => cfg.measurement_noise_sigma = float(value)?,
            "param_drift" => cfg.param_drift_sigma = float(value)?,
            "mass_sigma" => cfg.mass_sigma = float(value)?,
            "param_sigma" => cfg.other_param_sigma = float(value)?,
            "param_mean" => cfg.param_mean = float(value)?,
            "initial_state" => {
                cfg.initial_state = Some(float_list(value).map_err(bad)?);
            }
            "initial_state_sigma" => cfg.initial_state_sigma = float(value)?,
            "truth" => {
                if value == "prior" {
                    cfg.truth = TruthMode::SampleFromPrior;
                } else if let Some(rest) = value.strip_prefix("fixed:") {
                    cfg.truth = TruthMode::Fixed(float_list(rest).map_err(bad)?);
                } else {
                    return Err(bad(format!("expected prior or fixed:..., got '{value}'")));
                }
            }
            "sweep" => {
                cfg.sweep = match value {
                    "process_noise" => SweepAxis::ProcessNoise,
                    "mass_sigma" => SweepAxis::MassSigma,
                    _ => {
                        return Err(bad(format!(
                            "expected process_noise or mass_sigma, got '{value}'"
                        )))
                    }
                };
            }
            "sweep_values" => {
                cfg.sweep_values = float_list(value).map_err(bad)?;
                sweep_values_set = true;
            }
            "dt" => cfg.dt = float(value)?,
            "u_max" => cfg.u_max = float(value)?,
            "mcts_iterations" => cfg.mcts.iterations = int(value)?,
            "mcts_depth" => cfg.mcts.depth = int(value)?,
            "mcts_exploration" => cfg.mcts.exploration = float(value)?,
            "dpw_k" => cfg.mcts.dpw_k = float(value)?,
            "dpw_alpha" => cfg.mcts.dpw_alpha = float(value)?,
            "rollout_gain" => cfg.mcts.rollout_gain = float(value)?,
            "discount" => cfg.mcts.discount = float(value)?,
            "mpc_horizon" => cfg.mpc_horizon = int(value)?,
            "mpc_tolerance" => cfg.mpc_tolerance = float(value)?,
            _ => return Err(ConfigError::UnknownKey { line, key: key.to_string() }),
        }
    }
    // Switching the sweep axis without explicit values picks the matching
    // matching default abscissae.
    if !sweep_values_set && cfg.sweep == SweepAxis::MassSigma {
        cfg.sweep_values = crate::harness::mass_sweep_default(cfg.model);
    }
    cfg.validate().map_err(ConfigError::Invalid)?;
    Ok(cfg)
}

pub fn load_config_file(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    parse_config_str(&fs::read_to_string(path)?)
}
