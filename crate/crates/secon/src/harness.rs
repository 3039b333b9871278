//! Closed-loop experiment driver.
//!
//! A trial interleaves planning, truth propagation, measurement, and
//! filtering: the control is chosen from the current belief, the truth
//! advances under that control, the sensor measures the new state, and the
//! EKF folds control and measurement into the next belief. Rewards accrue
//! on the updated mean.
//!
//! Sweeps run a batch of independently seeded trials per sweep value in
//! parallel and report mean total reward with its standard error.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::belief::{reward, BeliefMdp, RewardKind, RewardSpec};
use crate::filter::{correct, predict, GaussianBelief};
use crate::mcts::{self, MctsConfig};
use crate::models::{DoubleIntegrator, Model, PlanarManipulation};
use crate::mpc::{self, MpcConfig, MpcError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    OneD,
    Planar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyKind {
    Mcts,
    Mpc,
}

/// How the true parameters of a trial are chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum TruthMode {
    /// True parameters drawn from the belief prior centered at `param_mean`,
    /// truncated at the floors.
    SampleFromPrior,
    /// True parameters fixed at these values; the belief still starts at
    /// `param_mean` with the configured prior sigmas, so any truth away
    /// from the prior mean gives a systematically wrong initial estimate.
    /// This is the default protocol.
    Fixed(Vec<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    ProcessNoise,
    MassSigma,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub model: ModelKind,
    pub policy: PolicyKind,
    pub reward: RewardKind,
    /// `(r_pos, r_vel, r_u)`, all nonpositive.
    pub reward_weights: (f64, f64, f64),
    pub steps_per_trial: usize,
    pub trials: usize,
    pub process_noise_sigma: f64,
    pub measurement_noise_sigma: f64,
    /// Random-walk sigma of the true parameters (zero keeps them fixed).
    pub param_drift_sigma: f64,
    /// Prior standard deviation of the mass (the first parameter).
    pub mass_sigma: f64,
    /// Prior standard deviation of every other parameter.
    pub other_param_sigma: f64,
    /// Prior mean for floored parameters; unfloored ones are centered at 0.
    pub param_mean: f64,
    /// Initial physical state; `None` uses the model default.
    pub initial_state: Option<Vec<f64>>,
    pub initial_state_sigma: f64,
    pub truth: TruthMode,
    pub master_seed: u64,
    pub sweep: SweepAxis,
    pub sweep_values: Vec<f64>,
    pub dt: f64,
    pub u_max: f64,
    pub mcts: MctsConfig,
    pub mpc_horizon: usize,
    pub mpc_tolerance: f64,
}

/// Default process-noise sweep abscissae (log-spaced per model).
pub fn noise_sweep_default(model: ModelKind) -> Vec<f64> {
    match model {
        ModelKind::OneD => vec![
            0.03162277660168379,
            0.1,
            0.31622776601683794,
            1.0,
            2.23606797749979,
        ],
        ModelKind::Planar => vec![
            0.03162277660168379,
            0.1,
            0.31622776601683794,
            1.0,
            3.1622776601683795,
            10.0,
        ],
    }
}

/// Default initial-mass-sigma sweep abscissae (log-spaced per model).
pub fn mass_sweep_default(model: ModelKind) -> Vec<f64> {
    match model {
        ModelKind::OneD => vec![
            0.31622776601683794,
            1.0,
            3.1622776601683795,
            10.0,
            31.622776601683793,
            100.0,
        ],
        ModelKind::Planar => vec![
            0.03162277660168379,
            0.1,
            0.31622776601683794,
            1.0,
            3.1622776601683795,
            10.0,
            31.622776601683793,
        ],
    }
}

impl ExperimentConfig {
    /// Shipped defaults per model.
    pub fn defaults(model: ModelKind) -> Self {
        let sqrt10 = 10.0_f64.sqrt();
        match model {
            ModelKind::OneD => Self {
                model,
                policy: PolicyKind::Mcts,
                reward: RewardKind::L1,
                reward_weights: (-10.0, -3.0, -1.0),
                steps_per_trial: 100,
                trials: 30,
                process_noise_sigma: 1.0,
                measurement_noise_sigma: 0.0,
                param_drift_sigma: 0.0,
                mass_sigma: sqrt10,
                other_param_sigma: sqrt10,
                param_mean: 5.0,
                initial_state: Some(vec![50.0, 0.0]),
                initial_state_sigma: 0.0,
                truth: TruthMode::Fixed(vec![5.0]),
                master_seed: 0,
                sweep: SweepAxis::ProcessNoise,
                sweep_values: noise_sweep_default(model),
                dt: 0.1,
                u_max: 300.0,
                mcts: MctsConfig {
                    exploration: 300.0,
                    dpw_k: 8.0,
                    dpw_alpha: 0.2,
                    depth: 20,
                    iterations: 2000,
                    rollout_gain: 4.0,
                    discount: 1.0,
                },
                mpc_horizon: 20,
                mpc_tolerance: 1e-6,
            },
            ModelKind::Planar => Self {
                model,
                policy: PolicyKind::Mcts,
                reward: RewardKind::L1,
                reward_weights: (-1.0, -1.0, -0.1),
                steps_per_trial: 100,
                trials: 30,
                process_noise_sigma: 1.0,
                measurement_noise_sigma: 0.0,
                param_drift_sigma: 0.0,
                mass_sigma: sqrt10,
                other_param_sigma: sqrt10,
                param_mean: 5.0,
                initial_state: Some(vec![
                    40.0,
                    40.0,
                    std::f64::consts::FRAC_PI_4,
                    0.0,
                    0.0,
                    0.0,
                ]),
                initial_state_sigma: 0.0,
                truth: TruthMode::Fixed(vec![5.0, 5.0, 5.0, 0.5, 0.5]),
                master_seed: 0,
                sweep: SweepAxis::ProcessNoise,
                sweep_values: noise_sweep_default(model),
                dt: 0.1,
                u_max: 100.0,
                mcts: MctsConfig {
                    exploration: 100.0,
                    dpw_k: 8.0,
                    dpw_alpha: 0.2,
                    depth: 20,
                    iterations: 100,
                    rollout_gain: 8.0,
                    discount: 1.0,
                },
                mpc_horizon: 20,
                mpc_tolerance: 1e-6,
            },
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.steps_per_trial == 0 {
            return Err("steps_per_trial must be at least 1".into());
        }
        if self.trials == 0 {
            return Err("trials must be at least 1".into());
        }
        for sig in [
            self.process_noise_sigma,
            self.measurement_noise_sigma,
            self.param_drift_sigma,
            self.initial_state_sigma,
        ] {
            if sig.is_nan() || sig < 0.0 {
                return Err(format!("noise sigma must be nonnegative, got {sig}"));
            }
        }
        for sig in [self.mass_sigma, self.other_param_sigma] {
            if sig.is_nan() || sig <= 0.0 {
                return Err(format!("prior sigma must be positive, got {sig}"));
            }
        }
        if self.sweep_values.iter().any(|&v| v.is_nan() || v <= 0.0) {
            return Err("sweep values must be positive".into());
        }
        let (rp, rv, ru) = self.reward_weights;
        if rp > 0.0 || rv > 0.0 || ru > 0.0 {
            return Err("reward weights must be nonpositive".into());
        }
        self.mcts.validate()?;
        if self.mpc_horizon == 0 {
            return Err("mpc_horizon must be at least 1".into());
        }
        Ok(())
    }

    pub fn reward_spec(&self) -> RewardSpec {
        let (rp, rv, ru) = self.reward_weights;
        RewardSpec::new(self.reward, rp, rv, ru).expect("validated weights")
    }

    pub fn mpc_config(&self) -> MpcConfig {
        MpcConfig::new(self.mpc_horizon, self.u_max, self.mpc_tolerance)
            .expect("validated MPC settings")
    }

    /// A copy of this configuration with one sweep value applied.
    pub fn at_sweep_point(&self, value: f64) -> Self {
        let mut cfg = self.clone();
        match self.sweep {
            SweepAxis::ProcessNoise => cfg.process_noise_sigma = value,
            SweepAxis::MassSigma => cfg.mass_sigma = value,
        }
        cfg
    }
}

/// Deterministic per-trial seed: trial `i` at sweep point `j` under a master
/// seed. SplitMix64-style mixing keeps distinct coordinates independent.
pub fn derive_seed(master: u64, trial: u64, sweep: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E3779B97F4A7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(master) ^ trial.wrapping_mul(0xA24BAED4963EE407)) ^ sweep.wrapping_mul(0x9FB21C651E98DF25))
}

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub reward: f64,
    pub action: Vec<f64>,
    pub mean: Vec<f64>,
    pub cov_trace: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub total_reward: f64,
    pub steps: Vec<StepRecord>,
    pub final_truth: Vec<f64>,
    /// Set when the trial aborted (filter divergence or solver failure).
    pub flag: Option<String>,
}

impl TrialResult {
    pub fn mean_wall_ms(&self) -> f64 {
        if self.steps.is_empty() {
            return 0.0;
        }
        self.steps.iter().map(|s| s.wall_ms).sum::<f64>() / self.steps.len() as f64
    }

    pub fn action_sequence(&self) -> Vec<Vec<f64>> {
        self.steps.iter().map(|s| s.action.clone()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub sweep_value: f64,
    /// NaN when every trial at this point was flagged.
    pub mean_reward: f64,
    pub sem: f64,
    pub trials: usize,
    pub flagged: usize,
}

#[derive(Debug, Clone)]
pub struct SweepTable {
    pub axis: SweepAxis,
    pub rows: Vec<SweepRow>,
}

fn build_one_d(cfg: &ExperimentConfig) -> DoubleIntegrator {
    let mut model = DoubleIntegrator::new(cfg.dt, cfg.u_max)
        .expect("validated dt and u_max")
        .with_process_noise_sigma(cfg.process_noise_sigma)
        .with_param_drift_sigma(cfg.param_drift_sigma);
    if cfg.measurement_noise_sigma > 0.0 {
        let r = DMatrix::identity(2, 2) * cfg.measurement_noise_sigma * cfg.measurement_noise_sigma;
        model = model.with_measurement_noise(r);
    }
    if let Some(x0) = &cfg.initial_state {
        model = model.with_initial_state(DVector::from_vec(x0.clone()));
    }
    model
}

fn build_planar(cfg: &ExperimentConfig) -> PlanarManipulation {
    let mut model = PlanarManipulation::new(cfg.dt, cfg.u_max)
        .expect("validated dt and u_max")
        .with_process_noise_sigma(cfg.process_noise_sigma)
        .with_param_drift_sigma(cfg.param_drift_sigma);
    if cfg.measurement_noise_sigma > 0.0 {
        let r = DMatrix::identity(9, 9) * cfg.measurement_noise_sigma * cfg.measurement_noise_sigma;
        model = model.with_measurement_noise(r);
    }
    if let Some(x0) = &cfg.initial_state {
        model = model.with_initial_state(DVector::from_vec(x0.clone()));
    }
    model
}

/// Draw from `N(mean, sigma^2)` conditioned on the floor, by rejection.
fn sample_truncated<R: Rng + ?Sized>(mean: f64, sigma: f64, floor: f64, rng: &mut R) -> f64 {
    if sigma == 0.0 {
        return mean.max(floor);
    }
    for _ in 0..1000 {
        let draw = mean + sigma * rng.sample::<f64, _>(StandardNormal);
        if draw >= floor {
            return draw;
        }
    }
    floor
}

/// Runs one closed-loop trial with the given seed.
pub fn run_trial(cfg: &ExperimentConfig, trial_seed: u64) -> TrialResult {
    match cfg.model {
        ModelKind::OneD => run_trial_with(&build_one_d(cfg), cfg, trial_seed),
        ModelKind::Planar => run_trial_with(&build_planar(cfg), cfg, trial_seed),
    }
}

fn run_trial_with<M: Model>(model: &M, cfg: &ExperimentConfig, trial_seed: u64) -> TrialResult {
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);
    let spec = cfg.reward_spec();
    let mpc_config = cfg.mpc_config();
    let floors = model.param_floors();

    let prior_sigma: Vec<f64> = (0..model.param_dim())
        .map(|i| if i == 0 { cfg.mass_sigma } else { cfg.other_param_sigma })
        .collect();

    let prior_mean: Vec<f64> = floors
        .iter()
        .map(|f| if f.is_finite() { cfg.param_mean } else { 0.0 })
        .collect();
    let truth_params: Vec<f64> = match &cfg.truth {
        TruthMode::Fixed(values) => {
            assert_eq!(values.len(), model.param_dim(), "fixed truth has wrong length");
            values.clone()
        }
        TruthMode::SampleFromPrior => (0..model.param_dim())
            .map(|i| sample_truncated(prior_mean[i], prior_sigma[i], floors[i], &mut rng))
            .collect(),
    };

    let x0 = cfg
        .initial_state
        .clone()
        .map(DVector::from_vec)
        .unwrap_or_else(|| model.default_initial_state());
    let truth_x0 = if cfg.initial_state_sigma > 0.0 {
        DVector::from_fn(x0.len(), |i, _| {
            x0[i] + cfg.initial_state_sigma * rng.sample::<f64, _>(StandardNormal)
        })
    } else {
        x0.clone()
    };

    let n = model.state_dim();
    let aug = model.aug_dim();
    let mut truth = DVector::zeros(aug);
    truth.rows_mut(0, n).copy_from(&truth_x0);
    for (i, v) in truth_params.iter().enumerate() {
        truth[n + i] = *v;
    }

    let mut belief_mean = DVector::zeros(aug);
    belief_mean.rows_mut(0, n).copy_from(&x0);
    for (i, v) in prior_mean.iter().enumerate() {
        belief_mean[n + i] = *v;
    }
    model.clamp_params(&mut belief_mean);
    let mut belief_cov = DMatrix::zeros(aug, aug);
    for i in 0..n {
        belief_cov[(i, i)] = cfg.initial_state_sigma * cfg.initial_state_sigma;
    }
    for (i, s) in prior_sigma.iter().enumerate() {
        belief_cov[(n + i, n + i)] = s * s;
    }
    let mut belief = GaussianBelief::new(belief_mean, belief_cov);

    let mut steps = Vec::with_capacity(cfg.steps_per_trial);
    let mut total = 0.0;
    let mut flag = None;

    for step in 0..cfg.steps_per_trial {
        let timer = Instant::now();
        let action = match cfg.policy {
            PolicyKind::Mcts => {
                let mdp = BeliefMdp::new(model, &spec);
                match mcts::plan(&mdp, &belief, &cfg.mcts, &mut rng) {
                    Ok(outcome) => outcome.action,
                    Err(err) => {
                        flag = Some(format!("step {step}: {err}"));
                        break;
                    }
                }
            }
            PolicyKind::Mpc => match mpc::plan_mpc(model, &spec, &belief.mean, &mpc_config) {
                Ok(plan) => plan.first_action,
                Err(MpcError::NonConvergence(_)) => {
                    flag = Some(format!("step {step}: MPC iteration cap"));
                    break;
                }
                Err(err) => {
                    flag = Some(format!("step {step}: {err}"));
                    break;
                }
            },
        };
        let u = model.saturate(&action);

        // The truth advances under the applied control, the sensor measures
        // the new state, and the filter folds both into the next belief.
        truth = model.step_truth(&truth, &u, &mut rng);
        let observation = model.observe(&truth, &u, &mut rng);
        belief = match predict(model, &belief, &u)
            .and_then(|pred| correct(model, &pred, &u, &observation))
        {
            Ok(b) => b,
            Err(err) => {
                flag = Some(format!("step {step}: {err}"));
                break;
            }
        };

        let r = reward(model, &spec, &belief.state_mean(model), &u);
        total += r;
        steps.push(StepRecord {
            step,
            reward: r,
            action: u.iter().copied().collect(),
            mean: belief.mean.iter().copied().collect(),
            cov_trace: belief.cov_trace(),
            wall_ms: timer.elapsed().as_secs_f64() * 1e3,
        });
    }

    TrialResult {
        total_reward: total,
        steps,
        final_truth: truth.iter().copied().collect(),
        flag,
    }
}

/// Mean and standard error of the unflagged trial rewards at one sweep point.
pub fn aggregate(sweep_value: f64, results: &[TrialResult]) -> SweepRow {
    let rewards: Vec<f64> =
        results.iter().filter(|r| r.flag.is_none()).map(|r| r.total_reward).collect();
    let flagged = results.len() - rewards.len();
    if rewards.is_empty() {
        return SweepRow {
            sweep_value,
            mean_reward: f64::NAN,
            sem: f64::NAN,
            trials: 0,
            flagged,
        };
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let sem = if rewards.len() > 1 {
        let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    SweepRow { sweep_value, mean_reward: mean, sem, trials: rewards.len(), flagged }
}

/// Runs `trials` seeded trials at every sweep value, in parallel.
pub fn run_sweep(cfg: &ExperimentConfig) -> SweepTable {
    let rows = cfg
        .sweep_values
        .iter()
        .enumerate()
        .map(|(j, &value)| {
            let point_cfg = cfg.at_sweep_point(value);
            let results: Vec<TrialResult> = (0..cfg.trials)
                .into_par_iter()
                .map(|i| run_trial(&point_cfg, derive_seed(cfg.master_seed, i as u64, j as u64)))
                .collect();
            aggregate(value, &results)
        })
        .collect();
    SweepTable { axis: cfg.sweep, rows }
}

/// Sweep CSV: `sweep_value,mean_reward,sem,trials,flagged`.
pub fn write_sweep_csv<W: std::io::Write>(table: &SweepTable, w: &mut W) -> std::io::Result<()> {
    writeln!(w, "sweep_value,mean_reward,sem,trials,flagged")?;
    for row in &table.rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            row.sweep_value, row.mean_reward, row.sem, row.trials, row.flagged
        )?;
    }
    Ok(())
}

/// Per-step trial CSV: `step,reward,action_*,mean_*,cov_trace,wall_ms`.
pub fn write_trial_csv<W: std::io::Write>(result: &TrialResult, w: &mut W) -> std::io::Result<()> {
    let (n_action, n_mean) = result
        .steps
        .first()
        .map_or((0, 0), |s| (s.action.len(), s.mean.len()));
    let mut header = String::from("step,reward");
    for i in 0..n_action {
        header.push_str(&format!(",action_{i}"));
    }
    for i in 0..n_mean {
        header.push_str(&format!(",mean_{i}"));
    }
    header.push_str(",cov_trace,wall_ms");
    writeln!(w, "{header}")?;
    for s in &result.steps {
        let mut line = format!("{},{}", s.step, s.reward);
        for v in &s.action {
            line.push_str(&format!(",{v}"));
        }
        for v in &s.mean {
            line.push_str(&format!(",{v}"));
        }
        line.push_str(&format!(",{},{}", s.cov_trace, s.wall_ms));
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::collections::HashSet;

    fn quick_mpc_config() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::defaults(ModelKind::OneD);
        cfg.policy = PolicyKind::Mpc;
        cfg.steps_per_trial = 20;
        cfg.trials = 3;
        cfg.process_noise_sigma = 0.5;
        cfg.master_seed = 7;
        cfg
    }

    #[test]
    fn defaults_validate_and_carry_reference_values() {
        for kind in [ModelKind::OneD, ModelKind::Planar] {
            let cfg = ExperimentConfig::defaults(kind);
            cfg.validate().unwrap();
            assert_eq!(cfg.steps_per_trial, 100);
            assert_eq!(cfg.trials, 30);
            assert_relative_eq!(cfg.mass_sigma * cfg.mass_sigma, 10.0, epsilon = 1e-12);
            assert_eq!(cfg.mcts.depth, 20);
            assert_eq!(cfg.mpc_horizon, 20);
        }
        let one_d = ExperimentConfig::defaults(ModelKind::OneD);
        assert_relative_eq!(one_d.u_max, 300.0);
        assert_relative_eq!(one_d.mcts.exploration, 300.0);
        assert_relative_eq!(one_d.mcts.rollout_gain, 4.0);
        assert_eq!(one_d.mcts.iterations, 2000);
        let pm = ExperimentConfig::defaults(ModelKind::Planar);
        assert_relative_eq!(pm.u_max, 100.0);
        assert_relative_eq!(pm.mcts.exploration, 100.0);
        assert_relative_eq!(pm.mcts.rollout_gain, 8.0);
        assert_eq!(pm.reward_weights, (-1.0, -1.0, -0.1));
    }

    #[test]
    fn default_sweep_abscissae() {
        let noise_1d = noise_sweep_default(ModelKind::OneD);
        assert_eq!(noise_1d.len(), 5);
        assert_relative_eq!(noise_1d[0], 0.03162277660168379);
        assert_relative_eq!(noise_1d[4], 2.23606797749979);
        let mass_1d = mass_sweep_default(ModelKind::OneD);
        assert_eq!(mass_1d.len(), 6);
        assert_relative_eq!(mass_1d[0], 0.31622776601683794);
        assert_relative_eq!(mass_1d[5], 100.0);
        assert_eq!(noise_sweep_default(ModelKind::Planar).len(), 6);
        assert_eq!(mass_sweep_default(ModelKind::Planar).len(), 7);
    }

    #[test]
    fn zero_steps_accrues_nothing() {
        // The config contract wants steps >= 1, but the trial runner itself
        // degrades gracefully to an empty trial.
        let mut cfg = quick_mpc_config();
        cfg.steps_per_trial = 0;
        let result = run_trial(&cfg, 3);
        assert!(result.flag.is_none());
        assert_eq!(result.total_reward, 0.0);
        assert!(result.steps.is_empty());
    }

    #[test]
    fn trial_from_goal_state_costs_nothing() {
        let mut cfg = quick_mpc_config();
        cfg.steps_per_trial = 5;
        cfg.initial_state = Some(vec![0.0, 0.0]);
        cfg.process_noise_sigma = 0.0;
        cfg.truth = TruthMode::Fixed(vec![5.0]);
        let result = run_trial(&cfg, 3);
        assert!(result.flag.is_none());
        assert_relative_eq!(result.total_reward, 0.0, epsilon = 1e-4);
    }

    #[test]
    fn reward_accounting_is_consistent() {
        let cfg = quick_mpc_config();
        let result = run_trial(&cfg, derive_seed(cfg.master_seed, 0, 0));
        assert!(result.flag.is_none());
        let sum: f64 = result.steps.iter().map(|s| s.reward).sum();
        assert!((sum - result.total_reward).abs() <= 1e-9);
        assert_eq!(result.steps.len(), cfg.steps_per_trial);
    }

    #[test]
    fn trials_are_seed_deterministic() {
        let cfg = quick_mpc_config();
        let a = run_trial(&cfg, 99);
        let b = run_trial(&cfg, 99);
        assert_eq!(a.total_reward.to_bits(), b.total_reward.to_bits());
        assert_eq!(a.action_sequence(), b.action_sequence());
        let c = run_trial(&cfg, 100);
        assert_ne!(a.total_reward.to_bits(), c.total_reward.to_bits());
    }

    #[test]
    fn noiseless_known_mass_mpc_reaches_goal() {
        let mut cfg = quick_mpc_config();
        cfg.steps_per_trial = 100;
        cfg.process_noise_sigma = 0.0;
        cfg.truth = TruthMode::Fixed(vec![5.0]);
        // A vanishing prior variance pins the belief to the true mass.
        cfg.mass_sigma = 1e-12;
        let result = run_trial(&cfg, 1);
        assert!(result.flag.is_none());
        assert!(
            result.final_truth[0].abs() < 0.1,
            "final position {} not at origin",
            result.final_truth[0]
        );
    }

    #[test]
    fn derived_seeds_are_unique_and_stable() {
        assert_eq!(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
        let mut seen = HashSet::new();
        for master in 0..4u64 {
            for i in 0..40u64 {
                for j in 0..12u64 {
                    assert!(seen.insert(derive_seed(master, i, j)), "collision at {master},{i},{j}");
                }
            }
        }
    }

    #[test]
    fn sweep_reruns_bit_identically_and_points_are_independent() {
        let mut cfg = quick_mpc_config();
        cfg.steps_per_trial = 10;
        cfg.trials = 2;
        cfg.sweep_values = vec![0.1, 1.0];
        let a = run_sweep(&cfg);
        let b = run_sweep(&cfg);
        for (ra, rb) in a.rows.iter().zip(&b.rows) {
            assert_eq!(ra.mean_reward.to_bits(), rb.mean_reward.to_bits());
            assert_eq!(ra.sem.to_bits(), rb.sem.to_bits());
        }
        // Dropping the second sweep point leaves the first untouched.
        let mut first_only = cfg.clone();
        first_only.sweep_values = vec![0.1];
        let c = run_sweep(&first_only);
        assert_eq!(a.rows[0].mean_reward.to_bits(), c.rows[0].mean_reward.to_bits());
    }

    #[test]
    fn aggregate_matches_hand_statistics() {
        let fake = |reward: f64, flagged: bool| TrialResult {
            total_reward: reward,
            steps: Vec::new(),
            final_truth: Vec::new(),
            flag: flagged.then(|| "x".to_string()),
        };
        let row = aggregate(1.0, &[fake(-10.0, false), fake(-20.0, false)]);
        assert_relative_eq!(row.mean_reward, -15.0);
        assert_relative_eq!(row.sem, 5.0);
        assert_eq!(row.trials, 2);

        let row = aggregate(1.0, &[fake(-7.0, false)]);
        assert_eq!(row.sem, 0.0);

        let row = aggregate(1.0, &[fake(-7.0, false), fake(-7.0, false), fake(-7.0, false)]);
        assert_eq!(row.sem, 0.0);

        let row = aggregate(1.0, &[fake(-1.0, true), fake(-2.0, true)]);
        assert!(row.mean_reward.is_nan());
        assert_eq!(row.trials, 0);
        assert_eq!(row.flagged, 2);
    }

    #[test]
    fn aggregate_matches_independent_statistics_routine() {
        // Two-pass oracle written separately from the implementation.
        let seeds: Vec<f64> = (0..30).map(|i| -1000.0 - 37.5 * (i as f64) * (i as f64)).collect();
        let results: Vec<TrialResult> = seeds
            .iter()
            .map(|&r| TrialResult {
                total_reward: r,
                steps: Vec::new(),
                final_truth: Vec::new(),
                flag: None,
            })
            .collect();
        let row = aggregate(0.5, &results);
        let n = seeds.len() as f64;
        let mean = seeds.iter().copied().sum::<f64>() / n;
        let ss: f64 = seeds.iter().map(|r| (r - mean) * (r - mean)).sum();
        let sem = (ss / (n - 1.0)).sqrt() / n.sqrt();
        assert!((row.mean_reward - mean).abs() <= 1e-12 * mean.abs());
        assert!((row.sem - sem).abs() <= 1e-12 * sem.abs());
    }

    #[test]
    fn csv_headers_match_contract() {
        let cfg = quick_mpc_config();
        let result = run_trial(&cfg, 5);
        let mut buf = Vec::new();
        write_trial_csv(&result, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("step,reward,action_0,mean_0,mean_1,mean_2,cov_trace,wall_ms\n"));

        let table = SweepTable {
            axis: SweepAxis::ProcessNoise,
            rows: vec![SweepRow {
                sweep_value: 0.1,
                mean_reward: -10.0,
                sem: 1.0,
                trials: 30,
                flagged: 0,
            }],
        };
        let mut buf = Vec::new();
        write_sweep_csv(&table, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("sweep_value,mean_reward,sem,trials,flagged\n"));
        assert!(text.contains("0.1,-10,1,30,0"));
    }
}
