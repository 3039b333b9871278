//! Certainty-equivalent model predictive control.
//!
//! The planner freezes the dynamics matrices at the current mean parameter
//! estimate (and, for the planar model, at the current mean heading), rolls
//! the state out over a fixed horizon as an affine function of the stacked
//! controls, and maximizes the summed stage reward subject to the control
//! box. The L1 objective becomes a linear program through epigraph slack
//! variables; the L2 objective stays a box-constrained quadratic program.
//! Only the first control of the optimized sequence is meant to be applied.
//!
//! The planner reads nothing but the belief mean: certainty equivalence is
//! enforced by the interface.

use std::io;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::belief::{RewardKind, RewardSpec};
use crate::convex::{self, InequalityProgram, SolveError, Tolerances};
use crate::models::Model;

#[derive(Debug, Error)]
pub enum MpcError {
    #[error("invalid MPC configuration: {0}")]
    InvalidConfig(String),
    #[error("solver stopped at the iteration cap; best objective {}", .0.objective)]
    NonConvergence(Box<MpcPlan>),
    #[error("solver failure: {0}")]
    Solver(String),
}

#[derive(Debug, Clone, Copy)]
pub struct MpcConfig {
    pub horizon: usize,
    pub u_max: f64,
    /// Relative optimality tolerance, certified by the solver's duality gap.
    pub tolerance: f64,
}

impl MpcConfig {
    pub fn new(horizon: usize, u_max: f64, tolerance: f64) -> Result<Self, MpcError> {
        if horizon == 0 {
            return Err(MpcError::InvalidConfig("horizon must be at least 1".into()));
        }
        if u_max <= 0.0 {
            return Err(MpcError::InvalidConfig(format!("u_max must be positive, got {u_max}")));
        }
        if tolerance <= 0.0 {
            return Err(MpcError::InvalidConfig(format!(
                "tolerance must be positive, got {tolerance}"
            )));
        }
        Ok(Self { horizon, u_max, tolerance })
    }
}

/// An optimized control sequence and its certified objective.
#[derive(Debug, Clone)]
pub struct MpcPlan {
    pub first_action: DVector<f64>,
    pub controls: Vec<DVector<f64>>,
    /// Reward value (nonpositive) of the planned trajectory.
    pub objective: f64,
    pub duality_gap: f64,
    pub iterations: usize,
}

/// The finite-horizon program: frozen dynamics, stacked prediction matrices,
/// and the stage-cost weights.
#[derive(Debug, Clone)]
pub struct TrajectoryProgram {
    pub horizon: usize,
    pub state_dim: usize,
    pub control_dim: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub x0: DVector<f64>,
    pub u_max: f64,
    pub kind: RewardKind,
    /// Nonnegative penalty weight per state component.
    pub state_weights: DVector<f64>,
    /// Nonnegative penalty weight per control component.
    pub control_weight: f64,
    /// Stacked free response: block row `k` is `A^(k+1)`.
    prediction_free: DMatrix<f64>,
    /// Stacked forced response: block `(k, j)` is `A^(k-j) B` for `j <= k`.
    prediction_forced: DMatrix<f64>,
}

impl TrajectoryProgram {
    /// Freezes the model at the given augmented mean and builds the program.
    pub fn build<M: Model + ?Sized>(
        model: &M,
        spec: &RewardSpec,
        mean: &DVector<f64>,
        config: &MpcConfig,
    ) -> Result<Self, MpcError> {
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(MpcError::InvalidConfig("belief mean is not finite".into()));
        }
        let (x0, params) = model.split(mean);
        let a = model.state_matrix(&params);
        let b = model.control_matrix(&x0, &params);
        let n = model.state_dim();
        let m = model.control_dim();
        let h = config.horizon;

        let mut state_weights = DVector::zeros(n);
        for &i in model.position_indices() {
            state_weights[i] = -spec.r_pos;
        }
        for &i in model.velocity_indices() {
            state_weights[i] = -spec.r_vel;
        }

        let mut powers = Vec::with_capacity(h + 1);
        powers.push(DMatrix::identity(n, n));
        for k in 0..h {
            let next = &powers[k] * &a;
            powers.push(next);
        }
        let mut free = DMatrix::zeros(h * n, n);
        let mut forced = DMatrix::zeros(h * n, h * m);
        for k in 0..h {
            free.view_mut((k * n, 0), (n, n)).copy_from(&powers[k + 1]);
            for j in 0..=k {
                let block = &powers[k - j] * &b;
                forced.view_mut((k * n, j * m), (n, m)).copy_from(&block);
            }
        }

        Ok(Self {
            horizon: h,
            state_dim: n,
            control_dim: m,
            a,
            b,
            x0,
            u_max: config.u_max,
            kind: spec.kind,
            state_weights,
            control_weight: -spec.r_u,
            prediction_free: free,
            prediction_forced: forced,
        })
    }

    /// Lowers the program to inequality form for the interior-point solver.
    pub fn to_inequality_form(&self) -> InequalityProgram {
        let h = self.horizon;
        let n = self.state_dim;
        let m = self.control_dim;
        let n_u = h * m;
        let free_x0 = &self.prediction_free * &self.x0;

        match self.kind {
            RewardKind::L2 => {
                // Condensed box QP over the stacked controls.
                let mut weighted = self.prediction_forced.clone();
                for k in 0..h {
                    for i in 0..n {
                        let w = self.state_weights[i].sqrt();
                        weighted.row_mut(k * n + i).scale_mut(w);
                    }
                }
                let mut hessian = weighted.transpose() * &weighted * 2.0;
                for i in 0..n_u {
                    hessian[(i, i)] += 2.0 * self.control_weight;
                }
                let mut weighted_free = free_x0.clone();
                for k in 0..h {
                    for i in 0..n {
                        weighted_free[k * n + i] *= self.state_weights[i];
                    }
                }
                let gradient = self.prediction_forced.transpose() * weighted_free * 2.0;
                let mut rows = Vec::with_capacity(2 * n_u);
                let mut rhs = Vec::with_capacity(2 * n_u);
                for i in 0..n_u {
                    rows.push(vec![(i, 1.0)]);
                    rhs.push(self.u_max);
                    rows.push(vec![(i, -1.0)]);
                    rhs.push(self.u_max);
                }
                InequalityProgram {
                    variables: n_u,
                    hessian: Some(hessian),
                    gradient,
                    rows,
                    rhs: DVector::from_vec(rhs),
                    diagonal_tail: 0,
                }
            }
            RewardKind::L1 => {
                // Epigraph linear program: u, then |state| and |control| slacks.
                let weighted_rows: Vec<usize> = (0..h * n)
                    .filter(|i| self.state_weights[i % n] > 0.0)
                    .collect();
                let n_t = weighted_rows.len();
                let with_control_slack = self.control_weight > 0.0;
                let n_v = if with_control_slack { n_u } else { 0 };
                let variables = n_u + n_t + n_v;

                let mut gradient = DVector::zeros(variables);
                for (slot, &i) in weighted_rows.iter().enumerate() {
                    gradient[n_u + slot] = self.state_weights[i % n];
                }
                for j in 0..n_v {
                    gradient[n_u + n_t + j] = self.control_weight;
                }

                let mut rows = Vec::with_capacity(2 * (n_t + n_v) + 2 * n_u);
                let mut rhs = Vec::with_capacity(rows.capacity());
                for (slot, &i) in weighted_rows.iter().enumerate() {
                    let coeffs: Vec<(usize, f64)> = (0..n_u)
                        .filter(|&c| self.prediction_forced[(i, c)] != 0.0)
                        .map(|c| (c, self.prediction_forced[(i, c)]))
                        .collect();
                    let mut plus = coeffs.clone();
                    plus.push((n_u + slot, -1.0));
                    rows.push(plus);
                    rhs.push(-free_x0[i]);
                    let mut minus: Vec<(usize, f64)> =
                        coeffs.iter().map(|&(c, a)| (c, -a)).collect();
                    minus.push((n_u + slot, -1.0));
                    rows.push(minus);
                    rhs.push(free_x0[i]);
                }
                for j in 0..n_v {
                    rows.push(vec![(j, 1.0), (n_u + n_t + j, -1.0)]);
                    rhs.push(0.0);
                    rows.push(vec![(j, -1.0), (n_u + n_t + j, -1.0)]);
                    rhs.push(0.0);
                }
                for i in 0..n_u {
                    rows.push(vec![(i, 1.0)]);
                    rhs.push(self.u_max);
                    rows.push(vec![(i, -1.0)]);
                    rhs.push(self.u_max);
                }
                InequalityProgram {
                    variables,
                    hessian: None,
                    gradient,
                    rows,
                    rhs: DVector::from_vec(rhs),
                    diagonal_tail: n_t + n_v,
                }
            }
        }
    }

    /// Reward value of a control sequence under the frozen dynamics.
    pub fn objective_of(&self, controls: &[DVector<f64>]) -> f64 {
        let term = |v: f64| match self.kind {
            RewardKind::L1 => v.abs(),
            RewardKind::L2 => v * v,
        };
        let mut x = self.x0.clone();
        let mut cost = 0.0;
        for u in controls {
            x = &self.a * x + &self.b * u;
            for i in 0..self.state_dim {
                cost += self.state_weights[i] * term(x[i]);
            }
            for j in 0..self.control_dim {
                cost += self.control_weight * term(u[j]);
            }
        }
        -cost
    }

    /// Clips and splits a stacked solution vector into per-step controls.
    fn controls_from(&self, z: &DVector<f64>) -> Vec<DVector<f64>> {
        (0..self.horizon)
            .map(|k| {
                DVector::from_fn(self.control_dim, |j, _| {
                    z[k * self.control_dim + j].clamp(-self.u_max, self.u_max)
                })
            })
            .collect()
    }

    fn plan_from(&self, solution: &convex::Solution) -> MpcPlan {
        let controls = self.controls_from(&solution.x);
        MpcPlan {
            first_action: controls[0].clone(),
            objective: self.objective_of(&controls),
            controls,
            duality_gap: solution.duality_gap,
            iterations: solution.iterations,
        }
    }

    /// Plain-text dump of the frozen program for external cross-checks.
    ///
    /// Format: `horizon`, `state_dim`, `control_dim`, `u_max`, `objective`,
    /// `state_weights`, and `control_weight` lines, then `matrix NAME ROWS
    /// COLS` blocks (`A`, `B`) and a `vector x0 LEN` block, all row-major
    /// with space-separated full-precision values.
    pub fn write_text<W: io::Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(w, "horizon {}", self.horizon)?;
        writeln!(w, "state_dim {}", self.state_dim)?;
        writeln!(w, "control_dim {}", self.control_dim)?;
        writeln!(w, "u_max {}", self.u_max)?;
        let kind = match self.kind {
            RewardKind::L1 => "l1",
            RewardKind::L2 => "l2",
        };
        writeln!(w, "objective {kind}")?;
        let weights: Vec<String> = self.state_weights.iter().map(|v| v.to_string()).collect();
        writeln!(w, "state_weights {}", weights.join(" "))?;
        writeln!(w, "control_weight {}", self.control_weight)?;
        for (name, mat) in [("A", &self.a), ("B", &self.b)] {
            writeln!(w, "matrix {} {} {}", name, mat.nrows(), mat.ncols())?;
            for r in 0..mat.nrows() {
                let row: Vec<String> = (0..mat.ncols()).map(|c| mat[(r, c)].to_string()).collect();
                writeln!(w, "{}", row.join(" "))?;
            }
        }
        writeln!(w, "vector x0 {}", self.x0.len())?;
        let x0: Vec<String> = self.x0.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", x0.join(" "))?;
        Ok(())
    }
}

/// Solves the receding-horizon program at the current belief mean and
/// returns the optimized plan. Certainty equivalent: only the mean enters.
pub fn plan_mpc<M: Model + ?Sized>(
    model: &M,
    spec: &RewardSpec,
    mean: &DVector<f64>,
    config: &MpcConfig,
) -> Result<MpcPlan, MpcError> {
    let program = TrajectoryProgram::build(model, spec, mean, config)?;
    let tolerances = Tolerances { gap: config.tolerance, ..Tolerances::default() };
    match convex::solve(&program.to_inequality_form(), &tolerances) {
        Ok(solution) => Ok(program.plan_from(&solution)),
        Err(SolveError::IterationLimit(best)) => {
            Err(MpcError::NonConvergence(Box::new(program.plan_from(&best))))
        }
        Err(other) => Err(MpcError::Solver(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::DoubleIntegrator;
    use approx::assert_relative_eq;

    fn spec(kind: RewardKind) -> RewardSpec {
        RewardSpec::new(kind, -10.0, -3.0, -1.0).unwrap()
    }

    fn mean_1d(pos: f64, vel: f64, mass: f64) -> DVector<f64> {
        DVector::from_vec(vec![pos, vel, mass])
    }

    /// Exhaustive search over a control grid; the independent optimum bound.
    fn grid_best(program: &TrajectoryProgram, points: usize) -> f64 {
        let m = program.control_dim;
        assert_eq!(m, 1, "grid oracle only covers scalar controls");
        let h = program.horizon;
        let grid: Vec<f64> = (0..=points)
            .map(|i| -program.u_max + 2.0 * program.u_max * i as f64 / points as f64)
            .collect();
        let mut best = f64::NEG_INFINITY;
        let mut controls = vec![DVector::zeros(1); h];
        let mut index = vec![0usize; h];
        loop {
            for (k, &gi) in index.iter().enumerate() {
                controls[k][0] = grid[gi];
            }
            best = best.max(program.objective_of(&controls));
            let mut k = 0;
            loop {
                if k == h {
                    return best;
                }
                index[k] += 1;
                if index[k] <= points {
                    break;
                }
                index[k] = 0;
                k += 1;
            }
        }
    }

    /// Slack allowed on grid-vs-solver comparisons: one grid cell of motion
    /// along the steepest objective direction.
    fn grid_slack(program: &TrajectoryProgram, points: usize) -> f64 {
        let delta = 2.0 * program.u_max / points as f64;
        let hn = program.horizon * program.state_dim;
        let n_u = program.horizon * program.control_dim;
        let mut worst_column = 0.0_f64;
        for c in 0..n_u {
            let mut sens = program.control_weight;
            for r in 0..hn {
                let g = program.prediction_forced[(r, c)].abs();
                let w = program.state_weights[r % program.state_dim];
                sens += match program.kind {
                    RewardKind::L1 => w * g,
                    RewardKind::L2 => {
                        let reach = (&program.prediction_free * &program.x0)[r].abs()
                            + program.u_max * program.prediction_forced.row(r).amax()
                                * n_u as f64;
                        2.0 * w * g * reach
                    }
                };
            }
            if program.kind == RewardKind::L2 {
                sens += 2.0 * program.control_weight * program.u_max;
            }
            worst_column = worst_column.max(sens);
        }
        worst_column * delta * program.horizon as f64
    }

    #[test]
    fn at_goal_no_action_is_optimal() {
        let model = DoubleIntegrator::new(0.1, 300.0).unwrap();
        let config = MpcConfig::new(20, 300.0, 1e-6).unwrap();
        for kind in [RewardKind::L1, RewardKind::L2] {
            let plan = plan_mpc(&model, &spec(kind), &mean_1d(0.0, 0.0, 5.0), &config).unwrap();
            assert!(plan.first_action[0].abs() < 1e-5, "kind {kind:?}");
            assert!(plan.objective.abs() < 1e-4, "kind {kind:?}");
        }
    }

    #[test]
    fn horizon_two_matches_grid_oracle() {
        let model = DoubleIntegrator::new(0.1, 300.0).unwrap();
        let config = MpcConfig::new(2, 300.0, 1e-6).unwrap();
        let reward = spec(RewardKind::L1);
        let mean = mean_1d(4.0, -2.0, 1.0);
        let plan = plan_mpc(&model, &reward, &mean, &config).unwrap();
        let program = TrajectoryProgram::build(&model, &reward, &mean, &config).unwrap();
        let oracle = grid_best(&program, 400);
        let slack = grid_slack(&program, 400);
        assert!(
            plan.objective >= oracle - 1e-6 * (1.0 + oracle.abs()),
            "planned {} worse than grid {}",
            plan.objective,
            oracle
        );
        assert!(
            plan.objective <= oracle + slack,
            "planned {} beats grid {} by more than slack {}",
            plan.objective,
            oracle,
            slack
        );
    }

    #[test]
    fn distant_start_saturates_first_control() {
        // With dt = 0.1 the two-step position gain of one control unit is
        // outweighed by the velocity and effort penalties, so the optimum
        // from (100, 0) coasts; a coarser step makes the bound bind. The
        // grid oracle confirms both regimes.
        let fine = DoubleIntegrator::new(0.1, 300.0).unwrap();
        let config = MpcConfig::new(2, 300.0, 1e-6).unwrap();
        let reward = spec(RewardKind::L1);
        let mean = mean_1d(100.0, 0.0, 1.0);
        let plan = plan_mpc(&fine, &reward, &mean, &config).unwrap();
        let program = TrajectoryProgram::build(&fine, &reward, &mean, &config).unwrap();
        let oracle = grid_best(&program, 400);
        assert!(plan.objective >= oracle - 1e-6 * (1.0 + oracle.abs()));
        assert!(plan.first_action[0].abs() < 1e-4, "coasting is optimal at dt = 0.1");

        let coarse = DoubleIntegrator::new(1.0, 300.0).unwrap();
        let far = mean_1d(1000.0, 0.0, 1.0);
        let plan = plan_mpc(&coarse, &reward, &far, &config).unwrap();
        let program = TrajectoryProgram::build(&coarse, &reward, &far, &config).unwrap();
        let oracle = grid_best(&program, 400);
        assert!(plan.objective >= oracle - 1e-6 * (1.0 + oracle.abs()));
        assert!(
            (plan.first_action[0].abs() - 300.0).abs() < 1e-4,
            "expected saturated first control, got {}",
            plan.first_action[0]
        );
    }

    #[test]
    fn controls_respect_bounds_exactly() {
        let model = DoubleIntegrator::new(0.1, 300.0).unwrap();
        let config = MpcConfig::new(20, 300.0, 1e-6).unwrap();
        for kind in [RewardKind::L1, RewardKind::L2] {
            let plan =
                plan_mpc(&model, &spec(kind), &mean_1d(500.0, -40.0, 2.0), &config).unwrap();
            for u in &plan.controls {
                assert!(u[0].abs() <= 300.0, "kind {kind:?} violates the box");
            }
        }
    }

    #[test]
    fn epigraph_reformulation_is_exact() {
        // Evaluating any feasible control sequence with tight slacks must
        // reproduce the direct stage-reward sum.
        let model = DoubleIntegrator::new(0.1, 300.0).unwrap();
        let reward = spec(RewardKind::L1);
        let config = MpcConfig::new(3, 300.0, 1e-6).unwrap();
        let program =
            TrajectoryProgram::build(&model, &reward, &mean_1d(7.0, 1.0, 2.0), &config).unwrap();
        let ineq = program.to_inequality_form();

        let controls =
            vec![DVector::from_element(1, -250.0), DVector::from_element(1, 40.0), DVector::zeros(1)];
        let n_u = 3;
        let stacked = DVector::from_vec(vec![-250.0, 40.0, 0.0]);
        let predicted = &program.prediction_forced * &stacked + &program.prediction_free * &program.x0;
        let mut z = DVector::zeros(ineq.variables);
        z.rows_mut(0, n_u).copy_from(&stacked);
        for (slot, value) in predicted.iter().enumerate() {
            z[n_u + slot] = value.abs();
        }
        for (j, u) in stacked.iter().enumerate() {
            z[n_u + predicted.len() + j] = u.abs();
        }
        let lowered = -ineq.gradient.dot(&z);
        assert_relative_eq!(lowered, program.objective_of(&controls), epsilon = 1e-10);
    }

    #[test]
    fn open_loop_objective_decreases_with_horizon() {
        // Every added stage contributes a nonpositive reward, so the
        // optimal open-loop objective cannot improve as the horizon grows.
        let model = DoubleIntegrator::new(0.1, 300.0).unwrap();
        let reward = spec(RewardKind::L1);
        let mean = mean_1d(10.0, 0.0, 1.0);
        let mut previous = f64::INFINITY;
        for h in 1..=5 {
            let config = MpcConfig::new(h, 300.0, 1e-6).unwrap();
            let plan = plan_mpc(&model, &reward, &mean, &config).unwrap();
            let program = TrajectoryProgram::build(&model, &reward, &mean, &config).unwrap();
            let points = if h <= 3 { 200 } else { 40 };
            let oracle = grid_best(&program, points);
            let slack = grid_slack(&program, points);
            assert!(
                plan.objective >= oracle - 1e-6 * (1.0 + oracle.abs())
                    && plan.objective <= oracle + slack,
                "horizon {h}: planned {} vs grid {} (slack {slack})",
                plan.objective,
                oracle
            );
            assert!(
                plan.objective <= previous + 1e-6,
                "objective should not improve with horizon: {} after {}",
                plan.objective,
                previous
            );
            previous = plan.objective;
        }
    }

    #[test]
    fn program_dump_round_trips_key_fields() {
        let model = DoubleIntegrator::new(0.1, 300.0).unwrap();
        let config = MpcConfig::new(4, 300.0, 1e-6).unwrap();
        let program =
            TrajectoryProgram::build(&model, &spec(RewardKind::L1), &mean_1d(1.0, 2.0, 3.0), &config)
                .unwrap();
        let mut buf = Vec::new();
        program.write_text(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("horizon 4"));
        assert!(text.contains("objective l1"));
        assert!(text.contains("matrix A 2 2"));
        assert!(text.contains("vector x0 2"));
        let b_line = text.lines().skip_while(|l| !l.starts_with("matrix B")).nth(1).unwrap();
        let b00: f64 = b_line.split_whitespace().next().unwrap().parse().unwrap();
        assert_relative_eq!(b00, 0.1 * 0.1 / (2.0 * 3.0), epsilon = 1e-15);
    }

    #[test]
    fn rejects_degenerate_configuration() {
        assert!(MpcConfig::new(0, 300.0, 1e-6).is_err());
        assert!(MpcConfig::new(20, 0.0, 1e-6).is_err());
        assert!(MpcConfig::new(20, 300.0, 0.0).is_err());
    }
}
