//! Primal-dual interior-point solver for inequality-constrained programs
//!
//! ```text
//! minimize    1/2 x' P x + q' x
//! subject to  A x <= b
//! ```
//!
//! with `P` positive semidefinite (absent for linear programs). The solver is
//! a Mehrotra predictor-corrector method on the perturbed KKT system, with
//! convergence certified by the complementarity gap `s' z` together with the
//! primal and dual residual norms.
//!
//! Constraint rows are stored sparsely. When the trailing `diagonal_tail`
//! variables are plain epigraph slacks (each row touches at most one of them
//! and the Hessian does not), the normal-equation matrix is block
//! `[M  B; B' D]` with `D` diagonal, and each Newton solve reduces to a
//! Cholesky factorization on the leading block via the Schur complement.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("iteration limit reached before convergence")]
    IterationLimit(Box<Solution>),
    #[error("normal-equation factorization failed")]
    Factorization,
    #[error("malformed program: {0}")]
    Malformed(String),
}

/// Termination thresholds. `feasibility` is an absolute bound on the primal
/// residual and a `(1 + |q|_inf)`-relative bound on the dual residual; `gap`
/// bounds the complementarity gap relative to `1 + |objective|`.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    pub gap: f64,
    pub feasibility: f64,
    pub max_iterations: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { gap: 1e-6, feasibility: 1e-8, max_iterations: 100 }
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub duality_gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
}

/// An inequality-form program with sparsely stored constraint rows.
#[derive(Debug, Clone)]
pub struct InequalityProgram {
    pub variables: usize,
    /// Quadratic term; `None` for a linear program.
    pub hessian: Option<DMatrix<f64>>,
    pub gradient: DVector<f64>,
    /// Constraint rows as `(column, coefficient)` pairs.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub rhs: DVector<f64>,
    /// Number of trailing slack variables eligible for Schur elimination.
    pub diagonal_tail: usize,
}

impl InequalityProgram {
    /// Dense-constraint constructor, mainly for tests and small programs.
    pub fn from_dense(
        hessian: Option<DMatrix<f64>>,
        gradient: DVector<f64>,
        constraints: &DMatrix<f64>,
        rhs: DVector<f64>,
    ) -> Self {
        let rows = (0..constraints.nrows())
            .map(|r| {
                (0..constraints.ncols())
                    .filter(|&c| constraints[(r, c)] != 0.0)
                    .map(|c| (c, constraints[(r, c)]))
                    .collect()
            })
            .collect();
        Self {
            variables: gradient.len(),
            hessian,
            gradient,
            rows,
            rhs,
            diagonal_tail: 0,
        }
    }

    fn validate(&self) -> Result<(), SolveError> {
        let n = self.variables;
        if self.gradient.len() != n {
            return Err(SolveError::Malformed("gradient length mismatch".into()));
        }
        if self.rhs.len() != self.rows.len() {
            return Err(SolveError::Malformed("rhs length mismatch".into()));
        }
        if let Some(p) = &self.hessian {
            if p.nrows() != n || p.ncols() != n {
                return Err(SolveError::Malformed("hessian shape mismatch".into()));
            }
        }
        let head = n - self.diagonal_tail;
        for row in &self.rows {
            if row.iter().any(|&(c, _)| c >= n) {
                return Err(SolveError::Malformed("column index out of range".into()));
            }
            if self.diagonal_tail > 0 && row.iter().filter(|&&(c, _)| c >= head).count() > 1 {
                return Err(SolveError::Malformed(
                    "a row touches more than one tail slack".into(),
                ));
            }
        }
        if self.diagonal_tail > 0 {
            if let Some(p) = &self.hessian {
                for i in 0..n {
                    for j in head..n {
                        if p[(i, j)] != 0.0 || p[(j, i)] != 0.0 {
                            return Err(SolveError::Malformed(
                                "hessian touches tail slacks".into(),
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn hessian_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.hessian {
            Some(p) => p * x,
            None => DVector::zeros(self.variables),
        }
    }

    fn constraints_mul(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.rows.len(), |r, _| {
            self.rows[r].iter().map(|&(c, a)| a * x[c]).sum()
        })
    }

    fn constraints_tr_mul(&self, y: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.variables);
        for (r, row) in self.rows.iter().enumerate() {
            let yr = y[r];
            for &(c, a) in row {
                out[c] += a * yr;
            }
        }
        out
    }

    fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&self.hessian_mul(x)) + self.gradient.dot(x)
    }
}

enum Factor {
    Dense(Cholesky<f64, Dyn>),
    Schur {
        chol: Cholesky<f64, Dyn>,
        cross: DMatrix<f64>,
        tail: DVector<f64>,
        head: usize,
    },
}

impl Factor {
    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        match self {
            Factor::Dense(chol) => chol.solve(rhs),
            Factor::Schur { chol, cross, tail, head } => {
                let rh = rhs.rows(0, *head).into_owned();
                let rt = rhs.rows(*head, tail.len()).into_owned();
                let rt_scaled = rt.component_div(tail);
                let xh = chol.solve(&(rh - cross * &rt_scaled));
                let xt = (rt - cross.transpose() * &xh).component_div(tail);
                let mut out = DVector::zeros(rhs.len());
                out.rows_mut(0, *head).copy_from(&xh);
                out.rows_mut(*head, tail.len()).copy_from(&xt);
                out
            }
        }
    }
}

fn cholesky_with_ridge(mut m: DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, SolveError> {
    let n = m.nrows();
    let scale = 1.0 + m.diagonal().amax();
    let mut ridge = 1e-12 * scale;
    for attempt in 0..4 {
        if attempt > 0 {
            for i in 0..n {
                m[(i, i)] += ridge;
            }
            ridge *= 1e3;
        }
        if let Some(chol) = Cholesky::new(m.clone()) {
            return Ok(chol);
        }
    }
    Err(SolveError::Factorization)
}

fn factorize(prog: &InequalityProgram, d: &DVector<f64>) -> Result<Factor, SolveError> {
    let n = prog.variables;
    let tail = prog.diagonal_tail;
    let head = n - tail;
    if tail == 0 {
        let mut m = match &prog.hessian {
            Some(p) => p.clone(),
            None => DMatrix::zeros(n, n),
        };
        for (r, row) in prog.rows.iter().enumerate() {
            let dr = d[r];
            for &(i, ai) in row {
                for &(j, aj) in row {
                    if j <= i {
                        m[(i, j)] += dr * ai * aj;
                    }
                }
            }
        }
        for i in 0..n {
            for j in 0..i {
                m[(j, i)] = m[(i, j)];
            }
        }
        return Ok(Factor::Dense(cholesky_with_ridge(m)?));
    }

    let mut muu = match &prog.hessian {
        Some(p) => p.view((0, 0), (head, head)).into_owned(),
        None => DMatrix::zeros(head, head),
    };
    let mut cross = DMatrix::zeros(head, tail);
    let mut tail_diag = DVector::zeros(tail);
    for (r, row) in prog.rows.iter().enumerate() {
        let dr = d[r];
        let tail_entry = row.iter().find(|&&(c, _)| c >= head).copied();
        for &(i, ai) in row.iter().filter(|&&(c, _)| c < head) {
            for &(j, aj) in row.iter().filter(|&&(c, _)| c < head) {
                if j <= i {
                    muu[(i, j)] += dr * ai * aj;
                }
            }
            if let Some((t, at)) = tail_entry {
                cross[(i, t - head)] += dr * ai * at;
            }
        }
        if let Some((t, at)) = tail_entry {
            tail_diag[t - head] += dr * at * at;
        }
    }
    for i in 0..head {
        for j in 0..i {
            muu[(j, i)] = muu[(i, j)];
        }
    }
    if tail_diag.iter().any(|&v: &f64| v <= 0.0) {
        return Err(SolveError::Malformed("tail slack without constraints".into()));
    }
    // Schur complement of the diagonal tail block.
    let inv_sqrt = tail_diag.map(|v| 1.0 / v.sqrt());
    let mut scaled = cross.clone();
    for (c, s) in inv_sqrt.iter().enumerate() {
        scaled.column_mut(c).scale_mut(*s);
    }
    let schur = muu - &scaled * scaled.transpose();
    Ok(Factor::Schur {
        chol: cholesky_with_ridge(schur)?,
        cross,
        tail: tail_diag,
        head,
    })
}

/// Largest step in `[0, 1]` keeping `v + alpha dv` strictly positive.
fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut alpha = 1.0_f64;
    for i in 0..v.len() {
        if dv[i] < 0.0 {
            alpha = alpha.min(-v[i] / dv[i]);
        }
    }
    alpha
}

/// Solves the program to the given tolerances.
pub fn solve(prog: &InequalityProgram, tol: &Tolerances) -> Result<Solution, SolveError> {
    prog.validate()?;
    let n = prog.variables;
    let m = prog.rows.len();
    if m == 0 {
        // Unconstrained: stationary point of the quadratic, if it has one.
        let p = prog.hessian.as_ref().ok_or_else(|| {
            SolveError::Malformed("unconstrained linear program is unbounded".into())
        })?;
        let x = cholesky_with_ridge(p.clone())?.solve(&(-&prog.gradient));
        let objective = prog.objective(&x);
        return Ok(Solution {
            x,
            objective,
            duality_gap: 0.0,
            primal_residual: 0.0,
            dual_residual: 0.0,
            iterations: 0,
        });
    }

    let mut x = DVector::zeros(n);
    let mut s = DVector::from_fn(m, |i, _| prog.rhs[i].abs().max(1.0));
    let mut z = DVector::from_element(m, 1.0);
    let dual_scale = 1.0 + prog.gradient.amax();
    let mut best: Option<(f64, Solution)> = None;

    for iteration in 0..tol.max_iterations {
        let px = prog.hessian_mul(&x);
        let r_dual = &px + &prog.gradient + prog.constraints_tr_mul(&z);
        let r_primal = prog.constraints_mul(&x) + &s - &prog.rhs;
        let gap = s.dot(&z);
        let objective = 0.5 * x.dot(&px) + prog.gradient.dot(&x);

        let pr = r_primal.amax();
        let dr = r_dual.amax();
        let gap_rel = gap / (1.0 + objective.abs());
        let score = pr.max(dr / dual_scale).max(gap_rel);
        let snapshot = Solution {
            x: x.clone(),
            objective,
            duality_gap: gap,
            primal_residual: pr,
            dual_residual: dr,
            iterations: iteration,
        };
        if best.as_ref().is_none_or(|(s0, _)| score < *s0) {
            best = Some((score, snapshot.clone()));
        }
        if pr <= tol.feasibility && dr <= tol.feasibility * dual_scale && gap_rel <= tol.gap {
            return Ok(snapshot);
        }

        let mu = gap / m as f64;
        let d = z.component_div(&s);
        let factor = factorize(prog, &d)?;

        // Predictor: pure Newton step on the complementarity target 0.
        let rc_aff = s.component_mul(&z);
        let w = DVector::from_fn(m, |i, _| rc_aff[i] / s[i] - d[i] * r_primal[i]);
        let dx_aff = factor.solve(&(-&r_dual + prog.constraints_tr_mul(&w)));
        let ds_aff = -&r_primal - prog.constraints_mul(&dx_aff);
        let dz_aff = DVector::from_fn(m, |i, _| (-rc_aff[i] - z[i] * ds_aff[i]) / s[i]);
        let alpha_p_aff = max_step(&s, &ds_aff);
        let alpha_d_aff = max_step(&z, &dz_aff);
        let mu_aff = (0..m)
            .map(|i| (s[i] + alpha_p_aff * ds_aff[i]) * (z[i] + alpha_d_aff * dz_aff[i]))
            .sum::<f64>()
            / m as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        // Corrector with centering toward sigma * mu.
        let rc = DVector::from_fn(m, |i, _| s[i] * z[i] + ds_aff[i] * dz_aff[i] - sigma * mu);
        let w = DVector::from_fn(m, |i, _| rc[i] / s[i] - d[i] * r_primal[i]);
        let dx = factor.solve(&(-&r_dual + prog.constraints_tr_mul(&w)));
        let ds = -&r_primal - prog.constraints_mul(&dx);
        let dz = DVector::from_fn(m, |i, _| (-rc[i] - z[i] * ds[i]) / s[i]);

        let eta = 0.995;
        let alpha_p = (eta * max_step(&s, &ds)).min(1.0);
        let alpha_d = (eta * max_step(&z, &dz)).min(1.0);
        x += alpha_p * dx;
        s += alpha_p * ds;
        z += alpha_d * dz;
    }

    Err(SolveError::IterationLimit(Box::new(best.expect("at least one iterate").1)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn box_rows(n: usize) -> (Vec<Vec<(usize, f64)>>, Vec<f64>) {
        let mut rows = Vec::with_capacity(2 * n);
        let mut rhs = Vec::with_capacity(2 * n);
        for i in 0..n {
            rows.push(vec![(i, 1.0)]);
            rhs.push(1.0);
            rows.push(vec![(i, -1.0)]);
            rhs.push(1.0);
        }
        (rows, rhs)
    }

    #[test]
    fn zero_objective_returns_feasible_point() {
        let (rows, rhs) = box_rows(3);
        let prog = InequalityProgram {
            variables: 3,
            hessian: None,
            gradient: DVector::zeros(3),
            rows,
            rhs: DVector::from_vec(rhs),
            diagonal_tail: 0,
        };
        let sol = solve(&prog, &Tolerances::default()).unwrap();
        assert!(sol.objective.abs() <= 1e-9);
        assert!(sol.x.amax() <= 1.0 + 1e-8);
    }

    #[test]
    fn scalar_absolute_value_epigraph() {
        // minimize t subject to u <= t, -u <= t, |u| <= 5: optimum (0, 0).
        let prog = InequalityProgram {
            variables: 2,
            hessian: None,
            gradient: DVector::from_vec(vec![0.0, 1.0]),
            rows: vec![
                vec![(0, 1.0), (1, -1.0)],
                vec![(0, -1.0), (1, -1.0)],
                vec![(0, 1.0)],
                vec![(0, -1.0)],
            ],
            rhs: DVector::from_vec(vec![0.0, 0.0, 5.0, 5.0]),
            diagonal_tail: 1,
        };
        let sol = solve(&prog, &Tolerances::default()).unwrap();
        assert!(sol.x[0].abs() <= 1e-6);
        assert!(sol.x[1].abs() <= 1e-6);
    }

    #[test]
    fn structured_and_dense_paths_agree() {
        let gradient = DVector::from_vec(vec![2.0, -1.0, 1.0, 1.0]);
        let rows = vec![
            vec![(0, 1.0), (1, 0.5), (2, -1.0)],
            vec![(0, -1.0), (1, -0.5), (2, -1.0)],
            vec![(1, 1.0), (3, -1.0)],
            vec![(1, -1.0), (3, -1.0)],
            vec![(0, 1.0)],
            vec![(0, -1.0)],
            vec![(1, 1.0)],
            vec![(1, -1.0)],
        ];
        let rhs = DVector::from_vec(vec![1.0, -1.0, 0.0, 0.0, 4.0, 4.0, 4.0, 4.0]);
        let structured = InequalityProgram {
            variables: 4,
            hessian: None,
            gradient: gradient.clone(),
            rows: rows.clone(),
            rhs: rhs.clone(),
            diagonal_tail: 2,
        };
        let dense = InequalityProgram { diagonal_tail: 0, ..structured.clone() };
        let a = solve(&structured, &Tolerances::default()).unwrap();
        let b = solve(&dense, &Tolerances::default()).unwrap();
        assert_relative_eq!(a.objective, b.objective, epsilon = 1e-6);
        assert_relative_eq!(a.x[0], b.x[0], epsilon = 1e-5);
    }

    #[test]
    fn rejects_row_with_two_tail_slacks() {
        let prog = InequalityProgram {
            variables: 3,
            hessian: None,
            gradient: DVector::from_vec(vec![0.0, 1.0, 1.0]),
            rows: vec![vec![(1, 1.0), (2, 1.0)]],
            rhs: DVector::from_vec(vec![0.0]),
            diagonal_tail: 2,
        };
        assert!(matches!(solve(&prog, &Tolerances::default()), Err(SolveError::Malformed(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        // Separable box QPs have the closed-form solution clamp(-q/p, bounds).
        #[test]
        fn diagonal_box_qp_matches_clamp_formula(
            p in proptest::collection::vec(0.1f64..10.0, 1..6),
            q in proptest::collection::vec(-5.0f64..5.0, 6),
            bound in 0.2f64..3.0,
        ) {
            let n = p.len();
            let q = &q[..n];
            let hessian = DMatrix::from_diagonal(&DVector::from_vec(p.clone()));
            let (rows, rhs) = {
                let mut rows = Vec::new();
                let mut rhs = Vec::new();
                for i in 0..n {
                    rows.push(vec![(i, 1.0)]);
                    rhs.push(bound);
                    rows.push(vec![(i, -1.0)]);
                    rhs.push(bound);
                }
                (rows, DVector::from_vec(rhs))
            };
            let prog = InequalityProgram {
                variables: n,
                hessian: Some(hessian),
                gradient: DVector::from_vec(q.to_vec()),
                rows,
                rhs,
                diagonal_tail: 0,
            };
            let sol = solve(&prog, &Tolerances::default()).unwrap();
            let objective = |x: &DVector<f64>| {
                (0..n).map(|i| 0.5 * p[i] * x[i] * x[i] + q[i] * x[i]).sum::<f64>()
            };
            let optimum = DVector::from_fn(n, |i, _| (-q[i] / p[i]).clamp(-bound, bound));
            let best = objective(&optimum);
            // The contract certifies the objective, not the coordinates:
            // within the relative gap tolerance of the closed-form optimum.
            prop_assert!(
                sol.objective <= best + 1e-6 * (1.0 + best.abs()) + 1e-9,
                "objective {} vs closed form {}", sol.objective, best
            );
            prop_assert!(sol.objective >= best - 1e-6 * (1.0 + best.abs()) - 1e-9);
            for i in 0..n {
                prop_assert!(sol.x[i].abs() <= bound + 1e-7);
                // Coordinate error bounded through the curvature.
                let x_tol = (2.0 * (1e-6 * (1.0 + best.abs()) + 1e-9) / p[i]).sqrt() + 1e-4;
                prop_assert!(
                    (sol.x[i] - optimum[i]).abs() <= x_tol,
                    "x[{}] = {} expected {} within {}", i, sol.x[i], optimum[i], x_tol
                );
            }
        }
    }
}
