//! Extended Kalman filter over the augmented state-parameter vector.
//!
//! `predict` pushes the belief through the mean dynamics and inflates the
//! covariance with the linearized transition; `correct` folds in an
//! observation. Both keep the covariance symmetric, floor its spectrum when
//! a violation beyond tolerance appears, and clamp parameter means to the
//! model floors.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::models::Model;

/// Jitter added to the residual covariance so zero measurement noise still
/// yields an invertible gain computation.
const RESIDUAL_JITTER: f64 = 1e-9;
/// Largest tolerated negative eigenvalue before the spectrum is floored.
const PSD_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum FilterError {
    #[error("filter diverged: non-finite {0}")]
    Diverged(&'static str),
    #[error("residual covariance is numerically singular")]
    SingularResidual,
}

/// Gaussian belief over the augmented state: mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        assert_eq!(cov.nrows(), mean.len());
        assert_eq!(cov.ncols(), mean.len());
        Self { mean, cov }
    }

    /// Mean of the physical state block.
    pub fn state_mean<M: Model + ?Sized>(&self, model: &M) -> DVector<f64> {
        self.mean.rows(0, model.state_dim()).into_owned()
    }

    /// Mean of the parameter block.
    pub fn param_mean<M: Model + ?Sized>(&self, model: &M) -> DVector<f64> {
        self.mean.rows(model.state_dim(), model.param_dim()).into_owned()
    }

    pub fn cov_trace(&self) -> f64 {
        self.cov.trace()
    }

    /// Max-norm of the covariance's asymmetry, for invariant checks.
    pub fn symmetry_defect(&self) -> f64 {
        (&self.cov - self.cov.transpose()).amax()
    }

    /// Bitwise equality of mean and covariance. Distinct noise draws never
    /// collide; this only identifies genuinely repeated beliefs, e.g. under
    /// deterministic transitions.
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.mean.len() == other.mean.len()
            && self
                .mean
                .iter()
                .zip(other.mean.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
            && self
                .cov
                .iter()
                .zip(other.cov.iter())
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Linearizations of the dynamics and observation maps at a point.
#[derive(Debug, Clone)]
pub struct Jacobians {
    pub dynamics: DMatrix<f64>,
    pub observation: DMatrix<f64>,
}

/// Central finite-difference Jacobian of `f` at `x`.
///
/// Step size per component is `max(1e-6, 1e-6 |x_i|)`.
pub fn finite_difference_jacobian<F>(f: F, x: &DVector<f64>, out_dim: usize) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let n = x.len();
    let mut jac = DMatrix::zeros(out_dim, n);
    let mut hi = x.clone();
    let mut lo = x.clone();
    for j in 0..n {
        let h = 1e-6_f64.max(1e-6 * x[j].abs());
        hi[j] = x[j] + h;
        lo[j] = x[j] - h;
        let df = (f(&hi) - f(&lo)) / (2.0 * h);
        jac.set_column(j, &df);
        hi[j] = x[j];
        lo[j] = x[j];
    }
    jac
}

fn dynamics_jacobian_or_fd<M: Model + ?Sized>(
    model: &M,
    mean: &DVector<f64>,
    u: &DVector<f64>,
) -> DMatrix<f64> {
    model.dynamics_jacobian(mean, u).unwrap_or_else(|| {
        finite_difference_jacobian(|s| model.dynamics_mean(s, u), mean, model.aug_dim())
    })
}

fn observation_jacobian_or_fd<M: Model + ?Sized>(
    model: &M,
    mean: &DVector<f64>,
    u: &DVector<f64>,
) -> DMatrix<f64> {
    model.observation_jacobian(mean, u).unwrap_or_else(|| {
        finite_difference_jacobian(|s| model.observe_mean(s, u), mean, model.obs_dim())
    })
}

/// Jacobians at the belief mean: analytic where the model provides them,
/// otherwise central finite differences.
pub fn jacobians<M: Model + ?Sized>(model: &M, mean: &DVector<f64>, u: &DVector<f64>) -> Jacobians {
    Jacobians {
        dynamics: dynamics_jacobian_or_fd(model, mean, u),
        observation: observation_jacobian_or_fd(model, mean, u),
    }
}

/// Symmetrizes in place and floors the spectrum at zero if an eigenvalue
/// falls below `-PSD_TOLERANCE`.
fn enforce_psd(cov: &mut DMatrix<f64>) {
    let sym = (&*cov + cov.transpose()) * 0.5;
    *cov = sym;
    // Cheap PSD probe: the shifted Cholesky succeeds iff lambda_min > -tol.
    let n = cov.nrows();
    let shifted = &*cov + DMatrix::identity(n, n) * PSD_TOLERANCE;
    if nalgebra::Cholesky::new(shifted).is_some() {
        return;
    }
    let eig = cov.clone().symmetric_eigen();
    let floored = eig.eigenvalues.map(|l| l.max(0.0));
    *cov = &eig.eigenvectors * DMatrix::from_diagonal(&floored) * eig.eigenvectors.transpose();
    let sym = (&*cov + cov.transpose()) * 0.5;
    *cov = sym;
}

fn check_finite(belief: &GaussianBelief, what: &'static str) -> Result<(), FilterError> {
    if belief.mean.iter().all(|v| v.is_finite()) && belief.cov.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(FilterError::Diverged(what))
    }
}

/// EKF time update. The control is assumed saturated by the caller.
pub fn predict<M: Model + ?Sized>(
    model: &M,
    belief: &GaussianBelief,
    u: &DVector<f64>,
) -> Result<GaussianBelief, FilterError> {
    let mean = model.dynamics_mean(&belief.mean, u);
    let f = dynamics_jacobian_or_fd(model, &belief.mean, u);
    let mut cov = &f * &belief.cov * f.transpose();
    let n = model.state_dim();
    for i in 0..n {
        for j in 0..n {
            cov[(i, j)] += model.process_noise()[(i, j)];
        }
    }
    for i in 0..model.param_dim() {
        for j in 0..model.param_dim() {
            cov[(n + i, n + j)] += model.param_drift()[(i, j)];
        }
    }
    enforce_psd(&mut cov);
    let out = GaussianBelief { mean, cov };
    check_finite(&out, "predicted belief")?;
    Ok(out)
}

/// EKF measurement update on a predicted belief.
pub fn correct<M: Model + ?Sized>(
    model: &M,
    predicted: &GaussianBelief,
    u: &DVector<f64>,
    observation: &DVector<f64>,
) -> Result<GaussianBelief, FilterError> {
    let h = observation_jacobian_or_fd(model, &predicted.mean, u);
    let residual = observation - model.observe_mean(&predicted.mean, u);

    let m = model.obs_dim();
    let h_sigma = &h * &predicted.cov;
    let mut s = &h_sigma * h.transpose() + model.measurement_noise();
    for i in 0..m {
        s[(i, i)] += RESIDUAL_JITTER;
    }
    if s.iter().any(|v| !v.is_finite()) {
        return Err(FilterError::Diverged("residual covariance"));
    }
    let chol = nalgebra::Cholesky::new(s).ok_or(FilterError::SingularResidual)?;
    // K = Sigma H^T S^{-1} computed as (S^{-1} (H Sigma))^T.
    let gain = chol.solve(&h_sigma).transpose();

    let mut mean = &predicted.mean + &gain * residual;
    let n = model.aug_dim();
    let mut cov = (DMatrix::identity(n, n) - &gain * &h) * &predicted.cov;
    enforce_psd(&mut cov);
    model.clamp_params(&mut mean);
    let out = GaussianBelief { mean, cov };
    check_finite(&out, "corrected belief")?;
    Ok(out)
}
