//! Linear-parametric dynamics and observation models.
//!
//! Every model describes a system of the form
//!
//! ```text
//! x_{k+1} = A(p) x_k + B(p, x_k) u_k + v_k        v_k ~ N(0, Q)
//! o_k     = h(x_k, u_k; p)        + w_k           w_k ~ N(0, R)
//! p_{k+1} = p_k                   + d_k           d_k ~ N(0, P_drift)
//! ```
//!
//! where the physical state `x` and the unknown parameters `p` are stacked
//! into one augmented vector `s = [x; p]` for joint estimation. The dynamics
//! are linear in `(x, u)` once the matrices are frozen; the parameter (and,
//! for the planar model, heading) dependence of the matrices is what makes
//! the joint estimation problem nonlinear.

mod double_integrator;
mod planar;

pub use double_integrator::DoubleIntegrator;
pub use planar::PlanarManipulation;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

/// Construction errors shared by the concrete models.
#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("time step must be positive, got {0}")]
    NonPositiveTimeStep(f64),
    #[error("control bound must be positive, got {0}")]
    NonPositiveControlBound(f64),
}

/// A linear-parametric model over the augmented state `[x; p]`.
///
/// Vector conventions: `state` vectors have `state_dim()` entries, `params`
/// have `param_dim()`, augmented vectors stack state over parameters, and
/// controls have `control_dim()` entries bounded componentwise by `u_max()`.
pub trait Model: Send + Sync {
    fn state_dim(&self) -> usize;
    fn param_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn dt(&self) -> f64;
    fn u_max(&self) -> f64;

    /// Per-parameter lower bounds; `f64::NEG_INFINITY` marks an unbounded entry.
    fn param_floors(&self) -> &[f64];

    /// Process noise covariance over the physical state block.
    fn process_noise(&self) -> &DMatrix<f64>;
    /// Measurement noise covariance.
    fn measurement_noise(&self) -> &DMatrix<f64>;
    /// Random-walk covariance of the parameters.
    fn param_drift(&self) -> &DMatrix<f64>;

    /// Square roots of the noise covariances, used for sampling.
    fn process_noise_factor(&self) -> &DMatrix<f64>;
    fn measurement_noise_factor(&self) -> &DMatrix<f64>;
    fn param_drift_factor(&self) -> &DMatrix<f64>;

    /// State transition matrix `A(p)`.
    fn state_matrix(&self, params: &DVector<f64>) -> DMatrix<f64>;
    /// Control matrix `B(p, x)`; the planar model reads the heading from `state`.
    fn control_matrix(&self, state: &DVector<f64>, params: &DVector<f64>) -> DMatrix<f64>;
    /// Observation mean `h(x, u; p)` evaluated on an augmented vector.
    fn observe_mean(&self, aug: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;

    /// Analytic Jacobian of the augmented dynamics, if the model provides one.
    fn dynamics_jacobian(&self, aug: &DVector<f64>, u: &DVector<f64>) -> Option<DMatrix<f64>>;
    /// Analytic Jacobian of the observation map, if the model provides one.
    fn observation_jacobian(&self, aug: &DVector<f64>, u: &DVector<f64>) -> Option<DMatrix<f64>>;

    /// Indices of position-like components within the state block.
    fn position_indices(&self) -> &[usize];
    /// Indices of velocity-like components within the state block.
    fn velocity_indices(&self) -> &[usize];
    /// Position indices that are angles and wrap to `(-pi, pi]` for rewards.
    fn angle_indices(&self) -> &[usize];

    /// Default initial physical state used by the experiment harness.
    fn default_initial_state(&self) -> DVector<f64>;

    fn aug_dim(&self) -> usize {
        self.state_dim() + self.param_dim()
    }

    /// Splits an augmented vector into owned state and parameter blocks.
    fn split(&self, aug: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = self.state_dim();
        (
            DVector::from(aug.rows(0, n).into_owned()),
            DVector::from(aug.rows(n, self.param_dim()).into_owned()),
        )
    }

    /// Componentwise clip of a control to `[-u_max, u_max]`.
    fn saturate(&self, u: &DVector<f64>) -> DVector<f64> {
        u.map(|v| v.clamp(-self.u_max(), self.u_max()))
    }

    /// Clamps the parameter block of an augmented vector to its floors.
    fn clamp_params(&self, aug: &mut DVector<f64>) {
        let n = self.state_dim();
        for (i, &floor) in self.param_floors().iter().enumerate() {
            if aug[n + i] < floor {
                aug[n + i] = floor;
            }
        }
    }

    /// Mean of the augmented dynamics: `[A(p) x + B(p, x) u; p]`.
    fn dynamics_mean(&self, aug: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (x, p) = self.split(aug);
        let next = self.state_matrix(&p) * &x + self.control_matrix(&x, &p) * u;
        let mut out = aug.clone();
        out.rows_mut(0, self.state_dim()).copy_from(&next);
        out
    }

    /// Samples one true transition: saturates `u`, applies the mean dynamics,
    /// adds process and drift noise, and enforces the parameter floors.
    fn step_truth<R: Rng + ?Sized>(
        &self,
        truth: &DVector<f64>,
        u: &DVector<f64>,
        rng: &mut R,
    ) -> DVector<f64> {
        let u = self.saturate(u);
        let mut next = self.dynamics_mean(truth, &u);
        let n = self.state_dim();
        let v = sample_noise(self.process_noise_factor(), rng);
        for i in 0..n {
            next[i] += v[i];
        }
        let d = sample_noise(self.param_drift_factor(), rng);
        for i in 0..self.param_dim() {
            next[n + i] += d[i];
        }
        self.clamp_params(&mut next);
        next
    }

    /// Samples an observation `h(x, u; p) + w` at the given augmented state.
    fn observe<R: Rng + ?Sized>(
        &self,
        aug: &DVector<f64>,
        u: &DVector<f64>,
        rng: &mut R,
    ) -> DVector<f64> {
        let mut o = self.observe_mean(aug, u);
        let w = sample_noise(self.measurement_noise_factor(), rng);
        o += &w;
        o
    }

    /// Proportional goal-seeking action: each control channel pushes against
    /// the matching component of the state error (position and velocity,
    /// since the goal state is at rest), clipped to the control bounds.
    fn proportional_action(&self, aug: &DVector<f64>, gain: f64) -> DVector<f64> {
        let bound = self.u_max();
        let pos = self.position_indices();
        let vel = self.velocity_indices();
        DVector::from_fn(self.control_dim(), |i, _| {
            (-gain * (aug[pos[i]] + aug[vel[i]])).clamp(-bound, bound)
        })
    }
}

/// Draws `factor * z` with `z` standard normal.
fn sample_noise<R: Rng + ?Sized>(factor: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
    let z = DVector::from_fn(factor.ncols(), |_, _| rng.sample(StandardNormal));
    factor * z
}

/// Symmetric square root of a PSD matrix, flooring tiny negative eigenvalues.
pub(crate) fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.iter().all(|&v| v == 0.0) {
        return DMatrix::zeros(m.nrows(), m.ncols());
    }
    let eig = m.clone().symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals) * eig.eigenvectors.transpose()
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let w = theta.rem_euclid(tau);
    if w > std::f64::consts::PI {
        w - tau
    } else {
        w
    }
}
