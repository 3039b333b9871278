//! 1D double integrator: force applied to a point mass of unknown mass.
//!
//! State `(position, velocity)`, parameter `(m)`, control a scalar force.
//! Discretized with time step `dt`:
//!
//! ```text
//! A = [1 dt; 0 1]     B(m) = [dt^2 / (2 m); dt / m]
//! ```
//!
//! The full state is observed directly (`C = I`, `D = 0`).

use nalgebra::{DMatrix, DVector};

use super::{psd_sqrt, Model, ModelError};

#[derive(Debug, Clone)]
pub struct DoubleIntegrator {
    dt: f64,
    u_max: f64,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
    drift: DMatrix<f64>,
    q_factor: DMatrix<f64>,
    r_factor: DMatrix<f64>,
    drift_factor: DMatrix<f64>,
    floors: Vec<f64>,
    initial_state: DVector<f64>,
}

const STATE_DIM: usize = 2;
const PARAM_DIM: usize = 1;
const POSITION: [usize; 1] = [0];
const VELOCITY: [usize; 1] = [1];

impl DoubleIntegrator {
    /// Builds the model with zero process, measurement, and drift noise.
    pub fn new(dt: f64, u_max: f64) -> Result<Self, ModelError> {
        if dt <= 0.0 {
            return Err(ModelError::NonPositiveTimeStep(dt));
        }
        if u_max <= 0.0 {
            return Err(ModelError::NonPositiveControlBound(u_max));
        }
        Ok(Self {
            dt,
            u_max,
            q: DMatrix::zeros(STATE_DIM, STATE_DIM),
            r: DMatrix::zeros(STATE_DIM, STATE_DIM),
            drift: DMatrix::zeros(PARAM_DIM, PARAM_DIM),
            q_factor: DMatrix::zeros(STATE_DIM, STATE_DIM),
            r_factor: DMatrix::zeros(STATE_DIM, STATE_DIM),
            drift_factor: DMatrix::zeros(PARAM_DIM, PARAM_DIM),
            floors: vec![1.0],
            initial_state: DVector::from_vec(vec![10.0, 0.0]),
        })
    }

    /// Sets `Q = sigma^2 I` over the physical state block.
    pub fn with_process_noise_sigma(mut self, sigma: f64) -> Self {
        self.q = DMatrix::identity(STATE_DIM, STATE_DIM) * sigma * sigma;
        self.q_factor = DMatrix::identity(STATE_DIM, STATE_DIM) * sigma.abs();
        self
    }

    pub fn with_process_noise(mut self, q: DMatrix<f64>) -> Self {
        self.q_factor = psd_sqrt(&q);
        self.q = q;
        self
    }

    pub fn with_measurement_noise(mut self, r: DMatrix<f64>) -> Self {
        self.r_factor = psd_sqrt(&r);
        self.r = r;
        self
    }

    pub fn with_param_drift_sigma(mut self, sigma: f64) -> Self {
        self.drift = DMatrix::identity(PARAM_DIM, PARAM_DIM) * sigma * sigma;
        self.drift_factor = DMatrix::identity(PARAM_DIM, PARAM_DIM) * sigma.abs();
        self
    }

    pub fn with_param_floor(mut self, floor: f64) -> Self {
        self.floors = vec![floor];
        self
    }

    pub fn with_initial_state(mut self, x0: DVector<f64>) -> Self {
        assert_eq!(x0.len(), STATE_DIM);
        self.initial_state = x0;
        self
    }
}

impl Model for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn param_dim(&self) -> usize {
        PARAM_DIM
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn obs_dim(&self) -> usize {
        STATE_DIM
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn u_max(&self) -> f64 {
        self.u_max
    }

    fn param_floors(&self) -> &[f64] {
        &self.floors
    }

    fn process_noise(&self) -> &DMatrix<f64> {
        &self.q
    }

    fn measurement_noise(&self) -> &DMatrix<f64> {
        &self.r
    }

    fn param_drift(&self) -> &DMatrix<f64> {
        &self.drift
    }

    fn process_noise_factor(&self) -> &DMatrix<f64> {
        &self.q_factor
    }

    fn measurement_noise_factor(&self) -> &DMatrix<f64> {
        &self.r_factor
    }

    fn param_drift_factor(&self) -> &DMatrix<f64> {
        &self.drift_factor
    }

    fn state_matrix(&self, _params: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[1.0, self.dt, 0.0, 1.0])
    }

    fn control_matrix(&self, _state: &DVector<f64>, params: &DVector<f64>) -> DMatrix<f64> {
        let m = params[0];
        DMatrix::from_row_slice(2, 1, &[self.dt * self.dt / (2.0 * m), self.dt / m])
    }

    fn observe_mean(&self, aug: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
        aug.rows(0, STATE_DIM).into_owned()
    }

    fn dynamics_jacobian(&self, aug: &DVector<f64>, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        let m = aug[2];
        let f = u[0];
        let dt = self.dt;
        #[rustfmt::skip]
        let jac = DMatrix::from_row_slice(3, 3, &[
            1.0, dt,  -dt * dt * f / (2.0 * m * m),
            0.0, 1.0, -dt * f / (m * m),
            0.0, 0.0, 1.0,
        ]);
        Some(jac)
    }

    fn observation_jacobian(&self, _aug: &DVector<f64>, _u: &DVector<f64>) -> Option<DMatrix<f64>> {
        let mut h = DMatrix::zeros(STATE_DIM, STATE_DIM + PARAM_DIM);
        h[(0, 0)] = 1.0;
        h[(1, 1)] = 1.0;
        Some(h)
    }

    fn position_indices(&self) -> &[usize] {
        &POSITION
    }

    fn velocity_indices(&self) -> &[usize] {
        &VELOCITY
    }

    fn angle_indices(&self) -> &[usize] {
        &[]
    }

    fn default_initial_state(&self) -> DVector<f64> {
        self.initial_state.clone()
    }
}
