//! Planar manipulation: a box pushed in the plane by a force and a torque.
//!
//! State `(p_x, p_y, theta, v_x, v_y, omega)`, parameters
//! `(m, J, mu_v, r_x, r_y)` where `mu_v` is linear friction and `(r_x, r_y)`
//! is the body-frame arm between the center of mass and the point where the
//! force acts, control `(F_x, F_y, T)`.
//!
//! Linear velocities are damped by `-mu_v v / m`; the torque produced by the
//! planar force enters through the heading-dependent arm terms
//! `(dt/J)(cos(theta) r_y + sin(theta) r_x)` and
//! `(dt/J)(cos(theta) r_x - sin(theta) r_y)`.
//!
//! The sensor measures position, heading, velocities, accelerations, and
//! angular acceleration of a point offset from the center of mass by the
//! body-frame vector `r_b` (zero by default, i.e. the sensor sits at the
//! center of mass).

use nalgebra::{DMatrix, DVector, Vector2};

use super::{psd_sqrt, Model, ModelError};

#[derive(Debug, Clone)]
pub struct PlanarManipulation {
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
    sensor_offset: Vector2<f64>,
}

const STATE_DIM: usize = 6;
const PARAM_DIM: usize = 5;
const OBS_DIM: usize = 9;
const POSITION: [usize; 3] = [0, 1, 2];
const VELOCITY: [usize; 3] = [3, 4, 5];
const ANGLES: [usize; 1] = [2];

impl PlanarManipulation {
    /// Builds the model with zero noise and the sensor at the center of mass.
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
            r: DMatrix::zeros(OBS_DIM, OBS_DIM),
            drift: DMatrix::zeros(PARAM_DIM, PARAM_DIM),
            q_factor: DMatrix::zeros(STATE_DIM, STATE_DIM),
            r_factor: DMatrix::zeros(OBS_DIM, OBS_DIM),
            drift_factor: DMatrix::zeros(PARAM_DIM, PARAM_DIM),
            floors: vec![1.0, 1.0, 1.0, f64::NEG_INFINITY, f64::NEG_INFINITY],
            initial_state: DVector::from_vec(vec![
                5.0,
                5.0,
                std::f64::consts::FRAC_PI_4,
                0.0,
                0.0,
                0.0,
            ]),
            sensor_offset: Vector2::zeros(),
        })
    }

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

    pub fn with_initial_state(mut self, x0: DVector<f64>) -> Self {
        assert_eq!(x0.len(), STATE_DIM);
        self.initial_state = x0;
        self
    }

    /// Body-frame offset of the sensor point from the center of mass.
    pub fn with_sensor_offset(mut self, offset: Vector2<f64>) -> Self {
        self.sensor_offset = offset;
        self
    }

    /// World-frame sensor arm at the given heading.
    fn world_offset(&self, theta: f64) -> (f64, f64) {
        let (s, c) = theta.sin_cos();
        (
            c * self.sensor_offset.x - s * self.sensor_offset.y,
            s * self.sensor_offset.x + c * self.sensor_offset.y,
        )
    }

    /// Heading-dependent torque arms multiplying `F_x` and `F_y`.
    fn force_arms(theta: f64, rx: f64, ry: f64) -> (f64, f64) {
        let (s, c) = theta.sin_cos();
        (c * ry + s * rx, c * rx - s * ry)
    }

    /// Angular acceleration of the box under the given control.
    fn angular_acceleration(&self, aug: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let theta = aug[2];
        let j = aug[7];
        let (g1, g2) = Self::force_arms(theta, aug[9], aug[10]);
        (g1 * u[0] + g2 * u[1] + u[2]) / j
    }
}

impl Model for PlanarManipulation {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn param_dim(&self) -> usize {
        PARAM_DIM
    }

    fn control_dim(&self) -> usize {
        3
    }

    fn obs_dim(&self) -> usize {
        OBS_DIM
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

    fn state_matrix(&self, params: &DVector<f64>) -> DMatrix<f64> {
        let m = params[0];
        let mu = params[2];
        let damp = 1.0 - mu * self.dt / m;
        let mut a = DMatrix::identity(STATE_DIM, STATE_DIM);
        for i in 0..3 {
            a[(i, i + 3)] = self.dt;
        }
        a[(3, 3)] = damp;
        a[(4, 4)] = damp;
        a
    }

    fn control_matrix(&self, state: &DVector<f64>, params: &DVector<f64>) -> DMatrix<f64> {
        let theta = state[2];
        let (m, j) = (params[0], params[1]);
        let (g1, g2) = Self::force_arms(theta, params[3], params[4]);
        let dt = self.dt;
        let mut b = DMatrix::zeros(STATE_DIM, 3);
        b[(3, 0)] = dt / m;
        b[(4, 1)] = dt / m;
        b[(5, 0)] = dt / j * g1;
        b[(5, 1)] = dt / j * g2;
        b[(5, 2)] = dt / j;
        b
    }

    fn observe_mean(&self, aug: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let (theta, vx, vy, omega) = (aug[2], aug[3], aug[4], aug[5]);
        let (m, mu) = (aug[6], aug[8]);
        let (wx, wy) = self.world_offset(theta);
        let alpha = self.angular_acceleration(aug, u);
        let ax = (u[0] - mu * vx) / m - alpha * wy - omega * omega * wx;
        let ay = (u[1] - mu * vy) / m + alpha * wx - omega * omega * wy;
        DVector::from_vec(vec![
            aug[0] + wx,
            aug[1] + wy,
            theta,
            vx - omega * wy,
            vy + omega * wx,
            omega,
            ax,
            ay,
            alpha,
        ])
    }

    fn dynamics_jacobian(&self, aug: &DVector<f64>, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        let dt = self.dt;
        let theta = aug[2];
        let (vx, vy) = (aug[3], aug[4]);
        let (m, j, mu) = (aug[6], aug[7], aug[8]);
        let (fx, fy, t) = (u[0], u[1], u[2]);
        let (g1, g2) = Self::force_arms(theta, aug[9], aug[10]);
        let (s, c) = theta.sin_cos();

        let n = STATE_DIM + PARAM_DIM;
        let mut f = DMatrix::identity(n, n);
        for i in 0..3 {
            f[(i, i + 3)] = dt;
        }
        let damp = 1.0 - mu * dt / m;
        f[(3, 3)] = damp;
        f[(4, 4)] = damp;
        // v_x row: mass, friction sensitivities.
        f[(3, 6)] = mu * dt / (m * m) * vx - dt / (m * m) * fx;
        f[(3, 8)] = -dt / m * vx;
        f[(4, 6)] = mu * dt / (m * m) * vy - dt / (m * m) * fy;
        f[(4, 8)] = -dt / m * vy;
        // omega row: heading and torque-arm sensitivities.
        f[(5, 2)] = dt / j * (g2 * fx - g1 * fy);
        f[(5, 7)] = -dt / (j * j) * (g1 * fx + g2 * fy + t);
        f[(5, 9)] = dt / j * (s * fx + c * fy);
        f[(5, 10)] = dt / j * (c * fx - s * fy);
        Some(f)
    }

    fn observation_jacobian(&self, aug: &DVector<f64>, u: &DVector<f64>) -> Option<DMatrix<f64>> {
        let theta = aug[2];
        let (vx, vy, omega) = (aug[3], aug[4], aug[5]);
        let (m, j, mu) = (aug[6], aug[7], aug[8]);
        let (fx, fy) = (u[0], u[1]);
        let (wx, wy) = self.world_offset(theta);
        let (g1, g2) = Self::force_arms(theta, aug[9], aug[10]);
        let (s, c) = theta.sin_cos();
        let alpha = self.angular_acceleration(aug, u);
        let alpha_theta = (g2 * fx - g1 * fy) / j;
        let alpha_j = -alpha / j;
        let alpha_rx = (s * fx + c * fy) / j;
        let alpha_ry = (c * fx - s * fy) / j;

        let mut h = DMatrix::zeros(OBS_DIM, STATE_DIM + PARAM_DIM);
        // Sensor position.
        h[(0, 0)] = 1.0;
        h[(0, 2)] = -wy;
        h[(1, 1)] = 1.0;
        h[(1, 2)] = wx;
        // Heading.
        h[(2, 2)] = 1.0;
        // Sensor velocity v + omega x w.
        h[(3, 2)] = -omega * wx;
        h[(3, 3)] = 1.0;
        h[(3, 5)] = -wy;
        h[(4, 2)] = -omega * wy;
        h[(4, 4)] = 1.0;
        h[(4, 5)] = wx;
        // Angular rate.
        h[(5, 5)] = 1.0;
        // Sensor acceleration.
        h[(6, 2)] = -alpha_theta * wy - alpha * wx + omega * omega * wy;
        h[(6, 3)] = -mu / m;
        h[(6, 5)] = -2.0 * omega * wx;
        h[(6, 6)] = -(fx - mu * vx) / (m * m);
        h[(6, 7)] = -alpha_j * wy;
        h[(6, 8)] = -vx / m;
        h[(6, 9)] = -alpha_rx * wy;
        h[(6, 10)] = -alpha_ry * wy;
        h[(7, 2)] = alpha_theta * wx - alpha * wy - omega * omega * wx;
        h[(7, 4)] = -mu / m;
        h[(7, 5)] = -2.0 * omega * wy;
        h[(7, 6)] = -(fy - mu * vy) / (m * m);
        h[(7, 7)] = alpha_j * wx;
        h[(7, 8)] = -vy / m;
        h[(7, 9)] = alpha_rx * wx;
        h[(7, 10)] = alpha_ry * wx;
        // Angular acceleration.
        h[(8, 2)] = alpha_theta;
        h[(8, 7)] = alpha_j;
        h[(8, 9)] = alpha_rx;
        h[(8, 10)] = alpha_ry;
        Some(h)
    }

    fn position_indices(&self) -> &[usize] {
        &POSITION
    }

    fn velocity_indices(&self) -> &[usize] {
        &VELOCITY
    }

    fn angle_indices(&self) -> &[usize] {
        &ANGLES
    }

    fn default_initial_state(&self) -> DVector<f64> {
        self.initial_state.clone()
    }
}
