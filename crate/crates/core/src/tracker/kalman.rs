//! Constant-velocity Kalman filter over the box state (cx, cy, s, r, vcx,
//! vcy, vs): center, area, aspect ratio (w/h, constant), and the velocities
//! of center and area. Noise magnitudes are specified relative to the box
//! dimensions so the same defaults work across object scales.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::BBox;

pub const STATE_DIM: usize = 7;
pub const MEAS_DIM: usize = 4;

pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateCov = SMatrix<f64, STATE_DIM, STATE_DIM>;
type MeasVector = SVector<f64, MEAS_DIM>;
type MeasCov = SMatrix<f64, MEAS_DIM, MEAS_DIM>;
type MeasMatrix = SMatrix<f64, MEAS_DIM, STATE_DIM>;

/// Diagonal jitter added to the innovation covariance before inversion.
const INNOVATION_JITTER: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum KalmanError {
    #[error("innovation covariance is singular")]
    SingularInnovation,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanConfig {
    /// Measurement noise std of the center, as a fraction of box w/h.
    pub meas_pos_rel: f64,
    /// Measurement noise std of the area, as a fraction of the area.
    pub meas_area_rel: f64,
    /// Measurement noise std of the aspect ratio (absolute).
    pub meas_ratio: f64,
    /// Initial position/area uncertainty, relative to box dims.
    pub init_pos_rel: f64,
    pub init_area_rel: f64,
    pub init_ratio: f64,
    /// Initial velocity uncertainty per second, relative to box dims.
    pub init_vel_rel: f64,
    pub init_area_vel_rel: f64,
    /// Process noise std per second, relative to box dims.
    pub proc_pos_rel: f64,
    pub proc_area_rel: f64,
    pub proc_ratio: f64,
    pub proc_vel_rel: f64,
    pub proc_area_vel_rel: f64,
    /// Floor applied to the area state after prediction and update.
    pub s_min: f64,
    pub r_min: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            meas_pos_rel: 0.05,
            meas_area_rel: 0.05,
            meas_ratio: 0.05,
            init_pos_rel: 0.1,
            init_area_rel: 0.2,
            init_ratio: 0.1,
            init_vel_rel: 2.0,
            init_area_vel_rel: 2.0,
            proc_pos_rel: 0.02,
            proc_area_rel: 0.02,
            proc_ratio: 0.002,
            proc_vel_rel: 0.15,
            proc_area_vel_rel: 0.15,
            s_min: 1.0,
            r_min: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    pub mean: StateVector,
    pub cov: StateCov,
}

impl KalmanState {
    pub fn cx(&self) -> f64 {
        self.mean[0]
    }

    pub fn cy(&self) -> f64 {
        self.mean[1]
    }

    pub fn area(&self) -> f64 {
        self.mean[2]
    }

    pub fn ratio(&self) -> f64 {
        self.mean[3]
    }

    /// Box reconstructed from the state: w = sqrt(s*r), h = sqrt(s/r).
    pub fn bbox(&self) -> BBox {
        let s = self.mean[2].max(1e-9);
        let r = self.mean[3].max(1e-9);
        let w = (s * r).sqrt();
        let h = (s / r).sqrt();
        BBox::new(self.mean[0] - w / 2.0, self.mean[1] - h / 2.0, w, h)
    }
}

fn measurement(bbox: &BBox) -> MeasVector {
    let (cx, cy) = bbox.center();
    MeasVector::new(cx, cy, bbox.area(), bbox.aspect())
}

/// The state's current box scale, used to size relative noise terms.
fn state_dims(mean: &StateVector) -> (f64, f64, f64) {
    let s = mean[2].max(1.0);
    let r = mean[3].max(1e-3);
    ((s * r).sqrt(), (s / r).sqrt(), s)
}

/// State from a first detection: box center/area/aspect, zero velocities,
/// diagonal covariance sized from the configured relative uncertainties.
pub fn init(bbox: &BBox, cfg: &KalmanConfig) -> KalmanState {
    let z = measurement(bbox);
    let mut mean = StateVector::zeros();
    mean.fixed_rows_mut::<MEAS_DIM>(0).copy_from(&z);

    let (w, h, s) = state_dims(&mean);
    let diag = StateVector::from_iterator([
        (cfg.init_pos_rel * w).powi(2),
        (cfg.init_pos_rel * h).powi(2),
        (cfg.init_area_rel * s).powi(2),
        cfg.init_ratio.powi(2),
        (cfg.init_vel_rel * w).powi(2),
        (cfg.init_vel_rel * h).powi(2),
        (cfg.init_area_vel_rel * s).powi(2),
    ]);
    KalmanState {
        mean,
        cov: StateCov::from_diagonal(&diag),
    }
}

fn transition(dt: f64) -> StateCov {
    let mut f = StateCov::identity();
    f[(0, 4)] = dt;
    f[(1, 5)] = dt;
    f[(2, 6)] = dt;
    f
}

fn process_noise(mean: &StateVector, dt: f64, cfg: &KalmanConfig) -> StateCov {
    let (w, h, s) = state_dims(mean);
    let diag = StateVector::from_iterator([
        (cfg.proc_pos_rel * w).powi(2),
        (cfg.proc_pos_rel * h).powi(2),
        (cfg.proc_area_rel * s).powi(2),
        cfg.proc_ratio.powi(2),
        (cfg.proc_vel_rel * w).powi(2),
        (cfg.proc_vel_rel * h).powi(2),
        (cfg.proc_area_vel_rel * s).powi(2),
    ]);
    StateCov::from_diagonal(&(diag * dt))
}

/// Constant-velocity propagation over `dt` seconds. The area state is floored
/// at `s_min` so a negative area velocity can never produce a non-physical box.
pub fn predict(st: &KalmanState, dt: f64, cfg: &KalmanConfig) -> KalmanState {
    let f = transition(dt);
    let mut mean = f * st.mean;
    mean[2] = mean[2].max(cfg.s_min);
    mean[3] = mean[3].max(cfg.r_min);
    let cov = f * st.cov * f.transpose() + process_noise(&st.mean, dt, cfg);
    KalmanState { mean, cov }
}

fn measurement_matrix() -> MeasMatrix {
    let mut h = MeasMatrix::zeros();
    for i in 0..MEAS_DIM {
        h[(i, i)] = 1.0;
    }
    h
}

fn measurement_noise(z: &MeasVector, cfg: &KalmanConfig) -> MeasCov {
    let s = z[2].max(1.0);
    let r = z[3].max(1e-3);
    let w = (s * r).sqrt();
    let h = (s / r).sqrt();
    MeasCov::from_diagonal(&MeasVector::new(
        (cfg.meas_pos_rel * w).powi(2),
        (cfg.meas_pos_rel * h).powi(2),
        (cfg.meas_area_rel * s).powi(2),
        cfg.meas_ratio.powi(2),
    ))
}

/// Standard correction step in Joseph form, which keeps the covariance
/// symmetric positive semidefinite.
pub fn update(st: &KalmanState, z: &BBox, cfg: &KalmanConfig) -> Result<KalmanState, KalmanError> {
    let h = measurement_matrix();
    let zv = measurement(z);
    let r = measurement_noise(&zv, cfg);

    let innovation = zv - h * st.mean;
    let s_mat = h * st.cov * h.transpose() + r + MeasCov::identity() * INNOVATION_JITTER;
    let s_inv = s_mat.try_inverse().ok_or(KalmanError::SingularInnovation)?;
    if !s_inv.iter().all(|v| v.is_finite()) {
        return Err(KalmanError::SingularInnovation);
    }
    let gain = st.cov * h.transpose() * s_inv;

    let mut mean = st.mean + gain * innovation;
    mean[2] = mean[2].max(cfg.s_min);
    mean[3] = mean[3].max(cfg.r_min);

    let ikh = StateCov::identity() - gain * h;
    let cov = ikh * st.cov * ikh.transpose() + gain * r * gain.transpose();
    let cov = (cov + cov.transpose()) * 0.5;
    Ok(KalmanState { mean, cov })
}

/// Minimum eigenvalue of the covariance; >= -1e-8 is treated as PSD.
pub fn min_eigenvalue(cov: &StateCov) -> f64 {
    cov.symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> KalmanConfig {
        KalmanConfig::default()
    }

    #[test]
    fn init_from_box_center_area_aspect() {
        let st = init(&BBox::new(0.0, 0.0, 10.0, 10.0), &cfg());
        let expect = [5.0, 5.0, 100.0, 1.0, 0.0, 0.0, 0.0];
        for (i, e) in expect.iter().enumerate() {
            assert_eq!(st.mean[i], *e);
        }
        let st = init(&BBox::new(10.0, 20.0, 20.0, 10.0), &cfg());
        let expect = [20.0, 25.0, 200.0, 2.0, 0.0, 0.0, 0.0];
        for (i, e) in expect.iter().enumerate() {
            assert_eq!(st.mean[i], *e);
        }
        assert!(min_eigenvalue(&st.cov) >= 0.0);
    }

    #[test]
    fn predict_static_grows_covariance_only() {
        let st = init(&BBox::new(0.0, 0.0, 10.0, 10.0), &cfg());
        let next = predict(&st, 0.5, &cfg());
        assert_eq!(next.mean[0], st.mean[0]);
        assert_eq!(next.mean[1], st.mean[1]);
        assert!(next.cov.trace() > st.cov.trace());
    }

    #[test]
    fn predict_moves_with_velocity() {
        let mut st = init(&BBox::new(0.0, 0.0, 10.0, 10.0), &cfg());
        st.mean[4] = 5.0;
        let next = predict(&st, 1.0, &cfg());
        assert_eq!(next.mean[0], 10.0);
    }

    #[test]
    fn predict_floors_area_at_s_min() {
        // scripted propagation: s = 10 with vs = -20 would go to -10 in 1s;
        // the clamp pins it to s_min, and again on every later step
        let mut st = init(&BBox::new(0.0, 0.0, 2.0, 5.0), &cfg());
        st.mean[6] = -20.0;
        let one = predict(&st, 1.0, &cfg());
        assert_eq!(one.mean[2], cfg().s_min);
        let two = predict(&one, 1.0, &cfg());
        assert_eq!(two.mean[2], cfg().s_min);
        assert!(one.bbox().area() > 0.0);
    }

    #[test]
    fn update_with_predicted_mean_is_identity_on_mean() {
        let st = init(&BBox::new(10.0, 10.0, 20.0, 10.0), &cfg());
        let updated = update(&st, &st.bbox(), &cfg()).unwrap();
        for i in 0..STATE_DIM {
            assert!((updated.mean[i] - st.mean[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn repeated_updates_match_scalar_kalman_recursion() {
        // without prediction steps the cx component evolves as a scalar
        // filter: var' = var - var^2 / (var + R + jitter)
        let c = cfg();
        let z = BBox::new(30.0, 40.0, 10.0, 10.0);
        let mut st = init(&BBox::new(0.0, 0.0, 10.0, 10.0), &c);
        let r_cx = (c.meas_pos_rel * 10.0).powi(2);
        let mut scalar_mean = st.mean[0];
        let mut scalar_var = st.cov[(0, 0)];
        let target = 35.0; // measurement center x
        let mut last_var = f64::INFINITY;
        for _ in 0..20 {
            let s = scalar_var + r_cx + INNOVATION_JITTER;
            let k = scalar_var / s;
            scalar_mean += k * (target - scalar_mean);
            // Joseph form: (1-k)^2 P + k^2 R
            scalar_var = (1.0 - k) * (1.0 - k) * scalar_var + k * k * r_cx;

            st = update(&st, &z, &c).unwrap();
            assert!((st.mean[0] - scalar_mean).abs() < 1e-6);
            assert!((st.cov[(0, 0)] - scalar_var).abs() < 1e-6);
            assert!(st.cov[(0, 0)] < last_var, "position variance must shrink");
            last_var = st.cov[(0, 0)];
        }
        // prior carries weight 1/(1 + n*P0/R): 30px error shrinks to ~0.37
        assert!((st.mean[0] - target).abs() < 0.5);
    }

    #[test]
    fn tiny_measurement_noise_pins_posterior_to_measurement() {
        let mut c = cfg();
        c.meas_pos_rel = 1e-6;
        c.meas_area_rel = 1e-6;
        c.meas_ratio = 1e-6;
        let st = init(&BBox::new(0.0, 0.0, 10.0, 10.0), &c);
        let z = BBox::new(50.0, 60.0, 12.0, 8.0);
        let updated = update(&st, &z, &c).unwrap();
        let (zcx, zcy) = z.center();
        assert!((updated.mean[0] - zcx).abs() < 1e-2);
        assert!((updated.mean[1] - zcy).abs() < 1e-2);
        assert!((updated.mean[2] - z.area()).abs() / z.area() < 1e-2);
    }

    #[test]
    fn covariance_stays_psd_through_cycles() {
        let c = cfg();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut st = init(&BBox::new(100.0, 100.0, 40.0, 30.0), &c);
        for _ in 0..1000 {
            st = predict(&st, 0.033, &c);
            let jx: f64 = rng.random_range(-3.0..3.0);
            let jy: f64 = rng.random_range(-3.0..3.0);
            let sw: f64 = rng.random_range(0.9..1.1);
            let z = BBox::new(100.0 + jx, 100.0 + jy, 40.0 * sw, 30.0 * sw);
            st = update(&st, &z, &c).unwrap();
            let min_ev = min_eigenvalue(&st.cov);
            assert!(min_ev >= -1e-8, "min eigenvalue {min_ev}");
            let asym = (st.cov - st.cov.transpose()).norm();
            assert!(asym < 1e-9);
        }
    }
}
