//! Eight-state GNSS Kalman filter with a road-network measurement update.
//!
//! State layout: east, north, up (m), velocity east/north/up (m/s), receiver
//! clock bias (m) and clock drift (m/s).

mod differentiable;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4, SMatrix, SVector, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::KalmanError;
use crate::geo::{rotation_to_road, EnuPoint, Segment};

pub use differentiable::{gnss_update_tracked, predict_tracked, road_update_tracked, TrackedEstimate};

pub const STATE_DIM: usize = 8;
pub type StateVector = SVector<f64, STATE_DIM>;
pub type StateMatrix = SMatrix<f64, STATE_DIM, STATE_DIM>;
pub type RoadMatrix = SMatrix<f64, 2, STATE_DIM>;

pub const EAST: usize = 0;
pub const NORTH: usize = 1;
pub const UP: usize = 2;
pub const VEL_EAST: usize = 3;
pub const VEL_NORTH: usize = 4;
pub const VEL_UP: usize = 5;
pub const CLOCK_BIAS: usize = 6;
pub const CLOCK_DRIFT: usize = 7;

/// Variance standing in for "infinite" road variance.
pub const INFINITE_VARIANCE: f64 = 1e12;

/// Mean and covariance of the filter state.
#[derive(Debug, Clone, PartialEq)]
pub struct KfEstimate {
    pub mean: StateVector,
    pub cov: StateMatrix,
}

impl KfEstimate {
    pub fn position(&self) -> EnuPoint {
        EnuPoint::new(self.mean[EAST], self.mean[NORTH], self.mean[UP])
    }

    pub fn velocity(&self) -> Vector3<f64> {
        Vector3::new(self.mean[VEL_EAST], self.mean[VEL_NORTH], self.mean[VEL_UP])
    }

    pub fn horizontal_speed(&self) -> f64 {
        self.mean[VEL_EAST].hypot(self.mean[VEL_NORTH])
    }

    /// Heading of the horizontal velocity, counterclockwise from East.
    pub fn heading(&self) -> f64 {
        crate::geo::normalize_angle(self.mean[VEL_NORTH].atan2(self.mean[VEL_EAST]))
    }

    /// `(σxx², σxy², σyy²)` of the east/north position block.
    pub fn horizontal_covariance(&self) -> (f64, f64, f64) {
        (self.cov[(EAST, EAST)], self.cov[(EAST, NORTH)], self.cov[(NORTH, NORTH)])
    }

    pub fn is_finite(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite()) && self.cov.iter().all(|v| v.is_finite())
    }

    fn symmetrized(mut self) -> Self {
        self.cov = 0.5 * (self.cov + self.cov.transpose());
        self
    }
}

/// One satellite's corrected observables.
#[derive(Debug, Clone, PartialEq)]
pub struct SatelliteObs {
    pub position: EnuPoint,
    pub velocity: Vector3<f64>,
    /// m, already corrected for everything except receiver clock and noise
    pub pseudorange: f64,
    /// m/s
    pub pseudorange_rate: f64,
    pub range_sigma: f64,
    pub rate_sigma: f64,
}

impl SatelliteObs {
    fn line_of_sight(&self, receiver: &EnuPoint) -> (Vector3<f64>, f64) {
        let d = Vector3::new(
            self.position.east - receiver.east,
            self.position.north - receiver.north,
            self.position.up - receiver.up,
        );
        let range = d.norm();
        (d / range, range)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnssEpoch {
    pub time: f64,
    pub satellites: Vec<SatelliteObs>,
}

/// Single-epoch weighted least-squares solution.
#[derive(Debug, Clone, PartialEq)]
pub struct LsFix {
    pub position: EnuPoint,
    pub clock_bias: f64,
    /// Covariance of (east, north, up, bias).
    pub cov: Matrix4<f64>,
}

const LS_MAX_ITERATIONS: usize = 20;
const LS_TOLERANCE: f64 = 1e-4;

/// Iterated, weighted Gauss-Newton fix from pseudoranges.
pub fn least_squares_fix(epoch: &GnssEpoch) -> Result<LsFix, KalmanError> {
    least_squares_fix_from(epoch, EnuPoint::default(), 0.0)
}

/// [`least_squares_fix`] starting from a given linearization point.
pub fn least_squares_fix_from(
    epoch: &GnssEpoch,
    start: EnuPoint,
    start_bias: f64,
) -> Result<LsFix, KalmanError> {
    let sats = &epoch.satellites;
    if sats.len() < 4 {
        return Err(KalmanError::TooFewSatellites(sats.len()));
    }
    let mut x = Vector4::new(start.east, start.north, start.up, start_bias);
    for _ in 0..LS_MAX_ITERATIONS {
        let pos = EnuPoint::new(x[0], x[1], x[2]);
        let mut normal = Matrix4::zeros();
        let mut rhs = Vector4::zeros();
        for s in sats {
            let (u, range) = s.line_of_sight(&pos);
            let g = Vector4::new(-u.x, -u.y, -u.z, 1.0);
            let w = 1.0 / (s.range_sigma * s.range_sigma);
            let residual = s.pseudorange - (range + x[3]);
            normal += w * g * g.transpose();
            rhs += w * residual * g;
        }
        let cov = normal.try_inverse().ok_or(KalmanError::DegenerateGeometry)?;
        let step = cov * rhs;
        x += step;
        if step.fixed_rows::<3>(0).norm() < LS_TOLERANCE {
            return Ok(LsFix {
                position: EnuPoint::new(x[0], x[1], x[2]),
                clock_bias: x[3],
                cov,
            });
        }
    }
    Err(KalmanError::NoConvergence(LS_MAX_ITERATIONS))
}

/// Weighted least-squares velocity and clock drift from pseudorange rates at
/// a known position. Returns `(velocity, drift, covariance)`.
pub fn least_squares_velocity(
    epoch: &GnssEpoch,
    position: &EnuPoint,
) -> Result<(Vector3<f64>, f64, Matrix4<f64>), KalmanError> {
    let sats = &epoch.satellites;
    if sats.len() < 4 {
        return Err(KalmanError::TooFewSatellites(sats.len()));
    }
    let mut normal = Matrix4::zeros();
    let mut rhs = Vector4::zeros();
    for s in sats {
        let (u, _) = s.line_of_sight(position);
        let g = Vector4::new(-u.x, -u.y, -u.z, 1.0);
        let w = 1.0 / (s.rate_sigma * s.rate_sigma);
        let y = s.pseudorange_rate - u.dot(&s.velocity);
        normal += w * g * g.transpose();
        rhs += w * y * g;
    }
    let cov = normal.try_inverse().ok_or(KalmanError::DegenerateGeometry)?;
    let sol = cov * rhs;
    Ok((Vector3::new(sol[0], sol[1], sol[2]), sol[3], cov))
}

/// Filter state from a least-squares position and velocity fix.
pub fn initialize(epoch: &GnssEpoch) -> Result<KfEstimate, KalmanError> {
    let fix = least_squares_fix(epoch)?;
    let (vel, drift, vcov) = least_squares_velocity(epoch, &fix.position)?;
    let mut mean = StateVector::zeros();
    mean[EAST] = fix.position.east;
    mean[NORTH] = fix.position.north;
    mean[UP] = fix.position.up;
    mean[VEL_EAST] = vel.x;
    mean[VEL_NORTH] = vel.y;
    mean[VEL_UP] = vel.z;
    mean[CLOCK_BIAS] = fix.clock_bias;
    mean[CLOCK_DRIFT] = drift;
    let pos_idx = [EAST, NORTH, UP, CLOCK_BIAS];
    let vel_idx = [VEL_EAST, VEL_NORTH, VEL_UP, CLOCK_DRIFT];
    let mut cov = StateMatrix::zeros();
    for (r, &i) in pos_idx.iter().enumerate() {
        for (c, &j) in pos_idx.iter().enumerate() {
            cov[(i, j)] = fix.cov[(r, c)];
        }
    }
    for (r, &i) in vel_idx.iter().enumerate() {
        for (c, &j) in vel_idx.iter().enumerate() {
            cov[(i, j)] = vcov[(r, c)];
        }
    }
    Ok(KfEstimate { mean, cov }.symmetrized())
}

/// White-acceleration and two-state clock noise spectral densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProcessNoise {
    /// m²/s³
    pub accel_horizontal: f64,
    /// m²/s³
    pub accel_vertical: f64,
    /// m²/s
    pub clock_bias: f64,
    /// m²/s³
    pub clock_drift: f64,
}

impl Default for ProcessNoise {
    fn default() -> Self {
        Self {
            accel_horizontal: 1.0,
            accel_vertical: 0.1,
            clock_bias: 1e-2,
            clock_drift: 1e-4,
        }
    }
}

impl ProcessNoise {
    pub fn zero() -> Self {
        Self {
            accel_horizontal: 0.0,
            accel_vertical: 0.0,
            clock_bias: 0.0,
            clock_drift: 0.0,
        }
    }
}

/// Constant-velocity transition matrix.
pub fn transition(dt: f64) -> StateMatrix {
    let mut f = StateMatrix::identity();
    for axis in 0..3 {
        f[(axis, axis + 3)] = dt;
    }
    f[(CLOCK_BIAS, CLOCK_DRIFT)] = dt;
    f
}

pub fn process_covariance(dt: f64, q: &ProcessNoise) -> StateMatrix {
    let mut m = StateMatrix::zeros();
    let (dt2, dt3) = (dt * dt, dt * dt * dt);
    for axis in 0..3 {
        let s = if axis == UP { q.accel_vertical } else { q.accel_horizontal };
        m[(axis, axis)] = s * dt3 / 3.0;
        m[(axis, axis + 3)] = s * dt2 / 2.0;
        m[(axis + 3, axis)] = s * dt2 / 2.0;
        m[(axis + 3, axis + 3)] = s * dt;
    }
    m[(CLOCK_BIAS, CLOCK_BIAS)] = q.clock_bias * dt + q.clock_drift * dt3 / 3.0;
    m[(CLOCK_BIAS, CLOCK_DRIFT)] = q.clock_drift * dt2 / 2.0;
    m[(CLOCK_DRIFT, CLOCK_BIAS)] = q.clock_drift * dt2 / 2.0;
    m[(CLOCK_DRIFT, CLOCK_DRIFT)] = q.clock_drift * dt;
    m
}

/// Nearly-constant-velocity prediction over `dt` seconds.
pub fn predict(est: &KfEstimate, dt: f64, q: &ProcessNoise) -> Result<KfEstimate, KalmanError> {
    if dt <= 0.0 || !dt.is_finite() {
        return Err(KalmanError::NonPositiveStep(dt));
    }
    let f = transition(dt);
    Ok(KfEstimate {
        mean: f * est.mean,
        cov: f * est.cov * f.transpose() + process_covariance(dt, q),
    }
    .symmetrized())
}

/// Linearized pseudorange/pseudorange-rate model at `est`: observation rows,
/// measurement variances, and innovations `y - h(x)`.
pub fn gnss_linearization(est: &KfEstimate, epoch: &GnssEpoch) -> (DMatrix<f64>, DVector<f64>, DVector<f64>) {
    let m = 2 * epoch.satellites.len();
    let mut h = DMatrix::zeros(m, STATE_DIM);
    let mut var = DVector::zeros(m);
    let mut innov = DVector::zeros(m);
    let pos = est.position();
    let vel = est.velocity();
    for (k, s) in epoch.satellites.iter().enumerate() {
        let (u, range) = s.line_of_sight(&pos);
        let (r, d) = (2 * k, 2 * k + 1);
        for axis in 0..3 {
            h[(r, axis)] = -u[axis];
            h[(d, axis + 3)] = -u[axis];
        }
        h[(r, CLOCK_BIAS)] = 1.0;
        h[(d, CLOCK_DRIFT)] = 1.0;
        var[r] = s.range_sigma * s.range_sigma;
        var[d] = s.rate_sigma * s.rate_sigma;
        innov[r] = s.pseudorange - (range + est.mean[CLOCK_BIAS]);
        innov[d] = s.pseudorange_rate - (u.dot(&(s.velocity - vel)) + est.mean[CLOCK_DRIFT]);
    }
    (h, var, innov)
}

/// Extended Kalman update with all pseudoranges and rates of one epoch.
pub fn gnss_update(est: &KfEstimate, epoch: &GnssEpoch) -> KfEstimate {
    if epoch.satellites.is_empty() {
        return est.clone();
    }
    let (h, var, innov) = gnss_linearization(est, epoch);
    linear_update(est, &h, &var, &innov)
}

/// Joseph-form update with a diagonal measurement covariance.
fn linear_update(est: &KfEstimate, h: &DMatrix<f64>, var: &DVector<f64>, innov: &DVector<f64>) -> KfEstimate {
    let p = DMatrix::from_column_slice(STATE_DIM, STATE_DIM, est.cov.as_slice());
    let pht = &p * h.transpose();
    let mut s = h * &pht;
    for i in 0..var.len() {
        s[(i, i)] += var[i];
    }
    let Some(chol) = s.clone().cholesky() else {
        return est.clone();
    };
    // K = P Hᵀ S⁻¹
    let k = chol.solve(&pht.transpose()).transpose();
    let dx = &k * innov;
    let ikh = DMatrix::identity(STATE_DIM, STATE_DIM) - &k * h;
    let mut kr = k.clone();
    for (j, v) in var.iter().enumerate() {
        kr.column_mut(j).scale_mut(*v);
    }
    let new_p = &ikh * &p * ikh.transpose() + kr * k.transpose();
    KfEstimate {
        mean: est.mean + StateVector::from_iterator(dx.iter().copied()),
        cov: StateMatrix::from_iterator(new_p.iter().copied()),
    }
    .symmetrized()
}

/// Road pseudo-measurement in the frame of the selected segment.
#[derive(Debug, Clone, PartialEq)]
pub struct RoadObservation {
    /// `(z∥*, z⊥)`
    pub z: Vector2<f64>,
    pub h: RoadMatrix,
    /// `diag(σ∥², σ⊥²)`
    pub v: Matrix2<f64>,
}

impl RoadObservation {
    pub fn residual(&self, est: &KfEstimate) -> Vector2<f64> {
        self.z - self.h * est.mean
    }
}

/// Observation matrix `H_rot · H_select` for a road with heading `theta`.
pub fn road_observation_matrix(theta: f64) -> RoadMatrix {
    let rot = rotation_to_road(theta);
    let mut h = RoadMatrix::zeros();
    h.fixed_view_mut::<2, 2>(0, 0).copy_from(&rot);
    h
}

/// Soft threshold `sign(v) · max(|v| - half, 0)`.
pub fn soft_threshold(v: f64, half: f64) -> f64 {
    v.signum() * (v.abs() - half).max(0.0)
}

/// Builds `(z, H, V)` for snapping the horizontal position to `road`.
///
/// The offset from the user to the road midpoint is rotated into the road
/// frame; its parallel part is soft-thresholded by half the segment length
/// so that only positions beyond the segment ends are pulled along the road.
pub fn build_road_observation(est: &KfEstimate, road: &Segment, sigma_par2: f64, sigma_perp2: f64) -> RoadObservation {
    debug_assert!(sigma_par2 >= 0.0 && sigma_perp2 >= 0.0);
    let h = road_observation_matrix(road.heading);
    let rot = rotation_to_road(road.heading);
    let pos = Vector2::new(est.mean[EAST], est.mean[NORTH]);
    let offset = rot * (Vector2::new(road.midpoint.east, road.midpoint.north) - pos);
    let residual = Vector2::new(soft_threshold(offset.x, 0.5 * road.length), offset.y);
    RoadObservation {
        z: rot * pos + residual,
        h,
        v: Matrix2::new(sigma_par2, 0.0, 0.0, sigma_perp2),
    }
}

/// Kalman gain and innovation covariance of a road observation.
pub fn road_gain(est: &KfEstimate, obs: &RoadObservation) -> Result<SMatrix<f64, STATE_DIM, 2>, KalmanError> {
    let pht = est.cov * obs.h.transpose();
    let s = obs.h * pht + obs.v;
    let det = s.determinant();
    let scale = s.trace().abs().max(f64::MIN_POSITIVE);
    if !(det > 1e-14 * scale * scale) {
        return Err(KalmanError::SingularInnovation { det });
    }
    let s_inv = Matrix2::new(s[(1, 1)], -s[(0, 1)], -s[(1, 0)], s[(0, 0)]) / det;
    Ok(pht * s_inv)
}

/// Road-network measurement update:
/// `K = P Hᵀ (H P Hᵀ + V)⁻¹`, `x⁺ = x + K (z − H x)`, `P⁺ = P − K H P`.
///
/// The covariance is computed in Joseph form, which equals `P − K H P`
/// for the optimal gain and stays symmetric.
pub fn road_update(est: &KfEstimate, obs: &RoadObservation) -> Result<KfEstimate, KalmanError> {
    let k = road_gain(est, obs)?;
    let mean = est.mean + k * obs.residual(est);
    let ikh = StateMatrix::identity() - k * obs.h;
    let cov = ikh * est.cov * ikh.transpose() + k * obs.v * k.transpose();
    debug_assert!({
        let simple = est.cov - k * obs.h * est.cov;
        let scale = est.cov.abs().max().max(1.0);
        (simple - cov).abs().max() <= 1e-8 * scale
    });
    Ok(KfEstimate { mean, cov }.symmetrized())
}
