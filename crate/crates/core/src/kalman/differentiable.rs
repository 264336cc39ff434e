//! Kalman operations recorded on an autodiff tape.
//!
//! These mirror the plain-matrix functions in the parent module and are used
//! only for training, where gradients must flow from the posterior back to
//! the road variances and, optionally, through the whole window.

use crate::autodiff::{Tape, Tensor, Var};
use crate::error::TensorError;
use crate::geo::{rotation_to_road, Segment};

use super::{
    gnss_linearization, process_covariance, road_observation_matrix, transition, GnssEpoch, KfEstimate,
    ProcessNoise, StateMatrix, StateVector, EAST, NORTH, STATE_DIM,
};

/// Filter state living on a tape: mean `[8, 1]`, covariance `[8, 8]`.
#[derive(Debug, Clone, Copy)]
pub struct TrackedEstimate<'t> {
    pub mean: Var<'t>,
    pub cov: Var<'t>,
}

impl<'t> TrackedEstimate<'t> {
    /// Records `est` as a constant (no gradient flows into it).
    pub fn constant(tape: &'t Tape, est: &KfEstimate) -> Self {
        Self {
            mean: tape.constant(Tensor::column(est.mean.as_slice())),
            cov: tape.constant(matrix_tensor(&est.cov)),
        }
    }

    /// Current numeric value.
    pub fn value(&self) -> KfEstimate {
        let m = self.mean.value();
        let c = self.cov.value();
        KfEstimate {
            mean: StateVector::from_column_slice(m.data()),
            cov: StateMatrix::from_row_slice(c.data()),
        }
    }

    /// Same value, with the history cut off.
    pub fn detach(self) -> Self {
        Self {
            mean: self.mean.detach(),
            cov: self.cov.detach(),
        }
    }

    /// Horizontal position `[2, 1]`.
    pub fn horizontal(self) -> Result<Var<'t>, TensorError> {
        debug_assert!(EAST == 0 && NORTH == 1);
        self.mean.slice_rows(0, 2)
    }
}

fn matrix_tensor<const R: usize, const C: usize>(m: &nalgebra::SMatrix<f64, R, C>) -> Tensor {
    let mut t = Tensor::zeros(R, C);
    for r in 0..R {
        for c in 0..C {
            t.set(r, c, m[(r, c)]);
        }
    }
    t
}

/// Prediction on the tape; `F` and `Q` are constants.
pub fn predict_tracked<'t>(
    est: TrackedEstimate<'t>,
    dt: f64,
    q: &ProcessNoise,
) -> Result<TrackedEstimate<'t>, TensorError> {
    let tape = est.mean.tape();
    let f = tape.constant(matrix_tensor(&transition(dt)));
    let qm = tape.constant(matrix_tensor(&process_covariance(dt, q)));
    let mean = f.matmul(est.mean)?;
    let cov = f.matmul(est.cov)?.matmul(f.t())?.add(qm)?;
    Ok(TrackedEstimate { mean, cov })
}

/// GNSS update on the tape as a sequence of scalar updates.
///
/// All rows are linearized once at the incoming mean, so the result equals
/// the batch update up to rounding.
pub fn gnss_update_tracked<'t>(
    est: TrackedEstimate<'t>,
    epoch: &GnssEpoch,
) -> Result<TrackedEstimate<'t>, TensorError> {
    if epoch.satellites.is_empty() {
        return Ok(est);
    }
    let tape = est.mean.tape();
    let x0 = est.value();
    let (h, var, innov) = gnss_linearization(&x0, epoch);
    let (mut mean, mut cov) = (est.mean, est.cov);
    for i in 0..h.nrows() {
        let row: Vec<f64> = (0..STATE_DIM).map(|c| h[(i, c)]).collect();
        // pseudo-measurement z̃ = y − h(x0) + H x0 of the linear model z̃ = H x
        let hx0: f64 = row.iter().zip(x0.mean.iter()).map(|(a, b)| a * b).sum();
        let z = tape.constant(Tensor::scalar(innov[i] + hx0));
        let hr = tape.constant(Tensor::row(&row));
        let ph = cov.matmul(hr.t())?;
        let s = hr.matmul(ph)?.add_scalar(var[i]);
        let k = ph.scale_by(s.recip())?;
        let y = z.sub(hr.matmul(mean)?)?;
        mean = mean.add(k.scale_by(y)?)?;
        cov = cov.sub(k.matmul(ph.t())?)?;
    }
    Ok(TrackedEstimate { mean, cov })
}

/// Road-network update on the tape with variances `sigma = [σ∥², σ⊥²]`
/// (shape `[1, 2]`).
///
/// Uses `P⁺ = P − K H P`. The soft-threshold on the parallel offset is
/// written as `x − clamp(x, −L/2, L/2)` so it stays differentiable in the
/// prior mean.
pub fn road_update_tracked<'t>(
    est: TrackedEstimate<'t>,
    road: &Segment,
    sigma: Var<'t>,
) -> Result<TrackedEstimate<'t>, TensorError> {
    let tape = est.mean.tape();
    if sigma.shape() != [1, 2] {
        return Err(TensorError::ShapeMismatch {
            op: "road_update",
            left: sigma.shape(),
            right: [1, 2],
        });
    }
    let h = tape.constant(matrix_tensor(&road_observation_matrix(road.heading)));
    let rot_mid = rotation_to_road(road.heading) * nalgebra::Vector2::new(road.midpoint.east, road.midpoint.north);
    let offset = tape
        .constant(Tensor::column(&[rot_mid.x, rot_mid.y]))
        .sub(h.matmul(est.mean)?)?;
    let half = 0.5 * road.length;
    let par = offset.slice_rows(0, 1)?;
    let par = par.sub(par.clamp(-half, half))?;
    let residual = tape.concat_rows(&[par, offset.slice_rows(1, 1)?])?;

    let hp = h.matmul(est.cov)?;
    let s = hp.matmul(h.t())?.add(sigma.diag()?)?;
    // S is symmetric, so K = P Hᵀ S⁻¹ = (S⁻¹ H P)ᵀ
    let k = s.solve2(hp)?.t();
    let mean = est.mean.add(k.matmul(residual)?)?;
    let cov = est.cov.sub(k.matmul(hp)?)?;
    Ok(TrackedEstimate { mean, cov })
}
