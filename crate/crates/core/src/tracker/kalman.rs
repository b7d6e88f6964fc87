//! Constant-velocity Kalman filter over `(cx, cy, a, h)` box coordinates.
//!
//! Noise is proportional to the box height, so behavior does not depend on
//! how far the runner is from the camera.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use crate::data_model::BBox;
use crate::error::Result;

pub type StateVec = SVector<f64, 8>;
pub type StateCov = SMatrix<f64, 8, 8>;
type MeasVec = SVector<f64, 4>;
type MeasCov = SMatrix<f64, 4, 4>;
type MeasMat = SMatrix<f64, 4, 8>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KalmanNoise {
    /// Position std as a fraction of box height.
    pub position_weight: f64,
    /// Per-frame velocity std as a fraction of box height.
    pub velocity_weight: f64,
    /// Multiplier on the measurement noise.
    pub measurement_scale: f64,
}

impl Default for KalmanNoise {
    fn default() -> Self {
        Self {
            position_weight: 1.0 / 20.0,
            velocity_weight: 1.0 / 160.0,
            measurement_scale: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KalmanState {
    /// `(cx, cy, a, h, vcx, vcy, va, vh)` with `a = w / h`.
    pub mean: StateVec,
    pub covariance: StateCov,
}

fn measurement(b: &BBox) -> MeasVec {
    MeasVec::new(b.center_x(), b.center_y(), b.w / b.h, b.h)
}

fn projection() -> MeasMat {
    let mut h = MeasMat::zeros();
    for i in 0..4 {
        h[(i, i)] = 1.0;
    }
    h
}

fn symmetrize(p: &StateCov) -> StateCov {
    (p + p.transpose()) * 0.5
}

impl KalmanState {
    pub fn initiate(b: &BBox, noise: &KalmanNoise) -> Result<Self> {
        b.validate()?;
        let z = measurement(b);
        let mut mean = StateVec::zeros();
        mean.fixed_rows_mut::<4>(0).copy_from(&z);
        let (wp, wv) = (noise.position_weight, noise.velocity_weight);
        let std = [
            2.0 * wp * b.h,
            2.0 * wp * b.h,
            1e-2,
            2.0 * wp * b.h,
            10.0 * wv * b.h,
            10.0 * wv * b.h,
            1e-5,
            10.0 * wv * b.h,
        ];
        let covariance =
            StateCov::from_diagonal(&StateVec::from_iterator(std.iter().map(|s| s * s)));
        Ok(Self { mean, covariance })
    }

    pub fn height(&self) -> f64 {
        self.mean[3]
    }

    pub fn aspect(&self) -> f64 {
        self.mean[2]
    }

    /// Box implied by the current mean.
    pub fn bbox(&self) -> BBox {
        let h = self.mean[3];
        let w = self.mean[2] * h;
        BBox::new(self.mean[0] - w / 2.0, self.mean[1] - h / 2.0, w, h)
    }
}

/// Advances one frame under the constant-velocity model.
pub fn kalman_predict(s: &KalmanState, noise: &KalmanNoise) -> KalmanState {
    let mut f = StateCov::identity();
    for i in 0..4 {
        f[(i, i + 4)] = 1.0;
    }
    let h = s.mean[3].abs();
    let (wp, wv) = (noise.position_weight, noise.velocity_weight);
    let std = [wp * h, wp * h, 1e-2, wp * h, wv * h, wv * h, 1e-5, wv * h];
    let q = StateCov::from_diagonal(&StateVec::from_iterator(std.iter().map(|v| v * v)));
    KalmanState {
        mean: f * s.mean,
        covariance: symmetrize(&(f * s.covariance * f.transpose() + q)),
    }
}

/// Corrects the state with a measured box (Joseph-form covariance update).
pub fn kalman_update(s: &KalmanState, z: &BBox, noise: &KalmanNoise) -> Result<KalmanState> {
    z.validate()?;
    let hm = projection();
    let h = s.mean[3].abs();
    let k = noise.measurement_scale;
    let std = [
        k * noise.position_weight * h,
        k * noise.position_weight * h,
        k * 1e-1,
        k * noise.position_weight * h,
    ];
    let r = MeasCov::from_diagonal(&MeasVec::from_iterator(std.iter().map(|v| v * v)));
    let innovation_cov = hm * s.covariance * hm.transpose() + r;
    let inv = innovation_cov
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| innovation_cov.try_inverse())
        .unwrap_or_else(MeasCov::zeros);
    let gain = s.covariance * hm.transpose() * inv;
    let innovation = measurement(z) - hm * s.mean;
    let mean = s.mean + gain * innovation;
    let i_kh = StateCov::identity() - gain * hm;
    let covariance = i_kh * s.covariance * i_kh.transpose() + gain * r * gain.transpose();
    Ok(KalmanState {
        mean,
        covariance: symmetrize(&covariance),
    })
}
