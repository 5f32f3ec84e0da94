//! Linear Kalman filter building blocks used by each mode-matched filter.

use std::f64::consts::PI;

use nalgebra::{SMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::dynamics::{MeasMatrix, MeasVector, ObservationMatrix, StateMatrix, StateVector};
use crate::error::{Error, Result};

/// Innovation covariances with a larger condition number are rejected.
pub const MAX_INNOVATION_CONDITION: f64 = 1e12;

/// Mean and covariance of one Gaussian state estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: StateVector,
    pub cov: StateMatrix,
}

impl GaussianBelief {
    pub fn new(mean: StateVector, cov: StateMatrix) -> Self {
        Self { mean, cov }
    }

    /// Relative asymmetry of the covariance.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.cov.abs().max().max(f64::MIN_POSITIVE);
        (self.cov - self.cov.transpose()).abs().max() / scale
    }

    pub fn min_eigenvalue(&self) -> f64 {
        let sym = symmetrize(&self.cov);
        SymmetricEigen::new(sym).eigenvalues.min()
    }

    /// Symmetric within 1e-9 relative and PSD up to `-1e-9 * trace`.
    pub fn is_valid(&self) -> bool {
        self.mean.iter().all(|v| v.is_finite())
            && self.cov.iter().all(|v| v.is_finite())
            && self.asymmetry() <= 1e-9
            && self.min_eigenvalue() >= -1e-9 * self.cov.trace().abs()
    }
}

/// Result of a measurement update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateOutcome {
    pub posterior: GaussianBelief,
    pub residual: MeasVector,
    pub innovation_cov: MeasMatrix,
}

pub(crate) fn symmetrize<const N: usize>(m: &SMatrix<f64, N, N>) -> SMatrix<f64, N, N> {
    (m + m.transpose()) * 0.5
}

pub fn kf_predict(
    prior: &GaussianBelief,
    transition: &StateMatrix,
    process_cov: &StateMatrix,
) -> GaussianBelief {
    let mean = transition * prior.mean;
    let cov = transition * prior.cov * transition.transpose() + process_cov;
    GaussianBelief::new(mean, symmetrize(&cov))
}

/// Measurement update with the Joseph-form covariance
/// `(I - KH) P (I - KH)^T + K R K^T`.
pub fn kf_update(
    pred: &GaussianBelief,
    z: &MeasVector,
    h: &ObservationMatrix,
    r: &MeasMatrix,
) -> Result<UpdateOutcome> {
    let residual = z - h * pred.mean;
    let s = symmetrize(&(h * pred.cov * h.transpose() + r));
    let s_inv = invert_innovation(&s)?;
    let gain = pred.cov * h.transpose() * s_inv;
    let mean = pred.mean + gain * residual;
    let i_kh = StateMatrix::identity() - gain * h;
    let cov = i_kh * pred.cov * i_kh.transpose() + gain * r * gain.transpose();
    Ok(UpdateOutcome {
        posterior: GaussianBelief::new(mean, symmetrize(&cov)),
        residual,
        innovation_cov: s,
    })
}

fn eigenvalues_2x2(s: &MeasMatrix) -> (f64, f64) {
    let (a, b, d) = (s[(0, 0)], 0.5 * (s[(0, 1)] + s[(1, 0)]), s[(1, 1)]);
    let mid = 0.5 * (a + d);
    let rad = (0.25 * (a - d) * (a - d) + b * b).sqrt();
    (mid - rad, mid + rad)
}

fn invert_innovation(s: &MeasMatrix) -> Result<MeasMatrix> {
    let (lo, hi) = eigenvalues_2x2(s);
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
    if !(condition.is_finite() && condition <= MAX_INNOVATION_CONDITION) {
        return Err(Error::DegenerateMeasurement { condition });
    }
    s.try_inverse()
        .ok_or(Error::DegenerateMeasurement { condition })
}

/// Bivariate normal density of `residual` under zero mean and covariance `s`.
pub fn gaussian_likelihood(residual: &MeasVector, s: &MeasMatrix) -> Result<f64> {
    let s_inv = invert_innovation(s)?;
    let det = s.determinant();
    let mahalanobis = (residual.transpose() * s_inv * residual)[(0, 0)];
    Ok((-0.5 * mahalanobis).exp() / (2.0 * PI * det.sqrt()))
}

/// Single-model Kalman filter over the relative state.
#[derive(Debug, Clone)]
pub struct KalmanFilter {
    pub belief: GaussianBelief,
    pub transition: StateMatrix,
    pub process_cov: StateMatrix,
    pub observation: ObservationMatrix,
    pub meas_cov: MeasMatrix,
}

impl KalmanFilter {
    pub fn step(&mut self, z: &MeasVector) -> Result<UpdateOutcome> {
        let pred = kf_predict(&self.belief, &self.transition, &self.process_cov);
        let out = kf_update(&pred, z, &self.observation, &self.meas_cov)?;
        self.belief = out.posterior;
        Ok(out)
    }
}
