//! Per-landmark EKF: initialization from a first sighting and the
//! measurement update conditioned on a sampled pose.

use crate::error::{Result, SlamError};
use crate::models::{inverse_observation, obs_jacobian_landmark, predict_observation};
use crate::types::{inv2, symmetrize, wrap, LandmarkEstimate, Mat2, Observation, Pose, Vec2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkfUpdateResult {
    pub estimate: LandmarkEstimate,
    /// `z - ẑ` with the bearing component wrapped.
    pub innovation: Vec2,
    /// Theoretical innovation covariance `G Σ Gᵀ + R`.
    pub innovation_cov: Mat2,
}

/// Gaussian for a landmark seen for the first time: mean from the inverse
/// sensor model, covariance `J R Jᵀ`.
pub fn init_landmark(pose: &Pose, z: &Observation, r_mat: &Mat2) -> Result<LandmarkEstimate> {
    let (mean, jz) = inverse_observation(pose, z)?;
    Ok(LandmarkEstimate::new(mean, jz * r_mat * jz.transpose()))
}

/// Residual `z - ẑ` with the bearing wrapped into `(-π, π]`.
pub fn innovation(z: &Observation, z_hat: &Vec2) -> Vec2 {
    Vec2::new(z.range - z_hat[0], wrap(z.bearing - z_hat[1]))
}

/// Predicted observation, landmark Jacobian, and innovation covariance for
/// one landmark seen from `pose`.
pub fn predicted_measurement(est: &LandmarkEstimate, pose: &Pose, r_mat: &Mat2) -> Result<(Vec2, Mat2, Mat2)> {
    let z_hat = predict_observation(pose, &est.mean)?;
    let g = obs_jacobian_landmark(pose, &est.mean)?;
    let s = symmetrize(&(g * est.cov * g.transpose() + r_mat));
    Ok((z_hat, g, s))
}

/// EKF measurement update linearized at the pose sample and the prior mean.
pub fn update_landmark(est: &LandmarkEstimate, pose: &Pose, z: &Observation, r_mat: &Mat2) -> Result<EkfUpdateResult> {
    let (z_hat, g, s) = predicted_measurement(est, pose, r_mat)?;
    let s_inv = inv2(&s)?;
    let k = est.cov * g.transpose() * s_inv;
    let nu = innovation(z, &z_hat);
    let mean = est.mean + k * nu;
    let cov = (Mat2::identity() - k * g) * est.cov;
    if !mean.iter().all(|v| v.is_finite()) {
        return Err(SlamError::NonFinite("landmark mean"));
    }
    Ok(EkfUpdateResult { estimate: LandmarkEstimate::new(mean, cov), innovation: nu, innovation_cov: s })
}
