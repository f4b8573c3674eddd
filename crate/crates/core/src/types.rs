//! Shared domain types, angle arithmetic and closed-form 2×2 helpers.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlamError};

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

/// Identifier of a landmark; association is known, so this is the landmark's
/// index in the scenario.
pub type LandmarkId = usize;

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> Result<f64> {
    if !a.is_finite() {
        return Err(SlamError::NonFinite("angle"));
    }
    Ok(wrap(a))
}

/// Infallible variant of [`wrap_angle`] for values already known to be finite.
#[inline]
pub(crate) fn wrap(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut r = a.rem_euclid(two_pi);
    if r > PI {
        r -= two_pi;
    }
    // rem_euclid can round up to exactly 2π for tiny negative inputs
    if r <= -PI {
        r += two_pi;
    }
    r
}

/// Vehicle pose in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Heading, always kept in `(-π, π]`.
    pub phi: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, phi: f64) -> Self {
        Pose { x, y, phi: wrap(phi) }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.phi.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlInput {
    /// Commanded speed (m/s).
    pub v: f64,
    /// Commanded steer angle (rad).
    pub gamma: f64,
}

impl ControlInput {
    pub fn new(v: f64, gamma: f64) -> Self {
        ControlInput { v, gamma }
    }
}

/// A range-bearing measurement of a landmark with known identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub range: f64,
    pub bearing: f64,
    pub landmark_id: LandmarkId,
}

impl Observation {
    pub fn new(range: f64, bearing: f64, landmark_id: LandmarkId) -> Self {
        Observation { range, bearing: wrap(bearing), landmark_id }
    }

    pub fn as_vec(&self) -> Vec2 {
        Vec2::new(self.range, self.bearing)
    }
}

/// Gaussian estimate of a single point landmark.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandmarkEstimate {
    pub mean: Vec2,
    pub cov: Mat2,
}

impl LandmarkEstimate {
    /// The covariance is symmetrized on construction.
    pub fn new(mean: Vec2, cov: Mat2) -> Self {
        LandmarkEstimate { mean, cov: symmetrize(&cov) }
    }
}

pub type LandmarkMap = BTreeMap<LandmarkId, LandmarkEstimate>;

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub pose: Pose,
    pub weight: f64,
    pub landmarks: LandmarkMap,
}

impl Particle {
    pub fn new(pose: Pose, weight: f64) -> Self {
        Particle { pose, weight, landmarks: LandmarkMap::new() }
    }
}

/// Process and measurement noise standard deviations.
///
/// `Q = diag(sigma_v², sigma_gamma²)` and `R = diag(sigma_r², sigma_theta²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseConfig {
    pub sigma_v: f64,
    pub sigma_gamma: f64,
    pub sigma_r: f64,
    pub sigma_theta: f64,
}

impl NoiseConfig {
    pub fn new(sigma_v: f64, sigma_gamma: f64, sigma_r: f64, sigma_theta: f64) -> Result<Self> {
        let n = NoiseConfig { sigma_v, sigma_gamma, sigma_r, sigma_theta };
        n.validate()?;
        Ok(n)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.sigma_v, self.sigma_gamma, self.sigma_r, self.sigma_theta];
        if all.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(SlamError::Config(format!("noise standard deviations must be positive: {self:?}")))
        }
    }

    pub fn q_matrix(&self) -> Mat2 {
        Mat2::from_diagonal(&Vec2::new(self.sigma_v.powi(2), self.sigma_gamma.powi(2)))
    }

    pub fn r_matrix(&self) -> Mat2 {
        Mat2::from_diagonal(&Vec2::new(self.sigma_r.powi(2), self.sigma_theta.powi(2)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub wheelbase_b: f64,
    pub dt_control: f64,
    pub obs_period_steps: usize,
    pub max_steer: f64,
    pub sensor_max_range: f64,
    pub sensor_fov: f64,
}

impl VehicleParams {
    pub fn validate(&self) -> Result<()> {
        let pos = [self.wheelbase_b, self.dt_control, self.max_steer, self.sensor_max_range, self.sensor_fov];
        if pos.iter().all(|v| v.is_finite() && *v > 0.0) && self.obs_period_steps >= 1 {
            Ok(())
        } else {
            Err(SlamError::Config(format!("invalid vehicle parameters: {self:?}")))
        }
    }
}

impl Default for VehicleParams {
    /// 4 m wheelbase, 40 Hz control, 5 Hz scans, 30° steer limit, 20 m / 180° sensor.
    fn default() -> Self {
        VehicleParams {
            wheelbase_b: 4.0,
            dt_control: 0.025,
            obs_period_steps: 8,
            max_steer: 30f64.to_radians(),
            sensor_max_range: 20.0,
            sensor_fov: PI,
        }
    }
}

// ---------------------------------------------------------------------------
// 2×2 helpers

pub fn det2(m: &Mat2) -> f64 {
    m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)]
}

/// Closed-form inverse; fails when `det < 1e-12`.
pub fn inv2(m: &Mat2) -> Result<Mat2> {
    let d = det2(m);
    if !(d >= SINGULAR_DET) {
        return Err(SlamError::Singular { det: d });
    }
    Ok(Mat2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / d)
}

pub const SINGULAR_DET: f64 = 1e-12;

pub fn symmetrize(m: &Mat2) -> Mat2 {
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    Mat2::new(m[(0, 0)], off, off, m[(1, 1)])
}

/// Eigenvalues of a symmetric 2×2 matrix, ascending.
pub fn sym_eigenvalues(m: &Mat2) -> (f64, f64) {
    let half_tr = 0.5 * (m[(0, 0)] + m[(1, 1)]);
    let half_diff = 0.5 * (m[(0, 0)] - m[(1, 1)]);
    let off = 0.5 * (m[(0, 1)] + m[(1, 0)]);
    let rad = (half_diff * half_diff + off * off).sqrt();
    (half_tr - rad, half_tr + rad)
}

pub fn is_psd(m: &Mat2, tol: f64) -> bool {
    (m[(0, 1)] - m[(1, 0)]).abs() <= tol.max(1e-9) && sym_eigenvalues(m).0 >= -tol
}

/// `vᵀ M⁻¹ v` with a closed-form inverse.
pub fn mahalanobis_sq(v: &Vec2, cov: &Mat2) -> Result<f64> {
    let inv = inv2(cov)?;
    Ok((v.transpose() * inv * v)[(0, 0)])
}
