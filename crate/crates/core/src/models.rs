//! Vehicle kinematics and the range-bearing sensor model.

use rand::Rng;
use rand_distr::Distribution;

use crate::error::{Result, SlamError};
use crate::types::{wrap, ControlInput, Mat2, NoiseConfig, Observation, Pose, Vec2, VehicleParams};

/// One forward-Euler step of the bicycle kinematics with the given actuation
/// perturbation `(dv, dgamma)` added to the command.
pub fn motion_step(pose: &Pose, u: &ControlInput, noise: (f64, f64), p: &VehicleParams) -> Result<Pose> {
    if !pose.is_finite() || !u.v.is_finite() || !u.gamma.is_finite() || !noise.0.is_finite() || !noise.1.is_finite() {
        return Err(SlamError::NonFinite("motion input"));
    }
    let v = u.v + noise.0;
    let g = u.gamma + noise.1;
    let dt = p.dt_control;
    let heading = pose.phi + g;
    Ok(Pose {
        x: pose.x + dt * v * heading.cos(),
        y: pose.y + dt * v * heading.sin(),
        phi: wrap(pose.phi + dt * v / p.wheelbase_b * g.sin()),
    })
}

/// Draws an actuation perturbation from `Q` and applies [`motion_step`].
pub fn sample_motion<R: Rng + ?Sized>(
    pose: &Pose,
    u: &ControlInput,
    n: &NoiseConfig,
    p: &VehicleParams,
    rng: &mut R,
) -> Result<Pose> {
    let dv = gaussian(rng, n.sigma_v);
    let dg = gaussian(rng, n.sigma_gamma);
    motion_step(pose, u, (dv, dg), p)
}

/// Zero-mean normal draw; a zero standard deviation yields exactly 0 and
/// still consumes one draw so streams stay aligned.
pub(crate) fn gaussian<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    let z: f64 = rand_distr::StandardNormal.sample(rng);
    sigma * z
}

/// Predicted `(range, bearing)` of landmark `lm` seen from `pose`.
pub fn predict_observation(pose: &Pose, lm: &Vec2) -> Result<Vec2> {
    let dx = lm.x - pose.x;
    let dy = lm.y - pose.y;
    let q = dx.hypot(dy);
    if !(q > 0.0) {
        return Err(SlamError::Singularity("landmark coincides with pose"));
    }
    Ok(Vec2::new(q, wrap(dy.atan2(dx) - pose.phi)))
}

/// Jacobian of [`predict_observation`] with respect to the landmark position.
pub fn obs_jacobian_landmark(pose: &Pose, lm: &Vec2) -> Result<Mat2> {
    let dx = lm.x - pose.x;
    let dy = lm.y - pose.y;
    let q2 = dx * dx + dy * dy;
    if !(q2 > 0.0) {
        return Err(SlamError::Singularity("landmark coincides with pose"));
    }
    let q = q2.sqrt();
    Ok(Mat2::new(dx / q, dy / q, -dy / q2, dx / q2))
}

/// Landmark position implied by an observation, with the Jacobian of that
/// position with respect to `(range, bearing)`.
pub fn inverse_observation(pose: &Pose, z: &Observation) -> Result<(Vec2, Mat2)> {
    if !(z.range > 0.0) {
        return Err(SlamError::Singularity("non-positive range"));
    }
    let a = pose.phi + z.bearing;
    let (s, c) = a.sin_cos();
    let lm = Vec2::new(pose.x + z.range * c, pose.y + z.range * s);
    let jac = Mat2::new(c, -z.range * s, s, z.range * c);
    Ok((lm, jac))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn params() -> VehicleParams {
        VehicleParams::default()
    }

    // central differences of predict_observation w.r.t. the landmark
    fn fd_jacobian(pose: &Pose, lm: &Vec2) -> Mat2 {
        let h = 1e-6;
        let mut j = Mat2::zeros();
        for c in 0..2 {
            let mut lp = *lm;
            let mut lmn = *lm;
            lp[c] += h;
            lmn[c] -= h;
            let zp = predict_observation(pose, &lp).unwrap();
            let zm = predict_observation(pose, &lmn).unwrap();
            j[(0, c)] = (zp[0] - zm[0]) / (2.0 * h);
            j[(1, c)] = wrap(zp[1] - zm[1]) / (2.0 * h);
        }
        j
    }

    fn fd_inverse_jacobian(pose: &Pose, z: &Observation) -> Mat2 {
        let h = 1e-6;
        let mut j = Mat2::zeros();
        for c in 0..2 {
            let mut zp = *z;
            let mut zm = *z;
            if c == 0 {
                zp.range += h;
                zm.range -= h;
            } else {
                zp.bearing += h;
                zm.bearing -= h;
            }
            let lp = inverse_observation(pose, &zp).unwrap().0;
            let lmn = inverse_observation(pose, &zm).unwrap().0;
            j.set_column(c, &((lp - lmn) / (2.0 * h)));
        }
        j
    }

    fn rel_err(a: &Mat2, b: &Mat2) -> f64 {
        (a - b).abs().max() / b.abs().max().max(1e-12)
    }

    #[test]
    fn motion_examples() {
        let p = params();
        let o = Pose::default();
        assert_eq!(motion_step(&o, &ControlInput::new(0.0, 0.0), (0.0, 0.0), &p).unwrap(), o);

        let s = motion_step(&o, &ControlInput::new(3.0, 0.0), (0.0, 0.0), &p).unwrap();
        assert_relative_eq!(s.x, 0.075, epsilon = 1e-15);
        assert_eq!((s.y, s.phi), (0.0, 0.0));

        // hand evaluation of the Euler step with a 30° steer
        let g = 30f64.to_radians();
        let s = motion_step(&o, &ControlInput::new(3.0, g), (0.0, 0.0), &p).unwrap();
        assert_relative_eq!(s.phi, 0.009375, epsilon = 1e-15);
        assert_relative_eq!(s.x, 0.075 * (3f64.sqrt() / 2.0), epsilon = 1e-15);
        assert_relative_eq!(s.y, 0.075 * 0.5, epsilon = 1e-15);
    }

    #[test]
    fn motion_rejects_non_finite() {
        let r = motion_step(&Pose::default(), &ControlInput::new(f64::NAN, 0.0), (0.0, 0.0), &params());
        assert!(matches!(r, Err(SlamError::NonFinite(_))));
    }

    #[test]
    fn straight_motion_keeps_heading() {
        let p = params();
        let mut pose = Pose::new(1.0, 2.0, 0.7);
        for _ in 0..100 {
            pose = motion_step(&pose, &ControlInput::new(3.0, 0.0), (0.1, 0.0), &p).unwrap();
        }
        assert_eq!(pose.phi, 0.7);
    }

    #[test]
    fn sample_motion_degenerate_noise_and_determinism() {
        let p = params();
        let n = NoiseConfig::new(1e-300, 1e-300, 1.0, 1.0).unwrap();
        let u = ControlInput::new(3.0, 0.1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = sample_motion(&Pose::default(), &u, &n, &p, &mut rng).unwrap();
        let exact = motion_step(&Pose::default(), &u, (0.0, 0.0), &p).unwrap();
        assert_relative_eq!(s.x, exact.x, epsilon = 1e-15);
        assert_relative_eq!(s.phi, exact.phi, epsilon = 1e-15);

        let n = NoiseConfig::new(0.3, 0.05, 0.2, 0.01).unwrap();
        let a = sample_motion(&Pose::default(), &u, &n, &p, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_motion(&Pose::default(), &u, &n, &p, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }

    fn mean_and_se(xs: &[f64]) -> (f64, f64) {
        let k = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / k;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
        (mean, (var / k).sqrt())
    }

    #[test]
    fn sample_motion_mean_matches_noiseless_step() {
        let p = params();
        let u = ControlInput::new(3.0, 0.0);
        let k = 100_000;

        // small steer noise: the E[cos dγ] bias is negligible against the SE
        let n = NoiseConfig::new(0.3, 0.5f64.to_radians(), 0.2, 0.01).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let xs: Vec<f64> = (0..k).map(|_| sample_motion(&Pose::default(), &u, &n, &p, &mut rng).unwrap().x).collect();
        let (mean, se) = mean_and_se(&xs);
        assert!((mean - 0.075).abs() < 3.0 * se, "mean {mean} se {se}");

        // 3° steer noise: compare against E[x'] = dt·V·exp(-σγ²/2)
        let sg = 3f64.to_radians();
        let n = NoiseConfig::new(0.3, sg, 0.2, 0.01).unwrap();
        let xs: Vec<f64> = (0..k).map(|_| sample_motion(&Pose::default(), &u, &n, &p, &mut rng).unwrap().x).collect();
        let (mean, se) = mean_and_se(&xs);
        let expected = 0.075 * (-0.5 * sg * sg).exp();
        assert!((mean - expected).abs() < 3.0 * se, "mean {mean} expected {expected} se {se}");
    }

    #[test]
    fn predict_examples() {
        let z = predict_observation(&Pose::default(), &Vec2::new(3.0, 4.0)).unwrap();
        assert_relative_eq!(z[0], 5.0);
        assert_relative_eq!(z[1], 0.927_295_218_001_612_2, epsilon = 1e-15);
        let z = predict_observation(&Pose::default(), &Vec2::new(1.0, 0.0)).unwrap();
        assert_eq!((z[0], z[1]), (1.0, 0.0));
        let z = predict_observation(&Pose::new(1.0, 1.0, FRAC_PI_2), &Vec2::new(1.0, 3.0)).unwrap();
        assert_relative_eq!(z[0], 2.0);
        assert!(z[1].abs() < 1e-15);
        assert!(predict_observation(&Pose::new(1.0, 1.0, 0.0), &Vec2::new(1.0, 1.0)).is_err());
    }

    #[test]
    fn jacobian_examples() {
        let j = obs_jacobian_landmark(&Pose::default(), &Vec2::new(1.0, 0.0)).unwrap();
        assert_eq!(j, Mat2::identity());
        let j = obs_jacobian_landmark(&Pose::default(), &Vec2::new(0.0, 2.0)).unwrap();
        let expected = Mat2::new(0.0, 1.0, -0.5, 0.0);
        assert!((j - expected).abs().max() < 1e-15);
        assert!(rel_err(&j, &fd_jacobian(&Pose::default(), &Vec2::new(0.0, 2.0))) < 1e-6);
        assert!(obs_jacobian_landmark(&Pose::default(), &Vec2::zeros()).is_err());
    }

    #[test]
    fn inverse_examples() {
        let (lm, _) =
            inverse_observation(&Pose::default(), &Observation::new(5.0, 0.927_295_218_001_612_2, 0)).unwrap();
        assert_relative_eq!(lm.x, 3.0, epsilon = 1e-12);
        assert_relative_eq!(lm.y, 4.0, epsilon = 1e-12);
        assert!(inverse_observation(&Pose::default(), &Observation::new(0.0, 0.0, 0)).is_err());
    }

    #[test]
    fn random_configurations_match_finite_differences_and_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let pose =
                Pose::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-PI..PI));
            let z = Observation::new(rng.random_range(0.5..20.0), rng.random_range(-PI..PI), 0);
            let (lm, jz) = inverse_observation(&pose, &z).unwrap();

            let back = predict_observation(&pose, &lm).unwrap();
            assert!((back[0] - z.range).abs() < 1e-9);
            assert!(wrap(back[1] - z.bearing).abs() < 1e-9);
            assert!(back[1] > -PI && back[1] <= PI);

            assert!(rel_err(&jz, &fd_inverse_jacobian(&pose, &z)) < 1e-6);
            let g = obs_jacobian_landmark(&pose, &lm).unwrap();
            assert!(rel_err(&g, &fd_jacobian(&pose, &lm)) < 1e-6);
        }
    }
}
