//! Ground-truth world: a waypoint-following vehicle with noisy actuation and a
//! range-bearing sensor with known data association.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlamError};
use crate::models::{gaussian, motion_step, predict_observation};
use crate::types::{wrap, ControlInput, NoiseConfig, Observation, Pose, Vec2, VehicleParams};

/// The bundled closed-loop course.
pub const DEFAULT_SCENARIO: &str = include_str!("../scenarios/loop17.toml");

/// On-disk scenario layout. Angles are in degrees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub landmarks: Vec<[f64; 2]>,
    pub waypoints: Vec<[f64; 2]>,
    #[serde(default = "defaults::wheelbase")]
    pub wheelbase: f64,
    #[serde(default = "defaults::dt_control")]
    pub dt_control: f64,
    #[serde(default = "defaults::obs_period_steps")]
    pub obs_period_steps: usize,
    #[serde(default = "defaults::max_steer_deg")]
    pub max_steer_deg: f64,
    #[serde(default = "defaults::sensor_range")]
    pub sensor_range: f64,
    #[serde(default = "defaults::sensor_fov_deg")]
    pub sensor_fov_deg: f64,
    #[serde(default = "defaults::speed")]
    pub speed: f64,
    #[serde(default = "defaults::sigma_v")]
    pub sigma_v: f64,
    #[serde(default = "defaults::sigma_gamma_deg")]
    pub sigma_gamma_deg: f64,
    #[serde(default = "defaults::sigma_r")]
    pub sigma_r: f64,
    #[serde(default = "defaults::sigma_theta_deg")]
    pub sigma_theta_deg: f64,
    #[serde(default = "defaults::loops")]
    pub loops: usize,
    #[serde(default = "defaults::waypoint_radius")]
    pub waypoint_radius: f64,
}

mod defaults {
    pub fn wheelbase() -> f64 {
        4.0
    }
    pub fn dt_control() -> f64 {
        0.025
    }
    pub fn obs_period_steps() -> usize {
        8
    }
    pub fn max_steer_deg() -> f64 {
        30.0
    }
    pub fn sensor_range() -> f64 {
        20.0
    }
    pub fn sensor_fov_deg() -> f64 {
        180.0
    }
    pub fn speed() -> f64 {
        3.0
    }
    pub fn sigma_v() -> f64 {
        0.3
    }
    pub fn sigma_gamma_deg() -> f64 {
        3.0
    }
    pub fn sigma_r() -> f64 {
        0.2
    }
    pub fn sigma_theta_deg() -> f64 {
        1.0
    }
    pub fn loops() -> usize {
        1
    }
    pub fn waypoint_radius() -> f64 {
        1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub landmarks: Vec<Vec2>,
    pub waypoints: Vec<Vec2>,
    pub vehicle: VehicleParams,
    /// True actuation and sensor noise; zero entries are allowed here.
    pub noise: NoiseConfig,
    pub commanded_speed: f64,
    pub waypoint_radius: f64,
    pub loops: usize,
}

impl Scenario {
    pub fn from_file(f: ScenarioFile) -> Result<Self> {
        let sc = Scenario {
            landmarks: f.landmarks.iter().map(|p| Vec2::new(p[0], p[1])).collect(),
            waypoints: f.waypoints.iter().map(|p| Vec2::new(p[0], p[1])).collect(),
            vehicle: VehicleParams {
                wheelbase_b: f.wheelbase,
                dt_control: f.dt_control,
                obs_period_steps: f.obs_period_steps,
                max_steer: f.max_steer_deg.to_radians(),
                sensor_max_range: f.sensor_range,
                sensor_fov: f.sensor_fov_deg.to_radians(),
            },
            noise: NoiseConfig {
                sigma_v: f.sigma_v,
                sigma_gamma: f.sigma_gamma_deg.to_radians(),
                sigma_r: f.sigma_r,
                sigma_theta: f.sigma_theta_deg.to_radians(),
            },
            commanded_speed: f.speed,
            waypoint_radius: f.waypoint_radius,
            loops: f.loops,
        };
        sc.validate()?;
        Ok(sc)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let f: ScenarioFile = toml::from_str(text).map_err(|e| SlamError::Config(e.to_string()))?;
        Self::from_file(f)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| SlamError::Io { path: path.display().to_string(), source })?;
        let f: ScenarioFile = toml::from_str(&text)
            .map_err(|e| SlamError::Parse { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_file(f)
    }

    pub fn bundled() -> Self {
        Self::from_toml_str(DEFAULT_SCENARIO).expect("bundled scenario is valid")
    }

    pub fn validate(&self) -> Result<()> {
        self.vehicle.validate()?;
        if self.landmarks.is_empty() || self.waypoints.len() < 2 {
            return Err(SlamError::Config("scenario needs at least 1 landmark and 2 waypoints".into()));
        }
        let finite = |v: &Vec2| v.iter().all(|c| c.is_finite());
        if !self.landmarks.iter().chain(&self.waypoints).all(finite) {
            return Err(SlamError::Config("non-finite scenario coordinates".into()));
        }
        if !(self.commanded_speed > 0.0) || !(self.waypoint_radius > 0.0) || self.loops == 0 {
            return Err(SlamError::Config("speed, waypoint_radius and loops must be positive".into()));
        }
        let n = &self.noise;
        if ![n.sigma_v, n.sigma_gamma, n.sigma_r, n.sigma_theta].iter().all(|s| s.is_finite() && *s >= 0.0) {
            return Err(SlamError::Config("noise standard deviations must be non-negative".into()));
        }
        Ok(())
    }

    /// Start at the first waypoint facing the second.
    pub fn initial_pose(&self) -> Pose {
        let (a, b) = (self.waypoints[0], self.waypoints[1]);
        Pose::new(a.x, a.y, (b.y - a.y).atan2(b.x - a.x))
    }

    /// Length of one closed traversal of the waypoint list.
    pub fn loop_length(&self) -> f64 {
        let n = self.waypoints.len();
        (0..n).map(|i| (self.waypoints[(i + 1) % n] - self.waypoints[i]).norm()).sum()
    }

    /// Safety cap on control steps: three times the nominal traversal time.
    pub fn max_steps(&self) -> usize {
        let nominal = self.loops as f64 * self.loop_length() / (self.commanded_speed * self.vehicle.dt_control);
        (3.0 * nominal).ceil() as usize + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub true_pose: Pose,
    /// Index of the waypoint currently steered toward.
    pub waypoint_index: usize,
    pub laps_completed: usize,
    pub step: usize,
    pub terminal: bool,
}

impl SimState {
    pub fn new(sc: &Scenario) -> Self {
        SimState { true_pose: sc.initial_pose(), waypoint_index: 1, laps_completed: 0, step: 0, terminal: false }
    }

    pub fn is_observation_step(&self, sc: &Scenario) -> bool {
        self.step > 0 && self.step.is_multiple_of(sc.vehicle.obs_period_steps)
    }
}

/// Steering command toward the current waypoint, advancing to the next one
/// on arrival. The course is closed: after the last waypoint the vehicle
/// returns to the first, which completes a lap. Returns `None` once all laps
/// are done.
pub fn control_step(sim: &mut SimState, sc: &Scenario) -> Option<ControlInput> {
    if sim.terminal {
        return None;
    }
    let pos = sim.true_pose.position();
    if (sc.waypoints[sim.waypoint_index] - pos).norm() <= sc.waypoint_radius {
        if sim.waypoint_index == 0 {
            sim.laps_completed += 1;
            if sim.laps_completed >= sc.loops {
                sim.terminal = true;
                return None;
            }
        }
        sim.waypoint_index = (sim.waypoint_index + 1) % sc.waypoints.len();
    }
    let target = sc.waypoints[sim.waypoint_index];
    let bearing = (target.y - pos.y).atan2(target.x - pos.x);
    let max = sc.vehicle.max_steer;
    let gamma = wrap(bearing - sim.true_pose.phi).clamp(-max, max);
    Some(ControlInput::new(sc.commanded_speed, gamma))
}

/// Moves the true vehicle with actuation noise drawn from the scenario.
pub fn advance_truth<R: Rng + ?Sized>(sim: &mut SimState, u: &ControlInput, sc: &Scenario, rng: &mut R) -> Result<()> {
    let dv = gaussian(rng, sc.noise.sigma_v);
    let dg = gaussian(rng, sc.noise.sigma_gamma);
    sim.true_pose = motion_step(&sim.true_pose, u, (dv, dg), &sc.vehicle)?;
    sim.step += 1;
    Ok(())
}

/// Noisy scan of every landmark inside the sensor's range and field of view.
/// Gating uses the true geometry; noise is added afterwards.
pub fn sense<R: Rng + ?Sized>(sim: &SimState, sc: &Scenario, rng: &mut R) -> Result<Vec<Observation>> {
    let half_fov = 0.5 * sc.vehicle.sensor_fov;
    let mut out = Vec::new();
    for (id, lm) in sc.landmarks.iter().enumerate() {
        let d = lm - sim.true_pose.position();
        if d.norm() > sc.vehicle.sensor_max_range || d.norm() == 0.0 {
            continue;
        }
        let z = predict_observation(&sim.true_pose, lm)?;
        if z[1].abs() > half_fov {
            continue;
        }
        let wr = gaussian(rng, sc.noise.sigma_r);
        let wt = gaussian(rng, sc.noise.sigma_theta);
        out.push(Observation::new(z[0] + wr, z[1] + wt, id));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn straight(noise: NoiseConfig) -> Scenario {
        Scenario {
            landmarks: vec![Vec2::new(10.0, 5.0)],
            waypoints: vec![Vec2::new(0.0, 0.0), Vec2::new(100.0, 0.0)],
            vehicle: VehicleParams::default(),
            noise,
            commanded_speed: 3.0,
            waypoint_radius: 1.0,
            loops: 1,
        }
    }

    fn quiet() -> NoiseConfig {
        NoiseConfig { sigma_v: 0.0, sigma_gamma: 0.0, sigma_r: 0.0, sigma_theta: 0.0 }
    }

    #[test]
    fn bundled_scenario_shape() {
        let sc = Scenario::bundled();
        assert_eq!(sc.waypoints.len(), 17);
        assert_eq!(sc.landmarks.len(), 35);
        let (xs, ys): (Vec<f64>, Vec<f64>) = sc.waypoints.iter().map(|w| (w.x, w.y)).unzip();
        let span = |v: &[f64]| v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
        assert!((150.0..260.0).contains(&span(&xs)) && (70.0..140.0).contains(&span(&ys)));
    }

    #[test]
    fn scenario_parsing_and_validation() {
        let sc = Scenario::from_toml_str("landmarks = [[1.0, 2.0]]\nwaypoints = [[0.0, 0.0], [5.0, 0.0]]\n").unwrap();
        assert_eq!(sc.vehicle, VehicleParams::default());
        assert!((sc.noise.sigma_gamma - 3f64.to_radians()).abs() < 1e-15);
        assert!(Scenario::from_toml_str("landmarks = []\nwaypoints = [[0.0, 0.0], [5.0, 0.0]]\n").is_err());
        assert!(Scenario::from_toml_str("landmarks = [[1.0, 2.0]]\nwaypoints = [[0.0, 0.0]]\n").is_err());
        assert!(Scenario::from_toml_str(
            "landmarks = [[1.0, 2.0]]\nwaypoints = [[0.0, 0.0], [5.0, 0.0]]\nspeed = 0.0\n"
        )
        .is_err());
        assert!(Scenario::from_toml_str("landmarks = [[1.0, 2.0]]\nwaypoints = [[0.0, 0.0], [5.0, 0.0]]\nbogus = 1\n")
            .is_err());
        assert!(Scenario::load(Path::new("/nonexistent/scenario.toml")).is_err());
    }

    #[test]
    fn control_examples() {
        let sc = straight(quiet());
        let mut sim = SimState::new(&sc);
        let u = control_step(&mut sim, &sc).unwrap();
        assert_eq!((u.v, u.gamma), (3.0, 0.0));

        sim.true_pose = Pose::new(50.0, 0.0, -PI / 2.0);
        let u = control_step(&mut sim, &sc).unwrap();
        assert!((u.gamma - 30f64.to_radians()).abs() < 1e-15);

        sim.true_pose = Pose::new(99.5, 0.0, 0.0);
        control_step(&mut sim, &sc).unwrap();
        assert_eq!(sim.waypoint_index, 0);
    }

    #[test]
    fn lap_completion_terminates() {
        let sc = straight(quiet());
        let mut sim = SimState::new(&sc);
        sim.waypoint_index = 0;
        sim.true_pose = Pose::new(0.5, 0.0, 0.0);
        assert!(control_step(&mut sim, &sc).is_none());
        assert!(sim.terminal);
        assert!(control_step(&mut sim, &sc).is_none());
    }

    #[test]
    fn noiseless_truth_is_straight_line() {
        let sc = straight(quiet());
        let mut sim = SimState::new(&sc);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..400 {
            let u = control_step(&mut sim, &sc).unwrap();
            advance_truth(&mut sim, &u, &sc, &mut rng).unwrap();
        }
        assert!(sim.true_pose.y.abs() < 1e-12 && sim.true_pose.phi.abs() < 1e-12);
        assert!((sim.true_pose.x - 30.0).abs() < 1e-9);
        assert_eq!(sim.step, 400);
    }

    #[test]
    fn bundled_course_completes_within_cap() {
        let sc = Scenario::bundled();
        let mut sim = SimState::new(&sc);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        while let Some(u) = control_step(&mut sim, &sc) {
            advance_truth(&mut sim, &u, &sc, &mut rng).unwrap();
            assert!(sim.step < sc.max_steps());
        }
        assert!(sim.terminal);
        assert!((sim.true_pose.position() - sc.waypoints[0]).norm() <= sc.waypoint_radius);
    }

    #[test]
    fn truth_is_reproducible() {
        let sc = Scenario::bundled();
        let run = |seed| {
            let mut sim = SimState::new(&sc);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..500 {
                let u = control_step(&mut sim, &sc).unwrap();
                advance_truth(&mut sim, &u, &sc, &mut rng).unwrap();
            }
            sim
        };
        assert_eq!(run(3), run(3));
        assert_ne!(run(3), run(4));
    }

    #[test]
    fn one_step_mean_matches_noiseless() {
        let sc =
            straight(NoiseConfig { sigma_v: 0.3, sigma_gamma: 3f64.to_radians(), sigma_r: 0.2, sigma_theta: 0.01 });
        let start = SimState { true_pose: Pose::new(0.0, 0.0, 0.2), ..SimState::new(&sc) };
        let u = ControlInput::new(3.0, 0.1);
        let exact = motion_step(&start.true_pose, &u, (0.0, 0.0), &sc.vehicle).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|_| {
                let mut s = start.clone();
                advance_truth(&mut s, &u, &sc, &mut rng).unwrap();
                s.true_pose.x
            })
            .collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
        // cos of a perturbed heading biases the mean by a factor exp(-σ²/2)
        let sigma_eff = 3f64.to_radians();
        let expected = exact.x - 3.0 * 0.025 * (0.3f64).cos() * (1.0 - (-sigma_eff.powi(2) / 2.0).exp());
        assert!((mean - expected).abs() < 3.0 * sd / (n as f64).sqrt(), "{mean} vs {expected}");
    }

    #[test]
    fn sensing_examples() {
        let mut sc = straight(quiet());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut sim = SimState::new(&sc);

        sim.true_pose = Pose::new(80.0, 0.0, 0.0);
        assert!(sense(&sim, &sc, &mut rng).unwrap().is_empty());

        // landmark directly behind
        sim.true_pose = Pose::new(15.0, 5.0, 0.0);
        assert!(sense(&sim, &sc, &mut rng).unwrap().is_empty());

        sim.true_pose = Pose::new(2.0, 1.0, 0.3);
        let obs = sense(&sim, &sc, &mut rng).unwrap();
        let z = predict_observation(&sim.true_pose, &sc.landmarks[0]).unwrap();
        assert_eq!(obs, vec![Observation::new(z[0], z[1], 0)]);

        sc.noise.sigma_r = 0.2;
        sc.noise.sigma_theta = 1f64.to_radians();
        let obs = sense(&sim, &sc, &mut rng).unwrap();
        assert_eq!(obs.len(), 1);
        assert_ne!(obs[0].range, z[0]);
    }

    #[test]
    fn emitted_scans_respect_gating() {
        let sc = Scenario::bundled();
        let mut sim = SimState::new(&sc);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let slack = 0.5 * sc.vehicle.sensor_fov + 4.0 * sc.noise.sigma_theta;
        while let Some(u) = control_step(&mut sim, &sc) {
            advance_truth(&mut sim, &u, &sc, &mut rng).unwrap();
            if sim.is_observation_step(&sc) {
                let obs = sense(&sim, &sc, &mut rng).unwrap();
                assert!(obs.len() <= sc.landmarks.len());
                for z in obs {
                    assert!(z.landmark_id < sc.landmarks.len());
                    assert!(z.bearing.abs() <= slack);
                }
            }
        }
    }
}
