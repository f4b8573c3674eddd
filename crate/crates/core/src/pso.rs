//! Gaussian particle-swarm refinement of pose samples.
//!
//! The swarm uses no inertia, no acceleration constants and no velocity
//! clamp; each attraction term is scaled by an independent `|N(0,1)|` draw.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ekf::{innovation, predicted_measurement};
use crate::error::Result;
use crate::types::{inv2, wrap, LandmarkMap, Mat2, Observation, Particle, Pose};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PsoOptions {
    pub max_iters: usize,
    /// Per-observation threshold; the effective stop level is this value
    /// times the number of observations that contribute to the fitness.
    pub fitness_threshold: f64,
    pub enabled: bool,
}

impl Default for PsoOptions {
    fn default() -> Self {
        // 5.99: 95% quantile of χ² with 2 degrees of freedom
        PsoOptions { max_iters: 10, fitness_threshold: 5.99, enabled: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub positions: Vec<Pose>,
    pub velocities: Vec<[f64; 3]>,
    pub pbest: Vec<(Pose, f64)>,
    pub gbest: (Pose, f64),
}

impl SwarmState {
    /// Evaluates every starting pose and seeds the best-so-far records with
    /// zero velocities.
    pub fn init<F>(positions: Vec<Pose>, mut evaluate: F) -> Result<Self>
    where
        F: FnMut(usize, &Pose) -> Result<f64>,
    {
        assert!(!positions.is_empty(), "swarm needs at least one member");
        let pbest =
            positions.iter().enumerate().map(|(i, p)| evaluate(i, p).map(|f| (*p, f))).collect::<Result<Vec<_>>>()?;
        let gbest = best_of(&pbest);
        Ok(SwarmState { velocities: vec![[0.0; 3]; positions.len()], positions, pbest, gbest })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

// first minimum wins so ties resolve by index
fn best_of(pbest: &[(Pose, f64)]) -> (Pose, f64) {
    let mut best = pbest[0];
    for cand in &pbest[1..] {
        if cand.1 < best.1 {
            best = *cand;
        }
    }
    best
}

/// Sum over previously mapped landmarks of the squared Mahalanobis distance
/// between the measurement and its prediction from `pose`.
///
/// Observations of landmarks absent from `landmarks` are skipped.
pub fn fitness(pose: &Pose, landmarks: &LandmarkMap, obs: &[Observation], r_mat: &Mat2) -> Result<f64> {
    let mut total = 0.0;
    for z in obs {
        let Some(est) = landmarks.get(&z.landmark_id) else { continue };
        let (z_hat, _, s) = predicted_measurement(est, pose, r_mat)?;
        let nu = innovation(z, &z_hat);
        total += (nu.transpose() * inv2(&s)? * nu)[(0, 0)];
    }
    Ok(total)
}

/// One Gaussian-PSO iteration drawing its `|N(0,1)|` coefficients from `rng`.
pub fn gaussian_pso_step<F, R>(s: &mut SwarmState, evaluate: F, rng: &mut R) -> Result<()>
where
    F: FnMut(usize, &Pose) -> Result<f64>,
    R: Rng + ?Sized,
{
    pso_step_with_draws(s, evaluate, || {
        let z: f64 = StandardNormal.sample(rng);
        z.abs()
    })
}

/// The PSO iteration with an explicit coefficient source. Coefficients are
/// consumed per particle, per dimension (x, y, φ), cognitive term first.
pub fn pso_step_with_draws<F, D>(s: &mut SwarmState, mut evaluate: F, mut draw: D) -> Result<()>
where
    F: FnMut(usize, &Pose) -> Result<f64>,
    D: FnMut() -> f64,
{
    let g = s.gbest.0;
    for i in 0..s.len() {
        let x = s.positions[i];
        let p = s.pbest[i].0;
        let to_p = [p.x - x.x, p.y - x.y, wrap(p.phi - x.phi)];
        let to_g = [g.x - x.x, g.y - x.y, wrap(g.phi - x.phi)];
        let mut v = [0.0; 3];
        for d in 0..3 {
            let a = draw();
            let b = draw();
            v[d] = a * to_p[d] + b * to_g[d];
        }
        s.velocities[i] = v;
        s.positions[i] = Pose { x: x.x + v[0], y: x.y + v[1], phi: wrap(x.phi + v[2]) };
    }
    // synchronous reduction after all moves
    for i in 0..s.len() {
        let f = evaluate(i, &s.positions[i])?;
        if f < s.pbest[i].1 {
            s.pbest[i] = (s.positions[i], f);
        }
    }
    let best = best_of(&s.pbest);
    if best.1 < s.gbest.1 {
        s.gbest = best;
    }
    Ok(())
}

/// Outcome of a refinement pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineResult {
    /// Refined poses, aligned with the input particles.
    pub poses: Vec<Pose>,
    pub iterations: usize,
    pub gbest_fitness: f64,
}

/// Generic driver: iterate until the global best drops below `threshold`
/// or `max_iters` steps have run. Each member returns to its personal best.
pub fn refine_with<F, R>(
    start: Vec<Pose>,
    mut evaluate: F,
    threshold: f64,
    max_iters: usize,
    rng: &mut R,
) -> Result<RefineResult>
where
    F: FnMut(usize, &Pose) -> Result<f64>,
    R: Rng + ?Sized,
{
    let mut swarm = SwarmState::init(start, &mut evaluate)?;
    let mut iterations = 0;
    while iterations < max_iters && !(swarm.gbest.1 < threshold) {
        gaussian_pso_step(&mut swarm, &mut evaluate, rng)?;
        iterations += 1;
    }
    Ok(RefineResult { poses: swarm.pbest.iter().map(|(p, _)| *p).collect(), iterations, gbest_fitness: swarm.gbest.1 })
}

/// Moves pose samples toward the high-likelihood region of the current scan.
/// Each particle is scored against its own map; maps are never touched.
pub fn pso_refine<R: Rng + ?Sized>(
    particles: &[Particle],
    obs: &[Observation],
    r_mat: &Mat2,
    opts: &PsoOptions,
    rng: &mut R,
) -> Result<RefineResult> {
    let start: Vec<Pose> = particles.iter().map(|p| p.pose).collect();
    if !opts.enabled {
        return Ok(RefineResult { poses: start, iterations: 0, gbest_fitness: f64::NAN });
    }
    // only observations with a prior map entry in some particle contribute
    let known = obs.iter().filter(|z| particles.iter().any(|p| p.landmarks.contains_key(&z.landmark_id))).count();
    let threshold = opts.fitness_threshold * known.max(1) as f64;
    refine_with(start, |i, pose| fitness(pose, &particles[i].landmarks, obs, r_mat), threshold, opts.max_iters, rng)
}
