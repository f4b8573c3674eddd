//! FastSLAM particle filter: motion-prior sampling, optional swarm
//! refinement, likelihood weighting, per-landmark EKF map updates, optional
//! noise adaptation, and N_eff-gated systematic resampling.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::anfis::{AdaptationRecord, AdaptiveR, AnfisConfig};
use crate::ekf::{init_landmark, innovation, predicted_measurement, update_landmark};
use crate::error::{Result, SlamError};
use crate::models::sample_motion;
use crate::pso::{pso_refine, PsoOptions};
use crate::types::{
    det2, inv2, wrap, ControlInput, LandmarkEstimate, LandmarkId, Mat2, NoiseConfig, Observation, Particle, Pose, Vec2,
    VehicleParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// FastSLAM 1.0 with the motion prior as proposal.
    Baseline,
    /// Swarm-refined proposal, fixed measurement noise.
    Pso,
    /// Swarm-refined proposal with adaptive measurement noise.
    PsoAnfis,
}

impl Variant {
    pub fn uses_pso(self) -> bool {
        !matches!(self, Variant::Baseline)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Pso => "pso",
            Variant::PsoAnfis => "pso_anfis",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = SlamError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "baseline" => Ok(Variant::Baseline),
            "pso" => Ok(Variant::Pso),
            "pso_anfis" => Ok(Variant::PsoAnfis),
            other => Err(SlamError::Config(format!("unknown variant '{other}' (expected baseline, pso or pso_anfis)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub num_particles: usize,
    pub variant: Variant,
    /// Resample when N_eff falls below this fraction of M.
    pub resample_fraction: f64,
    pub pso_opts: PsoOptions,
    /// Measurement noise the filter assumes (initial value when adaptive).
    pub r_initial: Mat2,
    pub anfis: AnfisConfig,
}

impl FilterConfig {
    pub fn new(num_particles: usize, variant: Variant, r_initial: Mat2) -> Self {
        FilterConfig {
            num_particles,
            variant,
            resample_fraction: 0.75,
            pso_opts: PsoOptions::default(),
            r_initial,
            anfis: AnfisConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_particles == 0 {
            return Err(SlamError::Config("num_particles must be at least 1".into()));
        }
        if !(self.resample_fraction > 0.0 && self.resample_fraction <= 1.0) {
            return Err(SlamError::Config("resample_fraction must lie in (0, 1]".into()));
        }
        if self.pso_opts.max_iters == 0 || !(self.pso_opts.fitness_threshold >= 0.0) {
            return Err(SlamError::Config("pso max_iters must be >= 1 and fitness_threshold >= 0".into()));
        }
        if !(self.r_initial[(0, 0)] > 0.0 && self.r_initial[(1, 1)] > 0.0) {
            return Err(SlamError::Config("initial R must be positive definite".into()));
        }
        Ok(())
    }

    fn refines(&self) -> bool {
        self.variant.uses_pso() && self.pso_opts.enabled
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub particles: Vec<Particle>,
    pub adaptive_r: Option<AdaptiveR>,
    pub step_count: usize,
}

impl FilterState {
    /// All particles start at the known initial pose with empty maps.
    pub fn new(cfg: &FilterConfig, initial: Pose) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.num_particles;
        let adaptive_r = match cfg.variant {
            Variant::PsoAnfis => Some(AdaptiveR::new(&cfg.r_initial, &cfg.anfis)?),
            _ => None,
        };
        Ok(FilterState { particles: vec![Particle::new(initial, 1.0 / m as f64); m], adaptive_r, step_count: 0 })
    }

    /// The measurement covariance currently in force.
    pub fn r_matrix(&self, cfg: &FilterConfig) -> Mat2 {
        self.adaptive_r.as_ref().map_or(cfg.r_initial, |a| a.r_current())
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }
}

/// Per-epoch diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReport {
    pub observed: bool,
    /// N_eff after weighting, before any resampling.
    pub neff: f64,
    pub resampled: bool,
    pub degenerate_weights: bool,
    pub pso_iters: usize,
    pub gbest_fitness: f64,
    pub adaptation: Option<AdaptationRecord>,
}

impl StepReport {
    fn prediction_only(neff: f64) -> Self {
        StepReport {
            observed: false,
            neff,
            resampled: false,
            degenerate_weights: false,
            pso_iters: 0,
            gbest_fitness: f64::NAN,
            adaptation: None,
        }
    }
}

/// Propagates every particle through the motion model with independent noise.
pub fn predict<R: Rng + ?Sized>(
    state: &mut FilterState,
    u: &ControlInput,
    n: &NoiseConfig,
    p: &VehicleParams,
    rng: &mut R,
) -> Result<()> {
    for particle in &mut state.particles {
        particle.pose = sample_motion(&particle.pose, u, n, p, rng)?;
    }
    Ok(())
}

/// Log of the measurement likelihood of a scan given a particle's pose and map.
/// Observations of landmarks absent from the map contribute nothing.
pub fn log_likelihood(particle: &Particle, obs: &[Observation], r_mat: &Mat2) -> Result<f64> {
    let mut total = 0.0;
    for z in obs {
        let Some(est) = particle.landmarks.get(&z.landmark_id) else { continue };
        let (z_hat, _, s) = predicted_measurement(est, &particle.pose, r_mat)?;
        let nu = innovation(z, &z_hat);
        let inv = inv2(&s)?;
        let m2 = (nu.transpose() * inv * nu)[(0, 0)];
        total += -0.5 * m2 - (2.0 * PI).ln() - 0.5 * det2(&s).ln();
    }
    Ok(total)
}

/// Product over known landmarks of bivariate Gaussian densities of the
/// innovations; 1 when no observation refers to a mapped landmark.
pub fn likelihood(particle: &Particle, obs: &[Observation], r_mat: &Mat2) -> Result<f64> {
    log_likelihood(particle, obs, r_mat).map(f64::exp)
}

/// Reweights the particle set. With `recursive` the prior weight is kept
/// (w ← w·L), otherwise it is replaced by the likelihood. Returns `true` on a
/// degenerate epoch (no particle with positive weight), after which weights
/// are reset to uniform.
pub fn weight_update(state: &mut FilterState, obs: &[Observation], r_mat: &Mat2, recursive: bool) -> Result<bool> {
    let log_w = state
        .particles
        .iter()
        .map(|p| {
            let ll = log_likelihood(p, obs, r_mat)?;
            Ok(if recursive { p.weight.ln() + ll } else { ll })
        })
        .collect::<Result<Vec<f64>>>()?;
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let m = state.particles.len() as f64;
    if !max.is_finite() {
        for p in &mut state.particles {
            p.weight = 1.0 / m;
        }
        return Ok(true);
    }
    let unnorm: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = unnorm.iter().sum();
    for (p, w) in state.particles.iter_mut().zip(unnorm) {
        p.weight = w / total;
    }
    Ok(false)
}

/// `1 / Σ wᵢ²` for normalized weights.
pub fn effective_sample_size(weights: &[f64]) -> Result<f64> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || weights.iter().any(|w| !(*w >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(SlamError::Precondition(format!("weights must be non-negative and sum to 1 (sum = {sum})")));
    }
    Ok(1.0 / weights.iter().map(|w| w * w).sum::<f64>())
}

/// Indices chosen by low-variance resampling with a single uniform offset.
pub fn systematic_indices(weights: &[f64], offset: f64) -> Vec<usize> {
    let m = weights.len();
    let step = 1.0 / m as f64;
    let mut out = Vec::with_capacity(m);
    let mut cumulative = weights[0];
    let mut i = 0;
    for k in 0..m {
        let target = (offset + k as f64) * step;
        while target >= cumulative && i + 1 < m {
            i += 1;
            cumulative += weights[i];
        }
        out.push(i);
    }
    out
}

/// Systematic resampling; duplicated particles get independent map copies and
/// all weights become 1/M.
pub fn resample_systematic<R: Rng + ?Sized>(state: &mut FilterState, rng: &mut R) {
    let weights = state.weights();
    let offset: f64 = rng.random();
    let picks = systematic_indices(&weights, offset);
    let m = weights.len() as f64;
    state.particles = picks
        .into_iter()
        .map(|i| {
            let mut p = state.particles[i].clone();
            p.weight = 1.0 / m;
            p
        })
        .collect();
}

/// Innovations and theoretical covariances of `particle` against its prior map.
fn innovations_for(particle: &Particle, obs: &[Observation], r_mat: &Mat2) -> Result<Vec<(Vec2, Mat2)>> {
    let mut out = Vec::new();
    for z in obs {
        if let Some(est) = particle.landmarks.get(&z.landmark_id) {
            let (z_hat, _, s) = predicted_measurement(est, &particle.pose, r_mat)?;
            out.push((innovation(z, &z_hat), s));
        }
    }
    Ok(out)
}

fn update_map(particle: &mut Particle, obs: &[Observation], r_mat: &Mat2) -> Result<()> {
    for z in obs {
        let next = match particle.landmarks.get(&z.landmark_id) {
            Some(est) => update_landmark(est, &particle.pose, z, r_mat)?.estimate,
            None => init_landmark(&particle.pose, z, r_mat)?,
        };
        particle.landmarks.insert(z.landmark_id, next);
    }
    Ok(())
}

fn best_index(particles: &[Particle]) -> usize {
    let mut best = 0;
    for (i, p) in particles.iter().enumerate() {
        if p.weight > particles[best].weight {
            best = i;
        }
    }
    best
}

/// One control step; when `obs` is present this is also an observation epoch.
pub fn step<R: Rng + ?Sized>(
    state: &mut FilterState,
    u: &ControlInput,
    obs: Option<&[Observation]>,
    cfg: &FilterConfig,
    n: &NoiseConfig,
    p: &VehicleParams,
    rng: &mut R,
) -> Result<StepReport> {
    predict(state, u, n, p, rng)?;
    state.step_count += 1;
    let Some(obs) = obs else {
        return Ok(StepReport::prediction_only(effective_sample_size(&state.weights())?));
    };

    let r_mat = state.r_matrix(cfg);
    let mut report = StepReport::prediction_only(f64::NAN);
    report.observed = true;

    let refine = cfg.refines() && !obs.is_empty();
    if refine {
        let refined = pso_refine(&state.particles, obs, &r_mat, &cfg.pso_opts, rng)?;
        for (particle, pose) in state.particles.iter_mut().zip(refined.poses) {
            particle.pose = pose;
        }
        report.pso_iters = refined.iterations;
        report.gbest_fitness = refined.gbest_fitness;
    }

    // refined poses are no longer draws from the prior: weight by likelihood alone
    report.degenerate_weights = weight_update(state, obs, &r_mat, !refine)?;

    if let Some(adaptive) = state.adaptive_r.as_mut() {
        let best = &state.particles[best_index(&state.particles)];
        let samples = innovations_for(best, obs, &r_mat)?;
        report.adaptation = adaptive.adapt_epoch(&samples)?;
    }

    let r_mat = state.r_matrix(cfg);
    for particle in &mut state.particles {
        update_map(particle, obs, &r_mat)?;
    }

    let weights = state.weights();
    report.neff = effective_sample_size(&weights)?;
    if report.neff < cfg.resample_fraction * weights.len() as f64 {
        resample_systematic(state, rng);
        report.resampled = true;
    }
    Ok(report)
}

/// Weighted point estimate with per-component weighted variances.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub pose: Pose,
    /// Weighted sample variance of (x, y, φ) over the particle set.
    pub variance: [f64; 3],
    /// Map of the highest-weight particle, ordered by landmark id.
    pub map: Vec<(LandmarkId, LandmarkEstimate)>,
}

pub fn estimate(state: &FilterState) -> Estimate {
    let (mut x, mut y, mut s, mut c) = (0.0, 0.0, 0.0, 0.0);
    for p in &state.particles {
        x += p.weight * p.pose.x;
        y += p.weight * p.pose.y;
        s += p.weight * p.pose.phi.sin();
        c += p.weight * p.pose.phi.cos();
    }
    let phi = s.atan2(c);
    let mut variance = [0.0; 3];
    for p in &state.particles {
        variance[0] += p.weight * (p.pose.x - x).powi(2);
        variance[1] += p.weight * (p.pose.y - y).powi(2);
        variance[2] += p.weight * wrap(p.pose.phi - phi).powi(2);
    }
    let best = &state.particles[best_index(&state.particles)];
    Estimate {
        pose: Pose { x, y, phi: wrap(phi) },
        variance,
        map: best.landmarks.iter().map(|(id, lm)| (*id, *lm)).collect(),
    }
}
