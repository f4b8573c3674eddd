//! Monte Carlo experiment runner: drives the simulator and a filter in
//! lockstep, scores the estimated path, and writes per-run CSV and summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::anfis::AnfisConfig;
use crate::error::{Result, SlamError};
use crate::filter::{estimate, step, FilterConfig, FilterState, Variant};
use crate::pso::PsoOptions;
use crate::sim::{advance_truth, control_step, sense, Scenario, SimState};
use crate::types::{wrap, NoiseConfig, Pose};

pub const CSV_HEADER: &str =
    "t,true_x,true_y,true_phi,est_x,est_y,est_phi,err_pos,err_phi,neff,resampled,r_range,r_bearing,pso_iters,gbest_fitness";

/// Noise standard deviations as written in configuration files (degrees for angles).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub sigma_v: f64,
    pub sigma_gamma_deg: f64,
    pub sigma_r: f64,
    pub sigma_theta_deg: f64,
}

impl NoiseSpec {
    pub fn to_config(self) -> NoiseConfig {
        NoiseConfig {
            sigma_v: self.sigma_v,
            sigma_gamma: self.sigma_gamma_deg.to_radians(),
            sigma_r: self.sigma_r,
            sigma_theta: self.sigma_theta_deg.to_radians(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    #[serde(default = "default_particles")]
    pub num_particles: usize,
    #[serde(default = "default_variant")]
    pub variant: Variant,
    #[serde(default = "default_resample_fraction")]
    pub resample_fraction: f64,
    #[serde(default)]
    pub pso: PsoOptions,
    #[serde(default)]
    pub anfis: AnfisConfig,
}

fn default_particles() -> usize {
    20
}
fn default_variant() -> Variant {
    Variant::PsoAnfis
}
fn default_resample_fraction() -> f64 {
    0.75
}
fn default_divergence() -> f64 {
    5.0
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            num_particles: default_particles(),
            variant: default_variant(),
            resample_fraction: default_resample_fraction(),
            pso: PsoOptions::default(),
            anfis: AnfisConfig::default(),
        }
    }
}

/// Experiment file layout. `scenario` is resolved relative to the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub scenario: PathBuf,
    pub runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_divergence")]
    pub divergence_threshold: f64,
    #[serde(default)]
    pub filter: FilterSection,
    /// Noise the filter assumes; defaults to the true noise.
    #[serde(default)]
    pub filter_noise: Option<NoiseSpec>,
    /// Overrides the scenario's true noise.
    #[serde(default)]
    pub truth_noise: Option<NoiseSpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub filter: FilterConfig,
    pub filter_noise: NoiseConfig,
    pub runs: usize,
    pub base_seed: u64,
    pub output_dir: Option<PathBuf>,
    /// Final position error (m) above which a run counts as diverged.
    pub divergence_threshold: f64,
}

impl ExperimentConfig {
    /// Filter assumes the true noise; R is taken from it.
    pub fn new(scenario: Scenario, variant: Variant, num_particles: usize, runs: usize, base_seed: u64) -> Self {
        let filter_noise = scenario.noise;
        ExperimentConfig {
            filter: FilterConfig::new(num_particles, variant, filter_noise.r_matrix()),
            scenario,
            filter_noise,
            runs,
            base_seed,
            output_dir: None,
            divergence_threshold: default_divergence(),
        }
    }

    /// Replaces the noise the filter believes, including its R.
    pub fn with_filter_noise(mut self, n: NoiseConfig) -> Self {
        self.filter_noise = n;
        self.filter.r_initial = n.r_matrix();
        self
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.filter.variant = v;
        self
    }

    pub fn with_particles(mut self, m: usize) -> Self {
        self.filter.num_particles = m;
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|source| SlamError::Io { path: path.display().to_string(), source })?;
        let file: ExperimentFile = toml::from_str(&text)
            .map_err(|e| SlamError::Parse { path: path.display().to_string(), message: e.to_string() })?;
        Self::from_file(file, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn from_file(f: ExperimentFile, base_dir: &Path) -> Result<Self> {
        let scenario_path = if f.scenario.is_absolute() { f.scenario.clone() } else { base_dir.join(&f.scenario) };
        let mut scenario = Scenario::load(&scenario_path)?;
        if let Some(t) = f.truth_noise {
            scenario.noise = t.to_config();
            scenario.validate()?;
        }
        let filter_noise = f.filter_noise.map_or(scenario.noise, NoiseSpec::to_config);
        filter_noise.validate()?;
        let filter = FilterConfig {
            num_particles: f.filter.num_particles,
            variant: f.filter.variant,
            resample_fraction: f.filter.resample_fraction,
            pso_opts: f.filter.pso,
            r_initial: filter_noise.r_matrix(),
            anfis: f.filter.anfis,
        };
        let cfg = ExperimentConfig {
            scenario,
            filter,
            filter_noise,
            runs: f.runs,
            base_seed: f.base_seed,
            output_dir: f.output_dir.map(|p| if p.is_absolute() { p } else { base_dir.join(p) }),
            divergence_threshold: f.divergence_threshold,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(SlamError::Config("runs must be at least 1".into()));
        }
        if !(self.divergence_threshold > 0.0) {
            return Err(SlamError::Config("divergence_threshold must be positive".into()));
        }
        self.scenario.validate()?;
        self.filter_noise.validate()?;
        self.filter.validate()
    }

    pub fn seed_for(&self, run: usize) -> u64 {
        self.base_seed.wrapping_add(run as u64)
    }
}

/// Position and heading RMSE between two equally long paths.
pub fn pose_rmse(truth: &[Pose], est: &[Pose]) -> Result<(f64, f64)> {
    if truth.len() != est.len() || truth.is_empty() {
        return Err(SlamError::Precondition(format!(
            "path lengths {} and {} must match and be non-zero",
            truth.len(),
            est.len()
        )));
    }
    let n = truth.len() as f64;
    let (mut pos, mut head) = (0.0, 0.0);
    for (a, b) in truth.iter().zip(est) {
        pos += (a.position() - b.position()).norm_squared();
        head += wrap(a.phi - b.phi).powi(2);
    }
    Ok(((pos / n).sqrt(), (head / n).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Coverage {
    /// Fraction of epochs with |error| ≤ 2σ, for x, y and φ separately.
    pub per_component: [f64; 3],
    /// Fraction of epochs where all three components are inside.
    pub joint: f64,
}

impl Coverage {
    pub fn mean(&self) -> f64 {
        self.per_component.iter().sum::<f64>() / 3.0
    }
}

/// 2σ coverage of estimation errors against per-component variances.
pub fn two_sigma_coverage(truth: &[Pose], est: &[Pose], variances: &[[f64; 3]]) -> Result<Coverage> {
    if truth.len() != est.len() || truth.len() != variances.len() || truth.is_empty() {
        return Err(SlamError::Precondition("coverage inputs must have equal, non-zero length".into()));
    }
    let mut inside = [0usize; 3];
    let mut joint = 0usize;
    for ((a, b), var) in truth.iter().zip(est).zip(variances) {
        let err = [a.x - b.x, a.y - b.y, wrap(a.phi - b.phi)];
        let ok: Vec<bool> = (0..3).map(|k| err[k].abs() <= 2.0 * var[k].max(0.0).sqrt()).collect();
        for k in 0..3 {
            inside[k] += ok[k] as usize;
        }
        joint += ok.iter().all(|o| *o) as usize;
    }
    let n = truth.len() as f64;
    Ok(Coverage { per_component: inside.map(|c| c as f64 / n), joint: joint as f64 / n })
}

/// One CSV row, written at every observation epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRow {
    pub t: f64,
    pub truth: Pose,
    pub est: Pose,
    pub err_pos: f64,
    pub err_phi: f64,
    pub neff: f64,
    pub resampled: bool,
    pub r_diag: [f64; 2],
    pub pso_iters: usize,
    pub gbest_fitness: f64,
}

impl EpochRow {
    fn write_csv(&self, out: &mut String) {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.t,
            self.truth.x,
            self.truth.y,
            self.truth.phi,
            self.est.x,
            self.est.y,
            self.est.phi,
            self.err_pos,
            self.err_phi,
            self.neff,
            self.resampled as u8,
            self.r_diag[0],
            self.r_diag[1],
            self.pso_iters,
            self.gbest_fitness
        );
    }
}

pub fn rows_to_csv(rows: &[EpochRow]) -> String {
    let mut out = String::with_capacity(160 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        r.write_csv(&mut out);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub pos_rmse: f64,
    pub heading_rmse: f64,
    pub coverage: Coverage,
    pub final_pos_error: f64,
    pub diverged: bool,
    pub final_r: [f64; 2],
    pub epochs: usize,
    pub degenerate_epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub summary: RunSummary,
    pub rows: Vec<EpochRow>,
}

/// Executes a single simulation. Truth and sensing draw from one random
/// stream and the filter from another, so every variant sees the same world
/// for a given seed.
pub fn run_single(cfg: &ExperimentConfig, run: usize) -> Result<RunOutput> {
    let sc = &cfg.scenario;
    let seed = cfg.seed_for(run);
    let mut world = ChaCha8Rng::seed_from_u64(seed);
    let mut frng = ChaCha8Rng::seed_from_u64(seed);
    frng.set_stream(1);

    let mut sim = SimState::new(sc);
    let mut state = FilterState::new(&cfg.filter, sim.true_pose)?;
    let mut rows = Vec::new();
    let (mut truth, mut est, mut vars) = (Vec::new(), Vec::new(), Vec::new());
    let mut degenerate_epochs = 0;
    let cap = sc.max_steps();

    while let Some(u) = control_step(&mut sim, sc) {
        if sim.step >= cap {
            return Err(SlamError::Precondition(format!("vehicle did not finish the course within {cap} steps")));
        }
        advance_truth(&mut sim, &u, sc, &mut world)?;
        let obs = if sim.is_observation_step(sc) { Some(sense(&sim, sc, &mut world)?) } else { None };
        let report = step(&mut state, &u, obs.as_deref(), &cfg.filter, &cfg.filter_noise, &sc.vehicle, &mut frng)?;
        if obs.is_none() {
            continue;
        }
        degenerate_epochs += report.degenerate_weights as usize;
        let e = estimate(&state);
        let r = state.r_matrix(&cfg.filter);
        rows.push(EpochRow {
            t: sim.step as f64 * sc.vehicle.dt_control,
            truth: sim.true_pose,
            est: e.pose,
            err_pos: (sim.true_pose.position() - e.pose.position()).norm(),
            err_phi: wrap(sim.true_pose.phi - e.pose.phi),
            neff: report.neff,
            resampled: report.resampled,
            r_diag: [r[(0, 0)], r[(1, 1)]],
            pso_iters: report.pso_iters,
            gbest_fitness: report.gbest_fitness,
        });
        truth.push(sim.true_pose);
        est.push(e.pose);
        vars.push(e.variance);
    }

    let (pos_rmse, heading_rmse) = pose_rmse(&truth, &est)?;
    let coverage = two_sigma_coverage(&truth, &est, &vars)?;
    let last = rows.last().expect("pose_rmse rejects empty paths");
    let summary = RunSummary {
        run,
        seed,
        pos_rmse,
        heading_rmse,
        coverage,
        final_pos_error: last.err_pos,
        diverged: !(last.err_pos <= cfg.divergence_threshold),
        final_r: last.r_diag,
        epochs: rows.len(),
        degenerate_epochs,
    };
    Ok(RunOutput { summary, rows })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub variant: Variant,
    pub num_particles: usize,
    /// Successful runs, in run order.
    pub runs: Vec<RunSummary>,
    /// Runs that stopped with an error: (run index, message).
    pub failures: Vec<(usize, String)>,
    pub mean_pos_rmse: f64,
    pub std_pos_rmse: f64,
    pub mean_heading_rmse: f64,
    pub divergence_rate: f64,
    pub mean_2sigma_coverage: f64,
    pub mean_final_r: [f64; 2],
    pub wall_time_s: f64,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Sample standard deviation (n − 1 denominator); 0 for a single value.
fn sample_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return if v.is_empty() { f64::NAN } else { 0.0 };
    }
    let m = mean(v.iter().copied());
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

impl AggregateReport {
    fn from_runs(cfg: &ExperimentConfig, outcomes: Vec<Result<RunSummary, String>>, wall_time_s: f64) -> Self {
        let mut runs = Vec::new();
        let mut failures = Vec::new();
        for (i, o) in outcomes.into_iter().enumerate() {
            match o {
                Ok(s) => runs.push(s),
                Err(e) => failures.push((i, e)),
            }
        }
        let rmse: Vec<f64> = runs.iter().map(|r| r.pos_rmse).collect();
        // failed runs count as diverged
        let diverged = runs.iter().filter(|r| r.diverged).count() + failures.len();
        AggregateReport {
            variant: cfg.filter.variant,
            num_particles: cfg.filter.num_particles,
            mean_pos_rmse: mean(rmse.iter().copied()),
            std_pos_rmse: sample_std(&rmse),
            mean_heading_rmse: mean(runs.iter().map(|r| r.heading_rmse)),
            divergence_rate: diverged as f64 / cfg.runs as f64,
            mean_2sigma_coverage: mean(runs.iter().map(|r| r.coverage.mean())),
            mean_final_r: [mean(runs.iter().map(|r| r.final_r[0])), mean(runs.iter().map(|r| r.final_r[1]))],
            wall_time_s,
            runs,
            failures,
        }
    }

    pub fn pos_rmse_by_run(&self) -> Vec<(usize, f64)> {
        self.runs.iter().map(|r| (r.run, r.pos_rmse)).collect()
    }

    /// Key/value summary text.
    pub fn summary_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant = {}", self.variant);
        let _ = writeln!(s, "num_particles = {}", self.num_particles);
        let _ = writeln!(s, "runs = {}", self.runs.len() + self.failures.len());
        let _ = writeln!(s, "failed_runs = {}", self.failures.len());
        let _ = writeln!(s, "mean_pos_rmse = {}", self.mean_pos_rmse);
        let _ = writeln!(s, "std_pos_rmse = {}", self.std_pos_rmse);
        let _ = writeln!(s, "mean_heading_rmse = {}", self.mean_heading_rmse);
        let _ = writeln!(s, "divergence_rate = {}", self.divergence_rate);
        let _ = writeln!(s, "mean_2sigma_coverage = {}", self.mean_2sigma_coverage);
        let _ = writeln!(s, "mean_final_r_range = {}", self.mean_final_r[0]);
        let _ = writeln!(s, "mean_final_r_bearing = {}", self.mean_final_r[1]);
        let _ = writeln!(s, "wall_time_s = {}", self.wall_time_s);
        s
    }

    /// One line per successful run.
    pub fn runs_csv(&self) -> String {
        let mut s = String::from("run,seed,pos_rmse,heading_rmse,coverage_x,coverage_y,coverage_phi,final_pos_error,diverged,final_r_range,final_r_bearing,degenerate_epochs\n");
        for r in &self.runs {
            let c = r.coverage.per_component;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.run,
                r.seed,
                r.pos_rmse,
                r.heading_rmse,
                c[0],
                c[1],
                c[2],
                r.final_pos_error,
                r.diverged as u8,
                r.final_r[0],
                r.final_r[1],
                r.degenerate_epochs
            );
        }
        s
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| SlamError::Io { path: path.display().to_string(), source })
}

/// Runs every Monte Carlo trial on the current rayon pool. When an output
/// directory is configured, writes `run_NNN.csv` per run plus `runs.csv` and
/// `summary.txt`. A failing run is recorded and the others continue.
pub fn run_monte_carlo(cfg: &ExperimentConfig) -> Result<AggregateReport> {
    cfg.validate()?;
    let start = Instant::now();
    if let Some(dir) = &cfg.output_dir {
        fs::create_dir_all(dir).map_err(|source| SlamError::Io { path: dir.display().to_string(), source })?;
    }
    let outcomes: Vec<Result<RunSummary, String>> = (0..cfg.runs)
        .into_par_iter()
        .map(|i| {
            let out = run_single(cfg, i).map_err(|e| e.to_string())?;
            if let Some(dir) = &cfg.output_dir {
                write_file(&dir.join(format!("run_{i:03}.csv")), &rows_to_csv(&out.rows)).map_err(|e| e.to_string())?;
            }
            Ok(out.summary)
        })
        .collect();
    let report = AggregateReport::from_runs(cfg, outcomes, start.elapsed().as_secs_f64());
    if let Some(dir) = &cfg.output_dir {
        write_file(&dir.join("runs.csv"), &report.runs_csv())?;
        write_file(&dir.join("summary.txt"), &report.summary_text())?;
    }
    Ok(report)
}

/// [`run_monte_carlo`] on a dedicated pool with the given worker count.
pub fn run_monte_carlo_with_threads(cfg: &ExperimentConfig, threads: usize) -> Result<AggregateReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| SlamError::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_monte_carlo(cfg))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub n: usize,
    /// Mean of `a − b`.
    pub mean_diff: f64,
    pub t_stat: f64,
    /// p-value for the alternative `mean(a − b) < 0`.
    pub p_less: f64,
}

/// One-sided paired t-test that `a` is smaller than `b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(SlamError::Precondition("paired samples need equal length >= 2".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len();
    let m = mean(d.iter().copied());
    let sd = sample_std(&d);
    if sd == 0.0 {
        let p = if m < 0.0 { 0.0 } else { 1.0 };
        return Ok(PairedTest { n, mean_diff: m, t_stat: m.signum() * f64::INFINITY, p_less: p });
    }
    let t = m / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| SlamError::Precondition(e.to_string()))?;
    Ok(PairedTest { n, mean_diff: m, t_stat: t, p_less: dist.cdf(t) })
}

/// Position RMSEs of runs that succeeded in both reports, paired by run index.
pub fn paired_rmse(a: &AggregateReport, b: &AggregateReport) -> (Vec<f64>, Vec<f64>) {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for ra in &a.runs {
        if let Some(rb) = b.runs.iter().find(|r| r.run == ra.run) {
            xs.push(ra.pos_rmse);
            ys.push(rb.pos_rmse);
        }
    }
    (xs, ys)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use std::f64::consts::PI;

    #[test]
    fn rmse_examples() {
        let a = vec![Pose::new(0.0, 0.0, 0.1), Pose::new(1.0, 2.0, -3.0)];
        assert_eq!(pose_rmse(&a, &a).unwrap(), (0.0, 0.0));
        let b: Vec<Pose> = a.iter().map(|p| Pose::new(p.x + 0.7, p.y, p.phi)).collect();
        assert!((pose_rmse(&a, &b).unwrap().0 - 0.7).abs() < 1e-15);
        assert!(pose_rmse(&a, &b[..1]).is_err());
        assert!(pose_rmse(&[], &[]).is_err());

        // heading error across the cut is small
        let c = [Pose::new(0.0, 0.0, PI - 0.01)];
        let d = [Pose::new(0.0, 0.0, -PI + 0.01)];
        assert!((pose_rmse(&c, &d).unwrap().1 - 0.02).abs() < 1e-12);
    }

    #[test]
    fn rmse_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 500;
        let gen = |rng: &mut ChaCha8Rng| {
            Pose::new(rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-PI..PI))
        };
        let a: Vec<Pose> = (0..n).map(|_| gen(&mut rng)).collect();
        let b: Vec<Pose> = (0..n).map(|_| gen(&mut rng)).collect();
        let (pos, head) = pose_rmse(&a, &b).unwrap();
        let mut sp = 0.0;
        let mut sh = 0.0;
        for i in 0..n {
            sp += (a[i].x - b[i].x).powi(2) + (a[i].y - b[i].y).powi(2);
            let mut dh = a[i].phi - b[i].phi;
            while dh > PI {
                dh -= 2.0 * PI;
            }
            while dh <= -PI {
                dh += 2.0 * PI;
            }
            sh += dh * dh;
        }
        assert!((pos - (sp / n as f64).sqrt()).abs() < 1e-12);
        assert!((head - (sh / n as f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn coverage_examples() {
        let a = vec![Pose::new(1.0, 1.0, 0.1); 4];
        let v = vec![[0.01, 0.01, 0.01]; 4];
        assert_eq!(two_sigma_coverage(&a, &a, &v).unwrap().per_component, [1.0; 3]);
        let b: Vec<Pose> = a.iter().map(|p| Pose::new(p.x + 1.0, p.y - 1.0, p.phi + 1.0)).collect();
        let c = two_sigma_coverage(&a, &b, &v).unwrap();
        assert_eq!(c.per_component, [0.0; 3]);
        assert_eq!(c.joint, 0.0);
        assert!(two_sigma_coverage(&a, &b[..2], &v).is_err());
    }

    #[test]
    fn coverage_of_matched_gaussian_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 10_000;
        let sig = [0.5, 1.5, 0.05];
        let mut truth = Vec::new();
        let mut est = Vec::new();
        for _ in 0..n {
            let t =
                Pose::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-1.0..1.0));
            let e: [f64; 3] = std::array::from_fn(|k| sig[k] * rng.sample::<f64, _>(rand_distr::StandardNormal));
            est.push(Pose::new(t.x + e[0], t.y + e[1], t.phi + e[2]));
            truth.push(t);
        }
        let vars = vec![sig.map(|s| s * s); n];
        let c = two_sigma_coverage(&truth, &est, &vars).unwrap();
        let p = statrs::distribution::Normal::standard().cdf(2.0) * 2.0 - 1.0;
        for k in 0..3 {
            assert!((c.per_component[k] - p).abs() < 0.05);
        }
        assert!(c.joint >= 0.86 && (c.joint - p.powi(3)).abs() < 0.05);
    }

    #[test]
    fn paired_test_reference_values() {
        // d = (-1, -2, -3, -4): mean -2.5, sd √(5/3), t = -3.8730, df 3
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [2.0, 4.0, 6.0, 8.0];
        let r = paired_t_test(&a, &b).unwrap();
        assert!((r.mean_diff + 2.5).abs() < 1e-15);
        assert!((r.t_stat + 2.5 / ((5.0f64 / 3.0).sqrt() / 2.0)).abs() < 1e-12);
        // one-sided tail of Student t(3) at -3.873, from tables: ≈ 0.01522
        assert!((r.p_less - 0.01522).abs() < 2e-4, "{}", r.p_less);
        assert!(paired_t_test(&b, &a).unwrap().p_less > 0.98);
        assert_eq!(paired_t_test(&[1.0, 2.0], &[2.0, 3.0]).unwrap().p_less, 0.0);
        assert!(paired_t_test(&[1.0], &[2.0]).is_err());
    }

    fn tiny_scenario() -> Scenario {
        Scenario::from_toml_str(
            "landmarks = [[10.0, 4.0], [20.0, -5.0], [30.0, 3.0], [40.0, -4.0]]\n\
             waypoints = [[0.0, 0.0], [45.0, 0.0]]\n",
        )
        .unwrap()
    }

    #[test]
    fn noiseless_baseline_single_particle_is_exact() {
        let mut sc = tiny_scenario();
        sc.noise = NoiseConfig { sigma_v: 0.0, sigma_gamma: 0.0, sigma_r: 0.0, sigma_theta: 0.0 };
        let tiny = NoiseConfig { sigma_v: 1e-300, sigma_gamma: 1e-300, sigma_r: 0.01, sigma_theta: 1e-3 };
        let cfg = ExperimentConfig::new(sc, Variant::Baseline, 1, 1, 0).with_filter_noise(tiny);
        let out = run_single(&cfg, 0).unwrap();
        assert!(out.summary.pos_rmse < 1e-6, "{}", out.summary.pos_rmse);
        assert!(out.summary.epochs > 10);
    }

    #[test]
    fn csv_shape_and_determinism() {
        let sc = tiny_scenario();
        let cfg = ExperimentConfig::new(sc, Variant::PsoAnfis, 6, 1, 7);
        let a = run_single(&cfg, 0).unwrap();
        let b = run_single(&cfg, 0).unwrap();
        let (ca, cb) = (rows_to_csv(&a.rows), rows_to_csv(&b.rows));
        assert_eq!(ca, cb);
        let lines: Vec<&str> = ca.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), a.summary.epochs + 1);
        assert!(lines[1..].iter().all(|l| l.split(',').count() == 15));
    }

    #[test]
    fn aggregate_mean_is_mean_of_runs() {
        let cfg = ExperimentConfig::new(tiny_scenario(), Variant::Pso, 5, 4, 3);
        let rep = run_monte_carlo(&cfg).unwrap();
        assert_eq!(rep.runs.len(), 4);
        assert!(rep.failures.is_empty());
        let m = rep.runs.iter().map(|r| r.pos_rmse).sum::<f64>() / 4.0;
        assert!((rep.mean_pos_rmse - m).abs() < 1e-12);
        assert!(rep.runs.iter().enumerate().all(|(i, r)| r.run == i && r.seed == 3 + i as u64));
        for r in &rep.runs {
            assert!((0.0..=1.0).contains(&r.coverage.mean()));
        }
        let text = rep.summary_text();
        for key in [
            "mean_pos_rmse",
            "std_pos_rmse",
            "mean_heading_rmse",
            "divergence_rate",
            "mean_2sigma_coverage",
            "mean_final_r_range",
            "mean_final_r_bearing",
            "wall_time_s",
        ] {
            assert!(text.lines().any(|l| l.starts_with(&format!("{key} = "))), "missing {key}");
        }
    }

    #[test]
    fn config_file_resolution() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("course.toml"), crate::sim::DEFAULT_SCENARIO).unwrap();
        let text = r#"
scenario = "course.toml"
runs = 3
base_seed = 11
output_dir = "out"

[filter]
num_particles = 7
variant = "pso"

[filter.pso]
max_iters = 4

[filter_noise]
sigma_v = 0.3
sigma_gamma_deg = 3.0
sigma_r = 0.5
sigma_theta_deg = 3.0

[truth_noise]
sigma_v = 0.3
sigma_gamma_deg = 3.0
sigma_r = 0.2
sigma_theta_deg = 1.0
"#;
        let path = dir.path().join("exp.toml");
        fs::write(&path, text).unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        assert_eq!(cfg.filter.num_particles, 7);
        assert_eq!(cfg.filter.variant, Variant::Pso);
        assert_eq!(cfg.filter.pso_opts.max_iters, 4);
        assert_eq!(cfg.filter.pso_opts.fitness_threshold, 5.99);
        assert!((cfg.filter.r_initial[(0, 0)] - 0.25).abs() < 1e-15);
        assert!((cfg.scenario.noise.sigma_r - 0.2).abs() < 1e-15);
        assert_eq!(cfg.output_dir.as_deref(), Some(dir.path().join("out").as_path()));

        fs::write(&path, "scenario = \"course.toml\"\nruns = 0\n").unwrap();
        assert!(ExperimentConfig::load(&path).is_err());
        fs::write(&path, "scenario = \"missing.toml\"\nruns = 1\n").unwrap();
        assert!(ExperimentConfig::load(&path).is_err());
    }
}
