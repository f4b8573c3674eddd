use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fastslam_core::filter::Variant;
use fastslam_core::harness::{
    paired_rmse, paired_t_test, run_monte_carlo, run_monte_carlo_with_threads, AggregateReport,
};
use fastslam_core::{ExperimentConfig, Result, SlamError};

#[derive(Parser, Debug)]
#[command(name = "fastslam", version, about = "Monte Carlo FastSLAM experiments on a simulated range-bearing vehicle")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one filter variant over all Monte Carlo trials.
    Run {
        #[command(flatten)]
        common: Common,
        /// baseline, pso or pso_anfis (overrides the config).
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Run several variants on identical seeds and report a paired comparison.
    Compare {
        #[command(flatten)]
        common: Common,
        /// Comma-separated variants; the first is tested against each of the others.
        #[arg(long, value_delimiter = ',', required = true)]
        variants: Vec<Variant>,
    },
}

#[derive(Args, Debug)]
struct Common {
    /// Experiment TOML file.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    /// Base seed; run i uses seed + i.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(m) = self.particles {
            cfg.filter.num_particles = m;
        }
        if let Some(r) = self.runs {
            cfg.runs = r;
        }
        if let Some(s) = self.seed {
            cfg.base_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = Some(o.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn execute(&self, cfg: &ExperimentConfig) -> Result<AggregateReport> {
        match self.threads {
            Some(t) => run_monte_carlo_with_threads(cfg, t),
            None => run_monte_carlo(cfg),
        }
    }
}

fn report_failures(rep: &AggregateReport) {
    for (run, msg) in &rep.failures {
        eprintln!("warning: {} run {run} failed: {msg}", rep.variant);
    }
}

fn run(common: &Common, variant: Option<Variant>) -> Result<()> {
    let mut cfg = common.load()?;
    if let Some(v) = variant {
        cfg.filter.variant = v;
    }
    let rep = common.execute(&cfg)?;
    report_failures(&rep);
    print!("{}", rep.summary_text());
    Ok(())
}

fn compare(common: &Common, variants: &[Variant]) -> Result<()> {
    if variants.len() < 2 {
        return Err(SlamError::Config("compare needs at least two variants".into()));
    }
    let base = common.load()?;
    let mut reports = Vec::new();
    for v in variants {
        let mut cfg = base.clone();
        cfg.filter.variant = *v;
        cfg.output_dir = base.output_dir.as_ref().map(|d| d.join(v.as_str()));
        let rep = common.execute(&cfg)?;
        report_failures(&rep);
        println!("[{v}]");
        print!("{}", rep.summary_text());
        println!();
        reports.push(rep);
    }
    let first = &reports[0];
    for other in &reports[1..] {
        let (a, b) = paired_rmse(first, other);
        println!("[{} vs {}]", first.variant, other.variant);
        match paired_t_test(&a, &b) {
            Ok(t) => {
                println!("paired_runs = {}", t.n);
                println!("mean_pos_rmse_diff = {}", t.mean_diff);
                println!("t_stat = {}", t.t_stat);
                println!("p_one_sided_less = {}", t.p_less);
            }
            Err(e) => println!("paired_test = unavailable ({e})"),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { common, variant } => run(common, *variant),
        Command::Compare { common, variants } => compare(common, variants),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
