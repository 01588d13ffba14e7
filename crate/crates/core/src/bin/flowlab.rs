use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use flowlab::lab::{self, Experiment, ExperimentConfig};
use flowlab::{par, LabError};

#[derive(Parser, Debug)]
#[command(name = "flowlab", version, about = "Flows, densities and transport under Gaussian measure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    opts: Overrides,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Divergence norms β(t), their time integrals and the growth norm.
    Norms,
    /// Analytic vs finite-difference divergence and OU commutation.
    FieldCheck,
    /// Integrate particles forward; exit 2 if more than 1% fail.
    Flow,
    /// Mass, Φ_α modular, thresholds and L^p moments of the density.
    Density,
    /// Weak residuals and log-log stability checks.
    Transport,
    /// Convergence in measure down the mollification ladder.
    Mollify,
    /// Trajectory gaps along perturbation sequences b_k → b.
    Stability,
    /// Preimage volumes under Lebesgue measure, two estimators.
    Lebesgue,
    /// Run every experiment on the configured field.
    Report,
}

impl Command {
    fn experiment(self) -> Experiment {
        match self {
            Command::Norms => Experiment::Norms,
            Command::FieldCheck => Experiment::FieldCheck,
            Command::Flow => Experiment::Flow,
            Command::Density => Experiment::Density,
            Command::Transport => Experiment::Transport,
            Command::Mollify => Experiment::Mollify,
            Command::Stability => Experiment::Stability,
            Command::Lebesgue => Experiment::Lebesgue,
            Command::Report => Experiment::Report,
        }
    }
}

#[derive(clap::Args, Debug)]
struct Overrides {
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Monte Carlo samples.
    #[arg(long, global = true)]
    samples: Option<usize>,
    /// ODE tolerance.
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Library field name.
    #[arg(long, global = true)]
    field: Option<String>,
    /// Run on [0, tau].
    #[arg(long, global = true)]
    tau: Option<f64>,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    particles: Option<usize>,
    /// Particle starting points: coordinates separated by ',', points by ';'.
    #[arg(long, global = true)]
    seed_points: Option<String>,
    /// Orlicz exponents, comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    gamma: Option<Vec<f64>>,
}

fn parse_points(s: &str) -> Result<Vec<Vec<f64>>, LabError> {
    s.split(';')
        .map(|p| {
            p.split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| LabError::Usage(format!("bad coordinate {v:?} in seed points")))
                })
                .collect()
        })
        .collect()
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, LabError> {
    let o = &cli.opts;
    let mut cfg = match &o.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.experiment = cli.command.experiment();
    if let Some(name) = &o.field {
        cfg.field = lab::library_field(name)?;
    }
    if let Some(t) = o.tau {
        cfg.interval = flowlab::flow::TimeInterval::new(0.0, t).map_err(|e| LabError::Usage(e.to_string()))?;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    if let Some(v) = o.samples {
        cfg.samples = v;
    }
    if let Some(v) = o.tol {
        cfg.tol = v;
    }
    if let Some(v) = &o.out {
        cfg.out = v.to_string_lossy().into_owned();
    }
    if let Some(v) = o.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = o.particles {
        cfg.particles = v;
    }
    if let Some(v) = &o.seed_points {
        cfg.seed_points = Some(parse_points(v)?);
    }
    if let Some(v) = &o.gamma {
        cfg.gamma = v.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = std::env::var("FLOWLAB_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        par::init_threads(n);
    }
    let cfg = match resolve(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("flowlab: {e}");
            return ExitCode::from(1);
        }
    };
    let section = match lab::run(&cfg) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("flowlab: {e}");
            return ExitCode::from(match e {
                LabError::Evaluation(_) => 2,
                _ => 1,
            });
        }
    };
    match lab::write_outputs(std::path::Path::new(&cfg.out), &cfg, &section) {
        Ok((csv, jsonl)) => {
            println!("{}", csv.display());
            println!("{}", jsonl.display());
        }
        Err(e) => {
            eprintln!("flowlab: {e}");
            return ExitCode::from(1);
        }
    }
    match section.failure {
        Some(f) => {
            eprintln!("flowlab: numerical failure: {f}");
            ExitCode::from(2)
        }
        None => ExitCode::SUCCESS,
    }
}
