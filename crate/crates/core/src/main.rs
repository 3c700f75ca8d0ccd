use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use starloc::harness::{
    run_crlb_sweep, run_design_study, run_imperfect_h4_study, run_monte_carlo, run_mpc_study, sweep_path, write_csv,
    ExperimentConfig, Profile, Sweep, SweepOptions,
};
use starloc::LocError;

#[derive(Debug, Parser)]
#[command(name = "starloc", version, about = "STAR-RIS indoor/outdoor localization bounds and simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// CRLB position bounds over the SNR grid
    CrlbSweep(Common),
    /// Monte-Carlo localization RMSE next to the bounds
    MonteCarlo(Common),
    /// DFT versus random phase schedules with paired seeds
    DesignCheck(Common),
    /// Perfect versus perturbed RIS-BS channel knowledge
    ImperfectH4(Common),
    /// Line-of-sight only versus two multipath strengths
    MpcStudy(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// key = value configuration file applied on top of the profile
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed of the profile and the configuration file
    #[arg(long)]
    seed: Option<u64>,
    /// CSV output; multi-sweep studies write <stem>_<label>.csv beside it
    #[arg(long)]
    out: Option<PathBuf>,
    /// Base parameter set: desk or paper
    #[arg(long, default_value = "desk")]
    profile: String,
    /// Worker threads (defaults to the number of cores)
    #[arg(long)]
    threads: Option<usize>,
}

enum Failure {
    Config(String),
    Numerical(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 1,
            Failure::Config(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Numerical(m) | Failure::Io(m) => m,
        }
    }
}

impl From<LocError> for Failure {
    fn from(e: LocError) -> Self {
        match e {
            LocError::Config(_)
            | LocError::InsufficientOverhead { .. }
            | LocError::InvalidPower(_)
            | LocError::DegenerateGeometry(_)
            | LocError::InvalidLink(_)
            | LocError::DimensionMismatch(_)
            | LocError::EmptyNullSpace { .. } => Failure::Config(e.to_string()),
            other => Failure::Numerical(other.to_string()),
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let profile: Profile = common.profile.parse()?;
    let mut cfg = ExperimentConfig::profile(profile);
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
        cfg = cfg.apply_text(&text)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn report(sweep: &Sweep, path: &Path) {
    let flagged = sweep.rows.iter().filter(|r| r.flagged()).count();
    let angle = sweep.principal_angle.map(|v| format!(", principal-angle ratio {v:.3e}")).unwrap_or_default();
    println!(
        "{}: {} points ({} flagged), config {}{} -> {}",
        sweep.label,
        sweep.rows.len(),
        flagged,
        sweep.config_hash,
        angle,
        path.display()
    );
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (common, default_out) = match &cli.command {
        Command::CrlbSweep(c) => (c, "crlb.csv"),
        Command::MonteCarlo(c) => (c, "monte_carlo.csv"),
        Command::DesignCheck(c) => (c, "design.csv"),
        Command::ImperfectH4(c) => (c, "imperfect_h4.csv"),
        Command::MpcStudy(c) => (c, "mpc.csv"),
    };
    let cfg = load_config(common)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from(default_out));
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = common.threads {
        if n == 0 {
            return Err(Failure::Config("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Failure::Io(e.to_string()))?;
    let opts = SweepOptions::default();

    let sweeps: Vec<(Sweep, PathBuf)> = pool.install(|| -> Result<_, LocError> {
        Ok(match &cli.command {
            Command::CrlbSweep(_) => vec![(run_crlb_sweep(&cfg)?, out.clone())],
            Command::MonteCarlo(_) => vec![(run_monte_carlo(&cfg, &opts)?, out.clone())],
            Command::DesignCheck(_) => labelled(run_design_study(&cfg, &opts)?, &out),
            Command::ImperfectH4(_) => labelled(run_imperfect_h4_study(&cfg, &opts)?, &out),
            Command::MpcStudy(_) => labelled(run_mpc_study(&cfg, &opts)?, &out),
        })
    })?;

    for (sweep, path) in &sweeps {
        write_csv(path, sweep).map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))?;
        report(sweep, path);
    }
    if sweeps.iter().all(|(s, _)| s.all_flagged()) {
        return Err(Failure::Numerical("every sweep point was flagged".into()));
    }
    Ok(())
}

fn labelled(sweeps: Vec<Sweep>, out: &Path) -> Vec<(Sweep, PathBuf)> {
    sweeps
        .into_iter()
        .map(|s| {
            let path = sweep_path(out, &s.label);
            (s, path)
        })
        .collect()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
