use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rotor_cli::{run_stages, Scenario, Stage};
use rotor_core::rotation::{default_eps_origin, rotation, RotationOutcome};
use rotor_core::PhasePoint;

#[derive(Parser)]
#[command(name = "rotor", version, about = "Rotation numbers and periodic solutions of forced planar oscillators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rotation over one period from a single initial point.
    Rotate {
        #[command(flatten)]
        common: Common,
        /// Initial point as `X,Y`.
        #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
        z: PhasePoint,
    },
    /// Rotation grid, CSV and heatmap.
    Grid(Common),
    /// Capture set, degree and one periodic solution.
    Find(Common),
    /// Periodic solutions with prescribed rotation about a base solution.
    Multiplicity(Common),
    /// Sampled hypothesis checks.
    Check(Common),
    /// Reversal identity on random samples.
    ReverseCheck(Common),
    /// All stages listed in the scenario (default: every stage).
    Run(Common),
}

#[derive(Args)]
struct Common {
    /// Scenario TOML file.
    scenario: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Integrator relative and absolute tolerance.
    #[arg(long)]
    tol: Option<f64>,
    /// Seed for sampled checks.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = "ROTOR_THREADS")]
    threads: Option<usize>,
}

fn parse_point(s: &str) -> Result<PhasePoint, String> {
    let (x, y) = s.split_once(',').ok_or_else(|| format!("expected X,Y, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    Ok(PhasePoint::new(parse(x)?, parse(y)?))
}

fn load(common: &Common) -> Result<Scenario> {
    let mut scn = Scenario::load(&common.scenario)?;
    if let Some(tol) = common.tol {
        scn.opts.rel_tol = tol;
        scn.opts.abs_tol = tol;
        scn.opts.validate()?;
    }
    if let Some(seed) = common.seed {
        scn.seed = seed;
    }
    Ok(scn)
}

fn out_dir(common: &Common, scn: &Scenario) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| scn.out.clone())
        .unwrap_or_else(|| Path::new("rotor-out").join(&scn.label))
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n.max(1));
    }
    builder.build().context("building thread pool")
}

fn run_pipeline(common: &Common, stages: Option<&[Stage]>) -> Result<bool> {
    let scn = load(common)?;
    let out = out_dir(common, &scn);
    let stages: Vec<Stage> = match stages {
        Some(s) => s.to_vec(),
        None => scn.stages.clone().unwrap_or_else(|| Stage::ALL.to_vec()),
    };
    let pool = pool(common.threads)?;
    let reports = pool.install(|| run_stages(&scn, &stages, &out, &mut io::stdout()))?;
    writeln!(io::stdout(), "artifacts in {}", out.display())?;
    Ok(reports.iter().all(|r| r.ok))
}

fn run_rotate(common: &Common, z: PhasePoint) -> Result<bool> {
    let scn = load(common)?;
    let pool = pool(common.threads)?;
    let period = scn.field.period();
    let outcome = pool.install(|| rotation(&scn.field, 0.0, period, z, &scn.opts, default_eps_origin(z)))?;
    match outcome {
        RotationOutcome::Finite { rho, terminal } => {
            println!("rho = {rho:.12}");
            println!("terminal = ({:.12}, {:.12})", terminal.x, terminal.y);
        }
        RotationOutcome::PlusInfinity { t_max_estimate, rho_at_cutoff } => {
            println!("rho = +inf (escape near t = {t_max_estimate:.6}, rotation {rho_at_cutoff:.6} at cutoff)");
        }
        RotationOutcome::UndefinedOriginHit { t_hit } => {
            println!("rho undefined: the solution reaches the origin at t = {t_hit:.9}");
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Rotate { common, z } => run_rotate(common, *z),
        Command::Grid(c) => run_pipeline(c, Some(&[Stage::Grid])),
        Command::Find(c) => run_pipeline(c, Some(&[Stage::Find])),
        Command::Multiplicity(c) => run_pipeline(c, Some(&[Stage::Multiplicity])),
        Command::Check(c) => run_pipeline(c, Some(&[Stage::Check])),
        Command::ReverseCheck(c) => run_pipeline(c, Some(&[Stage::ReverseCheck])),
        Command::Run(c) => run_pipeline(c, None),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
