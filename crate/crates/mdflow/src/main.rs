use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mdflow::experiments::{run_command, Command, RunOptions};
use mdflow::scenario::Scenario;

#[derive(Parser)]
#[command(
    name = "mdflow",
    version,
    about = "Projected aggregation dynamics in moving domains"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Particle simulation with a-priori estimate audits.
    SimulateParticles(Common),
    /// Minimizing-movement or finite-volume run on a grid.
    RunJko(Common),
    /// Vanishing-viscosity comparison against the particle solution.
    ViscositySweep(Common),
    /// Stability constants of paired particle ensembles.
    StabilitySweep(Common),
    /// Equilibria and instability ratios of chains on the cosine boundary.
    CosineInstability(Common),
    /// Prox-regularity and speed checks of the scenario's domain.
    ValidateDomain(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for sweeps; defaults to all cores.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, args) = match cli.cmd {
        Cmd::SimulateParticles(a) => (Command::SimulateParticles, a),
        Cmd::RunJko(a) => (Command::RunJko, a),
        Cmd::ViscositySweep(a) => (Command::ViscositySweep, a),
        Cmd::StabilitySweep(a) => (Command::StabilitySweep, a),
        Cmd::CosineInstability(a) => (Command::CosineInstability, a),
        Cmd::ValidateDomain(a) => (Command::ValidateDomain, a),
    };
    match run(cmd, args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command, args: Common) -> mdflow::Result<bool> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| mdflow::Error::Threads(e.to_string()))?;
    }
    let sc = Scenario::load(&args.scenario)?;
    let summary = run_command(
        cmd,
        sc,
        &RunOptions {
            out: args.out.clone(),
            seed: args.seed,
        },
    )?;
    for (k, v) in &summary.flags {
        println!("{:<36} {}", k, if *v { "PASS" } else { "FAIL" });
    }
    println!(
        "summary: {} ({})",
        args.out.join("summary.json").display(),
        summary.hash()
    );
    Ok(summary.passed())
}
