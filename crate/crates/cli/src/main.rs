//! Command-line front end for leader-driven crowd experiments.
//!
//! Exit codes: 0 on success, 2 for config problems (every diagnostic is
//! printed, one per line), 3 for numerical failures, 4 when `--check` finds
//! artifacts drifting from their frozen hashes.

mod config;
mod plots;
mod runner;

use clap::{Args, Parser, Subcommand};
use runner::{exit_code, run, validate, RunArgs, RunError};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "leadfield",
    version,
    about = "leader-driven crowd dynamics: simulation, limits, and control"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the leader-follower system and write the trajectory.
    Simulate(RunOpts),
    /// Compare finite crowds against a large reference crowd.
    MeanfieldConverge(RunOpts),
    /// Measure amplification of initial perturbations against the a priori bound.
    Stability(RunOpts),
    /// Solve the finite-horizon tracking problem by projected gradient descent.
    Optimize(RunOpts),
    /// Track the optimal-control limit across increasing crowd sizes.
    GammaSweep(RunOpts),
    /// Compare the collision process against its averaged-kernel limit.
    KineticSweep(RunOpts),
    /// Run instantaneous pairwise feedback through the collision process.
    FeedbackControl(RunOpts),
    /// Certify growth bounds for the configured kernels and the catalog.
    CertifyKernels(RunOpts),
    /// Check a config without running it; prints diagnostics, if any.
    Validate(RunOpts),
}

#[derive(Args)]
struct RunOpts {
    /// Experiment file (INI-style sections of key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Override one config entry, e.g. --set problem.dt=0.01 (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; defaults to [output] directory, then ./out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the cloud seed and, when the config lists none, the study seeds.
    #[arg(long)]
    seed: Option<u64>,
    /// Write SVG plots alongside the CSV artifacts.
    #[arg(long, value_parser = ["on", "off"])]
    plots: Option<String>,
    /// Compare artifact hashes against the frozen CONFIG.expected file.
    #[arg(long)]
    check: bool,
}

impl RunOpts {
    fn into_args(self) -> RunArgs {
        RunArgs {
            config: self.config,
            sets: self.set,
            out: self.out,
            seed: self.seed,
            plots: self.plots.as_deref().map(|p| p == "on"),
            check: self.check,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.cmd {
        Cmd::Simulate(o) => run("simulate", &o.into_args()),
        Cmd::MeanfieldConverge(o) => run("meanfield-converge", &o.into_args()),
        Cmd::Stability(o) => run("stability", &o.into_args()),
        Cmd::Optimize(o) => run("optimize", &o.into_args()),
        Cmd::GammaSweep(o) => run("gamma-sweep", &o.into_args()),
        Cmd::KineticSweep(o) => run("kinetic-sweep", &o.into_args()),
        Cmd::FeedbackControl(o) => run("feedback-control", &o.into_args()),
        Cmd::CertifyKernels(o) => run("certify-kernels", &o.into_args()),
        Cmd::Validate(o) => validate(&o.into_args()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            match &err {
                RunError::Config(diags) => {
                    for d in diags {
                        println!("{d}");
                    }
                }
                RunError::Core(e) => eprintln!("{e}"),
                RunError::Check(drifted) => {
                    for line in drifted {
                        eprintln!("check: {line}");
                    }
                }
            }
            ExitCode::from(exit_code(&err) as u8)
        }
    }
}
