//! Command-line experiment runner.
//!
//! Exit codes: 0 success, 2 config/validation failure, 3 rank deficiency,
//! 4 non-convergence, 5 numerical breakdown, 1 anything else (I/O).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use slq_pilot::config::{load_config, Mode, Overrides, RunConfig};
use slq_pilot::runner::{run, RunManifest};
use slq_pilot::SlqError;

#[derive(Parser, Debug)]
#[command(
    name = "slq-pilot",
    version,
    about = "Stochastic LQ control: model-based and data-driven policy iteration"
)]
struct Cli {
    /// Path to the TOML problem configuration.
    #[arg(long)]
    config: PathBuf,

    /// What to run: oracle, datadriven, both or validate.
    #[arg(long)]
    mode: Option<Mode>,

    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,

    /// Monte-Carlo path count override.
    #[arg(long)]
    paths: Option<usize>,

    /// Exploration-noise standard deviation override.
    #[arg(long)]
    noise_std: Option<f64>,

    /// Data-driven stopping tolerance override (eps_dd).
    #[arg(long)]
    eps: Option<f64>,

    /// Output directory for history.csv, final.csv and manifest.json.
    #[arg(long)]
    out: Option<PathBuf>,

    /// Also write the raw Euler-grid trajectories as CSV.
    #[arg(long)]
    dump_trajectories: bool,
}

fn exit_code_for(err: &SlqError) -> u8 {
    match err {
        SlqError::Parse(_)
        | SlqError::InvalidConfig(_)
        | SlqError::Dimension(_)
        | SlqError::NotTriangularLength { .. }
        | SlqError::RNotPositiveDefinite { .. }
        | SlqError::SchurComplementNotPositiveDefinite { .. }
        | SlqError::NotStabilizer { .. } => 2,
        SlqError::RankDeficient { .. } => 3,
        SlqError::NotConverged { .. } => 4,
        SlqError::SingularGenerator { .. }
        | SlqError::NumericalBreakdown(_)
        | SlqError::TrajectoryBlowup { .. } => 5,
        SlqError::Io(_) => 1,
    }
}

fn print_summary(cfg: &RunConfig, manifest: &RunManifest) {
    if cfg.mode == Mode::Validate {
        println!(
            "configuration valid: n={}, m={}, l={}, seed={}",
            cfg.problem.model.n(),
            cfg.problem.model.m(),
            cfg.sim.intervals(),
            cfg.sim.seed
        );
        return;
    }
    if let Some(or) = &manifest.oracle {
        println!(
            "oracle:     converged={} iterations={} residual={:.3e}",
            or.converged, or.iterations, or.sare_residual_frobenius
        );
        println!("  P* = {:?}", or.p);
        println!("  K* = {:?}", or.k);
    }
    if let Some(dd) = &manifest.datadriven {
        println!(
            "datadriven: converged={} iterations={} residual={:.3e}",
            dd.converged, dd.iterations, dd.sare_residual_frobenius
        );
        println!("  P~ = {:?}", dd.p);
        println!("  K~ = {:?}", dd.k);
    }
    if let Some(cmp) = &manifest.comparison {
        println!(
            "comparison: |P~-P*|max={:.3e} |K~-K*|max={:.3e}",
            cmp.p_max_abs_diff, cmp.k_max_abs_diff
        );
    }
    if let Some(path) = &manifest.outputs.manifest_json {
        println!("outputs in {path}");
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let overrides = Overrides {
        mode: cli.mode,
        seed: cli.seed,
        paths: cli.paths,
        noise_std: cli.noise_std,
        eps: cli.eps,
        out_dir: cli.out,
        dump_trajectories: cli.dump_trajectories,
    };
    let cfg = match load_config(&cli.config, &overrides) {
        Ok(cfg) => cfg,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(exit_code_for(&e));
        }
    };
    match run(&cfg) {
        Ok(manifest) => {
            print_summary(&cfg, &manifest);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
