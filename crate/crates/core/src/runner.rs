//! Orchestrates a configured run: solves with the requested solvers, writes
//! the convergence history and final matrices as CSV, and assembles a JSON
//! manifest that makes the run reproducible from its own record.
//!
//! Output files in the chosen directory:
//! - `history.csv`: `iteration,solver,dp_frobenius,sare_residual_frobenius`
//! - `final.csv`: `solver,name,row,col,value` for the final `P` and `K`
//! - `manifest.json`: resolved config echo, per-solver summaries, comparison
//! - `trajectories.csv` (optional): raw Euler-grid dump from the simulator
//!
//! Floats in the CSVs carry 17 significant digits, so identical seeds give
//! byte-identical files. The `SLQ_PILOT_THREADS` environment variable caps
//! the simulation worker pool; it never changes any numerical output.

use std::io::Write;
use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::config::{Mode, RawConfig, RunConfig};
use crate::datadriven::{self, DdReport, SolveOptions};
use crate::error::{Result, SlqError};
use crate::matops::SymMatrix;
use crate::oracle::{self, sare_residual, OracleReport};
use crate::problem::Gain;
use crate::sdesim::{accumulate_data, simulate_batch};

#[derive(Debug, Clone, Serialize)]
pub struct SolverSummary {
    pub converged: bool,
    pub iterations: usize,
    /// Row-major final value matrix.
    pub p: Vec<Vec<f64>>,
    /// Row-major final gain.
    pub k: Vec<Vec<f64>>,
    /// Frobenius norm of the Riccati residual at the final pair.
    pub sare_residual_frobenius: f64,
    /// Last `||P_{i+1} - P_i||_F`.
    pub final_dp_frobenius: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DataDrivenExtras {
    pub rank_ok: bool,
    pub achieved_rank: usize,
    /// Relative least-squares misfit at the final iteration.
    pub final_lsq_misfit: f64,
}

/// Entrywise agreement between the two solvers; every number here is
/// recomputable from `final.csv` alone.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonBlock {
    pub p_max_abs_diff: f64,
    pub k_max_abs_diff: f64,
    pub p_frobenius_diff: f64,
    pub k_frobenius_diff: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputFiles {
    pub history_csv: Option<String>,
    pub final_csv: Option<String>,
    pub manifest_json: Option<String>,
    pub trajectories_csv: Option<String>,
}

/// The run record written as `manifest.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub mode: String,
    pub seed: u64,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    /// Fully resolved configuration (flag > file > default already applied).
    pub config: RawConfig,
    pub oracle: Option<SolverSummary>,
    pub datadriven: Option<SolverSummary>,
    pub datadriven_extras: Option<DataDrivenExtras>,
    pub comparison: Option<ComparisonBlock>,
    pub outputs: OutputFiles,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

struct HistoryRow {
    iteration: usize,
    solver: &'static str,
    dp: f64,
    residual: f64,
}

/// Executes the configured mode and writes the output files (except in
/// `validate` mode, which performs checks only and writes nothing).
pub fn run(cfg: &RunConfig) -> Result<RunManifest> {
    let started = now_ms();
    let mut manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        mode: cfg.mode.to_string(),
        seed: cfg.sim.seed,
        started_unix_ms: started,
        finished_unix_ms: started,
        config: cfg.echo.clone(),
        oracle: None,
        datadriven: None,
        datadriven_extras: None,
        comparison: None,
        outputs: OutputFiles {
            history_csv: None,
            final_csv: None,
            manifest_json: None,
            trajectories_csv: None,
        },
    };

    if cfg.mode == Mode::Validate {
        // All checks already ran in load_config.
        manifest.finished_unix_ms = now_ms();
        return Ok(manifest);
    }

    let run_oracle = matches!(cfg.mode, Mode::Oracle | Mode::Both);
    let run_dd = matches!(cfg.mode, Mode::Datadriven | Mode::Both);

    let mut history: Vec<HistoryRow> = Vec::new();
    let mut oracle_report: Option<OracleReport> = None;
    let mut dd_report: Option<DdReport> = None;
    let mut trajectories_path: Option<PathBuf> = None;

    if run_oracle {
        let report =
            oracle::policy_iteration(&cfg.problem, cfg.solver.eps_oracle, cfg.solver.max_iter)?;
        for it in &report.history {
            history.push(HistoryRow {
                iteration: it.iteration,
                solver: "oracle",
                dp: it.dp_norm,
                residual: it.residual_norm,
            });
        }
        manifest.oracle = Some(SolverSummary {
            converged: report.converged,
            iterations: report.iterations,
            p: matrix_rows(report.p_star.as_matrix()),
            k: matrix_rows(report.k_star.as_matrix()),
            sare_residual_frobenius: sare_residual(
                &cfg.problem.model,
                &cfg.problem.cost,
                &report.p_star,
                &report.k_star,
            )
            .norm(),
            final_dp_frobenius: report.history.last().map(|h| h.dp_norm).unwrap_or(f64::NAN),
        });
        oracle_report = Some(report);
    }

    if run_dd {
        let data = in_worker_pool(|| -> Result<_> {
            let batch = simulate_batch(&cfg.problem.model, &cfg.problem.k0, &cfg.sim)?;
            if cfg.dump_trajectories {
                std::fs::create_dir_all(&cfg.out_dir)?;
                let path = cfg.out_dir.join("trajectories.csv");
                let mut file = std::io::BufWriter::new(std::fs::File::create(&path)?);
                batch.dump_csv(&mut file)?;
                file.flush()?;
                trajectories_path = Some(path);
            }
            accumulate_data(&batch, &cfg.sim)
        })?;
        let opts = SolveOptions {
            eps: cfg.solver.eps_dd,
            max_iter: cfg.solver.max_iter,
            rank_tol: cfg.solver.rank_tol,
        };
        let report = datadriven::policy_iteration(
            &data,
            cfg.problem.model.d(),
            &cfg.problem.cost,
            &cfg.problem.k0,
            &opts,
        )?;
        for it in &report.history {
            // The data-driven solver never sees A, B, C; the diagnostic
            // residual is computed out here, where the model is known.
            let res = sare_residual(&cfg.problem.model, &cfg.problem.cost, &it.p, &it.k).norm();
            history.push(HistoryRow {
                iteration: it.iteration,
                solver: "datadriven",
                dp: it.dp_norm,
                residual: res,
            });
        }
        manifest.datadriven = Some(SolverSummary {
            converged: report.converged,
            iterations: report.iterations,
            p: matrix_rows(report.p_tilde.as_matrix()),
            k: matrix_rows(report.k_tilde.as_matrix()),
            sare_residual_frobenius: sare_residual(
                &cfg.problem.model,
                &cfg.problem.cost,
                &report.p_tilde,
                &report.k_tilde,
            )
            .norm(),
            final_dp_frobenius: report.history.last().map(|h| h.dp_norm).unwrap_or(f64::NAN),
        });
        manifest.datadriven_extras = Some(DataDrivenExtras {
            rank_ok: report.rank_ok,
            achieved_rank: report.achieved_rank,
            final_lsq_misfit: report
                .history
                .last()
                .map(|h| h.lsq_misfit)
                .unwrap_or(f64::NAN),
        });
        dd_report = Some(report);
    }

    if let (Some(or), Some(dd)) = (&oracle_report, &dd_report) {
        manifest.comparison = Some(compare(&or.p_star, &or.k_star, &dd.p_tilde, &dd.k_tilde));
    }

    std::fs::create_dir_all(&cfg.out_dir)?;
    let history_path = cfg.out_dir.join("history.csv");
    write_history_csv(&history_path, &history)?;
    let final_path = cfg.out_dir.join("final.csv");
    write_final_csv(&final_path, &manifest)?;
    let manifest_path = cfg.out_dir.join("manifest.json");

    manifest.outputs = OutputFiles {
        history_csv: Some(history_path.display().to_string()),
        final_csv: Some(final_path.display().to_string()),
        manifest_json: Some(manifest_path.display().to_string()),
        trajectories_csv: trajectories_path.map(|p| p.display().to_string()),
    };
    manifest.finished_unix_ms = now_ms();

    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| SlqError::NumericalBreakdown(format!("manifest serialization: {e}")))?;
    std::fs::write(&manifest_path, json + "\n")?;

    Ok(manifest)
}

fn compare(
    p_star: &SymMatrix,
    k_star: &Gain,
    p_tilde: &SymMatrix,
    k_tilde: &Gain,
) -> ComparisonBlock {
    let dp = p_tilde.as_matrix() - p_star.as_matrix();
    let dk = k_tilde.as_matrix() - k_star.as_matrix();
    ComparisonBlock {
        p_max_abs_diff: dp.amax(),
        k_max_abs_diff: dk.amax(),
        p_frobenius_diff: dp.norm(),
        k_frobenius_diff: dk.norm(),
    }
}

/// Runs `body` inside a rayon pool sized by `SLQ_PILOT_THREADS` when that is
/// set, otherwise on the global pool. Pool size affects wall time only.
fn in_worker_pool<T, F: FnOnce() -> Result<T> + Send>(body: F) -> Result<T>
where
    T: Send,
{
    match std::env::var("SLQ_PILOT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&t| t > 0)
    {
        Some(threads) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| {
                    SlqError::InvalidConfig(format!("could not build worker pool: {e}"))
                })?;
            pool.install(body)
        }
        None => body(),
    }
}

fn write_history_csv(path: &std::path::Path, rows: &[HistoryRow]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "iteration,solver,dp_frobenius,sare_residual_frobenius")?;
    for row in rows {
        writeln!(
            out,
            "{},{},{:.16e},{:.16e}",
            row.iteration, row.solver, row.dp, row.residual
        )?;
    }
    out.flush()?;
    Ok(())
}

fn write_final_csv(path: &std::path::Path, manifest: &RunManifest) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "solver,name,row,col,value")?;
    let mut dump = |solver: &str, name: &str, rows: &Vec<Vec<f64>>| -> Result<()> {
        for (i, row) in rows.iter().enumerate() {
            for (j, value) in row.iter().enumerate() {
                writeln!(out, "{solver},{name},{i},{j},{value:.16e}")?;
            }
        }
        Ok(())
    };
    if let Some(or) = &manifest.oracle {
        dump("oracle", "P", &or.p)?;
        dump("oracle", "K", &or.k)?;
    }
    if let Some(dd) = &manifest.datadriven {
        dump("datadriven", "P", &dd.p)?;
        dump("datadriven", "K", &dd.k)?;
    }
    Ok(())
}
