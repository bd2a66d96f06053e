//! Experiment configuration: a flat TOML file with explicit matrix literals
//! in row-major bracket syntax, resolved against CLI overrides and fully
//! validated before anything runs.
//!
//! ```toml
//! mode = "both"              # oracle | datadriven | both | validate
//!
//! [model]
//! a = [[0.0, -0.6], [0.6, -0.3]]
//! b = [[0.05], [0.01]]
//! c = [[-0.02, 0.03], [-0.05, 0.02]]
//! d = [[0.001], [0.03]]
//!
//! [cost]
//! q = [[1.0, 0.0], [0.0, 0.1]]
//! s = [[0.0, 0.0]]
//! r = [[1.0]]
//!
//! [init]
//! x0 = [0.5, -0.1]
//! k0 = [[0.0, 0.0]]
//!
//! [sim]
//! horizon = 4.0
//! sample_interval = 0.01
//! step = 0.001               # optional, defaults to sample_interval / 10
//! paths = 2000
//! noise_std = 0.3
//! seed = 7
//!
//! [solver]                   # optional block, these are the defaults
//! eps_oracle = 1e-10
//! eps_dd = 1e-3
//! max_iter = 100
//! rank_tol = 1e-8
//! ```
//!
//! Precedence is flag > config > built-in default; the fully resolved values
//! are echoed into the run manifest so there is never a question of which
//! settings produced a result.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SlqError};
use crate::problem::{CostSpec, Gain, ProblemSpec, SystemModel};
use crate::sdesim::SimConfig;

/// What the runner should do.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Oracle,
    Datadriven,
    Both,
    Validate,
}

impl std::str::FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(Mode::Oracle),
            "datadriven" => Ok(Mode::Datadriven),
            "both" => Ok(Mode::Both),
            "validate" => Ok(Mode::Validate),
            other => Err(format!(
                "unknown mode `{other}` (expected oracle, datadriven, both or validate)"
            )),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Oracle => "oracle",
            Mode::Datadriven => "datadriven",
            Mode::Both => "both",
            Mode::Validate => "validate",
        };
        f.write_str(s)
    }
}

/// Solver tolerances, after defaulting.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SolverConfig {
    pub eps_oracle: f64,
    pub eps_dd: f64,
    pub max_iter: usize,
    pub rank_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            eps_oracle: 1e-10,
            eps_dd: 1e-3,
            max_iter: 100,
            rank_tol: 1e-8,
        }
    }
}

/// On-disk schema, before defaulting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawConfig {
    pub mode: Option<String>,
    pub output_dir: Option<String>,
    pub model: RawModel,
    pub cost: RawCost,
    pub init: RawInit,
    pub sim: RawSim,
    pub solver: Option<RawSolver>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawModel {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawCost {
    pub q: Vec<Vec<f64>>,
    pub s: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawInit {
    pub x0: Vec<f64>,
    pub k0: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawSim {
    pub horizon: f64,
    pub sample_interval: f64,
    pub step: Option<f64>,
    pub paths: Option<usize>,
    pub noise_std: Option<f64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RawSolver {
    pub eps_oracle: Option<f64>,
    pub eps_dd: Option<f64>,
    pub max_iter: Option<usize>,
    pub rank_tol: Option<f64>,
}

/// CLI-provided overrides; every field beats the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub paths: Option<usize>,
    pub noise_std: Option<f64>,
    /// Overrides the data-driven stopping tolerance `eps_dd`.
    pub eps: Option<f64>,
    pub out_dir: Option<PathBuf>,
    pub dump_trajectories: bool,
}

/// A fully resolved, validated run description.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub problem: ProblemSpec,
    pub sim: SimConfig,
    pub solver: SolverConfig,
    pub mode: Mode,
    pub out_dir: PathBuf,
    pub dump_trajectories: bool,
    /// The resolved settings, kept in file form for the manifest echo.
    pub echo: RawConfig,
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(SlqError::InvalidConfig(format!("{what} must be nonempty")));
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        return Err(SlqError::InvalidConfig(format!(
            "{what} has ragged rows; every row must have {cols} entries"
        )));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|x| !x.is_finite()) {
        return Err(SlqError::InvalidConfig(format!("{what} must be finite")));
    }
    Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

/// Parses, defaults, applies `overrides`, and validates everything: matrix
/// shapes, grid invariants, cost definiteness and the stabilizer check on
/// the initial gain.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    let raw: RawConfig =
        toml::from_str(&text).map_err(|e| SlqError::Parse(format!("{}: {e}", path.display())))?;
    resolve_config(raw, overrides)
}

/// [`load_config`] minus the file read; useful for embedding.
pub fn resolve_config(raw: RawConfig, overrides: &Overrides) -> Result<RunConfig> {
    let model = SystemModel::new(
        matrix_from_rows(&raw.model.a, "model.a")?,
        matrix_from_rows(&raw.model.b, "model.b")?,
        matrix_from_rows(&raw.model.c, "model.c")?,
        matrix_from_rows(&raw.model.d, "model.d")?,
    )?;
    let cost = CostSpec::new(
        matrix_from_rows(&raw.cost.q, "cost.q")?,
        matrix_from_rows(&raw.cost.s, "cost.s")?,
        matrix_from_rows(&raw.cost.r, "cost.r")?,
    )?;
    let x0 = DVector::from_column_slice(&raw.init.x0);
    let k0 = Gain::new(matrix_from_rows(&raw.init.k0, "init.k0")?)?;

    let mode = overrides
        .mode
        .or(match &raw.mode {
            Some(s) => Some(s.parse::<Mode>().map_err(SlqError::InvalidConfig)?),
            None => None,
        })
        .unwrap_or(Mode::Both);

    let solver_raw = raw.solver.clone().unwrap_or_default();
    let defaults = SolverConfig::default();
    let mut solver = SolverConfig {
        eps_oracle: solver_raw.eps_oracle.unwrap_or(defaults.eps_oracle),
        eps_dd: solver_raw.eps_dd.unwrap_or(defaults.eps_dd),
        max_iter: solver_raw.max_iter.unwrap_or(defaults.max_iter),
        rank_tol: solver_raw.rank_tol.unwrap_or(defaults.rank_tol),
    };
    if let Some(eps) = overrides.eps {
        solver.eps_dd = eps;
    }
    if !(solver.eps_oracle > 0.0 && solver.eps_dd > 0.0 && solver.rank_tol > 0.0) {
        return Err(SlqError::InvalidConfig(
            "solver tolerances must be positive".into(),
        ));
    }
    if solver.max_iter == 0 {
        return Err(SlqError::InvalidConfig(
            "max_iter must be at least 1".into(),
        ));
    }

    let sim = SimConfig {
        x0: x0.clone(),
        horizon: raw.sim.horizon,
        step: raw.sim.step.unwrap_or(raw.sim.sample_interval / 10.0),
        sample_interval: raw.sim.sample_interval,
        paths: overrides.paths.or(raw.sim.paths).unwrap_or(2000),
        noise_std: overrides.noise_std.or(raw.sim.noise_std).unwrap_or(0.3),
        seed: overrides.seed.or(raw.sim.seed).unwrap_or(0),
    };
    sim.validate(model.n(), model.m())?;

    let problem = ProblemSpec::new(model, cost, x0, k0)?;
    problem.validate()?;

    let out_dir = overrides
        .out_dir
        .clone()
        .or_else(|| raw.output_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("slq-out"));

    let echo = RawConfig {
        mode: Some(mode.to_string()),
        output_dir: Some(out_dir.display().to_string()),
        model: RawModel {
            a: matrix_to_rows(problem.model.a()),
            b: matrix_to_rows(problem.model.b()),
            c: matrix_to_rows(problem.model.c()),
            d: matrix_to_rows(problem.model.d()),
        },
        cost: RawCost {
            q: matrix_to_rows(problem.cost.q()),
            s: matrix_to_rows(problem.cost.s()),
            r: matrix_to_rows(problem.cost.r()),
        },
        init: RawInit {
            x0: problem.x0.iter().copied().collect(),
            k0: matrix_to_rows(problem.k0.as_matrix()),
        },
        sim: RawSim {
            horizon: sim.horizon,
            sample_interval: sim.sample_interval,
            step: Some(sim.step),
            paths: Some(sim.paths),
            noise_std: Some(sim.noise_std),
            seed: Some(sim.seed),
        },
        solver: Some(RawSolver {
            eps_oracle: Some(solver.eps_oracle),
            eps_dd: Some(solver.eps_dd),
            max_iter: Some(solver.max_iter),
            rank_tol: Some(solver.rank_tol),
        }),
    };

    Ok(RunConfig {
        problem,
        sim,
        solver,
        mode,
        out_dir,
        dump_trajectories: overrides.dump_trajectories,
        echo,
    })
}
