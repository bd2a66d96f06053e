//! Fixtures shared by the integration suites.
#![allow(dead_code)] // each test binary uses a different subset

use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use slq_pilot::problem::{CostSpec, Gain, ProblemSpec, SystemModel};
use slq_pilot::sdesim::SimConfig;

/// The bundled two-state, one-input demo problem (`configs/example.toml`).
pub fn demo_problem() -> ProblemSpec {
    let model = SystemModel::new(
        DMatrix::from_row_slice(2, 2, &[0.0, -0.6, 0.6, -0.3]),
        DMatrix::from_row_slice(2, 1, &[0.05, 0.01]),
        DMatrix::from_row_slice(2, 2, &[-0.02, 0.03, -0.05, 0.02]),
        DMatrix::from_row_slice(2, 1, &[0.001, 0.03]),
    )
    .unwrap();
    let cost = CostSpec::new(
        DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.1])),
        DMatrix::zeros(1, 2),
        DMatrix::from_element(1, 1, 1.0),
    )
    .unwrap();
    ProblemSpec::new(
        model,
        cost,
        DVector::from_column_slice(&[0.5, -0.1]),
        Gain::zero(1, 2),
    )
    .unwrap()
}

/// The reference simulation budget: 4 s horizon, dt = 0.01, h = 0.001,
/// 2000 paths, noise level 0.3.
pub fn reference_sim(seed: u64) -> SimConfig {
    SimConfig {
        x0: DVector::from_column_slice(&[0.5, -0.1]),
        horizon: 4.0,
        step: 0.001,
        sample_interval: 0.01,
        paths: 2000,
        noise_std: 0.3,
        seed,
    }
}

/// Absolute path of a bundled config file.
pub fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
}
