//! Shared fixtures for the unit tests: the bundled two-state, one-input
//! demo problem that also ships as `configs/example.toml`.

use nalgebra::{DMatrix, DVector};

use crate::problem::{CostSpec, Gain, ProblemSpec, SystemModel};

pub fn demo_model() -> SystemModel {
    SystemModel::new(
        DMatrix::from_row_slice(2, 2, &[0.0, -0.6, 0.6, -0.3]),
        DMatrix::from_row_slice(2, 1, &[0.05, 0.01]),
        DMatrix::from_row_slice(2, 2, &[-0.02, 0.03, -0.05, 0.02]),
        DMatrix::from_row_slice(2, 1, &[0.001, 0.03]),
    )
    .unwrap()
}

pub fn demo_cost() -> CostSpec {
    CostSpec::new(
        DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 0.1])),
        DMatrix::zeros(1, 2),
        DMatrix::from_element(1, 1, 1.0),
    )
    .unwrap()
}

pub fn demo_problem() -> ProblemSpec {
    ProblemSpec::new(
        demo_model(),
        demo_cost(),
        DVector::from_column_slice(&[0.5, -0.1]),
        Gain::zero(1, 2),
    )
    .unwrap()
}
