//! Model-based policy iteration: exact generalized-Lyapunov solves for the
//! policy-evaluation step, closed-form gain updates, and Riccati residuals.
//!
//! This is the ground-truth solver the data-driven iteration is validated
//! against. Policy evaluation solves
//!
//! ```text
//! A_i' P + P A_i + C_i' P C_i + Q_i = 0
//! ```
//!
//! by dense Kronecker linearization (`n^2` unknowns, direct factorization),
//! which is exact at the problem sizes this crate targets. The iteration
//! produces a monotonically decreasing sequence of value matrices converging
//! to the stabilizing Riccati solution, with every intermediate gain itself
//! a stabilizer.

use nalgebra::DMatrix;

use crate::error::{Result, SlqError};
use crate::matops::{vecm, SymMatrix};
use crate::problem::{
    closed_loop, is_ms_stabilizer, ms_generator, validate_cost, CostSpec, Gain, ProblemSpec,
    SystemModel,
};

/// Symmetric positive-definite value matrix produced by policy evaluation.
pub type ValueMatrix = SymMatrix;

/// One policy-iteration step: the value matrix and gain it produced, with
/// convergence diagnostics.
#[derive(Debug, Clone)]
pub struct OracleIteration {
    pub iteration: usize,
    /// `||P_{i+1} - P_i||_F`, with `P_0 = 0` for the first step.
    pub dp_norm: f64,
    /// Frobenius norm of the Riccati residual at `P_{i+1}`.
    pub residual_norm: f64,
    pub p: SymMatrix,
    pub k: Gain,
}

/// Result of a converged (or capped) model-based policy iteration.
#[derive(Debug, Clone)]
pub struct OracleReport {
    pub p_star: ValueMatrix,
    pub k_star: Gain,
    pub iterations: usize,
    pub history: Vec<OracleIteration>,
    pub converged: bool,
}

/// Solves the generalized Lyapunov equation
/// `A' P + P A + C' P C + Q = 0` for symmetric `P`.
///
/// Fails with [`SlqError::SingularGenerator`] when the second-moment
/// generator of `(A, C)` is singular, which is the signature of a
/// non-stabilizing gain.
pub fn solve_glyap(a_cl: &DMatrix<f64>, c_cl: &DMatrix<f64>, q: &SymMatrix) -> Result<ValueMatrix> {
    let n = a_cl.nrows();
    if c_cl.nrows() != n || !a_cl.is_square() || !c_cl.is_square() || q.dim() != n {
        return Err(SlqError::Dimension(format!(
            "Lyapunov solve needs square n x n inputs, got A {}x{}, C {}x{}, Q {}x{}",
            a_cl.nrows(),
            a_cl.ncols(),
            c_cl.nrows(),
            c_cl.ncols(),
            q.dim(),
            q.dim()
        )));
    }
    let gen = ms_generator(a_cl, c_cl);
    let rhs = -vecm(q.as_matrix());
    let lu = gen.clone().lu();
    let sol = lu
        .solve(&rhs)
        .ok_or(SlqError::SingularGenerator { iteration: None })?;
    let p = SymMatrix::new(DMatrix::from_column_slice(n, n, sol.as_slice()))?;

    // The solution must actually satisfy the equation; an ill-conditioned
    // generator (borderline stability) shows up here.
    let residual = a_cl.transpose() * p.as_matrix()
        + p.as_matrix() * a_cl
        + c_cl.transpose() * p.as_matrix() * c_cl
        + q.as_matrix();
    if !p.iter().all(|x| x.is_finite()) || residual.norm() > 1e-10 * (1.0 + q.as_matrix().norm()) {
        return Err(SlqError::SingularGenerator { iteration: None });
    }
    Ok(p)
}

/// Policy-improvement step:
/// `K = -(R + D'PD)^-1 (B'P + D'PC + S)`.
pub fn gain_update(model: &SystemModel, cost: &CostSpec, p: &ValueMatrix) -> Result<Gain> {
    let gram = cost.r() + model.d().transpose() * p.as_matrix() * model.d();
    let rhs = model.b().transpose() * p.as_matrix()
        + model.d().transpose() * p.as_matrix() * model.c()
        + cost.s();
    let k = gram
        .lu()
        .solve(&rhs)
        .ok_or_else(|| SlqError::NumericalBreakdown("R + D'PD is singular".into()))?;
    Gain::new(-k)
}

/// Riccati residual in its policy form:
/// `P A_K + A_K' P + C_K' P C_K + K'RK + S'K + K'S + Q`.
///
/// Zero exactly at a solution pair `(P*, K*)`.
pub fn sare_residual(model: &SystemModel, cost: &CostSpec, p: &SymMatrix, k: &Gain) -> SymMatrix {
    let (a_cl, c_cl) = closed_loop(model, k);
    let km = k.as_matrix();
    let res = p.as_matrix() * &a_cl
        + a_cl.transpose() * p.as_matrix()
        + c_cl.transpose() * p.as_matrix() * c_cl
        + km.transpose() * cost.r() * km
        + cost.s().transpose() * km
        + km.transpose() * cost.s()
        + cost.q();
    SymMatrix::new(res).expect("residual is square by construction")
}

/// Riccati residual in closed form, eliminating the gain:
/// `PA + A'P + C'PC + Q - (C'PD + PB + S')(R + D'PD)^-1 (D'PC + B'P + S)`.
pub fn sare_residual_closed(
    model: &SystemModel,
    cost: &CostSpec,
    p: &SymMatrix,
) -> Result<SymMatrix> {
    let gram = cost.r() + model.d().transpose() * p.as_matrix() * model.d();
    let cross = model.d().transpose() * p.as_matrix() * model.c()
        + model.b().transpose() * p.as_matrix()
        + cost.s();
    let solved = gram
        .lu()
        .solve(&cross)
        .ok_or_else(|| SlqError::NumericalBreakdown("R + D'PD is singular".into()))?;
    let res = p.as_matrix() * model.a()
        + model.a().transpose() * p.as_matrix()
        + model.c().transpose() * p.as_matrix() * model.c()
        + cost.q()
        - cross.transpose() * solved;
    SymMatrix::new(res)
}

/// Runs model-based policy iteration from `spec.k0` until
/// `||P_{i+1} - P_i||_F < eps` or `max_iter` steps.
pub fn policy_iteration(spec: &ProblemSpec, eps: f64, max_iter: usize) -> Result<OracleReport> {
    validate_cost(&spec.cost)?;
    if !is_ms_stabilizer(&spec.model, &spec.k0, 0.0) {
        return Err(SlqError::NotStabilizer {
            abscissa: crate::problem::ms_spectral_abscissa(&spec.model, &spec.k0),
        });
    }

    let n = spec.model.n();
    let mut k = spec.k0.clone();
    let mut p_prev = DMatrix::<f64>::zeros(n, n);
    let mut history = Vec::new();

    for i in 0..max_iter {
        let (a_cl, c_cl) = closed_loop(&spec.model, &k);
        let km = k.as_matrix();
        let q_i = SymMatrix::new(
            spec.cost.s().transpose() * km
                + km.transpose() * spec.cost.r() * km
                + km.transpose() * spec.cost.s()
                + spec.cost.q(),
        )?;
        let p = solve_glyap(&a_cl, &c_cl, &q_i).map_err(|e| match e {
            SlqError::SingularGenerator { .. } => {
                SlqError::SingularGenerator { iteration: Some(i) }
            }
            other => other,
        })?;
        let k_next = gain_update(&spec.model, &spec.cost, &p)?;
        let dp = (p.as_matrix() - &p_prev).norm();
        let residual_norm = sare_residual_closed(&spec.model, &spec.cost, &p)?.norm();
        history.push(OracleIteration {
            iteration: i,
            dp_norm: dp,
            residual_norm,
            p: p.clone(),
            k: k_next.clone(),
        });
        if dp < eps {
            return Ok(OracleReport {
                p_star: p,
                k_star: k_next,
                iterations: i + 1,
                history,
                converged: true,
            });
        }
        p_prev = p.as_matrix().clone();
        k = k_next;
    }
    Err(SlqError::NotConverged {
        iterations: max_iter,
        last_dp: history.last().map(|h| h.dp_norm).unwrap_or(f64::NAN),
    })
}
