//! Data-driven policy iteration: recovers the value matrix and gain from
//! trajectory-integral data by least squares, iterating to the Riccati
//! solution without ever touching the drift matrix `A`, the input matrix
//! `B`, or the state-noise matrix `C`.
//!
//! Each iteration solves the overdetermined linear system
//!
//! ```text
//! [ eta_xx - d_dv + d_dkx | 2 delta_xv - 2 delta_xx (I (x) K_i') ]
//!     * [ vech(P); vec(M) ] = delta_xx vec(-Q_i + 2 K_i'S) - 2 delta_xv vec(S)
//! ```
//!
//! where `Q_i = S'K_i + K_i'RK_i + K_i'S + Q` and `M = (R + D'PD)K_next`
//! carries the next gain. Everything on the left is assembled from the
//! collected data plus `D`, the cost weights, and the current gain; the
//! unknown `(P, M)` pair is identified uniquely whenever the concatenated
//! data matrix `[delta_xx, delta_xv]` has full effective rank.
//!
//! The data is collected once under the initial gain and reused by every
//! iteration; only the gain-dependent blocks are recomputed.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SlqError};
use crate::matops::{
    kron, monomial_selector, numeric_rank, unvech_scaled, vech_len, SymMatrix, VechVector,
};
use crate::problem::{CostSpec, Gain};
use crate::sdesim::{check_rank, DataMatrices};

/// Condition-number cap on `R + D'PD` before a recovered gain is trusted.
const GRAM_CONDITION_LIMIT: f64 = 1e12;

/// Tolerances and caps for [`policy_iteration`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveOptions {
    /// Stop when `||P_{i+1} - P_i||_F` falls below this.
    pub eps: f64,
    /// Iteration cap.
    pub max_iter: usize,
    /// Relative singular-value tolerance for the rank checks.
    pub rank_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            eps: 1e-3,
            max_iter: 100,
            rank_tol: 1e-8,
        }
    }
}

/// The regression system of one iteration.
#[derive(Debug, Clone)]
pub struct LsqSystem {
    /// `l x (n(n+1)/2 + mn)` coefficient matrix.
    pub v: DMatrix<f64>,
    /// Right-hand side, length `l`.
    pub rhs: DVector<f64>,
    /// Iteration index this system was assembled for.
    pub iteration: usize,
    pub n: usize,
    pub m: usize,
}

/// One data-driven iteration: the recovered pair and diagnostics.
#[derive(Debug, Clone)]
pub struct DdIteration {
    pub iteration: usize,
    /// `||P_{i+1} - P_i||_F`, with `P_0 = 0` for the first check.
    pub dp_norm: f64,
    /// Relative least-squares misfit `||V z - rhs|| / ||rhs||`.
    pub lsq_misfit: f64,
    pub p: SymMatrix,
    pub k: Gain,
}

/// Result of the data-driven policy iteration.
#[derive(Debug, Clone)]
pub struct DdReport {
    pub p_tilde: SymMatrix,
    pub k_tilde: Gain,
    pub iterations: usize,
    pub history: Vec<DdIteration>,
    /// Outcome of the identifiability check on the raw data.
    pub rank_ok: bool,
    pub achieved_rank: usize,
    pub converged: bool,
}

fn check_d(data: &DataMatrices, d: &DMatrix<f64>) -> Result<()> {
    if d.nrows() != data.n || d.ncols() != data.m {
        return Err(SlqError::Dimension(format!(
            "D is {}x{}, data expects {}x{}",
            d.nrows(),
            d.ncols(),
            data.n,
            data.m
        )));
    }
    Ok(())
}

/// Synthesizes the `bar(Dv)` interval integrals from the stored `v (x) v`
/// integrals: `bar(Dv) = L (D (x) D) (v (x) v)`, so the data transposes to
/// `delta_vv (D (x) D)' L'`.
pub fn derive_dv(data: &DataMatrices, d: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_d(data, d)?;
    let l_map = monomial_selector(data.n);
    Ok(&data.delta_vv * kron(d, d).transpose() * l_map.transpose())
}

/// Synthesizes the `bar(D K_i x)` interval integrals from the stored
/// `x (x) x` integrals, for the current gain: `delta_xx (DK (x) DK)' L'`.
///
/// Recomputed per iteration; the underlying data never changes.
pub fn derive_dkx(data: &DataMatrices, d: &DMatrix<f64>, k: &Gain) -> Result<DMatrix<f64>> {
    check_d(data, d)?;
    if k.nrows() != data.m || k.ncols() != data.n {
        return Err(SlqError::Dimension(format!(
            "gain is {}x{}, data expects {}x{}",
            k.nrows(),
            k.ncols(),
            data.m,
            data.n
        )));
    }
    let dk = d * k.as_matrix();
    let l_map = monomial_selector(data.n);
    Ok(&data.delta_xx * kron(&dk, &dk).transpose() * l_map.transpose())
}

/// Assembles the regression system for the current gain.
pub fn assemble(
    data: &DataMatrices,
    d: &DMatrix<f64>,
    cost: &CostSpec,
    k: &Gain,
    iteration: usize,
) -> Result<LsqSystem> {
    let (n, m) = (data.n, data.m);
    if cost.n() != n || cost.m() != m {
        return Err(SlqError::Dimension(format!(
            "cost weights sized for n={}, m={}, data expects n={n}, m={m}",
            cost.n(),
            cost.m()
        )));
    }
    let nv = vech_len(n);
    let km = k.as_matrix();

    let d_dv = derive_dv(data, d)?;
    let d_dkx = derive_dkx(data, d, k)?;
    let eye = DMatrix::<f64>::identity(n, n);
    let gain_block = &data.delta_xv * 2.0 - &data.delta_xx * kron(&eye, &km.transpose()) * 2.0;

    let mut v = DMatrix::zeros(data.l, nv + m * n);
    v.view_mut((0, 0), (data.l, nv))
        .copy_from(&(&data.eta_xx - &d_dv + &d_dkx));
    v.view_mut((0, nv), (data.l, m * n)).copy_from(&gain_block);

    // Q_i = S'K + K'RK + K'S + Q
    let q_i = cost.s().transpose() * km
        + km.transpose() * cost.r() * km
        + km.transpose() * cost.s()
        + cost.q();
    let rhs_mat = -q_i + km.transpose() * cost.s() * 2.0;
    let rhs = &data.delta_xx * DVector::from_column_slice(rhs_mat.as_slice())
        - &data.delta_xv * DVector::from_column_slice(cost.s().as_slice()) * 2.0;

    Ok(LsqSystem {
        v,
        rhs,
        iteration,
        n,
        m,
    })
}

/// Solves the regression by SVD and splits the solution into the value
/// matrix and the gain carrier `M`.
///
/// Errors with [`SlqError::RankDeficient`] when the coefficient matrix does
/// not have full column rank at the given relative tolerance.
pub fn lsq_solve(sys: &LsqSystem, rank_tol: f64) -> Result<(SymMatrix, DMatrix<f64>)> {
    let cols = sys.v.ncols();
    let rank = numeric_rank(&sys.v, rank_tol);
    if rank < cols {
        return Err(SlqError::RankDeficient {
            rank,
            required: cols,
        });
    }
    let svd = sys.v.clone().svd(true, true);
    let z = svd
        .solve(&sys.rhs, 0.0)
        .map_err(|e| SlqError::NumericalBreakdown(format!("least-squares solve failed: {e}")))?;
    let nv = vech_len(sys.n);
    let p_vech = VechVector::from_vector(DVector::from(z.rows(0, nv)))?;
    let p = unvech_scaled(&p_vech);
    let m_mat = DMatrix::from_column_slice(sys.m, sys.n, z.rows(nv, sys.m * sys.n).as_slice());
    Ok((p, m_mat))
}

/// Recovers the next gain from the solution pair:
/// `K = (R + D'PD)^-1 M`.
pub fn gain_from_m(
    cost: &CostSpec,
    d: &DMatrix<f64>,
    p: &SymMatrix,
    m_mat: &DMatrix<f64>,
) -> Result<Gain> {
    let gram = cost.r() + d.transpose() * p.as_matrix() * d;
    let sv = gram.clone().singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    if smin <= 0.0 || smax / smin > GRAM_CONDITION_LIMIT {
        return Err(SlqError::NumericalBreakdown(format!(
            "R + D'PD is near-singular (condition {:.3e}); the recovered value matrix is not trustworthy",
            if smin > 0.0 { smax / smin } else { f64::INFINITY }
        )));
    }
    let k = gram
        .lu()
        .solve(m_mat)
        .ok_or_else(|| SlqError::NumericalBreakdown("R + D'PD is singular".into()))?;
    Gain::new(k)
}

/// Runs the data-driven policy iteration on fixed collected data.
///
/// Checks identifiability first, then repeats assemble / solve / gain update
/// from `k0` until `||P_{i+1} - P_i||_F < opts.eps` (with `P_0 = 0` for the
/// first check) or the iteration cap.
pub fn policy_iteration(
    data: &DataMatrices,
    d: &DMatrix<f64>,
    cost: &CostSpec,
    k0: &Gain,
    opts: &SolveOptions,
) -> Result<DdReport> {
    if opts.eps <= 0.0 {
        return Err(SlqError::InvalidConfig("eps must be positive".into()));
    }
    let (rank_ok, achieved_rank) = check_rank(data, opts.rank_tol);
    if !rank_ok {
        return Err(SlqError::RankDeficient {
            rank: achieved_rank,
            required: data.m * data.n + vech_len(data.n),
        });
    }

    let n = data.n;
    let mut k = k0.clone();
    let mut p_prev = DMatrix::<f64>::zeros(n, n);
    let mut history: Vec<DdIteration> = Vec::new();

    for i in 0..opts.max_iter {
        let sys = assemble(data, d, cost, &k, i)?;
        let (p, m_mat) = lsq_solve(&sys, opts.rank_tol)?;
        if p.iter().any(|x| !x.is_finite()) || m_mat.iter().any(|x| !x.is_finite()) {
            return Err(SlqError::NumericalBreakdown(format!(
                "non-finite iterate at iteration {i}"
            )));
        }
        let k_next = gain_from_m(cost, d, &p, &m_mat)?;
        let misfit_den = sys.rhs.norm();
        let misfit = if misfit_den > 0.0 {
            let z = vech_and_vec(&p, &m_mat);
            (&sys.v * z - &sys.rhs).norm() / misfit_den
        } else {
            0.0
        };
        let dp = (p.as_matrix() - &p_prev).norm();
        history.push(DdIteration {
            iteration: i,
            dp_norm: dp,
            lsq_misfit: misfit,
            p: p.clone(),
            k: k_next.clone(),
        });
        if dp < opts.eps {
            return Ok(DdReport {
                p_tilde: p,
                k_tilde: k_next,
                iterations: i + 1,
                history,
                rank_ok,
                achieved_rank,
                converged: true,
            });
        }
        p_prev = p.as_matrix().clone();
        k = k_next;
    }
    Err(SlqError::NotConverged {
        iterations: opts.max_iter,
        last_dp: history.last().map(|h| h.dp_norm).unwrap_or(f64::NAN),
    })
}

/// Stacks `(vech(P), vec(M))` back into a solution vector.
fn vech_and_vec(p: &SymMatrix, m_mat: &DMatrix<f64>) -> DVector<f64> {
    let vech = crate::matops::vech_scaled(p);
    let mut z = DVector::zeros(vech.as_vector().len() + m_mat.len());
    z.rows_mut(0, vech.as_vector().len())
        .copy_from(vech.as_vector());
    z.rows_mut(vech.as_vector().len(), m_mat.len())
        .copy_from(&DVector::from_column_slice(m_mat.as_slice()));
    z
}
