//! Problem definition: the controlled linear SDE, the quadratic cost, and
//! mean-square stability tests for candidate feedback gains.
//!
//! The plant is
//!
//! ```text
//! dX = (A X + B v) ds + (C X + D v) dW
//! ```
//!
//! with state dimension `n` and input dimension `m`, driven by scalar
//! Brownian motion. The cost integrand is `X'QX + 2 v'SX + v'Rv`. A gain `K`
//! is a mean-square stabilizer when the closed-loop second moment
//! `E[X X']` decays to zero; that is decided exactly through the spectrum of
//! the `n^2 x n^2` second-moment generator rather than by simulation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SlqError};
use crate::matops::{kron, SymMatrix};

/// Relative floor used for the positive-definiteness checks.
const DEFINITENESS_TOL: f64 = 1e-10;

/// Coefficient matrices of the controlled SDE.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
}

impl SystemModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, d: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        let m = b.ncols();
        if !a.is_square() || !c.is_square() || c.nrows() != n {
            return Err(SlqError::Dimension(format!(
                "A and C must both be n x n, got A {}x{}, C {}x{}",
                a.nrows(),
                a.ncols(),
                c.nrows(),
                c.ncols()
            )));
        }
        if b.nrows() != n || d.nrows() != n || d.ncols() != m {
            return Err(SlqError::Dimension(format!(
                "B and D must both be n x m, got B {}x{}, D {}x{}",
                b.nrows(),
                b.ncols(),
                d.nrows(),
                d.ncols()
            )));
        }
        for mat in [&a, &b, &c, &d] {
            if mat.iter().any(|x| !x.is_finite()) {
                return Err(SlqError::Dimension(
                    "system matrices must have finite entries".into(),
                ));
            }
        }
        Ok(Self { a, b, c, d })
    }

    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    /// Input dimension.
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }
}

/// Quadratic cost weights. `Q` and `R` are symmetrized on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct CostSpec {
    q: DMatrix<f64>,
    s: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl CostSpec {
    pub fn new(q: DMatrix<f64>, s: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        let q = SymMatrix::new(q)?.into_matrix();
        let r = SymMatrix::new(r)?.into_matrix();
        if s.ncols() != q.nrows() || s.nrows() != r.nrows() {
            return Err(SlqError::Dimension(format!(
                "S must be m x n with Q n x n and R m x m, got S {}x{}, Q {}x{}, R {}x{}",
                s.nrows(),
                s.ncols(),
                q.nrows(),
                q.ncols(),
                r.nrows(),
                r.ncols()
            )));
        }
        Ok(Self { q, s, r })
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn m(&self) -> usize {
        self.r.nrows()
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn s(&self) -> &DMatrix<f64> {
        &self.s
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
}

/// A static feedback gain `v = K x`, `m x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gain(DMatrix<f64>);

impl Gain {
    pub fn new(k: DMatrix<f64>) -> Result<Self> {
        if k.iter().any(|x| !x.is_finite()) {
            return Err(SlqError::Dimension("gain must have finite entries".into()));
        }
        Ok(Self(k))
    }

    pub fn zero(m: usize, n: usize) -> Self {
        Self(DMatrix::zeros(m, n))
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

impl std::ops::Deref for Gain {
    type Target = DMatrix<f64>;
    fn deref(&self) -> &Self::Target {
        &self.0
    }
}

/// A full problem instance: plant, cost, initial state and initial gain.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub model: SystemModel,
    pub cost: CostSpec,
    pub x0: DVector<f64>,
    pub k0: Gain,
}

impl ProblemSpec {
    pub fn new(model: SystemModel, cost: CostSpec, x0: DVector<f64>, k0: Gain) -> Result<Self> {
        let (n, m) = (model.n(), model.m());
        if cost.n() != n || cost.m() != m {
            return Err(SlqError::Dimension(format!(
                "cost weights sized for n={}, m={}, but model has n={n}, m={m}",
                cost.n(),
                cost.m()
            )));
        }
        if x0.len() != n {
            return Err(SlqError::Dimension(format!(
                "x0 has length {}, expected {n}",
                x0.len()
            )));
        }
        if k0.nrows() != m || k0.ncols() != n {
            return Err(SlqError::Dimension(format!(
                "K0 is {}x{}, expected {m}x{n}",
                k0.nrows(),
                k0.ncols()
            )));
        }
        Ok(Self {
            model,
            cost,
            x0,
            k0,
        })
    }

    /// Runs the load-time checks: cost definiteness and the stabilizer test
    /// on `k0`.
    pub fn validate(&self) -> Result<()> {
        validate_cost(&self.cost)?;
        let abscissa = ms_spectral_abscissa(&self.model, &self.k0);
        if abscissa >= 0.0 {
            return Err(SlqError::NotStabilizer { abscissa });
        }
        Ok(())
    }
}

fn min_max_eigenvalue(m: &DMatrix<f64>) -> (f64, f64) {
    let ev = SymMatrix::new(m.clone())
        .expect("square by construction")
        .eigenvalues();
    (ev[0], ev[ev.len() - 1].abs().max(ev[0].abs()))
}

/// Checks the cost-weight definiteness requirements: `R > 0` and
/// `Q - S'R^-1 S > 0`, each with a relative eigenvalue floor.
pub fn validate_cost(cost: &CostSpec) -> Result<()> {
    let (r_min, r_maxabs) = min_max_eigenvalue(cost.r());
    if r_min <= DEFINITENESS_TOL * (1.0 + r_maxabs) {
        return Err(SlqError::RNotPositiveDefinite {
            min_eigenvalue: r_min,
        });
    }
    // R is positive definite here, so the Cholesky-based solve is safe.
    let r_inv_s = cost
        .r()
        .clone()
        .cholesky()
        .ok_or(SlqError::RNotPositiveDefinite {
            min_eigenvalue: r_min,
        })?
        .solve(cost.s());
    let schur = cost.q() - cost.s().transpose() * r_inv_s;
    let (schur_min, schur_maxabs) = min_max_eigenvalue(&schur);
    if schur_min <= DEFINITENESS_TOL * (1.0 + schur_maxabs) {
        return Err(SlqError::SchurComplementNotPositiveDefinite {
            min_eigenvalue: schur_min,
        });
    }
    Ok(())
}

/// Closed-loop drift and diffusion matrices `(A + BK, C + DK)`.
pub fn closed_loop(model: &SystemModel, k: &Gain) -> (DMatrix<f64>, DMatrix<f64>) {
    (
        model.a() + model.b() * k.as_matrix(),
        model.c() + model.d() * k.as_matrix(),
    )
}

/// Second-moment generator `I (x) A' + A' (x) I + C' (x) C'` of the closed
/// loop `(A, C)`, acting on `vecm` of the Lyapunov variable.
///
/// Its spectrum decides mean-square stability, and the generalized Lyapunov
/// equation is linear in it.
pub fn ms_generator(a_cl: &DMatrix<f64>, c_cl: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a_cl.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let at = a_cl.transpose();
    let ct = c_cl.transpose();
    kron(&eye, &at) + kron(&at, &eye) + kron(&ct, &ct)
}

/// Largest real part over the spectrum of the closed-loop second-moment
/// generator. Negative iff `k` is a mean-square stabilizer.
pub fn ms_spectral_abscissa(model: &SystemModel, k: &Gain) -> f64 {
    let (a_cl, c_cl) = closed_loop(model, k);
    let gen = ms_generator(&a_cl, &c_cl);
    gen.complex_eigenvalues()
        .iter()
        .map(|ev| ev.re)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Whether the closed-loop second moment decays with at least the given
/// margin, i.e. the spectral abscissa is below `-margin`.
pub fn is_ms_stabilizer(model: &SystemModel, k: &Gain, margin: f64) -> bool {
    ms_spectral_abscissa(model, k) < -margin
}
