//! Exact trajectory-integral data from the closed moment ODEs of the linear
//! plant, free of Monte-Carlo and time-discretization error.
//!
//! Under `v = K0 x + e` with `e` piecewise constant on the sampling grid,
//! the mean `mu = E[X]` and second moment `Sig = E[X X^T]` obey affine ODEs
//! with constant coefficients on each sampling interval:
//!
//! ```text
//! d/dt mu  = A0 mu + B e
//! d/dt Sig = A0 Sig + Sig A0^T + C0 Sig C0^T + (B e) mu^T + mu (B e)^T
//!            + C0 mu (D e)^T + (D e) mu^T C0^T + (D e)(D e)^T
//! ```
//!
//! with `A0 = A + B K0`, `C0 = C + D K0`. Augmenting the state with running
//! integrals of `mu` and `vec(Sig)` makes each interval a single matrix
//! exponential, so the produced [`DataMatrices`] satisfy the regression
//! identity of the data-driven solver to machine precision. That turns the
//! whole data-driven pipeline into a deterministic fixture: against this
//! source it must reproduce the model-based iterates exactly, and any
//! deviation is an algebra bug rather than sampling noise.

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, SlqError};
use crate::matops::{kron, monomial_selector, vech_len};
use crate::problem::{closed_loop, Gain, SystemModel};
use crate::sdesim::{DataMatrices, ExplorationSignal, SimConfig};

/// Computes exact data matrices for the ensemble that [`simulate_batch`]
/// estimates by Monte-Carlo: same plant, same feedback, same injected
/// signal, but integrating the moment ODEs instead of sampling paths.
///
/// [`simulate_batch`]: crate::sdesim::simulate_batch
pub fn exact_data(
    model: &SystemModel,
    k0: &Gain,
    x0: &DVector<f64>,
    sample_interval: f64,
    signal: &ExplorationSignal,
) -> Result<DataMatrices> {
    let (n, m) = (model.n(), model.m());
    if k0.nrows() != m || k0.ncols() != n {
        return Err(SlqError::Dimension(format!(
            "K0 is {}x{}, expected {m}x{n}",
            k0.nrows(),
            k0.ncols()
        )));
    }
    if x0.len() != n {
        return Err(SlqError::Dimension(format!(
            "x0 has length {}, expected {n}",
            x0.len()
        )));
    }
    if signal.m() != m {
        return Err(SlqError::Dimension(format!(
            "signal has {} components, expected {m}",
            signal.m()
        )));
    }
    if !sample_interval.is_finite() || sample_interval <= 0.0 {
        return Err(SlqError::InvalidConfig(
            "sample_interval must be positive".into(),
        ));
    }

    let l = signal.intervals();
    let nv = vech_len(n);
    let n2 = n * n;
    let (a0, c0) = closed_loop(model, k0);
    let eye = DMatrix::<f64>::identity(n, n);
    let flow = kron(&eye, &a0) + kron(&a0, &eye) + kron(&c0, &c0);
    let selector = monomial_selector(n);
    let k0_kron = kron(k0.as_matrix(), k0.as_matrix());
    let i_kron_k0 = kron(&eye, k0.as_matrix());

    // Augmented state: [mu; vec(Sig); int mu; int vec(Sig); 1].
    let dim = 2 * n + 2 * n2 + 1;
    let mu_at = 0;
    let sig_at = n;
    let imu_at = n + n2;
    let isig_at = n + n2 + n;
    let one_at = dim - 1;

    let mut eta = DMatrix::zeros(l, nv);
    let mut dxx = DMatrix::zeros(l, n2);
    let mut dxv = DMatrix::zeros(l, n * m);
    let mut dvv = DMatrix::zeros(l, m * m);

    let mut mu = x0.clone();
    let mut sig_vec = DVector::from_column_slice(
        kron(
            &DMatrix::from_column_slice(n, 1, x0.as_slice()),
            &DMatrix::from_column_slice(n, 1, x0.as_slice()),
        )
        .as_slice(),
    );

    for k in 0..l {
        let e = signal.value(k);
        let be = model.b() * &e;
        let de = model.d() * &e;
        let be_mat = DMatrix::from_column_slice(n, 1, be.as_slice());
        let de_mat = DMatrix::from_column_slice(n, 1, de.as_slice());

        let mut gen = DMatrix::<f64>::zeros(dim, dim);
        gen.view_mut((mu_at, mu_at), (n, n)).copy_from(&a0);
        gen.view_mut((mu_at, one_at), (n, 1)).copy_from(&be_mat);
        gen.view_mut((sig_at, sig_at), (n2, n2)).copy_from(&flow);
        let mean_forcing =
            kron(&eye, &be_mat) + kron(&be_mat, &eye) + kron(&de_mat, &c0) + kron(&c0, &de_mat);
        gen.view_mut((sig_at, mu_at), (n2, n))
            .copy_from(&mean_forcing);
        gen.view_mut((sig_at, one_at), (n2, 1))
            .copy_from(&kron(&de_mat, &de_mat));
        gen.view_mut((imu_at, mu_at), (n, n))
            .copy_from(&DMatrix::identity(n, n));
        gen.view_mut((isig_at, sig_at), (n2, n2))
            .copy_from(&DMatrix::identity(n2, n2));

        let mut z = DVector::<f64>::zeros(dim);
        z.rows_mut(mu_at, n).copy_from(&mu);
        z.rows_mut(sig_at, n2).copy_from(&sig_vec);
        z[one_at] = 1.0;

        let z_next = (gen * sample_interval).exp() * z;
        let mu_next = DVector::from(z_next.rows(mu_at, n));
        let sig_next = DVector::from(z_next.rows(sig_at, n2));
        let imu = DVector::from(z_next.rows(imu_at, n));
        let isig = DVector::from(z_next.rows(isig_at, n2));

        eta.row_mut(k)
            .copy_from(&(&selector * (&sig_next - &sig_vec)).transpose());
        dxx.row_mut(k).copy_from(&isig.transpose());

        // E[X (x) v] = (I (x) K0) vec(Sig) + mu (x) e, integrated.
        let imu_kron_e = kron(
            &DMatrix::from_column_slice(n, 1, imu.as_slice()),
            &DMatrix::from_column_slice(m, 1, e.as_slice()),
        );
        let xv = &i_kron_k0 * &isig + DVector::from_column_slice(imu_kron_e.as_slice());
        dxv.row_mut(k).copy_from(&xv.transpose());

        // E[v (x) v] = (K0 (x) K0) vec(Sig) + (K0 mu) (x) e + e (x) (K0 mu)
        //              + e (x) e, integrated.
        let k0_imu = k0.as_matrix() * &imu;
        let k0_imu_mat = DMatrix::from_column_slice(m, 1, k0_imu.as_slice());
        let e_mat = DMatrix::from_column_slice(m, 1, e.as_slice());
        let vv = &k0_kron * &isig
            + DVector::from_column_slice(kron(&k0_imu_mat, &e_mat).as_slice())
            + DVector::from_column_slice(kron(&e_mat, &k0_imu_mat).as_slice())
            + DVector::from_column_slice(kron(&e_mat, &e_mat).as_slice()) * sample_interval;
        dvv.row_mut(k).copy_from(&vv.transpose());

        mu = mu_next;
        sig_vec = sig_next;
    }

    Ok(DataMatrices {
        eta_xx: eta,
        delta_xx: dxx,
        delta_xv: dxv,
        delta_vv: dvv,
        l,
        n,
        m,
    })
}

/// Same as [`exact_data`], with the exploration signal derived from
/// `cfg.seed` exactly as [`simulate_batch`] derives it.
///
/// [`simulate_batch`]: crate::sdesim::simulate_batch
pub fn exact_data_from_config(
    model: &SystemModel,
    k0: &Gain,
    cfg: &SimConfig,
) -> Result<DataMatrices> {
    cfg.validate(model.n(), model.m())?;
    let signal = ExplorationSignal::sample(cfg.seed, model.m(), cfg.intervals(), cfg.noise_std);
    exact_data(model, k0, &cfg.x0, cfg.sample_interval, &signal)
}
