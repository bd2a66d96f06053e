//! Euler-Maruyama batch simulation of the controlled SDE under
//! `v = K0 x + e`, and accumulation of the per-interval trajectory integrals
//! that feed the data-driven solver.
//!
//! The exploration signal `e` is a single Gaussian realization, piecewise
//! constant on the sampling grid and shared by every Monte-Carlo path; the
//! expectation the data matrices estimate is over the Brownian motion only,
//! conditioned on that known injected signal. Redrawing `e` per path would
//! average it out of the cross moments: `E[X (x) v]` would collapse onto
//! `E[X (x) X](I (x) K0')` and the regressor built from the data could never
//! reach full column rank, no matter how many paths are used.
//!
//! Reproducibility contract: every per-path Brownian stream is derived from
//! `(seed, path index)` and the exploration signal from `(seed, tag)`, and
//! reductions over paths run in a fixed chunk tree, so results are
//! bit-identical for a given seed regardless of worker count or scheduling.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Result, SlqError};
use crate::matops::{vech_len, vech_pairs};
use crate::problem::{Gain, SystemModel};

/// States with any component beyond this magnitude abort the simulation.
const OVERFLOW_GUARD: f64 = 1e6;

/// Paths per reduction chunk; fixed so the summation tree does not depend on
/// the worker count.
const REDUCTION_CHUNK: usize = 64;

/// Stream tag reserved for the exploration-signal RNG (paths use their own
/// index, which can never reach this value).
const EXPLORATION_STREAM: u64 = u64::MAX;

/// Simulation grid and Monte-Carlo budget.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Initial state, length `n`.
    pub x0: DVector<f64>,
    /// Total horizon `T` in seconds.
    pub horizon: f64,
    /// Euler step `h`.
    pub step: f64,
    /// Sampling interval `dt`; must be an integer multiple of `step`.
    pub sample_interval: f64,
    /// Number of Monte-Carlo paths.
    pub paths: usize,
    /// Standard deviation of the exploration signal.
    pub noise_std: f64,
    /// Master seed for all random streams.
    pub seed: u64,
}

impl SimConfig {
    /// Number of sampling intervals `l = T / dt`.
    pub fn intervals(&self) -> usize {
        (self.horizon / self.sample_interval).round() as usize
    }

    /// Euler steps per sampling interval.
    pub fn steps_per_interval(&self) -> usize {
        (self.sample_interval / self.step).round() as usize
    }

    /// Euler steps over the whole horizon.
    pub fn total_steps(&self) -> usize {
        self.intervals() * self.steps_per_interval()
    }

    /// Checks the grid invariants against the problem dimensions.
    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        if self.x0.len() != n {
            return Err(SlqError::Dimension(format!(
                "x0 has length {}, expected {n}",
                self.x0.len()
            )));
        }
        if self.x0.iter().any(|x| !x.is_finite()) {
            return Err(SlqError::InvalidConfig("x0 must be finite".into()));
        }
        if !self.step.is_finite() || self.step <= 0.0 {
            return Err(SlqError::InvalidConfig("step must be positive".into()));
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return Err(SlqError::InvalidConfig(
                "noise_std must be finite and nonnegative".into(),
            ));
        }
        if self.paths == 0 {
            return Err(SlqError::InvalidConfig("paths must be at least 1".into()));
        }
        check_integer_multiple(self.sample_interval, self.step, "sample_interval", "step")?;
        check_integer_multiple(
            self.horizon,
            self.sample_interval,
            "horizon",
            "sample_interval",
        )?;
        let l = self.intervals();
        let needed = vech_len(n) + m * n;
        if l < needed {
            return Err(SlqError::InvalidConfig(format!(
                "horizon/sample_interval gives {l} sampling intervals; at least {needed} \
                 (= n(n+1)/2 + m*n) are required for an identifiable regression"
            )));
        }
        Ok(())
    }
}

fn check_integer_multiple(big: f64, small: f64, big_name: &str, small_name: &str) -> Result<()> {
    if !(big > 0.0 && small > 0.0) {
        return Err(SlqError::InvalidConfig(format!(
            "{big_name} and {small_name} must be positive"
        )));
    }
    let ratio = big / small;
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * rounded {
        return Err(SlqError::InvalidConfig(format!(
            "{big_name} ({big}) must be an integer multiple of {small_name} ({small})"
        )));
    }
    Ok(())
}

/// The injected exploration signal: one draw per sampling interval, constant
/// within the interval, shared by all paths.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationSignal {
    /// `m x l`; column `k` is the signal over sampling interval `k`.
    values: DMatrix<f64>,
}

impl ExplorationSignal {
    /// Draws the signal from `Normal(0, sigma^2 I_m)`, interval by interval,
    /// from the dedicated RNG stream of `seed`.
    pub fn sample(seed: u64, m: usize, intervals: usize, sigma: f64) -> Self {
        let mut rng = stream_rng(seed, EXPLORATION_STREAM);
        let mut values = DMatrix::zeros(m, intervals);
        if sigma > 0.0 {
            let normal = Normal::new(0.0, sigma).expect("sigma is finite and nonnegative");
            for k in 0..intervals {
                for i in 0..m {
                    values[(i, k)] = normal.sample(&mut rng);
                }
            }
        }
        Self { values }
    }

    pub fn zero(m: usize, intervals: usize) -> Self {
        Self {
            values: DMatrix::zeros(m, intervals),
        }
    }

    pub fn m(&self) -> usize {
        self.values.nrows()
    }

    pub fn intervals(&self) -> usize {
        self.values.ncols()
    }

    /// Signal value over sampling interval `k`.
    pub fn value(&self, k: usize) -> DVector<f64> {
        DVector::from_column_slice(self.values.column(k).as_slice())
    }
}

/// Simulated ensemble: states and applied controls at every Euler node for
/// every path, plus the grid metadata and the injected signal.
#[derive(Debug, Clone)]
pub struct TrajectoryBatch {
    n: usize,
    m: usize,
    paths: usize,
    steps: usize,
    steps_per_interval: usize,
    step_size: f64,
    signal: ExplorationSignal,
    /// `paths * (steps + 1) * n`, path-major then node-major.
    states: Vec<f64>,
    /// `paths * (steps + 1) * m`, same layout.
    controls: Vec<f64>,
}

impl TrajectoryBatch {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn paths(&self) -> usize {
        self.paths
    }

    /// Euler steps per path (nodes are `steps + 1`).
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn intervals(&self) -> usize {
        self.steps / self.steps_per_interval
    }

    pub fn steps_per_interval(&self) -> usize {
        self.steps_per_interval
    }

    pub fn step_size(&self) -> f64 {
        self.step_size
    }

    pub fn signal(&self) -> &ExplorationSignal {
        &self.signal
    }

    /// State at an Euler node.
    pub fn state(&self, path: usize, node: usize) -> &[f64] {
        let base = (path * (self.steps + 1) + node) * self.n;
        &self.states[base..base + self.n]
    }

    /// Control applied from this node to the next one.
    pub fn control(&self, path: usize, node: usize) -> &[f64] {
        let base = (path * (self.steps + 1) + node) * self.m;
        &self.controls[base..base + self.m]
    }

    /// Writes `path,time,x1..xn,v1..vm` rows, one per Euler node.
    pub fn dump_csv<W: std::io::Write>(&self, out: &mut W) -> Result<()> {
        write!(out, "path,time")?;
        for i in 1..=self.n {
            write!(out, ",x{i}")?;
        }
        for i in 1..=self.m {
            write!(out, ",v{i}")?;
        }
        writeln!(out)?;
        for p in 0..self.paths {
            for node in 0..=self.steps {
                write!(out, "{p},{:.16e}", node as f64 * self.step_size)?;
                for x in self.state(p, node) {
                    write!(out, ",{x:.16e}")?;
                }
                for v in self.control(p, node) {
                    write!(out, ",{v:.16e}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

/// Monte-Carlo estimates of the per-interval trajectory integrals.
///
/// Row `k` covers sampling interval `[t_k, t_{k+1}]`:
/// - `eta_xx`: mean of `bar(X(t_{k+1})) - bar(X(t_k))`,
/// - `delta_xx`: mean of the interval integral of `X (x) X`,
/// - `delta_xv`: mean of the interval integral of `X (x) v`,
/// - `delta_vv`: mean of the interval integral of `v (x) v`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrices {
    pub eta_xx: DMatrix<f64>,
    pub delta_xx: DMatrix<f64>,
    pub delta_xv: DMatrix<f64>,
    pub delta_vv: DMatrix<f64>,
    pub l: usize,
    pub n: usize,
    pub m: usize,
}

/// Simulates the ensemble with the exploration signal derived from
/// `cfg.seed`.
pub fn simulate_batch(model: &SystemModel, k0: &Gain, cfg: &SimConfig) -> Result<TrajectoryBatch> {
    let signal = ExplorationSignal::sample(cfg.seed, model.m(), cfg.intervals(), cfg.noise_std);
    simulate_batch_with_signal(model, k0, cfg, &signal)
}

/// Simulates the ensemble under a caller-supplied exploration signal.
///
/// Per path: `X(0) = x0`, `v = K0 X + e_k` on sampling interval `k`, and
/// `X <- X + (A X + B v) h + (C X + D v) dW` with `dW ~ Normal(0, h)`.
pub fn simulate_batch_with_signal(
    model: &SystemModel,
    k0: &Gain,
    cfg: &SimConfig,
    signal: &ExplorationSignal,
) -> Result<TrajectoryBatch> {
    let (n, m) = (model.n(), model.m());
    cfg.validate(n, m)?;
    if k0.nrows() != m || k0.ncols() != n {
        return Err(SlqError::Dimension(format!(
            "K0 is {}x{}, expected {m}x{n}",
            k0.nrows(),
            k0.ncols()
        )));
    }
    if signal.m() != m || signal.intervals() != cfg.intervals() {
        return Err(SlqError::Dimension(format!(
            "exploration signal is {}x{}, expected {m}x{}",
            signal.m(),
            signal.intervals(),
            cfg.intervals()
        )));
    }

    let steps = cfg.total_steps();
    let spi = cfg.steps_per_interval();
    let nodes = steps + 1;
    let mut states = vec![0.0f64; cfg.paths * nodes * n];
    let mut controls = vec![0.0f64; cfg.paths * nodes * m];

    let blowups: Vec<Option<usize>> = states
        .par_chunks_mut(nodes * n)
        .zip(controls.par_chunks_mut(nodes * m))
        .enumerate()
        .map(|(path, (xs, vs))| {
            simulate_one_path(model, k0, cfg, signal, path as u64, spi, steps, xs, vs)
        })
        .collect();

    if let Some((path, step)) = blowups
        .iter()
        .enumerate()
        .find_map(|(p, s)| s.map(|step| (p, step)))
    {
        return Err(SlqError::TrajectoryBlowup {
            path,
            step,
            guard: OVERFLOW_GUARD,
        });
    }

    Ok(TrajectoryBatch {
        n,
        m,
        paths: cfg.paths,
        steps,
        steps_per_interval: spi,
        step_size: cfg.step,
        signal: signal.clone(),
        states,
        controls,
    })
}

/// Returns the step at which the path blew up, if it did.
#[allow(clippy::too_many_arguments)]
fn simulate_one_path(
    model: &SystemModel,
    k0: &Gain,
    cfg: &SimConfig,
    signal: &ExplorationSignal,
    path: u64,
    spi: usize,
    steps: usize,
    xs: &mut [f64],
    vs: &mut [f64],
) -> Option<usize> {
    let (n, m) = (model.n(), model.m());
    let h = cfg.step;
    let sqrt_h = h.sqrt();
    let mut rng = stream_rng(cfg.seed, path);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut x = cfg.x0.clone();
    let mut v = DVector::zeros(m);
    let mut drift = DVector::zeros(n);
    let mut diffusion = DVector::zeros(n);

    let mut e = signal.value(0);
    control_at(k0, &x, &e, &mut v);
    xs[..n].copy_from_slice(x.as_slice());
    vs[..m].copy_from_slice(v.as_slice());

    for step in 0..steps {
        // drift = A x + B v ; diffusion = C x + D v
        drift.gemv(1.0, model.a(), &x, 0.0);
        drift.gemv(1.0, model.b(), &v, 1.0);
        diffusion.gemv(1.0, model.c(), &x, 0.0);
        diffusion.gemv(1.0, model.d(), &v, 1.0);
        let dw = sqrt_h * std_normal.sample(&mut rng);
        x.axpy(h, &drift, 1.0);
        x.axpy(dw, &diffusion, 1.0);
        if x.iter().any(|c| !c.is_finite() || c.abs() > OVERFLOW_GUARD) {
            return Some(step);
        }
        let node = step + 1;
        if node < steps && node % spi == 0 {
            e = signal.value(node / spi);
        }
        control_at(k0, &x, &e, &mut v);
        xs[node * n..(node + 1) * n].copy_from_slice(x.as_slice());
        vs[node * m..(node + 1) * m].copy_from_slice(v.as_slice());
    }
    None
}

fn control_at(k0: &Gain, x: &DVector<f64>, e: &DVector<f64>, v: &mut DVector<f64>) {
    v.copy_from(e);
    v.gemv(1.0, k0.as_matrix(), x, 1.0);
}

/// Per-chunk partial sums for the fixed-tree reduction.
struct PartialSums {
    eta: DMatrix<f64>,
    xx: DMatrix<f64>,
    xv: DMatrix<f64>,
    vv: DMatrix<f64>,
}

/// Estimates the data matrices from the ensemble: trapezoidal quadrature on
/// the Euler grid inside each sampling interval, then the plain average over
/// paths.
///
/// The integrand control on interval `k` uses that interval's signal value
/// even at the right endpoint node, where the *applied* control stored in
/// the batch already belongs to interval `k+1`.
pub fn accumulate_data(batch: &TrajectoryBatch, cfg: &SimConfig) -> Result<DataMatrices> {
    let (n, m) = (batch.n(), batch.m());
    if batch.steps != cfg.total_steps()
        || batch.steps_per_interval != cfg.steps_per_interval()
        || batch.paths != cfg.paths
        || (batch.step_size - cfg.step).abs() > 1e-15 * cfg.step
    {
        return Err(SlqError::Dimension(
            "trajectory batch was produced with a different grid than cfg".into(),
        ));
    }
    let l = batch.intervals();
    let nv = vech_len(n);
    let h = batch.step_size;

    let chunk_starts: Vec<usize> = (0..batch.paths).step_by(REDUCTION_CHUNK).collect();
    let partials: Vec<PartialSums> = chunk_starts
        .par_iter()
        .map(|&start| {
            let end = (start + REDUCTION_CHUNK).min(batch.paths);
            let mut part = PartialSums {
                eta: DMatrix::zeros(l, nv),
                xx: DMatrix::zeros(l, n * n),
                xv: DMatrix::zeros(l, n * m),
                vv: DMatrix::zeros(l, m * m),
            };
            let mut v_end = DVector::zeros(m);
            for path in start..end {
                for k in 0..l {
                    accumulate_interval(batch, path, k, &mut part, &mut v_end);
                }
            }
            part
        })
        .collect();

    let mut eta = DMatrix::zeros(l, nv);
    let mut xx = DMatrix::zeros(l, n * n);
    let mut xv = DMatrix::zeros(l, n * m);
    let mut vv = DMatrix::zeros(l, m * m);
    for part in &partials {
        eta += &part.eta;
        xx += &part.xx;
        xv += &part.xv;
        vv += &part.vv;
    }
    let paths = batch.paths as f64;
    eta.unscale_mut(paths);
    for mat in [&mut xx, &mut xv, &mut vv] {
        mat.scale_mut(h);
        mat.unscale_mut(paths);
    }

    for mat in [&eta, &xx, &xv, &vv] {
        if mat.iter().any(|x| !x.is_finite()) {
            return Err(SlqError::NumericalBreakdown(
                "non-finite entries in accumulated data".into(),
            ));
        }
    }

    Ok(DataMatrices {
        eta_xx: eta,
        delta_xx: xx,
        delta_xv: xv,
        delta_vv: vv,
        l,
        n,
        m,
    })
}

/// Adds one path's contribution over sampling interval `k` to the partials.
fn accumulate_interval(
    batch: &TrajectoryBatch,
    path: usize,
    k: usize,
    part: &mut PartialSums,
    v_end: &mut DVector<f64>,
) {
    let (n, m) = (batch.n, batch.m);
    let spi = batch.steps_per_interval;
    let first = k * spi;
    let last = (k + 1) * spi;

    for node in first..=last {
        let w = if node == first || node == last {
            0.5
        } else {
            1.0
        };
        let x = batch.state(path, node);
        let v: &[f64] = if node == last && last < batch.steps {
            let stored = batch.control(path, node);
            let e_next = batch.signal.value(k + 1);
            let e_here = batch.signal.value(k);
            for i in 0..m {
                v_end[i] = stored[i] - e_next[i] + e_here[i];
            }
            v_end.as_slice()
        } else {
            batch.control(path, node)
        };

        for i in 0..n {
            let xi_w = w * x[i];
            for (j, &xj) in x.iter().enumerate() {
                part.xx[(k, i * n + j)] += xi_w * xj;
            }
            for (j, &vj) in v.iter().enumerate() {
                part.xv[(k, i * m + j)] += xi_w * vj;
            }
        }
        for i in 0..m {
            let vi_w = w * v[i];
            for (j, &vj) in v.iter().enumerate() {
                part.vv[(k, i * m + j)] += vi_w * vj;
            }
        }
    }

    let x_first = batch.state(path, first);
    let x_last = batch.state(path, last);
    for (r, (i, j)) in vech_pairs(n).enumerate() {
        part.eta[(k, r)] += x_last[i] * x_last[j] - x_first[i] * x_first[j];
    }
}

/// Identifiability check: the concatenated `[delta_xx, delta_xv]` must have
/// numeric rank `mn + n(n+1)/2` for the regression solution to be unique.
pub fn check_rank(data: &DataMatrices, tol: f64) -> (bool, usize) {
    let required = data.m * data.n + vech_len(data.n);
    let mut concat = DMatrix::zeros(data.l, data.n * data.n + data.n * data.m);
    concat
        .view_mut((0, 0), (data.l, data.n * data.n))
        .copy_from(&data.delta_xx);
    concat
        .view_mut((0, data.n * data.n), (data.l, data.n * data.m))
        .copy_from(&data.delta_xv);
    let rank = crate::matops::numeric_rank(&concat, tol);
    (rank == required, rank)
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ChaCha stream keyed by `(seed, stream)`; used for per-path Brownian
/// increments and the exploration signal.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut state = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut key = [0u8; 32];
    for word in 0..4 {
        key[word * 8..(word + 1) * 8].copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matops::bar;
    use crate::problem::SystemModel;
    use crate::testutil::{demo_model, demo_problem};
    use approx::assert_relative_eq;

    fn diagonal_decay_model(n: usize) -> SystemModel {
        SystemModel::new(
            -DMatrix::<f64>::identity(n, n),
            DMatrix::zeros(n, 1),
            DMatrix::zeros(n, n),
            DMatrix::zeros(n, 1),
        )
        .unwrap()
    }

    #[test]
    fn deterministic_exponential_decay() {
        let model = diagonal_decay_model(2);
        let h = 1e-3;
        let cfg = SimConfig {
            x0: DVector::from_column_slice(&[1.0, -2.0]),
            horizon: 1.0,
            step: h,
            sample_interval: 0.1,
            paths: 1,
            noise_std: 0.0,
            seed: 1,
        };
        let batch = simulate_batch(&model, &Gain::zero(1, 2), &cfg).unwrap();
        let x_end = batch.state(0, batch.steps());
        let exact = (-1.0f64).exp();
        let x0_norm = cfg.x0.norm();
        for (i, &x0i) in [1.0, -2.0].iter().enumerate() {
            assert!(
                (x_end[i] - exact * x0i).abs() <= 2.0 * h * x0_norm,
                "component {i}: {} vs {}",
                x_end[i],
                exact * x0i
            );
        }
    }

    #[test]
    fn ensemble_mean_matches_moment_ode() {
        // sigma = 0 keeps the mean ODE closed: mu' = (A + B K0) mu.
        let spec = demo_problem();
        let cfg = SimConfig {
            x0: spec.x0.clone(),
            horizon: 1.0,
            step: 0.005,
            sample_interval: 0.1,
            paths: 4000,
            noise_std: 0.0,
            seed: 3,
        };
        let batch = simulate_batch(&spec.model, &spec.k0, &cfg).unwrap();
        let steps = batch.steps();
        let npaths = batch.paths();
        let mut mean = DVector::<f64>::zeros(2);
        let mut sq = DVector::<f64>::zeros(2);
        for p in 0..npaths {
            let x = batch.state(p, steps);
            for i in 0..2 {
                mean[i] += x[i];
                sq[i] += x[i] * x[i];
            }
        }
        mean.unscale_mut(npaths as f64);
        let exact = (spec.model.a() * cfg.horizon).exp() * &cfg.x0;
        for i in 0..2 {
            let var = (sq[i] / npaths as f64 - mean[i] * mean[i]).max(0.0);
            let stderr = (var / npaths as f64).sqrt();
            // three standard errors plus the O(h) discretization allowance
            let tol = 3.0 * stderr + 2.0 * cfg.step * cfg.x0.norm();
            assert!(
                (mean[i] - exact[i]).abs() <= tol,
                "component {i}: mean {} vs {} (tol {tol})",
                mean[i],
                exact[i]
            );
        }
    }

    #[test]
    fn identical_seed_reproduces_batch() {
        let spec = demo_problem();
        let cfg = SimConfig {
            x0: spec.x0.clone(),
            horizon: 0.5,
            step: 0.01,
            sample_interval: 0.1,
            paths: 32,
            noise_std: 0.3,
            seed: 77,
        };
        let b1 = simulate_batch(&spec.model, &spec.k0, &cfg).unwrap();
        let b2 = simulate_batch(&spec.model, &spec.k0, &cfg).unwrap();
        assert_eq!(b1.states, b2.states);
        assert_eq!(b1.controls, b2.controls);
    }

    #[test]
    fn data_matrices_independent_of_worker_count() {
        let spec = demo_problem();
        let cfg = SimConfig {
            x0: spec.x0.clone(),
            horizon: 0.6,
            step: 0.01,
            sample_interval: 0.1,
            paths: 150,
            noise_std: 0.3,
            seed: 5,
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                let batch = simulate_batch(&spec.model, &spec.k0, &cfg).unwrap();
                accumulate_data(&batch, &cfg).unwrap()
            })
        };
        let single = run(1);
        let multi = run(4);
        assert_eq!(single.eta_xx, multi.eta_xx);
        assert_eq!(single.delta_xx, multi.delta_xx);
        assert_eq!(single.delta_xv, multi.delta_xv);
        assert_eq!(single.delta_vv, multi.delta_vv);
    }

    #[test]
    fn constant_trajectory_integrals() {
        // A = B = C = D = 0 freezes the state; nonzero K0 gives a constant
        // nonzero control.
        let model = SystemModel::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 2),
            DMatrix::zeros(2, 1),
        )
        .unwrap();
        let k0 = Gain::new(DMatrix::from_row_slice(1, 2, &[2.0, -1.0])).unwrap();
        let x0 = DVector::from_column_slice(&[0.5, -0.1]);
        let cfg = SimConfig {
            x0: x0.clone(),
            horizon: 0.5,
            step: 0.01,
            sample_interval: 0.1,
            paths: 3,
            noise_std: 0.0,
            seed: 9,
        };
        let batch = simulate_batch(&model, &k0, &cfg).unwrap();
        let data = accumulate_data(&batch, &cfg).unwrap();
        let v0 = k0.as_matrix() * &x0;
        let dt = cfg.sample_interval;
        for k in 0..data.l {
            for i in 0..2 {
                for j in 0..2 {
                    assert_relative_eq!(
                        data.delta_xx[(k, i * 2 + j)],
                        dt * x0[i] * x0[j],
                        max_relative = 1e-12
                    );
                }
                assert_relative_eq!(
                    data.delta_xv[(k, i)],
                    dt * x0[i] * v0[0],
                    max_relative = 1e-12
                );
            }
            assert_relative_eq!(
                data.delta_vv[(k, 0)],
                dt * v0[0] * v0[0],
                max_relative = 1e-12
            );
            for r in 0..3 {
                assert_relative_eq!(data.eta_xx[(k, r)], 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn hand_computed_trapezoid_sums() {
        // Scalar system x' = -x, v = x, h = 0.5, two steps per interval,
        // two intervals. Node states halve each step: 1, 1/2, 1/4, 1/8, 1/16.
        let model = SystemModel::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let k0 = Gain::new(DMatrix::from_element(1, 1, 1.0)).unwrap();
        let cfg = SimConfig {
            x0: DVector::from_element(1, 1.0),
            horizon: 2.0,
            step: 0.5,
            sample_interval: 1.0,
            paths: 1,
            noise_std: 0.0,
            seed: 0,
        };
        let batch = simulate_batch(&model, &k0, &cfg).unwrap();
        let data = accumulate_data(&batch, &cfg).unwrap();
        // Interval 0: trapezoid of x^2 over nodes (1, 1/2, 1/4) times h.
        let i0 = 0.5 * (0.5 * 1.0 + 0.25 + 0.5 * 0.0625);
        // Interval 1: nodes (1/4, 1/8, 1/16).
        let i1 = 0.5 * (0.5 * 0.0625 + 0.015625 + 0.5 * 0.00390625);
        assert_eq!(data.delta_xx[(0, 0)], i0);
        assert_eq!(data.delta_xx[(1, 0)], i1);
        assert_eq!(data.delta_xv[(0, 0)], i0);
        assert_eq!(data.delta_vv[(1, 0)], i1);
        assert_eq!(data.eta_xx[(0, 0)], 0.0625 - 1.0);
        assert_eq!(data.eta_xx[(1, 0)], 0.00390625 - 0.0625);
    }

    #[test]
    fn estimator_variance_scales_inversely_with_paths() {
        let spec = demo_problem();
        let make_cfg = |paths: usize, seed: u64| SimConfig {
            x0: spec.x0.clone(),
            horizon: 0.5,
            step: 0.01,
            sample_interval: 0.1,
            paths,
            noise_std: 0.3,
            seed,
        };
        // One fixed exploration signal so only the Brownian ensemble varies.
        let signal = ExplorationSignal::sample(1234, 1, 5, 0.3);
        let samples = |paths: usize| -> Vec<DMatrix<f64>> {
            (0..8)
                .map(|s| {
                    let cfg = make_cfg(paths, 1000 + s);
                    let batch =
                        simulate_batch_with_signal(&spec.model, &spec.k0, &cfg, &signal).unwrap();
                    accumulate_data(&batch, &cfg).unwrap().delta_xx
                })
                .collect()
        };
        let variance = |samples: &[DMatrix<f64>]| -> f64 {
            let mean = samples.iter().sum::<DMatrix<f64>>() / samples.len() as f64;
            samples
                .iter()
                .map(|s| (s - &mean).norm_squared())
                .sum::<f64>()
                / (samples.len() - 1) as f64
        };
        let var_small = variance(&samples(100));
        let var_large = variance(&samples(400));
        let ratio = var_small / var_large;
        assert!(
            (1.5..12.0).contains(&ratio),
            "variance ratio {ratio}, expected near 4"
        );
    }

    #[test]
    fn eta_rows_telescope() {
        let spec = demo_problem();
        let cfg = SimConfig {
            x0: spec.x0.clone(),
            horizon: 1.0,
            step: 0.01,
            sample_interval: 0.1,
            paths: 40,
            noise_std: 0.3,
            seed: 21,
        };
        let batch = simulate_batch(&spec.model, &spec.k0, &cfg).unwrap();
        let data = accumulate_data(&batch, &cfg).unwrap();
        let mut summed = DVector::<f64>::zeros(3);
        for k in 0..data.l {
            for r in 0..3 {
                summed[r] += data.eta_xx[(k, r)];
            }
        }
        let mut direct = DVector::<f64>::zeros(3);
        for p in 0..batch.paths() {
            let b_end = bar(&DVector::from_column_slice(batch.state(p, batch.steps())));
            let b_start = bar(&DVector::from_column_slice(batch.state(p, 0)));
            direct += b_end.as_vector() - b_start.as_vector();
        }
        direct.unscale_mut(batch.paths() as f64);
        assert!((summed - direct).norm() <= 1e-12);
    }

    #[test]
    fn delta_xx_rows_symmetric() {
        let spec = demo_problem();
        let cfg = SimConfig {
            x0: spec.x0.clone(),
            horizon: 0.5,
            step: 0.01,
            sample_interval: 0.1,
            paths: 25,
            noise_std: 0.3,
            seed: 33,
        };
        let batch = simulate_batch(&spec.model, &spec.k0, &cfg).unwrap();
        let data = accumulate_data(&batch, &cfg).unwrap();
        for k in 0..data.l {
            for i in 0..2 {
                for j in 0..2 {
                    let a = data.delta_xx[(k, i * 2 + j)];
                    let b = data.delta_xx[(k, j * 2 + i)];
                    assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
                }
            }
        }
    }

    #[test]
    fn rank_check_with_and_without_exploration() {
        let spec = demo_problem();
        let mut cfg = SimConfig {
            x0: spec.x0.clone(),
            horizon: 1.0,
            step: 0.001,
            sample_interval: 0.01,
            paths: 50,
            noise_std: 0.3,
            seed: 11,
        };
        let batch = simulate_batch(&spec.model, &spec.k0, &cfg).unwrap();
        let data = accumulate_data(&batch, &cfg).unwrap();
        let (ok, rank) = check_rank(&data, 1e-8);
        assert!(ok, "rank {rank} with exploration");

        cfg.noise_std = 0.0;
        let batch0 = simulate_batch(&spec.model, &spec.k0, &cfg).unwrap();
        let data0 = accumulate_data(&batch0, &cfg).unwrap();
        let (ok0, rank0) = check_rank(&data0, 1e-8);
        assert!(!ok0, "rank {rank0} without exploration should be deficient");
    }

    #[test]
    fn rank_check_rejects_row_deficit() {
        // Hand-built data with l = 3 < 5 rows can never reach the rank.
        let data = DataMatrices {
            eta_xx: DMatrix::zeros(3, 3),
            delta_xx: DMatrix::from_fn(3, 4, |r, c| ((r * 7 + c * 3 + 1) as f64).sin()),
            delta_xv: DMatrix::from_fn(3, 2, |r, c| ((r * 5 + c + 2) as f64).cos()),
            delta_vv: DMatrix::zeros(3, 1),
            l: 3,
            n: 2,
            m: 1,
        };
        let (ok, rank) = check_rank(&data, 1e-8);
        assert!(!ok);
        assert!(rank <= 3);
    }

    #[test]
    fn zero_state_zero_noise_data_is_rank_zero() {
        let model = demo_model();
        let cfg = SimConfig {
            x0: DVector::zeros(2),
            horizon: 0.5,
            step: 0.01,
            sample_interval: 0.1,
            paths: 4,
            noise_std: 0.0,
            seed: 2,
        };
        let batch = simulate_batch(&model, &Gain::zero(1, 2), &cfg).unwrap();
        let data = accumulate_data(&batch, &cfg).unwrap();
        let (ok, rank) = check_rank(&data, 1e-8);
        assert!(!ok);
        assert_eq!(rank, 0);
    }

    #[test]
    fn unstable_dynamics_blow_up() {
        let model = SystemModel::new(
            DMatrix::from_element(1, 1, 2.0),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 1),
        )
        .unwrap();
        let cfg = SimConfig {
            x0: DVector::from_element(1, 1.0),
            horizon: 16.0,
            step: 0.004,
            sample_interval: 8.0,
            paths: 1,
            noise_std: 0.0,
            seed: 4,
        };
        let err = simulate_batch(&model, &Gain::zero(1, 1), &cfg).unwrap_err();
        assert!(matches!(err, SlqError::TrajectoryBlowup { .. }));
    }

    #[test]
    fn grid_invariants_enforced() {
        let base = SimConfig {
            x0: DVector::zeros(2),
            horizon: 1.0,
            step: 0.01,
            sample_interval: 0.1,
            paths: 1,
            noise_std: 0.0,
            seed: 0,
        };
        assert!(base.validate(2, 1).is_ok());

        let mut c = base.clone();
        c.sample_interval = 0.025; // 2.5 Euler steps per interval
        assert!(matches!(c.validate(2, 1), Err(SlqError::InvalidConfig(_))));

        let mut c = base.clone();
        c.horizon = 0.35; // 3.5 sampling intervals
        assert!(matches!(c.validate(2, 1), Err(SlqError::InvalidConfig(_))));

        let mut c = base.clone();
        c.horizon = 0.4; // l = 4 < 5 needed for n=2, m=1
        assert!(matches!(c.validate(2, 1), Err(SlqError::InvalidConfig(_))));

        let mut c = base;
        c.step = -0.01;
        assert!(matches!(c.validate(2, 1), Err(SlqError::InvalidConfig(_))));
    }

    #[test]
    fn csv_dump_schema() {
        let model = diagonal_decay_model(2);
        let cfg = SimConfig {
            x0: DVector::from_column_slice(&[1.0, 2.0]),
            horizon: 0.5,
            step: 0.1,
            sample_interval: 0.1,
            paths: 2,
            noise_std: 0.0,
            seed: 8,
        };
        let batch = simulate_batch(&model, &Gain::zero(1, 2), &cfg).unwrap();
        let mut buf = Vec::new();
        batch.dump_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "path,time,x1,x2,v1");
        // 2 paths x 6 nodes
        assert_eq!(text.lines().count(), 1 + 2 * 6);
        assert!(text.lines().nth(1).unwrap().starts_with("0,0"));
    }
}
