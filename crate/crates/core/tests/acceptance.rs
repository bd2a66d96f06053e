//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (run with `-- --nocapture` to see them all).
//!
//! The expensive reference ensemble (2000 paths, 4000 Euler steps) is built
//! once and shared across the criteria that need it.

mod common;

use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use common::{config_path, demo_problem, reference_sim};
use nalgebra::{DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use slq_pilot::datadriven::{self, SolveOptions};
use slq_pilot::matops::{
    bar, kron, monomial_selector, unvech_scaled, vech_scaled, SymMatrix, VechVector,
};
use slq_pilot::momentflow::exact_data;
use slq_pilot::oracle::{
    gain_update, policy_iteration, sare_residual, sare_residual_closed, solve_glyap,
};
use slq_pilot::problem::{
    is_ms_stabilizer, ms_spectral_abscissa, CostSpec, Gain, ProblemSpec, SystemModel,
};
use slq_pilot::sdesim::{
    accumulate_data, check_rank, simulate_batch, DataMatrices, ExplorationSignal,
};

const REFERENCE_SEED: u64 = 7;

fn report(criterion: usize, ok: bool, detail: &str) {
    println!(
        "acceptance criterion {criterion}: {} — {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
}

/// Reference-budget data matrices, built once per test process.
fn reference_data() -> &'static DataMatrices {
    static DATA: OnceLock<DataMatrices> = OnceLock::new();
    DATA.get_or_init(|| {
        let spec = demo_problem();
        let cfg = reference_sim(REFERENCE_SEED);
        let batch = simulate_batch(&spec.model, &spec.k0, &cfg).expect("simulation");
        accumulate_data(&batch, &cfg).expect("accumulation")
    })
}

/// Twenty seeded stable problems (mixed 2x2 and 3x3, one or two inputs)
/// with `K0 = 0` a mean-square stabilizer by construction.
fn randomized_stable_problems() -> Vec<ProblemSpec> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    (0..20)
        .map(|_| {
            let n = 2 + rng.random_range(0..2usize);
            let m = 1 + rng.random_range(0..2usize);
            let c = DMatrix::from_fn(n, n, |_, _| 0.3 * rng.random_range(-1.0..1.0));
            let b = DMatrix::from_fn(n, m, |_, _| 0.5 * rng.random_range(-1.0..1.0));
            let d = DMatrix::from_fn(n, m, |_, _| 0.2 * rng.random_range(-1.0..1.0));
            let mut a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let mut shift = 0.5;
            while ms_spectral_abscissa(
                &SystemModel::new(a.clone(), b.clone(), c.clone(), d.clone()).unwrap(),
                &Gain::zero(m, n),
            ) >= -0.05
            {
                a -= DMatrix::identity(n, n) * shift;
                shift *= 1.5;
            }
            let model = SystemModel::new(a, b, c, d).unwrap();
            let w = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
            let q = &w * w.transpose() + DMatrix::identity(n, n) * 0.5;
            let v = DMatrix::from_fn(m, m, |_, _| rng.random_range(-1.0..1.0));
            let r = &v * v.transpose() + DMatrix::identity(m, m) * 0.5;
            let cost = CostSpec::new(q, DMatrix::zeros(m, n), r).unwrap();
            let x0 = DVector::from_element(n, 1.0);
            ProblemSpec::new(model, cost, x0, Gain::zero(m, n)).unwrap()
        })
        .collect()
}

#[test]
fn criterion_1_oracle_ground_truth() {
    let spec = demo_problem();
    let start = Instant::now();
    let result = policy_iteration(&spec, 1e-10, 100);
    let elapsed = start.elapsed();
    let (ok, detail) = match &result {
        Ok(report) => {
            let residual = sare_residual_closed(&spec.model, &spec.cost, &report.p_star)
                .unwrap()
                .norm();
            let ok = report.converged
                && residual <= 1e-8
                && report.iterations < 50
                && elapsed.as_secs_f64() < 1.0;
            (
                ok,
                format!(
                    "residual {residual:.3e}, {} iterations, {:.3} s",
                    report.iterations,
                    elapsed.as_secs_f64()
                ),
            )
        }
        Err(e) => (false, format!("solver error: {e}")),
    };
    report(1, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_2_monotone_convergence() {
    let mut problems = vec![demo_problem()];
    problems.extend(randomized_stable_problems());
    let mut worst = f64::INFINITY;
    let mut ok = true;
    for (idx, spec) in problems.iter().enumerate() {
        let report = match policy_iteration(spec, 1e-10, 100) {
            Ok(r) => r,
            Err(e) => {
                ok = false;
                println!("problem {idx} failed to solve: {e}");
                continue;
            }
        };
        for w in report.history.windows(2) {
            let diff = SymMatrix::new(w[0].p.as_matrix() - w[1].p.as_matrix()).unwrap();
            let min_ev = diff.min_eigenvalue();
            worst = worst.min(min_ev);
            if min_ev < -1e-9 {
                ok = false;
            }
        }
    }
    let detail = format!(
        "smallest eigenvalue of P_i - P_(i+1) across {} problems: {worst:.3e}",
        problems.len()
    );
    report(2, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_3_stabilizer_preservation() {
    let mut problems = vec![demo_problem()];
    problems.extend(randomized_stable_problems());
    let mut ok = true;
    let mut checked = 0usize;
    for (idx, spec) in problems.iter().enumerate() {
        let report = match policy_iteration(spec, 1e-10, 100) {
            Ok(r) => r,
            Err(e) => {
                ok = false;
                println!("problem {idx} failed to solve: {e}");
                continue;
            }
        };
        for it in &report.history {
            checked += 1;
            if !is_ms_stabilizer(&spec.model, &it.k, 0.0) {
                ok = false;
                println!(
                    "problem {idx}, iteration {}: gain not stabilizing",
                    it.iteration
                );
            }
        }
    }
    let detail = format!(
        "{checked} iterate gains checked across {} problems",
        problems.len()
    );
    report(3, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_4_data_driven_reproduction() {
    let spec = demo_problem();
    let start = Instant::now();
    let data = reference_data();
    let opts = SolveOptions {
        eps: 1e-3,
        max_iter: 100,
        rank_tol: 1e-8,
    };
    let dd = datadriven::policy_iteration(data, spec.model.d(), &spec.cost, &spec.k0, &opts);
    let elapsed = start.elapsed();
    let oracle = policy_iteration(&spec, 1e-10, 100).expect("oracle");
    let (ok, detail) = match &dd {
        Ok(r) => {
            let residual = sare_residual(&spec.model, &spec.cost, &r.p_tilde, &r.k_tilde).norm();
            let dp = (r.p_tilde.as_matrix() - oracle.p_star.as_matrix()).amax();
            let dk = (r.k_tilde.as_matrix() - oracle.k_star.as_matrix()).amax();
            let ok = r.converged
                && residual <= 5e-3
                && dp <= 5e-2
                && dk <= 5e-2
                && elapsed.as_secs_f64() <= 60.0;
            (
                ok,
                format!(
                    "residual {residual:.3e}, |P~-P*|max {dp:.3e}, |K~-K*|max {dk:.3e}, {:.2} s",
                    elapsed.as_secs_f64()
                ),
            )
        }
        Err(e) => (false, format!("solver error: {e}")),
    };
    report(4, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_5_exact_data_equivalence() {
    let spec = demo_problem();
    let signal = ExplorationSignal::sample(REFERENCE_SEED, 1, 400, 0.3);
    let data = exact_data(&spec.model, &spec.k0, &spec.x0, 0.01, &signal).expect("exact data");
    let opts = SolveOptions {
        eps: 1e-10,
        max_iter: 30,
        rank_tol: 1e-8,
    };
    let dd = datadriven::policy_iteration(&data, spec.model.d(), &spec.cost, &spec.k0, &opts)
        .expect("data-driven on exact data");
    let oracle = policy_iteration(&spec, 1e-12, 100).expect("oracle");
    let compared = dd.history.len().min(oracle.history.len());
    let mut worst = 0.0f64;
    for (dd_it, or_it) in dd.history.iter().zip(oracle.history.iter()) {
        worst = worst
            .max((dd_it.p.as_matrix() - or_it.p.as_matrix()).amax())
            .max((dd_it.k.as_matrix() - or_it.k.as_matrix()).amax());
    }
    let ok = compared >= 3 && worst <= 1e-6;
    let detail = format!("{compared} iterations compared, worst entrywise deviation {worst:.3e}");
    report(5, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_6_data_identity_consistency() {
    let spec = demo_problem();
    let data = reference_data();
    // First model-based iterate and its gain carrier.
    let q0 = SymMatrix::new(spec.cost.q().clone()).unwrap();
    let p1 = solve_glyap(spec.model.a(), spec.model.c(), &q0).expect("first iterate");
    let k1 = gain_update(&spec.model, &spec.cost, &p1).expect("gain");
    let m1 = (spec.cost.r() + spec.model.d().transpose() * p1.as_matrix() * spec.model.d())
        * k1.as_matrix();

    let sys = datadriven::assemble(data, spec.model.d(), &spec.cost, &spec.k0, 0).unwrap();
    let mut z = DVector::zeros(5);
    z.rows_mut(0, 3).copy_from(vech_scaled(&p1).as_vector());
    z.rows_mut(3, 2)
        .copy_from(&DVector::from_column_slice(m1.as_slice()));
    let misfit = (&sys.v * z - &sys.rhs).norm() / sys.rhs.norm();
    let ok = misfit <= 0.05;
    let detail = format!("relative misfit of the model-based pair: {misfit:.3e}");
    report(6, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_7_rank_condition() {
    let spec = demo_problem();
    let (with_noise_ok, with_rank) = check_rank(reference_data(), 1e-8);

    let mut cfg0 = reference_sim(REFERENCE_SEED);
    cfg0.noise_std = 0.0;
    let batch0 = simulate_batch(&spec.model, &spec.k0, &cfg0).expect("sim");
    let data0 = accumulate_data(&batch0, &cfg0).expect("accumulate");
    let (without_noise_ok, without_rank) = check_rank(&data0, 1e-8);

    let out = tempfile::tempdir().unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_slq-pilot"))
        .args([
            "--config",
            config_path("example.toml").to_str().unwrap(),
            "--mode",
            "datadriven",
            "--noise-std",
            "0",
            "--out",
        ])
        .arg(out.path())
        .status()
        .expect("binary runs");

    let ok = with_noise_ok && !without_noise_ok && status.code() == Some(3);
    let detail = format!(
        "rank {with_rank} with exploration, {without_rank} without, exit code {:?}",
        status.code()
    );
    report(7, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_8_reference_residual_value() {
    let spec = demo_problem();
    let p = SymMatrix::new(DMatrix::from_row_slice(
        2,
        2,
        &[2.2384, -0.8272, -0.8272, 1.8240],
    ))
    .unwrap();
    let k = Gain::new(DMatrix::from_row_slice(1, 2, &[-0.1109, 0.0408])).unwrap();
    let norm = sare_residual(&spec.model, &spec.cost, &p, &k).norm();
    let ok = (norm - 9.7162e-4).abs() <= 2e-4;
    let detail = format!("residual at reference values: {norm:.6e} (target 9.7162e-4 ± 2e-4)");
    report(8, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_9_operator_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xabcd);
    let mut worst_quadratic = 0.0f64;
    let mut worst_vec = 0.0f64;
    let mut ok = true;

    for _ in 0..1000 {
        let n = 1 + rng.random_range(0..6usize);

        // (a) x'Px = bar(x)'vech_scaled(P)
        let p =
            SymMatrix::new(DMatrix::from_fn(n, n, |_, _| rng.random_range(-10.0..10.0))).unwrap();
        let x = DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
        let direct = (x.transpose() * p.as_matrix() * &x)[(0, 0)];
        let via = bar(&x).as_vector().dot(vech_scaled(&p).as_vector());
        let rel = (direct - via).abs() / (1.0 + direct.abs());
        worst_quadratic = worst_quadratic.max(rel);
        if rel > 1e-12 {
            ok = false;
        }

        // (b) unvech_scaled inverts vech_scaled exactly
        if unvech_scaled(&vech_scaled(&p)).as_matrix() != p.as_matrix() {
            ok = false;
        }

        // (c) vec(DEF) = (F' (x) D) vec(E), and (E' (x) F') = (E (x) F)'
        let dm = DMatrix::from_fn(n, n, |_, _| rng.random_range(-5.0..5.0));
        let em = DMatrix::from_fn(n, n, |_, _| rng.random_range(-5.0..5.0));
        let fm = DMatrix::from_fn(n, n, |_, _| rng.random_range(-5.0..5.0));
        let lhs = slq_pilot::matops::vecm(&(&dm * &em * &fm));
        let rhs = kron(&fm.transpose(), &dm) * slq_pilot::matops::vecm(&em);
        let rel = (&lhs - &rhs).norm() / (1.0 + lhs.norm());
        worst_vec = worst_vec.max(rel);
        if rel > 1e-12 {
            ok = false;
        }
        if kron(&em.transpose(), &fm.transpose()) != kron(&em, &fm).transpose() {
            ok = false;
        }

        // (d) bar(y) = monomial_selector(n) (y (x) y), exactly
        let y = DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
        let ymat = DMatrix::from_column_slice(n, 1, y.as_slice());
        let yy = kron(&ymat, &ymat);
        let selected = monomial_selector(n) * DVector::from_column_slice(yy.as_slice());
        if bar(&y).as_vector() != &selected {
            ok = false;
        }

        // round-trip of raw vech vectors as well
        let raw = DVector::from_fn(n * (n + 1) / 2, |_, _| rng.random_range(-10.0..10.0));
        let vv = VechVector::from_vector(raw.clone()).unwrap();
        if vech_scaled(&unvech_scaled(&vv)).as_vector() != &raw {
            ok = false;
        }
    }
    let detail = format!(
        "1000 instances: worst quadratic-form error {worst_quadratic:.3e}, worst vec identity error {worst_vec:.3e}"
    );
    report(9, ok, &detail);
    assert!(ok, "{detail}");
}

#[test]
fn criterion_10_reproducibility() {
    let out1 = tempfile::tempdir().unwrap();
    let out2 = tempfile::tempdir().unwrap();
    let run = |out: &std::path::Path| {
        let status = Command::new(env!("CARGO_BIN_EXE_slq-pilot"))
            .args([
                "--config",
                config_path("example.toml").to_str().unwrap(),
                "--mode",
                "both",
                "--seed",
                "7",
                "--out",
            ])
            .arg(out)
            .status()
            .expect("binary runs");
        assert_eq!(status.code(), Some(0));
    };
    run(out1.path());
    run(out2.path());
    let h1 = std::fs::read(out1.path().join("history.csv")).unwrap();
    let h2 = std::fs::read(out2.path().join("history.csv")).unwrap();
    let f1 = std::fs::read(out1.path().join("final.csv")).unwrap();
    let f2 = std::fs::read(out2.path().join("final.csv")).unwrap();
    let ok = h1 == h2 && f1 == f2;
    let detail = format!(
        "history.csv ({} bytes) and final.csv ({} bytes) byte-identical across reruns: {ok}",
        h1.len(),
        f1.len()
    );
    report(10, ok, &detail);
    assert!(ok, "{detail}");
}
