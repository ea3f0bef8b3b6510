//! Acceptance suite: one numbered check per line, nonzero exit if any fails.
//!
//! Run with `cargo test -p voltvar --test acceptance -- --nocapture` (output
//! is printed regardless, the flag only matters under a capturing runner).

mod support;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use voltvar::centralopt::{self, Objective};
use voltvar::control::{run_closed_loop, ControlConfig, Plant};
use voltvar::netfile::feeder16;
use voltvar::netmodel::{baseline_voltage, build_incidence, compute_sensitivities_with, SensitivityRoute};
use voltvar::pflow::{solve_acpf, solve_lindistflow};
use voltvar::scenario::{run_dynamic, run_static, DailyProfile, DynamicController, DynamicScenario};
use voltvar::stability::{analyze, scaled_epsilon_bound};
use voltvar::{FeederNetwork, GraphMatrices, QpProblem, VarLimits};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($fmt)+));
        }
    };
}

fn feeder(meshed: bool) -> (FeederNetwork, GraphMatrices) {
    let net: FeederNetwork = feeder16(meshed).to_network().unwrap();
    let gm = GraphMatrices::from_network(&net).unwrap();
    (net, gm)
}

fn lambda_min(a: &DMatrix<f64>) -> f64 {
    a.clone().symmetric_eigen().eigenvalues.min()
}

fn matrix_properties() -> Check {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed_0001);
    let mut worst_bx = 0.0f64;
    let mut worst_lap = 0.0f64;
    let mut worst_tree = 0.0f64;
    let mut cases = Vec::new();
    for _ in 0..200 {
        let n = rng.gen_range(1..=50);
        cases.push(support::random_tree(&mut rng, n));
    }
    for _ in 0..50 {
        let n = rng.gen_range(2..=50);
        let extra = rng.gen_range(1..=n.min(10));
        cases.push(support::random_meshed(&mut rng, n, extra));
    }
    for net in &cases {
        let gm = GraphMatrices::from_network(net).map_err(|e| e.to_string())?;
        let n = net.n();
        for (name, m) in [("R", &gm.r), ("X", &gm.x)] {
            ensure!(m == &m.transpose(), "{name} not symmetric (N = {n})");
            let lmin = lambda_min(m);
            ensure!(
                lmin > 0.0,
                "{name} not positive definite (lambda_min = {lmin:e}, N = {n})"
            );
        }
        worst_bx = worst_bx.max((&gm.b * &gm.x - DMatrix::identity(n, n)).amax());
        worst_lap = worst_lap.max((&gm.b - support::laplacian_direct(net)).amax());
        if net.lines().len() == n {
            let inc = build_incidence(net);
            let m_inv_t = inc.m.clone().try_inverse().ok_or("M singular")?.transpose();
            worst_tree = worst_tree.max((m_inv_t * &inc.m0).add_scalar(1.0).amax());
        }
    }
    let elapsed = start.elapsed();
    ensure!(worst_bx < 1e-8, "||BX - I||_max = {worst_bx:e}");
    ensure!(worst_tree <= 1e-10, "tree identity error {worst_tree:e}");
    ensure!(worst_lap <= 1e-10, "Laplacian mismatch {worst_lap:e}");
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!(
        "250 graphs; ||BX-I|| {worst_bx:.1e}, tree identity {worst_tree:.1e}, Laplacian {worst_lap:.1e}; {elapsed:.2?}"
    ))
}

/// Converged scaled-control state of a network versus the weighted optimum.
fn fixed_point_gap(net: &FeederNetwork, gm: &GraphMatrices, epsilon: f64) -> Result<f64, String> {
    let cfg = ControlConfig::scaled(epsilon, net.c(), gm, net.mu(), VarLimits::from_network(net))
        .map_err(|e| e.to_string())?;
    let out = run_closed_loop(net, gm, &cfg, Plant::Linear, 200_000, 1e-12).map_err(|e| e.to_string())?;
    if !out.converged() {
        return Err(format!("control did not converge (N = {})", net.n()));
    }
    let prob = QpProblem::from_network(Objective::Weighted, net, gm).map_err(|e| e.to_string())?;
    let opt = centralopt::solve(&prob, 1e-13).map_err(|e| e.to_string())?;
    Ok((&out.state.q - &opt.q).amax())
}

fn fixed_point_is_optimum(net: &FeederNetwork, gm: &GraphMatrices) -> Check {
    let gap16 = fixed_point_gap(net, gm, 0.3)?;
    ensure!(gap16 <= 1e-6, "16-bus ||q_fix - q*|| = {gap16:e}");
    Ok(format!("16-bus ||q_fix - q*||_inf = {gap16:.1e}"))
}

fn fixed_point_random() -> Check {
    let mut rng = StdRng::seed_from_u64(0x5eed_0002);
    let mut worst_fix = 0.0f64;
    let mut worst_oracle = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(1..=10);
        let net = support::random_tree(&mut rng, n);
        let gm = GraphMatrices::from_network(&net).unwrap();
        let bound = scaled_epsilon_bound(&gm.x, &net.c()).unwrap();
        worst_fix = worst_fix.max(fixed_point_gap(&net, &gm, 0.5 * bound)?);
        if n <= 8 {
            let prob = QpProblem::from_network(Objective::Weighted, &net, &gm).unwrap();
            let opt = centralopt::solve(&prob, 1e-13).unwrap();
            let linear = prob.gradient(&DVector::zeros(n));
            let oracle = support::brute_force_box_qp(prob.hessian(), &linear, &prob.limits);
            worst_oracle = worst_oracle.max((&opt.q - oracle).amax());
        }
    }
    ensure!(worst_fix <= 1e-6, "random ||q_fix - q*|| = {worst_fix:e}");
    ensure!(worst_oracle <= 1e-8, "centralopt vs brute force {worst_oracle:e}");
    Ok(format!(
        "100 random: ||q_fix - q*|| {worst_fix:.1e}, brute-force gap {worst_oracle:.1e}"
    ))
}

fn epsilon_bound() -> Check {
    let (net, gm) = feeder(false);
    let start = Instant::now();
    let bound = scaled_epsilon_bound(&gm.x, &DVector::from_element(net.n(), 0.2)).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure!((bound - 0.63).abs() <= 0.02, "epsilon bound {bound:.4}");
    ensure!(elapsed < Duration::from_millis(100), "took {elapsed:?}");
    Ok(format!("epsilon bound {bound:.4}; {elapsed:.2?}"))
}

fn droop_oscillates(net: &FeederNetwork, gm: &GraphMatrices) -> Check {
    let cfg = ControlConfig::droop(
        DVector::from_element(net.n(), 0.5),
        net.mu(),
        VarLimits::from_network(net),
    )
    .map_err(|e| e.to_string())?;
    let report = analyze(&cfg, gm).map_err(|e| e.to_string())?;
    ensure!(
        !report.stable,
        "droop reported stable (lambda_max(H) = {:.4})",
        report.lambda_max_h
    );
    let mut levels = Vec::new();
    for plant in [Plant::Linear, Plant::Ac] {
        let out = run_closed_loop(net, gm, &cfg, plant, 200, 1e-8).map_err(|e| e.to_string())?;
        let osc = out
            .oscillation
            .ok_or(format!("{plant:?} plant: no period-2 oscillation detected"))?;
        levels.push(format!("{plant:?} {:.4}/{:.4}", osc.low, osc.high));
    }
    Ok(format!(
        "lambda_max(H) {:.4} (unstable); oscillation levels {}",
        report.lambda_max_h,
        levels.join(", ")
    ))
}

fn scaled_versus_benchmark(net: &FeederNetwork, gm: &GraphMatrices) -> Check {
    let cfg = ControlConfig::scaled(
        0.3,
        DVector::from_element(net.n(), 0.2),
        gm,
        net.mu(),
        VarLimits::from_network(net),
    )
    .map_err(|e| e.to_string())?;
    let out = run_static(net, gm, &cfg, Plant::Linear, 50).map_err(|e| e.to_string())?;
    ensure!(out.converged(), "scaled control not converged within 50 iterations");
    let v = solve_lindistflow(gm, &net.p(), &(&out.state.q - net.qc()), net.v0()).unwrap();
    let scaled = (v - net.mu()).norm();

    let weighted = QpProblem::from_network(Objective::Weighted, net, gm).unwrap();
    let w_opt = centralopt::solve(&weighted, 1e-12).unwrap();
    let weighted_mismatch = weighted.voltage_mismatch(&w_opt.q);
    ensure!(
        (scaled - weighted_mismatch).abs() <= 1e-4,
        "scaled mismatch {scaled:.5} vs weighted optimum {weighted_mismatch:.5}"
    );
    let bench = QpProblem::from_network(Objective::BenchmarkScaledIdentity, net, gm).unwrap();
    let b_opt = centralopt::solve(&bench, 1e-12).unwrap();
    let bench_mismatch = bench.voltage_mismatch(&b_opt.q);
    ensure!(
        bench_mismatch < scaled,
        "benchmark {bench_mismatch:.5} not below scaled {scaled:.5}"
    );
    ensure!(
        (scaled / 0.055 - 1.0).abs() <= 0.3 && (bench_mismatch / 0.031 - 1.0).abs() <= 0.3,
        "absolute mismatches {scaled:.4} / {bench_mismatch:.4} outside 30% of 0.055 / 0.031"
    );

    let ac = solve_acpf(net, &net.p(), &(&out.state.q - net.qc()), net.v0()).unwrap();
    let ac_mismatch = (ac.load_bus_magnitudes() - net.mu()).norm();
    Ok(format!(
        "scaled {scaled:.4} in {} iterations (AC {ac_mismatch:.4}), weighted optimum {weighted_mismatch:.4}, benchmark {bench_mismatch:.4}",
        out.iterations()
    ))
}

fn delayed_stabilizes() -> Check {
    let (net, gm) = feeder(false);
    let limits = VarLimits::from_network(&net);
    let c = DVector::from_element(net.n(), 0.5);
    let delayed = ControlConfig::delayed_droop(c.clone(), 0.3, net.mu(), limits.clone()).unwrap();
    let out = run_static(&net, &gm, &delayed, Plant::Linear, 10_000).map_err(|e| e.to_string())?;
    ensure!(out.converged(), "delayed droop (alpha = 0.3) did not converge");
    let droop = ControlConfig::droop(c, net.mu(), limits.clone()).unwrap();
    let droop_out = run_static(&net, &gm, &droop, Plant::Linear, 200).map_err(|e| e.to_string())?;
    ensure!(droop_out.oscillation.is_some(), "droop (alpha = 1) did not oscillate");

    let c = DVector::from_element(net.n(), 0.2);
    let mut counts = Vec::new();
    for alpha in [0.01, 0.1, 0.3, 0.9] {
        let cfg = ControlConfig::delayed_scaled(0.3, c.clone(), &gm, alpha, net.mu(), limits.clone()).unwrap();
        let report = analyze(&cfg, &gm).unwrap();
        let run = run_static(&net, &gm, &cfg, Plant::Linear, 200_000).map_err(|e| e.to_string())?;
        if report.stable {
            ensure!(run.converged(), "alpha = {alpha}: certified stable but not converged");
            counts.push((alpha, run.iterations()));
        }
    }
    ensure!(
        counts.len() == 4,
        "only {} of 4 alpha values certified stable",
        counts.len()
    );
    ensure!(
        counts.windows(2).all(|w| w[1].1 <= w[0].1),
        "iteration counts not non-increasing in alpha: {counts:?}"
    );
    Ok(format!(
        "delayed droop converged in {} iterations; iterations by alpha {:?}",
        out.iterations(),
        counts
    ))
}

fn certificate_soundness() -> Check {
    let start = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed_0007);
    let mut certified = 0;
    for case in 0..500 {
        let n = rng.gen_range(1..=20);
        let net = support::random_tree(&mut rng, n);
        let gm = GraphMatrices::from_network(&net).unwrap();
        let c = DVector::from_fn(n, |_, _| rng.gen_range(0.0..1.0));
        let bound = scaled_epsilon_bound(&gm.x, &c).unwrap();
        let d = DVector::from_fn(n, |j, _| bound * rng.gen_range(0.2..1.6) / (gm.x[(j, j)] + c[j]));
        let limits = VarLimits::from_network(&net);
        let cfg = ControlConfig::generic(c.clone(), d.clone(), 1.0, net.mu(), limits.clone()).unwrap();
        let report = analyze(&cfg, &gm).unwrap();
        if !report.stable {
            continue;
        }
        certified += 1;
        let out = run_closed_loop(&net, &gm, &cfg, Plant::Linear, 200_000, 1e-12).map_err(|e| e.to_string())?;
        ensure!(
            out.converged(),
            "case {case}: certified (lambda {:.4}) but not converged",
            report.lambda_max_h
        );

        let v_bar = baseline_voltage(&gm, &net.p(), &net.qc(), net.v0()).unwrap();
        let prob = QpProblem::new(Objective::Weighted, gm.x.clone(), net.mu() - v_bar, c, limits).unwrap();
        let q_star = centralopt::solve(&prob, 1e-14).map_err(|e| e.to_string())?.q;
        let scale = d.map(|dj| 1.0 / dj.sqrt());
        let err = |q: &DVector<f64>| (q - &q_star).component_mul(&scale).norm();
        let mut errors: Vec<f64> = out.trace.iter().map(|r| err(&r.q)).collect();
        errors.push(err(&out.state.q));
        let slack = 1e-10 * errors[0].max(1.0);
        if let Some(t) = (1..errors.len()).find(|&t| errors[t] > errors[t - 1] + slack) {
            return Err(format!(
                "case {case}: scaled error rose at t = {t} ({:e} -> {:e})",
                errors[t - 1],
                errors[t]
            ));
        }
    }
    let elapsed = start.elapsed();
    ensure!(certified > 100, "only {certified} certified configurations");
    ensure!(elapsed < Duration::from_secs(30), "took {elapsed:?}");
    Ok(format!(
        "{certified}/500 certified, all converged monotonically; {elapsed:.2?}"
    ))
}

fn linearization_accuracy() -> Check {
    let (net, gm) = feeder(false);
    let gap = |p: &DVector<f64>, qc: &DVector<f64>| -> Result<f64, String> {
        let q_net = -qc;
        let lin = solve_lindistflow(&gm, p, &q_net, net.v0()).unwrap();
        let ac = solve_acpf(&net, p, &q_net, net.v0()).unwrap();
        ensure!(ac.converged, "AC power flow did not converge");
        Ok((ac.load_bus_magnitudes() - lin).amax())
    };
    let full = gap(&net.p(), &net.qc())?;
    let light = gap(&(net.p() * 0.1), &(net.qc() * 0.1))?;
    ensure!(full <= 0.015 * net.v0(), "full-load gap {full:.5}");
    ensure!(light <= 0.003 * net.v0(), "10% load gap {light:.5}");
    Ok(format!("max |V_ac - V_lin|: full load {full:.5}, 10% load {light:.6}"))
}

fn meshed_generalization() -> Check {
    let (net, gm) = feeder(true);
    let a = fixed_point_is_optimum(&net, &gm)?;
    let b = droop_oscillates(&net, &gm)?;
    let c = scaled_versus_benchmark(&net, &gm)?;
    Ok(format!("{a}; {b}; {c}"))
}

fn dynamic_day() -> Check {
    let (net, gm) = feeder(false);
    let scen = DynamicScenario::new(DailyProfile::synthetic(), vec![18; net.n()]);
    let mut runs = Vec::new();
    let mut slowest = Duration::ZERO;
    for controller in [
        DynamicController::NoVar,
        DynamicController::Scaled { epsilon: 0.3, c: 0.2 },
        DynamicController::DelayedDroop {
            alpha: 0.3,
            voltage_window: 0.05,
        },
    ] {
        let start = Instant::now();
        let out = run_dynamic(&net, &gm, &scen, controller, Plant::Ac).map_err(|e| e.to_string())?;
        slowest = slowest.max(start.elapsed());
        ensure!(
            out.minutes.len() == 1440,
            "{}: run stopped early ({:?})",
            controller.label(),
            out.status
        );
        runs.push(out);
    }
    let [base, scaled, delayed] = &runs[..] else {
        unreachable!()
    };
    let evening = |m: usize| (18 * 60..22 * 60).contains(&m);

    let end = net.n() - 1;
    let end_min = base
        .ticks
        .iter()
        .filter(|r| evening(r.minute.unwrap()))
        .map(|r| r.v[end])
        .fold(f64::INFINITY, f64::min);
    ensure!(
        end_min < 0.95,
        "no evening under-voltage at the feeder end (min {end_min:.4})"
    );

    let means: Vec<f64> = runs.iter().map(|r| r.summary().mean_mismatch).collect();
    ensure!(
        means[1] < means[0] && means[2] < means[0],
        "daily mean mismatch {means:?}"
    );

    let s = scaled.minute_mismatch();
    let d = delayed.minute_mismatch();
    let window: Vec<usize> = (0..1440).filter(|&i| evening(scaled.minutes[i].minute)).collect();
    let better = window.iter().filter(|&&i| s[i] <= d[i]).count();
    let share = better as f64 / window.len() as f64;
    ensure!(
        share >= 0.9,
        "scaled <= delayed droop in only {:.1}% of evening minutes",
        100.0 * share
    );
    ensure!(
        slowest < Duration::from_secs(60),
        "slowest full-day run took {slowest:?}"
    );
    Ok(format!(
        "evening feeder-end min {end_min:.4}; mean mismatch none/scaled/delayed {:.4}/{:.4}/{:.4}; scaled <= delayed in {:.1}% of evening minutes; slowest run {slowest:.2?}",
        means[0],
        means[1],
        means[2],
        100.0 * share
    ))
}

fn tree_and_laplacian_routes_agree() -> Check {
    let mut rng = StdRng::seed_from_u64(0x5eed_0011);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let n = rng.gen_range(1..=30);
        let net = support::random_tree(&mut rng, n);
        let auto = GraphMatrices::from_network(&net).unwrap();
        let lap = compute_sensitivities_with(build_incidence(&net), SensitivityRoute::Laplacian).unwrap();
        worst = worst.max((&auto.x - &lap.x).amax()).max((&auto.r - &lap.r).amax());
    }
    ensure!(worst <= 1e-10, "route mismatch {worst:e}");
    Ok(format!("{worst:.1e}"))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("matrix properties", || {
            let a = matrix_properties()?;
            let b = tree_and_laplacian_routes_agree()?;
            Ok(format!("{a}; tree vs Laplacian route {b}"))
        }),
        ("fixed point equals optimum", || {
            let (net, gm) = feeder(false);
            let a = fixed_point_is_optimum(&net, &gm)?;
            let b = fixed_point_random()?;
            Ok(format!("{a}; {b}"))
        }),
        ("scaled epsilon bound", epsilon_bound),
        ("droop instability", || {
            let (net, gm) = feeder(false);
            droop_oscillates(&net, &gm)
        }),
        ("scaled convergence and benchmark ordering", || {
            let (net, gm) = feeder(false);
            scaled_versus_benchmark(&net, &gm)
        }),
        ("delayed stabilization", delayed_stabilizes),
        ("contraction certificate soundness", certificate_soundness),
        ("linearization accuracy", linearization_accuracy),
        ("meshed generalization", meshed_generalization),
        ("dynamic daily run", dynamic_day),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("[PASS] criterion {}: {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] criterion {}: {name}: {detail}", k + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
