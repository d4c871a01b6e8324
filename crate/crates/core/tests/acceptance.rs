//! Acceptance criteria 1–9. Each test writes one `criterion N: PASS|FAIL`
//! line straight to stderr (bypassing the test harness capture) and then
//! asserts the same outcome.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use famc::cir::{fht_zero_drift, slot_probabilities, Receiver};
use famc::config::ScenarioConfig;
use famc::detection::{bep, bep_bitlevel_mc};
use famc::drift::{DriftWaveform, PiecewiseConstantField};
use famc::experiment::{sweep, verify_cir, SweepRow, SweepSpec, SweepVariable, VerifyReport, VerifySettings, FA_L1_REFERENCE, FA_L1_SLACK};
use famc::quadrature::{integrate, QuadOptions};
use famc::sim::{simulate_absorbing, SimSettings};
use famc::waveform::{mrp, Design, MrpInput};

fn report(criterion: u32, passed: bool, detail: &str) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "criterion {criterion}: {verdict} - {detail}");
}

/// Slot probabilities come from quadrature with this absolute tolerance;
/// smaller steps down are not resolved.
const SLOT_RESOLUTION: f64 = 1e-8;

fn benchmark() -> DriftWaveform {
    DriftWaveform::direct(PiecewiseConstantField::benchmark_drift())
}

/// One 10^5-particle comparison on the arbitrary-drift benchmark, shared by
/// criteria 1, 3 and 4.
fn benchmark_report() -> &'static VerifyReport {
    static REPORT: OnceLock<VerifyReport> = OnceLock::new();
    REPORT.get_or_init(|| verify_cir(&ScenarioConfig::reference(), &benchmark(), &VerifySettings::default()).unwrap())
}

fn check(r: &VerifyReport, name: &str) -> (bool, String) {
    let c = r.checks.iter().find(|c| c.name == name).unwrap();
    (c.passed, c.detail.clone())
}

#[test]
fn criterion_1_passive_response_is_exact() {
    let r = benchmark_report();
    let times: Vec<f64> = r.pa_rows.iter().map(|p| p.time).collect();
    assert_eq!(times, vec![0.05, 0.1, 0.5, 1.0, 1.5, 2.0]);
    let worst = r
        .pa_rows
        .iter()
        .map(|p| (p.simulated - p.analytic).abs() / p.std_error)
        .fold(0.0, f64::max);
    let passed = worst <= 3.0;
    report(1, passed, &format!("max |analytic - simulated| / se = {worst:.3} over 6 times, N = 1e5"));
    assert!(passed);
}

#[test]
fn criterion_2_zero_drift_capture_probability() {
    let cfg = ScenarioConfig::reference();
    let target = cfg.rx_radius / cfg.tx_distance();
    assert!((target - 1.0 / 3.0).abs() < 1e-12);

    // ∫_0^∞ f0(t) dt with t = 1/s², which turns the heavy tail into a
    // Gaussian in s
    let g = |s: f64| if s <= 0.0 { 0.0 } else { fht_zero_drift(&cfg, 1.0 / (s * s)) * 2.0 / (s * s * s) };
    let opts = QuadOptions { abs_tol: 1e-12, ..Default::default() };
    let analytic = integrate(g, 0.0, 200.0, &[], opts).unwrap().value;
    let analytic_ok = (analytic - target).abs() <= 1e-6;

    let s = SimSettings::new(100_000, 1e-4, 200.0, 1, 200.0).unwrap();
    let h = simulate_absorbing(&cfg, &DriftWaveform::zero(), &s).unwrap();
    let z = (h.total_hit_fraction - target) / h.total_std_error;
    let sim_ok = z.abs() <= 3.0;

    // what a 200 s horizon can capture at most
    let gap = cfg.tx_distance() - cfg.rx_radius;
    let finite = target * statrs::function::erf::erfc(gap / (4.0 * cfg.diffusion * 200.0).sqrt());
    let z_finite = (h.total_hit_fraction - finite) / h.total_std_error;

    let passed = analytic_ok && sim_ok;
    report(
        2,
        passed,
        &format!(
            "analytic integral {analytic:.9} vs 1/3 (|err| {:.1e}); simulated {:.5} ± {:.5}, z = {z:.2} vs 1/3; \
             exact 200 s capture {finite:.5}, z = {z_finite:.2}",
            (analytic - target).abs(),
            h.total_hit_fraction,
            h.total_std_error
        ),
    );
    assert!(analytic_ok, "analytic capture probability {analytic}");
    assert!(z_finite.abs() <= 3.0, "simulation disagrees with the finite-horizon capture");
    assert!(sim_ok, "200 s capture {} is {z:.2} se from 1/3", h.total_hit_fraction);
}

#[test]
fn criterion_3_reweighted_simulation_matches_direct() {
    let r = benchmark_report();
    assert_eq!(r.fa_rows.len(), 40);
    let (bins_ok, bins) = check(r, "fa_reweighted_vs_direct_3se");
    let (mean_ok, mean) = check(r, "reweighting_weight_mean_3se");
    let passed = bins_ok && mean_ok;
    report(3, passed, &format!("40 bins of 0.05 s: {bins}; {mean}"));
    assert!(passed);
}

#[test]
fn criterion_4_tilted_density_l1_regression() {
    let r = benchmark_report();
    let bound = FA_L1_SLACK * FA_L1_REFERENCE;
    let passed = r.fa_l1 <= bound;
    report(
        4,
        passed,
        &format!("L1 = {:.6}, frozen {FA_L1_REFERENCE}, bound {bound:.6}", r.fa_l1),
    );
    assert!(passed);
}

#[test]
fn criterion_5_receiver_responses_to_aligned_drift() {
    let cfg = ScenarioConfig::reference();
    let speeds: Vec<f64> = (0..10).map(|k| k as f64 * 5e-5).collect();
    let response = |rx: Receiver| -> Vec<f64> {
        speeds
            .iter()
            .map(|&v| {
                let w = DriftWaveform::constant(cfg.link_axis() * v);
                slot_probabilities(&cfg, &w, rx, 1).unwrap().p(1)
            })
            .collect()
    };
    let fa = response(Receiver::FullyAbsorbing);
    let pa = response(Receiver::Passive);
    let worst_fa_drop = fa.windows(2).map(|p| p[0] - p[1]).fold(0.0, f64::max);
    let fa_monotone = worst_fa_drop <= SLOT_RESOLUTION;
    let pa_drop = pa.windows(2).position(|p| p[1] < p[0]);
    let passed = fa_monotone && pa_drop.is_some();
    report(
        5,
        passed,
        &format!(
            "FA p1 non-decreasing over 10 speeds: {fa_monotone} ({:.4} -> {:.4}, largest step down {worst_fa_drop:.1e}); \
             PA first drop: {}",
            fa[0],
            fa[9],
            match pa_drop {
                Some(i) => format!("{:.4} -> {:.4} at {:.1e} -> {:.1e} m/s", pa[i], pa[i + 1], speeds[i], speeds[i + 1]),
                None => "none".into(),
            }
        ),
    );
    assert!(passed);
}

#[test]
fn criterion_6_mrp_hand_traces() {
    let run = |q_s, t_p1, t_p2, budget| {
        mrp(&MrpInput { q_s, q_r: 1.0, t_p1, t_p2, budget, symbol_duration: 2.0 }).unwrap()
    };
    let rel = |a: f64, b: f64| if b == 0.0 { a.abs() } else { ((a - b) / b).abs() };

    // ξ = 0: the saturation test |q_s| ≥ 0 fires with a zero cap
    let zero = run(3.0, 0.1, 0.4, 0.0);
    // v1 = q_s = 2, ξ_res = 25 − 4·0.1 = 24.6, v2 = −√(24.6/0.4)
    let supp = run(2.0, 0.1, 0.4, 25.0);
    let supp_want = -(61.5f64).sqrt();
    // cap √(25/0.1) = √250 < 100
    let sat = run(100.0, 0.1, 0.4, 25.0);
    let sat_want = 250f64.sqrt();

    let errs = [
        rel(zero.0, 0.0),
        rel(zero.1, 0.0),
        rel(supp.0, 2.0),
        rel(supp.1, supp_want),
        rel(sat.0, sat_want),
        rel(sat.1, 0.0),
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    let passed = worst <= 1e-12 && (supp.1 + 7.842).abs() < 5e-4;
    report(
        6,
        passed,
        &format!(
            "(0,0) -> {zero:?}; suppression -> ({}, {:.6}); saturation -> ({:.6}, {}); worst rel err {worst:.1e}",
            supp.0, supp.1, sat.0, sat.1
        ),
    );
    assert!(passed);
}

fn metric(rows: &[SweepRow], xi: f64, design: &str, name: &str) -> f64 {
    rows.iter()
        .find(|r| r.value == xi && r.design == design && r.metric == name)
        .unwrap_or_else(|| panic!("missing {name} for {design} at xi = {xi}"))
        .result
}

/// BEP comparison with allowance for round-off between designs that
/// coincide mathematically.
fn no_worse(a: f64, b: f64) -> bool {
    a <= b * (1.0 + 1e-9)
}

#[test]
fn criterion_7_energy_sweep_shape() {
    let cfg = ScenarioConfig::reference();
    let fa_spec = SweepSpec::default_for(SweepVariable::Xi, Receiver::FullyAbsorbing, 1);
    let pa_spec = SweepSpec::default_for(SweepVariable::Xi, Receiver::Passive, 1);
    assert_eq!(pa_spec.particles_per_bit, Some(1000));
    assert_eq!(cfg.particles_per_bit, 100);
    let fa = sweep(&fa_spec, &cfg).unwrap();
    let pa = sweep(&pa_spec, &cfg).unwrap();
    assert!(fa.iter().chain(&pa).all(|r| r.metric != "error"));
    let grid = &fa_spec.values;

    let gaps: Vec<f64> = grid.iter().map(|&x| metric(&fa, x, "mhp-0.8", "p1_minus_p2")).collect();
    let gap_monotone = gaps.windows(2).all(|g| g[0] - g[1] <= SLOT_RESOLUTION);
    let gap_200 = metric(&fa, 200.0, "mhp-0.8", "p1_minus_p2");
    let a = gap_monotone && gap_200 >= 0.7;

    let pa_200 = metric(&pa, 200.0, "msp", "p1_minus_p2");
    let b = (0.09..=0.13).contains(&pa_200);

    let c_fail: Vec<f64> = grid
        .iter()
        .copied()
        .filter(|&x| x >= 50.0)
        .filter(|&x| !no_worse(metric(&fa, x, "mhp-0.8", "bep_analytic"), metric(&fa, x, "mhp-0.5", "bep_analytic")))
        .collect();
    let c = c_fail.is_empty();

    let mut d_fail = Vec::new();
    for &x in grid.iter().filter(|&&x| x >= 5.0) {
        for (rows, designs) in [(&fa, &["mhp-0.5", "mhp-0.8"][..]), (&pa, &["msp"][..])] {
            for design in designs {
                let own = metric(rows, x, design, "bep_analytic");
                for base in ["undesign", "none"] {
                    if !(own < metric(rows, x, base, "bep_analytic")) {
                        d_fail.push(format!("{design}<{base}@{x}"));
                    }
                }
            }
        }
    }
    let d = d_fail.is_empty();

    let passed = a && b && c && d;
    report(
        7,
        passed,
        &format!(
            "(a) {}: FA MHP gap non-decreasing {gap_monotone}, {gap_200:.4} at xi = 200 (need >= 0.7); \
             (b) {}: PA MSP gap {pa_200:.4} at xi = 200; \
             (c) {}: beta 0.8 worse than 0.5 at xi = {c_fail:?}; \
             (d) {}: violations {d_fail:?}",
            verdict(a),
            verdict(b),
            verdict(c),
            verdict(d)
        ),
    );
    assert!(passed);
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "fail"
    }
}

#[test]
fn criterion_8_gaussian_matches_bit_level() {
    let cfg = ScenarioConfig::reference();
    assert_eq!(cfg.energy_budget, 25.0);
    let (w, _) = Design::Mhp { beta: 0.8 }.realize(&cfg).unwrap();
    let table = slot_probabilities(&cfg, &w, Receiver::FullyAbsorbing, cfg.isi_memory).unwrap();
    let analytic = bep(&table, &cfg).unwrap().reported();
    let mc = bep_bitlevel_mc(&table, &cfg, 100_000, 1).unwrap();
    let (lo, hi) = mc.interval.unwrap();
    let passed = (lo..=hi).contains(&analytic);
    report(
        8,
        passed,
        &format!("analytic {analytic:.3e}; bit-level {:.3e}, 3-sigma Wilson [{lo:.3e}, {hi:.3e}] over 1e5 bits", mc.reported()),
    );
    assert!(passed);
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn criterion_9_sweeps_are_byte_identical() {
    let runs: Vec<tempfile::TempDir> = ["1", "3", "1"]
        .iter()
        .map(|workers| {
            let dir = tempfile::tempdir().unwrap();
            let status = Command::new(env!("CARGO_BIN_EXE_famc"))
                .args(["sweep", "--seed", "7", "--workers", workers, "--out-dir"])
                .arg(dir.path())
                .status()
                .unwrap();
            assert!(status.success());
            dir
        })
        .collect();
    let files: Vec<_> = runs.iter().map(|d| csv_files(d.path())).collect();
    assert_eq!(files[0].len(), 2);
    let passed = files.iter().all(|f| *f == files[0]);
    report(
        9,
        passed,
        &format!("{} sweep CSVs compared across runs with 1, 3 and 1 workers", files[0].len()),
    );
    assert!(passed);
}
