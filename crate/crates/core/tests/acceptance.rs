//! Acceptance run. Prints one line per criterion and fails if any line fails.

use std::io::Write;
use std::time::{Duration, Instant};

use dko_core::config::ScenarioConfig;
use dko_core::output::{trajectory_csv, Provenance};
use dko_core::solver::{run_ensemble_with, run_trajectory, worker_count, Scenario, TrajectoryRecord};
use dko_core::verify::{
    check_comparison, check_defect_identity, check_defect_refinement, check_energy_identity, check_kinetic_fitted,
    check_kinetic_slope, check_l1_contraction, check_mass_identity, check_non_negativity, check_penalty_ode,
    energy_level, epsilon_study, initial_trace, kinetic_study, scaled_partner, tail_report, CheckResult, TAIL_BETAS,
    TRACE_TAUS,
};

const PRESETS: [&str; 3] = ["heat-contact", "pm-contact", "fast-diffusion"];
const ACCEPT_N: usize = 256;
const ACCEPT_T: f64 = 1.0;
const COMPARISON_EPS: (f64, f64) = (0.02, 0.1);
const COMPARISON_NS: [usize; 2] = [128, 256];
const CONTRACTION_D0: f64 = 0.1;
const STUDY_EPS: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];
const FINE_BINS: usize = 256;
const HEAT_KINETIC_NS: [usize; 2] = [64, 128];
const PM_KINETIC_NS: [usize; 2] = [128, 256];
const ENERGY_PATHS: usize = 64;
const ENERGY_PILOT_N: usize = 128;
const NEGATIVITY_PATHS: usize = 16;
const REPRO_PATH: u64 = 7;

struct Line {
    id: usize,
    name: &'static str,
    checks: Vec<CheckResult>,
    elapsed: Duration,
    budget: Duration,
}

impl Line {
    fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed) && self.elapsed <= self.budget
    }

    fn print(&self, out: &mut impl Write) {
        let status = if self.passed() { "PASS" } else { "FAIL" };
        writeln!(
            out,
            "[{status}] {:>2} {:<22} {:>7.1}s / {:>4}s",
            self.id,
            self.name,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs()
        )
        .unwrap();
        for c in &self.checks {
            writeln!(
                out,
                "        {:<4} {:<26} observed={:.4e} tol={:.4e}  {}  [{}; {}]",
                c.status(),
                c.check_id,
                c.observed,
                c.tolerance,
                c.tolerance_formula,
                c.context.level,
                c.context.detail
            )
            .unwrap();
        }
    }
}

fn config(name: &str) -> ScenarioConfig {
    let mut c = ScenarioConfig::preset(name).unwrap();
    c.mesh.n = ACCEPT_N;
    c.time.horizon = ACCEPT_T;
    c
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

fn secs(s: u64) -> Duration {
    Duration::from_secs(s)
}

/// A record's `trajectory.csv` as bytes.
fn trajectory_bytes(sc: &Scenario, rec: &TrajectoryRecord) -> Vec<u8> {
    trajectory_csv(&Provenance::of(sc), rec).into_bytes()
}

fn reproducibility(sc: &Scenario) -> CheckResult {
    let a = trajectory_bytes(sc, &run_trajectory(sc, REPRO_PATH).unwrap());
    let b = trajectory_bytes(sc, &run_trajectory(sc, REPRO_PATH).unwrap());
    let mut by_threads = Vec::new();
    for threads in [1, 4] {
        let mut captured = None;
        run_ensemble_with(sc, REPRO_PATH - 3, 4, threads, |rec| {
            if rec.path_id == REPRO_PATH {
                captured = Some(trajectory_bytes(sc, rec));
            }
        })
        .unwrap();
        by_threads.push(captured.expect("path visited"));
    }
    let mismatches = [a == b, a == by_threads[0], a == by_threads[1]].iter().filter(|ok| !**ok).count();
    CheckResult {
        check_id: "trajectory_bit_identical".into(),
        passed: mismatches == 0,
        observed: mismatches as f64,
        tolerance: 0.0,
        tolerance_formula: "byte mismatches among rerun and threads {1, 4} == 0".into(),
        context: dko_core::verify::CheckContext {
            config_hash: sc.config_hash.clone(),
            master_seed: sc.master_seed,
            level: format!("n={}", sc.mesh.n()),
            detail: format!("path_id={REPRO_PATH} bytes={}", a.len()),
        },
    }
}

#[test]
fn acceptance() {
    let threads = worker_count();
    let mut lines = Vec::new();

    // Single-path runs shared by the mass, defect, tail and trace criteria.
    let mut runs: Vec<(ScenarioConfig, Scenario, TrajectoryRecord, Duration)> = Vec::new();
    for name in PRESETS.iter().copied().chain(["ode-contact"]) {
        let c = if name == "ode-contact" { ScenarioConfig::preset(name).unwrap() } else { config(name) };
        let sc = c.build().unwrap();
        let (rec, t) = timed(|| run_trajectory(&sc, 0).unwrap());
        runs.push((c, sc, rec, t));
    }
    let preset_runs = &runs[..PRESETS.len()];

    let slowest = preset_runs.iter().map(|r| r.3).max().unwrap();
    lines.push(Line {
        id: 1,
        name: "mass identity",
        checks: preset_runs.iter().map(|(_, sc, rec, _)| check_mass_identity(sc, rec)).collect(),
        elapsed: slowest,
        budget: secs(10),
    });

    let pm = config("pm-contact");
    let pm_sc = pm.build().unwrap();
    let (check, t) = timed(|| check_non_negativity(&pm_sc, NEGATIVITY_PATHS, threads).unwrap());
    lines.push(Line { id: 2, name: "non-negativity", checks: vec![check], elapsed: t, budget: secs(60) });

    let (check, t) = timed(|| check_comparison(&pm, COMPARISON_EPS.0, COMPARISON_EPS.1, &COMPARISON_NS, 0).unwrap());
    lines.push(Line { id: 3, name: "monotone in epsilon", checks: vec![check], elapsed: t, budget: secs(120) });

    let (check, t) = timed(|| {
        let partner = scaled_partner(&pm_sc, CONTRACTION_D0).unwrap();
        check_l1_contraction(&pm_sc, &partner, 0).unwrap()
    });
    lines.push(Line { id: 4, name: "L1 contraction", checks: vec![check], elapsed: t, budget: secs(60) });

    let (checks, t) = timed(|| {
        let report = epsilon_study(&pm_sc, &STUDY_EPS, 0).unwrap();
        let mut checks: Vec<CheckResult> =
            report.checks().into_iter().filter(|c| c.check_id == "penalty_rate").collect();
        let (_, ode_sc, ode_rec, _) = &runs[3];
        checks.push(check_penalty_ode(ode_sc, ode_rec).unwrap());
        checks
    });
    lines.push(Line { id: 5, name: "penalty decay rate", checks, elapsed: t, budget: secs(180) });

    let (checks, t) = timed(|| {
        let mut checks: Vec<CheckResult> = runs.iter().map(|(_, sc, rec, _)| check_defect_identity(sc, rec)).collect();
        for (c, sc, rec, _) in preset_runs {
            let mut fine = c.clone();
            fine.mesh.xi_bins = FINE_BINS;
            let fine_sc = fine.build().unwrap();
            let fine_rec = run_trajectory(&fine_sc, 0).unwrap();
            checks.push(check_defect_refinement((sc, rec), (&fine_sc, &fine_rec)));
        }
        checks
    });
    lines.push(Line { id: 6, name: "defect identity", checks, elapsed: t, budget: secs(60) });

    let (checks, t) = timed(|| {
        let heat = config("heat-contact");
        let heat_sc = heat.build().unwrap();
        let heat_levels = kinetic_study(&heat, &HEAT_KINETIC_NS, 0).unwrap();
        let pm_levels = kinetic_study(&pm, &PM_KINETIC_NS, 0).unwrap();
        vec![check_kinetic_slope(&heat_sc, &heat_levels), check_kinetic_fitted(&pm_sc, &pm_levels)]
    });
    lines.push(Line { id: 7, name: "kinetic residual", checks, elapsed: t, budget: secs(300) });

    let (check, t) = timed(|| {
        let pilot = energy_level(&pm.with_n(ENERGY_PILOT_N).build().unwrap(), ENERGY_PATHS, threads).unwrap();
        let level = energy_level(&pm_sc, ENERGY_PATHS, threads).unwrap();
        check_energy_identity(&pm_sc, &level, &pilot)
    });
    lines.push(Line { id: 8, name: "energy identity", checks: vec![check], elapsed: t, budget: secs(600) });

    let (checks, t) = timed(|| {
        preset_runs
            .iter()
            .map(|(_, sc, rec, _)| {
                let top = sc.obstacle.bound(sc.horizon).ceil() as u32 + 2;
                let ns: Vec<u32> = (1..=top).collect();
                tail_report(&rec.measures, &sc.obstacle, sc.horizon, &TAIL_BETAS, &ns).unwrap().check(sc)
            })
            .collect()
    });
    lines.push(Line { id: 9, name: "kinetic-measure tails", checks, elapsed: t, budget: secs(60) });

    let (checks, t) = timed(|| runs.iter().map(|(_, sc, rec, _)| initial_trace(sc, rec, &TRACE_TAUS).unwrap()).collect());
    lines.push(Line { id: 10, name: "initial trace", checks, elapsed: t, budget: secs(60) });

    let (check, t) = timed(|| reproducibility(&pm_sc));
    lines.push(Line { id: 11, name: "reproducibility", checks: vec![check], elapsed: t, budget: secs(60) });

    // Written to the handle directly so the table shows without --nocapture.
    let mut out = std::io::stdout().lock();
    writeln!(out).unwrap();
    for line in &lines {
        line.print(&mut out);
    }
    let failed: Vec<usize> = lines.iter().filter(|l| !l.passed()).map(|l| l.id).collect();
    writeln!(out, "{} of {} criteria passed", lines.len() - failed.len(), lines.len()).unwrap();
    drop(out);
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
