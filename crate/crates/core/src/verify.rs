//! Pass/fail experiments built on the solver and the measure accumulators.
//!
//! Every tolerance below is either a fixed constant or a function of the
//! refinement level `(h, dt)` and the path count; the formula travels with
//! the number in [`CheckResult::tolerance_formula`].

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ScenarioConfig};
use crate::grid::{integrate, GridField, Norm};
use crate::kinetics::{
    defect_identity, weak_kinetic_residual, Component, DefectTestFn, KineticTestFn, KineticsError, LevelMeasure,
    ResidualEntry, ResidualReport,
};
use crate::model::{ObstacleKind, ObstacleSpec, Side};
use crate::solver::{run_ensemble_with, run_trajectory, DtPolicy, Runner, Scenario, SolverError, TrajectoryRecord};

pub const MASS_REL_TOL: f64 = 1e-10;
pub const NEGATIVITY_TOL: f64 = 1e-8;
/// Constant in `C_ref (dt + h)` for pathwise comparison and contraction.
pub const C_REF: f64 = 0.5;
/// Violations below this are treated as exact ties when asking for halving.
pub const MONO_FLOOR: f64 = 1e-12;
pub const EPS_SLOPE_MIN: f64 = 0.9;
pub const ODE_REL_TOL: f64 = 1e-6;
pub const DEFECT_REL_TOL: f64 = 1e-10;
pub const DEFECT_SLOPE_MIN: f64 = 1.0;
pub const KINETIC_SLOPE_MIN: f64 = 1.0;
/// Slack on the fitted constant when a noisy residual is carried to a finer level.
pub const KINETIC_SAFETY: f64 = 2.0;
pub const ENERGY_SE_FACTOR: f64 = 3.0;
pub const TAIL_DROP: f64 = 10.0;
/// Allowed growth of the fitted λ constant across an ε study.
pub const LAMBDA_GROWTH: f64 = 2.0;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Kinetics(#[from] KineticsError),
    #[error("{0}")]
    BadInput(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckContext {
    pub config_hash: String,
    pub master_seed: u64,
    /// Mesh and step sizes of every level involved.
    pub level: String,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check_id: String,
    pub passed: bool,
    pub observed: f64,
    pub tolerance: f64,
    pub tolerance_formula: String,
    pub context: CheckContext,
}

impl CheckResult {
    pub fn status(&self) -> &'static str {
        if self.passed {
            "pass"
        } else {
            "fail"
        }
    }
}

fn context(sc: &Scenario, level: String, detail: String) -> CheckContext {
    CheckContext { config_hash: sc.config_hash.clone(), master_seed: sc.master_seed, level, detail }
}

fn level_of(sc: &Scenario, dt: f64) -> String {
    format!("n={} h={:.4e} dt={:.4e}", sc.mesh.n(), sc.mesh.h(), dt)
}

fn mean_dt(sc: &Scenario, rec: &TrajectoryRecord) -> f64 {
    if rec.steps == 0 {
        0.0
    } else {
        sc.horizon / rec.steps as f64
    }
}

/// Sign that turns "the smaller ε lies on the feasible side" into `≤ 0`.
fn side_sign(side: Side) -> f64 {
    match side {
        Side::Upper => 1.0,
        Side::Lower => -1.0,
    }
}

/// Steps every scenario with the time step of the first, so that runs with
/// equal `path_id` see identical noise. `visit` runs after construction and
/// after each step.
pub fn lockstep(
    scs: &[Scenario],
    path_id: u64,
    mut visit: impl FnMut(&[Runner<'_>]),
) -> Result<Vec<TrajectoryRecord>, VerifyError> {
    if scs.is_empty() {
        return Err(VerifyError::BadInput("lockstep needs at least one scenario".into()));
    }
    let mut runners: Vec<Runner<'_>> = scs.iter().map(|s| Runner::new(s, path_id)).collect();
    visit(&runners);
    while !runners[0].done() {
        let dt = runners[0].next_dt();
        for r in runners.iter_mut() {
            r.step(dt)?;
        }
        visit(&runners);
    }
    Ok(runners.into_iter().map(Runner::finish).collect())
}

/// Copy of the scenario on the frozen time step, for coupled runs.
pub fn frozen(sc: &Scenario) -> (Scenario, f64) {
    let dt = sc.frozen_dt();
    (sc.with_dt_policy(DtPolicy::Fixed { dt }), dt)
}

pub fn check_mass_identity(sc: &Scenario, rec: &TrajectoryRecord) -> CheckResult {
    let m0 = rec.initial_mass();
    let defect = rec.mass_defect();
    let tol = MASS_REL_TOL * (1.0 + m0);
    let last = rec.series.last().copied();
    CheckResult {
        check_id: "mass_identity".into(),
        passed: defect <= tol,
        observed: defect,
        tolerance: tol,
        tolerance_formula: format!("{MASS_REL_TOL:e}*(1+|u_init|_1)"),
        context: context(
            sc,
            level_of(sc, mean_dt(sc, rec)),
            format!(
                "path={} mass0={m0:.12e} nu_cum(T)={:.6e}",
                rec.path_id,
                last.map(|p| p.reflected_cum).unwrap_or(0.0)
            ),
        ),
    }
}

pub fn check_non_negativity(sc: &Scenario, paths: usize, threads: usize) -> Result<CheckResult, VerifyError> {
    let mut dts = Vec::with_capacity(paths);
    let stats = run_ensemble_with(sc, 0, paths, threads, |rec| dts.push(mean_dt(sc, rec)))?;
    let observed = -stats.worst_negativity;
    Ok(CheckResult {
        check_id: "non_negativity".into(),
        passed: observed <= NEGATIVITY_TOL,
        observed,
        tolerance: NEGATIVITY_TOL,
        tolerance_formula: format!("-min u/(1+|u|_inf) <= {NEGATIVITY_TOL:e}"),
        context: context(
            sc,
            level_of(sc, dts.iter().sum::<f64>() / dts.len().max(1) as f64),
            format!("paths={paths}"),
        ),
    })
}

/// Largest `u_{ε_small} - u_{ε_large}` (sign-adjusted for the obstacle side)
/// over cells and steps, for each requested mesh size.
pub fn check_comparison(
    config: &ScenarioConfig,
    eps_small: f64,
    eps_large: f64,
    ns: &[usize],
    path_id: u64,
) -> Result<CheckResult, VerifyError> {
    if !(eps_small <= eps_large) {
        return Err(VerifyError::BadInput(format!("need eps_small <= eps_large, got {eps_small} and {eps_large}")));
    }
    if ns.is_empty() {
        return Err(VerifyError::BadInput("comparison needs at least one mesh size".into()));
    }
    let mut levels = Vec::new();
    let mut first: Option<Scenario> = None;
    for &n in ns {
        let (base, dt) = frozen(&config.with_n(n).build()?);
        let sign = side_sign(base.obstacle.side);
        let pair = [base.with_epsilon(eps_small), base.with_epsilon(eps_large)];
        let mut viol = f64::NEG_INFINITY;
        lockstep(&pair, path_id, |rs| {
            let (a, b) = (rs[0].u(), rs[1].u());
            for (x, y) in a.iter().zip(b.iter()) {
                viol = viol.max(sign * (x - y));
            }
        })?;
        let tol = C_REF * (dt + base.mesh.h());
        levels.push((n, base.mesh.h(), dt, viol.max(0.0), tol));
        first.get_or_insert(base);
    }
    let sc = first.expect("at least one level");
    let within = levels.iter().all(|l| l.3 <= l.4);
    let halving = levels.windows(2).all(|w| w[1].3 <= 0.5 * w[0].3 || w[1].3 <= MONO_FLOOR);
    let last = levels[levels.len() - 1];
    Ok(CheckResult {
        check_id: "comparison".into(),
        passed: within && halving,
        observed: last.3,
        tolerance: last.4,
        tolerance_formula: format!(
            "max(u_eps1-u_eps2) <= {C_REF}*(dt+h) per level and halves per refinement (or <= {MONO_FLOOR:e})"
        ),
        context: context(
            &sc,
            levels.iter().map(|l| format!("n={} h={:.4e} dt={:.4e}", l.0, l.1, l.2)).collect::<Vec<_>>().join("; "),
            format!(
                "eps=({eps_small},{eps_large}) path={path_id} violations=[{}] halving={halving}",
                levels.iter().map(|l| format!("{:.3e}", l.3)).collect::<Vec<_>>().join(",")
            ),
        ),
    })
}

/// Second datum `u_init · (1 - d0/|u_init|_1)`, which keeps any upper
/// constraint and sits at L¹ distance `d0`.
pub fn scaled_partner(sc: &Scenario, d0: f64) -> Result<GridField, VerifyError> {
    let mass = integrate(&sc.mesh, sc.u_init.values(), Norm::L1);
    if !(d0 > 0.0 && d0 < mass) || sc.u_init.min() < 0.0 {
        return Err(VerifyError::BadInput(format!("cannot place a partner at distance {d0} from a datum of mass {mass}")));
    }
    let s = 1.0 - d0 / mass;
    Ok(GridField(sc.u_init.iter().map(|v| s * v).collect()))
}

/// `d(t) = |u_1(t) - u_2(t)|_1` at the recorded times of a coupled pair.
pub fn check_l1_contraction(sc: &Scenario, partner: &GridField, path_id: u64) -> Result<CheckResult, VerifyError> {
    if partner.len() != sc.mesh.n() {
        return Err(VerifyError::BadInput("partner datum has the wrong length".into()));
    }
    let (base, dt) = frozen(sc);
    let pair = [base.clone(), base.with_initial(partner.clone())];
    let mesh = base.mesh;
    let mut d = Vec::new();
    let recs = lockstep(&pair, path_id, |rs| {
        if rs[0].step_index() == 0 || rs[0].at_output() {
            let dist = mesh.h() * rs[0].u().iter().zip(rs[1].u().iter()).map(|(a, b)| (a - b).abs()).sum::<f64>();
            d.push((rs[0].t(), dist));
        }
    })?;
    let tol = C_REF * (dt + mesh.h());
    let d0 = d[0].1;
    let over = d.iter().map(|p| p.1 - d0).fold(f64::NEG_INFINITY, f64::max);
    let rise = d.windows(2).map(|w| w[1].1 - w[0].1).fold(f64::NEG_INFINITY, f64::max);
    let observed = over.max(rise);
    let binds = recs.iter().any(|r| r.measures.nu_total() > 0.0);
    let d_end = d[d.len() - 1].1;
    let strict = !binds || d0 == 0.0 || d_end < d0;
    Ok(CheckResult {
        check_id: "l1_contraction".into(),
        passed: observed <= tol && strict,
        observed,
        tolerance: tol,
        tolerance_formula: format!("max(d(t)-d(0), d(t_next)-d(t)) <= {C_REF}*(dt+h); d(T) < d(0) when contact occurs"),
        context: context(
            &base,
            level_of(&base, dt),
            format!(
                "path={path_id} d0={d0:.6e} dT={d_end:.6e} dmin={:.6e} contact={binds}",
                d.iter().map(|p| p.1).fold(f64::INFINITY, f64::min)
            ),
        ),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRow {
    pub epsilon: f64,
    /// `|(u_ε - ψ)^±|_{L¹(Q_T)}`.
    pub penalty_l1: f64,
    pub lambda_total: f64,
    pub nu_total: f64,
    /// Against the previous (larger) ε; zero for the first row.
    pub monotone_violation: f64,
    /// `⟨ρ a, ν_ε⟩` over [`EpsilonStudyReport::pairing_ids`].
    pub pairings: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonStudyReport {
    pub rows: Vec<EpsilonRow>,
    pub pairing_ids: Vec<String>,
    /// Least-squares slope of `log penalty_l1` against `log ε`; `None` when
    /// the penalty never activates.
    pub slope: Option<f64>,
    pub tol_mono: f64,
    /// `max_f |P_{l+1,f} - P_{l,f}|` for consecutive ε.
    pub cauchy_steps: Vec<f64>,
    /// `λ_total / (1 + |u_init|_2²)` per ε.
    pub lambda_constants: Vec<f64>,
    pub n: usize,
    pub h: f64,
    pub dt: f64,
    pub path_id: u64,
    pub config_hash: String,
    pub master_seed: u64,
}

fn fit_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Validates an ε list: at least four values, strictly decreasing, geometric.
pub fn validate_eps_list(eps: &[f64]) -> Result<(), VerifyError> {
    if eps.len() < 4 {
        return Err(VerifyError::BadInput(format!("need at least 4 epsilon values, got {}", eps.len())));
    }
    if eps.iter().any(|e| !(*e > 0.0 && e.is_finite())) || eps.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(VerifyError::BadInput("epsilon list must be positive and strictly decreasing".into()));
    }
    let q = eps[1] / eps[0];
    if eps.windows(2).any(|w| ((w[1] / w[0]) / q - 1.0).abs() > 1e-9) {
        return Err(VerifyError::BadInput("epsilon list must be geometric".into()));
    }
    Ok(())
}

/// Runs the scenario at every ε on one shared noise path and time grid.
pub fn epsilon_study(sc: &Scenario, eps: &[f64], path_id: u64) -> Result<EpsilonStudyReport, VerifyError> {
    validate_eps_list(eps)?;
    let (base, dt) = frozen(sc);
    let scs: Vec<Scenario> = eps.iter().map(|e| base.with_epsilon(*e)).collect();
    let sign = side_sign(base.obstacle.side);
    let mut viol = vec![0.0_f64; eps.len()];
    let recs = lockstep(&scs, path_id, |rs| {
        for l in 1..rs.len() {
            let (a, b) = (rs[l].u(), rs[l - 1].u());
            for (x, y) in a.iter().zip(b.iter()) {
                viol[l] = viol[l].max(sign * (x - y));
            }
        }
    })?;
    let fns = KineticTestFn::library(base.output.kinetic_bump);
    let pairing_ids: Vec<String> = fns.iter().map(|f| format!("{:?}_{:?}", f.rho, f.time).to_lowercase()).collect();
    let e0 = integrate(&base.mesh, &base.u_init.iter().map(|v| v * v).collect::<Vec<_>>(), Norm::Signed);
    let rows: Vec<EpsilonRow> = recs
        .iter()
        .zip(eps)
        .zip(&viol)
        .map(|((rec, &epsilon), &v)| EpsilonRow {
            epsilon,
            penalty_l1: rec.penalty_qt,
            lambda_total: rec.measures.total(Component::Lambda),
            nu_total: rec.measures.nu_total(),
            monotone_violation: v,
            pairings: fns.iter().map(|f| nu_pairing(&rec.measures, &base, f)).collect(),
        })
        .collect();
    let slope = if rows.iter().all(|r| r.penalty_l1 > 0.0) {
        let xs: Vec<f64> = rows.iter().map(|r| r.epsilon.ln()).collect();
        let ys: Vec<f64> = rows.iter().map(|r| r.penalty_l1.ln()).collect();
        Some(fit_slope(&xs, &ys))
    } else {
        None
    };
    let cauchy_steps = rows
        .windows(2)
        .map(|w| w[1].pairings.iter().zip(&w[0].pairings).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .collect();
    Ok(EpsilonStudyReport {
        lambda_constants: rows.iter().map(|r| r.lambda_total / (1.0 + e0)).collect(),
        rows,
        pairing_ids,
        slope,
        tol_mono: C_REF * (dt + base.mesh.h()),
        cauchy_steps,
        n: base.mesh.n(),
        h: base.mesh.h(),
        dt,
        path_id,
        config_hash: base.config_hash.clone(),
        master_seed: base.master_seed,
    })
}

/// `Σ ρ(x_c) a(t_b) ν(t_b, c)` with `t_b` the t-bin midpoint.
fn nu_pairing(measure: &LevelMeasure, sc: &Scenario, f: &KineticTestFn) -> f64 {
    let tw = measure.t_bin_width();
    measure
        .nu_table()
        .iter()
        .enumerate()
        .map(|(tb, row)| {
            let a = f.time.eval((tb as f64 + 0.5) * tw, sc.horizon);
            a * row.iter().enumerate().map(|(c, m)| f.rho.value(sc.mesh.center(c)) * m).sum::<f64>()
        })
        .sum()
}

impl EpsilonStudyReport {
    fn ctx(&self, detail: String) -> CheckContext {
        CheckContext {
            config_hash: self.config_hash.clone(),
            master_seed: self.master_seed,
            level: format!("n={} h={:.4e} dt={:.4e}", self.n, self.h, self.dt),
            detail,
        }
    }

    fn eps_list(&self) -> String {
        self.rows.iter().map(|r| r.epsilon.to_string()).collect::<Vec<_>>().join(",")
    }

    /// Penalty rate, pointwise monotonicity, Cauchy pairings and the λ bound.
    pub fn checks(&self) -> Vec<CheckResult> {
        let slope = self.slope;
        let mono = self.rows.iter().map(|r| r.monotone_violation).fold(0.0, f64::max);
        let first_step = self.cauchy_steps.first().copied().unwrap_or(0.0);
        let last_step = self.cauchy_steps.last().copied().unwrap_or(0.0);
        let c_first = self.lambda_constants.first().copied().unwrap_or(0.0);
        let c_max = self.lambda_constants.iter().copied().fold(0.0, f64::max);
        let growth = if c_first > 0.0 { c_max / c_first } else if c_max > 0.0 { f64::INFINITY } else { 1.0 };
        vec![
            CheckResult {
                check_id: "penalty_rate".into(),
                passed: slope.map_or(true, |s| s >= EPS_SLOPE_MIN),
                observed: slope.unwrap_or(f64::NAN),
                tolerance: EPS_SLOPE_MIN,
                tolerance_formula: format!("slope of log|(u_eps-psi)+|_L1(Q_T) vs log eps >= {EPS_SLOPE_MIN}"),
                context: self.ctx(format!(
                    "eps=[{}] penalty=[{}]",
                    self.eps_list(),
                    self.rows.iter().map(|r| format!("{:.4e}", r.penalty_l1)).collect::<Vec<_>>().join(",")
                )),
            },
            CheckResult {
                check_id: "epsilon_monotone".into(),
                passed: mono <= self.tol_mono,
                observed: mono,
                tolerance: self.tol_mono,
                tolerance_formula: format!("max(u_eps_next-u_eps) <= {C_REF}*(dt+h)"),
                context: self.ctx(format!("eps=[{}]", self.eps_list())),
            },
            CheckResult {
                check_id: "nu_pairings_cauchy".into(),
                passed: last_step <= first_step.max(MONO_FLOOR),
                observed: last_step,
                tolerance: first_step.max(MONO_FLOOR),
                tolerance_formula: "last consecutive pairing gap <= first gap".into(),
                context: self.ctx(format!(
                    "gaps=[{}]",
                    self.cauchy_steps.iter().map(|g| format!("{g:.4e}")).collect::<Vec<_>>().join(",")
                )),
            },
            CheckResult {
                check_id: "lambda_bound".into(),
                passed: growth <= LAMBDA_GROWTH,
                observed: growth,
                tolerance: LAMBDA_GROWTH,
                tolerance_formula: format!("max_eps C(eps) / C(eps_0) <= {LAMBDA_GROWTH}, C = lambda/(1+|u_init|_2^2)"),
                context: self.ctx(format!("C_fit={c_max:.4e}")),
            },
        ]
    }
}

/// Constant obstacle `c` with constant datum `a`: the penalty norm has the
/// closed form `ε (a - c)(1 - e^{-T/ε})` on the unit torus.
pub fn check_penalty_ode(sc: &Scenario, rec: &TrajectoryRecord) -> Result<CheckResult, VerifyError> {
    let c = match sc.obstacle {
        ObstacleSpec { kind: ObstacleKind::Constant { level }, side: Side::Upper } => level,
        _ => return Err(VerifyError::BadInput("closed form needs a constant upper obstacle".into())),
    };
    let a = sc.u_init.max();
    if sc.u_init.min() != a || !sc.coefficients.is_noiseless() || sc.coefficients.has_transport() || a <= c {
        return Err(VerifyError::BadInput("closed form needs a constant datum above the obstacle and no noise".into()));
    }
    let eps = sc.epsilon;
    let exact = eps * (a - c) * (1.0 - (-sc.horizon / eps).exp());
    let rel = (rec.penalty_qt - exact).abs() / exact;
    Ok(CheckResult {
        check_id: "penalty_ode".into(),
        passed: rel <= ODE_REL_TOL,
        observed: rel,
        tolerance: ODE_REL_TOL,
        tolerance_formula: format!("|P - eps(a-c)(1-exp(-T/eps))| / exact <= {ODE_REL_TOL:e}"),
        context: context(
            sc,
            level_of(sc, mean_dt(sc, rec)),
            format!("a={a} c={c} eps={eps} exact={exact:.12e} observed={:.12e}", rec.penalty_qt),
        ),
    })
}

fn rel_gap(a: f64, b: f64) -> f64 {
    let s = a.abs().max(b.abs());
    if s == 0.0 {
        0.0
    } else {
        (a - b).abs() / s
    }
}

/// Test functions linear in `ξ` make the identity exact up to rounding.
pub fn check_defect_identity(sc: &Scenario, rec: &TrajectoryRecord) -> CheckResult {
    let linear = [DefectTestFn::Xi, DefectTestFn::CosXi, DefectTestFn::SinXi];
    let gaps: Vec<(DefectTestFn, f64)> = linear
        .iter()
        .map(|f| {
            let (l, r) = defect_identity(&rec.defect, &rec.measures, &sc.mesh, *f);
            (*f, rel_gap(l, r))
        })
        .collect();
    let worst = gaps.iter().map(|g| g.1).fold(0.0, f64::max);
    CheckResult {
        check_id: "defect_identity".into(),
        passed: worst <= DEFECT_REL_TOL,
        observed: worst,
        tolerance: DEFECT_REL_TOL,
        tolerance_formula: format!("|lhs-rhs|/max(|lhs|,|rhs|) <= {DEFECT_REL_TOL:e} for phi linear in xi"),
        context: context(
            sc,
            level_of(sc, mean_dt(sc, rec)),
            gaps.iter().map(|(f, g)| format!("{}={g:.3e}", f.id())).collect::<Vec<_>>().join(" "),
        ),
    }
}

/// `φ = ξ²` agreement between two runs that differ only in the ξ-bin count.
pub fn check_defect_refinement(
    coarse: (&Scenario, &TrajectoryRecord),
    fine: (&Scenario, &TrajectoryRecord),
) -> CheckResult {
    let gap = |(sc, rec): (&Scenario, &TrajectoryRecord)| {
        let (l, r) = defect_identity(&rec.defect, &rec.measures, &sc.mesh, DefectTestFn::XiSquared);
        rel_gap(l, r)
    };
    let (ec, ef) = (gap(coarse), gap(fine));
    let (bc, bf) = (coarse.0.levels.nbins(), fine.0.levels.nbins());
    let slope = if ef == 0.0 {
        f64::INFINITY
    } else {
        (ec / ef).ln() / (bf as f64 / bc as f64).ln()
    };
    CheckResult {
        check_id: "defect_refinement".into(),
        passed: slope >= DEFECT_SLOPE_MIN,
        observed: slope,
        tolerance: DEFECT_SLOPE_MIN,
        tolerance_formula: format!("log(gap_coarse/gap_fine)/log(bins_fine/bins_coarse) >= {DEFECT_SLOPE_MIN} for phi=xi^2"),
        context: context(
            coarse.0,
            format!("xi_bins={bc}->{bf}"),
            format!("gap_coarse={ec:.4e} gap_fine={ef:.4e}"),
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KineticLevel {
    pub n: usize,
    pub h: f64,
    pub dt: f64,
    pub report: ResidualReport,
}

/// Weak kinetic residuals of path `path_id` at each mesh size, with a
/// single level bump shared by all levels. Slopes are filled in against the
/// previous level, in powers of `h`.
pub fn kinetic_study(config: &ScenarioConfig, ns: &[usize], path_id: u64) -> Result<Vec<KineticLevel>, VerifyError> {
    if ns.is_empty() {
        return Err(VerifyError::BadInput("kinetic study needs at least one mesh size".into()));
    }
    let mut cfg = config.clone();
    cfg.output.record_full = true;
    let bump = cfg.with_n(ns[0]).build()?.output.kinetic_bump;
    cfg.output.bump_lo = Some(bump.lo);
    cfg.output.bump_hi = Some(bump.hi);
    let mut levels: Vec<KineticLevel> = Vec::new();
    for &n in ns {
        let sc = cfg.with_n(n).build()?;
        let rec = run_trajectory(&sc, path_id)?;
        let mut report = weak_kinetic_residual(rec.kinetic.as_ref())?;
        if let Some(prev) = levels.last() {
            let ratio = prev.h / sc.mesh.h();
            let (scale, prev_scale) = (term_scale(&report), term_scale(&prev.report));
            for (e, p) in report.entries.iter_mut().zip(&prev.report.entries) {
                let skip = at_rounding(e, scale) || at_rounding(p, prev_scale);
                e.slope = (!skip).then(|| (p.residual.abs() / e.residual.abs()).ln() / ratio.ln());
            }
        }
        levels.push(KineticLevel { n, h: sc.mesh.h(), dt: mean_dt(&sc, &rec), report });
    }
    Ok(levels)
}

/// Residuals this small relative to the largest term at their level carry
/// no refinement information.
pub const KINETIC_ROUNDING: f64 = 1e-12;

/// Largest term over all test functions of one level.
fn term_scale(report: &ResidualReport) -> f64 {
    report.entries.iter().flat_map(|e| e.terms.as_array()).fold(0.0_f64, |m, v| m.max(v.abs()))
}

fn at_rounding(e: &ResidualEntry, scale: f64) -> bool {
    e.residual.abs() <= KINETIC_ROUNDING * scale
}

fn kinetic_level_desc(levels: &[KineticLevel]) -> String {
    levels.iter().map(|l| format!("n={} h={:.4e} dt={:.4e}", l.n, l.h, l.dt)).collect::<Vec<_>>().join("; ")
}

fn kinetic_residual_desc(levels: &[KineticLevel]) -> String {
    levels
        .iter()
        .map(|l| {
            let r: Vec<String> = l.report.entries.iter().map(|e| format!("{}={:.3e}", e.phi_id, e.residual)).collect();
            format!("n={}: {}", l.n, r.join(","))
        })
        .collect::<Vec<_>>()
        .join("; ")
}

/// Smallest refinement slope over test functions at the finest level;
/// functions whose residual sits at rounding level are skipped.
pub fn check_kinetic_slope(sc: &Scenario, levels: &[KineticLevel]) -> CheckResult {
    let slopes: Vec<f64> = match levels {
        [.., _, last] => last.report.entries.iter().filter_map(|e| e.slope).collect(),
        _ => Vec::new(),
    };
    let all_rounding = levels.len() >= 2 && slopes.is_empty();
    let observed = slopes.iter().copied().fold(f64::NAN, f64::min);
    let skipped = levels.last().map_or(0, |l| l.report.entries.iter().filter(|e| e.slope.is_none()).count());
    CheckResult {
        check_id: "kinetic_residual_slope".into(),
        passed: all_rounding || (!slopes.is_empty() && observed >= KINETIC_SLOPE_MIN),
        observed,
        tolerance: KINETIC_SLOPE_MIN,
        tolerance_formula: format!("min_phi log(|R_coarse|/|R_fine|)/log(h_coarse/h_fine) >= {KINETIC_SLOPE_MIN}"),
        context: context(
            sc,
            kinetic_level_desc(levels),
            format!("at_rounding={skipped}; {}", kinetic_residual_desc(levels)),
        ),
    }
}

/// Fits `C = max_φ |R| / (dt + h²)` on the first level and requires every
/// later level to satisfy `|R| <= KINETIC_SAFETY · C (dt + h²)`.
pub fn check_kinetic_fitted(sc: &Scenario, levels: &[KineticLevel]) -> CheckResult {
    let scale = |l: &KineticLevel| l.dt + l.h * l.h;
    let worst = |l: &KineticLevel| l.report.entries.iter().map(|e| e.residual.abs()).fold(0.0, f64::max);
    let (c_fit, rest) = match levels.split_first() {
        Some((first, rest)) => (worst(first) / scale(first), rest),
        None => (f64::NAN, &[][..]),
    };
    let ratio = rest.iter().map(|l| worst(l) / (KINETIC_SAFETY * c_fit * scale(l))).fold(0.0, f64::max);
    let last = levels.last();
    CheckResult {
        check_id: "kinetic_residual_fitted".into(),
        passed: !rest.is_empty() && (ratio <= 1.0 || c_fit == 0.0),
        observed: last.map_or(f64::NAN, worst),
        tolerance: last.map_or(f64::NAN, |l| KINETIC_SAFETY * c_fit * scale(l)),
        tolerance_formula: format!("|R| <= {KINETIC_SAFETY}*C_fit*(dt+h^2), C_fit from the coarsest level"),
        context: context(sc, kinetic_level_desc(levels), format!("C_fit={c_fit:.4e}; {}", kinetic_residual_desc(levels))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyLevel {
    pub n: usize,
    pub h: f64,
    pub dt: f64,
    pub paths: u64,
    /// Per time factor: mean and standard error of the residual.
    pub residual: Vec<(f64, f64)>,
    /// Per time factor: mean of every term, in the order of `ENERGY_TERMS`.
    pub terms: Vec<[f64; 7]>,
}

pub fn energy_level(sc: &Scenario, paths: usize, threads: usize) -> Result<EnergyLevel, VerifyError> {
    let mut dt_sum = 0.0;
    let stats = run_ensemble_with(sc, 0, paths, threads, |rec| dt_sum += mean_dt(sc, rec))?;
    Ok(EnergyLevel {
        n: sc.mesh.n(),
        h: sc.mesh.h(),
        dt: dt_sum / paths.max(1) as f64,
        paths: stats.paths,
        residual: stats.energy.iter().map(|t| (t[6].mean(), t[6].se())).collect(),
        terms: stats.energy.iter().map(|t| std::array::from_fn(|k| t[k].mean())).collect(),
    })
}

/// `|mean residual| <= 3 SE + C_fit (dt + h²)` for every time factor, with
/// `C_fit = |mean residual| / (dt + h²)` taken from the pilot level.
pub fn check_energy_identity(sc: &Scenario, level: &EnergyLevel, pilot: &EnergyLevel) -> CheckResult {
    let noisy = !sc.coefficients.is_noiseless() && !sc.modes.is_empty();
    let mut worst = (f64::NEG_INFINITY, 0.0, 0.0);
    let mut suspicious = false;
    let mut notes = Vec::new();
    for (k, (&(mean, se), &(pm, _))) in level.residual.iter().zip(&pilot.residual).enumerate() {
        let c_fit = pm.abs() / (pilot.dt + pilot.h * pilot.h);
        let tol = ENERGY_SE_FACTOR * se + c_fit * (level.dt + level.h * level.h);
        if noisy && se == 0.0 {
            suspicious = true;
        }
        let score = if tol > 0.0 { mean.abs() / tol } else if mean == 0.0 { 0.0 } else { f64::INFINITY };
        if score > worst.0 {
            worst = (score, mean.abs(), tol);
        }
        notes.push(format!("factor{k}: mean={mean:.4e} se={se:.4e} C_fit={c_fit:.4e}"));
    }
    if suspicious {
        notes.push("zero standard error with active noise".into());
    }
    CheckResult {
        check_id: "energy_identity".into(),
        passed: worst.0 <= 1.0 && !suspicious,
        observed: worst.1,
        tolerance: worst.2,
        tolerance_formula: format!(
            "|mean residual| <= {ENERGY_SE_FACTOR}*SE + C_fit*(dt+h^2), C_fit = |pilot mean|/(dt_p+h_p^2), M={}",
            level.paths
        ),
        context: context(
            sc,
            format!(
                "n={} h={:.4e} dt={:.4e}; pilot n={} h={:.4e} dt={:.4e}",
                level.n, level.h, level.dt, pilot.n, pilot.h, pilot.dt
            ),
            notes.join("; "),
        ),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub betas: Vec<f64>,
    /// `β⁻¹ q([β/2, β] × [0, T])`.
    pub beta_series: Vec<f64>,
    pub running_min: Vec<f64>,
    pub ns: Vec<u32>,
    /// `q([N, N+1] × [0, T])`.
    pub n_series: Vec<f64>,
    /// First `N` whose window must be empty; `None` without an a-priori bound.
    pub n_zero_from: Option<u32>,
    pub overflow: bool,
    /// `ν` mass in the first time bin (reported, not asserted).
    pub nu_first_bin: f64,
}

pub fn tail_report(
    measure: &LevelMeasure,
    obstacle: &ObstacleSpec,
    horizon: f64,
    betas: &[f64],
    ns: &[u32],
) -> Result<TailReport, VerifyError> {
    let t = (0.0, horizon.max(0.0));
    let q = |lo: f64, hi: f64| -> Result<f64, KineticsError> {
        Ok(measure.window_mass(Component::M, Some((lo, hi)), t)?
            + measure.window_mass(Component::Lambda, Some((lo, hi)), t)?)
    };
    let mut beta_series = Vec::with_capacity(betas.len());
    for &b in betas {
        beta_series.push(q(0.5 * b, b)? / b);
    }
    let mut running_min = Vec::with_capacity(betas.len());
    let mut m = f64::INFINITY;
    for v in &beta_series {
        m = m.min(*v);
        running_min.push(m);
    }
    let mut n_series = Vec::with_capacity(ns.len());
    for &n in ns {
        n_series.push(q(n as f64, n as f64 + 1.0)?);
    }
    let n_zero_from = match obstacle.side {
        Side::Upper => Some(obstacle.bound(horizon).ceil() as u32 + 1),
        Side::Lower => None,
    };
    let nu_first_bin = if measure.t_bins() > 0 { measure.window_mass(Component::Nu, None, (0.0, measure.t_bin_width()))? } else { 0.0 };
    Ok(TailReport {
        betas: betas.to_vec(),
        beta_series,
        running_min,
        ns: ns.to_vec(),
        n_series,
        n_zero_from,
        overflow: measure.overflowed(),
        nu_first_bin,
    })
}

impl TailReport {
    /// The running minimum must drop by [`TAIL_DROP`] (an all-zero series
    /// passes), the N-windows past the bound must be exactly empty, and no
    /// mass may overflow an upper bound.
    pub fn check(&self, sc: &Scenario) -> CheckResult {
        let first = self.running_min.first().copied().unwrap_or(0.0);
        let last = self.running_min.last().copied().unwrap_or(0.0);
        let drop = if last == 0.0 { f64::INFINITY } else { first / last };
        let drops = drop >= TAIL_DROP;
        let n_ok = match self.n_zero_from {
            Some(n0) => self.ns.iter().zip(&self.n_series).all(|(n, v)| *n < n0 || *v == 0.0),
            None => true,
        };
        let overflow_fail = self.overflow && sc.obstacle.side == Side::Upper;
        CheckResult {
            check_id: "tails".into(),
            passed: drops && n_ok && !overflow_fail,
            observed: drop,
            tolerance: TAIL_DROP,
            tolerance_formula: format!(
                "running-min ratio >= {TAIL_DROP}; q([N,N+1]) == 0 for N >= ceil(M)+1; no overflow mass"
            ),
            context: context(
                sc,
                format!("xi_bins={} xi_max={:.4}", sc.levels.nbins(), sc.levels.xi_max()),
                format!(
                    "beta=[{}] running_min=[{}] N=[{}] q_N=[{}] n_zero_from={:?} overflow={} nu_first_bin={:.4e}",
                    join(&self.betas),
                    join(&self.running_min),
                    self.ns.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","),
                    join(&self.n_series),
                    self.n_zero_from,
                    self.overflow,
                    self.nu_first_bin
                ),
            ),
        }
    }
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.4e}")).collect::<Vec<_>>().join(",")
}

/// `(1/τ) ∫₀^τ |u - u_init|₁` at recorded times `τ`, taken in the given
/// (decreasing) order.
pub fn initial_trace_series(rec: &TrajectoryRecord, taus: &[f64]) -> Result<Vec<f64>, VerifyError> {
    if taus.is_empty() || taus.windows(2).any(|w| !(w[1] < w[0])) || taus.iter().any(|t| *t <= 0.0) {
        return Err(VerifyError::BadInput("tau list must be positive and strictly decreasing".into()));
    }
    taus.iter()
        .map(|&tau| {
            let p = rec
                .series
                .iter()
                .find(|p| (p.t - tau).abs() <= 1e-12 * tau.max(1.0))
                .ok_or_else(|| VerifyError::BadInput(format!("tau = {tau} is not a recorded time")))?;
            Ok(p.init_dev_cum / tau)
        })
        .collect()
}

pub fn initial_trace(sc: &Scenario, rec: &TrajectoryRecord, taus: &[f64]) -> Result<CheckResult, VerifyError> {
    let series = initial_trace_series(rec, taus)?;
    let decreasing = series.windows(2).all(|w| w[1] < w[0] || (w[1] == 0.0 && w[0] == 0.0));
    let worst_rise = series.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
    let tau_min = taus[taus.len() - 1];
    let c_fit = series[series.len() - 1] / tau_min.sqrt();
    Ok(CheckResult {
        check_id: "initial_trace".into(),
        passed: decreasing,
        observed: if series.len() > 1 { worst_rise } else { 0.0 },
        tolerance: 0.0,
        tolerance_formula: "series strictly decreasing as tau decreases (differences < 0)".into(),
        context: context(
            sc,
            level_of(sc, mean_dt(sc, rec)),
            format!("tau=[{}] series=[{}] C_fit(sqrt tau)={c_fit:.4e}", join(taus), join(&series)),
        ),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Fast,
    Full,
}

pub const TRACE_TAUS: [f64; 4] = [0.1, 0.05, 0.025, 0.0125];
pub const TAIL_BETAS: [f64; 4] = [0.2, 0.1, 0.05, 0.025];

/// Recorded times closest to `TRACE_TAUS`, scaled to the horizon.
fn trace_taus(sc: &Scenario) -> Vec<f64> {
    let times = sc.output_times();
    let mut out: Vec<f64> = Vec::new();
    for tau in TRACE_TAUS.map(|t| t * sc.horizon) {
        if let Some(t) = times.iter().skip(1).copied().min_by(|a, b| (a - tau).abs().total_cmp(&(b - tau).abs())) {
            if out.last().map_or(true, |l| t < *l) {
                out.push(t);
            }
        }
    }
    out
}

fn tail_ns(sc: &Scenario) -> Vec<u32> {
    let top = sc.obstacle.bound(sc.horizon).ceil() as u32 + 2;
    (1..=top).collect()
}

/// Runs a suite on one configuration. `fast` uses single-path checks and a
/// few paths for positivity; `full` adds the coupled, refinement and
/// Monte-Carlo studies.
pub fn run_suite(config: &ScenarioConfig, suite: Suite, threads: usize) -> Result<Vec<CheckResult>, VerifyError> {
    let sc = config.build()?;
    let rec = run_trajectory(&sc, 0)?;
    let mut out = vec![check_mass_identity(&sc, &rec), check_defect_identity(&sc, &rec)];
    if sc.horizon > 0.0 {
        let taus = trace_taus(&sc);
        if !taus.is_empty() {
            out.push(initial_trace(&sc, &rec, &taus)?);
        }
    }
    out.push(tail_report(&rec.measures, &sc.obstacle, sc.horizon, &TAIL_BETAS, &tail_ns(&sc))?.check(&sc));
    if let Ok(c) = check_penalty_ode(&sc, &rec) {
        out.push(c);
    }
    let paths = match suite {
        Suite::Fast => 4,
        Suite::Full => 16,
    };
    out.push(check_non_negativity(&sc, paths, threads)?);
    if suite == Suite::Fast || sc.horizon <= 0.0 {
        return Ok(out);
    }

    let n = sc.mesh.n();
    let coarse_n = (n / 2).max(crate::grid::MIN_CELLS);
    let eps = sc.epsilon;
    out.push(check_comparison(config, 0.4 * eps, 2.0 * eps, &[coarse_n, n], 0)?);
    let mass = integrate(&sc.mesh, sc.u_init.values(), Norm::L1);
    if mass > 0.0 {
        let partner = scaled_partner(&sc, 0.1_f64.min(0.1 * mass))?;
        out.push(check_l1_contraction(&sc, &partner, 0)?);
    }
    let study = epsilon_study(&sc, &[2.0 * eps, eps, 0.5 * eps, 0.25 * eps], 0)?;
    out.extend(study.checks());

    let mut fine_bins = config.clone();
    fine_bins.mesh.xi_bins = config.mesh.xi_bins * 4;
    let sc_fine = fine_bins.build()?;
    let rec_fine = run_trajectory(&sc_fine, 0)?;
    out.push(check_defect_refinement((&sc, &rec), (&sc_fine, &rec_fine)));

    let kin_ns = [(n / 4).max(crate::grid::MIN_CELLS), coarse_n];
    let levels = kinetic_study(config, &kin_ns, 0)?;
    if sc.coefficients.is_noiseless() || sc.modes.is_empty() {
        out.push(check_kinetic_slope(&sc, &levels));
    } else {
        out.push(check_kinetic_fitted(&sc, &levels));
    }

    let pilot = energy_level(&config.with_n(coarse_n).build()?, 64, threads)?;
    let level = energy_level(&sc, 64, threads)?;
    out.push(check_energy_identity(&sc, &level, &pilot));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{InitialKind, ObstacleKindName};

    fn small(name: &str, n: usize, horizon: f64) -> ScenarioConfig {
        let mut c = ScenarioConfig::preset(name).unwrap();
        c.mesh.n = n;
        c.time.horizon = horizon;
        c
    }

    /// Heat equation with a constant obstacle far above the data.
    fn free_heat(n: usize, horizon: f64) -> ScenarioConfig {
        let mut c = small("heat-contact", n, horizon);
        c.obstacle.kind = ObstacleKindName::Constant;
        c.obstacle.level = 10.0;
        c.initial.kind = InitialKind::Trig;
        c.initial.base = 1.0;
        c.initial.amp = 0.5;
        c.initial.wavenumber = 1;
        c
    }

    #[test]
    fn equal_eps_gives_zero_violation() {
        let c = small("pm-contact", 16, 0.02);
        let r = check_comparison(&c, 0.05, 0.05, &[16], 3).unwrap();
        assert_eq!(r.observed, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn no_contact_keeps_mass_exactly() {
        let sc = free_heat(32, 0.05).build().unwrap();
        let rec = run_trajectory(&sc, 0).unwrap();
        assert_eq!(rec.measures.nu_total(), 0.0);
        assert!(rec.series.iter().all(|p| p.reflected_cum == 0.0));
        assert!(rec.mass_defect() < 1e-12);
        assert!(check_mass_identity(&sc, &rec).passed);
    }

    #[test]
    fn ode_reflected_mass_reaches_excess() {
        let mut c = ScenarioConfig::preset("ode-contact").unwrap();
        c.time.horizon = 20.0 * c.penalty.epsilon;
        let sc = c.build().unwrap();
        let rec = run_trajectory(&sc, 0).unwrap();
        let nu = rec.series.last().unwrap().reflected_cum;
        // a - c = 0.5; the geometric tail after 20 ε is below 1e-8.
        assert!((nu - 0.5).abs() < 1e-8, "{nu}");
    }

    #[test]
    fn ode_penalty_matches_closed_form() {
        let sc = ScenarioConfig::preset("ode-contact").unwrap().build().unwrap();
        let rec = run_trajectory(&sc, 0).unwrap();
        let r = check_penalty_ode(&sc, &rec).unwrap();
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn closed_form_rejects_noisy_scenarios() {
        let sc = small("pm-contact", 16, 0.01).build().unwrap();
        let rec = run_trajectory(&sc, 0).unwrap();
        assert!(check_penalty_ode(&sc, &rec).is_err());
    }

    #[test]
    fn identical_data_stay_identical() {
        let sc = small("pm-contact", 16, 0.02).build().unwrap();
        let r = check_l1_contraction(&sc, &sc.u_init.clone(), 1).unwrap();
        assert_eq!(r.observed, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn linear_heat_keeps_constant_difference() {
        let sc = free_heat(16, 0.05).build().unwrap();
        let partner = GridField(sc.u_init.iter().map(|v| v + 0.1).collect());
        let r = check_l1_contraction(&sc, &partner, 0).unwrap();
        assert!(r.observed.abs() < 1e-12, "{r:?}");
        assert!(r.passed);
    }

    #[test]
    fn contact_shrinks_the_distance() {
        let sc = small("heat-contact", 32, 0.1).build().unwrap();
        let partner = scaled_partner(&sc, 0.1).unwrap();
        let r = check_l1_contraction(&sc, &partner, 0).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.context.detail.contains("contact=true"));
    }

    #[test]
    fn eps_list_must_be_geometric_and_decreasing() {
        assert!(validate_eps_list(&[0.1, 0.05, 0.025, 0.0125]).is_ok());
        assert!(validate_eps_list(&[0.1, 0.05, 0.025]).is_err());
        assert!(validate_eps_list(&[0.1, 0.05, 0.02, 0.01]).is_err());
        assert!(validate_eps_list(&[0.0125, 0.025, 0.05, 0.1]).is_err());
    }

    #[test]
    fn inactive_penalty_gives_identical_runs() {
        let sc = free_heat(16, 0.05).build().unwrap();
        let study = epsilon_study(&sc, &[0.1, 0.05, 0.025, 0.0125], 0).unwrap();
        assert_eq!(study.slope, None);
        for row in &study.rows {
            assert_eq!(row.penalty_l1, 0.0);
            assert!(row.pairings.iter().all(|p| *p == 0.0));
            assert_eq!(row.monotone_violation, 0.0);
        }
        assert!(study.checks().iter().all(|c| c.passed));
    }

    #[test]
    fn ode_eps_study_has_unit_slope() {
        let mut c = ScenarioConfig::preset("ode-contact").unwrap();
        c.time.dt = Some(1e-5);
        let sc = c.build().unwrap();
        let study = epsilon_study(&sc, &[0.1, 0.05, 0.025, 0.0125], 0).unwrap();
        for row in &study.rows {
            let e = row.epsilon;
            let exact = e * 0.5 * (1.0 - (-1.0 / e).exp());
            assert!((row.penalty_l1 - exact).abs() < 1e-3 * exact);
        }
        assert!((study.slope.unwrap() - 1.0).abs() < 0.01);
    }

    #[test]
    fn stationary_datum_has_zero_trace_series() {
        let mut c = free_heat(16, 0.2);
        c.initial.kind = InitialKind::Constant;
        c.initial.value = 0.7;
        let sc = c.build().unwrap();
        let rec = run_trajectory(&sc, 0).unwrap();
        let taus = [0.1, 0.05, 0.025];
        assert!(initial_trace_series(&rec, &taus).unwrap().iter().all(|v| *v == 0.0));
        assert!(initial_trace(&sc, &rec, &taus).unwrap().passed);
    }

    #[test]
    fn heat_trace_is_linear_in_tau() {
        // Data decay at rate 4π², so τ must stay well below 1/40.
        let sc = free_heat(64, 0.02).build().unwrap();
        let rec = run_trajectory(&sc, 0).unwrap();
        let s = initial_trace_series(&rec, &[0.004, 0.002, 0.001]).unwrap();
        for w in s.windows(2) {
            let slope = (w[0] / w[1]).log2();
            assert!((slope - 1.0).abs() < 0.1, "{s:?}");
        }
    }

    #[test]
    fn windows_beyond_the_bound_are_empty() {
        let sc = small("heat-contact", 32, 0.1).build().unwrap();
        let rec = run_trajectory(&sc, 0).unwrap();
        let rep = tail_report(&rec.measures, &sc.obstacle, sc.horizon, &TAIL_BETAS, &[1, 2, 3, 4]).unwrap();
        assert_eq!(rep.n_zero_from, Some(3));
        assert_eq!(rep.n_series[2], 0.0);
        assert_eq!(rep.n_series[3], 0.0);
        // The state stays above 0.5, so small-β windows are empty.
        assert!(rep.beta_series[1..].iter().all(|v| *v == 0.0));
        assert!(rep.check(&sc).passed);
    }

    #[test]
    fn zero_datum_has_zero_energy_terms() {
        let mut c = small("pm-contact", 16, 0.02);
        c.initial.kind = InitialKind::Constant;
        c.initial.value = 0.0;
        let sc = c.build().unwrap();
        let rec = run_trajectory(&sc, 0).unwrap();
        for t in &rec.energy.terms {
            assert!(t.as_array().iter().all(|v| *v == 0.0), "{t:?}");
        }
    }

    #[test]
    fn free_heat_energy_residual_converges() {
        let res = |n: usize| {
            let sc = free_heat(n, 0.1).build().unwrap();
            let rec = run_trajectory(&sc, 0).unwrap();
            rec.energy.terms[0].residual().abs()
        };
        let (a, b) = (res(16), res(32));
        assert!((a / b).log2() >= 1.0, "{a} {b}");
    }

    #[test]
    fn linear_defect_identity_is_exact() {
        let sc = small("pm-contact", 32, 0.05).build().unwrap();
        let rec = run_trajectory(&sc, 0).unwrap();
        let r = check_defect_identity(&sc, &rec);
        assert!(r.passed, "{r:?}");
    }

    #[test]
    fn suite_results_are_reproducible() {
        let c = small("pm-contact", 16, 0.02);
        let a = run_suite(&c, Suite::Fast, 1).unwrap();
        let b = run_suite(&c, Suite::Fast, 2).unwrap();
        assert_eq!(a, b);
    }
}
