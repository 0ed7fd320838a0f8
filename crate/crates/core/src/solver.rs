//! Explicit Itô stepping of the penalized equation with the Stratonovich
//! correction as drift and an implicit, pointwise penalty projection.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{centered_gradient, divergence_into, integrate, GridField, LevelGrid, Mesh, Norm};
use crate::kinetics::{DefectLedger, KineticProbe, KineticTestFn, LevelBump, LevelMeasure, StepView, TimeFactor};
use crate::model::{eval_obstacle_into, CoefficientSet, ObstacleSpec, Side};
use crate::noise::{sample_increments_into, FFields, ModeSet, NoiseError, RngKey};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("non-finite value at cell {cell} in step {step} (t = {t})")]
    NonFinite { cell: usize, step: u64, t: f64, last_valid: Box<GridField> },
    #[error("time step policy produced dt = {dt} at t = {t}")]
    BadTimeStep { dt: f64, t: f64, last_valid: Box<GridField> },
    #[error("expected {expected} noise increments, got {got}")]
    IncrementLength { expected: usize, got: usize },
    #[error("ensemble needs at least {min} paths, got {got}")]
    TooFewPaths { min: usize, got: usize },
    #[error(transparent)]
    Noise(#[from] NoiseError),
}

impl SolverError {
    /// The last state known to be finite, when the error interrupted a run.
    pub fn last_valid(&self) -> Option<&GridField> {
        match self {
            SolverError::NonFinite { last_valid, .. } | SolverError::BadTimeStep { last_valid, .. } => Some(last_valid),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DtPolicy {
    Cfl { c_cfl: f64 },
    Fixed { dt: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputPlan {
    pub output_dt: f64,
    pub snapshots: usize,
    pub t_bins: usize,
    /// Enables the weak kinetic residual probe.
    pub record_full: bool,
    pub kinetic_bump: LevelBump,
}

/// A validated, fully assembled scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub mesh: Mesh,
    pub coefficients: CoefficientSet,
    pub modes: ModeSet,
    pub ffields: FFields,
    pub obstacle: ObstacleSpec,
    pub u_init: GridField,
    pub levels: LevelGrid,
    pub horizon: f64,
    pub dt_policy: DtPolicy,
    pub epsilon: f64,
    pub alpha: f64,
    pub output: OutputPlan,
    pub master_seed: u64,
    pub config_hash: String,
}

impl Scenario {
    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        Self { epsilon, ..self.clone() }
    }

    pub fn with_initial(&self, u_init: GridField) -> Self {
        Self { u_init, ..self.clone() }
    }

    pub fn with_dt_policy(&self, dt_policy: DtPolicy) -> Self {
        Self { dt_policy, ..self.clone() }
    }

    /// CFL bound evaluated over every level in `[δ, ξ_max]` instead of the
    /// current state, so that runs sharing it also share their time grid.
    pub fn frozen_dt(&self) -> f64 {
        let c = match self.dt_policy {
            DtPolicy::Cfl { c_cfl } => c_cfl,
            DtPolicy::Fixed { dt } => return dt,
        };
        let cs = &self.coefficients;
        let f1 = self.ffields.f1.max().max(0.0);
        let (lo, hi) = (cs.delta(), self.levels.xi_max());
        let mut worst: f64 = 0.0;
        for j in 0..=2000 {
            let xi = lo + (hi - lo) * j as f64 / 2000.0;
            let sp = cs.sigma_n_prime(xi);
            worst = worst.max(cs.phi_prime(xi) + self.alpha + 0.5 * f1 * sp * sp);
        }
        c * self.mesh.h().powi(2) / worst
    }

    pub fn output_times(&self) -> Vec<f64> {
        if self.horizon <= 0.0 {
            return vec![0.0];
        }
        let k = (self.horizon / self.output.output_dt).round().max(1.0) as usize;
        (0..=k).map(|j| self.horizon * j as f64 / k as f64).collect()
    }

    pub fn noise_key(&self, path_id: u64) -> RngKey {
        RngKey::new(self.master_seed, path_id)
    }
}

/// `Φ(u)` at cells.
fn phi_into(cs: &CoefficientSet, u: &[f64], out: &mut [f64]) {
    for (o, v) in out.iter_mut().zip(u) {
        *o = cs.phi(*v);
    }
}

/// Deterministic right-hand side in divergence form, without the penalty.
pub fn assemble_drift_into(
    mesh: &Mesh,
    u: &[f64],
    cs: &CoefficientSet,
    ff: &FFields,
    alpha: f64,
    phi_buf: &mut [f64],
    flux: &mut [f64],
    out: &mut [f64],
) {
    let n = mesh.n();
    let inv_h = 1.0 / mesh.h();
    phi_into(cs, u, phi_buf);
    let transport = cs.has_transport();
    let noisy = !cs.is_noiseless() && ff.f1_faces.max_abs() > 0.0;
    for i in 0..n {
        let l = if i == 0 { n - 1 } else { i - 1 };
        let gu = (u[i] - u[l]) * inv_h;
        let mut f = (phi_buf[i] - phi_buf[l]) * inv_h + alpha * gu;
        if noisy || transport {
            let uf = 0.5 * (u[i] + u[l]);
            if noisy {
                let (s, sp) = cs.sigma_n_pair(uf);
                f += 0.5 * (ff.f1_faces[i] * sp * sp * gu + s * sp * ff.f2[i]);
            }
            if transport {
                f -= cs.g(uf);
            }
        }
        flux[i] = f;
    }
    divergence_into(mesh, flux, out);
}

pub fn assemble_drift(mesh: &Mesh, u: &GridField, cs: &CoefficientSet, ff: &FFields, alpha: f64) -> GridField {
    let n = mesh.n();
    let (mut p, mut f, mut out) = (vec![0.0; n], vec![0.0; n], GridField::zeros(n));
    assemble_drift_into(mesh, u.values(), cs, ff, alpha, &mut p, &mut f, out.values_mut());
    out
}

/// `-∇·(σ_n(u_face) Σ_k f_k ΔB^k)`.
pub fn noise_divergence_into(
    mesh: &Mesh,
    u: &[f64],
    cs: &CoefficientSet,
    modes: &ModeSet,
    increments: &[f64],
    flux: &mut [f64],
    out: &mut [f64],
) -> Result<(), SolverError> {
    if increments.len() != modes.len() {
        return Err(SolverError::IncrementLength { expected: modes.len(), got: increments.len() });
    }
    let n = mesh.n();
    flux.iter_mut().for_each(|f| *f = 0.0);
    for (k, db) in increments.iter().enumerate() {
        let fv = modes.face_values(k);
        for i in 0..n {
            flux[i] += fv[i] * db;
        }
    }
    for i in 0..n {
        let l = if i == 0 { n - 1 } else { i - 1 };
        flux[i] *= -cs.sigma_n(0.5 * (u[i] + u[l]));
    }
    divergence_into(mesh, flux, out);
    Ok(())
}

pub fn noise_divergence(
    mesh: &Mesh,
    u: &GridField,
    cs: &CoefficientSet,
    modes: &ModeSet,
    increments: &[f64],
) -> Result<GridField, SolverError> {
    let n = mesh.n();
    let (mut f, mut out) = (vec![0.0; n], GridField::zeros(n));
    noise_divergence_into(mesh, u.values(), cs, modes, increments, &mut f, out.values_mut())?;
    Ok(out)
}

/// Solves `v ± (dt/ε)(v - ψ)^± = u*` cellwise; `r = u* - v`.
pub fn penalty_project_into(u_star: &[f64], psi: &[f64], dt: f64, epsilon: f64, side: Side, v: &mut [f64], r: &mut [f64]) {
    let k = dt / epsilon;
    let inv = 1.0 / (1.0 + k);
    for i in 0..u_star.len() {
        let (us, p) = (u_star[i], psi[i]);
        let active = match side {
            Side::Upper => us > p,
            Side::Lower => us < p,
        };
        if active {
            let vi = if k.is_infinite() { p } else { (us + k * p) * inv };
            v[i] = vi;
            r[i] = us - vi;
        } else {
            v[i] = us;
            r[i] = 0.0;
        }
    }
}

pub fn penalty_project(u_star: &GridField, psi: &GridField, dt: f64, epsilon: f64, side: Side) -> (GridField, GridField) {
    let n = u_star.len();
    let (mut v, mut r) = (GridField::zeros(n), GridField::zeros(n));
    penalty_project_into(u_star.values(), psi.values(), dt, epsilon, side, v.values_mut(), r.values_mut());
    (v, r)
}

/// Signed constraint excess `(v - ψ)^+` (upper) or `-(ψ - v)^+` (lower).
#[inline]
fn excess(side: Side, v: f64, psi: f64) -> f64 {
    match side {
        Side::Upper => (v - psi).max(0.0),
        Side::Lower => -(psi - v).max(0.0),
    }
}

pub const ENERGY_TERMS: [&str; 7] = ["time", "penalty_psi", "penalty_sq", "dissipation", "initial", "noise", "residual"];

/// Terms of the energy balance tested against `a(t)`:
/// `time + penalty_psi + penalty_sq + dissipation - initial - noise`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyTerms {
    /// `-Σ (a_{n+1} - a_n) ‖u_{n+1}‖²`.
    pub time: f64,
    /// `(2/ε) Σ a_n dt ∫ ψ (u - ψ)^±`.
    pub penalty_psi: f64,
    /// `(2/ε) Σ a_n dt ∫ |(u - ψ)^±|²`.
    pub penalty_sq: f64,
    /// `2 Σ a_n m_n`.
    pub dissipation: f64,
    /// `a(0) ‖u_init‖²`.
    pub initial: f64,
    /// `-½ Σ a_n dt ∫ σ_n²(u)(∇·F2 - 2 F3)`.
    pub noise: f64,
}

impl EnergyTerms {
    pub fn residual(&self) -> f64 {
        self.time + self.penalty_psi + self.penalty_sq + self.dissipation - self.initial - self.noise
    }

    pub fn as_array(&self) -> [f64; 7] {
        [self.time, self.penalty_psi, self.penalty_sq, self.dissipation, self.initial, self.noise, self.residual()]
    }
}

pub const ENERGY_FACTORS: [TimeFactor; 2] = [TimeFactor::Linear, TimeFactor::Quadratic];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyProbe {
    horizon: f64,
    pub terms: [EnergyTerms; 2],
    /// `div F2 - 2 F3` at cells.
    weight: Vec<f64>,
}

impl EnergyProbe {
    fn new(sc: &Scenario) -> Self {
        let e0 = sq_norm(&sc.mesh, sc.u_init.values());
        let mut terms = [EnergyTerms::default(); 2];
        for (t, f) in terms.iter_mut().zip(ENERGY_FACTORS) {
            t.initial = f.eval(0.0, sc.horizon) * e0;
        }
        let weight = (0..sc.mesh.n()).map(|i| sc.ffields.div_f2[i] - 2.0 * sc.ffields.f3[i]).collect();
        Self { horizon: sc.horizon, terms, weight }
    }

    fn record(&mut self, view: &StepView<'_>) {
        let h = view.mesh.h();
        let n = view.mesh.n();
        let e_next = sq_norm(view.mesh, view.v);
        let (mut pp, mut ps, mut diss, mut noise) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..n {
            let x = excess(view.side, view.v[i], view.psi[i]);
            if x != 0.0 {
                pp += view.psi[i] * x;
                ps += (view.v[i] - view.psi[i]) * x;
            }
            diss += view.dissipation(i);
            if self.weight[i] != 0.0 {
                let s = view.coefficients.sigma_n(view.u[i]);
                noise += s * s * self.weight[i];
            }
        }
        let dt = view.dt;
        for (t, f) in self.terms.iter_mut().zip(ENERGY_FACTORS) {
            let a_n = f.eval(view.t, self.horizon);
            let a_next = f.eval(view.t + dt, self.horizon);
            t.time -= (a_next - a_n) * e_next;
            let w = a_n * dt * h;
            t.penalty_psi += 2.0 / view.epsilon * w * pp;
            t.penalty_sq += 2.0 / view.epsilon * w * ps;
            t.dissipation += 2.0 * w * diss;
            t.noise -= 0.5 * w * noise;
        }
    }
}

fn sq_norm(mesh: &Mesh, u: &[f64]) -> f64 {
    mesh.h() * u.iter().map(|v| v * v).sum::<f64>()
}

/// Per-step reductions over the new state.
struct StateScan {
    min: f64,
    max: f64,
    pen: f64,
    dev: f64,
    r: f64,
}

impl Default for StateScan {
    fn default() -> Self {
        Self { min: f64::INFINITY, max: f64::NEG_INFINITY, pen: 0.0, dev: 0.0, r: 0.0 }
    }
}

pub const SERIES_COLUMNS: [&str; 7] =
    ["t", "mass_l1", "energy_l2sq", "min_u", "penalty_l1", "reflected_cum", "init_dev_cum"];

/// Diagnostics at one recorded time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub t: f64,
    pub mass_l1: f64,
    pub energy_l2sq: f64,
    pub min_u: f64,
    /// `‖(u - ψ)^±‖₁`.
    pub penalty_l1: f64,
    /// Signed `∫₀ᵗ ν`: removed mass is positive.
    pub reflected_cum: f64,
    /// `∫₀ᵗ ‖u(s) - u_init‖₁ ds`.
    pub init_dev_cum: f64,
}

impl SeriesPoint {
    pub fn as_array(&self) -> [f64; 7] {
        [self.t, self.mass_l1, self.energy_l2sq, self.min_u, self.penalty_l1, self.reflected_cum, self.init_dev_cum]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub u: GridField,
    pub psi: GridField,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub path_id: u64,
    pub series: Vec<SeriesPoint>,
    pub snapshots: Vec<Snapshot>,
    pub measures: LevelMeasure,
    pub defect: DefectLedger,
    pub energy: EnergyProbe,
    pub kinetic: Option<KineticProbe>,
    pub steps: u64,
    pub final_u: GridField,
    /// `‖(u - ψ)^±‖_{L¹(Q_T)}` with the implicit (end-of-step) quadrature.
    pub penalty_qt: f64,
    /// Smallest value of `min u / (1 + ‖u‖∞)` over all steps.
    pub worst_negativity: f64,
    /// Largest cell value over all steps.
    pub max_u: f64,
    pub min_dt: f64,
    pub max_dt: f64,
}

impl TrajectoryRecord {
    pub fn initial_mass(&self) -> f64 {
        self.series[0].mass_l1
    }

    /// `max_t |∫u(t) + ∫₀ᵗν - ∫u_init|`.
    pub fn mass_defect(&self) -> f64 {
        let m0 = self.initial_mass();
        self.series.iter().map(|p| (p.mass_l1 + p.reflected_cum - m0).abs()).fold(0.0, f64::max)
    }
}

struct Workspace {
    u_prev: Vec<f64>,
    phi: Vec<f64>,
    flux: Vec<f64>,
    drift: Vec<f64>,
    noise: Vec<f64>,
    u_star: Vec<f64>,
    r: Vec<f64>,
    grad: Vec<f64>,
    psi: Vec<f64>,
    increments: Vec<f64>,
}

impl Workspace {
    fn new(n: usize, k: usize) -> Self {
        let z = || vec![0.0; n];
        Self {
            u_prev: z(),
            phi: z(),
            flux: z(),
            drift: z(),
            noise: z(),
            u_star: z(),
            r: z(),
            grad: z(),
            psi: z(),
            increments: vec![0.0; k],
        }
    }
}

/// Steppable trajectory; [`run_trajectory`] drives it to the horizon, while
/// coupled experiments step several runners in lockstep.
pub struct Runner<'a> {
    sc: &'a Scenario,
    key: RngKey,
    t: f64,
    step: u64,
    u: GridField,
    ws: Workspace,
    out_times: Vec<f64>,
    next_out: usize,
    snapshot_stride: usize,
    reflected_cum: f64,
    init_dev_cum: f64,
    init_dev_now: f64,
    psi_static: bool,
    record: TrajectoryRecord,
}

impl<'a> Runner<'a> {
    pub fn new(sc: &'a Scenario, path_id: u64) -> Self {
        let n = sc.mesh.n();
        let mut ws = Workspace::new(n, sc.modes.len());
        eval_obstacle_into(&sc.obstacle, &sc.mesh, 0.0, &mut ws.psi);
        let out_times = sc.output_times();
        let snapshot_stride = if sc.output.snapshots <= 1 {
            usize::MAX
        } else {
            (out_times.len() - 1).div_ceil(sc.output.snapshots - 1).max(1)
        };
        let kinetic = sc.output.record_full.then(|| {
            KineticProbe::new(
                KineticTestFn::library(sc.output.kinetic_bump),
                &sc.mesh,
                &sc.coefficients,
                sc.horizon,
                sc.u_init.values(),
            )
        });
        let record = TrajectoryRecord {
            path_id,
            series: Vec::with_capacity(out_times.len()),
            snapshots: Vec::new(),
            measures: LevelMeasure::new(sc.levels, n, sc.output.t_bins, sc.horizon),
            defect: DefectLedger::default(),
            energy: EnergyProbe::new(sc),
            kinetic,
            steps: 0,
            final_u: sc.u_init.clone(),
            penalty_qt: 0.0,
            worst_negativity: f64::INFINITY,
            max_u: f64::NEG_INFINITY,
            min_dt: f64::INFINITY,
            max_dt: 0.0,
        };
        let mut runner = Self {
            sc,
            key: sc.noise_key(path_id),
            t: 0.0,
            step: 0,
            u: sc.u_init.clone(),
            ws,
            out_times,
            next_out: 0,
            snapshot_stride,
            reflected_cum: 0.0,
            init_dev_cum: 0.0,
            init_dev_now: 0.0,
            psi_static: !sc.obstacle.is_time_dependent(),
            record,
        };
        runner.track_extremes(runner.u.min(), runner.u.max());
        runner.emit_output();
        runner
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn u(&self) -> &GridField {
        &self.u
    }

    /// Obstacle at the current time.
    pub fn psi(&self) -> &[f64] {
        &self.ws.psi
    }

    pub fn done(&self) -> bool {
        self.next_out >= self.out_times.len()
    }

    /// True if the last step landed on a recorded time.
    pub fn at_output(&self) -> bool {
        self.next_out > 0 && self.out_times[self.next_out - 1] == self.t
    }

    /// Step size prescribed by the policy, capped at the next recorded time.
    pub fn next_dt(&self) -> f64 {
        let sc = self.sc;
        let raw = match sc.dt_policy {
            DtPolicy::Fixed { dt } => dt,
            DtPolicy::Cfl { c_cfl } => {
                let cs = &sc.coefficients;
                let mut worst: f64 = 0.0;
                for i in 0..sc.mesh.n() {
                    let u = self.u[i];
                    let sp = cs.sigma_n_prime(u);
                    worst = worst.max(cs.phi_prime(u) + sc.alpha + 0.5 * sc.ffields.f1[i] * sp * sp);
                }
                c_cfl * sc.mesh.h().powi(2) / worst
            }
        };
        match self.out_times.get(self.next_out) {
            Some(&target) => {
                let rem = target - self.t;
                if raw >= rem * (1.0 - 1e-9) {
                    rem
                } else {
                    raw
                }
            }
            None => raw,
        }
    }

    fn fail_dt(&self, dt: f64) -> SolverError {
        SolverError::BadTimeStep { dt, t: self.t, last_valid: Box::new(self.u.clone()) }
    }

    /// One step of size `dt`.
    pub fn step(&mut self, dt: f64) -> Result<(), SolverError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(self.fail_dt(dt));
        }
        let sc = self.sc;
        let mesh = &sc.mesh;
        let cs = &sc.coefficients;
        let n = mesh.n();
        let ws = &mut self.ws;
        ws.u_prev.copy_from_slice(self.u.values());
        let u = &ws.u_prev;
        for i in 0..n {
            ws.grad[i] = centered_gradient(mesh, u, i);
        }
        assemble_drift_into(mesh, u, cs, &sc.ffields, sc.alpha, &mut ws.phi, &mut ws.flux, &mut ws.drift);
        if ws.increments.is_empty() || cs.is_noiseless() {
            ws.noise.iter_mut().for_each(|v| *v = 0.0);
            if !ws.increments.is_empty() {
                sample_increments_into(self.key, self.step, dt, &mut ws.increments)?;
            }
        } else {
            sample_increments_into(self.key, self.step, dt, &mut ws.increments)?;
            noise_divergence_into(mesh, u, cs, &sc.modes, &ws.increments, &mut ws.flux, &mut ws.noise)?;
        }
        for i in 0..n {
            ws.u_star[i] = u[i] + dt * ws.drift[i] + ws.noise[i];
        }
        let t_next = match self.out_times.get(self.next_out) {
            Some(&target) if dt == target - self.t => target,
            _ => self.t + dt,
        };
        if !self.psi_static {
            eval_obstacle_into(&sc.obstacle, mesh, t_next, &mut ws.psi);
        }
        penalty_project_into(&ws.u_star, &ws.psi, dt, sc.epsilon, sc.obstacle.side, self.u.values_mut(), &mut ws.r);
        let mut scan = StateScan::default();
        for (i, (&v, &p)) in self.u.iter().zip(&ws.psi).enumerate() {
            if !v.is_finite() {
                return Err(SolverError::NonFinite {
                    cell: i,
                    step: self.step,
                    t: t_next,
                    last_valid: Box::new(GridField(ws.u_prev.clone())),
                });
            }
            scan.min = scan.min.min(v);
            scan.max = scan.max.max(v);
            scan.pen += excess(sc.obstacle.side, v, p).abs();
            scan.dev += (v - sc.u_init[i]).abs();
            scan.r += ws.r[i];
        }

        let h = mesh.h();
        let view = StepView {
            mesh,
            coefficients: cs,
            ffields: &sc.ffields,
            modes: &sc.modes,
            alpha: sc.alpha,
            epsilon: sc.epsilon,
            side: sc.obstacle.side,
            t: self.t,
            dt,
            u: &ws.u_prev,
            v: self.u.values(),
            r: &ws.r,
            psi: &ws.psi,
            grad: &ws.grad,
            noise: &ws.noise,
            increments: &ws.increments,
        };
        let rec = &mut self.record;
        rec.measures.deposit(&view);
        rec.defect.record(&view);
        rec.energy.record(&view);
        if let Some(k) = rec.kinetic.as_mut() {
            k.record(&view);
        }
        rec.penalty_qt += dt * h * scan.pen;
        rec.min_dt = rec.min_dt.min(dt);
        rec.max_dt = rec.max_dt.max(dt);
        rec.steps += 1;

        self.reflected_cum += h * scan.r;
        let dev = h * scan.dev;
        self.init_dev_cum += 0.5 * dt * (self.init_dev_now + dev);
        self.init_dev_now = dev;
        self.t = t_next;
        self.step += 1;
        self.track_extremes(scan.min, scan.max);
        if self.out_times.get(self.next_out) == Some(&self.t) {
            self.emit_output();
        }
        Ok(())
    }

    fn track_extremes(&mut self, min: f64, max: f64) {
        let sup = max.max(-min);
        self.record.worst_negativity = self.record.worst_negativity.min(min / (1.0 + sup));
        self.record.max_u = self.record.max_u.max(max);
    }

    fn emit_output(&mut self) {
        let sc = self.sc;
        let mesh = &sc.mesh;
        let u = self.u.values();
        let psi = &self.ws.psi;
        let penalty_l1 = mesh.h() * u.iter().zip(psi).map(|(v, p)| excess(sc.obstacle.side, *v, *p).abs()).sum::<f64>();
        self.record.series.push(SeriesPoint {
            t: self.t,
            mass_l1: integrate(mesh, u, Norm::L1),
            energy_l2sq: sq_norm(mesh, u),
            min_u: self.u.min(),
            penalty_l1,
            reflected_cum: self.reflected_cum,
            init_dev_cum: self.init_dev_cum,
        });
        let idx = self.next_out;
        let last = idx + 1 == self.out_times.len();
        if sc.output.snapshots > 0 && (idx % self.snapshot_stride == 0 || last) {
            self.record.snapshots.push(Snapshot { t: self.t, u: self.u.clone(), psi: GridField(psi.clone()) });
        }
        self.next_out += 1;
    }

    pub fn finish(mut self) -> TrajectoryRecord {
        self.record.final_u = self.u;
        if self.record.steps == 0 {
            self.record.min_dt = 0.0;
        }
        self.record
    }
}

pub fn run_trajectory(sc: &Scenario, path_id: u64) -> Result<TrajectoryRecord, SolverError> {
    let mut runner = Runner::new(sc, path_id);
    while !runner.done() {
        let dt = runner.next_dt();
        runner.step(dt)?;
    }
    Ok(runner.finish())
}

/// Mean and standard error of a scalar over paths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    count: u64,
    mean: f64,
    m2: f64,
}

impl MeanSe {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    /// Chan's parallel update.
    pub fn merge(&mut self, other: &MeanSe) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        (self.m2 / (self.count - 1) as f64 / self.count as f64).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub paths: u64,
    pub times: Vec<f64>,
    /// `[time][column]` over the columns of [`SERIES_COLUMNS`] after `t`.
    pub series: Vec<[MeanSe; 6]>,
    /// `[factor][term]` over [`ENERGY_TERMS`].
    pub energy: Vec<[MeanSe; 7]>,
    pub measures: LevelMeasure,
    pub worst_negativity: f64,
    pub max_mass_defect: f64,
}

impl EnsembleStats {
    fn empty(sc: &Scenario) -> Self {
        let times = sc.output_times();
        Self {
            paths: 0,
            series: vec![[MeanSe::default(); 6]; times.len()],
            times,
            energy: vec![[MeanSe::default(); 7]; ENERGY_FACTORS.len()],
            measures: LevelMeasure::new(sc.levels, sc.mesh.n(), sc.output.t_bins, sc.horizon),
            worst_negativity: f64::INFINITY,
            max_mass_defect: 0.0,
        }
    }

    fn absorb(&mut self, rec: &TrajectoryRecord) {
        self.paths += 1;
        for (acc, p) in self.series.iter_mut().zip(&rec.series) {
            let vals = p.as_array();
            for (a, v) in acc.iter_mut().zip(&vals[1..]) {
                a.push(*v);
            }
        }
        for (acc, t) in self.energy.iter_mut().zip(&rec.energy.terms) {
            for (a, v) in acc.iter_mut().zip(t.as_array()) {
                a.push(v);
            }
        }
        // Shapes agree by construction.
        let _ = self.measures.merge(&rec.measures);
        self.worst_negativity = self.worst_negativity.min(rec.worst_negativity);
        self.max_mass_defect = self.max_mass_defect.max(rec.mass_defect());
    }
}

/// Worker count from `SIM_THREADS`, defaulting to the available parallelism.
pub fn worker_count() -> usize {
    std::env::var("SIM_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|n| *n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

/// Runs `paths` trajectories with ids `first_id..first_id + paths` on
/// `threads` workers. Records are folded in path order, so the result does not
/// depend on the worker count. `visit` sees each record before it is dropped.
pub fn run_ensemble_with(
    sc: &Scenario,
    first_id: u64,
    paths: usize,
    threads: usize,
    mut visit: impl FnMut(&TrajectoryRecord),
) -> Result<EnsembleStats, SolverError> {
    let threads = threads.max(1);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
    let mut stats = EnsembleStats::empty(sc);
    let ids: Vec<u64> = (0..paths as u64).map(|k| first_id + k).collect();
    for chunk in ids.chunks(threads) {
        let records: Vec<Result<TrajectoryRecord, SolverError>> =
            pool.install(|| chunk.par_iter().map(|&id| run_trajectory(sc, id)).collect());
        for rec in records {
            let rec = rec?;
            visit(&rec);
            stats.absorb(&rec);
        }
    }
    Ok(stats)
}

pub fn run_ensemble(sc: &Scenario, paths: usize) -> Result<EnsembleStats, SolverError> {
    if paths < 2 {
        return Err(SolverError::TooFewPaths { min: 2, got: paths });
    }
    run_ensemble_with(sc, 0, paths, worker_count(), |_| {})
}
