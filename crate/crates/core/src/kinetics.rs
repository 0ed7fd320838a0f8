//! Kinetic function, the level measures `m`, `λ`, `ν`, and online probes for
//! the weak kinetic equation and the obstacle defect identity.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{LevelGrid, Mesh};
use crate::model::{CoefficientSet, Side};
use crate::noise::{FFields, ModeSet};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KineticsError {
    #[error("the reflection measure has no level axis; query it without a xi-interval")]
    NuHasNoLevel,
    #[error("empty or reversed window [{0}, {1}]")]
    BadWindow(f64, f64),
    #[error("accumulators have different shapes and cannot be merged")]
    ShapeMismatch,
    #[error("kinetic residual requires record_full; the trajectory carries no probe data")]
    MissingRecording,
}

/// `χ̄(r, ξ) = 1` iff `0 < ξ < r`.
#[inline]
pub fn kinetic_indicator(u: f64, xi: f64) -> u8 {
    u8::from(0.0 < xi && xi < u)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    M,
    Lambda,
    Nu,
    Q,
}

impl Component {
    pub fn name(self) -> &'static str {
        match self {
            Component::M => "m",
            Component::Lambda => "lambda",
            Component::Nu => "nu",
            Component::Q => "q",
        }
    }
}

/// Everything a probe may look at for one completed step `t -> t + dt`.
pub struct StepView<'a> {
    pub mesh: &'a Mesh,
    pub coefficients: &'a CoefficientSet,
    pub ffields: &'a FFields,
    pub modes: &'a ModeSet,
    pub alpha: f64,
    pub epsilon: f64,
    pub side: Side,
    pub t: f64,
    pub dt: f64,
    /// State at `t`.
    pub u: &'a [f64],
    /// State at `t + dt`.
    pub v: &'a [f64],
    /// Reflected mass density per cell, `u* - v`; negative on the lower side.
    pub r: &'a [f64],
    /// Obstacle at `t + dt`.
    pub psi: &'a [f64],
    /// Centered gradient of `u`.
    pub grad: &'a [f64],
    /// Realized noise contribution to `u* - u` per cell.
    pub noise: &'a [f64],
    pub increments: &'a [f64],
}

impl StepView<'_> {
    /// Level interval `(lo, hi)` between the obstacle and the state when the
    /// constraint is violated at cell `i`.
    #[inline]
    pub fn contact_interval(&self, i: usize) -> Option<(f64, f64)> {
        let (v, p) = (self.v[i], self.psi[i]);
        match self.side {
            Side::Upper if v > p => Some((p, v)),
            Side::Lower if v < p => Some((v, p)),
            _ => None,
        }
    }

    /// `m` density per unit time at cell `i`.
    #[inline]
    pub fn dissipation(&self, i: usize) -> f64 {
        (self.coefficients.phi_prime(self.u[i]) + self.alpha) * self.grad[i] * self.grad[i]
    }
}

/// Masses of `m` and `λ` over `(t-bin, ξ-bin, cell)` and of `ν` over
/// `(t-bin, cell)`. The last ξ-bin is the overflow bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelMeasure {
    levels: LevelGrid,
    cells: usize,
    t_bins: usize,
    horizon: f64,
    m: Vec<f64>,
    lambda: Vec<f64>,
    nu: Vec<f64>,
    nu_total: f64,
    /// `Σ dt h ε⁻¹ [(v - ψ)^±]²`, tallied independently of the ξ-spreading.
    lambda_construction: f64,
    overflow: bool,
}

impl LevelMeasure {
    pub fn new(levels: LevelGrid, cells: usize, t_bins: usize, horizon: f64) -> Self {
        let t_bins = t_bins.max(1);
        let size = t_bins * (levels.nbins() + 1) * cells;
        Self {
            levels,
            cells,
            t_bins,
            horizon,
            m: vec![0.0; size],
            lambda: vec![0.0; size],
            nu: vec![0.0; t_bins * cells],
            nu_total: 0.0,
            lambda_construction: 0.0,
            overflow: false,
        }
    }

    pub fn levels(&self) -> &LevelGrid {
        &self.levels
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn t_bins(&self) -> usize {
        self.t_bins
    }

    pub fn t_bin_width(&self) -> f64 {
        if self.horizon > 0.0 {
            self.horizon / self.t_bins as f64
        } else {
            1.0
        }
    }

    pub fn overflowed(&self) -> bool {
        self.overflow
    }

    /// Running total of reflected mass `Σ h |r|`.
    pub fn nu_total(&self) -> f64 {
        self.nu_total
    }

    pub fn lambda_construction_total(&self) -> f64 {
        self.lambda_construction
    }

    #[inline]
    fn idx(&self, tb: usize, xb: usize, cell: usize) -> usize {
        (tb * (self.levels.nbins() + 1) + xb) * self.cells + cell
    }

    fn t_bin_of(&self, t: f64) -> usize {
        if self.horizon <= 0.0 {
            return 0;
        }
        ((t / self.t_bin_width()) as usize).min(self.t_bins - 1)
    }

    /// Deposits the measures of one step.
    pub fn deposit(&mut self, view: &StepView<'_>) {
        let h = view.mesh.h();
        let dt = view.dt;
        let tb = self.t_bin_of(view.t + 0.5 * dt);
        let nb = self.levels.nbins();
        let w = self.levels.width();
        let inv_w = 1.0 / w;
        // The saturating cast sends negative levels to bin 0.
        let bin = |xi: f64| ((xi * inv_w) as usize).min(nb);
        let base = tb * (nb + 1) * self.cells;
        for i in 0..self.cells {
            let dm = view.dissipation(i) * h * dt;
            if dm > 0.0 {
                let xb = bin(view.u[i]);
                if xb == nb {
                    self.overflow = true;
                }
                self.m[base + xb * self.cells + i] += dm;
            }
            let r = view.r[i];
            if r != 0.0 {
                let k = tb * self.cells + i;
                self.nu[k] += h * r.abs();
                self.nu_total += h * r.abs();
            }
            if let Some((lo, hi)) = view.contact_interval(i) {
                let gap = hi - lo;
                let density = gap / view.epsilon;
                self.lambda_construction += density * gap * h * dt;
                let scale = density * h * dt;
                let first = bin(lo);
                let last = bin(hi);
                if first == last && first < nb {
                    self.lambda[base + first * self.cells + i] += scale * gap;
                    continue;
                }
                if last == nb {
                    self.overflow = true;
                }
                let col = &mut self.lambda[base + i..];
                let cells = self.cells;
                col[first * cells] += scale * ((first + 1) as f64 * w - lo.max(0.0)).min(hi - lo);
                for xb in first + 1..last {
                    col[xb * cells] += scale * w;
                }
                if last > first {
                    col[last * cells] += scale * (hi - last as f64 * w);
                }
            }
        }
    }

    /// Adds another accumulator of identical shape.
    pub fn merge(&mut self, other: &LevelMeasure) -> Result<(), KineticsError> {
        if self.levels != other.levels
            || self.cells != other.cells
            || self.t_bins != other.t_bins
            || self.horizon != other.horizon
        {
            return Err(KineticsError::ShapeMismatch);
        }
        for (a, b) in self.m.iter_mut().zip(&other.m) {
            *a += b;
        }
        for (a, b) in self.lambda.iter_mut().zip(&other.lambda) {
            *a += b;
        }
        for (a, b) in self.nu.iter_mut().zip(&other.nu) {
            *a += b;
        }
        self.nu_total += other.nu_total;
        self.lambda_construction += other.lambda_construction;
        self.overflow |= other.overflow;
        Ok(())
    }

    pub fn is_nonnegative(&self) -> bool {
        self.m.iter().chain(&self.lambda).chain(&self.nu).all(|v| *v >= 0.0)
    }

    pub fn total(&self, component: Component) -> f64 {
        match component {
            Component::M => self.m.iter().sum(),
            Component::Lambda => self.lambda.iter().sum(),
            Component::Nu => self.nu.iter().sum(),
            Component::Q => self.total(Component::M) + self.total(Component::Lambda),
        }
    }

    /// Mass of `component` at `(t-bin, ξ-bin, cell)`.
    pub fn mass(&self, component: Component, tb: usize, xb: usize, cell: usize) -> f64 {
        let k = self.idx(tb, xb, cell);
        match component {
            Component::M => self.m[k],
            Component::Lambda => self.lambda[k],
            Component::Q => self.m[k] + self.lambda[k],
            Component::Nu => self.nu[tb * self.cells + cell],
        }
    }

    /// Mass summed over cells and time at each ξ-bin, overflow last.
    pub fn level_profile(&self, component: Component) -> Vec<f64> {
        let nb = self.levels.nbins() + 1;
        let mut out = vec![0.0; nb];
        for tb in 0..self.t_bins {
            for (xb, o) in out.iter_mut().enumerate() {
                for c in 0..self.cells {
                    *o += self.mass(component, tb, xb, c);
                }
            }
        }
        out
    }

    /// Mass per `(t-bin, ξ-bin)` summed over cells.
    pub fn time_level_table(&self, component: Component) -> Vec<Vec<f64>> {
        let nb = self.levels.nbins() + 1;
        (0..self.t_bins)
            .map(|tb| (0..nb).map(|xb| (0..self.cells).map(|c| self.mass(component, tb, xb, c)).sum()).collect())
            .collect()
    }

    /// `ν` per `(t-bin, cell)`.
    pub fn nu_table(&self) -> Vec<Vec<f64>> {
        self.nu.chunks(self.cells).map(|c| c.to_vec()).collect()
    }

    /// Mass of the window `ξ ∈ [xi.0, xi.1] × t ∈ [t.0, t.1]`, with bins
    /// weighted by their overlap fraction. The overflow bin counts fully when
    /// the ξ-window reaches beyond `xi_max`.
    pub fn window_mass(
        &self,
        component: Component,
        xi: Option<(f64, f64)>,
        t: (f64, f64),
    ) -> Result<f64, KineticsError> {
        if t.1 < t.0 {
            return Err(KineticsError::BadWindow(t.0, t.1));
        }
        let tw = self.t_bin_width();
        let t_weight = |tb: usize| {
            if self.horizon <= 0.0 {
                return 1.0;
            }
            let (a, b) = (tb as f64 * tw, (tb + 1) as f64 * tw);
            ((t.1.min(b) - t.0.max(a)) / tw).clamp(0.0, 1.0)
        };
        if component == Component::Nu {
            if xi.is_some() {
                return Err(KineticsError::NuHasNoLevel);
            }
            return Ok((0..self.t_bins)
                .map(|tb| t_weight(tb) * self.nu[tb * self.cells..(tb + 1) * self.cells].iter().sum::<f64>())
                .sum());
        }
        let (lo, hi) = xi.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
        if hi < lo {
            return Err(KineticsError::BadWindow(lo, hi));
        }
        let nb = self.levels.nbins();
        let w = self.levels.width();
        let x_weight = |xb: usize| {
            if xb == nb {
                return if hi > self.levels.xi_max() { 1.0 } else { 0.0 };
            }
            let (a, b) = (xb as f64 * w, (xb + 1) as f64 * w);
            ((hi.min(b) - lo.max(a)) / w).clamp(0.0, 1.0)
        };
        let table = self.time_level_table(component);
        let mut total = 0.0;
        for (tb, row) in table.iter().enumerate() {
            let tw = t_weight(tb);
            if tw == 0.0 {
                continue;
            }
            for (xb, mass) in row.iter().enumerate() {
                let xw = x_weight(xb);
                if xw > 0.0 {
                    total += tw * xw * mass;
                }
            }
        }
        Ok(total)
    }
}

/// Test functions `φ(x, ξ)` for the defect identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DefectTestFn {
    /// `φ = ξ`.
    Xi,
    /// `φ = ξ²`.
    XiSquared,
    /// `φ = (1 + cos 2πx) ξ`.
    CosXi,
    /// `φ = (1 + sin 2πx) ξ`.
    SinXi,
}

impl DefectTestFn {
    pub const ALL: [DefectTestFn; 4] = [DefectTestFn::Xi, DefectTestFn::XiSquared, DefectTestFn::CosXi, DefectTestFn::SinXi];

    pub fn id(self) -> &'static str {
        match self {
            DefectTestFn::Xi => "xi",
            DefectTestFn::XiSquared => "xi2",
            DefectTestFn::CosXi => "cos_xi",
            DefectTestFn::SinXi => "sin_xi",
        }
    }

    fn rho(self, x: f64) -> f64 {
        match self {
            DefectTestFn::Xi | DefectTestFn::XiSquared => 1.0,
            DefectTestFn::CosXi => 1.0 + (2.0 * PI * x).cos(),
            DefectTestFn::SinXi => 1.0 + (2.0 * PI * x).sin(),
        }
    }

    pub fn value(self, x: f64, xi: f64) -> f64 {
        match self {
            DefectTestFn::XiSquared => xi * xi,
            _ => self.rho(x) * xi,
        }
    }

    pub fn d_xi(self, x: f64, xi: f64) -> f64 {
        match self {
            DefectTestFn::XiSquared => 2.0 * xi,
            _ => self.rho(x),
        }
    }
}

/// Left-hand sides `∫ (φ(x, u) - φ(x, ψ)) dν_ε` accumulated from the
/// contact events of a run, signed so that they pair with `λ`. The linear
/// test functions share a per-cell tally of `ν · (hi - lo)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DefectLedger {
    gap: Vec<f64>,
    sq: f64,
}

impl DefectLedger {
    pub fn record(&mut self, view: &StepView<'_>) {
        let h = view.mesh.h();
        let n = view.mesh.n();
        if self.gap.len() != n {
            self.gap.resize(n, 0.0);
        }
        for i in 0..n {
            if let Some((lo, hi)) = view.contact_interval(i) {
                let nu = h * view.r[i].abs();
                self.gap[i] += nu * (hi - lo);
                self.sq += nu * (hi * hi - lo * lo);
            }
        }
    }

    pub fn lhs(&self, mesh: &Mesh, f: DefectTestFn) -> f64 {
        match f {
            DefectTestFn::XiSquared => self.sq,
            _ => self.gap.iter().enumerate().map(|(i, g)| f.rho(mesh.center(i)) * g).sum(),
        }
    }

    pub fn merge(&mut self, other: &DefectLedger) {
        if self.gap.len() < other.gap.len() {
            self.gap.resize(other.gap.len(), 0.0);
        }
        for (a, b) in self.gap.iter_mut().zip(&other.gap) {
            *a += b;
        }
        self.sq += other.sq;
    }
}

/// `(lhs, rhs)` of `∫ (φ(u) - φ(ψ)) dν_ε = ∫ ∂_ξφ dλ_ε`; the right side uses
/// bin centers in ξ and cell centers in x.
pub fn defect_identity(ledger: &DefectLedger, measure: &LevelMeasure, mesh: &Mesh, f: DefectTestFn) -> (f64, f64) {
    let levels = measure.levels();
    let nb = levels.nbins();
    let mut rhs = 0.0;
    for tb in 0..measure.t_bins() {
        for xb in 0..=nb {
            let xi = if xb == nb { levels.xi_max() } else { levels.center(xb) };
            for c in 0..measure.cells() {
                let mass = measure.mass(Component::Lambda, tb, xb, c);
                if mass != 0.0 {
                    rhs += f.d_xi(mesh.center(c), xi) * mass;
                }
            }
        }
    }
    (ledger.lhs(mesh, f), rhs)
}

/// Spatial factor `ρ(x)` of a kinetic test function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpatialFactor {
    One,
    Cos,
    Sin,
}

impl SpatialFactor {
    pub fn value(self, x: f64) -> f64 {
        self.eval(x).0
    }

    /// `(ρ, ρ', ρ'')`.
    #[inline]
    fn eval(self, x: f64) -> (f64, f64, f64) {
        let w = 2.0 * PI;
        match self {
            SpatialFactor::One => (1.0, 0.0, 0.0),
            SpatialFactor::Cos => {
                let (s, c) = (w * x).sin_cos();
                (c, -w * s, -w * w * c)
            }
            SpatialFactor::Sin => {
                let (s, c) = (w * x).sin_cos();
                (s, w * c, -w * w * s)
            }
        }
    }
}

/// Temporal factor `a(t)` with `a(T) = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeFactor {
    Zero,
    Linear,
    Quadratic,
}

impl TimeFactor {
    #[inline]
    pub fn eval(self, t: f64, horizon: f64) -> f64 {
        let s = if horizon > 0.0 { (1.0 - t / horizon).max(0.0) } else { 0.0 };
        match self {
            TimeFactor::Zero => 0.0,
            TimeFactor::Linear => s,
            TimeFactor::Quadratic => s * s,
        }
    }
}

/// Smooth bump `η(ξ) = (1 - s²)³` on `(lo, hi)`, `s = (2ξ - lo - hi)/(hi - lo)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelBump {
    pub lo: f64,
    pub hi: f64,
}

impl LevelBump {
    #[inline]
    fn s(&self, xi: f64) -> f64 {
        (2.0 * xi - self.lo - self.hi) / (self.hi - self.lo)
    }

    #[inline]
    pub fn eta(&self, xi: f64) -> f64 {
        let s = self.s(xi);
        if s.abs() >= 1.0 {
            0.0
        } else {
            let w = 1.0 - s * s;
            w * w * w
        }
    }

    #[inline]
    pub fn eta_prime(&self, xi: f64) -> f64 {
        let s = self.s(xi);
        if s.abs() >= 1.0 {
            0.0
        } else {
            let w = 1.0 - s * s;
            -6.0 * s * w * w * 2.0 / (self.hi - self.lo)
        }
    }

    /// `H(u) = ∫_0^u η`.
    #[inline]
    pub fn antiderivative(&self, u: f64) -> f64 {
        let p = |s: f64| s - s.powi(3) + 0.6 * s.powi(5) - s.powi(7) / 7.0;
        let half = 0.5 * (self.hi - self.lo);
        let s = self.s(u).clamp(-1.0, 1.0);
        half * (p(s) - p(-1.0))
    }
}

/// `Ψ(u) = ∫_0^u Φ'(ξ) η(ξ) dξ` tabulated with cubic Hermite interpolation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WeightedAntiderivative {
    lo: f64,
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl WeightedAntiderivative {
    const NODES: usize = 1024;

    fn new(bump: &LevelBump, cs: &CoefficientSet) -> Self {
        let f = |x: f64| cs.phi_prime_exact(x) * bump.eta(x);
        let step = (bump.hi - bump.lo) / (Self::NODES - 1) as f64;
        // Five-point Gauss–Legendre per panel.
        const NODES: [f64; 5] = [0.0, -0.538_469_310_105_683_1, 0.538_469_310_105_683_1, -0.906_179_845_938_664, 0.906_179_845_938_664];
        const WEIGHTS: [f64; 5] = [
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_5,
            0.478_628_670_499_366_5,
            0.236_926_885_056_189_1,
            0.236_926_885_056_189_1,
        ];
        let mut values = vec![0.0; Self::NODES];
        let mut slopes = vec![0.0; Self::NODES];
        for j in 1..Self::NODES {
            let (a, b) = (bump.lo + (j - 1) as f64 * step, bump.lo + j as f64 * step);
            let (mid, half) = (0.5 * (a + b), 0.5 * (b - a));
            let panel: f64 = NODES.iter().zip(WEIGHTS).map(|(z, w)| w * f(mid + half * z)).sum();
            values[j] = values[j - 1] + half * panel;
        }
        for (j, s) in slopes.iter_mut().enumerate() {
            *s = f(bump.lo + j as f64 * step);
        }
        Self { lo: bump.lo, step, values, slopes }
    }

    #[inline]
    fn eval(&self, u: f64) -> f64 {
        let z = (u - self.lo) / self.step;
        if z <= 0.0 {
            return 0.0;
        }
        let last = self.values.len() - 1;
        if z >= last as f64 {
            return self.values[last];
        }
        let j = z as usize;
        let t = z - j as f64;
        let (y0, y1) = (self.values[j], self.values[j + 1]);
        let (m0, m1) = (self.slopes[j] * self.step, self.slopes[j + 1] * self.step);
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * m1
    }
}

/// `φ(x, ξ, t) = ρ(x) η(ξ) a(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KineticTestFn {
    pub rho: SpatialFactor,
    pub bump: LevelBump,
    pub time: TimeFactor,
}

impl KineticTestFn {
    pub fn id(&self) -> String {
        let r = match self.rho {
            SpatialFactor::One => "one",
            SpatialFactor::Cos => "cos",
            SpatialFactor::Sin => "sin",
        };
        let a = match self.time {
            TimeFactor::Zero => "zero",
            TimeFactor::Linear => "lin",
            TimeFactor::Quadratic => "quad",
        };
        format!("{r}_bump_{a}")
    }

    /// The three spatial factors with one bump and linear decay in time.
    pub fn library(bump: LevelBump) -> Vec<KineticTestFn> {
        [SpatialFactor::One, SpatialFactor::Cos, SpatialFactor::Sin]
            .into_iter()
            .map(|rho| KineticTestFn { rho, bump, time: TimeFactor::Linear })
            .collect()
    }
}

pub const KINETIC_TERMS: [&str; 10] = [
    "initial",
    "time",
    "diffusion",
    "viscosity",
    "noise_correction",
    "measure",
    "transport",
    "xi_correction",
    "obstacle",
    "martingale",
];

/// Signed terms of the discrete weak kinetic equation for one test function.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct KineticTerms {
    pub initial: f64,
    pub time: f64,
    pub diffusion: f64,
    pub viscosity: f64,
    pub noise_correction: f64,
    pub measure: f64,
    pub transport: f64,
    pub xi_correction: f64,
    pub obstacle: f64,
    pub martingale: f64,
}

impl KineticTerms {
    pub fn as_array(&self) -> [f64; 10] {
        [
            self.initial,
            self.time,
            self.diffusion,
            self.viscosity,
            self.noise_correction,
            self.measure,
            self.transport,
            self.xi_correction,
            self.obstacle,
            self.martingale,
        ]
    }

    pub fn residual(&self) -> f64 {
        self.as_array().iter().sum()
    }
}

/// Accumulates, step by step, the terms of
/// `a(0)G(0) + Σ (a_{n+1} - a_n) G(u_{n+1}) + Σ a_n P_n = 0`
/// where `G(u) = ∫ ρ H(u) dx = ∫∫ χ ρ η` and `P_n` is the increment of `G`
/// predicted by the equation's right-hand side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KineticProbe {
    horizon: f64,
    functions: Vec<KineticTestFn>,
    weighted: Vec<WeightedAntiderivative>,
    terms: Vec<KineticTerms>,
    /// Per test function: `(ρ, ρ', ρ'')` at cell centers.
    rho: Vec<Vec<(f64, f64, f64)>>,
}

impl KineticProbe {
    pub fn new(functions: Vec<KineticTestFn>, mesh: &Mesh, cs: &CoefficientSet, horizon: f64, u0: &[f64]) -> Self {
        let weighted = functions.iter().map(|f| WeightedAntiderivative::new(&f.bump, cs)).collect();
        let rho: Vec<Vec<_>> =
            functions.iter().map(|f| (0..mesh.n()).map(|i| f.rho.eval(mesh.center(i))).collect()).collect();
        let h = mesh.h();
        let terms = functions
            .iter()
            .zip(&rho)
            .map(|(f, rho)| {
                let g0: f64 = h * u0.iter().zip(rho).map(|(u, r)| r.0 * f.bump.antiderivative(*u)).sum::<f64>();
                KineticTerms { initial: f.time.eval(0.0, horizon) * g0, ..Default::default() }
            })
            .collect();
        Self { horizon, functions, weighted, terms, rho }
    }

    pub fn functions(&self) -> &[KineticTestFn] {
        &self.functions
    }

    pub fn terms(&self) -> &[KineticTerms] {
        &self.terms
    }

    pub fn record(&mut self, view: &StepView<'_>) {
        let mesh = view.mesh;
        let cs = view.coefficients;
        let ff = view.ffields;
        let h = mesh.h();
        let dt = view.dt;
        let n = mesh.n();
        for (j, f) in self.functions.iter().enumerate() {
            let a_n = f.time.eval(view.t, self.horizon);
            let a_next = f.time.eval(view.t + dt, self.horizon);
            let rho = &self.rho[j];
            let psi_fn = &self.weighted[j];
            let bump = f.bump;
            let term = &mut self.terms[j];

            let g_next: f64 = (0..n).map(|i| rho[i].0 * bump.antiderivative(view.v[i])).sum::<f64>() * h;
            term.time += (a_next - a_n) * g_next;
            if a_n == 0.0 {
                continue;
            }
            let w = a_n * dt * h;
            let (mut diff, mut visc, mut corr, mut meas, mut transp, mut xic, mut obst, mut mart) =
                (0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..n {
                let u = view.u[i];
                let (r0, r1, r2) = rho[i];
                let eta = bump.eta(u);
                let eta_p = bump.eta_prime(u);
                let gu = view.grad[i];
                if r2 != 0.0 {
                    diff += r2 * psi_fn.eval(u);
                    if view.alpha != 0.0 {
                        visc += r2 * bump.antiderivative(u);
                    }
                }
                if eta == 0.0 && eta_p == 0.0 {
                    continue;
                }
                // ∂x(ρ η(u)) at the cell.
                let dx_test = r1 * eta + r0 * eta_p * gu;
                meas += r0 * eta_p * view.dissipation(i);
                let (s, sp) = cs.sigma_n_pair(u);
                if sp != 0.0 || s != 0.0 {
                    corr += dx_test * (ff.f1[i] * sp * sp * gu + s * sp * ff.f2_at_cell(mesh, i));
                    let mut fdb = 0.0;
                    for (k, db) in view.increments.iter().enumerate() {
                        fdb += view.modes.cell_values(k)[i] * db;
                    }
                    mart += dx_test * s * fdb;
                }
                if cs.has_transport() {
                    transp += dx_test * cs.g(u);
                }
                xic += r0 * eta_p * view.noise[i] * view.noise[i];
                obst += r0 * eta * view.r[i];
            }
            term.diffusion += w * diff;
            term.viscosity += w * view.alpha * visc;
            term.noise_correction -= 0.5 * w * corr;
            term.measure -= w * meas;
            term.transport += w * transp;
            term.xi_correction += 0.5 * a_n * h * xic;
            term.obstacle -= a_n * h * obst;
            term.martingale += a_n * h * mart;
        }
    }
}

/// Residual of each test function with its term breakdown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub entries: Vec<ResidualEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualEntry {
    pub phi_id: String,
    pub terms: KineticTerms,
    pub residual: f64,
    /// Filled in by refinement studies.
    pub slope: Option<f64>,
}

pub fn weak_kinetic_residual(probe: Option<&KineticProbe>) -> Result<ResidualReport, KineticsError> {
    let probe = probe.ok_or(KineticsError::MissingRecording)?;
    Ok(ResidualReport {
        entries: probe
            .functions
            .iter()
            .zip(&probe.terms)
            .map(|(f, t)| ResidualEntry { phi_id: f.id(), terms: *t, residual: t.residual(), slope: None })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_coefficients, CoefficientParams};
    use crate::noise::{build_mode_set, compute_f_fields};

    #[test]
    fn indicator() {
        assert_eq!(kinetic_indicator(2.0, 1.0), 1);
        assert_eq!(kinetic_indicator(2.0, 3.0), 0);
        assert_eq!(kinetic_indicator(2.0, -0.5), 0);
    }

    struct Fixture {
        mesh: Mesh,
        cs: CoefficientSet,
        modes: ModeSet,
        ff: FFields,
    }

    fn fixture(n: usize) -> Fixture {
        let mesh = Mesh::new(n).unwrap();
        let cs = make_coefficients(CoefficientParams { phi_exponent: 1.0, ..Default::default() }).unwrap();
        let modes = build_mode_set(&[], &mesh).unwrap();
        let ff = compute_f_fields(&modes);
        Fixture { mesh, cs, modes, ff }
    }

    fn view<'a>(fx: &'a Fixture, u: &'a [f64], v: &'a [f64], r: &'a [f64], psi: &'a [f64], grad: &'a [f64]) -> StepView<'a> {
        StepView {
            mesh: &fx.mesh,
            coefficients: &fx.cs,
            ffields: &fx.ff,
            modes: &fx.modes,
            alpha: 0.0,
            epsilon: 0.1,
            side: Side::Upper,
            t: 0.0,
            dt: 0.01,
            u,
            v,
            r,
            psi,
            grad,
            noise: grad,
            increments: &[],
        }
    }

    #[test]
    fn single_contact_cell_lambda_mass() {
        let fx = fixture(8);
        let mut u = vec![0.5; 8];
        u[3] = 2.0;
        let psi = vec![1.0; 8];
        let mut r = vec![0.0; 8];
        r[3] = 0.01 / 0.1;
        let zero = vec![0.0; 8];
        let mut acc = LevelMeasure::new(LevelGrid::new(4.0, 64).unwrap(), 8, 4, 1.0);
        acc.deposit(&view(&fx, &u, &u, &r, &psi, &zero));
        let expect = 1.0 / 0.1 * 1.0 * fx.mesh.h() * 0.01;
        assert!((acc.total(Component::Lambda) - expect).abs() < 1e-15);
        assert!((acc.lambda_construction_total() - expect).abs() < 1e-15);
        // Spread over (1, 2) only.
        assert_eq!(acc.window_mass(Component::Lambda, Some((0.0, 1.0)), (0.0, 1.0)).unwrap(), 0.0);
        assert_eq!(acc.window_mass(Component::Lambda, Some((2.0, 4.0)), (0.0, 1.0)).unwrap(), 0.0);
        let inside = acc.window_mass(Component::Lambda, Some((1.0, 2.0)), (0.0, 1.0)).unwrap();
        assert!((inside - expect).abs() < 1e-15);
        assert_eq!(acc.total(Component::M), 0.0);
    }

    #[test]
    fn no_contact_gives_no_lambda_or_nu() {
        let fx = fixture(8);
        let u = vec![0.5; 8];
        let psi = vec![1.0; 8];
        let zero = vec![0.0; 8];
        let mut acc = LevelMeasure::new(LevelGrid::new(2.0, 32).unwrap(), 8, 1, 1.0);
        acc.deposit(&view(&fx, &u, &u, &zero, &psi, &zero));
        assert_eq!(acc.total(Component::Lambda), 0.0);
        assert_eq!(acc.total(Component::Nu), 0.0);
        assert_eq!(acc.total(Component::M), 0.0);
    }

    #[test]
    fn nu_rejects_level_window() {
        let acc = LevelMeasure::new(LevelGrid::new(2.0, 32).unwrap(), 8, 1, 1.0);
        assert_eq!(acc.window_mass(Component::Nu, Some((0.0, 1.0)), (0.0, 1.0)), Err(KineticsError::NuHasNoLevel));
        assert_eq!(acc.window_mass(Component::Nu, None, (0.0, 1.0)).unwrap(), 0.0);
    }

    #[test]
    fn overflow_is_flagged_not_dropped() {
        let fx = fixture(8);
        let u = vec![3.0; 8];
        let psi = vec![1.0; 8];
        let r = vec![0.1; 8];
        let zero = vec![0.0; 8];
        let mut acc = LevelMeasure::new(LevelGrid::new(2.0, 32).unwrap(), 8, 1, 1.0);
        acc.deposit(&view(&fx, &u, &u, &r, &psi, &zero));
        assert!(acc.overflowed());
        let total = acc.total(Component::Lambda);
        assert!((total - acc.lambda_construction_total()).abs() < 1e-14 * total);
        let over = acc.window_mass(Component::Lambda, Some((2.0, f64::INFINITY)), (0.0, 1.0)).unwrap();
        assert!(over > 0.0);
    }

    #[test]
    fn defect_identity_linear_phi_is_exact() {
        let fx = fixture(16);
        let u: Vec<f64> = (0..16).map(|i| 0.8 + 0.05 * i as f64).collect();
        let psi = vec![1.0; 16];
        let r: Vec<f64> = u.iter().map(|v| 0.01 / 0.1 * (v - 1.0).max(0.0)).collect();
        let zero = vec![0.0; 16];
        let mut acc = LevelMeasure::new(LevelGrid::new(2.0, 40).unwrap(), 16, 2, 1.0);
        let mut ledger = DefectLedger::default();
        let vw = view(&fx, &u, &u, &r, &psi, &zero);
        acc.deposit(&vw);
        ledger.record(&vw);
        for f in [DefectTestFn::Xi, DefectTestFn::CosXi, DefectTestFn::SinXi] {
            let (lhs, rhs) = defect_identity(&ledger, &acc, &fx.mesh, f);
            assert!(lhs > 0.0);
            assert!((lhs - rhs).abs() <= 1e-12 * lhs, "{f:?}");
        }
    }

    #[test]
    fn merge_matches_concatenated_stream() {
        let fx = fixture(8);
        let psi = vec![1.0; 8];
        let grad: Vec<f64> = (0..8).map(|i| (i as f64 - 3.5) * 0.2).collect();
        let states: Vec<Vec<f64>> = (0..4).map(|s| (0..8).map(|i| 0.7 + 0.07 * ((i + s) % 8) as f64).collect()).collect();
        let rs: Vec<Vec<f64>> = states.iter().map(|u| u.iter().map(|v| 0.1 * (v - 1.0).max(0.0)).collect()).collect();
        let grid = LevelGrid::new(2.0, 32).unwrap();
        let mut whole = LevelMeasure::new(grid, 8, 2, 1.0);
        let mut a = LevelMeasure::new(grid, 8, 2, 1.0);
        let mut b = LevelMeasure::new(grid, 8, 2, 1.0);
        for (k, (u, r)) in states.iter().zip(&rs).enumerate() {
            let mut vw = view(&fx, u, u, r, &psi, &grad);
            vw.t = 0.25 * k as f64;
            whole.deposit(&vw);
            if k % 2 == 0 { a.deposit(&vw) } else { b.deposit(&vw) }
        }
        let mut ab = a.clone();
        ab.merge(&b).unwrap();
        let mut ba = b.clone();
        ba.merge(&a).unwrap();
        for c in [Component::M, Component::Lambda, Component::Nu] {
            let w = whole.total(c);
            assert!((ab.total(c) - w).abs() <= 1e-15 * w.max(1.0));
            assert!((ba.total(c) - w).abs() <= 1e-15 * w.max(1.0));
        }
        assert!(ab.is_nonnegative());
    }

    #[test]
    fn bump_antiderivative_matches_quadrature() {
        let bump = LevelBump { lo: 0.3, hi: 1.1 };
        let n = 100_000;
        let mut acc = 0.0;
        let hq = 1.2 / n as f64;
        for k in 0..n {
            acc += bump.eta((k as f64 + 0.5) * hq) * hq;
        }
        assert!((bump.antiderivative(1.2) - acc).abs() < 1e-9);
        assert_eq!(bump.antiderivative(0.1), 0.0);
        let d = 1e-6;
        let x = 0.55;
        let fd = (bump.eta(x + d) - bump.eta(x - d)) / (2.0 * d);
        assert!((bump.eta_prime(x) - fd).abs() < 1e-6);
    }

    #[test]
    fn weighted_antiderivative_for_linear_phi_is_h() {
        let bump = LevelBump { lo: 0.2, hi: 0.9 };
        let cs = make_coefficients(CoefficientParams { phi_exponent: 1.0, ..Default::default() }).unwrap();
        let table = WeightedAntiderivative::new(&bump, &cs);
        for u in [0.1, 0.25, 0.5, 0.77, 1.5] {
            assert!((table.eval(u) - bump.antiderivative(u)).abs() < 1e-12, "{u}");
        }
        let cs2 = make_coefficients(CoefficientParams { phi_exponent: 2.0, ..Default::default() }).unwrap();
        let table2 = WeightedAntiderivative::new(&bump, &cs2);
        // Ψ(u) = ∫ 2ξ η(ξ) dξ by midpoint quadrature.
        let n = 200_000;
        let hq = (0.6 - 0.2) / n as f64;
        let quad: f64 = (0..n).map(|k| {
            let x = 0.2 + (k as f64 + 0.5) * hq;
            2.0 * x * bump.eta(x) * hq
        }).sum();
        assert!((table2.eval(0.6) - quad).abs() < 1e-9);
    }

    #[test]
    fn zero_time_factor_gives_zero_residual() {
        let fx = fixture(16);
        let u: Vec<f64> = (0..16).map(|i| 0.5 + 0.03 * i as f64).collect();
        let bump = LevelBump { lo: 0.4, hi: 0.9 };
        let fns = vec![KineticTestFn { rho: SpatialFactor::Cos, bump, time: TimeFactor::Zero }];
        let mut probe = KineticProbe::new(fns, &fx.mesh, &fx.cs, 1.0, &u);
        let psi = vec![1.0; 16];
        let grad = vec![0.1; 16];
        let r = vec![0.0; 16];
        probe.record(&view(&fx, &u, &u, &r, &psi, &grad));
        let report = weak_kinetic_residual(Some(&probe)).unwrap();
        assert_eq!(report.entries[0].residual, 0.0);
        assert!(report.entries[0].terms.as_array().iter().all(|t| *t == 0.0));
        assert_eq!(weak_kinetic_residual(None), Err(KineticsError::MissingRecording));
    }
}
