//! Nonlinearities `Φ`, `σ`, `g`, the obstacle `ψ`, and the structural audit.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridField, Mesh};
use crate::noise::FFields;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("diffusion exponent must be positive, got {0}")]
    BadExponent(f64),
    #[error("regularization scale must lie in (0, 1), got {0}")]
    BadRegularization(f64),
    #[error("integrability exponent p must be >= 2, got {0}")]
    BadP(f64),
    #[error("noise coefficient parameter {name} must be finite and non-negative, got {value}")]
    BadSigma { name: &'static str, value: f64 },
    #[error("NaN argument passed to {0:?}")]
    NanArgument(Which),
    #[error("obstacle parameters produce a negative value ({value}) at x={x}, t={t}")]
    NegativeObstacle { value: f64, x: f64, t: f64 },
    #[error("obstacle parameter {name} is invalid: {value}")]
    BadObstacleParam { name: &'static str, value: f64 },
}

/// `r^e` with fast paths for the exponents the presets use.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
enum Power {
    Zero,
    One,
    Two,
    Half,
    Quarter,
    ThreeHalves,
    MinusHalf,
    MinusThreeQuarters,
    General(f64),
}

impl Power {
    fn new(e: f64) -> Self {
        match e {
            e if e == 0.0 => Power::Zero,
            e if e == 1.0 => Power::One,
            e if e == 2.0 => Power::Two,
            e if e == 0.5 => Power::Half,
            e if e == 0.25 => Power::Quarter,
            e if e == 1.5 => Power::ThreeHalves,
            e if e == -0.5 => Power::MinusHalf,
            e if e == -0.75 => Power::MinusThreeQuarters,
            e => Power::General(e),
        }
    }

    /// Evaluates for `r >= 0`.
    #[inline]
    fn eval(self, r: f64) -> f64 {
        match self {
            Power::Zero => 1.0,
            Power::One => r,
            Power::Two => r * r,
            Power::Half => r.sqrt(),
            Power::Quarter => r.sqrt().sqrt(),
            Power::ThreeHalves => r * r.sqrt(),
            Power::MinusHalf => 1.0 / r.sqrt(),
            Power::MinusThreeQuarters => {
                let q = r.sqrt().sqrt();
                1.0 / (q * q * q)
            }
            Power::General(e) => r.powf(e),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SigmaKind {
    /// `σ = √Φ`.
    SqrtPhi,
    /// `σ(u) = coef · u`.
    Linear { coef: f64 },
    /// `σ(u) = coef · u^exponent`.
    Power { coef: f64, exponent: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GKind {
    Zero,
    /// `g(u) = b · u`.
    Linear { b: f64 },
    /// `g(u) = c · Φ(u)`.
    PhiTransport { c: f64 },
}

/// Plain-data parameters for [`CoefficientSet`]; this is what configs carry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientParams {
    pub phi_exponent: f64,
    pub sigma: SigmaKind,
    pub g: GKind,
    pub delta_reg: f64,
    pub p: f64,
}

impl Default for CoefficientParams {
    fn default() -> Self {
        Self { phi_exponent: 1.0, sigma: SigmaKind::SqrtPhi, g: GKind::Zero, delta_reg: 1e-3, p: 2.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Which {
    Phi,
    PhiPrime,
    SigmaN,
    SigmaNPrime,
    G,
    GPrime,
    BracketSqrtPhiPrime,
}

/// Evaluators for `Φ(u) = u^m`, the regularized `σ_n = σ ∘ p_δ`, and `g`.
///
/// `p_δ` is the C¹ ramp: `0` for `u <= 0`, `u²/(2δ)` on `(0, δ)` and
/// `u - δ/2` beyond, so `σ_n` vanishes identically on `(-∞, 0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    params: CoefficientParams,
    phi_pow: Power,
    phi_prime_pow: Power,
    sigma_coef: f64,
    sigma_pow: Power,
    sigma_prime_pow: Power,
    sigma_exponent: f64,
}

pub fn make_coefficients(params: CoefficientParams) -> Result<CoefficientSet, ModelError> {
    let m = params.phi_exponent;
    if !(m.is_finite() && m > 0.0) {
        return Err(ModelError::BadExponent(m));
    }
    let d = params.delta_reg;
    if !(d > 0.0 && d < 1.0) {
        return Err(ModelError::BadRegularization(d));
    }
    if !(params.p >= 2.0 && params.p.is_finite()) {
        return Err(ModelError::BadP(params.p));
    }
    let (coef, exponent) = match params.sigma {
        SigmaKind::SqrtPhi => (1.0, 0.5 * m),
        SigmaKind::Linear { coef } => (coef, 1.0),
        SigmaKind::Power { coef, exponent } => {
            if !(exponent.is_finite() && exponent > 0.0) {
                return Err(ModelError::BadSigma { name: "sigma_power", value: exponent });
            }
            (coef, exponent)
        }
    };
    if !(coef.is_finite() && coef >= 0.0) {
        return Err(ModelError::BadSigma { name: "sigma_coef", value: coef });
    }
    Ok(CoefficientSet {
        params,
        phi_pow: Power::new(m),
        phi_prime_pow: Power::new(m - 1.0),
        sigma_coef: coef,
        sigma_pow: Power::new(exponent),
        sigma_prime_pow: Power::new(exponent - 1.0),
        sigma_exponent: exponent,
    })
}

impl CoefficientSet {
    pub fn params(&self) -> &CoefficientParams {
        &self.params
    }

    #[inline]
    pub fn m(&self) -> f64 {
        self.params.phi_exponent
    }

    #[inline]
    pub fn delta(&self) -> f64 {
        self.params.delta_reg
    }

    /// True when `σ ≡ 0`.
    pub fn is_noiseless(&self) -> bool {
        self.sigma_coef == 0.0
    }

    /// `Φ(r) = sign(r)|r|^m`; odd extension keeps `Φ` increasing on ℝ.
    #[inline]
    pub fn phi(&self, r: f64) -> f64 {
        if r >= 0.0 {
            self.phi_pow.eval(r)
        } else {
            -self.phi_pow.eval(-r)
        }
    }

    /// Unclamped `Φ'(r) = m|r|^(m-1)`.
    #[inline]
    pub fn phi_prime_exact(&self, r: f64) -> f64 {
        self.m() * self.phi_prime_pow.eval(r.abs())
    }

    /// `Φ'` as used wherever it multiplies `|∇u|²`: for `m < 1` the argument is
    /// raised to at least `delta_reg`.
    #[inline]
    pub fn phi_prime(&self, r: f64) -> f64 {
        let a = r.abs();
        if self.m() < 1.0 && a < self.delta() {
            self.phi_prime_exact(self.delta())
        } else {
            self.phi_prime_exact(a)
        }
    }

    /// Unregularized `σ` on `[0, ∞)`; zero for `r <= 0`.
    #[inline]
    pub fn sigma(&self, r: f64) -> f64 {
        if r <= 0.0 {
            0.0
        } else {
            self.sigma_coef * self.sigma_pow.eval(r)
        }
    }

    #[inline]
    pub fn sigma_prime(&self, r: f64) -> f64 {
        if r <= 0.0 {
            0.0
        } else {
            self.sigma_coef * self.sigma_exponent * self.sigma_prime_pow.eval(r)
        }
    }

    #[inline]
    fn ramp(&self, r: f64) -> (f64, f64) {
        let d = self.delta();
        if r <= 0.0 {
            (0.0, 0.0)
        } else if r < d {
            (r * r / (2.0 * d), r / d)
        } else {
            (r - 0.5 * d, 1.0)
        }
    }

    #[inline]
    pub fn sigma_n(&self, r: f64) -> f64 {
        self.sigma(self.ramp(r).0)
    }

    #[inline]
    pub fn sigma_n_prime(&self, r: f64) -> f64 {
        let (p, dp) = self.ramp(r);
        if dp == 0.0 {
            0.0
        } else {
            self.sigma_prime(p) * dp
        }
    }

    /// `(σ_n(r), σ_n'(r))` in one pass.
    #[inline]
    pub fn sigma_n_pair(&self, r: f64) -> (f64, f64) {
        let (p, dp) = self.ramp(r);
        if dp == 0.0 {
            (0.0, 0.0)
        } else {
            (self.sigma(p), self.sigma_prime(p) * dp)
        }
    }

    #[inline]
    pub fn g(&self, r: f64) -> f64 {
        match self.params.g {
            GKind::Zero => 0.0,
            GKind::Linear { b } => b * r,
            GKind::PhiTransport { c } => c * self.phi(r),
        }
    }

    #[inline]
    pub fn g_prime(&self, r: f64) -> f64 {
        match self.params.g {
            GKind::Zero => 0.0,
            GKind::Linear { b } => b,
            GKind::PhiTransport { c } => c * self.phi_prime_exact(r),
        }
    }

    pub fn has_transport(&self) -> bool {
        !matches!(self.params.g, GKind::Zero)
    }

    /// `⟦√Φ'⟧(r) = ∫_0^r √Φ'`, closed form `2√m/(m+1) · r^((m+1)/2)`.
    pub fn bracket_sqrt_phi_prime(&self, r: f64) -> f64 {
        self.bracket_weighted(r, 2.0)
    }

    /// `⟦|·|^((p-2)/2) √Φ'⟧(r)`, closed form.
    pub fn bracket_weighted(&self, r: f64, p: f64) -> f64 {
        let s = 0.5 * (p + self.m() - 1.0);
        let val = self.m().sqrt() / s * r.abs().powf(s);
        if r < 0.0 {
            -val
        } else {
            val
        }
    }
}

pub fn eval_coefficient(cs: &CoefficientSet, which: Which, r: f64) -> Result<f64, ModelError> {
    if r.is_nan() {
        return Err(ModelError::NanArgument(which));
    }
    Ok(match which {
        Which::Phi => cs.phi(r),
        Which::PhiPrime => cs.phi_prime(r),
        Which::SigmaN => cs.sigma_n(r),
        Which::SigmaNPrime => cs.sigma_n_prime(r),
        Which::G => cs.g(r),
        Which::GPrime => cs.g_prime(r),
        Which::BracketSqrtPhiPrime => cs.bracket_sqrt_phi_prime(r),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Upper,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ObstacleKind {
    Constant { level: f64 },
    /// `base + amp · sin(2π k x)`.
    Trig { base: f64, amp: f64, wavenumber: u32 },
    /// `base + height · (1 - s²)²` for `|s| < 1`, `s = dist(x, center + speed t) / width`.
    MovingBump { base: f64, height: f64, width: f64, center: f64, speed: f64 },
    /// `base + rate · t`.
    TimeRamp { base: f64, rate: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstacleSpec {
    pub kind: ObstacleKind,
    pub side: Side,
}

impl ObstacleSpec {
    pub fn new(kind: ObstacleKind, side: Side) -> Self {
        Self { kind, side }
    }

    /// Validates non-negativity over `[0, horizon]` and returns the bound `M`.
    pub fn validate(&self, horizon: f64) -> Result<f64, ModelError> {
        let neg = |value: f64, x: f64, t: f64| Err(ModelError::NegativeObstacle { value, x, t });
        match self.kind {
            ObstacleKind::Constant { level } => {
                if !level.is_finite() {
                    return Err(ModelError::BadObstacleParam { name: "level", value: level });
                }
                if level < 0.0 {
                    return neg(level, 0.0, 0.0);
                }
            }
            ObstacleKind::Trig { base, amp, .. } => {
                if !(base.is_finite() && amp.is_finite()) {
                    return Err(ModelError::BadObstacleParam { name: "base/amp", value: base + amp });
                }
                if base - amp.abs() < 0.0 {
                    return neg(base - amp.abs(), 0.0, 0.0);
                }
            }
            ObstacleKind::MovingBump { base, height, width, .. } => {
                if !(width > 0.0 && width <= 0.5) {
                    return Err(ModelError::BadObstacleParam { name: "width", value: width });
                }
                if base < 0.0 {
                    return neg(base, 0.0, 0.0);
                }
                if base + height < 0.0 {
                    return neg(base + height, 0.0, 0.0);
                }
            }
            ObstacleKind::TimeRamp { base, rate } => {
                if base < 0.0 {
                    return neg(base, 0.0, 0.0);
                }
                if base + rate * horizon < 0.0 {
                    return neg(base + rate * horizon, 0.0, horizon);
                }
            }
        }
        Ok(self.bound(horizon))
    }

    /// Certified upper bound `M` of `ψ` over `[0, horizon]`.
    pub fn bound(&self, horizon: f64) -> f64 {
        match self.kind {
            ObstacleKind::Constant { level } => level,
            ObstacleKind::Trig { base, amp, .. } => base + amp.abs(),
            ObstacleKind::MovingBump { base, height, .. } => base + height.max(0.0),
            ObstacleKind::TimeRamp { base, rate } => base.max(base + rate * horizon),
        }
    }

    pub fn is_time_dependent(&self) -> bool {
        match self.kind {
            ObstacleKind::Constant { .. } | ObstacleKind::Trig { .. } => false,
            ObstacleKind::MovingBump { speed, .. } => speed != 0.0,
            ObstacleKind::TimeRamp { rate, .. } => rate != 0.0,
        }
    }

    #[inline]
    pub fn value(&self, x: f64, t: f64) -> f64 {
        match self.kind {
            ObstacleKind::Constant { level } => level,
            ObstacleKind::Trig { base, amp, wavenumber } => base + amp * (2.0 * PI * wavenumber as f64 * x).sin(),
            ObstacleKind::MovingBump { base, height, width, center, speed } => {
                let c = (center + speed * t).rem_euclid(1.0);
                let mut d = (x - c).abs();
                d = d.min(1.0 - d);
                let s = d / width;
                if s < 1.0 {
                    let w = 1.0 - s * s;
                    base + height * w * w
                } else {
                    base
                }
            }
            ObstacleKind::TimeRamp { base, rate } => base + rate * t,
        }
    }
}

/// `ψ(·, t)` at cell centers.
pub fn eval_obstacle(spec: &ObstacleSpec, mesh: &Mesh, t: f64) -> GridField {
    mesh.sample_cells(|x| spec.value(x, t))
}

pub fn eval_obstacle_into(spec: &ObstacleSpec, mesh: &Mesh, t: f64, out: &mut [f64]) {
    for (i, v) in out.iter_mut().enumerate() {
        *v = spec.value(mesh.center(i), t);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditStatus {
    Pass,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub id: String,
    pub status: AuditStatus,
    /// Fitted constant (max observed ratio) or worst margin, depending on the item.
    pub value: f64,
    /// Sample point where `value` was attained.
    pub worst_point: f64,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub entries: Vec<AuditEntry>,
}

impl AuditReport {
    pub fn all_pass(&self) -> bool {
        self.entries.iter().all(|e| e.status == AuditStatus::Pass)
    }

    pub fn get(&self, id: &str) -> Option<&AuditEntry> {
        self.entries.iter().find(|e| e.id == id)
    }
}

/// Log-uniform samples on `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl SampleGrid {
    pub fn new(lo: f64, hi: f64, points: usize) -> Self {
        Self { lo, hi, points: points.max(1000) }
    }

    pub fn samples(&self) -> Vec<f64> {
        let (a, b) = (self.lo.ln(), self.hi.ln());
        let n = self.points;
        (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
    }
}

pub struct AuditInputs<'a> {
    pub coefficients: &'a CoefficientSet,
    pub ffields: &'a FFields,
    pub obstacle: &'a ObstacleSpec,
    pub mesh: &'a Mesh,
    pub horizon: f64,
    pub initial: Option<&'a GridField>,
    pub sample: SampleGrid,
}

/// Log-log slope of a ratio at either end of the sample above which it
/// counts as diverging. A bounded ratio flattens out (slope -> 0); a power
/// law keeps its exponent.
const DIVERGENCE_SLOPE: f64 = 0.25;

struct RatioFit {
    max: f64,
    at: f64,
    diverges_high: bool,
    diverges_low: bool,
}

fn end_slopes(xs: &[f64], rs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let span = (n / 20).max(1);
    let slope = |a: usize, b: usize| {
        if rs[a] <= 0.0 || rs[b] <= 0.0 {
            if rs[b] > rs[a] {
                f64::INFINITY
            } else {
                0.0
            }
        } else {
            (rs[b] / rs[a]).ln() / (xs[b] / xs[a]).ln()
        }
    };
    (slope(0, span), slope(n - 1 - span, n - 1))
}

fn fit_ratio(xs: &[f64], ratio: impl Fn(f64) -> f64) -> RatioFit {
    let rs: Vec<f64> = xs.iter().map(|&x| ratio(x)).collect();
    let (mut max, mut at) = (f64::NEG_INFINITY, xs[0]);
    for (&x, &r) in xs.iter().zip(&rs) {
        if r > max || !r.is_finite() {
            max = r;
            at = x;
        }
        if !r.is_finite() {
            break;
        }
    }
    let (low, high) = end_slopes(xs, &rs);
    let n = rs.len();
    RatioFit {
        max,
        at,
        diverges_high: !rs[n - 1].is_finite() || high > DIVERGENCE_SLOPE,
        diverges_low: !rs[0].is_finite() || low < -DIVERGENCE_SLOPE,
    }
}

fn entry(id: &str, pass: bool, value: f64, worst_point: f64, note: impl Into<String>) -> AuditEntry {
    AuditEntry {
        id: id.to_string(),
        status: if pass { AuditStatus::Pass } else { AuditStatus::Fail },
        value,
        worst_point,
        note: note.into(),
    }
}

/// Samples the structural assumptions on the coefficients as simulated
/// (regularized `σ_n`, clamped `Φ'`) and on noise, obstacle and initial data.
pub fn audit_assumptions(inputs: &AuditInputs<'_>) -> AuditReport {
    let cs = inputs.coefficients;
    let p = cs.params().p;
    let xs = inputs.sample.samples();
    let mut entries = Vec::new();
    let beyond = format!("sampled on [{:.3e}, {:.3e}]; unchecked beyond range", inputs.sample.lo, inputs.sample.hi);

    let phi_zero = cs.phi(0.0) == 0.0 && cs.sigma_n(0.0) == 0.0;
    let worst = xs.iter().map(|&x| (cs.phi_prime_exact(x), x)).fold((f64::INFINITY, 0.0), |a, b| if b.0 < a.0 { b } else { a });
    let monotone = xs.windows(2).all(|w| cs.phi(w[1]) > cs.phi(w[0]));
    entries.push(entry(
        "phi_monotone",
        phi_zero && worst.0 > 0.0 && monotone,
        worst.0,
        worst.1,
        "Phi(0)=sigma_n(0)=0, Phi' > 0 and Phi strictly increasing on samples",
    ));

    // Φ(ξ) <= c(1 + ξ^max(m,1)).
    let mm = cs.m().max(1.0);
    let fit = fit_ratio(&xs, |x| cs.phi(x) / (1.0 + x.powf(mm)));
    entries.push(entry("phi_growth", !fit.diverges_high, fit.max, fit.at, format!("growth exponent {mm}; {beyond}")));

    let weighted_sq = |x: f64| cs.bracket_weighted(x, p).powi(2);
    let growth = |x: f64| 1.0 + x + weighted_sq(x);

    let fit = fit_ratio(&xs, |x| (cs.g(x).abs() + cs.phi_prime(x)) / growth(x));
    entries.push(entry("drift_growth", !fit.diverges_high, fit.max, fit.at, beyond.clone()));

    // First branch, exponent θ ∈ [0, 1/2] from the log-log slope.
    let lhs4 = |x: f64| x.powf(-(p - 2.0) / 2.0) / cs.phi_prime_exact(x).sqrt();
    let (x0, x1) = (xs[0], xs[xs.len() - 1]);
    let theta = (lhs4(x1) / lhs4(x0)).ln() / (x1 / x0).ln();
    let branch_one = (-1e-9..=0.5 + 1e-9).contains(&theta);
    let (value4, note4, ok4) = if branch_one {
        let th = theta.clamp(0.0, 0.5);
        let fit = fit_ratio(&xs, |x| lhs4(x) / x.powf(th));
        (fit.max, format!("first branch, theta={th:.4}; {beyond}"), !fit.diverges_high && !fit.diverges_low)
    } else {
        // Second branch with p̃ = 2s where the bracket grows like ξ^s.
        let s = 0.5 * (p + cs.m() - 1.0);
        let ptilde = (2.0 * s).max(1.0);
        let coarse: Vec<f64> = xs.iter().step_by((xs.len() / 100).max(1)).copied().collect();
        let mut worst: (f64, f64) = (0.0, 0.0);
        for (i, &a) in coarse.iter().enumerate() {
            for &b in &coarse[i + 1..] {
                let num = (b - a).abs().powf(ptilde);
                let den = (cs.bracket_weighted(b, p) - cs.bracket_weighted(a, p)).powi(2);
                let r = num / den;
                if r > worst.0 {
                    worst = (r, b);
                }
            }
        }
        (worst.0, format!("second branch, p~={ptilde:.3}; {beyond}"), worst.0.is_finite())
    };
    entries.push(entry("phi_prime_lower", ok4, value4, x0, note4));

    // Both inequalities with σ_n.
    let fit_a = fit_ratio(&xs, |x| cs.sigma_n(x).powi(2) / (1.0 + x + cs.bracket_sqrt_phi_prime(x).powi(2)));
    let fit_b = fit_ratio(&xs, |x| x.powf(p - 2.0) * cs.sigma_n(x).powi(2) / growth(x));
    let fit5 = if fit_a.max >= fit_b.max { &fit_a } else { &fit_b };
    entries.push(entry(
        "sigma_growth",
        !fit_a.diverges_high && !fit_b.diverges_high,
        fit5.max,
        fit5.at,
        format!("max of both ratios; {beyond}"),
    ));

    let div_max = inputs.ffields.div_f2.max_abs();
    if div_max <= 1e-10 {
        entries.push(entry("div_f2_weighted", true, div_max, 0.0, "first branch: div F2 = 0"));
    } else {
        // ⟦|·|^(p-2) σσ'⟧ by trapezoid over the sample grid, starting from 0.
        let integrand = |x: f64| x.powf(p - 2.0) * cs.sigma_n(x) * cs.sigma_n_prime(x);
        let mut acc = 0.0;
        let mut prev = (0.0, integrand(0.0));
        let mut worst: (f64, f64) = (0.0, xs[0]);
        let mut ratios = Vec::with_capacity(xs.len());
        for &x in &xs {
            let fx = integrand(x);
            acc += 0.5 * (fx + prev.1) * (x - prev.0);
            prev = (x, fx);
            let r = acc.abs() / growth(x);
            ratios.push(r);
            if r > worst.0 {
                worst = (r, x);
            }
        }
        let ok = worst.0.is_finite() && end_slopes(&xs, &ratios).1 <= DIVERGENCE_SLOPE;
        entries.push(entry("div_f2_weighted", ok, worst.0, worst.1, format!("second branch; {beyond}")));
    }

    // On (δ, ∞).
    let fit = fit_ratio(&xs, |x| {
        let (s, sp) = cs.sigma_n_pair(x);
        (sp.powi(4) / cs.phi_prime(x) + (s * sp).abs() + cs.phi_prime(x)) / growth(x)
    });
    entries.push(entry("sigma_prime_growth", !fit.diverges_high, fit.max, fit.at, beyond.clone()));

    // σ_n²(ξ)/ξ bounded as ξ → 0.
    // The limit is at 0, so sample well inside the regularization ramp.
    let low = SampleGrid::new(cs.delta() * 1e-6, inputs.sample.hi, inputs.sample.points).samples();
    let fit = fit_ratio(&low, |x| cs.sigma_n(x).powi(2) / x);
    entries.push(entry("sigma_at_zero", !fit.diverges_low, fit.max, fit.at, "limsup as xi -> 0 over the lowest decade"));

    // Noise, obstacle and initial data.
    let ff = inputs.ffields;
    let finite = ff.f1.is_finite() && ff.f2.is_finite() && ff.f3.is_finite() && ff.div_f2.is_finite();
    let nonneg = ff.f1.min() >= 0.0 && ff.f3.min() >= 0.0;
    entries.push(entry(
        "noise_fields",
        finite && nonneg,
        ff.div_f2.max_abs(),
        0.0,
        "F1, F2, F3 finite, F1, F3 >= 0; value = max |div F2|",
    ));

    let mesh = inputs.mesh;
    let times: Vec<f64> = (0..=10).map(|j| inputs.horizon * j as f64 / 10.0).collect();
    let mut psi_min: (f64, f64) = (f64::INFINITY, 0.0);
    for &t in &times {
        let m = eval_obstacle(inputs.obstacle, mesh, t).min();
        if m < psi_min.0 {
            psi_min = (m, t);
        }
    }
    entries.push(entry("obstacle_nonneg", psi_min.0 >= 0.0, psi_min.0, psi_min.1, "min psi over 11 sample times"));

    match inputs.initial {
        Some(u0) => {
            let psi0 = eval_obstacle(inputs.obstacle, mesh, 0.0);
            let excess = match inputs.obstacle.side {
                Side::Upper => (0..mesh.n()).map(|i| u0[i] - psi0[i]).fold(f64::NEG_INFINITY, f64::max),
                Side::Lower => (0..mesh.n()).map(|i| psi0[i] - u0[i]).fold(f64::NEG_INFINITY, f64::max),
            };
            entries.push(entry(
                "initial_admissible",
                u0.min() >= 0.0 && excess <= 0.0,
                excess,
                u0.min(),
                "value = max constraint excess at t=0; worst_point = min u_init",
            ));
        }
        None => entries.push(entry("initial_admissible", true, 0.0, 0.0, "no initial datum supplied")),
    }

    AuditReport { entries }
}
