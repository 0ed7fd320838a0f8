//! Scenario configuration: sectioned `key = value` documents (TOML syntax),
//! named presets, validation, and the canonical form behind the config hash.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::{GridField, LevelGrid, Mesh};
use crate::kinetics::LevelBump;
use crate::model::{
    eval_obstacle, make_coefficients, CoefficientParams, GKind, ObstacleKind, ObstacleSpec, Side, SigmaKind,
};
use crate::noise::{build_mode_set, compute_f_fields, NoiseParams, Pairing};
use crate::solver::{run_trajectory, DtPolicy, OutputPlan, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigErrorKind {
    Syntax,
    UnknownKey,
    TypeMismatch,
    Constraint,
    UnknownPreset,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{}{}: {message}", line.map(|l| format!("line {l}: ")).unwrap_or_default(), if key_path.is_empty() { "document" } else { key_path.as_str() })]
pub struct ConfigError {
    pub kind: ConfigErrorKind,
    pub line: Option<usize>,
    /// `section.key`, or empty when the error is not tied to one key.
    pub key_path: String,
    pub message: String,
}

impl ConfigError {
    fn constraint(key_path: &str, message: impl Into<String>) -> Self {
        Self { kind: ConfigErrorKind::Constraint, line: None, key_path: key_path.to_string(), message: message.into() }
    }
}

/// Generates a section struct and its all-optional overlay.
macro_rules! section {
    ($name:ident, $partial:ident { $($(#[$meta:meta])* $field:ident : $ty:ty),* $(,)? }) => {
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $($(#[$meta])* pub $field: $ty,)*
        }

        #[derive(Debug, Clone, Default, Deserialize)]
        #[serde(deny_unknown_fields)]
        struct $partial {
            $($(#[$meta])* $field: Option<$ty>,)*
        }

        impl $partial {
            fn apply(self, base: &mut $name) {
                $(if let Some(v) = self.$field { base.$field = v; })*
            }
        }
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DtPolicyKind {
    Cfl,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaKindName {
    SqrtPhi,
    Linear,
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GKindName {
    Zero,
    Linear,
    PhiTransport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleKindName {
    Constant,
    Trig,
    MovingBump,
    TimeRamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    Constant,
    Trig,
    /// `scale · ψ(·, 0) + offset`.
    Obstacle,
}

section!(MeshSection, PartialMesh {
    n: usize,
    xi_bins: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    xi_max: Option<f64>,
});

section!(TimeSection, PartialTime {
    #[serde(rename = "T")]
    horizon: f64,
    dt_policy: DtPolicyKind,
    c_cfl: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
});

section!(CoefficientsSection, PartialCoefficients {
    m: f64,
    sigma_kind: SigmaKindName,
    sigma_coef: f64,
    sigma_power: f64,
    g_kind: GKindName,
    b: f64,
    c: f64,
    delta_reg: f64,
    p: f64,
    alpha: f64,
});

section!(ObstacleSection, PartialObstacle {
    kind: ObstacleKindName,
    side: Side,
    level: f64,
    base: f64,
    amp: f64,
    wavenumber: u32,
    height: f64,
    width: f64,
    center: f64,
    speed: f64,
    rate: f64,
});

section!(NoiseSection, PartialNoise {
    modes: usize,
    amplitude: f64,
    amplitude_decay: f64,
    pairing: Pairing,
});

section!(PenaltySection, PartialPenalty {
    epsilon: f64,
    allow_initial_excess: bool,
});

section!(InitialSection, PartialInitial {
    kind: InitialKind,
    value: f64,
    base: f64,
    amp: f64,
    wavenumber: u32,
    scale: f64,
    offset: f64,
});

section!(OutputSection, PartialOutput {
    #[serde(skip_serializing_if = "Option::is_none")]
    output_dt: Option<f64>,
    snapshots: usize,
    t_bins: usize,
    record_full: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    bump_lo: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bump_hi: Option<f64>,
});

section!(SeedsSection, PartialSeeds {
    master_seed: u64,
});

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub mesh: MeshSection,
    pub time: TimeSection,
    pub coefficients: CoefficientsSection,
    pub obstacle: ObstacleSection,
    pub noise: NoiseSection,
    pub penalty: PenaltySection,
    pub initial: InitialSection,
    pub output: OutputSection,
    pub seeds: SeedsSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialDocument {
    preset: Option<String>,
    mesh: Option<PartialMesh>,
    time: Option<PartialTime>,
    coefficients: Option<PartialCoefficients>,
    obstacle: Option<PartialObstacle>,
    noise: Option<PartialNoise>,
    penalty: Option<PartialPenalty>,
    initial: Option<PartialInitial>,
    output: Option<PartialOutput>,
    seeds: Option<PartialSeeds>,
}

pub const PRESETS: [(&str, &str); 4] = [
    ("heat-contact", "linear diffusion, no noise, sinusoidal upper obstacle touching the initial datum"),
    ("pm-contact", "porous medium m=2, sigma=sqrt(Phi), four homogeneous noise modes, binding sinusoidal obstacle"),
    ("fast-diffusion", "fast diffusion m=1/2, sigma=sqrt(Phi), delta_reg=1e-3, same noise and obstacle shape"),
    ("ode-contact", "no diffusion gradient: constant datum above a constant obstacle relaxing at rate 1/epsilon"),
];

impl ScenarioConfig {
    /// Defaults shared by all presets.
    fn base() -> Self {
        Self {
            preset: None,
            mesh: MeshSection { n: 256, xi_bins: 64, xi_max: None },
            time: TimeSection { horizon: 1.0, dt_policy: DtPolicyKind::Cfl, c_cfl: 0.25, dt: None },
            coefficients: CoefficientsSection {
                m: 1.0,
                sigma_kind: SigmaKindName::SqrtPhi,
                sigma_coef: 1.0,
                sigma_power: 1.0,
                g_kind: GKindName::Zero,
                b: 0.0,
                c: 0.0,
                delta_reg: 1e-3,
                p: 2.0,
                alpha: 0.0,
            },
            obstacle: ObstacleSection {
                kind: ObstacleKindName::Trig,
                side: Side::Upper,
                level: 1.0,
                base: 1.0,
                amp: 0.5,
                wavenumber: 1,
                height: 0.0,
                width: 0.25,
                center: 0.5,
                speed: 0.0,
                rate: 0.0,
            },
            noise: NoiseSection { modes: 0, amplitude: 0.0, amplitude_decay: 1.0, pairing: Pairing::Homogeneous },
            penalty: PenaltySection { epsilon: 0.05, allow_initial_excess: false },
            initial: InitialSection {
                kind: InitialKind::Obstacle,
                value: 1.0,
                base: 1.0,
                amp: 0.0,
                wavenumber: 1,
                scale: 1.0,
                offset: 0.0,
            },
            output: OutputSection {
                output_dt: None,
                snapshots: 5,
                t_bins: 20,
                record_full: false,
                bump_lo: None,
                bump_hi: None,
            },
            seeds: SeedsSection { master_seed: 20_240_601 },
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        let mut c = Self::base();
        c.preset = Some(name.to_string());
        match name {
            "heat-contact" => {
                c.coefficients.sigma_kind = SigmaKindName::Linear;
                c.coefficients.sigma_coef = 0.0;
            }
            "pm-contact" => {
                c.coefficients.m = 2.0;
                c.obstacle.base = 0.6;
                c.obstacle.amp = 0.45;
                c.noise = NoiseSection { modes: 4, amplitude: 0.02, amplitude_decay: 1.0, pairing: Pairing::Homogeneous };
            }
            "fast-diffusion" => {
                c.coefficients.m = 0.5;
                c.noise = NoiseSection { modes: 4, amplitude: 0.02, amplitude_decay: 1.0, pairing: Pairing::Homogeneous };
            }
            "ode-contact" => {
                c.mesh = MeshSection { n: 8, xi_bins: 64, xi_max: Some(2.0) };
                c.time = TimeSection { horizon: 1.0, dt_policy: DtPolicyKind::Fixed, c_cfl: 0.25, dt: Some(1e-4) };
                c.coefficients.sigma_kind = SigmaKindName::Linear;
                c.coefficients.sigma_coef = 0.0;
                c.obstacle.kind = ObstacleKindName::Constant;
                c.obstacle.level = 1.0;
                c.penalty = PenaltySection { epsilon: 0.1, allow_initial_excess: true };
                c.initial.kind = InitialKind::Constant;
                c.initial.value = 1.5;
            }
            _ => return None,
        }
        Some(c)
    }

    /// Canonical text: every key spelled out, fixed order.
    pub fn to_canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// First 16 hex digits of SHA-256 over the canonical text.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_canonical().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn side(&self) -> Side {
        self.obstacle.side
    }

    pub fn obstacle_spec(&self) -> ObstacleSpec {
        let o = &self.obstacle;
        let kind = match o.kind {
            ObstacleKindName::Constant => ObstacleKind::Constant { level: o.level },
            ObstacleKindName::Trig => ObstacleKind::Trig { base: o.base, amp: o.amp, wavenumber: o.wavenumber },
            ObstacleKindName::MovingBump => ObstacleKind::MovingBump {
                base: o.base,
                height: o.height,
                width: o.width,
                center: o.center,
                speed: o.speed,
            },
            ObstacleKindName::TimeRamp => ObstacleKind::TimeRamp { base: o.base, rate: o.rate },
        };
        ObstacleSpec::new(kind, o.side)
    }

    pub fn coefficient_params(&self) -> CoefficientParams {
        let c = &self.coefficients;
        CoefficientParams {
            phi_exponent: c.m,
            sigma: match c.sigma_kind {
                SigmaKindName::SqrtPhi => SigmaKind::SqrtPhi,
                SigmaKindName::Linear => SigmaKind::Linear { coef: c.sigma_coef },
                SigmaKindName::Power => SigmaKind::Power { coef: c.sigma_coef, exponent: c.sigma_power },
            },
            g: match c.g_kind {
                GKindName::Zero => GKind::Zero,
                GKindName::Linear => GKind::Linear { b: c.b },
                GKindName::PhiTransport => GKind::PhiTransport { c: c.c },
            },
            delta_reg: c.delta_reg,
            p: c.p,
        }
    }

    pub fn noise_params(&self) -> NoiseParams {
        NoiseParams {
            modes: self.noise.modes,
            amplitude: self.noise.amplitude,
            amplitude_decay: self.noise.amplitude_decay,
            pairing: self.noise.pairing,
        }
    }

    pub fn initial_field(&self, mesh: &Mesh) -> GridField {
        let i = &self.initial;
        match i.kind {
            InitialKind::Constant => GridField::constant(mesh.n(), i.value),
            InitialKind::Trig => {
                let w = 2.0 * std::f64::consts::PI * i.wavenumber as f64;
                mesh.sample_cells(|x| i.base + i.amp * (w * x).sin())
            }
            InitialKind::Obstacle => {
                let psi = eval_obstacle(&self.obstacle_spec(), mesh, 0.0);
                GridField(psi.iter().map(|p| i.scale * p + i.offset).collect())
            }
        }
    }

    /// Validates and assembles a runnable scenario.
    pub fn build(&self) -> Result<Scenario, ConfigError> {
        self.assemble(true)
    }

    /// Runs every constraint check without the level-range probe run.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.assemble(false).map(|_| ())
    }

    fn assemble(&self, probe_levels: bool) -> Result<Scenario, ConfigError> {
        let c = self;
        let mesh = Mesh::new(c.mesh.n).map_err(|e| ConfigError::constraint("mesh.n", e.to_string()))?;
        let horizon = c.time.horizon;
        if !(horizon.is_finite() && horizon >= 0.0) {
            return Err(ConfigError::constraint("time.T", format!("horizon must be finite and >= 0, got {horizon}")));
        }
        let dt_policy = match c.time.dt_policy {
            DtPolicyKind::Cfl => {
                if !(c.time.c_cfl > 0.0 && c.time.c_cfl <= 0.5) {
                    return Err(ConfigError::constraint("time.c_cfl", "c_cfl must lie in (0, 0.5]"));
                }
                DtPolicy::Cfl { c_cfl: c.time.c_cfl }
            }
            DtPolicyKind::Fixed => match c.time.dt {
                Some(dt) if dt > 0.0 && dt.is_finite() => DtPolicy::Fixed { dt },
                Some(dt) => return Err(ConfigError::constraint("time.dt", format!("dt must be positive, got {dt}"))),
                None => return Err(ConfigError::constraint("time.dt", "dt_policy = \"fixed\" requires dt")),
            },
        };
        let coefficients = make_coefficients(c.coefficient_params()).map_err(|e| {
            let key = match e {
                crate::model::ModelError::BadExponent(_) => "coefficients.m",
                crate::model::ModelError::BadRegularization(_) => "coefficients.delta_reg",
                crate::model::ModelError::BadP(_) => "coefficients.p",
                crate::model::ModelError::BadSigma { name, .. } => {
                    if name == "sigma_power" {
                        "coefficients.sigma_power"
                    } else {
                        "coefficients.sigma_coef"
                    }
                }
                _ => "coefficients",
            };
            ConfigError::constraint(key, e.to_string())
        })?;
        let alpha = c.coefficients.alpha;
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(ConfigError::constraint("coefficients.alpha", format!("alpha must be >= 0, got {alpha}")));
        }
        let obstacle = c.obstacle_spec();
        let bound = obstacle.validate(horizon).map_err(|e| ConfigError::constraint("obstacle", e.to_string()))?;
        let specs = c.noise_params().mode_specs().map_err(|e| ConfigError::constraint("noise", e.to_string()))?;
        let modes = build_mode_set(&specs, &mesh).map_err(|e| ConfigError::constraint("noise.modes", e.to_string()))?;
        let ffields = compute_f_fields(&modes);
        let epsilon = c.penalty.epsilon;
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(ConfigError::constraint("penalty.epsilon", format!("epsilon must lie in (0, 1], got {epsilon}")));
        }
        let u_init = c.initial_field(&mesh);
        if !u_init.is_finite() || u_init.min() < 0.0 {
            return Err(ConfigError::constraint("initial", "initial datum must be finite and non-negative"));
        }
        let psi0 = eval_obstacle(&obstacle, &mesh, 0.0);
        if !c.penalty.allow_initial_excess {
            let worst = (0..mesh.n())
                .map(|i| match obstacle.side {
                    Side::Upper => u_init[i] - psi0[i],
                    Side::Lower => psi0[i] - u_init[i],
                })
                .fold(f64::NEG_INFINITY, f64::max);
            if worst > 0.0 {
                let rel = match obstacle.side {
                    Side::Upper => "u_init <= psi(.,0)",
                    Side::Lower => "u_init >= psi(.,0)",
                };
                return Err(ConfigError::constraint(
                    "initial",
                    format!("initial datum violates the obstacle constraint {rel} by {worst:.3e}"),
                ));
            }
        }
        if c.mesh.xi_bins < crate::grid::MIN_LEVEL_BINS {
            return Err(ConfigError::constraint("mesh.xi_bins", format!("xi_bins must be >= {}", crate::grid::MIN_LEVEL_BINS)));
        }
        let output_dt = c.output.output_dt.unwrap_or(horizon / 80.0);
        if horizon > 0.0 && !(output_dt > 0.0 && output_dt <= horizon) {
            return Err(ConfigError::constraint("output.output_dt", "output_dt must lie in (0, T]"));
        }
        if c.output.t_bins == 0 {
            return Err(ConfigError::constraint("output.t_bins", "t_bins must be >= 1"));
        }
        let provisional_max = 1.2 * bound.max(u_init.max());
        let levels = match c.mesh.xi_max {
            Some(x) => LevelGrid::new(x, c.mesh.xi_bins).map_err(|e| ConfigError::constraint("mesh.xi_max", e.to_string()))?,
            None => LevelGrid::new(provisional_max.max(1e-6), c.mesh.xi_bins)
                .map_err(|e| ConfigError::constraint("mesh.xi_bins", e.to_string()))?,
        };
        let (u_lo, u_hi) = (u_init.min(), u_init.max());
        let span = u_hi - u_lo;
        let (auto_lo, auto_hi) = if span > 1e-9 * u_hi.max(1.0) {
            (u_lo + 0.1 * span, u_hi - 0.1 * span)
        } else {
            let c = if u_hi > 0.0 { u_hi } else { 0.5 * levels.xi_max() };
            (0.5 * c, 1.5 * c)
        };
        let bump = LevelBump { lo: c.output.bump_lo.unwrap_or(auto_lo), hi: c.output.bump_hi.unwrap_or(auto_hi) };
        if !(bump.lo > 0.0 && bump.hi > bump.lo) {
            return Err(ConfigError::constraint("output.bump_lo", "kinetic test bump needs 0 < bump_lo < bump_hi"));
        }
        if !(c.seeds.master_seed <= i64::MAX as u64) {
            return Err(ConfigError::constraint("seeds.master_seed", "master_seed must fit in a signed 64-bit integer"));
        }
        let mut scenario = Scenario {
            mesh,
            coefficients,
            modes,
            ffields,
            obstacle,
            u_init,
            levels,
            horizon,
            dt_policy,
            epsilon,
            alpha,
            output: OutputPlan {
                output_dt: if horizon > 0.0 { output_dt } else { 1.0 },
                snapshots: c.output.snapshots,
                t_bins: c.output.t_bins,
                record_full: c.output.record_full,
                kinetic_bump: bump,
            },
            master_seed: c.seeds.master_seed,
            config_hash: c.hash(),
        };
        if probe_levels && c.mesh.xi_max.is_none() && obstacle.side == Side::Lower && horizon > 0.0 {
            // No a-priori bound from the obstacle: size the level range from a
            // probe run of path 0.
            let mut probe = scenario.clone();
            probe.output.record_full = false;
            probe.levels = LevelGrid::new(provisional_max.max(1e-6), crate::grid::MIN_LEVEL_BINS).expect("valid");
            if let Ok(rec) = run_trajectory(&probe, 0) {
                let peak = rec.max_u.max(provisional_max / 1.2);
                scenario.levels = LevelGrid::new(1.2 * peak, c.mesh.xi_bins).expect("valid");
            }
        }
        Ok(scenario)
    }

    /// Copy with a different mesh size.
    pub fn with_n(&self, n: usize) -> Self {
        let mut c = self.clone();
        c.mesh.n = n;
        c
    }
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// `section.key` for the assignment on `line` (1-based).
fn key_path_at(text: &str, line: usize) -> String {
    let mut section = String::new();
    for (k, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if l.starts_with('[') {
            section = l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
        }
        if k + 1 == line {
            if let Some((key, _)) = l.split_once('=') {
                let key = key.trim().trim_matches('"');
                return if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            }
            return section;
        }
    }
    section
}

/// Line of `key` inside `[section]`, if the document spells it out; a path
/// without a dot names a top-level key or, failing that, a section header.
fn line_of_key(text: &str, key_path: &str) -> Option<usize> {
    let (section, key) = key_path.split_once('.').unwrap_or(("", key_path));
    let mut current = String::new();
    let mut header = None;
    for (k, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if l.starts_with('[') {
            current = l.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            if current == section || (section.is_empty() && current == key) {
                header = header.or(Some(k + 1));
            }
            continue;
        }
        if current == section {
            if let Some((lhs, _)) = l.split_once('=') {
                if lhs.trim().trim_matches('"') == key {
                    return Some(k + 1);
                }
            }
        }
    }
    header
}

fn classify(message: &str) -> ConfigErrorKind {
    if message.contains("unknown field") {
        ConfigErrorKind::UnknownKey
    } else if message.contains("invalid type") || message.contains("unknown variant") || message.contains("invalid value") {
        ConfigErrorKind::TypeMismatch
    } else {
        ConfigErrorKind::Syntax
    }
}

/// Parses the document into a config, expanding `preset` and applying
/// overrides key by key. Does not run the constraint checks; see
/// [`parse_config`].
pub fn parse_document(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let doc: PartialDocument = toml::from_str(text).map_err(|e| {
        let message = e.message().to_string();
        let line = e.span().map(|s| line_of_offset(text, s.start));
        let key_path = line.map(|l| key_path_at(text, l)).unwrap_or_default();
        ConfigError { kind: classify(&message), line, key_path, message }
    })?;
    let mut config = match doc.preset.as_deref() {
        Some(name) => ScenarioConfig::preset(name).ok_or_else(|| ConfigError {
            kind: ConfigErrorKind::UnknownPreset,
            line: line_of_key(text, "preset"),
            key_path: "preset".into(),
            message: format!("unknown preset `{name}`; known: {}", PRESETS.map(|p| p.0).join(", ")),
        })?,
        None => ScenarioConfig::base(),
    };
    macro_rules! overlay {
        ($($f:ident),*) => { $(if let Some(p) = doc.$f { p.apply(&mut config.$f); })* };
    }
    overlay!(mesh, time, coefficients, obstacle, noise, penalty, initial, output, seeds);
    Ok(config)
}

/// Parses and validates; constraint errors carry the offending line when the
/// document spells the key out.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let config = parse_document(text)?;
    match config.validate() {
        Ok(_) => Ok(config),
        Err(mut e) => {
            e.line = line_of_key(text, &e.key_path);
            Err(e)
        }
    }
}

/// Resolves `--config`: a preset name or a path to a document.
pub fn load_config(arg: &str) -> Result<ScenarioConfig, ConfigError> {
    if let Some(c) = ScenarioConfig::preset(arg) {
        return Ok(c);
    }
    let text = std::fs::read_to_string(arg).map_err(|e| ConfigError {
        kind: ConfigErrorKind::Syntax,
        line: None,
        key_path: String::new(),
        message: format!("cannot read `{arg}`: {e}"),
    })?;
    parse_config(&text)
}

/// Parses a comma-separated list of penalty scales, e.g. `0.1,0.05,0.025`.
pub fn parse_eps_list(text: &str) -> Result<Vec<f64>, ConfigError> {
    let bad = |m: String| ConfigError { kind: ConfigErrorKind::Syntax, line: None, key_path: "eps".into(), message: m };
    let list = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|e| bad(format!("`{}`: {e}", s.trim()))))
        .collect::<Result<Vec<_>, _>>()?;
    if list.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(bad("every epsilon must lie in (0, 1]".into()));
    }
    Ok(list)
}
