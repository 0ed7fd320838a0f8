//! Truncated conservative noise `Σ_k f_k(x) B^k_t` built from trigonometric
//! modes, its structure fields, and counter-based Brownian increments.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{divergence, FaceField, GridField, Mesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("mode {index}: wavenumber {wavenumber} is not resolvable on {n} cells (limit n/4)")]
    Unresolvable { index: usize, wavenumber: u32, n: usize },
    #[error("mode {index}: amplitude {amplitude} is not finite")]
    BadAmplitude { index: usize, amplitude: f64 },
    #[error("time step must be positive, got {0}")]
    NonPositiveStep(f64),
    #[error("homogeneous pairing needs an even mode count, got {0}")]
    OddPairCount(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Cosine,
    Sine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub amplitude: f64,
    pub wavenumber: u32,
    pub phase: Phase,
}

impl ModeSpec {
    pub fn new(amplitude: f64, wavenumber: u32, phase: Phase) -> Self {
        Self { amplitude, wavenumber, phase }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        let arg = 2.0 * PI * self.wavenumber as f64 * x;
        match self.phase {
            Phase::Cosine => self.amplitude * arg.cos(),
            Phase::Sine => self.amplitude * arg.sin(),
        }
    }

    #[inline]
    pub fn derivative(&self, x: f64) -> f64 {
        let w = 2.0 * PI * self.wavenumber as f64;
        let arg = w * x;
        match self.phase {
            Phase::Cosine => -self.amplitude * w * arg.sin(),
            Phase::Sine => self.amplitude * w * arg.cos(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// cos/sin pairs of equal amplitude per wavenumber.
    Homogeneous,
    /// One cosine mode per wavenumber.
    Single,
}

/// User-facing noise block: `K` modes with amplitudes `a0 * k^(-decay)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams {
    pub modes: usize,
    pub amplitude: f64,
    pub amplitude_decay: f64,
    pub pairing: Pairing,
}

impl NoiseParams {
    pub fn silent() -> Self {
        Self { modes: 0, amplitude: 0.0, amplitude_decay: 1.0, pairing: Pairing::Homogeneous }
    }

    pub fn mode_specs(&self) -> Result<Vec<ModeSpec>, NoiseError> {
        let amp = |k: u32| self.amplitude * (k as f64).powf(-self.amplitude_decay);
        match self.pairing {
            Pairing::Homogeneous => {
                if self.modes % 2 != 0 {
                    return Err(NoiseError::OddPairCount(self.modes));
                }
                Ok((1..=(self.modes / 2) as u32)
                    .flat_map(|k| {
                        [ModeSpec::new(amp(k), k, Phase::Cosine), ModeSpec::new(amp(k), k, Phase::Sine)]
                    })
                    .collect())
            }
            Pairing::Single => {
                Ok((1..=self.modes as u32).map(|k| ModeSpec::new(amp(k), k, Phase::Cosine)).collect())
            }
        }
    }
}

/// Sampled modes: `f_k` at cells and faces, `∇f_k` at faces and cells.
#[derive(Debug, Clone)]
pub struct ModeSet {
    mesh: Mesh,
    specs: Vec<ModeSpec>,
    cell_values: Vec<Vec<f64>>,
    face_values: Vec<Vec<f64>>,
    face_gradients: Vec<Vec<f64>>,
    cell_gradients: Vec<Vec<f64>>,
}

pub fn build_mode_set(specs: &[ModeSpec], mesh: &Mesh) -> Result<ModeSet, NoiseError> {
    let n = mesh.n();
    for (index, s) in specs.iter().enumerate() {
        if !s.amplitude.is_finite() {
            return Err(NoiseError::BadAmplitude { index, amplitude: s.amplitude });
        }
        if s.wavenumber as usize * 4 > n {
            return Err(NoiseError::Unresolvable { index, wavenumber: s.wavenumber, n });
        }
    }
    let at_cells = |f: &dyn Fn(f64) -> f64| (0..n).map(|i| f(mesh.center(i))).collect::<Vec<_>>();
    let at_faces = |f: &dyn Fn(f64) -> f64| (0..n).map(|i| f(mesh.face(i))).collect::<Vec<_>>();
    Ok(ModeSet {
        mesh: *mesh,
        specs: specs.to_vec(),
        cell_values: specs.iter().map(|s| at_cells(&|x| s.value(x))).collect(),
        face_values: specs.iter().map(|s| at_faces(&|x| s.value(x))).collect(),
        face_gradients: specs.iter().map(|s| at_faces(&|x| s.derivative(x))).collect(),
        cell_gradients: specs.iter().map(|s| at_cells(&|x| s.derivative(x))).collect(),
    })
}

impl ModeSet {
    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn specs(&self) -> &[ModeSpec] {
        &self.specs
    }

    pub fn cell_values(&self, k: usize) -> &[f64] {
        &self.cell_values[k]
    }

    pub fn face_values(&self, k: usize) -> &[f64] {
        &self.face_values[k]
    }

    pub fn face_gradients(&self, k: usize) -> &[f64] {
        &self.face_gradients[k]
    }

    pub fn cell_gradients(&self, k: usize) -> &[f64] {
        &self.cell_gradients[k]
    }

    /// True when every wavenumber carries a cos/sin pair of equal amplitude
    /// (the constant mode `k = 0` counts as paired on its own).
    pub fn is_homogeneously_paired(&self) -> bool {
        let mut by_k: std::collections::BTreeMap<u32, (f64, f64)> = Default::default();
        for s in &self.specs {
            let e = by_k.entry(s.wavenumber).or_insert((0.0, 0.0));
            match s.phase {
                Phase::Cosine => e.0 += s.amplitude * s.amplitude,
                Phase::Sine => e.1 += s.amplitude * s.amplitude,
            }
        }
        by_k.iter().all(|(&k, &(c, s))| k == 0 || c == s)
    }
}

/// Structure fields of the noise.
#[derive(Debug, Clone, PartialEq)]
pub struct FFields {
    /// `Σ f_k²` at cells.
    pub f1: GridField,
    /// `Σ f_k²` at faces.
    pub f1_faces: FaceField,
    /// `½ Σ ∇(f_k²)` at faces.
    pub f2: FaceField,
    /// `Σ |∇f_k|²` at cells.
    pub f3: GridField,
    /// `divergence(f2)`.
    pub div_f2: GridField,
}

impl FFields {
    /// `F2` averaged onto cells.
    pub fn f2_at_cell(&self, mesh: &Mesh, i: usize) -> f64 {
        0.5 * (self.f2[i] + self.f2[mesh.next(i)])
    }
}

pub fn compute_f_fields(modes: &ModeSet) -> FFields {
    let mesh = *modes.mesh();
    let n = mesh.n();
    let mut f1 = GridField::zeros(n);
    let mut f1_faces = FaceField::zeros(n);
    let mut f2 = FaceField::zeros(n);
    let mut f3 = GridField::zeros(n);
    for k in 0..modes.len() {
        let (cv, fv, fg, cg) =
            (modes.cell_values(k), modes.face_values(k), modes.face_gradients(k), modes.cell_gradients(k));
        for i in 0..n {
            f1[i] += cv[i] * cv[i];
            f1_faces[i] += fv[i] * fv[i];
            f2[i] += fv[i] * fg[i];
            f3[i] += cg[i] * cg[i];
        }
    }
    let div_f2 = divergence(&mesh, &f2);
    FFields { f1, f1_faces, f2, f3, div_f2 }
}

/// Identifies one Brownian path: every increment is a pure function of
/// `(master_seed, path_id, step, mode)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngKey {
    pub master_seed: u64,
    pub path_id: u64,
}

impl RngKey {
    pub fn new(master_seed: u64, path_id: u64) -> Self {
        Self { master_seed, path_id }
    }

    fn step_seed(&self, step: u64) -> [u8; 32] {
        let mut state = splitmix64(self.master_seed ^ 0x6a09_e667_f3bc_c909);
        state = splitmix64(state ^ self.path_id.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        state = splitmix64(state ^ step.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        let mut seed = [0u8; 32];
        for chunk in seed.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        seed
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `K` independent `N(0, dt)` draws for `(key, step)`; draw `k` drives mode `k`.
pub fn sample_increments(key: RngKey, step: u64, modes: usize, dt: f64) -> Result<Vec<f64>, NoiseError> {
    let mut out = vec![0.0; modes];
    sample_increments_into(key, step, dt, &mut out)?;
    Ok(out)
}

pub fn sample_increments_into(key: RngKey, step: u64, dt: f64, out: &mut [f64]) -> Result<(), NoiseError> {
    if !(dt > 0.0) {
        return Err(NoiseError::NonPositiveStep(dt));
    }
    if out.is_empty() {
        return Ok(());
    }
    let mut rng = ChaCha12Rng::from_seed(key.step_seed(step));
    let scale = dt.sqrt();
    for v in out.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut rng);
        *v = scale * z;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{face_gradient, Mesh};

    fn mesh(n: usize) -> Mesh {
        Mesh::new(n).unwrap()
    }

    #[test]
    fn constant_mode() {
        let m = mesh(16);
        let set = build_mode_set(&[ModeSpec::new(1.0, 0, Phase::Cosine)], &m).unwrap();
        assert!(set.cell_values(0).iter().all(|v| *v == 1.0));
        assert!(set.face_gradients(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn pair_samples_at_centers() {
        let m = mesh(16);
        let set = build_mode_set(
            &[ModeSpec::new(1.0, 1, Phase::Cosine), ModeSpec::new(1.0, 1, Phase::Sine)],
            &m,
        )
        .unwrap();
        for i in 0..16 {
            let x = m.center(i);
            assert!((set.cell_values(0)[i] - (2.0 * PI * x).cos()).abs() < 1e-15);
            assert!((set.cell_values(1)[i] - (2.0 * PI * x).sin()).abs() < 1e-15);
        }
        assert!(set.is_homogeneously_paired());
    }

    #[test]
    fn analytic_face_derivative() {
        let m = mesh(16);
        let set = build_mode_set(&[ModeSpec::new(2.0, 3, Phase::Sine)], &m).unwrap();
        for i in 0..16 {
            let x = m.face(i);
            let expect = 2.0 * (2.0 * PI * 3.0) * (6.0 * PI * x).cos();
            assert!((set.face_gradients(0)[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_unresolvable_mode() {
        let m = mesh(16);
        let err = build_mode_set(&[ModeSpec::new(1.0, 1, Phase::Cosine), ModeSpec::new(1.0, 5, Phase::Sine)], &m)
            .unwrap_err();
        assert_eq!(err, NoiseError::Unresolvable { index: 1, wavenumber: 5, n: 16 });
    }

    #[test]
    fn homogeneous_pair_fields() {
        let m = mesh(32);
        let set = build_mode_set(
            &[ModeSpec::new(1.0, 1, Phase::Cosine), ModeSpec::new(1.0, 1, Phase::Sine)],
            &m,
        )
        .unwrap();
        let ff = compute_f_fields(&set);
        let w2 = (2.0 * PI).powi(2);
        for i in 0..32 {
            assert!((ff.f1[i] - 1.0).abs() < 1e-14);
            assert!(ff.f2[i].abs() < 1e-14);
            assert!((ff.f3[i] - w2).abs() < 1e-12);
        }
        assert!(ff.div_f2.max_abs() < 1e-11);
    }

    #[test]
    fn single_cosine_fields() {
        let m = mesh(64);
        let a = 0.7;
        let set = build_mode_set(&[ModeSpec::new(a, 1, Phase::Cosine)], &m).unwrap();
        let ff = compute_f_fields(&set);
        for i in 0..64 {
            let (xc, xf) = (m.center(i), m.face(i));
            assert!((ff.f1[i] - a * a * (2.0 * PI * xc).cos().powi(2)).abs() < 1e-14);
            assert!((ff.f2[i] + PI * a * a * (4.0 * PI * xf).sin()).abs() < 1e-13);
            assert!((ff.f3[i] - (2.0 * PI * a).powi(2) * (2.0 * PI * xc).sin().powi(2)).abs() < 1e-12);
            // Discrete divergence of exact face values: second order in h.
            let exact = -4.0 * PI * PI * a * a * (4.0 * PI * xc).cos();
            assert!((ff.div_f2[i] - exact).abs() < 20.0 * m.h() * m.h() * 4.0 * PI * PI);
        }
    }

    #[test]
    fn empty_mode_set_gives_zero_fields() {
        let m = mesh(16);
        let ff = compute_f_fields(&build_mode_set(&[], &m).unwrap());
        assert!(ff.f1.max_abs() == 0.0 && ff.f2.max_abs() == 0.0 && ff.f3.max_abs() == 0.0);
    }

    #[test]
    fn div_f2_tracks_half_laplacian_of_f1() {
        // The two routes agree to O(h^2) and exactly in the paired case.
        let mut errs = Vec::new();
        for n in [32usize, 64, 128] {
            let m = mesh(n);
            let set = build_mode_set(&[ModeSpec::new(1.0, 1, Phase::Cosine), ModeSpec::new(0.5, 2, Phase::Sine)], &m)
                .unwrap();
            let ff = compute_f_fields(&set);
            let lap = divergence(&m, &face_gradient(&m, &ff.f1));
            errs.push((0..n).map(|i| (ff.div_f2[i] - 0.5 * lap[i]).abs()).fold(0.0, f64::max));
        }
        assert!((errs[0] / errs[1]).log2() > 1.8);
        assert!((errs[1] / errs[2]).log2() > 1.8);
    }

    #[test]
    fn increments_are_deterministic() {
        let key = RngKey::new(7, 3);
        let a = sample_increments(key, 11, 4, 0.01).unwrap();
        let b = sample_increments(key, 11, 4, 0.01).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_increments(key, 12, 4, 0.01).unwrap());
        assert!(sample_increments(key, 0, 4, 0.0).is_err());
        assert!(sample_increments(key, 0, 4, -1.0).is_err());
    }

    #[test]
    fn increment_moments() {
        let key = RngKey::new(2024, 0);
        let dt = 0.01;
        let n = 100_000u64;
        let draws: Vec<f64> = (0..n).map(|s| sample_increments(key, s, 1, dt).unwrap()[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 4.0 * (dt / n as f64).sqrt(), "mean {mean}");
        assert!((var / dt - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn distinct_paths_are_uncorrelated() {
        let (k1, k2) = (RngKey::new(99, 0), RngKey::new(99, 1));
        let n = 100_000u64;
        let a: Vec<f64> = (0..n).map(|s| sample_increments(k1, s, 1, 1.0).unwrap()[0]).collect();
        let b: Vec<f64> = (0..n).map(|s| sample_increments(k2, s, 1, 1.0).unwrap()[0]).collect();
        let corr = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / n as f64;
        assert!(corr.abs() < 0.01, "corr {corr}");
    }

    #[test]
    fn preset_modes() {
        let p = NoiseParams { modes: 4, amplitude: 0.1, amplitude_decay: 1.0, pairing: Pairing::Homogeneous };
        let specs = p.mode_specs().unwrap();
        assert_eq!(specs.len(), 4);
        assert_eq!(specs[2].wavenumber, 2);
        assert!((specs[2].amplitude - 0.05).abs() < 1e-15);
        let odd = NoiseParams { modes: 3, ..p };
        assert!(odd.mode_specs().is_err());
        assert_eq!(NoiseParams { pairing: Pairing::Single, ..odd }.mode_specs().unwrap().len(), 3);
    }
}
