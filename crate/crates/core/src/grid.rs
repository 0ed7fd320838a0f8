//! Uniform periodic finite-volume mesh on the unit torus.
//!
//! Cell `i` covers `[i h, (i + 1) h)` with center `(i + 1/2) h`. Face `i` sits
//! at `x = i h`, between cell `i - 1` (mod n) and cell `i`. Every transport term
//! in the solver is written as a face flux followed by [`divergence`], so
//! conservation is exact up to round-off.

use std::f64::consts::PI;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest admissible cell count.
pub const MIN_CELLS: usize = 8;
/// Smallest admissible number of kinetic level bins.
pub const MIN_LEVEL_BINS: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("mesh needs at least {MIN_CELLS} cells, got {0}")]
    TooFewCells(usize),
    #[error("level grid needs at least {MIN_LEVEL_BINS} bins, got {0}")]
    TooFewBins(usize),
    #[error("level grid upper bound must be positive and finite, got {0}")]
    BadLevelRange(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    n: usize,
    h: f64,
}

impl Mesh {
    pub fn new(n: usize) -> Result<Self, GridError> {
        if n < MIN_CELLS {
            return Err(GridError::TooFewCells(n));
        }
        Ok(Self { n, h: 1.0 / n as f64 })
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn h(&self) -> f64 {
        self.h
    }

    #[inline]
    pub fn center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h
    }

    #[inline]
    pub fn face(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    #[inline]
    pub fn prev(&self, i: usize) -> usize {
        if i == 0 {
            self.n - 1
        } else {
            i - 1
        }
    }

    #[inline]
    pub fn next(&self, i: usize) -> usize {
        if i + 1 == self.n {
            0
        } else {
            i + 1
        }
    }

    /// Samples `f` at cell centers.
    pub fn sample_cells(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField((0..self.n).map(|i| f(self.center(i))).collect())
    }

    /// Samples `f` at faces.
    pub fn sample_faces(&self, f: impl Fn(f64) -> f64) -> FaceField {
        FaceField((0..self.n).map(|i| f(self.face(i))).collect())
    }
}

macro_rules! field_type {
    ($name:ident, $doc:literal) => {
        #[doc = $doc]
        #[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
        pub struct $name(pub Vec<f64>);

        impl $name {
            pub fn zeros(n: usize) -> Self {
                Self(vec![0.0; n])
            }

            pub fn constant(n: usize, value: f64) -> Self {
                Self(vec![value; n])
            }

            pub fn len(&self) -> usize {
                self.0.len()
            }

            pub fn is_empty(&self) -> bool {
                self.0.is_empty()
            }

            pub fn values(&self) -> &[f64] {
                &self.0
            }

            pub fn values_mut(&mut self) -> &mut [f64] {
                &mut self.0
            }

            pub fn iter(&self) -> std::slice::Iter<'_, f64> {
                self.0.iter()
            }

            pub fn is_finite(&self) -> bool {
                self.0.iter().all(|v| v.is_finite())
            }

            pub fn max(&self) -> f64 {
                self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }

            pub fn min(&self) -> f64 {
                self.0.iter().copied().fold(f64::INFINITY, f64::min)
            }

            pub fn max_abs(&self) -> f64 {
                self.0.iter().fold(0.0, |acc, v| acc.max(v.abs()))
            }
        }

        impl Index<usize> for $name {
            type Output = f64;
            #[inline]
            fn index(&self, i: usize) -> &f64 {
                &self.0[i]
            }
        }

        impl IndexMut<usize> for $name {
            #[inline]
            fn index_mut(&mut self, i: usize) -> &mut f64 {
                &mut self.0[i]
            }
        }

        impl From<Vec<f64>> for $name {
            fn from(v: Vec<f64>) -> Self {
                Self(v)
            }
        }
    };
}

field_type!(GridField, "Cell-averaged values, one per cell.");
field_type!(FaceField, "Face values; entry `i` lives at `x = i h`.");

/// `g_i = (f_i - f_{i-1}) / h`, written into `out`.
pub fn face_gradient_into(mesh: &Mesh, f: &[f64], out: &mut [f64]) {
    let n = mesh.n();
    let inv_h = 1.0 / mesh.h();
    out[0] = (f[0] - f[n - 1]) * inv_h;
    for i in 1..n {
        out[i] = (f[i] - f[i - 1]) * inv_h;
    }
}

/// `d_i = (F_{i+1} - F_i) / h`, written into `out`.
pub fn divergence_into(mesh: &Mesh, faces: &[f64], out: &mut [f64]) {
    let n = mesh.n();
    let inv_h = 1.0 / mesh.h();
    for i in 0..n - 1 {
        out[i] = (faces[i + 1] - faces[i]) * inv_h;
    }
    out[n - 1] = (faces[0] - faces[n - 1]) * inv_h;
}

pub fn face_gradient(mesh: &Mesh, f: &GridField) -> FaceField {
    let mut out = FaceField::zeros(mesh.n());
    face_gradient_into(mesh, f.values(), out.values_mut());
    out
}

pub fn divergence(mesh: &Mesh, faces: &FaceField) -> GridField {
    let mut out = GridField::zeros(mesh.n());
    divergence_into(mesh, faces.values(), out.values_mut());
    out
}

/// Arithmetic average of the two cells adjacent to each face.
pub fn face_average(mesh: &Mesh, f: &GridField) -> FaceField {
    let n = mesh.n();
    FaceField((0..n).map(|i| 0.5 * (f[mesh.prev(i)] + f[i])).collect())
}

/// Face-averaged gradient at cell centers, `(f_{i+1} - f_{i-1}) / 2h`.
#[inline]
pub fn centered_gradient(mesh: &Mesh, f: &[f64], i: usize) -> f64 {
    (f[mesh.next(i)] - f[mesh.prev(i)]) * (0.5 / mesh.h())
}

/// Discrete Fourier symbol of `divergence(face_gradient(.))` for wavenumber `k`.
pub fn laplacian_symbol(mesh: &Mesh, k: f64) -> f64 {
    let h = mesh.h();
    -(2.0 / (h * h)) * (1.0 - (2.0 * PI * k * h).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Norm {
    L1,
    L2,
    LInf,
    /// Plain quadrature `h Σ f_i`.
    Signed,
}

pub fn integrate(mesh: &Mesh, f: &[f64], norm: Norm) -> f64 {
    let h = mesh.h();
    match norm {
        Norm::L1 => h * f.iter().map(|v| v.abs()).sum::<f64>(),
        Norm::L2 => (h * f.iter().map(|v| v * v).sum::<f64>()).sqrt(),
        Norm::LInf => f.iter().fold(0.0, |acc, v| acc.max(v.abs())),
        Norm::Signed => h * f.iter().sum::<f64>(),
    }
}

/// Uniform bins on `[0, xi_max]` for the kinetic variable, plus one overflow
/// bin (index `nbins`) for levels above `xi_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelGrid {
    xi_max: f64,
    nbins: usize,
}

impl LevelGrid {
    pub fn new(xi_max: f64, nbins: usize) -> Result<Self, GridError> {
        if !(xi_max.is_finite() && xi_max > 0.0) {
            return Err(GridError::BadLevelRange(xi_max));
        }
        if nbins < MIN_LEVEL_BINS {
            return Err(GridError::TooFewBins(nbins));
        }
        Ok(Self { xi_max, nbins })
    }

    /// Default range covering `1.2 * max(bound, max_initial)`.
    pub fn auto(bound: f64, max_initial: f64, nbins: usize) -> Result<Self, GridError> {
        Self::new(1.2 * bound.max(max_initial), nbins)
    }

    #[inline]
    pub fn xi_max(&self) -> f64 {
        self.xi_max
    }

    #[inline]
    pub fn nbins(&self) -> usize {
        self.nbins
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.xi_max / self.nbins as f64
    }

    #[inline]
    pub fn edge(&self, j: usize) -> f64 {
        j as f64 * self.width()
    }

    #[inline]
    pub fn center(&self, j: usize) -> f64 {
        (j as f64 + 0.5) * self.width()
    }

    /// Bin containing `xi`; levels `<= 0` land in bin 0 and levels
    /// `>= xi_max` in the overflow bin.
    #[inline]
    pub fn bin_of(&self, xi: f64) -> usize {
        if xi <= 0.0 {
            return 0;
        }
        let j = (xi / self.width()) as usize;
        j.min(self.nbins)
    }

    #[inline]
    pub fn is_overflow(&self, j: usize) -> bool {
        j >= self.nbins
    }
}
