//! Field-of-view geometry.
//!
//! A [`FovGrid`] is a rectangular voxel grid in physical (meter) coordinates,
//! centered on the origin, together with a voxel support mask and the Larmor
//! frequency of the scanner. All field and encoding computations take their
//! geometry from here; axis 0 ↦ x, axis 1 ↦ y, axis 2 ↦ z, and 2D slices are
//! grids with a single voxel along z.

use ndarray::{Array1, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::C64;

/// Gyromagnetic ratio of ¹H in Hz per tesla.
pub const GAMMA_HZ_PER_TESLA: f64 = 42.577e6;
/// Vacuum permittivity (F/m).
pub const EPSILON_0: f64 = 8.8541878128e-12;
/// Vacuum permeability (H/m).
pub const MU_0: f64 = 1.25663706212e-6;

/// Voxel support inside the rectangular field of view.
#[derive(Debug, Clone, PartialEq)]
pub enum Support {
    /// Every voxel belongs to the support.
    Full,
    /// Voxels whose centroid lies within an in-plane disc (a cylinder in 3D).
    /// `None` uses the largest disc inscribed in the in-plane extent.
    Circular { diameter_m: Option<f64> },
    /// Explicit per-voxel mask with the grid's dimensions.
    Mask(Array3<bool>),
}

/// Rectangular field of view: voxel counts, voxel size, physical origin,
/// support mask, and Larmor frequency.
///
/// The grid is centered: the physical FOV spans `[-extent/2, extent/2]` per
/// axis and voxel `(i, j, k)` has its centroid at
/// `origin + (index + 0.5) * voxel_size`.
#[derive(Debug, Clone, PartialEq)]
pub struct FovGrid {
    dims: [usize; 3],
    voxel_size: [f64; 3],
    origin: [f64; 3],
    larmor_hz: f64,
    support: Array3<bool>,
    /// Flat (row-major) indices of support voxels, ascending.
    support_flat: Vec<usize>,
}

/// Plain-data grid header used for container metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridMeta {
    pub dims: [usize; 3],
    pub voxel_size: [f64; 3],
    pub origin: [f64; 3],
    pub larmor_hz: f64,
}

impl FovGrid {
    /// Build a centered grid. `b0_tesla` fixes the Larmor frequency as
    /// 42.577 MHz/T · B₀.
    pub fn new(dims: [usize; 3], voxel_size: [f64; 3], b0_tesla: f64, support: Support) -> Result<Self> {
        Self::with_larmor(dims, voxel_size, GAMMA_HZ_PER_TESLA * b0_tesla, support)
    }

    /// Build a centered grid with an explicit Larmor frequency in Hz.
    pub fn with_larmor(dims: [usize; 3], voxel_size: [f64; 3], larmor_hz: f64, support: Support) -> Result<Self> {
        if dims.iter().any(|&n| n == 0) {
            return Err(Error::InvalidGrid(format!("zero voxel count in dims {dims:?}")));
        }
        if voxel_size.iter().any(|&d| !(d > 0.0) || !d.is_finite()) {
            return Err(Error::InvalidGrid(format!("non-positive voxel size {voxel_size:?}")));
        }
        if !(larmor_hz > 0.0) || !larmor_hz.is_finite() {
            return Err(Error::InvalidGrid(format!("non-positive Larmor frequency {larmor_hz}")));
        }
        let origin = [
            -0.5 * dims[0] as f64 * voxel_size[0],
            -0.5 * dims[1] as f64 * voxel_size[1],
            -0.5 * dims[2] as f64 * voxel_size[2],
        ];
        let mask = match support {
            Support::Full => Array3::from_elem((dims[0], dims[1], dims[2]), true),
            Support::Circular { diameter_m } => {
                let d = diameter_m
                    .unwrap_or_else(|| (dims[0] as f64 * voxel_size[0]).min(dims[1] as f64 * voxel_size[1]));
                if !(d > 0.0) {
                    return Err(Error::InvalidGrid(format!("non-positive support diameter {d}")));
                }
                let r2 = 0.25 * d * d;
                Array3::from_shape_fn((dims[0], dims[1], dims[2]), |(i, j, _)| {
                    let x = origin[0] + (i as f64 + 0.5) * voxel_size[0];
                    let y = origin[1] + (j as f64 + 0.5) * voxel_size[1];
                    x * x + y * y <= r2
                })
            }
            Support::Mask(m) => {
                if m.dim() != (dims[0], dims[1], dims[2]) {
                    return Err(Error::InvalidGrid(format!(
                        "support mask shape {:?} does not match dims {dims:?}",
                        m.dim()
                    )));
                }
                m
            }
        };
        let support_flat: Vec<usize> = mask.iter().enumerate().filter_map(|(i, &s)| s.then_some(i)).collect();
        if support_flat.is_empty() {
            return Err(Error::InvalidGrid("empty support".into()));
        }
        Ok(Self { dims, voxel_size: voxel_size.map(|v| v), origin, larmor_hz, support: mask, support_flat })
    }

    /// Rebuild from a stored header plus mask (container deserialization).
    pub fn from_parts(meta: GridMeta, mask: Array3<bool>) -> Result<Self> {
        let g = Self::with_larmor(meta.dims, meta.voxel_size, meta.larmor_hz, Support::Mask(mask))?;
        // A stored grid carries its own origin; trust it over the centered default.
        Ok(Self { origin: meta.origin, ..g })
    }

    pub fn meta(&self) -> GridMeta {
        GridMeta { dims: self.dims, voxel_size: self.voxel_size, origin: self.origin, larmor_hz: self.larmor_hz }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    pub fn larmor_hz(&self) -> f64 {
        self.larmor_hz
    }

    /// Physical FOV extent per axis in meters.
    pub fn extent(&self) -> [f64; 3] {
        [
            self.dims[0] as f64 * self.voxel_size[0],
            self.dims[1] as f64 * self.voxel_size[1],
            self.dims[2] as f64 * self.voxel_size[2],
        ]
    }

    /// Free-space wavenumber k = 2πf·√(ε₀μ₀) at the Larmor frequency.
    pub fn wavenumber(&self) -> f64 {
        2.0 * std::f64::consts::PI * self.larmor_hz * (EPSILON_0 * MU_0).sqrt()
    }

    pub fn is_2d(&self) -> bool {
        self.dims[2] == 1
    }

    /// Total voxel count n1·n2·n3.
    pub fn n_voxels(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    /// Number of support voxels N.
    pub fn n_support(&self) -> usize {
        self.support_flat.len()
    }

    pub fn support(&self) -> &Array3<bool> {
        &self.support
    }

    /// Flat row-major indices of support voxels, ascending.
    pub fn support_indices(&self) -> &[usize] {
        &self.support_flat
    }

    /// Centroid of the voxel at flat row-major index.
    pub fn centroid_flat(&self, flat: usize) -> [f64; 3] {
        let (n2, n3) = (self.dims[1], self.dims[2]);
        let i = flat / (n2 * n3);
        let j = (flat / n3) % n2;
        let k = flat % n3;
        self.centroid(i, j, k)
    }

    pub fn centroid(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.origin[0] + (i as f64 + 0.5) * self.voxel_size[0],
            self.origin[1] + (j as f64 + 0.5) * self.voxel_size[1],
            self.origin[2] + (k as f64 + 0.5) * self.voxel_size[2],
        ]
    }

    /// Scatter a support-ordered vector onto the full grid (zeros elsewhere).
    pub fn embed(&self, v: &Array1<C64>) -> Array3<C64> {
        assert_eq!(v.len(), self.n_support(), "support vector length mismatch");
        let mut out = Array3::zeros((self.dims[0], self.dims[1], self.dims[2]));
        {
            let flat = out.as_slice_mut().expect("contiguous");
            for (pos, &idx) in self.support_flat.iter().enumerate() {
                flat[idx] = v[pos];
            }
        }
        out
    }

    /// Gather grid values at support voxels into a support-ordered vector.
    pub fn restrict(&self, m: &Array3<C64>) -> Array1<C64> {
        assert_eq!(m.dim(), (self.dims[0], self.dims[1], self.dims[2]), "grid shape mismatch");
        let flat = m.as_slice().expect("contiguous");
        Array1::from_iter(self.support_flat.iter().map(|&idx| flat[idx]))
    }
}
