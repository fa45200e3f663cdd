//! Sensitivity-map bases from randomized boundary excitations.
//!
//! Receive coils produce fields that solve the source-free Maxwell equations
//! inside the FOV, so any physical sensitivity map lies (to high accuracy) in
//! the range of the boundary-to-FOV field operators. That range is sampled by
//! superposing the fields of boundary dipoles with random complex amplitudes;
//! a thin SVD of the sample matrix yields an orthonormal, spectrally ordered
//! basis whose column prefixes are themselves valid bases.

use ndarray::{linalg::general_mat_mul, Array1, Array2, Array3, ArrayView2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fields::{b1_minus_column, DipoleSet};
use crate::grid::FovGrid;
use crate::linalg::thin_svd;
use crate::C64;

/// Columns are receive-field samples at support voxels, one per excitation.
#[derive(Debug, Clone)]
pub struct SampleMatrix {
    /// N × n_s, N = number of support voxels.
    pub matrix: Array2<C64>,
    /// Seed used to draw excitation amplitudes.
    pub seed: u64,
}

impl SampleMatrix {
    pub fn n_excitations(&self) -> usize {
        self.matrix.ncols()
    }
}

/// Dipole columns are assembled in chunks of this many sources so the dense
/// dipole-field matrix never materializes at volumetric scale.
const CHUNK: usize = 128;

/// Superpose dipole fields with explicit amplitudes: result = D · weights,
/// where column d of D holds the receive samples of `dipoles[d]`.
///
/// `weights` has one row per dipole and one column per excitation.
pub fn superpose_fields(grid: &FovGrid, dipoles: &DipoleSet, weights: ArrayView2<'_, C64>) -> Array2<C64> {
    assert_eq!(weights.nrows(), dipoles.len(), "one weight row per dipole");
    let n = grid.n_support();
    let n_s = weights.ncols();
    let mut acc = Array2::zeros((n, n_s));
    let mut chunk_cols = Array2::zeros((n, CHUNK));
    let mut start = 0;
    while start < dipoles.len() {
        let end = (start + CHUNK).min(dipoles.len());
        let width = end - start;
        for (local, dip) in dipoles.dipoles[start..end].iter().enumerate() {
            let col = b1_minus_column(grid, dip);
            chunk_cols.column_mut(local).assign(&col);
        }
        general_mat_mul(
            C64::new(1.0, 0.0),
            &chunk_cols.slice(ndarray::s![.., ..width]),
            &weights.slice(ndarray::s![start..end, ..]),
            C64::new(1.0, 0.0),
            &mut acc,
        );
        start = end;
    }
    acc
}

/// Draw i.i.d. complex standard-normal amplitudes (unit total variance per
/// entry) for every (dipole, excitation) pair. The draw order is fixed
/// (dipole-major), so a seed pins the sample matrix bit-for-bit.
pub fn excitation_weights(n_dipoles: usize, n_s: usize, seed: u64) -> Array2<C64> {
    use rand_distr::StandardNormal;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Array2::zeros((n_dipoles, n_s));
    let scale = std::f64::consts::FRAC_1_SQRT_2;
    for d in 0..n_dipoles {
        for s in 0..n_s {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            w[[d, s]] = C64::new(re * scale, im * scale);
        }
    }
    w
}

/// Sample the range of the boundary field operators with `n_s` random
/// excitations.
pub fn sample_random_fields(grid: &FovGrid, dipoles: &DipoleSet, n_s: usize, seed: u64) -> Result<SampleMatrix> {
    if dipoles.is_empty() {
        return Err(Error::DegenerateDipoleSet("no dipoles to excite".into()));
    }
    if n_s == 0 {
        return Err(Error::InvalidParameter("n_s must be positive".into()));
    }
    let w = excitation_weights(dipoles.len(), n_s, seed);
    Ok(SampleMatrix { matrix: superpose_fields(grid, dipoles, w.view()), seed })
}

/// Orthonormal sensitivity-map basis with spectral ordering.
///
/// Invariants: columns orthonormal to machine precision, `singular_values`
/// nonincreasing (full spectrum of the sample matrix, so entry q is the
/// truncation error of the rank-q basis in the spectral norm), and any column
/// prefix is itself a valid basis.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldBasis {
    /// N × q, orthonormal columns.
    pub vectors: Array2<C64>,
    /// Full singular spectrum of the sample matrix, nonincreasing.
    pub singular_values: Array1<f64>,
}

impl FieldBasis {
    /// Basis dimension q.
    pub fn q(&self) -> usize {
        self.vectors.ncols()
    }

    /// Support size N.
    pub fn n(&self) -> usize {
        self.vectors.nrows()
    }

    /// The nested rank-`q` sub-basis (a column prefix).
    pub fn prefix(&self, q: usize) -> FieldBasis {
        assert!(q <= self.q(), "prefix({q}) of a rank-{} basis", self.q());
        FieldBasis {
            vectors: self.vectors.slice(ndarray::s![.., ..q]).to_owned(),
            singular_values: self.singular_values.clone(),
        }
    }

    /// Expand coefficients to a support vector: U · α.
    pub fn expand(&self, coeffs: &Array1<C64>) -> Array1<C64> {
        assert_eq!(coeffs.len(), self.q());
        self.vectors.dot(coeffs)
    }

    /// Adjoint of [`expand`](Self::expand): U^H · v.
    pub fn expand_adjoint(&self, v: &Array1<C64>) -> Array1<C64> {
        assert_eq!(v.len(), self.n());
        self.vectors.t().dot(&v.mapv(|z| z.conj())).mapv(|z| z.conj())
    }
}

/// Thin SVD of the sample matrix truncated to rank q.
pub fn compute_basis(samples: &SampleMatrix, q: usize) -> Result<FieldBasis> {
    let (n, n_s) = (samples.matrix.nrows(), samples.matrix.ncols());
    if q == 0 || q > n_s.min(n) {
        return Err(Error::InsufficientExcitations { q, n_s: n_s.min(n) });
    }
    let svd = thin_svd(samples.matrix.view())?;
    Ok(FieldBasis {
        vectors: svd.u.slice(ndarray::s![.., ..q]).to_owned(),
        singular_values: svd.s,
    })
}

/// Least-squares projection of a sensitivity map onto the basis.
///
/// Returns the coefficient vector U^H s and the relative residual
/// ‖U·coeffs − s‖₂/‖s‖₂. The map lives on the full grid; only support voxels
/// participate.
pub fn project(basis: &FieldBasis, grid: &FovGrid, s_map: &Array3<C64>) -> Result<(Array1<C64>, f64)> {
    let s = grid.restrict(s_map);
    if s.len() != basis.n() {
        return Err(Error::ShapeMismatch(format!(
            "basis has N={} support voxels, grid has {}",
            basis.n(),
            s.len()
        )));
    }
    let snorm = s.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    if snorm == 0.0 {
        return Err(Error::ZeroMap);
    }
    let coeffs = basis.expand_adjoint(&s);
    let fit = basis.expand(&coeffs);
    let resid = (&s - &fit).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    Ok((coeffs, resid / snorm))
}
