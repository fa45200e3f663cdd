//! Tucker compression of sensitivity-map bases.
//!
//! A rank-q basis embedded on the grid is a 4-way tensor (x, y, z, basis
//! index). Receive fields vary smoothly across space, so each spatial mode
//! admits a short factor; the higher-order SVD keeps one orthonormal factor
//! per mode plus a small core, shrinking storage by orders of magnitude while
//! guaranteeing ‖T − T̂‖ ≤ eps·‖T‖ in the Frobenius norm.

use ndarray::{Array1, Array2, Array3, Array4, ArrayView2, ArrayView4};

use crate::basis::FieldBasis;
use crate::error::{Error, Result};
use crate::grid::FovGrid;
use crate::linalg::eigh_desc;
use crate::C64;

/// Matricize along `mode`: rows index that mode, columns sweep the remaining
/// modes in ascending axis order.
pub fn unfold(t: ArrayView4<'_, C64>, mode: usize) -> Array2<C64> {
    assert!(mode < 4);
    let order: Vec<usize> = std::iter::once(mode).chain((0..4).filter(|&a| a != mode)).collect();
    let v = t.permuted_axes([order[0], order[1], order[2], order[3]]);
    let n0 = v.shape()[0];
    let rest: usize = v.shape()[1..].iter().product();
    v.as_standard_layout()
        .into_owned()
        .into_shape_with_order((n0, rest))
        .expect("unfold reshape")
}

/// Inverse of [`unfold`]: rebuild a tensor of logical shape `dims` from its
/// mode-`mode` matricization.
pub fn fold(m: Array2<C64>, mode: usize, dims: [usize; 4]) -> Array4<C64> {
    let order: Vec<usize> = std::iter::once(mode).chain((0..4).filter(|&a| a != mode)).collect();
    let pd: Vec<usize> = order.iter().map(|&a| dims[a]).collect();
    let t = m
        .into_shape_with_order((pd[0], pd[1], pd[2], pd[3]))
        .expect("fold reshape");
    let mut inv = [0usize; 4];
    for (i, &o) in order.iter().enumerate() {
        inv[o] = i;
    }
    t.permuted_axes(inv).as_standard_layout().into_owned()
}

/// Mode-`mode` product: contract `matrix` (new_dim × old_dim) against that
/// mode of the tensor.
pub fn kmode_product(t: ArrayView4<'_, C64>, matrix: ArrayView2<'_, C64>, mode: usize) -> Array4<C64> {
    assert_eq!(matrix.ncols(), t.shape()[mode], "mode-{mode} dimension mismatch");
    let mut dims = [0usize; 4];
    dims.copy_from_slice(t.shape());
    dims[mode] = matrix.nrows();
    fold(matrix.dot(&unfold(t, mode)), mode, dims)
}

/// Orthonormal per-mode factors plus core tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TuckerBasis {
    /// r1 × r2 × r3 × r4 core.
    pub core: Array4<C64>,
    /// Per-mode factors, each n_m × r_m with orthonormal columns.
    pub factors: [Array2<C64>; 4],
}

impl TuckerBasis {
    /// Logical (uncompressed) shape.
    pub fn dims(&self) -> [usize; 4] {
        [
            self.factors[0].nrows(),
            self.factors[1].nrows(),
            self.factors[2].nrows(),
            self.factors[3].nrows(),
        ]
    }

    /// Multilinear ranks.
    pub fn ranks(&self) -> [usize; 4] {
        let s = self.core.shape();
        [s[0], s[1], s[2], s[3]]
    }

    /// Complex entries stored (core plus factors).
    pub fn n_entries(&self) -> usize {
        self.core.len() + self.factors.iter().map(|f| f.len()).sum::<usize>()
    }

    /// Stored entries relative to the dense tensor.
    pub fn storage_fraction(&self) -> f64 {
        self.n_entries() as f64 / self.dims().iter().product::<usize>() as f64
    }
}

/// Higher-order SVD with per-mode ranks chosen so the total squared
/// truncation error stays within `(eps·‖T‖)²`; each mode gets an equal share
/// of the budget. `eps = 0` keeps every mode at full rank (lossless up to
/// rounding).
pub fn hosvd(t: ArrayView4<'_, C64>, eps: f64) -> Result<TuckerBasis> {
    if !(eps >= 0.0) {
        return Err(Error::InvalidParameter(format!("eps must be ≥ 0, got {eps}")));
    }
    let total_sq: f64 = t.iter().map(|z| z.norm_sqr()).sum();
    if total_sq == 0.0 {
        return Err(Error::InvalidParameter("cannot factor an all-zero tensor".into()));
    }
    let budget = eps * eps * total_sq / 4.0;
    let mut factors: Vec<Array2<C64>> = Vec::with_capacity(4);
    for mode in 0..4 {
        let unf = unfold(t, mode);
        // Gram of the unfolding: eigenvalues are its squared singular values.
        let g = unf.dot(&unf.mapv(|z| z.conj()).reversed_axes());
        let (vals, vecs) = eigh_desc(g.view())?;
        let n = vals.len();
        // Eigenvalues at the Hermitian-perturbation noise floor are numerical
        // zeros; counting them against a tiny eps budget would inflate ranks.
        let floor = vals[0].max(0.0) * f64::EPSILON * n as f64;
        // Largest tail that still fits the per-mode budget.
        let mut r = n;
        let mut tail = 0.0;
        while r > 1 {
            let lambda = if vals[r - 1] <= floor { 0.0 } else { vals[r - 1] };
            let next = tail + lambda;
            if next > budget {
                break;
            }
            tail = next;
            r -= 1;
        }
        factors.push(vecs.slice(ndarray::s![.., ..r]).to_owned());
    }
    let mut core = t.to_owned();
    for (mode, f) in factors.iter().enumerate() {
        let fh = f.mapv(|z| z.conj()).reversed_axes();
        core = kmode_product(core.view(), fh.view(), mode);
    }
    let f3 = factors.pop().unwrap();
    let f2 = factors.pop().unwrap();
    let f1 = factors.pop().unwrap();
    let f0 = factors.pop().unwrap();
    Ok(TuckerBasis { core, factors: [f0, f1, f2, f3] })
}

/// Expand the compressed tensor back to dense form.
pub fn reconstruct(t: &TuckerBasis) -> Array4<C64> {
    let mut out = t.core.clone();
    for (mode, f) in t.factors.iter().enumerate() {
        out = kmode_product(out.view(), f.view(), mode);
    }
    out
}

/// Compress a sensitivity basis: embed its columns on the grid (zero outside
/// the support) and factor the resulting 4-way tensor.
pub fn compress_basis(grid: &FovGrid, basis: &FieldBasis, eps: f64) -> Result<TuckerBasis> {
    if basis.n() != grid.n_support() {
        return Err(Error::ShapeMismatch(format!(
            "basis has N={} support voxels, grid has {}",
            basis.n(),
            grid.n_support()
        )));
    }
    let [nx, ny, nz] = grid.dims();
    let q = basis.q();
    let mut t = Array4::zeros((nx, ny, nz, q));
    for r in 0..q {
        let col = grid.embed(&basis.vectors.column(r).to_owned());
        t.slice_mut(ndarray::s![.., .., .., r]).assign(&col);
    }
    hosvd(t.view(), eps)
}

/// Map expansion straight from the compressed form: Σ_r T̂[·,·,·,r]·coeffs[r].
///
/// The basis-index mode is contracted first, so the spatial factors only ever
/// multiply core-sized intermediates.
pub fn tucker_apply(t: &TuckerBasis, coeffs: &Array1<C64>) -> Array3<C64> {
    let [r1, r2, r3, r4] = t.ranks();
    assert_eq!(coeffs.len(), t.factors[3].nrows(), "coefficient length");
    let beta = t.factors[3].t().dot(coeffs); // unconjugated: expansion weights
    let mut small = Array3::<C64>::zeros((r1, r2, r3));
    for a in 0..r1 {
        for b in 0..r2 {
            for c in 0..r3 {
                let mut acc = C64::new(0.0, 0.0);
                for d in 0..r4 {
                    acc += t.core[(a, b, c, d)] * beta[d];
                }
                small[(a, b, c)] = acc;
            }
        }
    }
    // Expand the three spatial modes of the rank-reduced volume.
    let as4 = small.insert_axis(ndarray::Axis(3));
    let mut out = as4;
    for mode in 0..3 {
        out = kmode_product(out.view(), t.factors[mode].view(), mode);
    }
    out.remove_axis(ndarray::Axis(3))
}

/// Adjoint of [`tucker_apply`]: coeffs[r] = Σ_xyz conj(T̂[x,y,z,r])·vol[x,y,z].
pub fn tucker_apply_adjoint(t: &TuckerBasis, vol: &Array3<C64>) -> Array1<C64> {
    let [r1, r2, r3, r4] = t.ranks();
    let mut small = vol.clone().insert_axis(ndarray::Axis(3));
    for mode in 0..3 {
        let fh = t.factors[mode].mapv(|z| z.conj()).reversed_axes();
        small = kmode_product(small.view(), fh.view(), mode);
    }
    let small = small.remove_axis(ndarray::Axis(3));
    let mut v = Array1::<C64>::zeros(r4);
    for d in 0..r4 {
        let mut acc = C64::new(0.0, 0.0);
        for a in 0..r1 {
            for b in 0..r2 {
                for c in 0..r3 {
                    acc += t.core[(a, b, c, d)].conj() * small[(a, b, c)];
                }
            }
        }
        v[d] = acc;
    }
    t.factors[3].mapv(|z| z.conj()).dot(&v)
}
