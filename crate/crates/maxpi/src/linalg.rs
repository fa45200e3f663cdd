//! Dense linear-algebra kernels shared by the basis, compression, and solver
//! modules: thin complex SVD, Hermitian eigendecomposition (both bridged to
//! nalgebra), and a conjugate-gradient loop for Hermitian positive-definite
//! operators applied matrix-free.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::C64;

/// Thin SVD `a = u · diag(s) · vh` with `s` nonincreasing, `u` of shape
/// (m, min(m,n)) and `vh` of shape (min(m,n), n).
pub struct ThinSvd {
    pub u: Array2<C64>,
    pub s: Array1<f64>,
    pub vh: Array2<C64>,
}

fn to_nalgebra(a: ArrayView2<'_, C64>) -> DMatrix<C64> {
    DMatrix::from_row_iterator(a.nrows(), a.ncols(), a.iter().cloned())
}

/// Thin SVD of a complex matrix. Columns of `u` are orthonormal to machine
/// precision; singular values are returned in nonincreasing order.
pub fn thin_svd(a: ArrayView2<'_, C64>) -> Result<ThinSvd> {
    let m = to_nalgebra(a);
    let svd = m.try_svd(true, true, f64::EPSILON, 0).ok_or(Error::SvdFailed)?;
    let u = svd.u.as_ref().ok_or(Error::SvdFailed)?;
    let vt = svd.v_t.as_ref().ok_or(Error::SvdFailed)?;
    let k = svd.singular_values.len();
    // nalgebra sorts descending; enforce it anyway so callers may rely on it.
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].partial_cmp(&svd.singular_values[i]).unwrap());
    let s = Array1::from_iter(order.iter().map(|&i| svd.singular_values[i]));
    let u = Array2::from_shape_fn((u.nrows(), k), |(r, c)| u[(r, order[c])]);
    let vh = Array2::from_shape_fn((k, vt.ncols()), |(r, c)| vt[(order[r], c)]);
    Ok(ThinSvd { u, s, vh })
}

/// Eigendecomposition of a Hermitian matrix, eigenvalues nonincreasing,
/// eigenvectors returned as columns.
pub fn eigh_desc(h: ArrayView2<'_, C64>) -> Result<(Array1<f64>, Array2<C64>)> {
    assert_eq!(h.nrows(), h.ncols(), "eigh requires a square matrix");
    let m = to_nalgebra(h);
    let eig = nalgebra::SymmetricEigen::try_new(m, f64::EPSILON, 0).ok_or(Error::SvdFailed)?;
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].partial_cmp(&eig.eigenvalues[i]).unwrap());
    let vals = Array1::from_iter(order.iter().map(|&i| eig.eigenvalues[i]));
    let vecs = Array2::from_shape_fn((n, n), |(r, c)| eig.eigenvectors[(r, order[c])]);
    Ok((vals, vecs))
}

/// `a^H · a`, the Gram matrix.
pub fn gram(a: ArrayView2<'_, C64>) -> Array2<C64> {
    let ah = a.mapv(|z| z.conj());
    ah.t().dot(&a)
}

/// Vector interface for the matrix-free CG loop.
///
/// `cdot` is deliberately not called `dot`: ndarray's inherent `dot` is the
/// unconjugated bilinear product and would silently shadow a trait method of
/// the same name on concrete array types.
pub trait CgVector: Clone {
    /// Hermitian inner product Σ conj(self)·other.
    fn cdot(&self, other: &Self) -> C64;
    /// self += a · x.
    fn axpy(&mut self, a: C64, x: &Self);
    /// self = x + b · self (used for the direction update).
    fn xpby(&mut self, x: &Self, b: f64);
    fn norm(&self) -> f64 {
        self.cdot(self).re.max(0.0).sqrt()
    }
}

impl CgVector for Array1<C64> {
    fn cdot(&self, other: &Self) -> C64 {
        self.iter().zip(other.iter()).map(|(a, b)| a.conj() * b).sum()
    }
    fn axpy(&mut self, a: C64, x: &Self) {
        self.zip_mut_with(x, |s, &v| *s += a * v);
    }
    fn xpby(&mut self, x: &Self, b: f64) {
        self.zip_mut_with(x, |s, &v| *s = v + b * *s);
    }
}

impl CgVector for ndarray::Array3<C64> {
    fn cdot(&self, other: &Self) -> C64 {
        self.iter().zip(other.iter()).map(|(a, b)| a.conj() * b).sum()
    }
    fn axpy(&mut self, a: C64, x: &Self) {
        self.zip_mut_with(x, |s, &v| *s += a * v);
    }
    fn xpby(&mut self, x: &Self, b: f64) {
        self.zip_mut_with(x, |s, &v| *s = v + b * *s);
    }
}

pub struct CgOutcome<V> {
    pub x: V,
    pub iters: usize,
    /// ‖b − A x‖ / ‖b‖ at exit.
    pub rel_residual: f64,
}

/// Conjugate gradients for a Hermitian positive-definite operator.
///
/// Stops when ‖r‖ ≤ rtol·‖b‖ or after `max_iters`. The observer is called
/// after every iteration with (iteration, iterate, ‖r‖). See [`pcg`] for the
/// divergence-handling rules.
pub fn cg<V: CgVector>(
    apply: impl FnMut(&V) -> V,
    b: &V,
    x0: V,
    max_iters: usize,
    rtol: f64,
    observer: impl FnMut(usize, &V, f64),
) -> Result<CgOutcome<V>> {
    pcg(apply, |r: &V| r.clone(), b, x0, max_iters, rtol, observer)
}

/// Preconditioned conjugate gradients: `minv` applies a Hermitian
/// positive-definite approximation of A⁻¹ (pass the identity to recover plain
/// CG). Stopping and divergence detection use the true residual ‖b − A x‖.
///
/// On an SPD system the residual 2-norm may oscillate near its floor (only
/// the energy-norm error is monotone), so transient growth is tolerated. A
/// blow-up well past the best residual seen means either a non-PD operator —
/// caught early, before any progress, and reported as [`Error::CgDiverged`] —
/// or loss of conjugacy at the numerical floor of an ill-conditioned solve,
/// in which case the best iterate so far is returned as the solution.
pub fn pcg<V: CgVector>(
    mut apply: impl FnMut(&V) -> V,
    mut minv: impl FnMut(&V) -> V,
    b: &V,
    x0: V,
    max_iters: usize,
    rtol: f64,
    mut observer: impl FnMut(usize, &V, f64),
) -> Result<CgOutcome<V>> {
    let bnorm = b.norm();
    if bnorm == 0.0 {
        let mut x = x0;
        // Zero RHS of a PD system: solution is zero. Represent via x - x = 0.
        let xc = x.clone();
        x.axpy(C64::new(-1.0, 0.0), &xc);
        return Ok(CgOutcome { x, iters: 0, rel_residual: 0.0 });
    }
    let mut x = x0;
    let ax = apply(&x);
    let mut r = b.clone();
    r.axpy(C64::new(-1.0, 0.0), &ax);
    let mut z = minv(&r);
    let mut p = z.clone();
    let mut rs = r.cdot(&z).re;
    let mut last_norm = r.norm();
    let initial_norm = last_norm;
    let mut best_norm = last_norm;
    let mut best_x = x.clone();
    let mut best_iters = 0usize;
    let salvage = |best_norm: f64, best_x: V, best_iters: usize| {
        if best_norm <= 0.5 * initial_norm {
            Some(CgOutcome { x: best_x, iters: best_iters, rel_residual: best_norm / bnorm })
        } else {
            None
        }
    };
    if !(rs > 0.0) && last_norm > rtol * bnorm {
        return Err(Error::CgDiverged { grew: 0, tail: vec![last_norm, rs] });
    }
    let mut grew = 0usize;
    let mut tail = Vec::new();
    let mut iters = 0;
    while iters < max_iters && last_norm > rtol * bnorm {
        let ap = apply(&p);
        let pap = p.cdot(&ap).re;
        if pap <= 0.0 || !pap.is_finite() {
            if let Some(out) = salvage(best_norm, best_x, best_iters) {
                return Ok(out);
            }
            return Err(Error::CgDiverged { grew: iters, tail: vec![last_norm, pap] });
        }
        let alpha = rs / pap;
        x.axpy(C64::new(alpha, 0.0), &p);
        r.axpy(C64::new(-alpha, 0.0), &ap);
        let norm = r.norm();
        iters += 1;
        observer(iters, &x, norm);
        if norm > last_norm {
            grew += 1;
            tail.push(norm);
            if tail.len() > 8 {
                tail.remove(0);
            }
            if !norm.is_finite() || norm > 10.0 * best_norm {
                if let Some(out) = salvage(best_norm, best_x, best_iters) {
                    return Ok(out);
                }
                return Err(Error::CgDiverged { grew, tail });
            }
        } else {
            grew = 0;
            tail.clear();
        }
        if norm < best_norm {
            best_norm = norm;
            best_x = x.clone();
            best_iters = iters;
        }
        z = minv(&r);
        let rs_new = r.cdot(&z).re;
        if !(rs_new > 0.0) && norm > rtol * bnorm {
            if let Some(out) = salvage(best_norm, best_x, best_iters) {
                return Ok(out);
            }
            return Err(Error::CgDiverged { grew, tail: vec![norm, rs_new] });
        }
        let beta = rs_new / rs;
        p.xpby(&z, beta);
        rs = rs_new;
        last_norm = norm;
    }
    Ok(CgOutcome { x, iters, rel_residual: last_norm / bnorm })
}
