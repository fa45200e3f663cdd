//! Joint density / coil-map estimation.
//!
//! The acquisition is modeled per coil as `y_k = F_s(s_k ⊙ p)` where the
//! sensitivity map is constrained to a precomputed field basis, `s_k = U α_k`.
//! The unknowns `x = (p, α)` are found by an iteratively regularized
//! Gauss-Newton method: each outer iteration linearizes the bilinear model at
//! the current iterate, solves the damped normal equations
//!
//! ```text
//! (J^H J + α_n I ⊕ β_n I) Δx = J^H (y − G(x)) − (α_n (p − p⁰), β_n α)
//! ```
//!
//! by conjugate gradients, steps `x ← x + γ Δx`, and decays both damping
//! weights geometrically. The density channel is anchored at the flat
//! initialization `p⁰ ≡ 1` (so infinite damping freezes the iterate); the
//! coefficient channel is anchored at zero, its own initialization. Because
//! the model is bilinear the factorization carries a scalar gauge freedom
//! `(p, α) ↦ (p/c, c·α)`; the gauge-invariant quantities are the per-coil
//! products `s_k ⊙ p`, and tests compare those.

use ndarray::{Array1, Array2, Array3, Zip};
use serde::{Deserialize, Serialize};

use crate::basis::FieldBasis;
use crate::encoding::{FourierOp, KSpaceData};
use crate::error::{Error, Result};
use crate::grid::FovGrid;
use crate::linalg::{pcg, CgVector};
use crate::tucker::{tucker_apply, tucker_apply_adjoint, TuckerBasis};
use crate::C64;

/// Coil expansion coefficients: row `k` holds α_k for coil `k` (C×q).
pub type CoilCoeffs = Array2<C64>;

/// A sensitivity-map expansion basis in either dense or Tucker-compressed
/// form. Both expose the same linear map `α ↦ U α` (a full-grid volume) and
/// its adjoint, so the solver is agnostic to the storage format.
pub enum MapBasis {
    Dense(FieldBasis),
    Compressed(TuckerBasis),
}

impl MapBasis {
    /// Basis dimension q.
    pub fn q(&self) -> usize {
        match self {
            MapBasis::Dense(b) => b.q(),
            MapBasis::Compressed(t) => t.dims()[3],
        }
    }

    /// Errors unless the basis was built for `grid`'s geometry.
    pub fn check_grid(&self, grid: &FovGrid) -> Result<()> {
        match self {
            MapBasis::Dense(b) if b.n() != grid.n_support() => Err(Error::ShapeMismatch(format!(
                "basis rows {} != grid support voxels {}",
                b.n(),
                grid.n_support()
            ))),
            MapBasis::Compressed(t) => {
                let d = t.dims();
                if [d[0], d[1], d[2]] != grid.dims() {
                    return Err(Error::ShapeMismatch(format!(
                        "compressed basis spatial dims {:?} != grid dims {:?}",
                        &d[..3],
                        grid.dims()
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `U α` as a full-grid volume (zero outside the support for dense bases).
    pub fn expand(&self, grid: &FovGrid, coeffs: &Array1<C64>) -> Array3<C64> {
        match self {
            MapBasis::Dense(b) => grid.embed(&b.expand(coeffs)),
            MapBasis::Compressed(t) => tucker_apply(t, coeffs),
        }
    }

    /// Adjoint `U^H v` of [`MapBasis::expand`].
    pub fn expand_adjoint(&self, grid: &FovGrid, vol: &Array3<C64>) -> Array1<C64> {
        match self {
            MapBasis::Dense(b) => b.expand_adjoint(&grid.restrict(vol)),
            MapBasis::Compressed(t) => tucker_apply_adjoint(t, vol),
        }
    }
}

/// Expand every coil's coefficient row into a sensitivity-map volume.
pub fn expand_maps(grid: &FovGrid, basis: &MapBasis, coeffs: &CoilCoeffs) -> Vec<Array3<C64>> {
    coeffs
        .rows()
        .into_iter()
        .map(|row| basis.expand(grid, &row.to_owned()))
        .collect()
}

/// Joint unknown (density volume, coil coefficients) — the vector space the
/// Gauss-Newton normal equations live in.
#[derive(Clone, Debug)]
pub struct JointVec {
    pub density: Array3<C64>,
    pub coeffs: CoilCoeffs,
}

impl JointVec {
    pub fn zeros(dims: [usize; 3], n_coils: usize, q: usize) -> Self {
        JointVec {
            density: Array3::zeros((dims[0], dims[1], dims[2])),
            coeffs: Array2::zeros((n_coils, q)),
        }
    }
}

impl CgVector for JointVec {
    fn cdot(&self, other: &Self) -> C64 {
        let d: C64 = self
            .density
            .iter()
            .zip(other.density.iter())
            .map(|(a, b)| a.conj() * b)
            .sum();
        let c: C64 = self
            .coeffs
            .iter()
            .zip(other.coeffs.iter())
            .map(|(a, b)| a.conj() * b)
            .sum();
        d + c
    }
    fn axpy(&mut self, a: C64, x: &Self) {
        self.density.zip_mut_with(&x.density, |s, &v| *s += a * v);
        self.coeffs.zip_mut_with(&x.coeffs, |s, &v| *s += a * v);
    }
    fn xpby(&mut self, x: &Self, b: f64) {
        self.density.zip_mut_with(&x.density, |s, &v| *s = v + b * *s);
        self.coeffs.zip_mut_with(&x.coeffs, |s, &v| *s = v + b * *s);
    }
}

/// Bilinear forward model: row `k` of the output is `F_s((U α_k) ⊙ p)`.
pub fn g_apply(
    op: &FourierOp,
    grid: &FovGrid,
    basis: &MapBasis,
    density: &Array3<C64>,
    coeffs: &CoilCoeffs,
) -> Result<Array2<C64>> {
    basis.check_grid(grid)?;
    if coeffs.ncols() != basis.q() {
        return Err(Error::ShapeMismatch(format!(
            "coefficient columns {} != basis dimension {}",
            coeffs.ncols(),
            basis.q()
        )));
    }
    let n_coils = coeffs.nrows();
    let mut out = Array2::zeros((n_coils, op.n_samples()));
    for (k, row) in coeffs.rows().into_iter().enumerate() {
        let map = basis.expand(grid, &row.to_owned());
        let y = op.forward(&(&map * density))?;
        out.row_mut(k).assign(&y);
    }
    Ok(out)
}

/// The forward model linearized at a fixed iterate `(p, α)`: caches the
/// expanded maps `s_k = U α_k` and their conjugates so that Jacobian products
/// inside the CG loop cost one expansion and one Fourier application per coil.
pub struct Linearization<'a> {
    op: &'a FourierOp,
    grid: &'a FovGrid,
    basis: &'a MapBasis,
    density: Array3<C64>,
    density_conj: Array3<C64>,
    maps: Vec<Array3<C64>>,
    maps_conj: Vec<Array3<C64>>,
}

impl<'a> Linearization<'a> {
    pub fn new(
        op: &'a FourierOp,
        grid: &'a FovGrid,
        basis: &'a MapBasis,
        density: &Array3<C64>,
        coeffs: &CoilCoeffs,
    ) -> Result<Self> {
        basis.check_grid(grid)?;
        if grid.dims() != op.dims() {
            return Err(Error::ShapeMismatch("grid dims != encoding dims".into()));
        }
        if density.dim() != (op.dims()[0], op.dims()[1], op.dims()[2]) {
            return Err(Error::ShapeMismatch("density dims != grid dims".into()));
        }
        if coeffs.ncols() != basis.q() {
            return Err(Error::ShapeMismatch(format!(
                "coefficient columns {} != basis dimension {}",
                coeffs.ncols(),
                basis.q()
            )));
        }
        let maps = expand_maps(grid, basis, coeffs);
        let maps_conj = maps.iter().map(|m| m.mapv(|z| z.conj())).collect();
        Ok(Linearization {
            op,
            grid,
            basis,
            density: density.clone(),
            density_conj: density.mapv(|z| z.conj()),
            maps,
            maps_conj,
        })
    }

    pub fn n_coils(&self) -> usize {
        self.maps.len()
    }

    /// `G(x)` at the linearization point.
    pub fn model(&self) -> Result<Array2<C64>> {
        let mut out = Array2::zeros((self.n_coils(), self.op.n_samples()));
        for (k, s) in self.maps.iter().enumerate() {
            let y = self.op.forward(&(s * &self.density))?;
            out.row_mut(k).assign(&y);
        }
        Ok(out)
    }

    /// Per-coil perturbation volume `s_k ⊙ Δp + p ⊙ (U Δα_k)`.
    fn branch(&self, k: usize, dx: &JointVec) -> Array3<C64> {
        let dmap = self.basis.expand(self.grid, &dx.coeffs.row(k).to_owned());
        let mut w = &self.maps[k] * &dx.density;
        Zip::from(&mut w)
            .and(&self.density)
            .and(&dmap)
            .for_each(|w, &p, &dm| *w += p * dm);
        w
    }

    /// Jacobian product `J Δx`, one row per coil.
    pub fn apply(&self, dx: &JointVec) -> Result<Array2<C64>> {
        let mut out = Array2::zeros((self.n_coils(), self.op.n_samples()));
        for k in 0..self.n_coils() {
            let y = self.op.forward(&self.branch(k, dx))?;
            out.row_mut(k).assign(&y);
        }
        Ok(out)
    }

    /// Adjoint product `J^H y`: density channel `Σ_k conj(s_k) ⊙ F_s^H y_k`,
    /// coefficient channel `U^H (conj(p) ⊙ F_s^H y_k)` per coil.
    pub fn apply_adjoint(&self, residual: &Array2<C64>) -> Result<JointVec> {
        if residual.dim() != (self.n_coils(), self.op.n_samples()) {
            return Err(Error::ShapeMismatch(format!(
                "residual is {:?}, expected ({}, {})",
                residual.dim(),
                self.n_coils(),
                self.op.n_samples()
            )));
        }
        let q = self.basis.q();
        let mut out = JointVec::zeros(self.grid.dims(), self.n_coils(), q);
        for k in 0..self.n_coils() {
            let v = self.op.adjoint(&residual.row(k).to_owned())?;
            Zip::from(&mut out.density)
                .and(&self.maps_conj[k])
                .and(&v)
                .for_each(|a, &s, &vv| *a += s * vv);
            let c = self.basis.expand_adjoint(self.grid, &(&self.density_conj * &v));
            out.coeffs.row_mut(k).assign(&c);
        }
        Ok(out)
    }

    /// Fused `J^H J Δx`, routing each coil through the normal form of the
    /// encoding operator (a masked projection or a Toeplitz convolution)
    /// instead of a forward/adjoint round trip.
    pub fn normal_apply(&self, dx: &JointVec) -> Result<JointVec> {
        let q = self.basis.q();
        let mut out = JointVec::zeros(self.grid.dims(), self.n_coils(), q);
        for k in 0..self.n_coils() {
            let v = self.op.normal(&self.branch(k, dx))?;
            Zip::from(&mut out.density)
                .and(&self.maps_conj[k])
                .and(&v)
                .for_each(|a, &s, &vv| *a += s * vv);
            let c = self.basis.expand_adjoint(self.grid, &(&self.density_conj * &v));
            out.coeffs.row_mut(k).assign(&c);
        }
        Ok(out)
    }
}

/// Gauss-Newton driver configuration. `q` must equal the basis dimension.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IrgnConfig {
    pub q: usize,
    pub outer_iters: usize,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub alpha0: f64,
    pub beta0: f64,
    /// Geometric decay factor applied to both damping weights per outer
    /// iteration, in (0, 1).
    pub decay: f64,
    /// Step length γ.
    pub gamma: f64,
    /// Halve γ (up to 6 times) when a step increases the data residual.
    pub backtrack: bool,
}

impl IrgnConfig {
    pub fn new(q: usize) -> Self {
        IrgnConfig {
            q,
            outer_iters: 9,
            cg_iters: 30,
            cg_tol: 1e-6,
            alpha0: 1.0,
            beta0: 1.0,
            decay: 0.5,
            gamma: 1.0,
            backtrack: true,
        }
    }

    fn validate(&self, basis: &MapBasis) -> Result<()> {
        if self.q != basis.q() {
            return Err(Error::InvalidParameter(format!(
                "config q={} but basis has dimension {}",
                self.q,
                basis.q()
            )));
        }
        if self.outer_iters == 0 || self.cg_iters == 0 {
            return Err(Error::InvalidParameter("iteration counts must be positive".into()));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::InvalidParameter(format!("decay must be in (0,1), got {}", self.decay)));
        }
        if self.alpha0 <= 0.0 || self.beta0 <= 0.0 || self.gamma <= 0.0 || self.cg_tol <= 0.0 {
            return Err(Error::InvalidParameter("alpha0, beta0, gamma, cg_tol must be positive".into()));
        }
        Ok(())
    }
}

impl Default for IrgnConfig {
    fn default() -> Self {
        IrgnConfig::new(0)
    }
}

/// Live solver state in normalized data units.
#[derive(Debug, Clone)]
pub struct IrgnState {
    pub density: Array3<C64>,
    pub coeffs: CoilCoeffs,
    pub alpha_n: f64,
    pub beta_n: f64,
    pub iter: usize,
    /// ‖y‖_F of the raw data; the solver works on y/data_norm and the final
    /// density is scaled back by this factor.
    pub data_norm: f64,
}

/// Per-outer-iteration record (residuals are relative to the normalized data).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IrgnIteration {
    pub iter: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub cg_iters: usize,
    pub cg_rel_residual: f64,
    pub residual: f64,
}

pub struct IrgnSolution {
    pub density: Array3<C64>,
    pub coeffs: CoilCoeffs,
    pub maps: Vec<Array3<C64>>,
    pub history: Vec<IrgnIteration>,
}

/// Jointly estimate the density and coil-map coefficients from k-space data.
///
/// Initializes `p ≡ 1`, `α ≡ 0`, normalizes the data to unit Frobenius norm
/// (so the damping defaults are scale-free), runs `outer_iters` Gauss-Newton
/// steps, and returns the de-normalized density, the coefficients, and the
/// expanded maps `s_k = U α_k`.
pub fn irgn_reconstruct(
    grid: &FovGrid,
    y: &KSpaceData,
    basis: &MapBasis,
    cfg: &IrgnConfig,
) -> Result<IrgnSolution> {
    cfg.validate(basis)?;
    basis.check_grid(grid)?;
    let op = FourierOp::new(grid.dims(), &y.traj)?;
    let n_coils = y.n_coils();
    if n_coils == 0 {
        return Err(Error::InvalidParameter("k-space data has no coils".into()));
    }
    if y.n_samples() != op.n_samples() {
        return Err(Error::ShapeMismatch(format!(
            "data has {} samples per coil, trajectory yields {}",
            y.n_samples(),
            op.n_samples()
        )));
    }
    let data_norm = y.samples.mapv(|z| z.norm_sqr()).sum().sqrt();
    if data_norm == 0.0 {
        return Err(Error::InvalidParameter("k-space data is identically zero".into()));
    }
    let yn = y.samples.mapv(|z| z / data_norm);

    let dims = grid.dims();
    let anchor = Array3::from_elem((dims[0], dims[1], dims[2]), C64::new(1.0, 0.0));
    let mut state = IrgnState {
        density: anchor.clone(),
        coeffs: Array2::zeros((n_coils, cfg.q)),
        alpha_n: cfg.alpha0,
        beta_n: cfg.beta0,
        iter: 0,
        data_norm,
    };
    let mut history = Vec::with_capacity(cfg.outer_iters);

    let residual_norm = |r: &Array2<C64>| r.mapv(|z| z.norm_sqr()).sum().sqrt();
    let mut cur_res = {
        let lin = Linearization::new(&op, grid, basis, &state.density, &state.coeffs)?;
        residual_norm(&(&yn - &lin.model()?))
    };

    let mask_frac = op.n_samples() as f64 / grid.n_voxels() as f64;
    for _ in 0..cfg.outer_iters {
        let lin = Linearization::new(&op, grid, basis, &state.density, &state.coeffs)?;
        let r = &yn - &lin.model()?;
        let mut rhs = lin.apply_adjoint(&r)?;
        let (alpha, beta) = (state.alpha_n, state.beta_n);
        Zip::from(&mut rhs.density)
            .and(&state.density)
            .and(&anchor)
            .for_each(|b, &p, &p0| *b -= alpha * (p - p0));
        rhs.coeffs.zip_mut_with(&state.coeffs, |b, &a| *b -= beta * a);

        // Gauge fixing: the bilinear model is invariant under the rescaling
        // (p, α) → (p/c, c·α), so the Jacobian has the exact null direction
        // g = (p, −α). Once the damping is small the step would drift along
        // g with huge, physically meaningless components; an O(1) penalty on
        // the step's g-component keeps the system well conditioned there
        // without biasing the identifiable products s_k ⊙ p.
        let gauge = JointVec { density: state.density.clone(), coeffs: state.coeffs.mapv(|a| -a) };
        let gauge_norm2 = gauge.cdot(&gauge).re.max(f64::MIN_POSITIVE);
        let tau = 1.0;
        let apply = |v: &JointVec| {
            let mut av = lin.normal_apply(v).expect("operator application cannot fail after validation");
            av.density.zip_mut_with(&v.density, |a, &d| *a += alpha * d);
            av.coeffs.zip_mut_with(&v.coeffs, |a, &c| *a += beta * c);
            let along = gauge.cdot(v) * (tau / gauge_norm2);
            av.axpy(along, &gauge);
            av
        };

        // Jacobi preconditioner for the damped normal operator. The Fourier
        // normal map has exactly m/N on its diagonal (unit-modulus kernels),
        // so the density block's diagonal is m/N·Σ_k|s_k|² + β per voxel; for
        // the coefficient block the orthonormal basis columns give
        // ≈ m/N·mean|p|² + α. This evens out the large scale gap between the
        // two blocks that otherwise stalls CG once the damping is small.
        let maps_n = expand_maps(grid, basis, &state.coeffs);
        let mut sos = Array3::<f64>::zeros((dims[0], dims[1], dims[2]));
        for m in &maps_n {
            sos.zip_mut_with(m, |a, &s| *a += s.norm_sqr());
        }
        let coeff_diag: Array1<f64> = match basis {
            // exact: m/N·‖p ⊙ u_j‖² + α per basis column
            MapBasis::Dense(fb) => {
                let psq = grid.support_values(&state.density).mapv(|z| z.norm_sqr());
                Array1::from_iter(fb.vectors.columns().into_iter().map(|u| {
                    let s: f64 = u.iter().zip(psq.iter()).map(|(z, w)| z.norm_sqr() * w).sum();
                    mask_frac * s + alpha
                }))
            }
            _ => {
                let p_meansq = state.density.mapv(|z| z.norm_sqr()).mean().unwrap_or(0.0);
                Array1::from_elem(cfg.q, mask_frac * p_meansq + alpha)
            }
        };
        let minv = |r: &JointVec| {
            let mut z = r.clone();
            Zip::from(&mut z.density).and(&sos).for_each(|zv, &s| *zv /= mask_frac * s + beta);
            for mut row in z.coeffs.rows_mut() {
                Zip::from(&mut row).and(&coeff_diag).for_each(|c, &d| *c /= d);
            }
            z
        };

        let x0 = JointVec::zeros(dims, n_coils, cfg.q);
        let sol = pcg(apply, minv, &rhs, x0, cfg.cg_iters, cfg.cg_tol, |_, _, _| {})?;

        // Step, optionally backtracking on the nonlinear residual.
        let mut gamma = cfg.gamma;
        let mut accepted = None;
        for _ in 0..7 {
            let mut trial = state.density.clone();
            trial.zip_mut_with(&sol.x.density, |p, &d| *p += gamma * d);
            let mut trial_c = state.coeffs.clone();
            trial_c.zip_mut_with(&sol.x.coeffs, |a, &d| *a += gamma * d);
            let tl = Linearization::new(&op, grid, basis, &trial, &trial_c)?;
            let res = residual_norm(&(&yn - &tl.model()?));
            accepted = Some((trial, trial_c, res, gamma));
            if !cfg.backtrack || res <= cur_res {
                break;
            }
            gamma *= 0.5;
        }
        let (p_new, c_new, res, gamma_used) = accepted.expect("at least one trial step");
        state.density = p_new;
        state.coeffs = c_new;
        cur_res = res;
        state.iter += 1;
        history.push(IrgnIteration {
            iter: state.iter,
            alpha: state.alpha_n,
            beta: state.beta_n,
            gamma: gamma_used,
            cg_iters: sol.iters,
            cg_rel_residual: sol.rel_residual,
            residual: res,
        });
        state.alpha_n *= cfg.decay;
        state.beta_n *= cfg.decay;
    }

    let maps = expand_maps(grid, basis, &state.coeffs);
    Ok(IrgnSolution {
        density: state.density.mapv(|z| z * data_norm),
        coeffs: state.coeffs,
        maps,
        history,
    })
}
