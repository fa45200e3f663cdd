//! Parameter-free constrained TV reconstruction.
//!
//! Solves `min_p TV(p)` subject to per-coil noise-ball constraints
//! `‖y_k − F_s S_k p‖₂ ≤ ε_k` by scaled ADMM on the splitting
//! `A p = z` with `A = [I; F_s S₁; …; F_s S_C]`: the image-like block `z₀`
//! absorbs the regularizer through its proximal map, the data-like blocks
//! `z_k` are projected onto the noise balls, and the density update solves
//! `(I + Σ_k S_k^H F_s^H F_s S_k) p = rhs` by CG.
//!
//! The data-like blocks and their duals are never materialized in k-space.
//! Every update of `z_k`/`u_k` is a linear combination of `y_k`, the current
//! forward projection `a_k = F_s S_k p`, and the previous dual, so the driver
//! tracks their image-space pullbacks (`F_s^H u_k`, with `F_s^H F_s` applied
//! via the encoding operator's normal form) together with the handful of
//! k-space inner products needed for the projection radii and the ADMM
//! residuals — each of which reduces exactly to image-space inner products
//! through the adjoint identity `⟨F x, v⟩ = ⟨x, F^H v⟩`. A radial
//! reconstruction therefore costs FFT-sized work per iteration; the honest
//! forward operator is applied once at the end to report the achieved coil
//! residuals.

use ndarray::{Array3, Axis, Slice, Zip};
use serde::{Deserialize, Serialize};

use crate::encoding::{FourierOp, KSpaceData};
use crate::error::{Error, Result};
use crate::linalg::{cg, CgOutcome};
use crate::C64;

/// Relative CG tolerance of the density update.
pub const P_UPDATE_TOL: f64 = 1e-8;

/// Euclidean projection of `z` onto the ball of radius `eps` around `y`:
/// `y + ε(z−y)/max(‖z−y‖, ε)`. Points already inside are returned unchanged.
pub fn project_ball(z: &ndarray::Array1<C64>, y: &ndarray::Array1<C64>, eps: f64) -> ndarray::Array1<C64> {
    let diff = z - y;
    let dist = diff.mapv(|v| v.norm_sqr()).sum().sqrt();
    if dist <= eps {
        return z.clone();
    }
    let scale = eps / dist;
    y + &diff.mapv(|v| v * scale)
}

fn active_axes(dims: (usize, usize, usize)) -> Vec<usize> {
    [dims.0, dims.1, dims.2]
        .iter()
        .enumerate()
        .filter_map(|(a, &n)| (n > 1).then_some(a))
        .collect()
}

fn forward_diff(x: &Array3<C64>, axis: usize) -> Array3<C64> {
    let n = x.shape()[axis];
    let mut g = Array3::zeros(x.dim());
    if n > 1 {
        let hi = x.slice_axis(Axis(axis), Slice::from(1..));
        let lo = x.slice_axis(Axis(axis), Slice::from(..n - 1));
        g.slice_axis_mut(Axis(axis), Slice::from(..n - 1)).assign(&(&hi - &lo));
    }
    g
}

/// Adjoint of the forward-difference gradient, accumulated over axes.
fn grad_adjoint(phi: &[Array3<C64>; 3], axes: &[usize]) -> Array3<C64> {
    let mut out = Array3::zeros(phi[0].dim());
    for &a in axes {
        let n = out.shape()[a];
        out.zip_mut_with(&phi[a], |o, &f| *o -= f);
        let src = phi[a].slice_axis(Axis(a), Slice::from(..n - 1)).to_owned();
        out.slice_axis_mut(Axis(a), Slice::from(1..)).zip_mut_with(&src, |o, &f| *o += f);
    }
    out
}

/// Isotropic total variation of a complex image: Σ_v ‖(∇x)_v‖₂ with the
/// gradient magnitude taken jointly over axes and real/imaginary parts.
pub fn total_variation(x: &Array3<C64>) -> f64 {
    let axes = active_axes(x.dim());
    let grads: Vec<Array3<C64>> = axes.iter().map(|&a| forward_diff(x, a)).collect();
    let mut tv = 0.0;
    for i in 0..x.len() {
        let mut r2 = 0.0;
        for g in &grads {
            r2 += g.as_slice().unwrap()[i].norm_sqr();
        }
        tv += r2.sqrt();
    }
    tv
}

/// Warm-startable dual field for the TV proximal map.
pub struct TvDual {
    phi: [Array3<C64>; 3],
}

impl TvDual {
    pub fn new(dims: [usize; 3]) -> Self {
        let z = || Array3::zeros((dims[0], dims[1], dims[2]));
        TvDual { phi: [z(), z(), z()] }
    }

    /// Approximate `argmin_x ½‖x − z‖² + weight·TV(x)` by projected gradient
    /// on the dual, `iters` steps from the stored (warm-started) dual field.
    pub fn prox(&mut self, z: &Array3<C64>, weight: f64, iters: usize) -> Array3<C64> {
        let axes = active_axes(z.dim());
        if weight == 0.0 || axes.is_empty() {
            for p in &mut self.phi {
                p.fill(C64::new(0.0, 0.0));
            }
            return z.clone();
        }
        let tau = 1.0 / (4.0 * axes.len() as f64);
        for _ in 0..iters {
            let x = z - &grad_adjoint(&self.phi, &axes);
            for &a in &axes {
                let g = forward_diff(&x, a);
                self.phi[a].zip_mut_with(&g, |p, &gv| *p += tau * gv);
            }
            // Pointwise projection onto the radius-`weight` ball, coupling
            // all axis components of a voxel.
            let mut r2 = vec![0.0f64; z.len()];
            for &a in &axes {
                for (r, p) in r2.iter_mut().zip(self.phi[a].iter()) {
                    *r += p.norm_sqr();
                }
            }
            for &a in &axes {
                for (r, p) in r2.iter().zip(self.phi[a].iter_mut()) {
                    if *r > weight * weight {
                        *p *= weight / r.sqrt();
                    }
                }
            }
        }
        z - &grad_adjoint(&self.phi, &axes)
    }
}

/// One-shot TV proximal map with a cold-started dual.
pub fn prox_tv(z: &Array3<C64>, weight: f64, iters: usize) -> Array3<C64> {
    let d = z.dim();
    TvDual::new([d.0, d.1, d.2]).prox(z, weight, iters)
}

/// Penalty adaptation rule: grow `rho` when the primal residual dominates,
/// shrink it when the dual residual dominates, else leave it unchanged.
/// Callers must rescale the scaled dual variables by `rho / rho'`.
pub fn adapt_rho(primal: f64, dual: f64, mu: f64, factor: f64, rho: f64) -> f64 {
    if primal > mu * dual {
        rho * factor
    } else if dual > mu * primal {
        rho / factor
    } else {
        rho
    }
}

/// Density update: solve `(I + Σ_k S_k^H F_s^H F_s S_k) p = rhs` by CG from
/// `x0`, to relative tolerance [`P_UPDATE_TOL`]. The operator is applied
/// matrix-free through the encoding operator's normal form.
pub fn p_update(
    op: &FourierOp,
    maps: &[Array3<C64>],
    rhs: &Array3<C64>,
    x0: Array3<C64>,
    max_iters: usize,
) -> Result<CgOutcome<Array3<C64>>> {
    let maps_conj: Vec<Array3<C64>> = maps.iter().map(|m| m.mapv(|v| v.conj())).collect();
    let apply = |v: &Array3<C64>| {
        let mut out = v.clone();
        for (m, mc) in maps.iter().zip(&maps_conj) {
            let t = op.normal(&(m * v)).expect("normal application after validation");
            Zip::from(&mut out).and(mc).and(&t).for_each(|o, &s, &tv| *o += s * tv);
        }
        out
    };
    cg(apply, rhs, x0, max_iters, P_UPDATE_TOL, |_, _, _| {})
}

/// Driver configuration. `eps` holds the per-coil ball radii (for example
/// from [`crate::encoding::estimate_eps`]).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmmConfig {
    pub max_iters: usize,
    pub rho0: f64,
    /// Residual-balance threshold μ.
    pub mu: f64,
    /// Multiplicative ρ step when residuals are unbalanced.
    pub rho_factor: f64,
    pub tv_inner_iters: usize,
    pub tol_rel: f64,
    /// CG budget of each density update.
    pub cg_iters: usize,
    pub eps: Vec<f64>,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            max_iters: 300,
            rho0: 1.0,
            mu: 10.0,
            rho_factor: 2.0,
            tv_inner_iters: 20,
            tol_rel: 1e-5,
            cg_iters: 100,
            eps: Vec::new(),
        }
    }
}

impl AdmmConfig {
    fn validate(&self, n_coils: usize) -> Result<()> {
        if self.eps.len() != n_coils {
            return Err(Error::InvalidParameter(format!(
                "{} ball radii for {} coils",
                self.eps.len(),
                n_coils
            )));
        }
        if self.eps.iter().any(|&e| !(e >= 0.0)) {
            return Err(Error::InvalidParameter("ball radii must be nonnegative".into()));
        }
        if self.max_iters == 0 || self.cg_iters == 0 || self.tv_inner_iters == 0 {
            return Err(Error::InvalidParameter("iteration budgets must be positive".into()));
        }
        if self.rho0 <= 0.0 || self.mu <= 1.0 || self.rho_factor <= 1.0 || self.tol_rel <= 0.0 {
            return Err(Error::InvalidParameter(
                "need rho0 > 0, mu > 1, rho_factor > 1, tol_rel > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Image-space representation of one data block: the measured data, the
/// scaled dual, and the forward projection of the current density all enter
/// the updates only through their `F_s^H` pullbacks plus a few k-space inner
/// products, which the adjoint identity reduces to image-space quantities.
pub struct CoilBlock {
    /// `F_s^H y_k`.
    pub y_img: Array3<C64>,
    /// `‖y_k‖²`.
    pub syy: f64,
    /// `F_s^H u_k` for the scaled dual `u_k`.
    pub u_img: Array3<C64>,
    /// `‖u_k‖²`.
    pub suu: f64,
    /// `⟨u_k, y_k⟩`.
    pub suy: C64,
    /// `S_k p` at the current density.
    pub sp: Array3<C64>,
    /// `F_s^H F_s (S_k p)`.
    pub t: Array3<C64>,
    // Projection step products, refreshed every iteration.
    c: f64,
    ww: f64,
    ay: C64,
    au: C64,
    aa: f64,
    w_img: Array3<C64>,
}

/// Live ADMM state.
pub struct AdmmState {
    pub p: Array3<C64>,
    pub z0: Array3<C64>,
    pub u0: Array3<C64>,
    pub coils: Vec<CoilBlock>,
    pub rho: f64,
    pub iter: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    tv_dual: TvDual,
}

/// Per-iteration convergence record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdmmIteration {
    pub iter: usize,
    pub rho: f64,
    pub primal: f64,
    pub dual: f64,
    pub primal_scale: f64,
    pub dual_scale: f64,
    pub tv: f64,
    pub cg_iters: usize,
}

pub struct AdmmSolution {
    pub density: Array3<C64>,
    pub history: Vec<AdmmIteration>,
    /// Honest final residuals ‖y_k − F_s S_k p‖ from the true forward model.
    pub coil_residuals: Vec<f64>,
    /// Whether every coil satisfies its ball constraint within 1%.
    pub feasible: bool,
    /// Whether the residual tolerance was reached before the iteration cap.
    pub converged: bool,
}

fn cdotc(a: &Array3<C64>, b: &Array3<C64>) -> C64 {
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

fn norm_sq(a: &Array3<C64>) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

impl AdmmState {
    fn new(op: &FourierOp, maps: &[Array3<C64>], y: &KSpaceData, rho0: f64) -> Result<Self> {
        let dims = op.dims();
        let shape = (dims[0], dims[1], dims[2]);
        let mut coils = Vec::with_capacity(maps.len());
        let mut p = Array3::zeros(shape);
        for (k, m) in maps.iter().enumerate() {
            if m.dim() != shape {
                return Err(Error::ShapeMismatch(format!(
                    "map {k} has dims {:?}, encoding expects {:?}",
                    m.dim(),
                    shape
                )));
            }
            let row = y.samples.row(k).to_owned();
            let y_img = op.adjoint(&row)?;
            let syy = row.iter().map(|v| v.norm_sqr()).sum();
            Zip::from(&mut p).and(m).and(&y_img).for_each(|pv, &s, &yi| *pv += s.conj() * yi);
            coils.push(CoilBlock {
                y_img,
                syy,
                u_img: Array3::zeros(shape),
                suu: 0.0,
                suy: C64::new(0.0, 0.0),
                sp: Array3::zeros(shape),
                t: Array3::zeros(shape),
                c: 1.0,
                ww: 0.0,
                ay: C64::new(0.0, 0.0),
                au: C64::new(0.0, 0.0),
                aa: 0.0,
                w_img: Array3::zeros(shape),
            });
        }
        // Forward projections of the initial density.
        for (k, m) in maps.iter().enumerate() {
            let sp = m * &p;
            coils[k].t = op.normal(&sp)?;
            coils[k].sp = sp;
        }
        Ok(AdmmState {
            z0: p.clone(),
            u0: Array3::zeros(shape),
            p,
            coils,
            rho: rho0,
            iter: 0,
            primal_res: f64::INFINITY,
            dual_res: f64::INFINITY,
            tv_dual: TvDual::new(dims),
        })
    }

    /// One full cycle of the update steps: split-variable updates at the old
    /// density, the CG density solve, then the dual ascent (performed
    /// implicitly inside the pulled-back coil bookkeeping).
    fn step(
        &mut self,
        op: &FourierOp,
        maps: &[Array3<C64>],
        maps_conj: &[Array3<C64>],
        cfg: &AdmmConfig,
    ) -> Result<AdmmIteration> {
        // --- split-variable updates at the current density ---
        let prox_in = &self.p + &self.u0;
        self.z0 = self.tv_dual.prox(&prox_in, 1.0 / self.rho, cfg.tv_inner_iters);
        for (k, cb) in self.coils.iter_mut().enumerate() {
            cb.aa = cdotc(&cb.sp, &cb.t).re.max(0.0);
            cb.ay = cdotc(&cb.sp, &cb.y_img);
            cb.au = cdotc(&cb.sp, &cb.u_img);
            cb.ww = (cb.aa + cb.suu + cb.syy + 2.0 * cb.au.re - 2.0 * cb.ay.re
                - 2.0 * cb.suy.re)
                .max(0.0);
            let wn = cb.ww.sqrt();
            cb.c = if wn <= cfg.eps[k] { 1.0 } else { cfg.eps[k] / wn };
            cb.w_img = &cb.t + &cb.u_img - &cb.y_img;
        }

        // --- density update ---
        let mut rhs = &self.z0 - &self.u0;
        for (k, cb) in self.coils.iter().enumerate() {
            Zip::from(&mut rhs)
                .and(&maps_conj[k])
                .and(&cb.y_img)
                .and(&cb.w_img)
                .and(&cb.u_img)
                .for_each(|r, &sc, &yi, &wi, &ui| *r += sc * (yi + cb.c * wi - ui));
        }
        let sol = p_update(op, maps, &rhs, self.p.clone(), cfg.cg_iters)?;
        let p_new = sol.x;

        // --- dual ascent and residuals, per block ---
        let mut primal_sq = 0.0;
        let mut dual_sq = norm_sq(&(&p_new - &self.p));
        let mut load_sq = norm_sq(&p_new); // ‖A p‖²
        let mut z_sq = norm_sq(&self.z0);
        for (k, cb) in self.coils.iter_mut().enumerate() {
            let sp2 = &maps[k] * &p_new;
            let t2 = op.normal(&sp2)?;
            let a2a2 = cdotc(&sp2, &t2).re.max(0.0);
            let a2y = cdotc(&sp2, &cb.y_img);
            let a2u = cdotc(&sp2, &cb.u_img);
            let a2a = cdotc(&sp2, &cb.t);
            let c = C64::new(cb.c, 0.0);

            let yw = cb.ay.conj() + cb.suy.conj() - cb.syy;
            let zz = (cb.syy + 2.0 * cb.c * yw.re + cb.c * cb.c * cb.ww).max(0.0);
            let a2w = a2a + a2u - a2y;
            let a2z = a2y + c * a2w;
            primal_sq += (a2a2 + zz - 2.0 * a2z.re).max(0.0);
            dual_sq += (a2a2 - 2.0 * a2a.re + cb.aa).max(0.0);
            load_sq += a2a2;
            z_sq += zz;

            // u' = u + a' − y − c·w
            let wy = cb.ay + cb.suy - cb.syy; // ⟨w, y⟩
            let new_suy = cb.suy + a2y - cb.syy - c * wy;
            let cross = a2u.conj() - cb.suy - c * (cb.au.conj() + cb.suu - cb.suy) - a2y
                - c * a2w
                + c * yw;
            let new_suu = (cb.suu + a2a2 + cb.syy + cb.c * cb.c * cb.ww + 2.0 * cross.re).max(0.0);
            Zip::from(&mut cb.u_img)
                .and(&t2)
                .and(&cb.y_img)
                .and(&cb.w_img)
                .for_each(|u, &tv, &yi, &wi| *u += tv - yi - c * wi);
            cb.suy = new_suy;
            cb.suu = new_suu;
            cb.sp = sp2;
            cb.t = t2;
        }
        self.u0 = &self.u0 + &p_new - &self.z0;
        primal_sq += norm_sq(&(&p_new - &self.z0));
        self.p = p_new;
        self.iter += 1;

        self.primal_res = primal_sq.sqrt();
        self.dual_res = self.rho * dual_sq.sqrt();
        let primal_scale = load_sq.max(z_sq).sqrt();
        // Norm of the unscaled dual vector ρ·u, the natural size of the
        // dual-feasibility equation (A^H u itself vanishes at fixed points).
        let u_sq = norm_sq(&self.u0) + self.coils.iter().map(|cb| cb.suu).sum::<f64>();
        let dual_scale = self.rho * u_sq.sqrt();

        let record = AdmmIteration {
            iter: self.iter,
            rho: self.rho,
            primal: self.primal_res,
            dual: self.dual_res,
            primal_scale,
            dual_scale,
            tv: total_variation(&self.p),
            cg_iters: sol.iters,
        };

        // --- penalty adaptation with scaled-dual rescaling ---
        let new_rho = adapt_rho(self.primal_res, self.dual_res, cfg.mu, cfg.rho_factor, self.rho);
        if new_rho != self.rho {
            let f = self.rho / new_rho; // u ← u · (ρ_old/ρ_new)
            self.u0.mapv_inplace(|v| v * f);
            for cb in &mut self.coils {
                cb.u_img.mapv_inplace(|v| v * f);
                cb.suu *= f * f;
                cb.suy = cb.suy * f;
            }
            self.rho = new_rho;
        }
        Ok(record)
    }
}

/// Reconstruct a density from k-space data and fixed sensitivity maps by
/// constrained-TV ADMM. Stops when both residuals fall below
/// `tol_rel`·their scales, or at `max_iters`; the returned solution records
/// the honest per-coil data residuals of the final density.
pub fn admm_reconstruct(
    y: &KSpaceData,
    maps: &[Array3<C64>],
    cfg: &AdmmConfig,
) -> Result<AdmmSolution> {
    if maps.is_empty() {
        return Err(Error::InvalidParameter("no sensitivity maps".into()));
    }
    if y.n_coils() != maps.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} coils of data, {} maps",
            y.n_coils(),
            maps.len()
        )));
    }
    cfg.validate(maps.len())?;
    let d = maps[0].dim();
    let dims = [d.0, d.1, d.2];
    let op = FourierOp::new(dims, &y.traj)?;
    if y.n_samples() != op.n_samples() {
        return Err(Error::ShapeMismatch(format!(
            "data has {} samples per coil, trajectory yields {}",
            y.n_samples(),
            op.n_samples()
        )));
    }
    let maps_conj: Vec<Array3<C64>> = maps.iter().map(|m| m.mapv(|v| v.conj())).collect();
    let mut state = AdmmState::new(&op, maps, y, cfg.rho0)?;
    let mut history = Vec::new();
    let mut converged = false;
    for _ in 0..cfg.max_iters {
        let rec = state.step(&op, maps, &maps_conj, cfg)?;
        let p_ok = rec.primal <= cfg.tol_rel * rec.primal_scale.max(1e-30);
        let d_ok = rec.dual <= cfg.tol_rel * rec.dual_scale.max(1e-30);
        history.push(rec);
        if p_ok && d_ok {
            converged = true;
            break;
        }
    }
    let mut coil_residuals = Vec::with_capacity(maps.len());
    for (k, m) in maps.iter().enumerate() {
        let fwd = op.forward(&(m * &state.p))?;
        let res = (&y.samples.row(k).to_owned() - &fwd)
            .iter()
            .map(|v| v.norm_sqr())
            .sum::<f64>()
            .sqrt();
        coil_residuals.push(res);
    }
    let feasible = coil_residuals
        .iter()
        .zip(&cfg.eps)
        .all(|(&r, &e)| r <= 1.01 * e);
    Ok(AdmmSolution { density: state.p, history, coil_residuals, feasible, converged })
}
