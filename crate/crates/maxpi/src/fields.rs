//! Free-space time-harmonic dipole fields and boundary dipole placement.
//!
//! Convention: engineering time dependence e^{+jωt}, so the radiating scalar
//! kernel is g(r, r') = e^{-jk|r-r'|} / (4π|r-r'|). The magnetic field of a
//! unit electric current element with orientation ĵ is ∇g × ĵ; the field of a
//! unit magnetic element with orientation m̂ is (1/jωμ₀)·(∇∇ + k²)g·m̂. Both
//! follow from the free-space dyadic kernels; the closed forms used here are
//!
//!   g'(d)  = -(1 + jkd)·g/d,
//!   g''(d) = (2 + 2jkd - k²d²)·g/d²,
//!   (∇∇g)·m̂ = (g'' - g'/d)(R̂·m̂)R̂ + (g'/d)·m̂,     R = r - r'.
//!
//! Receive sensitivity uses the circularly polarized component
//! (h_x - j·h_y)/2; the z content of the field does not contribute.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FovGrid, MU_0};
use crate::C64;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

/// Scalar radiating kernel g(r, r') = e^{-jkd}/(4πd). Panics on coincident
/// points; dipole placement keeps sources strictly outside the voxel support.
pub fn scalar_green(r: [f64; 3], rp: [f64; 3], k: f64) -> C64 {
    let d = dist(r, rp);
    assert!(d > 0.0, "scalar_green: coincident source and observation point");
    C64::from_polar(1.0 / (FOUR_PI * d), -k * d)
}

/// Gradient of the scalar kernel with respect to the observation point r.
pub fn grad_green(r: [f64; 3], rp: [f64; 3], k: f64) -> [C64; 3] {
    let rv = [r[0] - rp[0], r[1] - rp[1], r[2] - rp[2]];
    let d = (rv[0] * rv[0] + rv[1] * rv[1] + rv[2] * rv[2]).sqrt();
    assert!(d > 0.0, "grad_green: coincident source and observation point");
    let g = C64::from_polar(1.0 / (FOUR_PI * d), -k * d);
    // g'/d · R
    let s = -g * C64::new(1.0, k * d) / (d * d);
    [s * rv[0], s * rv[1], s * rv[2]]
}

/// (∇∇ + k²I)g applied to a constant orientation vector.
pub fn helmholtz_dyad_apply(r: [f64; 3], rp: [f64; 3], k: f64, m: [f64; 3]) -> [C64; 3] {
    let rv = [r[0] - rp[0], r[1] - rp[1], r[2] - rp[2]];
    let d2 = rv[0] * rv[0] + rv[1] * rv[1] + rv[2] * rv[2];
    let d = d2.sqrt();
    assert!(d > 0.0, "helmholtz_dyad_apply: coincident source and observation point");
    let g = C64::from_polar(1.0 / (FOUR_PI * d), -k * d);
    let kd = k * d;
    // (g'' - g'/d) = (3 + 3jkd - (kd)²)·g/d², radial part weighted by (R̂·m̂).
    let radial = g * C64::new(3.0 - kd * kd, 3.0 * kd) / d2;
    // g'/d + k²g = (k²d² - 1 - jkd)·g/d².
    let axial = g * C64::new(kd * kd - 1.0, -kd) / d2;
    let rm = (rv[0] * m[0] + rv[1] * m[1] + rv[2] * m[2]) / d2; // (R̂·m̂)/d
    let w = radial * rm;
    [w * rv[0] + axial * m[0], w * rv[1] + axial * m[1], w * rv[2] + axial * m[2]]
}

/// Source kind of a boundary dipole.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DipoleKind {
    Electric,
    Magnetic,
}

/// A point dipole with unit-strength orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dipole {
    pub position: [f64; 3],
    pub kind: DipoleKind,
    pub orientation: [f64; 3],
}

/// Magnetic field of a unit dipole at observation point r.
///
/// `k` is the wavenumber and `omega` the angular Larmor frequency; the
/// magnetic kind carries the 1/(jωμ₀) kernel scale.
pub fn h_field(dipole: &Dipole, r: [f64; 3], k: f64, omega: f64) -> [C64; 3] {
    match dipole.kind {
        DipoleKind::Electric => {
            let gg = grad_green(r, dipole.position, k);
            let o = dipole.orientation;
            [
                gg[1] * o[2] - gg[2] * o[1],
                gg[2] * o[0] - gg[0] * o[2],
                gg[0] * o[1] - gg[1] * o[0],
            ]
        }
        DipoleKind::Magnetic => {
            let hd = helmholtz_dyad_apply(r, dipole.position, k, dipole.orientation);
            let scale = C64::new(0.0, -1.0 / (omega * MU_0)); // 1/(jωμ)
            [hd[0] * scale, hd[1] * scale, hd[2] * scale]
        }
    }
}

/// Circularly polarized receive component (h_x - j·h_y)/2.
pub fn circular_polarization(h: [C64; 3]) -> C64 {
    0.5 * (h[0] - C64::new(0.0, 1.0) * h[1])
}

/// Receive-sensitivity samples of one dipole at every support voxel.
pub fn b1_minus_column(grid: &FovGrid, dipole: &Dipole) -> Array1<C64> {
    let k = grid.wavenumber();
    let omega = 2.0 * std::f64::consts::PI * grid.larmor_hz();
    Array1::from_iter(
        grid.support_indices()
            .iter()
            .map(|&flat| circular_polarization(h_field(dipole, grid.centroid_flat(flat), k, omega))),
    )
}

/// Boundary dipole set: positions on a shell around the FOV, three orthogonal
/// orientations and both source kinds per position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DipoleSet {
    pub dipoles: Vec<Dipole>,
    pub margin_m: f64,
    pub spacing_m: f64,
}

impl DipoleSet {
    pub fn len(&self) -> usize {
        self.dipoles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dipoles.is_empty()
    }

    /// Number of distinct positions (6 dipoles per position).
    pub fn n_positions(&self) -> usize {
        self.dipoles.len() / 6
    }
}

const ORIENTATIONS: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Place dipoles on the boundary shell of the FOV's enclosing box, `margin_m`
/// outside it, sampled every `spacing_m`.
///
/// For a single-slice grid the shell degenerates to three rectangular rings:
/// one in the slice plane and two offset by ±margin along z. For volumetric
/// grids the full box surface is tiled. Every position receives six dipoles:
/// {x̂, ŷ, ẑ} orientations × {electric, magnetic} kinds.
pub fn place_boundary_dipoles(grid: &FovGrid, margin_m: f64, spacing_m: f64) -> Result<DipoleSet> {
    if !(margin_m > 0.0) || !(spacing_m > 0.0) {
        return Err(Error::DegenerateDipoleSet(format!(
            "margin ({margin_m}) and spacing ({spacing_m}) must be positive"
        )));
    }
    let ext = grid.extent();
    let max_ext = ext[0].max(ext[1]).max(ext[2]);
    if spacing_m > max_ext + 2.0 * margin_m {
        return Err(Error::DegenerateDipoleSet(format!(
            "spacing {spacing_m} exceeds the expanded FOV extent"
        )));
    }
    let o = grid.origin();
    let lo = [o[0] - margin_m, o[1] - margin_m, o[2] - margin_m];
    let hi = [o[0] + ext[0] + margin_m, o[1] + ext[1] + margin_m, o[2] + ext[2] + margin_m];

    let mut positions: Vec<[f64; 3]> = Vec::new();
    if grid.is_2d() {
        let zc = o[2] + 0.5 * ext[2];
        for z in [zc - margin_m, zc, zc + margin_m] {
            ring_positions(lo, hi, z, spacing_m, &mut positions);
        }
    } else {
        box_surface_positions(lo, hi, spacing_m, &mut positions);
    }
    if positions.is_empty() {
        return Err(Error::DegenerateDipoleSet("no boundary positions generated".into()));
    }

    let mut dipoles = Vec::with_capacity(positions.len() * 6);
    for &p in &positions {
        for kind in [DipoleKind::Electric, DipoleKind::Magnetic] {
            for orientation in ORIENTATIONS {
                dipoles.push(Dipole { position: p, kind, orientation });
            }
        }
    }
    Ok(DipoleSet { dipoles, margin_m, spacing_m })
}

/// Rectangle-perimeter walk in the plane z = const, step `s` along arclength.
fn ring_positions(lo: [f64; 3], hi: [f64; 3], z: f64, s: f64, out: &mut Vec<[f64; 3]>) {
    let w = hi[0] - lo[0];
    let h = hi[1] - lo[1];
    let perimeter = 2.0 * (w + h);
    let n = (perimeter / s).floor() as usize;
    for i in 0..n.max(1) {
        let t = i as f64 * s;
        let p = if t < w {
            [lo[0] + t, lo[1], z]
        } else if t < w + h {
            [hi[0], lo[1] + (t - w), z]
        } else if t < 2.0 * w + h {
            [hi[0] - (t - w - h), hi[1], z]
        } else {
            [lo[0], hi[1] - (t - 2.0 * w - h), z]
        };
        out.push(p);
    }
}

/// Tile the six faces of a box with pitch `s`; edge lattices are assigned to
/// the z faces (full extent) while side faces keep interior lines only, so no
/// position repeats.
fn box_surface_positions(lo: [f64; 3], hi: [f64; 3], s: f64, out: &mut Vec<[f64; 3]>) {
    let steps = |a: f64, b: f64| -> Vec<f64> {
        let n = ((b - a) / s).floor() as usize;
        (0..=n).map(|i| a + i as f64 * s).collect()
    };
    let xs = steps(lo[0], hi[0]);
    let ys = steps(lo[1], hi[1]);
    let zs = steps(lo[2], hi[2]);
    let z_interior: Vec<f64> = zs.iter().copied().filter(|&z| z > lo[2] && z < hi[2] - 1e-12).collect();
    let x_interior: Vec<f64> = xs.iter().copied().filter(|&x| x > lo[0] && x < hi[0] - 1e-12).collect();
    // z faces: full (x, y) lattice
    for &z in &[lo[2], hi[2]] {
        for &x in &xs {
            for &y in &ys {
                out.push([x, y, z]);
            }
        }
    }
    // x faces: full y, interior z
    for &x in &[lo[0], hi[0]] {
        for &y in &ys {
            for &z in &z_interior {
                out.push([x, y, z]);
            }
        }
    }
    // y faces: interior x, interior z
    for &y in &[lo[1], hi[1]] {
        for &x in &x_interior {
            for &z in &z_interior {
                out.push([x, y, z]);
            }
        }
    }
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Support;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const K: f64 = 2.677044; // 3 T wavenumber, rad/m

    fn rand_point(rng: &mut ChaCha8Rng, scale: f64) -> [f64; 3] {
        [rng.gen_range(-scale..scale), rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)]
    }

    #[test]
    fn green_reciprocity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let a = rand_point(&mut rng, 0.3);
            let mut b = rand_point(&mut rng, 0.3);
            b[0] += 0.7; // keep separated
            let g1 = scalar_green(a, b, K);
            let g2 = scalar_green(b, a, K);
            assert_eq!(g1, g2);
        }
    }

    #[test]
    fn grad_green_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let h = 1e-6;
        for _ in 0..5 {
            let rp = rand_point(&mut rng, 0.1);
            let mut r = rand_point(&mut rng, 0.1);
            r[1] += 0.5;
            let g = grad_green(r, rp, K);
            for axis in 0..3 {
                let mut rf = r;
                let mut rb = r;
                rf[axis] += h;
                rb[axis] -= h;
                let fd = (scalar_green(rf, rp, K) - scalar_green(rb, rp, K)) / (2.0 * h);
                assert!((g[axis] - fd).norm() / fd.norm().max(1e-30) < 1e-5, "axis {axis}");
            }
        }
    }

    #[test]
    fn electric_field_matches_fd_curl() {
        // Oracle: h = curl(g·ĵ) for constant ĵ, by central differences.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = 1e-5;
        for trial in 0..5 {
            let rp = rand_point(&mut rng, 0.1);
            let mut r = rand_point(&mut rng, 0.1);
            r[0] += 0.4;
            let o = {
                let v = rand_point(&mut rng, 1.0);
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                [v[0] / n, v[1] / n, v[2] / n]
            };
            let dip = Dipole { position: rp, kind: DipoleKind::Electric, orientation: o };
            let field = h_field(&dip, r, K, 2.0 * std::f64::consts::PI * 127.731e6);
            // central-difference curl of A(r) = g(r, rp)·o
            let a = |p: [f64; 3], c: usize| scalar_green(p, rp, K) * o[c];
            let d = |c: usize, axis: usize| {
                let mut pf = r;
                let mut pb = r;
                pf[axis] += h;
                pb[axis] -= h;
                (a(pf, c) - a(pb, c)) / (2.0 * h)
            };
            let curl = [d(2, 1) - d(1, 2), d(0, 2) - d(2, 0), d(1, 0) - d(0, 1)];
            let scale: f64 = curl.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            for axis in 0..3 {
                assert!(
                    (field[axis] - curl[axis]).norm() / scale < 1e-5,
                    "trial {trial} axis {axis}: {:?} vs {:?}",
                    field[axis],
                    curl[axis]
                );
            }
        }
    }

    #[test]
    fn magnetic_field_matches_fd_hessian() {
        // Oracle: (∇∇ + k²)g·m̂ via second-order central differences of g.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let h = 1e-5;
        let omega = 2.0 * std::f64::consts::PI * 127.731e6;
        for trial in 0..5 {
            let rp = rand_point(&mut rng, 0.1);
            let mut r = rand_point(&mut rng, 0.1);
            r[2] += 0.45;
            let o = {
                let v = rand_point(&mut rng, 1.0);
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                [v[0] / n, v[1] / n, v[2] / n]
            };
            let g0 = scalar_green(r, rp, K);
            let shift = |da: f64, db: f64, ea: usize, eb: usize| {
                let mut p = r;
                p[ea] += da;
                p[eb] += db;
                scalar_green(p, rp, K)
            };
            let mut hess = [[C64::new(0.0, 0.0); 3]; 3];
            for a in 0..3 {
                for b in 0..3 {
                    hess[a][b] = if a == b {
                        (shift(h, 0.0, a, b) - 2.0 * g0 + shift(-h, 0.0, a, b)) / (h * h)
                    } else {
                        (shift(h, h, a, b) - shift(h, -h, a, b) - shift(-h, h, a, b) + shift(-h, -h, a, b))
                            / (4.0 * h * h)
                    };
                }
            }
            let mut oracle = [C64::new(0.0, 0.0); 3];
            for a in 0..3 {
                for b in 0..3 {
                    oracle[a] += hess[a][b] * o[b];
                }
                oracle[a] += K * K * g0 * o[a];
                oracle[a] *= C64::new(0.0, -1.0 / (omega * MU_0));
            }
            let dip = Dipole { position: rp, kind: DipoleKind::Magnetic, orientation: o };
            let field = h_field(&dip, r, K, omega);
            let scale: f64 = oracle.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            for axis in 0..3 {
                assert!(
                    (field[axis] - oracle[axis]).norm() / scale < 1e-5,
                    "trial {trial} axis {axis}: {:?} vs {:?}",
                    field[axis],
                    oracle[axis]
                );
            }
        }
    }

    #[test]
    fn polarization_selects_transverse_components() {
        let j = C64::new(0.0, 1.0);
        let one = C64::new(1.0, 0.0);
        let zero = C64::new(0.0, 0.0);
        assert_eq!(circular_polarization([one, zero, zero]), C64::new(0.5, 0.0));
        assert_eq!(circular_polarization([zero, one, zero]), C64::new(0.0, -0.5));
        // pure z field contributes nothing to the receive component
        assert_eq!(circular_polarization([zero, zero, one]), zero);
        // circularly polarized pair (x̂ + j ŷ) vanishes; (x̂ - j ŷ) adds up
        assert_eq!(circular_polarization([one, j, zero]), C64::new(1.0, 0.0));
        assert_eq!(circular_polarization([one, -j, zero]), zero);
    }

    fn grid_2d(n: usize, fov: f64) -> FovGrid {
        FovGrid::new([n, n, 1], [fov / n as f64, fov / n as f64, fov / n as f64], 3.0, Support::Full).unwrap()
    }

    #[test]
    fn placement_stays_outside_support() {
        let g = grid_2d(4, 4e-3); // 4x4, 1 mm voxels
        let vox = 1e-3;
        let set = place_boundary_dipoles(&g, vox, vox).unwrap();
        assert!(!set.is_empty());
        assert_eq!(set.len() % 6, 0, "six dipoles per position");
        // every dipole at least `margin` away from every support centroid
        for d in &set.dipoles {
            for &flat in g.support_indices() {
                let c = g.centroid_flat(flat);
                assert!(dist(d.position, c) >= vox - 1e-12);
            }
        }
        // both kinds present
        assert!(set.dipoles.iter().any(|d| d.kind == DipoleKind::Electric));
        assert!(set.dipoles.iter().any(|d| d.kind == DipoleKind::Magnetic));
    }

    #[test]
    fn two_d_placement_uses_three_rings() {
        let g = grid_2d(8, 8e-3);
        let set = place_boundary_dipoles(&g, 2e-3, 1e-3).unwrap();
        let mut zs: Vec<i64> = set.dipoles.iter().map(|d| (d.position[2] * 1e9).round() as i64).collect();
        zs.sort_unstable();
        zs.dedup();
        assert_eq!(zs.len(), 3, "in-plane ring plus two offset rings");
        assert_eq!(zs[1], 0, "middle ring on the slice plane");
        assert_eq!(zs[0], -zs[2]);
    }

    #[test]
    fn doubling_spacing_quarters_surface_count() {
        let g = FovGrid::new([12, 12, 12], [2e-3; 3], 3.0, Support::Full).unwrap();
        let fine = place_boundary_dipoles(&g, 4e-3, 1e-3).unwrap();
        let coarse = place_boundary_dipoles(&g, 4e-3, 2e-3).unwrap();
        let ratio = fine.len() as f64 / coarse.len() as f64;
        assert!((3.0..5.0).contains(&ratio), "surface density scaling, got {ratio}");
    }

    #[test]
    fn oversized_spacing_is_degenerate() {
        let g = grid_2d(4, 4e-3);
        let err = place_boundary_dipoles(&g, 1e-3, 1.0).unwrap_err();
        assert!(matches!(err, Error::DegenerateDipoleSet(_)));
    }

    #[test]
    fn paper_scale_slice_has_hundreds_of_excitations() {
        // 320² voxels over 220 mm: the default shell (margin and spacing of
        // two voxels) must offer at least 500 independent sources.
        let g = grid_2d(320, 0.220);
        let vox = 0.220 / 320.0;
        let set = place_boundary_dipoles(&g, 2.0 * vox, 2.0 * vox).unwrap();
        assert!(set.len() >= 500, "got {}", set.len());
    }

    #[test]
    fn field_column_is_finite_and_nonzero() {
        let g = grid_2d(8, 0.22);
        let set = place_boundary_dipoles(&g, 0.22 / 4.0, 0.22 / 4.0).unwrap();
        for d in set.dipoles.iter().take(12) {
            let col = b1_minus_column(&g, d);
            assert_eq!(col.len(), g.n_support());
            assert!(col.iter().all(|z| z.is_finite()));
            assert!(col.iter().any(|z| z.norm() > 0.0));
        }
    }
}
