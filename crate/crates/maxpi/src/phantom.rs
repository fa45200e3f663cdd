//! Synthetic ground truth: the Shepp-Logan head slice and receive maps from
//! a ring of point-dipole loop coils.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::fields::{circular_polarization, h_field, Dipole, DipoleKind};
use crate::C64;

/// One phantom ellipse: additive intensity in tenths (so that overlapping
/// regions cancel exactly in integer arithmetic), semi-axes, center, rotation.
struct Ellipse {
    add_tenths: i32,
    a: f64,
    b: f64,
    x0: f64,
    y0: f64,
    phi_deg: f64,
}

/// The standard 10-ellipse head geometry with the contrast-adjusted
/// intensities that keep the summed values in [0, 1].
const SHEPP_LOGAN: [Ellipse; 10] = [
    Ellipse { add_tenths: 10, a: 0.69, b: 0.92, x0: 0.0, y0: 0.0, phi_deg: 0.0 },
    Ellipse { add_tenths: -8, a: 0.6624, b: 0.874, x0: 0.0, y0: -0.0184, phi_deg: 0.0 },
    Ellipse { add_tenths: -2, a: 0.11, b: 0.31, x0: 0.22, y0: 0.0, phi_deg: -18.0 },
    Ellipse { add_tenths: -2, a: 0.16, b: 0.41, x0: -0.22, y0: 0.0, phi_deg: 18.0 },
    Ellipse { add_tenths: 1, a: 0.21, b: 0.25, x0: 0.0, y0: 0.35, phi_deg: 0.0 },
    Ellipse { add_tenths: 1, a: 0.046, b: 0.046, x0: 0.0, y0: 0.1, phi_deg: 0.0 },
    Ellipse { add_tenths: 1, a: 0.046, b: 0.046, x0: 0.0, y0: -0.1, phi_deg: 0.0 },
    Ellipse { add_tenths: 1, a: 0.046, b: 0.023, x0: -0.08, y0: -0.605, phi_deg: 0.0 },
    Ellipse { add_tenths: 1, a: 0.023, b: 0.023, x0: 0.0, y0: -0.606, phi_deg: 0.0 },
    Ellipse { add_tenths: 1, a: 0.023, b: 0.046, x0: 0.06, y0: -0.605, phi_deg: 0.0 },
];

/// Normalized in-plane coordinates of pixel (i, j): centroids on [−1, 1]².
/// Axis 0 is x, axis 1 is y.
fn pixel_coords(i: usize, j: usize, n1: usize, n2: usize) -> (f64, f64) {
    let x = -1.0 + (i as f64 + 0.5) * 2.0 / n1 as f64;
    let y = -1.0 + (j as f64 + 0.5) * 2.0 / n2 as f64;
    (x, y)
}

fn inside(e: &Ellipse, x: f64, y: f64) -> bool {
    let phi = e.phi_deg.to_radians();
    let (dx, dy) = (x - e.x0, y - e.y0);
    let u = dx * phi.cos() + dy * phi.sin();
    let v = -dx * phi.sin() + dy * phi.cos();
    (u / e.a).powi(2) + (v / e.b).powi(2) <= 1.0
}

/// Shepp-Logan density on a grid; values in [0, 1], zero outside the skull.
/// Volumes (n3 > 1) replicate the slice along the third axis.
pub fn shepp_logan(dims: [usize; 3]) -> Result<Array3<C64>> {
    let [n1, n2, n3] = dims;
    if n1 < 16 || n2 < 16 {
        return Err(Error::InvalidParameter(format!(
            "phantom needs at least 16×16 pixels, got {n1}×{n2}"
        )));
    }
    let mut vol = Array3::zeros((n1, n2, n3));
    for i in 0..n1 {
        for j in 0..n2 {
            let (x, y) = pixel_coords(i, j, n1, n2);
            let mut tenths = 0;
            for e in &SHEPP_LOGAN {
                if inside(e, x, y) {
                    tenths += e.add_tenths;
                }
            }
            for k in 0..n3 {
                vol[(i, j, k)] = C64::new(tenths as f64 / 10.0, 0.0);
            }
        }
    }
    Ok(vol)
}

/// Analytic receive maps for a ring of `n_coils` loop elements.
///
/// Coil k is modelled as a point magnetic dipole at angle 2πk/C on a circle
/// of relative radius `radius_rel` (in units of the half field of view) in
/// the central slice, with its moment pointing radially inward — the normal
/// of a surface loop facing the subject. The map is the circularly polarized
/// receive component (h_x − i·h_y)/2 of the closed-form free-space field of
/// that dipole, evaluated at a nominal 220 mm field of view and 3 T. The
/// maps are smooth, decay roughly like 1/d³ away from the coil, carry the
/// physical receive phase, and rotating the coil index by one rotates the
/// whole pattern by 2π/C (with the matching e^{−i·2π/C} phase of the
/// circular component). One global constant scales the maps so the mean
/// sum-of-squares over the FOV is 1, the usual working normalization for
/// sensitivity-encoded reconstruction. Volumes (`dims[2] > 1`) replicate the
/// central slice along the third axis.
///
/// The ring must clear the FOV square: every coil center has to stay at
/// least 0.05 half-FOV units away from [−1, 1]², otherwise the dipole's
/// near-field spike would land inside the image. A densely packed ring
/// (coils near the diagonal) therefore needs `radius_rel` ≳ 1.5.
pub fn birdcage_sens(dims: [usize; 3], n_coils: usize, radius_rel: f64) -> Result<Vec<Array3<C64>>> {
    if n_coils < 2 {
        return Err(Error::InvalidParameter(format!("need C ≥ 2 coils, got {n_coils}")));
    }
    if !(radius_rel > 0.0) {
        return Err(Error::InvalidParameter("coil circle radius must be positive".into()));
    }
    let [n1, n2, n3] = dims;
    // Nominal physical scale; map shapes are insensitive to it in the
    // near-field regime but the phase curvature matches a 3 T acquisition.
    let half_fov = 0.110;
    let freq = crate::grid::GAMMA_HZ_PER_TESLA * 3.0;
    let k = 2.0 * std::f64::consts::PI * freq * (crate::grid::EPSILON_0 * crate::grid::MU_0).sqrt();
    let omega = 2.0 * std::f64::consts::PI * freq;
    let mut slices = Vec::with_capacity(n_coils);
    for c in 0..n_coils {
        let theta = 2.0 * std::f64::consts::PI * c as f64 / n_coils as f64;
        let (sin, cos) = theta.sin_cos();
        let (px, py) = (radius_rel * cos, radius_rel * sin);
        // distance from the coil center to the FOV square [−1, 1]²
        let clearance = (px.abs() - 1.0).max(0.0).hypot((py.abs() - 1.0).max(0.0));
        if clearance < 0.05 {
            return Err(Error::InvalidParameter(format!(
                "coil {c} at relative radius {radius_rel} sits inside or nearly touches \
                 the field of view; widen the ring (a dense ring needs radius > ~1.5)"
            )));
        }
        let dipole = Dipole {
            position: [half_fov * px, half_fov * py, 0.0],
            kind: DipoleKind::Magnetic,
            orientation: [-cos, -sin, 0.0],
        };
        let mut slice = Array3::zeros((n1, n2, 1));
        for i in 0..n1 {
            for j in 0..n2 {
                let (x, y) = pixel_coords(i, j, n1, n2);
                let h = h_field(&dipole, [half_fov * x, half_fov * y, 0.0], k, omega);
                slice[(i, j, 0)] = circular_polarization(h);
            }
        }
        slices.push(slice);
    }
    let total_sq: f64 = slices.iter().flat_map(|m| m.iter()).map(|z| z.norm_sqr()).sum();
    if !(total_sq > 0.0) {
        return Err(Error::ZeroMap);
    }
    // mean coil sum-of-squares over the slice becomes 1
    let scale = ((n1 * n2) as f64 / total_sq).sqrt();
    let mut maps = Vec::with_capacity(n_coils);
    for slice in slices {
        let mut vol = Array3::zeros((n1, n2, n3));
        for i in 0..n1 {
            for j in 0..n2 {
                let v = slice[(i, j, 0)] * scale;
                for kz in 0..n3 {
                    vol[(i, j, kz)] = v;
                }
            }
        }
        maps.push(vol);
    }
    Ok(maps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn background_is_zero_and_values_bounded() {
        let p = shepp_logan([64, 64, 1]).unwrap();
        // corners lie outside the skull ellipse
        for &(i, j) in &[(0, 0), (63, 0), (0, 63), (63, 63)] {
            assert_eq!(p[(i, j, 0)], C64::new(0.0, 0.0));
        }
        for v in p.iter() {
            assert!(v.im == 0.0 && v.re >= 0.0 && v.re <= 1.0, "value {v}");
        }
        // interior (brain tissue) is nonzero
        assert!(p[(32, 32, 0)].re > 0.0);
    }

    #[test]
    fn outer_ellipses_are_mirror_symmetric() {
        // Ellipses 1–2 have x0 = 0 and no tilt, so the head outline and the
        // brain interior are symmetric in x. Probe rows outside the tilted
        // interior structures (|y| > 0.45 region holds only ellipses 1, 2
        // near the top; use the top band).
        let n = 128;
        let p = shepp_logan([n, n, 1]).unwrap();
        for j in (n * 7 / 8)..n {
            for i in 0..n {
                let a = p[(i, j, 0)];
                let b = p[(n - 1 - i, j, 0)];
                assert_eq!(a, b, "asymmetry at ({i},{j})");
            }
        }
    }

    #[test]
    fn matches_independent_ellipse_table_evaluation() {
        // test-local reimplementation straight from the published table
        let table: [(f64, f64, f64, f64, f64, f64); 10] = [
            (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
            (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
            (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
            (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
            (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
            (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
            (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
            (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
            (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
            (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
        ];
        let n = 64;
        let p = shepp_logan([n, n, 1]).unwrap();
        let mut sum_lib = 0.0;
        let mut sum_oracle = 0.0;
        for i in 0..n {
            for j in 0..n {
                let x = -1.0 + (i as f64 + 0.5) * 2.0 / n as f64;
                let y = -1.0 + (j as f64 + 0.5) * 2.0 / n as f64;
                let mut val = 0.0;
                for &(add, a, b, x0, y0, deg) in &table {
                    let phi = deg.to_radians();
                    let (dx, dy) = (x - x0, y - y0);
                    let u = dx * phi.cos() + dy * phi.sin();
                    let v = -dx * phi.sin() + dy * phi.cos();
                    if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                        val += add;
                    }
                }
                assert!(
                    (p[(i, j, 0)].re - val).abs() < 1e-14,
                    "pixel ({i},{j}): {} vs {val}",
                    p[(i, j, 0)].re
                );
                sum_lib += p[(i, j, 0)].re;
                sum_oracle += val;
            }
        }
        assert!((sum_lib - sum_oracle).abs() < 1e-12);
        assert!(sum_lib > 0.0);
    }

    #[test]
    fn volume_replicates_the_slice() {
        let p = shepp_logan([32, 32, 3]).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                assert_eq!(p[(i, j, 0)], p[(i, j, 1)]);
                assert_eq!(p[(i, j, 0)], p[(i, j, 2)]);
            }
        }
    }

    #[test]
    fn tiny_grids_are_rejected() {
        assert!(shepp_logan([8, 8, 1]).is_err());
        assert!(birdcage_sens([32, 32, 1], 1, 1.2).is_err());
    }

    #[test]
    fn ring_touching_the_fov_is_rejected() {
        // 8 coils at radius 1.2 put the diagonal elements inside the square
        assert!(birdcage_sens([32, 32, 1], 8, 1.2).is_err());
        // widening the ring fixes it
        assert!(birdcage_sens([32, 32, 1], 8, 1.6).is_ok());
    }

    fn bilinear(map: &Array3<C64>, x: f64, y: f64, n: usize) -> C64 {
        // sample at normalized coords via the inverse of pixel_coords
        let fi = (x + 1.0) * n as f64 / 2.0 - 0.5;
        let fj = (y + 1.0) * n as f64 / 2.0 - 0.5;
        let (i0, j0) = (fi.floor() as isize, fj.floor() as isize);
        let (ti, tj) = (fi - i0 as f64, fj - j0 as f64);
        let at = |i: isize, j: isize| {
            let i = i.clamp(0, n as isize - 1) as usize;
            let j = j.clamp(0, n as isize - 1) as usize;
            map[(i, j, 0)]
        };
        at(i0, j0) * ((1.0 - ti) * (1.0 - tj))
            + at(i0 + 1, j0) * (ti * (1.0 - tj))
            + at(i0, j0 + 1) * ((1.0 - ti) * tj)
            + at(i0 + 1, j0 + 1) * (ti * tj)
    }

    #[test]
    fn coil_shift_equals_map_rotation() {
        let n = 64;
        let c = 8;
        let maps = birdcage_sens([n, n, 1], c, 1.6).unwrap();
        let dtheta = 2.0 * std::f64::consts::PI / c as f64;
        let peak = maps[0].iter().map(|z| z.norm()).fold(0.0, f64::max);
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                let x = -1.0 + (i as f64 + 0.5) * 2.0 / n as f64;
                let y = -1.0 + (j as f64 + 0.5) * 2.0 / n as f64;
                if x * x + y * y > 0.8 * 0.8 {
                    continue; // stay clear of edge clamping in the interpolant
                }
                // Map of coil 1 at (x, y) should equal map of coil 0 at the
                // point rotated back by 2π/C, times the phase e^{−i·2π/C}
                // that the circular component (h_x − i·h_y)/2 picks up when
                // the source is rotated.
                let (sin, cos) = dtheta.sin_cos();
                let xr = cos * x + sin * y;
                let yr = -sin * x + cos * y;
                let want = bilinear(&maps[0], xr, yr, n) * C64::from_polar(1.0, -dtheta);
                let got = maps[1][(i, j, 0)];
                worst = worst.max((got - want).norm() / peak);
            }
        }
        assert!(worst < 1e-2, "rotation covariance off by {worst:.3e}");
    }

    #[test]
    fn sum_of_squares_positive() {
        let maps = birdcage_sens([32, 32, 1], 4, 1.2).unwrap();
        for i in 0..32 {
            for j in 0..32 {
                let sos: f64 = maps.iter().map(|m| m[(i, j, 0)].norm_sqr()).sum();
                assert!(sos > 0.0);
            }
        }
    }

    #[test]
    fn deterministic_across_calls() {
        assert_eq!(shepp_logan([32, 32, 1]).unwrap(), shepp_logan([32, 32, 1]).unwrap());
        let a = birdcage_sens([32, 32, 1], 4, 1.2).unwrap();
        let b = birdcage_sens([32, 32, 1], 4, 1.2).unwrap();
        assert_eq!(a, b);
    }
}
