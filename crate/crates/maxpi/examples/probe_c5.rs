//! Temporary diagnostic for the joint-estimation acceptance pipeline.

use maxpi::basis::{compute_basis, project, sample_random_fields};
use maxpi::encoding::{forward_model, make_trajectory, FourierOp, TrajectorySpec};
use maxpi::fields::place_boundary_dipoles;
use maxpi::grid::{FovGrid, Support};
use maxpi::irgn::{expand_maps, irgn_reconstruct, IrgnConfig, MapBasis};
use maxpi::metrics::nrmse;
use maxpi::phantom::{birdcage_sens, shepp_logan};
use ndarray::Array2;
use num_complex::Complex64 as C64;

fn main() {
    let dims = [64usize, 64, 1];
    let vox = 0.220 / 64.0;
    let grid = FovGrid::new(dims, [vox, vox, vox], 3.0, Support::Full).unwrap();
    let dipoles = place_boundary_dipoles(&grid, 2.0 * vox, 2.0 * vox).unwrap();
    let samples = sample_random_fields(&grid, &dipoles, 225, 7).unwrap();
    let basis = compute_basis(&samples, 50).unwrap();
    let mb = MapBasis::Dense(basis);

    let density = shepp_logan(dims).unwrap();
    let traj = make_trajectory(
        dims,
        &TrajectorySpec::Cartesian { r_phase: 2, r_slice: 1, acs_lines: 16, caipi_shift: 0 },
    )
    .unwrap();
    let op = FourierOp::new(dims, &traj).unwrap();

    let mut coeffs_true: Array2<C64> = Array2::zeros((4, 50));
    let bird = birdcage_sens(dims, 4, 1.6).unwrap();
    for (kc, map) in bird.iter().enumerate() {
        let (alpha, err) = match &mb {
            MapBasis::Dense(fb) => project(fb, &grid, map).unwrap(),
            _ => unreachable!(),
        };
        println!(
            "coil {kc}: projection rel err {err:.3e}, |alpha| = {:.3e}",
            alpha.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
        );
        coeffs_true.row_mut(kc).assign(&alpha);
    }
    let maps_true = expand_maps(&grid, &mb, &coeffs_true);
    let y = forward_model(&op, &density, &maps_true).unwrap();

    for (alpha0, decay, cg_iters) in [
        (1.0, 0.1, 400),
        (1.0, 0.1, 600),
        (1.0, 0.12, 500),
        (2.0, 0.1, 400),
        (1.0, 0.08, 400),
        (1.0, 0.08, 600),
    ] {
        let mut cfg = IrgnConfig::new(50);
        cfg.alpha0 = alpha0;
        cfg.beta0 = alpha0;
        cfg.decay = decay;
        cfg.cg_iters = cg_iters;
        cfg.cg_tol = 1e-8;
        let t0 = std::time::Instant::now();
        let sol = irgn_reconstruct(&grid, &y, &mb, &cfg).unwrap();
        let mut worst = 0.0f64;
        for kc in 0..4 {
            let got = &sol.maps[kc] * &sol.density;
            let want = &maps_true[kc] * &density;
            worst = worst.max(nrmse(got.view(), want.view()).unwrap());
        }
        let hist: Vec<String> =
            sol.history.iter().map(|h| format!("{:.2e}({})", h.residual, h.cg_iters)).collect();
        println!(
            "a0 {alpha0:.0e} decay {decay} cg {cg_iters}: worst product {worst:.3e}, {:.1}s\n    resid(cg): {}",
            t0.elapsed().as_secs_f64(),
            hist.join(" ")
        );
    }
}
