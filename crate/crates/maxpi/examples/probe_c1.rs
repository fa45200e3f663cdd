//! Temporary probe for criterion 1: analytic vs physical coil maps.

use maxpi::basis::{compute_basis, project, sample_random_fields};
use maxpi::fields::{b1_minus_column, place_boundary_dipoles, Dipole, DipoleKind};
use maxpi::grid::{FovGrid, Support};
use maxpi::C64;
use ndarray::Array3;

fn phys_maps(grid: &FovGrid, n_coils: usize, radius_rel: f64) -> Vec<Array3<C64>> {
    let half = 0.110;
    let r = radius_rel * half;
    (0..n_coils)
        .map(|c| {
            let th = 2.0 * std::f64::consts::PI * c as f64 / n_coils as f64;
            let pos = [r * th.cos(), r * th.sin(), 0.0];
            let d = Dipole {
                position: pos,
                kind: DipoleKind::Magnetic,
                orientation: [-th.cos(), -th.sin(), 0.0],
            };
            grid.embed(&b1_minus_column(grid, &d))
        })
        .collect()
}

fn main() {
    let vox = 0.220 / 64.0;
    let grid = FovGrid::new([64, 64, 1], [vox; 3], 3.0, Support::Full).unwrap();
    let dipoles = place_boundary_dipoles(&grid, 2.0 * vox, 2.0 * vox).unwrap();
    println!("dipoles: {} at margin {:.1}mm", dipoles.len(), 2.0 * vox * 1000.0);

    let samples = sample_random_fields(&grid, &dipoles, 225, 7).unwrap();
    let basis = compute_basis(&samples, 200).unwrap();

    for radius_rel in [1.3, 1.45, 1.6, 1.8] {
        let phys = phys_maps(&grid, 8, radius_rel);
        let per_coil: Vec<f64> = phys
            .iter()
            .map(|m| project(&basis.prefix(200), &grid, m).unwrap().1)
            .collect();
        let errs: Vec<f64> = [20usize, 50, 100, 200]
            .iter()
            .map(|&q| {
                let b = basis.prefix(q);
                phys.iter().map(|m| project(&b, &grid, m).unwrap().1).fold(0.0f64, f64::max)
            })
            .collect();
        println!(
            "radius {radius_rel}: per-coil@200 {:?}",
            per_coil.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>()
        );
        println!(
            "  max errs over q: {:?} factor {:.1}",
            errs.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>(),
            errs[0] / errs[3]
        );
    }
}
