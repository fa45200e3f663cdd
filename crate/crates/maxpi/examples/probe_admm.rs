use maxpi::admm::*;
use maxpi::encoding::*;
use maxpi::metrics::nrmse;
use maxpi::phantom::*;

fn main() {
    // noiseless exactness case
    let dims = [32, 32, 1];
    let traj = make_trajectory(dims, &TrajectorySpec::Cartesian { r_phase: 1, r_slice: 1, acs_lines: 0, caipi_shift: 0 }).unwrap();
    let op = FourierOp::new(dims, &traj).unwrap();
    let maps = birdcage_sens(dims, 3, 1.3).unwrap();
    let p = shepp_logan(dims).unwrap();
    let y = forward_model(&op, &p, &maps).unwrap();
    for iters in [60usize, 150, 300] {
        let cfg = AdmmConfig { max_iters: iters, eps: vec![0.0; 3], ..AdmmConfig::default() };
        let sol = admm_reconstruct(&y, &maps, &cfg).unwrap();
        let err = nrmse(sol.density.view(), p.view()).unwrap();
        let h = sol.history.last().unwrap();
        println!("exact iters={iters} nrmse={err:.3e} rho={} primal={:.2e}/{:.2e} dual={:.2e}/{:.2e}", h.rho, h.primal, h.primal_scale, h.dual, h.dual_scale);
    }

    // converge case
    let dims = [24, 24, 1];
    let traj = make_trajectory(dims, &TrajectorySpec::Cartesian { r_phase: 2, r_slice: 1, acs_lines: 6, caipi_shift: 0 }).unwrap();
    let op = FourierOp::new(dims, &traj).unwrap();
    let maps = birdcage_sens(dims, 4, 1.3).unwrap();
    let p = shepp_logan(dims).unwrap();
    let clean = forward_model(&op, &p, &maps).unwrap();
    let y = add_noise(&clean, 30.0, 5);
    let eps = estimate_eps(&y, dims, 1.0).unwrap();
    let cfg = AdmmConfig { max_iters: 600, eps, ..AdmmConfig::default() };
    let sol = admm_reconstruct(&y, &maps, &cfg).unwrap();
    println!("converged={} after {} iters", sol.converged, sol.history.len());
    for h in sol.history.iter().step_by(25) {
        println!("  it={:3} rho={:9.3e} primal={:.2e} (tol {:.2e}) dual={:.2e} (tol {:.2e}) tv={:.3e} cg={}",
            h.iter, h.rho, h.primal, 1e-5*h.primal_scale, h.dual, 1e-5*h.dual_scale, h.tv, h.cg_iters);
    }
    if let Some(h) = sol.history.last() {
        println!("  last: it={} rho={:.3e} primal={:.2e}/{:.2e} dual={:.2e}/{:.2e}", h.iter, h.rho, h.primal, 1e-5*h.primal_scale, h.dual, 1e-5*h.dual_scale);
    }
    println!("feasible={} residuals={:?}", sol.feasible, sol.coil_residuals);
}
