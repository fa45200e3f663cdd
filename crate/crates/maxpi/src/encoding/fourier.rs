//! Undersampled Fourier encoding F_s: forward, adjoint, and the normal
//! operator F_s^H F_s.
//!
//! Conventions: the DC bin sits at the floor-midpoint index on every axis
//! (image and k-space), the transform is unitary (1/√N both ways), and a
//! radial spoke sampled on the Cartesian lattice reproduces the FFT exactly.
//! The normal operator never leaves image space: for masks it is FFT → mask
//! → IFFT; for radial spokes it is an exact circular convolution on the
//! doubled grid (Toeplitz embedding), with the convolution kernel summed in
//! closed form per spoke via the Dirichlet kernel.

use std::sync::Arc;

use ndarray::{Array1, Array3, Axis};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::encoding::trajectory::{readout_coord, RadialTraj, Trajectory};
use crate::error::{Error, Result};
use crate::C64;

/// Apply an FFT plan along one axis of a volume, lane by lane.
fn fft_axis(vol: &mut Array3<C64>, axis: usize, plan: &Arc<dyn Fft<f64>>) {
    let mut buf: Vec<Complex64> = vec![Complex64::default(); plan.len()];
    let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
    for mut lane in vol.lanes_mut(Axis(axis)) {
        for (b, v) in buf.iter_mut().zip(lane.iter()) {
            *b = *v;
        }
        plan.process_with_scratch(&mut buf, &mut scratch);
        for (v, b) in lane.iter_mut().zip(buf.iter()) {
            *v = *b;
        }
    }
}

/// Circularly rotate every axis so index `src` moves to index 0.
fn roll3(vol: &Array3<C64>, shifts: [usize; 3]) -> Array3<C64> {
    let dims = vol.dim();
    let (n1, n2, n3) = dims;
    let mut out = Array3::zeros(dims);
    for i in 0..n1 {
        for j in 0..n2 {
            for k in 0..n3 {
                out[((i + shifts[0]) % n1, (j + shifts[1]) % n2, (k + shifts[2]) % n3)] =
                    vol[(i, j, k)];
            }
        }
    }
    out
}

fn fftshift(vol: &Array3<C64>) -> Array3<C64> {
    let (n1, n2, n3) = vol.dim();
    roll3(vol, [n1 / 2, n2 / 2, n3 / 2])
}

fn ifftshift(vol: &Array3<C64>) -> Array3<C64> {
    let (n1, n2, n3) = vol.dim();
    roll3(vol, [n1 - n1 / 2, n2 - n2 / 2, n3 - n3 / 2])
}

/// Cached FFT plans for one grid shape.
struct FftCache {
    dims: [usize; 3],
    fwd: Vec<Arc<dyn Fft<f64>>>,
    inv: Vec<Arc<dyn Fft<f64>>>,
}

impl FftCache {
    fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = dims.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inv = dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        FftCache { dims, fwd, inv }
    }

    /// Plain (uncentered) FFT over all non-singleton axes, unnormalized.
    fn fft_raw(&self, vol: &mut Array3<C64>) {
        for a in 0..3 {
            if self.dims[a] > 1 {
                fft_axis(vol, a, &self.fwd[a]);
            }
        }
    }

    fn ifft_raw(&self, vol: &mut Array3<C64>) {
        for a in 0..3 {
            if self.dims[a] > 1 {
                fft_axis(vol, a, &self.inv[a]);
            }
        }
    }

    fn fft_centered(&self, vol: &Array3<C64>) -> Array3<C64> {
        let mut shifted = ifftshift(vol);
        self.fft_raw(&mut shifted);
        let scale = 1.0 / (self.dims.iter().product::<usize>() as f64).sqrt();
        let mut out = fftshift(&shifted);
        out.mapv_inplace(|z| z * scale);
        out
    }

    fn ifft_centered(&self, vol: &Array3<C64>) -> Array3<C64> {
        let mut shifted = ifftshift(vol);
        self.ifft_raw(&mut shifted);
        let scale = 1.0 / (self.dims.iter().product::<usize>() as f64).sqrt();
        let mut out = fftshift(&shifted);
        out.mapv_inplace(|z| z * scale);
        out
    }
}

/// Centered unitary FFT: DC-at-center in, DC-at-center out, norm preserved.
pub fn fft_centered(vol: &Array3<C64>) -> Array3<C64> {
    let dims = [vol.dim().0, vol.dim().1, vol.dim().2];
    FftCache::new(dims).fft_centered(vol)
}

/// Inverse of [`fft_centered`] (its adjoint, since the transform is unitary).
pub fn ifft_centered(vol: &Array3<C64>) -> Array3<C64> {
    let dims = [vol.dim().0, vol.dim().1, vol.dim().2];
    FftCache::new(dims).ifft_centered(vol)
}

/// Dirichlet kernel Σ_{t=0}^{L−1} e^{jθt} = e^{jθ(L−1)/2}·sin(Lθ/2)/sin(θ/2),
/// evaluated stably for any θ (the ratio degenerates only at θ ≡ 0 mod 2π).
fn geometric_phase_sum(theta: f64, l: usize) -> C64 {
    let lf = l as f64;
    let m = (theta / (2.0 * std::f64::consts::PI)).round();
    let eta = theta - 2.0 * std::f64::consts::PI * m;
    let ratio = if eta == 0.0 {
        lf
    } else {
        (lf * eta / 2.0).sin() / (eta / 2.0).sin()
    };
    // sign from folding 2πm out of both sines
    let sign = if (m as i64 * (l as i64 - 1)) % 2 == 0 { 1.0 } else { -1.0 };
    let phase = theta * (lf - 1.0) / 2.0;
    C64::new(phase.cos(), phase.sin()) * (ratio * sign)
}

/// Undersampled Fourier operator bound to one trajectory and grid shape.
pub struct FourierOp {
    dims: [usize; 3],
    traj: Trajectory,
    fft: FftCache,
    /// Flat sample positions for mask trajectories.
    mask_idx: Option<Vec<usize>>,
    /// Radial only: FFT of the Toeplitz kernel on the doubled grid, with the
    /// inverse-transform normalization folded in. Built on first use.
    toeplitz: std::sync::OnceLock<Array3<C64>>,
    pad_fft: std::sync::OnceLock<FftCache>,
}

impl FourierOp {
    pub fn new(dims: [usize; 3], traj: &Trajectory) -> Result<Self> {
        if let Trajectory::Cartesian(c) = traj {
            let (m1, m2, m3) = c.mask.dim();
            if [m1, m2, m3] != dims {
                return Err(Error::ShapeMismatch(format!(
                    "mask {:?} vs grid {:?}",
                    [m1, m2, m3],
                    dims
                )));
            }
        }
        if let Trajectory::PoissonDisc(p) = traj {
            let (m1, m2, m3) = p.mask.dim();
            if [m1, m2, m3] != dims {
                return Err(Error::ShapeMismatch(format!(
                    "mask {:?} vs grid {:?}",
                    [m1, m2, m3],
                    dims
                )));
            }
        }
        if matches!(traj, Trajectory::Radial(_)) && dims[2] != 1 {
            return Err(Error::InvalidParameter("radial encoding needs n3 = 1".into()));
        }
        Ok(FourierOp {
            dims,
            traj: traj.clone(),
            fft: FftCache::new(dims),
            mask_idx: traj.mask_indices(),
            toeplitz: std::sync::OnceLock::new(),
            pad_fft: std::sync::OnceLock::new(),
        })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.traj
    }

    pub fn n_samples(&self) -> usize {
        self.traj.n_samples()
    }

    fn check_vol(&self, vol: &Array3<C64>) -> Result<()> {
        let d = vol.dim();
        if [d.0, d.1, d.2] != self.dims {
            return Err(Error::ShapeMismatch(format!("volume {:?} vs grid {:?}", d, self.dims)));
        }
        Ok(())
    }

    /// F_s: image volume → K samples in canonical order.
    pub fn forward(&self, vol: &Array3<C64>) -> Result<Array1<C64>> {
        self.check_vol(vol)?;
        match &self.traj {
            Trajectory::Radial(r) => Ok(self.nudft_forward(r, vol)),
            _ => {
                let k = self.fft.fft_centered(vol);
                let flat = k.as_slice().expect("contiguous");
                Ok(self.mask_idx.as_ref().unwrap().iter().map(|&i| flat[i]).collect())
            }
        }
    }

    /// F_s^H: K samples → image volume.
    pub fn adjoint(&self, samples: &Array1<C64>) -> Result<Array3<C64>> {
        if samples.len() != self.n_samples() {
            return Err(Error::ShapeMismatch(format!(
                "{} samples vs K = {}",
                samples.len(),
                self.n_samples()
            )));
        }
        match &self.traj {
            Trajectory::Radial(r) => Ok(self.nudft_adjoint(r, samples)),
            _ => {
                let mut k = Array3::zeros((self.dims[0], self.dims[1], self.dims[2]));
                {
                    let flat = k.as_slice_mut().expect("contiguous");
                    for (s, &i) in samples.iter().zip(self.mask_idx.as_ref().unwrap()) {
                        flat[i] = *s;
                    }
                }
                Ok(self.fft.ifft_centered(&k))
            }
        }
    }

    /// F_s^H F_s without touching k-space sample vectors. Exact: masks are
    /// projections in the FFT basis; radial uses the Toeplitz convolution.
    pub fn normal(&self, vol: &Array3<C64>) -> Result<Array3<C64>> {
        self.check_vol(vol)?;
        match &self.traj {
            Trajectory::Radial(_) => Ok(self.toeplitz_normal(vol)),
            _ => {
                let mut k = self.fft.fft_centered(vol);
                let mask = match &self.traj {
                    Trajectory::Cartesian(c) => &c.mask,
                    Trajectory::PoissonDisc(p) => &p.mask,
                    Trajectory::Radial(_) => unreachable!(),
                };
                ndarray::Zip::from(&mut k).and(mask).for_each(|z, &keep| {
                    if !keep {
                        *z = C64::new(0.0, 0.0);
                    }
                });
                Ok(self.fft.ifft_centered(&k))
            }
        }
    }

    fn nudft_forward(&self, r: &RadialTraj, vol: &Array3<C64>) -> Array1<C64> {
        let [n1, n2, _] = self.dims;
        let (c1, c2) = ((n1 / 2) as f64, (n2 / 2) as f64);
        let l = r.readout_len;
        let scale = 1.0 / ((n1 * n2) as f64).sqrt();
        let rho0 = readout_coord(0, l);
        let step = 2.0 * std::f64::consts::PI / l as f64;
        let mut out = Array1::zeros(r.n_spokes * l);
        let mut spoke = vec![C64::new(0.0, 0.0); l];
        for (s, &angle) in r.angles.iter().enumerate() {
            spoke.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
            let (sin, cos) = angle.sin_cos();
            for i in 0..n1 {
                for j in 0..n2 {
                    let v = vol[(i, j, 0)];
                    if v == C64::new(0.0, 0.0) {
                        continue;
                    }
                    let u = cos * (i as f64 - c1) + sin * (j as f64 - c2);
                    // phase along the readout is linear in t: one complex
                    // multiply per sample after the two initial exponentials
                    let mut w = C64::from_polar(1.0, -rho0 * u);
                    let wstep = C64::from_polar(1.0, -step * u);
                    for acc in spoke.iter_mut() {
                        *acc += v * w;
                        w *= wstep;
                    }
                }
            }
            for t in 0..l {
                out[s * l + t] = spoke[t] * scale;
            }
        }
        out
    }

    fn nudft_adjoint(&self, r: &RadialTraj, samples: &Array1<C64>) -> Array3<C64> {
        let [n1, n2, _] = self.dims;
        let (c1, c2) = ((n1 / 2) as f64, (n2 / 2) as f64);
        let l = r.readout_len;
        let scale = 1.0 / ((n1 * n2) as f64).sqrt();
        let mut out = Array3::zeros((n1, n2, 1));
        let rho0 = readout_coord(0, l);
        let step = 2.0 * std::f64::consts::PI / l as f64;
        for (s, &angle) in r.angles.iter().enumerate() {
            let (sin, cos) = angle.sin_cos();
            let spoke = &samples.as_slice().expect("contiguous")[s * l..(s + 1) * l];
            for i in 0..n1 {
                for j in 0..n2 {
                    let u = cos * (i as f64 - c1) + sin * (j as f64 - c2);
                    let mut w = C64::from_polar(1.0, rho0 * u);
                    let wstep = C64::from_polar(1.0, step * u);
                    let mut acc = C64::new(0.0, 0.0);
                    for &y in spoke {
                        acc += y * w;
                        w *= wstep;
                    }
                    out[(i, j, 0)] += acc * scale;
                }
            }
        }
        out
    }

    /// FFT of the normal-operator convolution kernel on the doubled grid.
    /// Kernel: T[v] = (1/N)·Σ_samples e^{+jκ·v}, v ∈ (−n1, n1)×(−n2, n2),
    /// summed per spoke in closed form.
    fn toeplitz_kernel_fft(&self) -> &Array3<C64> {
        self.toeplitz.get_or_init(|| {
            let Trajectory::Radial(r) = &self.traj else { unreachable!() };
            let [n1, n2, _] = self.dims;
            let (p1, p2) = (2 * n1, 2 * n2);
            let l = r.readout_len;
            let rho0 = readout_coord(0, l);
            let step = 2.0 * std::f64::consts::PI / l as f64;
            let mut kern = Array3::<C64>::zeros((p1, p2, 1));
            for &angle in &r.angles {
                let (sin, cos) = angle.sin_cos();
                for a in 0..p1 {
                    let v1 = if a < n1 { a as f64 } else { a as f64 - p1 as f64 };
                    for b in 0..p2 {
                        let v2 = if b < n2 { b as f64 } else { b as f64 - p2 as f64 };
                        let u = cos * v1 + sin * v2;
                        // Σ_t e^{+jρ_t u} with ρ_t = ρ0 + step·t
                        let base = rho0 * u;
                        let sum = geometric_phase_sum(step * u, l)
                            * C64::new(base.cos(), base.sin());
                        kern[(a, b, 0)] += sum;
                    }
                }
            }
            let n = (n1 * n2) as f64;
            let m = (p1 * p2) as f64;
            // fold in 1/N (unitary NUDFT twice) and 1/M (fft·ifft round trip)
            kern.mapv_inplace(|z| z / (n * m));
            let cache = self.padded_cache();
            let mut khat = kern;
            cache.fft_raw(&mut khat);
            khat
        })
    }

    fn padded_cache(&self) -> &FftCache {
        self.pad_fft
            .get_or_init(|| FftCache::new([2 * self.dims[0], 2 * self.dims[1], 1]))
    }

    fn toeplitz_normal(&self, vol: &Array3<C64>) -> Array3<C64> {
        let [n1, n2, _] = self.dims;
        let khat = self.toeplitz_kernel_fft();
        let cache = self.padded_cache();
        let mut pad = Array3::<C64>::zeros((2 * n1, 2 * n2, 1));
        pad.slice_mut(ndarray::s![..n1, ..n2, ..]).assign(vol);
        cache.fft_raw(&mut pad);
        pad.zip_mut_with(khat, |z, &k| *z *= k);
        cache.ifft_raw(&mut pad);
        pad.slice(ndarray::s![..n1, ..n2, ..]).to_owned()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::trajectory::{make_trajectory, TrajectorySpec};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_vol(dims: [usize; 3], seed: u64) -> Array3<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((dims[0], dims[1], dims[2]), |_| {
            C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        })
    }

    fn random_samples(k: usize, seed: u64) -> Array1<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array1::from_shape_fn(k, |_| {
            C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        })
    }

    fn cdot3(a: &Array3<C64>, b: &Array3<C64>) -> C64 {
        a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
    }

    #[test]
    fn centered_fft_matches_direct_dft() {
        // brute-force centered DFT oracle on an odd×even grid
        let dims = [5, 6, 1];
        let x = random_vol(dims, 1);
        let got = fft_centered(&x);
        let (c1, c2) = ((dims[0] / 2) as f64, (dims[1] / 2) as f64);
        let scale = 1.0 / ((dims[0] * dims[1]) as f64).sqrt();
        for m1 in 0..dims[0] {
            for m2 in 0..dims[1] {
                let mut acc = C64::new(0.0, 0.0);
                for i in 0..dims[0] {
                    for j in 0..dims[1] {
                        let ph = -2.0 * std::f64::consts::PI
                            * ((m1 as f64 - c1) * (i as f64 - c1) / dims[0] as f64
                                + (m2 as f64 - c2) * (j as f64 - c2) / dims[1] as f64);
                        acc += x[(i, j, 0)] * C64::new(ph.cos(), ph.sin());
                    }
                }
                let want = acc * scale;
                assert!((got[(m1, m2, 0)] - want).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn centered_fft_is_unitary() {
        let x = random_vol([8, 6, 4], 2);
        let back = ifft_centered(&fft_centered(&x));
        let dev: f64 = (&back - &x).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(dev < 1e-12);
        let nx: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        let nk: f64 = fft_centered(&x).iter().map(|z| z.norm_sqr()).sum();
        assert!((nx - nk).abs() / nx < 1e-12);
    }

    #[test]
    fn full_cartesian_round_trip() {
        let t = make_trajectory(
            [8, 8, 1],
            &TrajectorySpec::Cartesian { r_phase: 1, r_slice: 1, acs_lines: 0, caipi_shift: 0 },
        )
        .unwrap();
        let op = FourierOp::new([8, 8, 1], &t).unwrap();
        let x = random_vol([8, 8, 1], 3);
        let back = op.adjoint(&op.forward(&x).unwrap()).unwrap();
        let dev: f64 = (&back - &x).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(dev < 1e-12);
    }

    #[test]
    fn zero_image_gives_zero_samples() {
        for spec in [
            TrajectorySpec::Cartesian { r_phase: 2, r_slice: 1, acs_lines: 4, caipi_shift: 0 },
            TrajectorySpec::Radial { n_spokes: 5, readout_len: 16, golden: true },
        ] {
            let t = make_trajectory([16, 16, 1], &spec).unwrap();
            let op = FourierOp::new([16, 16, 1], &t).unwrap();
            let y = op.forward(&Array3::zeros((16, 16, 1))).unwrap();
            assert!(y.iter().all(|z| z.norm() == 0.0));
        }
    }

    #[test]
    fn adjoint_dot_test_all_variants() {
        let dims = [12, 10, 1];
        let specs = [
            TrajectorySpec::Cartesian { r_phase: 2, r_slice: 1, acs_lines: 4, caipi_shift: 0 },
            TrajectorySpec::Radial { n_spokes: 7, readout_len: 15, golden: true },
            TrajectorySpec::PoissonDisc { r: 2.0, acs_region: 4, seed: 5 },
        ];
        for spec in specs {
            let t = make_trajectory(dims, &spec).unwrap();
            let op = FourierOp::new(dims, &t).unwrap();
            let x = random_vol(dims, 11);
            let y = random_samples(op.n_samples(), 12);
            let fx = op.forward(&x).unwrap();
            let fhy = op.adjoint(&y).unwrap();
            let lhs: C64 = fx.iter().zip(y.iter()).map(|(a, b)| a.conj() * b).sum();
            let rhs = cdot3(&x, &fhy);
            assert!(
                (lhs - rhs).norm() / lhs.norm() < 1e-10,
                "{spec:?}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn axis_aligned_spoke_equals_fft_row() {
        // A spoke at angle 0 with readout length = matrix size samples the
        // same points as the κ2 = 0 line of the centered FFT.
        let n = 16;
        let t = make_trajectory(
            [n, n, 1],
            &TrajectorySpec::Radial { n_spokes: 1, readout_len: n, golden: false },
        )
        .unwrap();
        let op = FourierOp::new([n, n, 1], &t).unwrap();
        let x = random_vol([n, n, 1], 13);
        let y = op.forward(&x).unwrap();
        let full = fft_centered(&x);
        for t_idx in 0..n {
            let want = full[(t_idx, n / 2, 0)];
            assert!(
                (y[t_idx] - want).norm() < 1e-10,
                "t={t_idx}: {} vs {want}",
                y[t_idx]
            );
        }
    }

    #[test]
    fn toeplitz_normal_matches_adjoint_of_forward() {
        for (dims, l, spokes) in [([12, 10, 1], 17, 6), ([16, 16, 1], 16, 9)] {
            let t = make_trajectory(
                dims,
                &TrajectorySpec::Radial { n_spokes: spokes, readout_len: l, golden: true },
            )
            .unwrap();
            let op = FourierOp::new(dims, &t).unwrap();
            let x = random_vol(dims, 17);
            let slow = op.adjoint(&op.forward(&x).unwrap()).unwrap();
            let fast = op.normal(&x).unwrap();
            let num: f64 = (&fast - &slow).iter().map(|z| z.norm_sqr()).sum();
            let den: f64 = slow.iter().map(|z| z.norm_sqr()).sum();
            assert!(
                (num / den).sqrt() < 1e-12,
                "dims {dims:?}: rel dev {:.2e}",
                (num / den).sqrt()
            );
        }
    }

    #[test]
    fn masked_normal_matches_adjoint_of_forward() {
        let dims = [12, 10, 1];
        let t = make_trajectory(
            dims,
            &TrajectorySpec::Cartesian { r_phase: 2, r_slice: 1, acs_lines: 2, caipi_shift: 0 },
        )
        .unwrap();
        let op = FourierOp::new(dims, &t).unwrap();
        let x = random_vol(dims, 19);
        let slow = op.adjoint(&op.forward(&x).unwrap()).unwrap();
        let fast = op.normal(&x).unwrap();
        let dev: f64 = (&fast - &slow).iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(dev < 1e-12);
    }

    #[test]
    fn dirichlet_sum_matches_brute_force() {
        for &(theta, l) in &[
            (0.0, 8usize),
            (1e-12, 8),
            (0.3, 7),
            (std::f64::consts::PI, 6),
            (2.0 * std::f64::consts::PI, 5),
            (6.2831853071795862, 9),
            (-25.1327412287, 16),
            (100.0, 32),
        ] {
            let brute: C64 = (0..l)
                .map(|t| C64::new((theta * t as f64).cos(), (theta * t as f64).sin()))
                .sum();
            let fast = geometric_phase_sum(theta, l);
            assert!(
                (brute - fast).norm() < 1e-9 * (l as f64),
                "theta={theta}, l={l}: {brute} vs {fast}"
            );
        }
    }

    #[test]
    fn shape_mismatches_are_rejected() {
        let t = make_trajectory(
            [8, 8, 1],
            &TrajectorySpec::Cartesian { r_phase: 1, r_slice: 1, acs_lines: 0, caipi_shift: 0 },
        )
        .unwrap();
        let op = FourierOp::new([8, 8, 1], &t).unwrap();
        assert!(op.forward(&Array3::zeros((4, 4, 1))).is_err());
        assert!(op.adjoint(&Array1::zeros(7)).is_err());
        assert!(FourierOp::new([4, 4, 1], &t).is_err());
    }
}
