//! Multi-coil acquisition: y_k = F_s(s_k ⊙ p) + n_k.

use ndarray::{Array2, Array3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::encoding::fourier::FourierOp;
use crate::encoding::trajectory::Trajectory;
use crate::error::{Error, Result};
use crate::C64;

/// Per-coil k-space measurements with the pattern they were sampled on.
#[derive(Debug, Clone)]
pub struct KSpaceData {
    pub traj: Trajectory,
    /// C×K, one row per coil, samples in the trajectory's canonical order.
    pub samples: Array2<C64>,
    /// Noise std per real component, per coil, when known (synthetic data).
    pub sigma: Option<Vec<f64>>,
}

impl KSpaceData {
    pub fn n_coils(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }
}

/// Simulate the noise-free acquisition of `density` seen through `maps`.
pub fn forward_model(op: &FourierOp, density: &Array3<C64>, maps: &[Array3<C64>]) -> Result<KSpaceData> {
    if maps.is_empty() {
        return Err(Error::InvalidParameter("need at least one coil map".into()));
    }
    let k = op.n_samples();
    let mut samples = Array2::zeros((maps.len(), k));
    for (row, map) in maps.iter().enumerate() {
        if map.dim() != density.dim() {
            return Err(Error::ShapeMismatch(format!(
                "coil {row} map {:?} vs density {:?}",
                map.dim(),
                density.dim()
            )));
        }
        let product = map * density;
        samples.row_mut(row).assign(&op.forward(&product)?);
    }
    Ok(KSpaceData { traj: op.trajectory().clone(), samples, sigma: None })
}

/// Add i.i.d. complex Gaussian noise at the requested SNR, defined jointly
/// over all coils: 20·log10(‖y‖/‖n‖) = snr_db. Records the σ used.
pub fn add_noise(y: &KSpaceData, snr_db: f64, seed: u64) -> KSpaceData {
    let c = y.n_coils();
    if snr_db.is_infinite() {
        let mut out = y.clone();
        out.sigma = Some(vec![0.0; c]);
        return out;
    }
    let k = y.n_samples();
    let norm: f64 = y.samples.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let sigma = norm * 10f64.powf(-snr_db / 20.0) / ((2 * k * c) as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = y.samples.clone();
    for z in samples.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *z += C64::new(re * sigma, im * sigma);
    }
    KSpaceData { traj: y.traj.clone(), samples, sigma: Some(vec![sigma; c]) }
}

/// Expected ℓ2 norm of a length-K complex noise vector with std σ per real
/// component.
pub fn noise_ball_radius(sigma: f64, k: usize) -> f64 {
    sigma * ((2 * k) as f64).sqrt()
}

/// Per-coil data-fidelity ball radii ε_k = multiplier·σ_k·√(2K).
///
/// σ_k comes from the synthesis metadata when present; otherwise it is
/// estimated from the outermost 5% of samples by k-space radius via the
/// median absolute deviation (1.4826·MAD), which ignores residual signal
/// outliers.
pub fn estimate_eps(y: &KSpaceData, dims: [usize; 3], multiplier: f64) -> Result<Vec<f64>> {
    let k = y.n_samples();
    if let Some(sigma) = &y.sigma {
        return Ok(sigma.iter().map(|&s| multiplier * noise_ball_radius(s, k)).collect());
    }
    if k < 64 {
        return Err(Error::InvalidParameter(format!(
            "too few samples to estimate noise: K = {k} < 64"
        )));
    }
    let radii = y.traj.sample_radii(dims);
    let take = ((k as f64 * 0.05).ceil() as usize).max(32).min(k);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_unstable_by(|&a, &b| radii[b].partial_cmp(&radii[a]).unwrap());
    order.truncate(take);
    let mut eps = Vec::with_capacity(y.n_coils());
    for row in y.samples.rows() {
        let mut vals: Vec<f64> = Vec::with_capacity(2 * take);
        for &i in &order {
            vals.push(row[i].re);
            vals.push(row[i].im);
        }
        let med = median(&mut vals.clone());
        let mut dev: Vec<f64> = vals.iter().map(|v| (v - med).abs()).collect();
        let sigma = 1.4826 * median(&mut dev);
        eps.push(multiplier * noise_ball_radius(sigma, k));
    }
    Ok(eps)
}

fn median(vals: &mut [f64]) -> f64 {
    assert!(!vals.is_empty());
    vals.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = vals.len();
    if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::fourier::fft_centered;
    use crate::encoding::trajectory::{make_trajectory, TrajectorySpec};

    fn full_mask_op(n: usize) -> FourierOp {
        let t = make_trajectory(
            [n, n, 1],
            &TrajectorySpec::Cartesian { r_phase: 1, r_slice: 1, acs_lines: 0, caipi_shift: 0 },
        )
        .unwrap();
        FourierOp::new([n, n, 1], &t).unwrap()
    }

    fn blob(n: usize, width: f64) -> Array3<C64> {
        Array3::from_shape_fn((n, n, 1), |(i, j, _)| {
            let x = i as f64 - (n / 2) as f64;
            let y = j as f64 - (n / 2) as f64;
            C64::new((-(x * x + y * y) / (2.0 * width * width)).exp(), 0.0)
        })
    }

    #[test]
    fn zero_density_gives_zero_data() {
        let op = full_mask_op(8);
        let maps = vec![Array3::from_elem((8, 8, 1), C64::new(1.0, 0.0)); 3];
        let y = forward_model(&op, &Array3::zeros((8, 8, 1)), &maps).unwrap();
        assert!(y.samples.iter().all(|z| z.norm() == 0.0));
        assert_eq!(y.n_coils(), 3);
    }

    #[test]
    fn unit_sensitivity_full_mask_is_the_fft() {
        let op = full_mask_op(16);
        let p = blob(16, 3.0);
        let maps = vec![Array3::from_elem((16, 16, 1), C64::new(1.0, 0.0))];
        let y = forward_model(&op, &p, &maps).unwrap();
        let k = fft_centered(&p);
        let flat = k.as_slice().unwrap();
        for (got, want) in y.samples.row(0).iter().zip(flat.iter()) {
            assert!((got - want).norm() < 1e-12);
        }
    }

    #[test]
    fn infinite_snr_leaves_data_unchanged() {
        let op = full_mask_op(8);
        let p = blob(8, 2.0);
        let maps = vec![Array3::from_elem((8, 8, 1), C64::new(1.0, 0.0))];
        let y = forward_model(&op, &p, &maps).unwrap();
        let noisy = add_noise(&y, f64::INFINITY, 1);
        assert_eq!(noisy.samples, y.samples);
        assert_eq!(noisy.sigma, Some(vec![0.0]));
    }

    #[test]
    fn snr_calibration_and_determinism() {
        let op = full_mask_op(64);
        let p = blob(64, 8.0);
        let maps: Vec<_> = (0..3)
            .map(|c| Array3::from_elem((64, 64, 1), C64::new(1.0 + c as f64 * 0.2, 0.1)))
            .collect();
        let y = forward_model(&op, &p, &maps).unwrap();
        assert!(y.n_samples() * y.n_coils() >= 10_000);
        let noisy = add_noise(&y, 20.0, 7);
        let noise = &noisy.samples - &y.samples;
        let ny: f64 = y.samples.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let nn: f64 = noise.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let snr = 20.0 * (ny / nn).log10();
        assert!((snr - 20.0).abs() < 0.5, "measured SNR {snr:.2} dB");
        // determinism
        let again = add_noise(&y, 20.0, 7);
        assert_eq!(again.samples, noisy.samples);
        let other = add_noise(&y, 20.0, 8);
        assert_ne!(other.samples, noisy.samples);
        // coil noise vectors are uncorrelated
        let n0 = noise.row(0);
        let n1 = noise.row(1);
        let dot: C64 = n0.iter().zip(n1.iter()).map(|(a, b)| a.conj() * b).sum();
        let corr = dot.norm()
            / (n0.iter().map(|z| z.norm_sqr()).sum::<f64>()
                * n1.iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sqrt();
        assert!(corr < 0.05, "cross-coil correlation {corr:.3}");
    }

    #[test]
    fn eps_from_metadata_and_scaling() {
        let op = full_mask_op(32);
        let p = blob(32, 5.0);
        let maps = vec![Array3::from_elem((32, 32, 1), C64::new(1.0, 0.0)); 2];
        let y = forward_model(&op, &p, &maps).unwrap();
        let noisy = add_noise(&y, 25.0, 3);
        let sigma = noisy.sigma.as_ref().unwrap()[0];
        let k = noisy.n_samples();
        let eps = estimate_eps(&noisy, [32, 32, 1], 1.0).unwrap();
        for &e in &eps {
            assert!((e - sigma * ((2 * k) as f64).sqrt()).abs() < 1e-12);
        }
        // doubling the multiplier doubles ε
        let eps2 = estimate_eps(&noisy, [32, 32, 1], 2.0).unwrap();
        assert!((eps2[0] - 2.0 * eps[0]).abs() < 1e-12);
        // noiseless metadata → ε = 0
        let clean = add_noise(&y, f64::INFINITY, 0);
        assert_eq!(estimate_eps(&clean, [32, 32, 1], 1.0).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn mad_estimator_recovers_known_sigma() {
        // pure-noise data with σ known but withheld from the estimator
        let op = full_mask_op(64);
        let t = op.trajectory().clone();
        let k = t.n_samples();
        let sigma = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let samples = Array2::from_shape_fn((2, k), |_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            C64::new(re * sigma, im * sigma)
        });
        let y = KSpaceData { traj: t, samples, sigma: None };
        let eps = estimate_eps(&y, [64, 64, 1], 1.0).unwrap();
        let want = sigma * ((2 * k) as f64).sqrt();
        for &e in &eps {
            assert!((e - want).abs() / want < 0.10, "ε = {e:.3}, want {want:.3}");
        }
    }

    #[test]
    fn mad_estimator_on_smooth_noiseless_data_is_tiny() {
        let op = full_mask_op(64);
        let p = blob(64, 4.0);
        let maps = vec![Array3::from_elem((64, 64, 1), C64::new(1.0, 0.0))];
        let mut y = forward_model(&op, &p, &maps).unwrap();
        y.sigma = None;
        let eps = estimate_eps(&y, [64, 64, 1], 1.0).unwrap();
        let ny: f64 = y.samples.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        assert!(eps[0] <= 1e-10 * ny, "ε = {:.3e}, ‖y‖ = {ny:.3e}", eps[0]);
    }

    #[test]
    fn eps_grows_with_sqrt_k() {
        let mk = |n: usize| {
            let op = full_mask_op(n);
            let p = blob(n, n as f64 / 8.0);
            let maps = vec![Array3::from_elem((n, n, 1), C64::new(1.0, 0.0))];
            let y = forward_model(&op, &p, &maps).unwrap();
            let mut noisy = add_noise(&y, 30.0, 5);
            // pin a common σ so only K varies
            noisy.sigma = Some(vec![0.25]);
            estimate_eps(&noisy, [n, n, 1], 1.0).unwrap()[0]
        };
        let (e32, e64) = (mk(32), mk(64));
        assert!((e64 / e32 - 2.0).abs() < 1e-12); // K quadruples → ε doubles
    }

    #[test]
    fn too_few_samples_is_an_error() {
        let t = make_trajectory(
            [4, 4, 1],
            &TrajectorySpec::Cartesian { r_phase: 2, r_slice: 1, acs_lines: 0, caipi_shift: 0 },
        )
        .unwrap();
        let k = t.n_samples();
        let y = KSpaceData { traj: t, samples: Array2::zeros((1, k)), sigma: None };
        assert!(estimate_eps(&y, [4, 4, 1], 1.0).is_err());
    }

    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;
}
