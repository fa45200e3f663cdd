//! k-space sampling patterns.
//!
//! Coordinates live in radians per pixel, κ ∈ [−π, π)^d, with DC at the
//! floor-midpoint index to match the centered FFT convention. The nominal
//! acceleration of a pattern is always reported as the exact ratio N/K of
//! grid points to sampled locations.

use ndarray::Array3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Golden-angle increment in radians: π divided by the golden ratio
/// (≈ 111.2461°), yielding near-uniform angular coverage for any spoke count.
pub const GOLDEN_ANGLE: f64 = std::f64::consts::PI / 1.618_033_988_749_895;

/// Regular Cartesian undersampling with a centered calibration block.
#[derive(Debug, Clone, PartialEq)]
pub struct CartesianMask {
    /// True at sampled k-space grid points (constant along the readout axis).
    pub mask: Array3<bool>,
    /// Centered fully sampled lines per phase-encode axis.
    pub acs_lines: usize,
    /// Keep every `r_phase`-th phase line.
    pub r_phase: usize,
    /// Keep every `r_slice`-th slice line (3D only).
    pub r_slice: usize,
    /// Per-phase-line slice offset (CAIPIRINHA); 0 disables shifting.
    pub caipi_shift: usize,
}

/// Radial spokes through the k-space origin, one full diameter each.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialTraj {
    pub n_spokes: usize,
    pub readout_len: usize,
    /// Golden-angle increments (otherwise uniform π/n_spokes).
    pub golden: bool,
    /// Spoke angles in [0, π).
    pub angles: Vec<f64>,
}

/// Variable-density Poisson-disc mask with a fully sampled center.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonDiscMask {
    pub mask: Array3<bool>,
    /// Achieved acceleration, exactly N/K.
    pub r: f64,
    /// Side length of the fully sampled centered square.
    pub acs_region: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Trajectory {
    Cartesian(CartesianMask),
    Radial(RadialTraj),
    PoissonDisc(PoissonDiscMask),
}

/// Pattern descriptor consumed by [`make_trajectory`].
#[derive(Debug, Clone, PartialEq)]
pub enum TrajectorySpec {
    Cartesian { r_phase: usize, r_slice: usize, acs_lines: usize, caipi_shift: usize },
    Radial { n_spokes: usize, readout_len: usize, golden: bool },
    PoissonDisc { r: f64, acs_region: usize, seed: u64 },
}

/// Conventional CAIPIRINHA shift for a slice acceleration: R_s/2, rounded.
pub fn default_caipi_shift(r_slice: usize) -> usize {
    r_slice.div_ceil(2)
}

impl Trajectory {
    /// Number of sampled k-space locations K (per coil).
    pub fn n_samples(&self) -> usize {
        match self {
            Trajectory::Cartesian(c) => c.mask.iter().filter(|&&b| b).count(),
            Trajectory::Radial(r) => r.n_spokes * r.readout_len,
            Trajectory::PoissonDisc(p) => p.mask.iter().filter(|&&b| b).count(),
        }
    }

    /// Nominal acceleration N/K for an image of `dims` voxels.
    pub fn nominal_r(&self, dims: [usize; 3]) -> f64 {
        let n: usize = dims.iter().product();
        n as f64 / self.n_samples() as f64
    }

    /// Flat row-major indices of sampled mask points, ascending (the
    /// canonical sample order for mask-type trajectories).
    pub fn mask_indices(&self) -> Option<Vec<usize>> {
        let mask = match self {
            Trajectory::Cartesian(c) => &c.mask,
            Trajectory::PoissonDisc(p) => &p.mask,
            Trajectory::Radial(_) => return None,
        };
        Some(
            mask.iter()
                .enumerate()
                .filter_map(|(i, &b)| b.then_some(i))
                .collect(),
        )
    }

    /// |κ| in rad/pixel for every sample in canonical order (readout position
    /// within spoke-major order for radial; ascending flat index for masks).
    pub fn sample_radii(&self, dims: [usize; 3]) -> Vec<f64> {
        match self {
            Trajectory::Radial(r) => {
                let mut out = Vec::with_capacity(r.n_spokes * r.readout_len);
                for _ in 0..r.n_spokes {
                    for t in 0..r.readout_len {
                        out.push(readout_coord(t, r.readout_len).abs());
                    }
                }
                out
            }
            _ => {
                let idx = self.mask_indices().expect("mask trajectory");
                let [n1, n2, n3] = dims;
                idx.iter()
                    .map(|&f| {
                        let i = f / (n2 * n3);
                        let j = (f / n3) % n2;
                        let k = f % n3;
                        let ka = centered_freq(i, n1);
                        let kb = centered_freq(j, n2);
                        let kc = centered_freq(k, n3);
                        (ka * ka + kb * kb + kc * kc).sqrt()
                    })
                    .collect()
            }
        }
    }
}

/// Signed radial coordinate of readout sample `t`: (t − ⌊L/2⌋)·2π/L ∈ [−π, π).
pub fn readout_coord(t: usize, readout_len: usize) -> f64 {
    (t as f64 - (readout_len / 2) as f64) * (2.0 * std::f64::consts::PI / readout_len as f64)
}

/// Centered frequency of grid index `i` on an axis of `n` points, rad/pixel.
pub fn centered_freq(i: usize, n: usize) -> f64 {
    (i as f64 - (n / 2) as f64) * (2.0 * std::f64::consts::PI / n as f64)
}

pub fn make_trajectory(dims: [usize; 3], spec: &TrajectorySpec) -> Result<Trajectory> {
    match *spec {
        TrajectorySpec::Cartesian { r_phase, r_slice, acs_lines, caipi_shift } => {
            cartesian(dims, r_phase, r_slice, acs_lines, caipi_shift)
        }
        TrajectorySpec::Radial { n_spokes, readout_len, golden } => {
            radial(dims, n_spokes, readout_len, golden)
        }
        TrajectorySpec::PoissonDisc { r, acs_region, seed } => {
            poisson_disc(dims, r, acs_region, seed)
        }
    }
}

fn cartesian(
    dims: [usize; 3],
    r_phase: usize,
    r_slice: usize,
    acs_lines: usize,
    caipi_shift: usize,
) -> Result<Trajectory> {
    let [n1, n2, n3] = dims;
    if r_phase == 0 || r_slice == 0 {
        return Err(Error::InvalidParameter("acceleration factors must be ≥ 1".into()));
    }
    if r_phase > n2 || r_slice > n3 {
        return Err(Error::InvalidParameter(format!(
            "acceleration ({r_phase}, {r_slice}) exceeds grid ({n2}, {n3})"
        )));
    }
    if acs_lines > n2 || (n3 > 1 && acs_lines > n3) {
        return Err(Error::InvalidParameter(format!(
            "ACS block of {acs_lines} lines exceeds the grid"
        )));
    }
    let acs = |idx: usize, n: usize| -> bool {
        let c = n / 2;
        let lo = c.saturating_sub(acs_lines / 2);
        let hi = (c + acs_lines.div_ceil(2)).min(n);
        idx >= lo && idx < hi
    };
    let mut mask = Array3::from_elem(dims, false);
    for j in 0..n2 {
        for k in 0..n3 {
            let on_lattice = j % r_phase == 0
                && k % r_slice == (j / r_phase * caipi_shift) % r_slice;
            let in_acs = acs(j, n2) && (n3 == 1 || acs(k, n3));
            if on_lattice || in_acs {
                for i in 0..n1 {
                    mask[(i, j, k)] = true;
                }
            }
        }
    }
    Ok(Trajectory::Cartesian(CartesianMask {
        mask,
        acs_lines,
        r_phase,
        r_slice,
        caipi_shift,
    }))
}

fn radial(dims: [usize; 3], n_spokes: usize, readout_len: usize, golden: bool) -> Result<Trajectory> {
    if dims[2] != 1 {
        return Err(Error::InvalidParameter("radial trajectories are in-plane (n3 = 1)".into()));
    }
    if n_spokes == 0 || readout_len == 0 {
        return Err(Error::InvalidParameter("need at least one spoke and one readout sample".into()));
    }
    let delta = if golden { GOLDEN_ANGLE } else { std::f64::consts::PI / n_spokes as f64 };
    let angles = (0..n_spokes)
        .map(|s| (s as f64 * delta).rem_euclid(std::f64::consts::PI))
        .collect();
    Ok(Trajectory::Radial(RadialTraj { n_spokes, readout_len, golden, angles }))
}

/// Dart throwing with a radius law ρ(r) = ρ0·√(1 + r): sample density in 2D
/// goes as 1/ρ² ∝ 1/(1+r), r in pixels from the k-space center. ρ0 is
/// calibrated by bisection to approach the requested acceleration; the struct
/// records the exact achieved value.
fn poisson_disc(dims: [usize; 3], r_target: f64, acs_region: usize, seed: u64) -> Result<Trajectory> {
    let [n1, n2, n3] = dims;
    if n3 != 1 {
        return Err(Error::InvalidParameter("Poisson-disc masks are in-plane (n3 = 1)".into()));
    }
    if !(r_target >= 1.0) {
        return Err(Error::InvalidParameter(format!("acceleration must be ≥ 1, got {r_target}")));
    }
    if acs_region > n1 || acs_region > n2 {
        return Err(Error::InvalidParameter(format!(
            "ACS region of {acs_region} exceeds the grid"
        )));
    }
    let n = n1 * n2;
    let build = |rho0: f64| -> Array3<bool> {
        let mut mask = Array3::from_elem(dims, false);
        let mut accepted: Vec<(f64, f64)> = Vec::new();
        let (c1, c2) = ((n1 / 2) as f64, (n2 / 2) as f64);
        let acs = |i: usize, j: usize| {
            let lo1 = n1 / 2 - acs_region / 2;
            let lo2 = n2 / 2 - acs_region / 2;
            i >= lo1 && i < lo1 + acs_region && j >= lo2 && j < lo2 + acs_region
        };
        for i in 0..n1 {
            for j in 0..n2 {
                if acs(i, j) {
                    mask[(i, j, 0)] = true;
                    accepted.push((i as f64, j as f64));
                }
            }
        }
        // candidates in seeded random order
        let mut order: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        for f in order {
            let (i, j) = (f / n2, f % n2);
            if mask[(i, j, 0)] {
                continue;
            }
            let (x, y) = (i as f64, j as f64);
            let r = ((x - c1).powi(2) + (y - c2).powi(2)).sqrt();
            let rho = rho0 * (1.0 + r).sqrt();
            let ok = accepted
                .iter()
                .all(|&(ax, ay)| (ax - x).powi(2) + (ay - y).powi(2) >= rho * rho);
            if ok {
                mask[(i, j, 0)] = true;
                accepted.push((x, y));
            }
        }
        mask
    };
    let count = |mask: &Array3<bool>| mask.iter().filter(|&&b| b).count();
    // monotone in rho0: larger radius → fewer samples → larger R
    let (mut lo, mut hi) = (0.2_f64, (n1.max(n2)) as f64);
    let mut best = build(lo);
    if (n as f64 / count(&best) as f64) < r_target {
        for _ in 0..18 {
            let mid = (lo * hi).sqrt();
            if n as f64 / count(&build(mid)) as f64 <= r_target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // final evaluation at the bracket midpoint
        best = build((lo * hi).sqrt());
    }
    let k = count(&best);
    Ok(Trajectory::PoissonDisc(PoissonDiscMask {
        r: n as f64 / k as f64,
        mask: best,
        acs_region,
        seed,
    }))
}
