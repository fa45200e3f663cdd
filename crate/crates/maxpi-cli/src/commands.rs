//! Subcommand option bags and implementations.
//!
//! Every subcommand accepts `--config file.json` whose keys mirror the long
//! flags; explicit flags override file values, defaults fill the rest, and
//! the fully resolved configuration is echoed to stdout before any compute.

use std::path::{Path, PathBuf};

use clap::Args;
use ndarray::Array3;
use serde::{Deserialize, Serialize};

use maxpi::admm::{admm_reconstruct, AdmmConfig};
use maxpi::basis::{compute_basis, project, sample_random_fields};
use maxpi::encoding::{
    add_noise, estimate_eps, forward_model, make_trajectory, FourierOp, TrajectorySpec,
};
use maxpi::error::{Error, Result};
use maxpi::fields::place_boundary_dipoles;
use maxpi::grid::{FovGrid, Support};
use maxpi::io::{
    emit_image, find_basis, find_density, find_grid, find_kspace, find_maps, find_tucker,
    write_mpib, Block, ImageMode,
};
use maxpi::irgn::{irgn_reconstruct, IrgnConfig, MapBasis};
use maxpi::metrics::{nrmse, Metrics};
use maxpi::phantom::{birdcage_sens, shepp_logan};
use maxpi::tucker;
use maxpi::C64;

use crate::util::{
    load_config_file, load_blocks, missing, resolve_dims, resolve_voxel_size, run_with_manifest,
    write_csv,
};

fn parse_support(name: &str) -> Result<Support> {
    match name {
        "full" => Ok(Support::Full),
        "circular" => Ok(Support::Circular { diameter_m: None }),
        other => Err(Error::InvalidParameter(format!(
            "unknown support '{other}' (expected full|circular)"
        ))),
    }
}

fn image_ext(format: &str) -> Result<&'static str> {
    match format {
        "pgm" => Ok("pgm"),
        "png" => Ok("png"),
        other => Err(Error::InvalidParameter(format!(
            "unknown image format '{other}' (expected pgm|png)"
        ))),
    }
}

fn emit_map_pair(dir: &Path, stem: &str, map: &Array3<C64>, ext: &str) -> Result<Vec<PathBuf>> {
    let mag = dir.join(format!("{stem}_mag.{ext}"));
    let phase = dir.join(format!("{stem}_phase.{ext}"));
    emit_image(map, &mag, ImageMode::Magnitude)?;
    emit_image(map, &phase, ImageMode::Phase)?;
    Ok(vec![mag, phase])
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".into());
    path.with_file_name(format!("{stem}{suffix}"))
}

// ---------------------------------------------------------------- build-basis

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BuildBasisOpts {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Voxel counts, 2 or 3 comma-separated values.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// Field of view in millimeters, 2 or 3 values.
    #[arg(long, value_delimiter = ',')]
    pub fov_mm: Option<Vec<f64>>,
    /// Main field strength in tesla [default: 3].
    #[arg(long)]
    pub b0: Option<f64>,
    /// Basis dimension: singular vectors kept.
    #[arg(long)]
    pub q: Option<usize>,
    /// Random boundary excitations sampled [default: q + 25].
    #[arg(long)]
    pub n_sources: Option<usize>,
    /// Dipole shell offset outside the FOV, in voxels [default: 2].
    #[arg(long)]
    pub margin_vox: Option<f64>,
    /// Dipole spacing along the shell, in voxels [default: 2].
    #[arg(long)]
    pub spacing_vox: Option<f64>,
    /// Voxel support: full | circular [default: full].
    #[arg(long)]
    pub support: Option<String>,
    /// Excitation seed [default: 7].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output container (grid + basis) [default: basis.mpib].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl BuildBasisOpts {
    fn merged(self) -> Result<Self> {
        let base: Self = match &self.config {
            Some(p) => load_config_file(p)?,
            None => Self::default(),
        };
        Ok(Self {
            config: None,
            dims: self.dims.or(base.dims),
            fov_mm: self.fov_mm.or(base.fov_mm),
            b0: self.b0.or(base.b0),
            q: self.q.or(base.q),
            n_sources: self.n_sources.or(base.n_sources),
            margin_vox: self.margin_vox.or(base.margin_vox),
            spacing_vox: self.spacing_vox.or(base.spacing_vox),
            support: self.support.or(base.support),
            seed: self.seed.or(base.seed),
            out: self.out.or(base.out),
        })
    }
}

pub fn build_basis(opts: BuildBasisOpts) -> Result<()> {
    let o = opts.merged()?;
    let dims = resolve_dims(o.dims.ok_or_else(|| missing("--dims"))?)?;
    let fov_mm = o.fov_mm.ok_or_else(|| missing("--fov-mm"))?;
    let voxel = resolve_voxel_size(fov_mm, dims)?;
    let q = o.q.ok_or_else(|| missing("--q"))?;
    #[derive(Serialize)]
    struct Resolved {
        dims: [usize; 3],
        voxel_size_m: [f64; 3],
        b0_t: f64,
        q: usize,
        n_sources: usize,
        margin_vox: f64,
        spacing_vox: f64,
        support: String,
        seed: u64,
        out: PathBuf,
    }
    let r = Resolved {
        dims,
        voxel_size_m: voxel,
        b0_t: o.b0.unwrap_or(3.0),
        q,
        n_sources: o.n_sources.unwrap_or(q + 25),
        margin_vox: o.margin_vox.unwrap_or(2.0),
        spacing_vox: o.spacing_vox.unwrap_or(2.0),
        support: o.support.unwrap_or_else(|| "full".into()),
        seed: o.seed.unwrap_or(7),
        out: o.out.unwrap_or_else(|| "basis.mpib".into()),
    };
    let support = parse_support(&r.support)?;
    run_with_manifest("build-basis", &r, &[], || {
        let grid = FovGrid::new(r.dims, r.voxel_size_m, r.b0_t, support)?;
        let dipoles =
            place_boundary_dipoles(&grid, r.margin_vox * voxel[0], r.spacing_vox * voxel[0])?;
        let samples = sample_random_fields(&grid, &dipoles, r.n_sources, r.seed)?;
        let basis = compute_basis(&samples, r.q)?;
        println!(
            "basis: {} support voxels x {} columns ({} dipoles, {} excitations)",
            basis.n(),
            basis.q(),
            dipoles.len(),
            r.n_sources
        );
        write_mpib(&r.out, &[Block::Grid(grid), Block::Basis(basis)])?;
        Ok(vec![r.out.clone()])
    })
}

// ------------------------------------------------------------- compress-basis

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompressBasisOpts {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Input container holding grid + basis blocks.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Relative reconstruction tolerance for rank selection [default: 1e-4].
    #[arg(long)]
    pub eps: Option<f64>,
    /// Output container (grid + tucker) [default: tucker.mpib].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl CompressBasisOpts {
    fn merged(self) -> Result<Self> {
        let base: Self = match &self.config {
            Some(p) => load_config_file(p)?,
            None => Self::default(),
        };
        Ok(Self {
            config: None,
            input: self.input.or(base.input),
            eps: self.eps.or(base.eps),
            out: self.out.or(base.out),
        })
    }
}

pub fn compress_basis(opts: CompressBasisOpts) -> Result<()> {
    let o = opts.merged()?;
    #[derive(Serialize)]
    struct Resolved {
        input: PathBuf,
        eps: f64,
        out: PathBuf,
    }
    let r = Resolved {
        input: o.input.ok_or_else(|| missing("--input"))?,
        eps: o.eps.unwrap_or(1e-4),
        out: o.out.unwrap_or_else(|| "tucker.mpib".into()),
    };
    run_with_manifest("compress-basis", &r, std::slice::from_ref(&r.input), || {
        let blocks = load_blocks(&r.input)?;
        let grid = find_grid(&blocks)?;
        let basis = find_basis(&blocks)?;
        let t = tucker::compress_basis(grid, basis, r.eps)?;
        println!(
            "tucker: dims {:?} -> ranks {:?}, storage fraction {:.4}",
            t.dims(),
            t.ranks(),
            t.storage_fraction()
        );
        write_mpib(&r.out, &[Block::Grid(grid.clone()), Block::Tucker(t)])?;
        Ok(vec![r.out.clone()])
    })
}

// -------------------------------------------------------------------- project

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectOpts {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Container holding grid + basis blocks.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Container with a maps block to project (default: synthetic birdcage).
    #[arg(long)]
    pub maps: Option<PathBuf>,
    /// Birdcage coil count when no maps file is given [default: 8].
    #[arg(long)]
    pub coils: Option<usize>,
    /// Birdcage ring radius relative to the FOV half-extent [default: 1.6].
    #[arg(long)]
    pub coil_radius: Option<f64>,
    /// Truncation dimensions to evaluate [default: 20,50,100,200].
    #[arg(long, value_delimiter = ',')]
    pub q_list: Option<Vec<usize>>,
    /// Output CSV (q, max and mean relative projection error) [default: projection.csv].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl ProjectOpts {
    fn merged(self) -> Result<Self> {
        let base: Self = match &self.config {
            Some(p) => load_config_file(p)?,
            None => Self::default(),
        };
        Ok(Self {
            config: None,
            basis: self.basis.or(base.basis),
            maps: self.maps.or(base.maps),
            coils: self.coils.or(base.coils),
            coil_radius: self.coil_radius.or(base.coil_radius),
            q_list: self.q_list.or(base.q_list),
            out: self.out.or(base.out),
        })
    }
}

pub fn project_cmd(opts: ProjectOpts) -> Result<()> {
    let o = opts.merged()?;
    #[derive(Serialize)]
    struct Resolved {
        basis: PathBuf,
        maps: Option<PathBuf>,
        coils: usize,
        coil_radius: f64,
        q_list: Vec<usize>,
        out: PathBuf,
    }
    let r = Resolved {
        basis: o.basis.ok_or_else(|| missing("--basis"))?,
        maps: o.maps,
        coils: o.coils.unwrap_or(8),
        coil_radius: o.coil_radius.unwrap_or(1.6),
        q_list: o.q_list.unwrap_or_else(|| vec![20, 50, 100, 200]),
        out: o.out.unwrap_or_else(|| "projection.csv".into()),
    };
    let mut inputs = vec![r.basis.clone()];
    if let Some(m) = &r.maps {
        inputs.push(m.clone());
    }
    run_with_manifest("project", &r, &inputs, || {
        let blocks = load_blocks(&r.basis)?;
        let grid = find_grid(&blocks)?;
        let fb = find_basis(&blocks)?;
        let maps: Vec<Array3<C64>> = match &r.maps {
            Some(p) => find_maps(&load_blocks(p)?)?.clone(),
            None => birdcage_sens(grid.dims(), r.coils, r.coil_radius)?,
        };
        if let Some(&bad) = r.q_list.iter().find(|&&q| q > fb.q()) {
            return Err(Error::InvalidParameter(format!(
                "q={bad} exceeds the stored basis dimension {}",
                fb.q()
            )));
        }
        let mut rows = Vec::new();
        for &q in &r.q_list {
            let prefix = fb.prefix(q);
            let mut errs = Vec::with_capacity(maps.len());
            for m in &maps {
                errs.push(project(&prefix, grid, m)?.1);
            }
            let max = errs.iter().cloned().fold(0.0, f64::max);
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            println!("q={q:4}  max rel err {max:.3e}  mean {mean:.3e}");
            rows.push(format!("{q},{max:e},{mean:e}"));
        }
        write_csv(&r.out, "q,max_rel_error,mean_rel_error", rows.into_iter())?;
        Ok(vec![r.out.clone()])
    })
}

// ------------------------------------------------------------------- simulate

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateOpts {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Voxel counts, 2 or 3 comma-separated values.
    #[arg(long, value_delimiter = ',')]
    pub dims: Option<Vec<usize>>,
    /// Field of view in millimeters [default: 220 per axis].
    #[arg(long, value_delimiter = ',')]
    pub fov_mm: Option<Vec<f64>>,
    /// Main field strength in tesla [default: 3].
    #[arg(long)]
    pub b0: Option<f64>,
    /// Birdcage coil count [default: 8].
    #[arg(long)]
    pub coils: Option<usize>,
    /// Birdcage ring radius relative to the FOV half-extent [default: 1.6].
    #[arg(long)]
    pub coil_radius: Option<f64>,
    /// Sampling pattern: cartesian | radial | poisson [default: cartesian].
    #[arg(long)]
    pub traj: Option<String>,
    /// Cartesian: keep every r-th phase-encode line [default: 1].
    #[arg(long)]
    pub r_phase: Option<usize>,
    /// Cartesian: keep every r-th slice-encode line [default: 1].
    #[arg(long)]
    pub r_slice: Option<usize>,
    /// Cartesian: fully sampled center lines [default: 0].
    #[arg(long)]
    pub acs_lines: Option<usize>,
    /// Cartesian: CAIPIRINHA slice shift [default: 0].
    #[arg(long)]
    pub caipi_shift: Option<usize>,
    /// Radial: spoke count.
    #[arg(long)]
    pub spokes: Option<usize>,
    /// Radial: samples per spoke [default: first grid dimension].
    #[arg(long)]
    pub readout: Option<usize>,
    /// Radial: golden-angle ordering [default: true].
    #[arg(long)]
    pub golden: Option<bool>,
    /// Poisson: mean acceleration factor.
    #[arg(long)]
    pub pd_r: Option<f64>,
    /// Poisson: fully sampled center square side [default: 8].
    #[arg(long)]
    pub pd_acs: Option<usize>,
    /// Per-coil SNR in dB; omit for noiseless data.
    #[arg(long)]
    pub snr_db: Option<f64>,
    /// Noise / pattern seed [default: 1].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output container (grid, truth density, maps, k-space) [default: sim.mpib].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl SimulateOpts {
    fn merged(self) -> Result<Self> {
        let base: Self = match &self.config {
            Some(p) => load_config_file(p)?,
            None => Self::default(),
        };
        Ok(Self {
            config: None,
            dims: self.dims.or(base.dims),
            fov_mm: self.fov_mm.or(base.fov_mm),
            b0: self.b0.or(base.b0),
            coils: self.coils.or(base.coils),
            coil_radius: self.coil_radius.or(base.coil_radius),
            traj: self.traj.or(base.traj),
            r_phase: self.r_phase.or(base.r_phase),
            r_slice: self.r_slice.or(base.r_slice),
            acs_lines: self.acs_lines.or(base.acs_lines),
            caipi_shift: self.caipi_shift.or(base.caipi_shift),
            spokes: self.spokes.or(base.spokes),
            readout: self.readout.or(base.readout),
            golden: self.golden.or(base.golden),
            pd_r: self.pd_r.or(base.pd_r),
            pd_acs: self.pd_acs.or(base.pd_acs),
            snr_db: self.snr_db.or(base.snr_db),
            seed: self.seed.or(base.seed),
            out: self.out.or(base.out),
        })
    }
}

pub fn simulate(opts: SimulateOpts) -> Result<()> {
    let o = opts.merged()?;
    let dims = resolve_dims(o.dims.ok_or_else(|| missing("--dims"))?)?;
    let fov_mm = o.fov_mm.unwrap_or_else(|| vec![220.0, 220.0]);
    let voxel = resolve_voxel_size(fov_mm, dims)?;
    let seed = o.seed.unwrap_or(1);
    let traj_name = o.traj.unwrap_or_else(|| "cartesian".into());
    let spec = match traj_name.as_str() {
        "cartesian" => TrajectorySpec::Cartesian {
            r_phase: o.r_phase.unwrap_or(1),
            r_slice: o.r_slice.unwrap_or(1),
            acs_lines: o.acs_lines.unwrap_or(0),
            caipi_shift: o.caipi_shift.unwrap_or(0),
        },
        "radial" => TrajectorySpec::Radial {
            n_spokes: o.spokes.ok_or_else(|| missing("--spokes"))?,
            readout_len: o.readout.unwrap_or(dims[0]),
            golden: o.golden.unwrap_or(true),
        },
        "poisson" => TrajectorySpec::PoissonDisc {
            r: o.pd_r.ok_or_else(|| missing("--pd-r"))?,
            acs_region: o.pd_acs.unwrap_or(8),
            seed,
        },
        other => {
            return Err(Error::InvalidParameter(format!(
                "unknown trajectory '{other}' (expected cartesian|radial|poisson)"
            )))
        }
    };
    #[derive(Serialize)]
    struct Resolved {
        dims: [usize; 3],
        voxel_size_m: [f64; 3],
        b0_t: f64,
        coils: usize,
        coil_radius: f64,
        trajectory: String,
        snr_db: Option<f64>,
        seed: u64,
        out: PathBuf,
    }
    let r = Resolved {
        dims,
        voxel_size_m: voxel,
        b0_t: o.b0.unwrap_or(3.0),
        coils: o.coils.unwrap_or(8),
        coil_radius: o.coil_radius.unwrap_or(1.6),
        trajectory: format!("{spec:?}"),
        snr_db: o.snr_db,
        seed,
        out: o.out.unwrap_or_else(|| "sim.mpib".into()),
    };
    run_with_manifest("simulate", &r, &[], || {
        let grid = FovGrid::new(r.dims, r.voxel_size_m, r.b0_t, Support::Full)?;
        let density = shepp_logan(r.dims)?;
        let maps = birdcage_sens(r.dims, r.coils, r.coil_radius)?;
        let traj = make_trajectory(r.dims, &spec)?;
        let op = FourierOp::new(r.dims, &traj)?;
        let clean = forward_model(&op, &density, &maps)?;
        let y = match r.snr_db {
            Some(snr) => add_noise(&clean, snr, r.seed),
            None => clean,
        };
        println!(
            "k-space: {} coils x {} samples, nominal acceleration {:.2}",
            y.n_coils(),
            y.n_samples(),
            traj.nominal_r(r.dims)
        );
        write_mpib(
            &r.out,
            &[Block::Grid(grid), Block::Density(density), Block::Maps(maps), Block::KSpace(y)],
        )?;
        Ok(vec![r.out.clone()])
    })
}

// ------------------------------------------------------------------- recon-bl

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconBlOpts {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Container with the k-space block to reconstruct.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Container with grid + basis (or tucker) blocks.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Truncate the stored basis to this dimension [default: stored q].
    #[arg(long)]
    pub q: Option<usize>,
    /// Outer linearization steps [default: 9].
    #[arg(long)]
    pub outer: Option<usize>,
    /// Inner CG iterations per step [default: 30].
    #[arg(long)]
    pub cg_iters: Option<usize>,
    /// Initial density damping [default: 1].
    #[arg(long)]
    pub alpha0: Option<f64>,
    /// Initial coefficient damping [default: 1].
    #[arg(long)]
    pub beta0: Option<f64>,
    /// Geometric damping decay per step [default: 0.5].
    #[arg(long)]
    pub decay: Option<f64>,
    /// Halve the step when the residual grows [default: true].
    #[arg(long)]
    pub backtrack: Option<bool>,
    /// Output container (grid, density, maps) [default: recon_bl.mpib].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Coefficient CSV [default: <out>_coeffs.csv].
    #[arg(long)]
    pub coeffs: Option<PathBuf>,
    /// Per-iteration convergence CSV [default: <out>_history.csv].
    #[arg(long)]
    pub log_csv: Option<PathBuf>,
    /// Emit magnitude/phase images of the maps and density here.
    #[arg(long)]
    pub images_dir: Option<PathBuf>,
    /// Image container: pgm | png [default: pgm].
    #[arg(long)]
    pub image_format: Option<String>,
}

impl ReconBlOpts {
    fn merged(self) -> Result<Self> {
        let base: Self = match &self.config {
            Some(p) => load_config_file(p)?,
            None => Self::default(),
        };
        Ok(Self {
            config: None,
            input: self.input.or(base.input),
            basis: self.basis.or(base.basis),
            q: self.q.or(base.q),
            outer: self.outer.or(base.outer),
            cg_iters: self.cg_iters.or(base.cg_iters),
            alpha0: self.alpha0.or(base.alpha0),
            beta0: self.beta0.or(base.beta0),
            decay: self.decay.or(base.decay),
            backtrack: self.backtrack.or(base.backtrack),
            out: self.out.or(base.out),
            coeffs: self.coeffs.or(base.coeffs),
            log_csv: self.log_csv.or(base.log_csv),
            images_dir: self.images_dir.or(base.images_dir),
            image_format: self.image_format.or(base.image_format),
        })
    }
}

pub fn recon_bl(opts: ReconBlOpts) -> Result<()> {
    let o = opts.merged()?;
    #[derive(Serialize)]
    struct Resolved {
        input: PathBuf,
        basis: PathBuf,
        q: Option<usize>,
        outer: usize,
        cg_iters: usize,
        alpha0: f64,
        beta0: f64,
        decay: f64,
        backtrack: bool,
        out: PathBuf,
        coeffs: PathBuf,
        log_csv: PathBuf,
        images_dir: Option<PathBuf>,
        image_format: String,
    }
    let out = o.out.unwrap_or_else(|| "recon_bl.mpib".into());
    let r = Resolved {
        input: o.input.ok_or_else(|| missing("--input"))?,
        basis: o.basis.ok_or_else(|| missing("--basis"))?,
        q: o.q,
        outer: o.outer.unwrap_or(9),
        cg_iters: o.cg_iters.unwrap_or(30),
        alpha0: o.alpha0.unwrap_or(1.0),
        beta0: o.beta0.unwrap_or(1.0),
        decay: o.decay.unwrap_or(0.5),
        backtrack: o.backtrack.unwrap_or(true),
        coeffs: o.coeffs.unwrap_or_else(|| sibling(&out, "_coeffs.csv")),
        log_csv: o.log_csv.unwrap_or_else(|| sibling(&out, "_history.csv")),
        out,
        images_dir: o.images_dir,
        image_format: o.image_format.unwrap_or_else(|| "pgm".into()),
    };
    let ext = image_ext(&r.image_format)?;
    let inputs = vec![r.input.clone(), r.basis.clone()];
    run_with_manifest("recon-bl", &r, &inputs, || {
        let kblocks = load_blocks(&r.input)?;
        let y = find_kspace(&kblocks)?;
        let bblocks = load_blocks(&r.basis)?;
        let grid = find_grid(&bblocks)?;
        let map_basis = if let Ok(t) = find_tucker(&bblocks) {
            if let Some(q) = r.q {
                if q != t.dims()[3] {
                    return Err(Error::InvalidParameter(format!(
                        "a compressed basis cannot be truncated (stored q={}, asked {q})",
                        t.dims()[3]
                    )));
                }
            }
            MapBasis::Compressed(t.clone())
        } else {
            let fb = find_basis(&bblocks)?;
            let q = r.q.unwrap_or(fb.q());
            if q > fb.q() {
                return Err(Error::InvalidParameter(format!(
                    "q={q} exceeds the stored basis dimension {}",
                    fb.q()
                )));
            }
            MapBasis::Dense(fb.prefix(q))
        };
        let mut cfg = IrgnConfig::new(map_basis.q());
        cfg.outer_iters = r.outer;
        cfg.cg_iters = r.cg_iters;
        cfg.alpha0 = r.alpha0;
        cfg.beta0 = r.beta0;
        cfg.decay = r.decay;
        cfg.backtrack = r.backtrack;
        let sol = irgn_reconstruct(grid, y, &map_basis, &cfg)?;
        if let Some(last) = sol.history.last() {
            println!(
                "finished {} steps, relative data residual {:.3e}",
                last.iter,
                last.residual
            );
        }
        write_mpib(
            &r.out,
            &[
                Block::Grid(grid.clone()),
                Block::Density(sol.density.clone()),
                Block::Maps(sol.maps.clone()),
            ],
        )?;
        let mut outputs = vec![r.out.clone()];
        let (n_coils, q) = (sol.coeffs.nrows(), sol.coeffs.ncols());
        write_csv(
            &r.coeffs,
            "coil,index,re,im",
            (0..n_coils).flat_map(|k| {
                let row = sol.coeffs.row(k).to_owned();
                (0..q).map(move |i| format!("{k},{i},{:e},{:e}", row[i].re, row[i].im))
            }),
        )?;
        outputs.push(r.coeffs.clone());
        write_csv(
            &r.log_csv,
            "iter,alpha,beta,gamma,cg_iters,cg_rel_residual,residual",
            sol.history.iter().map(|h| {
                format!(
                    "{},{:e},{:e},{:e},{},{:e},{:e}",
                    h.iter, h.alpha, h.beta, h.gamma, h.cg_iters, h.cg_rel_residual, h.residual
                )
            }),
        )?;
        outputs.push(r.log_csv.clone());
        if let Some(dir) = &r.images_dir {
            std::fs::create_dir_all(dir)?;
            outputs.extend(emit_map_pair(dir, "density", &sol.density, ext)?);
            for (k, m) in sol.maps.iter().enumerate() {
                outputs.extend(emit_map_pair(dir, &format!("sm{k:02}"), m, ext)?);
            }
        }
        Ok(outputs)
    })
}

// -------------------------------------------------------------------- recon-l

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconLOpts {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Container with the k-space block (and maps, unless --maps is given).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Container with the sensitivity maps block [default: --input].
    #[arg(long)]
    pub maps: Option<PathBuf>,
    /// Iteration cap [default: 300].
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Initial penalty [default: 1].
    #[arg(long)]
    pub rho0: Option<f64>,
    /// Residual-balance threshold [default: 10].
    #[arg(long)]
    pub mu: Option<f64>,
    /// Penalty step when residuals are unbalanced [default: 2].
    #[arg(long)]
    pub rho_factor: Option<f64>,
    /// Inner iterations of the TV proximal map [default: 20].
    #[arg(long)]
    pub tv_inner: Option<usize>,
    /// Relative stopping tolerance [default: 1e-5].
    #[arg(long)]
    pub tol_rel: Option<f64>,
    /// CG budget of the density update [default: 100].
    #[arg(long)]
    pub cg_iters: Option<usize>,
    /// Per-coil noise-ball radii (comma list) [default: estimated from data].
    #[arg(long, value_delimiter = ',')]
    pub eps: Option<Vec<f64>>,
    /// Scale applied to estimated radii [default: 1].
    #[arg(long)]
    pub eps_multiplier: Option<f64>,
    /// Output container (density) [default: recon_l.mpib].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Per-iteration convergence CSV [default: <out>_convergence.csv].
    #[arg(long)]
    pub log_csv: Option<PathBuf>,
    /// Emit magnitude/phase images of the density here.
    #[arg(long)]
    pub images_dir: Option<PathBuf>,
    /// Image container: pgm | png [default: pgm].
    #[arg(long)]
    pub image_format: Option<String>,
}

impl ReconLOpts {
    fn merged(self) -> Result<Self> {
        let base: Self = match &self.config {
            Some(p) => load_config_file(p)?,
            None => Self::default(),
        };
        Ok(Self {
            config: None,
            input: self.input.or(base.input),
            maps: self.maps.or(base.maps),
            max_iters: self.max_iters.or(base.max_iters),
            rho0: self.rho0.or(base.rho0),
            mu: self.mu.or(base.mu),
            rho_factor: self.rho_factor.or(base.rho_factor),
            tv_inner: self.tv_inner.or(base.tv_inner),
            tol_rel: self.tol_rel.or(base.tol_rel),
            cg_iters: self.cg_iters.or(base.cg_iters),
            eps: self.eps.or(base.eps),
            eps_multiplier: self.eps_multiplier.or(base.eps_multiplier),
            out: self.out.or(base.out),
            log_csv: self.log_csv.or(base.log_csv),
            images_dir: self.images_dir.or(base.images_dir),
            image_format: self.image_format.or(base.image_format),
        })
    }
}

pub fn recon_l(opts: ReconLOpts) -> Result<()> {
    let o = opts.merged()?;
    #[derive(Serialize)]
    struct Resolved {
        input: PathBuf,
        maps: Option<PathBuf>,
        max_iters: usize,
        rho0: f64,
        mu: f64,
        rho_factor: f64,
        tv_inner: usize,
        tol_rel: f64,
        cg_iters: usize,
        eps: Option<Vec<f64>>,
        eps_multiplier: f64,
        out: PathBuf,
        log_csv: PathBuf,
        images_dir: Option<PathBuf>,
        image_format: String,
    }
    let out = o.out.unwrap_or_else(|| "recon_l.mpib".into());
    let r = Resolved {
        input: o.input.ok_or_else(|| missing("--input"))?,
        maps: o.maps,
        max_iters: o.max_iters.unwrap_or(300),
        rho0: o.rho0.unwrap_or(1.0),
        mu: o.mu.unwrap_or(10.0),
        rho_factor: o.rho_factor.unwrap_or(2.0),
        tv_inner: o.tv_inner.unwrap_or(20),
        tol_rel: o.tol_rel.unwrap_or(1e-5),
        cg_iters: o.cg_iters.unwrap_or(100),
        eps: o.eps,
        eps_multiplier: o.eps_multiplier.unwrap_or(1.0),
        log_csv: o.log_csv.unwrap_or_else(|| sibling(&out, "_convergence.csv")),
        out,
        images_dir: o.images_dir,
        image_format: o.image_format.unwrap_or_else(|| "pgm".into()),
    };
    let ext = image_ext(&r.image_format)?;
    let mut inputs = vec![r.input.clone()];
    if let Some(m) = &r.maps {
        inputs.push(m.clone());
    }
    run_with_manifest("recon-l", &r, &inputs, || {
        let kblocks = load_blocks(&r.input)?;
        let y = find_kspace(&kblocks)?;
        let maps: Vec<Array3<C64>> = match &r.maps {
            Some(p) => find_maps(&load_blocks(p)?)?.clone(),
            None => find_maps(&kblocks)?.clone(),
        };
        let d = maps
            .first()
            .ok_or_else(|| Error::InvalidParameter("maps block is empty".into()))?
            .dim();
        let eps = match &r.eps {
            Some(v) => v.clone(),
            None => estimate_eps(y, [d.0, d.1, d.2], r.eps_multiplier)?,
        };
        let cfg = AdmmConfig {
            max_iters: r.max_iters,
            rho0: r.rho0,
            mu: r.mu,
            rho_factor: r.rho_factor,
            tv_inner_iters: r.tv_inner,
            tol_rel: r.tol_rel,
            cg_iters: r.cg_iters,
            eps,
        };
        let sol = admm_reconstruct(y, &maps, &cfg)?;
        println!(
            "{} after {} iterations",
            if sol.converged { "converged" } else { "stopped at the cap" },
            sol.history.len()
        );
        for (k, (&res, &e)) in sol.coil_residuals.iter().zip(&cfg.eps).enumerate() {
            println!("coil {k}: residual {res:.4e} vs ball radius {e:.4e}");
        }
        if !sol.feasible {
            eprintln!("warning: data residuals exceed the noise-ball radii by more than 1%");
        }
        let mut blocks = Vec::new();
        if let Ok(g) = find_grid(&kblocks) {
            blocks.push(Block::Grid(g.clone()));
        }
        blocks.push(Block::Density(sol.density.clone()));
        write_mpib(&r.out, &blocks)?;
        let mut outputs = vec![r.out.clone()];
        write_csv(
            &r.log_csv,
            "iter,rho,primal,dual,tv,cg_iters",
            sol.history.iter().map(|h| {
                format!("{},{:e},{:e},{:e},{:e},{}", h.iter, h.rho, h.primal, h.dual, h.tv, h.cg_iters)
            }),
        )?;
        outputs.push(r.log_csv.clone());
        if let Some(dir) = &r.images_dir {
            std::fs::create_dir_all(dir)?;
            outputs.extend(emit_map_pair(dir, "density", &sol.density, ext)?);
        }
        Ok(outputs)
    })
}

// -------------------------------------------------------------------- metrics

#[derive(Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsOpts {
    /// JSON config file; explicit flags override its values.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Container with the density block to score.
    #[arg(long)]
    pub x: Option<PathBuf>,
    /// Container with the reference density block.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Optional container with maps to score against --basis.
    #[arg(long)]
    pub maps: Option<PathBuf>,
    /// Optional container with grid + basis blocks for projection error.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Output JSON [default: metrics.json].
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl MetricsOpts {
    fn merged(self) -> Result<Self> {
        let base: Self = match &self.config {
            Some(p) => load_config_file(p)?,
            None => Self::default(),
        };
        Ok(Self {
            config: None,
            x: self.x.or(base.x),
            reference: self.reference.or(base.reference),
            maps: self.maps.or(base.maps),
            basis: self.basis.or(base.basis),
            out: self.out.or(base.out),
        })
    }
}

pub fn metrics_cmd(opts: MetricsOpts) -> Result<()> {
    let o = opts.merged()?;
    #[derive(Serialize)]
    struct Resolved {
        x: PathBuf,
        reference: PathBuf,
        maps: Option<PathBuf>,
        basis: Option<PathBuf>,
        out: PathBuf,
    }
    let r = Resolved {
        x: o.x.ok_or_else(|| missing("--x"))?,
        reference: o.reference.ok_or_else(|| missing("--reference"))?,
        maps: o.maps,
        basis: o.basis,
        out: o.out.unwrap_or_else(|| "metrics.json".into()),
    };
    if r.maps.is_some() != r.basis.is_some() {
        return Err(Error::InvalidParameter(
            "--maps and --basis must be given together".into(),
        ));
    }
    let mut inputs = vec![r.x.clone(), r.reference.clone()];
    inputs.extend(r.maps.iter().cloned());
    inputs.extend(r.basis.iter().cloned());
    run_with_manifest("metrics", &r, &inputs, || {
        let x = find_density(&load_blocks(&r.x)?)?.clone();
        let reference = find_density(&load_blocks(&r.reference)?)?.clone();
        let err = nrmse(x.view(), reference.view())?;
        let max_coil_projection_error = match (&r.maps, &r.basis) {
            (Some(mp), Some(bp)) => {
                let maps = find_maps(&load_blocks(mp)?)?.clone();
                let bblocks = load_blocks(bp)?;
                let grid = find_grid(&bblocks)?;
                let fb = find_basis(&bblocks)?;
                let mut worst = 0.0f64;
                for m in &maps {
                    worst = worst.max(project(fb, grid, m)?.1);
                }
                Some(worst)
            }
            _ => None,
        };
        let m = Metrics { nrmse: err, max_coil_projection_error };
        let text = serde_json::to_string_pretty(&m)?;
        println!("{text}");
        std::fs::write(&r.out, text)?;
        Ok(vec![r.out.clone()])
    })
}
