//! MPIB container: a single-file, self-describing block format for every
//! artifact the toolkit produces (grids, bases, trajectories, k-space data,
//! maps, densities).
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! file   := "MPIB" version:u16 block*
//! block  := tag:u8 meta_len:u32 meta payload_len:u64 payload crc:u32
//! ```
//!
//! `meta` is UTF-8 JSON carrying shapes and scalar fields; `payload` holds
//! the bulk arrays in row-major order — complex values as `re, im` f64
//! pairs, reals as f64, boolean masks as one byte per voxel (0/1). `crc` is
//! CRC-32 (IEEE polynomial, reflected) over everything from `tag` through
//! the end of `payload`; it is verified before any object is constructed,
//! so a truncated or corrupted file never yields partial data. The magic
//! and version double as an endianness check: a byte-swapped writer
//! produces an unsupported version.
//!
//! Tags: 0x01 grid, 0x02 basis, 0x03 tucker, 0x04 trajectory, 0x05 k-space,
//! 0x06 maps, 0x07 density. Unknown tags are an error, not skipped — a
//! reader that ignores blocks it does not understand could silently drop
//! the payload a pipeline depends on.

use std::path::Path;
use std::sync::OnceLock;

use ndarray::{Array1, Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::basis::FieldBasis;
use crate::encoding::{CartesianMask, KSpaceData, PoissonDiscMask, RadialTraj, Trajectory};
use crate::error::{Error, Result};
use crate::grid::{FovGrid, GridMeta};
use crate::tucker::TuckerBasis;
use crate::C64;

pub const MPIB_MAGIC: [u8; 4] = *b"MPIB";
pub const MPIB_VERSION: u16 = 1;

/// CRC-32 (IEEE 802.3 polynomial 0xEDB88320, reflected, init/final 0xFFFFFFFF).
pub fn crc32(data: &[u8]) -> u32 {
    static TABLE: OnceLock<[u32; 256]> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        let mut t = [0u32; 256];
        for (i, e) in t.iter_mut().enumerate() {
            let mut c = i as u32;
            for _ in 0..8 {
                c = if c & 1 != 0 { 0xEDB8_8320 ^ (c >> 1) } else { c >> 1 };
            }
            *e = c;
        }
        t
    });
    let mut c = 0xFFFF_FFFFu32;
    for &b in data {
        c = table[((c ^ b as u32) & 0xFF) as usize] ^ (c >> 8);
    }
    c ^ 0xFFFF_FFFF
}

/// One persisted artifact.
#[derive(Debug, Clone)]
pub enum Block {
    Grid(FovGrid),
    Basis(FieldBasis),
    Tucker(TuckerBasis),
    Traj(Trajectory),
    KSpace(KSpaceData),
    Maps(Vec<Array3<C64>>),
    Density(Array3<C64>),
}

impl Block {
    pub fn tag(&self) -> u8 {
        match self {
            Block::Grid(_) => 0x01,
            Block::Basis(_) => 0x02,
            Block::Tucker(_) => 0x03,
            Block::Traj(_) => 0x04,
            Block::KSpace(_) => 0x05,
            Block::Maps(_) => 0x06,
            Block::Density(_) => 0x07,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Block::Grid(_) => "grid",
            Block::Basis(_) => "basis",
            Block::Tucker(_) => "tucker",
            Block::Traj(_) => "trajectory",
            Block::KSpace(_) => "kspace",
            Block::Maps(_) => "maps",
            Block::Density(_) => "density",
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TrajMeta {
    Cartesian { dims: [usize; 3], acs_lines: usize, r_phase: usize, r_slice: usize, caipi_shift: usize },
    Radial { n_spokes: usize, readout_len: usize, golden: bool, angles: Vec<f64> },
    PoissonDisc { dims: [usize; 3], r: f64, acs_region: usize, seed: u64 },
}

#[derive(Serialize, Deserialize)]
struct BasisMeta {
    rows: usize,
    cols: usize,
    n_sigma: usize,
}

#[derive(Serialize, Deserialize)]
struct TuckerMeta {
    dims: [usize; 4],
    ranks: [usize; 4],
}

#[derive(Serialize, Deserialize)]
struct KSpaceMeta {
    n_coils: usize,
    n_samples: usize,
    sigma: Option<Vec<f64>>,
    traj: TrajMeta,
}

#[derive(Serialize, Deserialize)]
struct VolumesMeta {
    dims: [usize; 3],
    n_vols: usize,
}

fn put_c64s<'a>(out: &mut Vec<u8>, vals: impl Iterator<Item = &'a C64>) {
    for v in vals {
        out.extend_from_slice(&v.re.to_le_bytes());
        out.extend_from_slice(&v.im.to_le_bytes());
    }
}

fn put_bools<'a>(out: &mut Vec<u8>, vals: impl Iterator<Item = &'a bool>) {
    out.extend(vals.map(|&b| b as u8));
}

fn traj_parts(traj: &Trajectory) -> (TrajMeta, Option<&Array3<bool>>) {
    match traj {
        Trajectory::Cartesian(c) => {
            let d = c.mask.dim();
            (
                TrajMeta::Cartesian {
                    dims: [d.0, d.1, d.2],
                    acs_lines: c.acs_lines,
                    r_phase: c.r_phase,
                    r_slice: c.r_slice,
                    caipi_shift: c.caipi_shift,
                },
                Some(&c.mask),
            )
        }
        Trajectory::Radial(r) => (
            TrajMeta::Radial {
                n_spokes: r.n_spokes,
                readout_len: r.readout_len,
                golden: r.golden,
                angles: r.angles.clone(),
            },
            None,
        ),
        Trajectory::PoissonDisc(p) => {
            let d = p.mask.dim();
            (
                TrajMeta::PoissonDisc {
                    dims: [d.0, d.1, d.2],
                    r: p.r,
                    acs_region: p.acs_region,
                    seed: p.seed,
                },
                Some(&p.mask),
            )
        }
    }
}

fn traj_mask_len(meta: &TrajMeta) -> usize {
    match meta {
        TrajMeta::Cartesian { dims, .. } | TrajMeta::PoissonDisc { dims, .. } => {
            dims[0] * dims[1] * dims[2]
        }
        TrajMeta::Radial { .. } => 0,
    }
}

fn traj_from_parts(meta: TrajMeta, mask: Option<Array3<bool>>) -> Result<Trajectory> {
    Ok(match meta {
        TrajMeta::Cartesian { acs_lines, r_phase, r_slice, caipi_shift, .. } => {
            let mask = mask.ok_or_else(|| Error::MalformedBlock("cartesian block lacks a mask".into()))?;
            Trajectory::Cartesian(CartesianMask { mask, acs_lines, r_phase, r_slice, caipi_shift })
        }
        TrajMeta::Radial { n_spokes, readout_len, golden, angles } => {
            if angles.len() != n_spokes {
                return Err(Error::MalformedBlock(format!(
                    "radial block has {} angles for {} spokes",
                    angles.len(),
                    n_spokes
                )));
            }
            Trajectory::Radial(RadialTraj { n_spokes, readout_len, golden, angles })
        }
        TrajMeta::PoissonDisc { r, acs_region, seed, .. } => {
            let mask = mask.ok_or_else(|| Error::MalformedBlock("poisson block lacks a mask".into()))?;
            Trajectory::PoissonDisc(PoissonDiscMask { mask, r, acs_region, seed })
        }
    })
}

fn block_parts(block: &Block) -> Result<(Vec<u8>, Vec<u8>)> {
    let (meta, mut payload) = match block {
        Block::Grid(g) => {
            let meta = serde_json::to_vec(&g.meta())?;
            let mut payload = Vec::with_capacity(g.n_voxels());
            put_bools(&mut payload, g.support().iter());
            (meta, payload)
        }
        Block::Basis(b) => {
            let meta = serde_json::to_vec(&BasisMeta {
                rows: b.vectors.nrows(),
                cols: b.vectors.ncols(),
                n_sigma: b.singular_values.len(),
            })?;
            let mut payload = Vec::with_capacity(16 * b.vectors.len() + 8 * b.singular_values.len());
            put_c64s(&mut payload, b.vectors.iter());
            for s in &b.singular_values {
                payload.extend_from_slice(&s.to_le_bytes());
            }
            (meta, payload)
        }
        Block::Tucker(t) => {
            let meta = serde_json::to_vec(&TuckerMeta { dims: t.dims(), ranks: t.ranks() })?;
            let mut payload = Vec::new();
            put_c64s(&mut payload, t.core.iter());
            for f in &t.factors {
                put_c64s(&mut payload, f.iter());
            }
            (meta, payload)
        }
        Block::Traj(traj) => {
            let (tm, mask) = traj_parts(traj);
            let meta = serde_json::to_vec(&tm)?;
            let mut payload = Vec::new();
            if let Some(m) = mask {
                put_bools(&mut payload, m.iter());
            }
            (meta, payload)
        }
        Block::KSpace(y) => {
            let (tm, mask) = traj_parts(&y.traj);
            let meta = serde_json::to_vec(&KSpaceMeta {
                n_coils: y.n_coils(),
                n_samples: y.n_samples(),
                sigma: y.sigma.clone(),
                traj: tm,
            })?;
            let mut payload = Vec::new();
            if let Some(m) = mask {
                put_bools(&mut payload, m.iter());
            }
            put_c64s(&mut payload, y.samples.iter());
            (meta, payload)
        }
        Block::Maps(maps) => {
            let first = maps
                .first()
                .ok_or_else(|| Error::InvalidParameter("maps block needs at least one map".into()))?;
            let d = first.dim();
            if maps.iter().any(|m| m.dim() != d) {
                return Err(Error::ShapeMismatch("maps in one block must share dims".into()));
            }
            let meta = serde_json::to_vec(&VolumesMeta { dims: [d.0, d.1, d.2], n_vols: maps.len() })?;
            let mut payload = Vec::with_capacity(16 * first.len() * maps.len());
            for m in maps {
                put_c64s(&mut payload, m.iter());
            }
            (meta, payload)
        }
        Block::Density(p) => {
            let d = p.dim();
            let meta = serde_json::to_vec(&VolumesMeta { dims: [d.0, d.1, d.2], n_vols: 1 })?;
            let mut payload = Vec::with_capacity(16 * p.len());
            put_c64s(&mut payload, p.iter());
            (meta, payload)
        }
    };
    payload.shrink_to_fit();
    Ok((meta, payload))
}

/// Serialize blocks to the container byte format.
pub fn mpib_bytes(blocks: &[Block]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MPIB_MAGIC);
    out.extend_from_slice(&MPIB_VERSION.to_le_bytes());
    for block in blocks {
        let (meta, payload) = block_parts(block)?;
        let start = out.len();
        out.push(block.tag());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&payload);
        let crc = crc32(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }
    Ok(out)
}

pub fn write_mpib(path: impl AsRef<Path>, blocks: &[Block]) -> Result<()> {
    let bytes = mpib_bytes(blocks)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::MalformedBlock(format!(
                "truncated: wanted {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.buf.len()
    }
}

fn read_c64s(bytes: &[u8], count: usize) -> Vec<C64> {
    (0..count)
        .map(|i| {
            let re = f64::from_le_bytes(bytes[16 * i..16 * i + 8].try_into().unwrap());
            let im = f64::from_le_bytes(bytes[16 * i + 8..16 * i + 16].try_into().unwrap());
            C64::new(re, im)
        })
        .collect()
}

fn read_bools(bytes: &[u8]) -> Result<Vec<bool>> {
    bytes
        .iter()
        .map(|&b| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(Error::MalformedBlock(format!("mask byte {other} is not 0/1"))),
        })
        .collect()
}

fn expect_len(payload: &[u8], want: usize, what: &str) -> Result<()> {
    if payload.len() != want {
        return Err(Error::MalformedBlock(format!(
            "{what}: payload is {} bytes, metadata implies {want}",
            payload.len()
        )));
    }
    Ok(())
}

fn decode_block(tag: u8, meta: &[u8], payload: &[u8]) -> Result<Block> {
    match tag {
        0x01 => {
            let gm: GridMeta = serde_json::from_slice(meta)?;
            let n = gm.dims[0] * gm.dims[1] * gm.dims[2];
            expect_len(payload, n, "grid")?;
            let mask = Array3::from_shape_vec((gm.dims[0], gm.dims[1], gm.dims[2]), read_bools(payload)?)
                .expect("mask length checked");
            Ok(Block::Grid(FovGrid::from_parts(gm, mask)?))
        }
        0x02 => {
            let bm: BasisMeta = serde_json::from_slice(meta)?;
            expect_len(payload, 16 * bm.rows * bm.cols + 8 * bm.n_sigma, "basis")?;
            let (vb, sb) = payload.split_at(16 * bm.rows * bm.cols);
            let vectors = Array2::from_shape_vec((bm.rows, bm.cols), read_c64s(vb, bm.rows * bm.cols))
                .expect("length checked");
            let singular_values = Array1::from_iter(
                sb.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())),
            );
            Ok(Block::Basis(FieldBasis { vectors, singular_values }))
        }
        0x03 => {
            let tm: TuckerMeta = serde_json::from_slice(meta)?;
            let core_len: usize = tm.ranks.iter().product();
            let fac_len: usize = (0..4).map(|m| tm.dims[m] * tm.ranks[m]).sum();
            expect_len(payload, 16 * (core_len + fac_len), "tucker")?;
            let (cb, mut rest) = payload.split_at(16 * core_len);
            let core = Array4::from_shape_vec(
                (tm.ranks[0], tm.ranks[1], tm.ranks[2], tm.ranks[3]),
                read_c64s(cb, core_len),
            )
            .expect("length checked");
            let mut factors = Vec::with_capacity(4);
            for m in 0..4 {
                let n = tm.dims[m] * tm.ranks[m];
                let (fb, r) = rest.split_at(16 * n);
                rest = r;
                factors.push(
                    Array2::from_shape_vec((tm.dims[m], tm.ranks[m]), read_c64s(fb, n))
                        .expect("length checked"),
                );
            }
            let factors: [Array2<C64>; 4] = factors.try_into().expect("four factors");
            Ok(Block::Tucker(TuckerBasis { core, factors }))
        }
        0x04 => {
            let tm: TrajMeta = serde_json::from_slice(meta)?;
            let n = traj_mask_len(&tm);
            expect_len(payload, n, "trajectory")?;
            let mask = (n > 0)
                .then(|| mask_from_bytes(&tm, payload))
                .transpose()?;
            Ok(Block::Traj(traj_from_parts(tm, mask)?))
        }
        0x05 => {
            let km: KSpaceMeta = serde_json::from_slice(meta)?;
            let n_mask = traj_mask_len(&km.traj);
            let n_samp = 16 * km.n_coils * km.n_samples;
            expect_len(payload, n_mask + n_samp, "kspace")?;
            let (mb, sb) = payload.split_at(n_mask);
            let mask = (n_mask > 0).then(|| mask_from_bytes(&km.traj, mb)).transpose()?;
            let traj = traj_from_parts(km.traj, mask)?;
            if traj.n_samples() != km.n_samples {
                return Err(Error::MalformedBlock(format!(
                    "kspace: trajectory yields {} samples, metadata says {}",
                    traj.n_samples(),
                    km.n_samples
                )));
            }
            let samples = Array2::from_shape_vec(
                (km.n_coils, km.n_samples),
                read_c64s(sb, km.n_coils * km.n_samples),
            )
            .expect("length checked");
            if let Some(s) = &km.sigma {
                if s.len() != km.n_coils {
                    return Err(Error::MalformedBlock(format!(
                        "kspace: {} sigma entries for {} coils",
                        s.len(),
                        km.n_coils
                    )));
                }
            }
            Ok(Block::KSpace(KSpaceData { traj, samples, sigma: km.sigma }))
        }
        0x06 | 0x07 => {
            let vm: VolumesMeta = serde_json::from_slice(meta)?;
            let nvox = vm.dims[0] * vm.dims[1] * vm.dims[2];
            if vm.n_vols == 0 {
                return Err(Error::MalformedBlock("volume block with zero volumes".into()));
            }
            expect_len(payload, 16 * nvox * vm.n_vols, "volumes")?;
            let mut vols = Vec::with_capacity(vm.n_vols);
            for i in 0..vm.n_vols {
                let chunk = &payload[16 * nvox * i..16 * nvox * (i + 1)];
                vols.push(
                    Array3::from_shape_vec((vm.dims[0], vm.dims[1], vm.dims[2]), read_c64s(chunk, nvox))
                        .expect("length checked"),
                );
            }
            if tag == 0x06 {
                Ok(Block::Maps(vols))
            } else {
                if vm.n_vols != 1 {
                    return Err(Error::MalformedBlock("density block must hold one volume".into()));
                }
                Ok(Block::Density(vols.pop().expect("one volume")))
            }
        }
        other => Err(Error::UnknownTag(other)),
    }
}

fn mask_from_bytes(meta: &TrajMeta, bytes: &[u8]) -> Result<Array3<bool>> {
    let dims = match meta {
        TrajMeta::Cartesian { dims, .. } | TrajMeta::PoissonDisc { dims, .. } => *dims,
        TrajMeta::Radial { .. } => unreachable!("radial trajectories carry no mask"),
    };
    Ok(Array3::from_shape_vec((dims[0], dims[1], dims[2]), read_bools(bytes)?)
        .expect("mask length checked"))
}

/// Parse a container from bytes. Every block's CRC is verified before its
/// contents are decoded.
pub fn parse_mpib(bytes: &[u8]) -> Result<Vec<Block>> {
    let mut cur = Cursor { buf: bytes, pos: 0 };
    if cur.take(4).map_err(|_| Error::BadMagic)? != MPIB_MAGIC {
        return Err(Error::BadMagic);
    }
    let version = cur.u16().map_err(|_| Error::BadMagic)?;
    if version != MPIB_VERSION {
        return Err(Error::BadVersion(version));
    }
    let mut blocks = Vec::new();
    while !cur.done() {
        let start = cur.pos;
        let tag = cur.u8()?;
        let meta_len = cur.u32()? as usize;
        let meta = cur.take(meta_len)?;
        let payload_len = cur.u64()? as usize;
        let payload = cur.take(payload_len)?;
        let body_end = cur.pos;
        let stored = cur.u32()?;
        let computed = crc32(&bytes[start..body_end]);
        if stored != computed {
            return Err(Error::CrcMismatch { stored, computed });
        }
        blocks.push(decode_block(tag, meta, payload)?);
    }
    Ok(blocks)
}

pub fn read_mpib(path: impl AsRef<Path>) -> Result<Vec<Block>> {
    let bytes = std::fs::read(path)?;
    parse_mpib(&bytes)
}

macro_rules! finder {
    ($name:ident, $variant:ident, $ty:ty, $label:literal) => {
        /// First block of this kind, or a malformed-container error.
        pub fn $name(blocks: &[Block]) -> Result<&$ty> {
            blocks
                .iter()
                .find_map(|b| match b {
                    Block::$variant(x) => Some(x),
                    _ => None,
                })
                .ok_or_else(|| Error::MalformedBlock(concat!("container has no ", $label, " block").into()))
        }
    };
}

finder!(find_grid, Grid, FovGrid, "grid");
finder!(find_basis, Basis, FieldBasis, "basis");
finder!(find_tucker, Tucker, TuckerBasis, "tucker");
finder!(find_traj, Traj, Trajectory, "trajectory");
finder!(find_kspace, KSpace, KSpaceData, "k-space");
finder!(find_maps, Maps, Vec<Array3<C64>>, "maps");
finder!(find_density, Density, Array3<C64>, "density");
