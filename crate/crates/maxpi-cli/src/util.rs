//! Shared plumbing: config-file merging, provenance manifests, checksums,
//! CSV emission, and MPIB loading helpers.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use maxpi::error::{Error, Result};
use maxpi::io::Block;

/// Read a JSON config file into a command's option-bag. Unknown keys are a
/// configuration error (typos must not be silently ignored).
pub fn load_config_file<C: DeserializeOwned>(path: &Path) -> Result<C> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Error::InvalidParameter(format!("config file {}: {e}", path.display()))
    })
}

/// Error for a required value that neither the flags nor the file supplied.
pub fn missing(flag: &str) -> Error {
    Error::InvalidParameter(format!(
        "missing required value: pass {flag} or set the matching config key"
    ))
}

/// Expand 2-D shorthand (`--dims 64,64`) to three axes.
pub fn resolve_dims(dims: Vec<usize>) -> Result<[usize; 3]> {
    match dims[..] {
        [a, b] => Ok([a, b, 1]),
        [a, b, c] => Ok([a, b, c]),
        _ => Err(Error::InvalidParameter(format!(
            "--dims takes 2 or 3 comma-separated values, got {}",
            dims.len()
        ))),
    }
}

/// Voxel size in meters from a millimeter FOV spec (2 or 3 values; a 2-D
/// FOV gets a single in-plane-sized slice in z).
pub fn resolve_voxel_size(fov_mm: Vec<f64>, dims: [usize; 3]) -> Result<[f64; 3]> {
    let fov: Vec<f64> = match fov_mm[..] {
        [a, b] => vec![a, b, a / dims[0] as f64],
        [a, b, c] => vec![a, b, c],
        _ => {
            return Err(Error::InvalidParameter(format!(
                "--fov-mm takes 2 or 3 comma-separated values, got {}",
                fov_mm.len()
            )))
        }
    };
    Ok([
        fov[0] * 1e-3 / dims[0] as f64,
        fov[1] * 1e-3 / dims[1] as f64,
        fov[2] * 1e-3 / dims[2] as f64,
    ])
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(format!("{:x}", h.finalize()))
}

#[derive(Serialize)]
struct FileRecord {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config: serde_json::Value,
    inputs: Vec<FileRecord>,
    outputs: Vec<FileRecord>,
    wall_time_s: f64,
}

fn record(path: &Path) -> Result<FileRecord> {
    Ok(FileRecord {
        path: path.display().to_string(),
        bytes: std::fs::metadata(path)?.len(),
        sha256: sha256_hex(path)?,
    })
}

/// Echo the resolved config, run the command body, then write a manifest
/// listing every input/output with its checksum next to the primary output.
pub fn run_with_manifest<C: Serialize>(
    command: &str,
    cfg: &C,
    inputs: &[PathBuf],
    body: impl FnOnce() -> Result<Vec<PathBuf>>,
) -> Result<()> {
    let config = serde_json::to_value(cfg)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&serde_json::json!({
            "command": command,
            "config": config,
        }))?
    );
    let start = Instant::now();
    let outputs = body()?;
    let wall_time_s = start.elapsed().as_secs_f64();
    let manifest = Manifest {
        command,
        version: env!("CARGO_PKG_VERSION"),
        config,
        inputs: inputs.iter().map(|p| record(p)).collect::<Result<_>>()?,
        outputs: outputs.iter().map(|p| record(p)).collect::<Result<_>>()?,
        wall_time_s,
    };
    let primary = outputs
        .first()
        .cloned()
        .unwrap_or_else(|| PathBuf::from(command));
    let mpath = manifest_path(&primary);
    std::fs::write(&mpath, serde_json::to_vec_pretty(&manifest)?)?;
    println!("manifest: {}", mpath.display());
    Ok(())
}

pub fn manifest_path(primary_output: &Path) -> PathBuf {
    let stem = primary_output
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    primary_output.with_file_name(format!("{stem}.manifest.json"))
}

pub fn write_csv(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> Result<()> {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row);
        text.push('\n');
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Read an MPIB file, labeling I/O errors with the path.
pub fn load_blocks(path: &Path) -> Result<Vec<Block>> {
    maxpi::io::read_mpib(path).map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => other,
    })
}
