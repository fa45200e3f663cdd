//! End-to-end tests of the `maxpi` binary: config handling, exit codes,
//! the full pipeline on a tiny problem, and byte-identical reruns.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sha2::{Digest, Sha256};
use tempfile::TempDir;

fn maxpi(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maxpi"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("spawn maxpi")
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "command failed\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn sha256_hex(path: &Path) -> String {
    let bytes = fs::read(path).expect("read file");
    let mut h = Sha256::new();
    h.update(&bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Every file listed in a manifest must exist with the recorded size and hash.
fn check_manifest(dir: &Path, name: &str, command: &str) {
    let text = fs::read_to_string(dir.join(name)).expect("manifest exists");
    let m: serde_json::Value = serde_json::from_str(&text).expect("manifest is JSON");
    assert_eq!(m["command"], command);
    assert!(m["wall_time_s"].as_f64().expect("wall time") >= 0.0);
    assert!(m["config"].is_object());
    for section in ["inputs", "outputs"] {
        for rec in m[section].as_array().expect("file list") {
            let path = dir.join(rec["path"].as_str().expect("path"));
            let bytes = fs::metadata(&path).expect("listed file exists").len();
            assert_eq!(bytes, rec["bytes"].as_u64().expect("bytes"), "{path:?} size");
            assert_eq!(sha256_hex(&path), rec["sha256"], "{path:?} hash");
        }
    }
    assert!(!m["outputs"].as_array().unwrap().is_empty(), "{command} lists outputs");
}

#[test]
fn flags_override_config_file_and_echo_resolved_values() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(
        dir.join("cfg.json"),
        r#"{"dims": [12, 12], "fov_mm": [220, 220], "q": 4, "seed": 3}"#,
    )
    .unwrap();
    let out = maxpi(dir, &["build-basis", "--config", "cfg.json", "--q", "6"]);
    assert_ok(&out);
    let echo = stdout(&out);
    let header: serde_json::Value =
        serde_json::from_str(&echo[..echo.find("\n}").unwrap() + 2]).expect("echo is JSON");
    assert_eq!(header["config"]["q"], 6, "flag wins over file");
    assert_eq!(header["config"]["seed"], 3, "file fills unset flags");
    assert_eq!(header["config"]["b0_t"], 3.0, "defaults fill the rest");
}

#[test]
fn missing_required_value_exits_1_and_names_the_flag() {
    let tmp = TempDir::new().unwrap();
    let out = maxpi(tmp.path(), &["build-basis", "--dims", "16,16", "--fov-mm", "220,220"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.starts_with("error[config]:"), "got: {err}");
    assert!(err.contains("--q"), "names the missing flag: {err}");
}

#[test]
fn unknown_config_key_exits_1() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("bad.json"), r#"{"dims": [12, 12], "qq": 4}"#).unwrap();
    let out = maxpi(
        dir,
        &["build-basis", "--config", "bad.json", "--fov-mm", "220,220", "--q", "4"],
    );
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("unknown field `qq`"), "got: {err}");
}

#[test]
fn missing_input_file_exits_2() {
    let tmp = TempDir::new().unwrap();
    let out = maxpi(tmp.path(), &["recon-l", "--input", "nosuch.mpib"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).starts_with("error[io]:"));
}

#[test]
fn bad_thread_count_exits_1() {
    let tmp = TempDir::new().unwrap();
    let out = maxpi(tmp.path(), &["--threads", "0", "metrics", "--x", "a", "--reference", "b"]);
    assert_eq!(out.status.code(), Some(1));
    let env_out = Command::new(env!("CARGO_BIN_EXE_maxpi"))
        .args(["metrics", "--x", "a", "--reference", "b"])
        .env("MPI_THREADS", "many")
        .current_dir(tmp.path())
        .output()
        .unwrap();
    assert_eq!(env_out.status.code(), Some(1));
    assert!(stderr(&env_out).contains("MPI_THREADS"));
}

#[test]
fn help_and_usage_errors_use_conventional_codes() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(maxpi(tmp.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(maxpi(tmp.path(), &["recon-bl", "--help"]).status.code(), Some(0));
    assert_eq!(maxpi(tmp.path(), &["no-such-command"]).status.code(), Some(1));
    assert_eq!(maxpi(tmp.path(), &["build-basis", "--q"]).status.code(), Some(1));
}

#[test]
fn full_pipeline_produces_outputs_and_verifiable_manifests() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();

    let out = maxpi(
        dir,
        &["build-basis", "--dims", "16,16", "--fov-mm", "220,220", "--q", "6", "--out", "basis.mpib"],
    );
    assert_ok(&out);
    check_manifest(dir, "basis.manifest.json", "build-basis");

    let out = maxpi(dir, &["compress-basis", "--input", "basis.mpib", "--out", "tucker.mpib"]);
    assert_ok(&out);
    check_manifest(dir, "tucker.manifest.json", "compress-basis");

    let out = maxpi(
        dir,
        &["project", "--basis", "basis.mpib", "--coils", "3", "--q-list", "2,4,6", "--out", "proj.csv"],
    );
    assert_ok(&out);
    check_manifest(dir, "proj.manifest.json", "project");
    let csv = fs::read_to_string(dir.join("proj.csv")).unwrap();
    assert!(csv.starts_with("q,max_rel_error,mean_rel_error\n"));
    assert_eq!(csv.lines().count(), 4, "header + one row per q");

    let out = maxpi(
        dir,
        &[
            "simulate", "--dims", "16,16", "--fov-mm", "220,220", "--coils", "3",
            "--traj", "cartesian", "--r-phase", "2", "--acs-lines", "4", "--out", "sim.mpib",
        ],
    );
    assert_ok(&out);
    check_manifest(dir, "sim.manifest.json", "simulate");

    let out = maxpi(
        dir,
        &[
            "recon-bl", "--input", "sim.mpib", "--basis", "basis.mpib", "--outer", "4",
            "--out", "bl.mpib", "--images-dir", "imgs",
        ],
    );
    assert_ok(&out);
    check_manifest(dir, "bl.manifest.json", "recon-bl");
    assert!(dir.join("bl_coeffs.csv").exists());
    let hist = fs::read_to_string(dir.join("bl_history.csv")).unwrap();
    assert!(hist.starts_with("iter,alpha,beta,gamma,cg_iters,cg_rel_residual,residual\n"));
    assert_eq!(hist.lines().count(), 5, "header + one row per outer step");
    for f in ["density_mag.pgm", "density_phase.pgm", "sm00_mag.pgm", "sm02_phase.pgm"] {
        let img = fs::read(dir.join("imgs").join(f)).expect("image emitted");
        assert!(img.starts_with(b"P5\n16 16\n255\n"), "{f} is a 16x16 PGM");
    }

    let out = maxpi(
        dir,
        &["recon-l", "--input", "sim.mpib", "--max-iters", "25", "--out", "l.mpib"],
    );
    assert_ok(&out);
    check_manifest(dir, "l.manifest.json", "recon-l");
    let conv = fs::read_to_string(dir.join("l_convergence.csv")).unwrap();
    assert!(conv.starts_with("iter,rho,primal,dual,tv,cg_iters\n"));
    assert!(conv.lines().count() >= 2);

    let out = maxpi(
        dir,
        &[
            "metrics", "--x", "l.mpib", "--reference", "sim.mpib",
            "--maps", "bl.mpib", "--basis", "basis.mpib", "--out", "metrics.json",
        ],
    );
    assert_ok(&out);
    check_manifest(dir, "metrics.manifest.json", "metrics");
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap();
    let nrmse = m["nrmse"].as_f64().expect("nrmse");
    assert!(nrmse.is_finite() && nrmse >= 0.0);
    assert!(m["max_coil_projection_error"].as_f64().expect("projection error") <= 1.0);
}

#[test]
fn identical_invocations_write_identical_containers() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let base = [
        "simulate", "--dims", "16,16", "--fov-mm", "220,220", "--coils", "3",
        "--traj", "poisson", "--pd-r", "1.6", "--snr-db", "28", "--seed", "11",
    ];
    for out in ["a.mpib", "b.mpib"] {
        let mut args = base.to_vec();
        args.extend(["--out", out]);
        assert_ok(&maxpi(dir, &args));
    }
    let a = fs::read(dir.join("a.mpib")).unwrap();
    let b = fs::read(dir.join("b.mpib")).unwrap();
    assert_eq!(a, b, "simulation reruns are bit-identical");

    assert_ok(&maxpi(
        dir,
        &["build-basis", "--dims", "16,16", "--fov-mm", "220,220", "--q", "5", "--out", "basis.mpib"],
    ));
    for out in ["r1.mpib", "r2.mpib"] {
        assert_ok(&maxpi(
            dir,
            &[
                "recon-bl", "--input", "a.mpib", "--basis", "basis.mpib", "--outer", "3",
                "--out", out, "--coeffs", "c.csv", "--log-csv", "h.csv",
            ],
        ));
    }
    let r1 = fs::read(dir.join("r1.mpib")).unwrap();
    let r2 = fs::read(dir.join("r2.mpib")).unwrap();
    assert_eq!(r1, r2, "reconstruction reruns are bit-identical");
}
