use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use sha2::{Digest, Sha256};

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rg-lattice")).args(args).output().expect("spawn rg-lattice")
}

fn metadata(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("metadata.json")).unwrap()).unwrap()
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn list_names_every_experiment() {
    let out = cli(&["list", "--json"]);
    assert!(out.status.success());
    let listing: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(listing.as_array().unwrap().len(), 12);
    let filtered: Value = serde_json::from_slice(&cli(&["list", "--json", "--module", "cascade_stats"]).stdout).unwrap();
    assert_eq!(filtered[0]["name"], "app_structure_functions");
}

#[test]
fn metadata_checksums_match_written_files() {
    let dir = tempfile::tempdir().unwrap();
    let out = cli(&["run", "thm2_verify", "--out", dir.path().to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let meta = metadata(dir.path());
    assert_eq!(meta["experiment"], "thm2_verify");
    assert_eq!(meta["seed"], rg_lattice::registry::DEFAULT_SEED);
    for f in meta["files"].as_array().unwrap() {
        let bytes = fs::read(dir.path().join(f["name"].as_str().unwrap())).unwrap();
        assert_eq!(f["sha256"].as_str().unwrap(), format!("{:x}", Sha256::digest(&bytes)));
        assert_eq!(f["bytes"].as_u64().unwrap() as usize, bytes.len());
    }
    assert!(meta["ledger"]["worst_relative_residual_per_unit_time"].as_f64().unwrap() <= 1e-12);
}

#[test]
fn reruns_are_byte_identical_across_thread_counts() {
    let config = tempfile::NamedTempFile::new().unwrap();
    fs::write(config.path(), "[sampling]\nsamples = 400\n\n[regularization]\nn_first = 8\nn_last = 10\n").unwrap();
    let run = |threads: &str| {
        let dir = tempfile::tempdir().unwrap();
        let out = cli(&[
            "run",
            "fig9_pdfs",
            "--config",
            config.path().to_str().unwrap(),
            "--threads",
            threads,
            "--seed",
            "7",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(metadata(dir.path())["config"]["sampling"]["samples"], 400);
        csv_files(dir.path())
    };
    let one = run("1");
    assert!(one.iter().any(|(name, _)| name == "samples_N10_mu_tilde.csv"));
    assert_eq!(one, run("4"));
}

#[test]
fn non_empty_output_is_refused_without_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("keep.txt"), "x").unwrap();
    let d = dir.path().to_str().unwrap();
    let out = cli(&["run", "thm1_verify", "--out", d]);
    assert_eq!(out.status.code(), Some(4));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "overwrite_refused");
    assert!(cli(&["run", "thm1_verify", "--out", d, "--overwrite"]).status.success());
}

#[test]
fn configuration_errors_exit_with_code_two() {
    assert_eq!(cli(&["run", "fig99", "--out", "unused"]).status.code(), Some(2));
    let config = tempfile::NamedTempFile::new().unwrap();
    fs::write(config.path(), "[regularization]\nalphas = [1.5]\n").unwrap();
    let out = cli(&["run", "thm1_verify", "--config", config.path().to_str().unwrap(), "--out", "unused"]);
    assert_eq!(out.status.code(), Some(2));
    fs::write(config.path(), "[analysis]\nunknown_knob = 1\n").unwrap();
    let out = cli(&["run", "thm1_verify", "--config", config.path().to_str().unwrap(), "--out", "unused"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn out_directory_defaults_to_environment_root() {
    let root = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_rg-lattice"))
        .args(["run", "thm1_verify"])
        .env("RG_LATTICE_OUT", root.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(root.path().join("thm1_verify").join("deviations.csv").exists());
}

#[test]
fn verify_passes_and_simulate_reports_the_ledger() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert!(cli(&["verify", "--out", d]).status.success());
    let sim = dir.path().join("sim");
    let out = cli(&[
        "simulate", "--family", "fb", "--viscous-scale", "8", "--forcing", "--t-end", "3", "--probes", "0,2",
        "--json", "--out", sim.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(doc["report"]["injected"], 3.0);
    assert!(doc["report"]["relative_residual_per_unit_time"].as_f64().unwrap() <= 1e-12);
    let probe = fs::read_to_string(sim.join("probe_u2.csv")).unwrap();
    assert_eq!(probe.lines().count(), 1 + 3 * 4 + 1);
}
