use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cfe_patchmatch::io;
use cfe_patchmatch::synth::value_noise;
use cfe_patchmatch::tensor::bicubic_resize;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let hr = value_noise(1, 64, 64, 8, 3);
        io::write_image(&dir.path().join("hr.pgm"), &hr).unwrap();
        io::write_image(&dir.path().join("lr.pgm"), &bicubic_resize(&hr, 16, 16).unwrap()).unwrap();
        io::write_image(&dir.path().join("ref.pgm"), &value_noise(1, 80, 80, 8, 4)).unwrap();
        io::write_image(&dir.path().join("tiny.pgm"), &value_noise(1, 4, 4, 2, 5)).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn run(&self, args: &[&str]) -> Output {
        Command::new(env!("CARGO_BIN_EXE_cfepm")).current_dir(self.dir.path()).args(args).output().unwrap()
    }

    fn ok(&self, args: &[&str]) -> String {
        let out = self.run(args);
        assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
        String::from_utf8(out.stdout).unwrap()
    }
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const INPUTS: [&str; 4] = ["--lr", "lr.pgm", "--ref", "ref.pgm"];

#[test]
fn match_writes_fields_and_summary() {
    let f = Fixture::new();
    let args = [&["match"][..], &INPUTS, &["--n", "3", "--out", "m", "--dump-levels"]].concat();
    let stdout = f.ok(&args);
    assert_eq!(stdout.lines().count(), 3);
    let summary = json(&f.path("m/summary.json"));
    let scales = summary["scales"].as_array().unwrap();
    assert_eq!(scales.len(), 3);
    for (i, s) in scales.iter().enumerate() {
        let nnf = io::read_nnf(&f.path(&format!("m/nnf_scale{i}.nnf"))).unwrap();
        assert_eq!(nnf.dims(), (64, 64));
        assert!((s["mean_relevance"].as_f64().unwrap() - nnf.relevance.mean()).abs() < 1e-6);
        for l in 0..4 {
            assert!(f.path(&format!("m/nnf_scale{i}_level{l}.nnf")).exists());
        }
    }
    let ref_sides: Vec<u64> = scales.iter().map(|s| s["ref_height"].as_u64().unwrap()).collect();
    assert_eq!(ref_sides, [80, 64, 51]);
}

#[test]
fn config_file_with_flag_override() {
    let f = Fixture::new();
    fs::write(
        f.path("run.toml"),
        "lr_path = \"lr.pgm\"\nref_path = \"ref.pgm\"\nn = 2\nrng_seed = 3\n[descriptor]\npatch_size = 5\n",
    )
    .unwrap();
    f.ok(&["match", "--config", "run.toml", "--out", "a"]);
    assert!(f.path("a/nnf_scale1.nnf").exists());
    assert!(!f.path("a/nnf_scale2.nnf").exists());
    assert_eq!(json(&f.path("a/summary.json"))["descriptor_channels"], 25);

    f.ok(&["match", "--config", "run.toml", "--n", "3", "--patch-size", "3", "--out", "b"]);
    assert!(f.path("b/nnf_scale2.nnf").exists());
    assert_eq!(json(&f.path("b/summary.json"))["descriptor_channels"], 9);
}

#[test]
fn transfer_from_match_dir_equals_fresh_transfer() {
    let f = Fixture::new();
    let m = [&["match"][..], &INPUTS, &["--n", "2", "--out", "m"]].concat();
    f.ok(&m);
    let fresh = [&["transfer"][..], &INPUTS, &["--n", "2", "--out", "fresh.pgm", "--hr", "hr.pgm"]].concat();
    let stdout = f.ok(&fresh);
    assert!(stdout.starts_with("PSNR transfer"));
    let reused = [&["transfer"][..], &INPUTS, &["--n", "2", "--out", "reused.pgm", "--nnf", "m"]].concat();
    f.ok(&reused);
    assert_eq!(fs::read(f.path("fresh.pgm")).unwrap(), fs::read(f.path("reused.pgm")).unwrap());
    let img = io::read_image(&f.path("fresh.pgm")).unwrap();
    assert_eq!((img.channels(), img.height(), img.width()), (1, 64, 64));
    let report = json(&f.path("fresh.pgm.json"));
    assert!(report["psnr_transfer"].as_f64().unwrap() > 0.0);
}

#[test]
fn convergence_csv_has_one_row_per_snapshot() {
    let f = Fixture::new();
    let args = [&["convergence"][..], &INPUTS, &["--out", "c"]].concat();
    let stdout = f.ok(&args);
    assert!(stdout.starts_with("evals to MSE <= 0.01"));
    let summary = json(&f.path("c/convergence.json"));
    for (file, key) in [("c/single_scale.csv", "single_scale"), ("c/cfe.csv", "cfe")] {
        let csv = fs::read_to_string(f.path(file)).unwrap();
        let rows: Vec<&str> = csv.lines().collect();
        assert_eq!(rows[0], "evals,mse");
        assert_eq!(rows.len() as u64, 1 + summary[key]["snapshots"].as_u64().unwrap());
    }
    assert_eq!(summary["single_scale"]["snapshots"], 1 + 10 * 3);
    assert_eq!(summary["cfe"]["snapshots"], 1 + 6 * 3);
}

#[test]
fn bench_prints_counts_and_ratio() {
    let f = Fixture::new();
    let stdout = f.ok(&["bench", "--sizes", "64", "--out", "b"]);
    assert!(stdout.contains("64x64: enumerated / cfe = 11.93"), "{stdout}");
    let csv = fs::read_to_string(f.path("b/bench.csv")).unwrap();
    assert!(csv.contains("64,enumerated,16777216,16777216,0"));
    assert!(csv.contains("64,single-scale,2211840,2211840,4096"));
}

#[test]
fn oracle_scores_a_match_dir() {
    let f = Fixture::new();
    f.ok(&[&["match"][..], &INPUTS, &["--n", "2", "--out", "m"]].concat());
    f.ok(&[&["oracle"][..], &INPUTS, &["--n", "2", "--out", "o", "--compare", "m"]].concat());
    let scales = json(&f.path("o/oracle.json"));
    for (s, side) in scales.as_array().unwrap().iter().zip([80u64, 64]) {
        assert_eq!(s["evals"], 64 * 64 * side * side);
        assert!(s["mse"].as_f64().unwrap() >= 0.0);
        assert!(s["max_gap"].as_f64().unwrap() >= s["mean_gap"].as_f64().unwrap());
    }
    let oracle = io::read_nnf(&f.path("o/oracle_scale0.nnf")).unwrap();
    let matched = io::read_nnf(&f.path("m/nnf_scale0.nnf")).unwrap();
    assert!(oracle.relevance.values().iter().zip(matched.relevance.values()).all(|(a, b)| a >= b));
}

#[test]
fn failures_exit_nonzero_with_a_message() {
    let f = Fixture::new();
    let cases: Vec<Vec<&str>> = vec![
        vec!["match", "--lr", "missing.pgm", "--ref", "ref.pgm", "--out", "x"],
        vec!["match", "--lr", "tiny.pgm", "--ref", "tiny.pgm", "--scale", "1", "--out", "x"],
        vec!["match", "--lr", "lr.pgm", "--ref", "ref.pgm", "--k", "1.5", "--out", "x"],
        vec!["match", "--lr", "lr.pgm", "--ref", "ref.pgm"],
        vec!["match", "--config", "bad.toml", "--out", "x"],
        vec!["transfer", "--lr", "lr.pgm", "--ref", "ref.pgm", "--nnf", "nowhere", "--out", "x.pgm"],
    ];
    fs::write(f.path("bad.toml"), "bogus = 1\n").unwrap();
    for args in cases {
        let out = f.run(&args);
        assert_eq!(out.status.code(), Some(1), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "), "{args:?}");
    }
}
