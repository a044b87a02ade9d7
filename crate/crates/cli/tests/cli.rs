use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use usv_doe::adaptive::GridField;
use usv_doe::experiment::{read_stamped_csv, ExperimentConfig};

fn usv_doe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_usv-doe")).args(args).output().expect("binary runs")
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

fn count_runs(dir: &Path) -> usize {
    fs::read_dir(dir.join("runs"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_str().unwrap().ends_with(".json"))
        .count()
}

#[test]
fn print_default_emits_a_loadable_config() {
    let o = usv_doe(&["--print-default"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), ExperimentConfig::default());
}

#[test]
fn wp_and_bp_persist_18_and_19_runs() {
    let dir = tempfile::tempdir().unwrap();
    let wp = dir.path().join("wp");
    let o = usv_doe(&["--out", &out_arg(&wp), "--seed", "4", "wp"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(count_runs(&wp), 18);
    assert!(wp.join("grids/wp_area_prediction.ppm").is_file());

    let bp = dir.path().join("bp");
    let o = usv_doe(&["--out", &out_arg(&bp), "--seed", "4", "--index", "hausdorff", "bp"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(count_runs(&bp), 19);
    assert!(String::from_utf8(o.stdout).unwrap().contains("step 2: 9 points"));
}

#[test]
fn simulate_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    assert!(usv_doe(&["--out", &out, "simulate", "--x1", "0", "--x2", "0"]).status.success());
    let first = fs::read(dir.path().join("runs/a0_k0.json")).unwrap();
    assert!(usv_doe(&["--out", &out, "simulate", "--x1", "0", "--x2", "0"]).status.success());
    assert_eq!(first, fs::read(dir.path().join("runs/a0_k0.json")).unwrap());
    let o = usv_doe(&["--out", &out, "indices"]);
    assert!(o.status.success());
    assert!(dir.path().join("runs/records.csv").is_file());
}

#[test]
fn grid_files_match_resolution() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(dir.path());
    let o = usv_doe(&["--out", &out, "--resolution", "30", "--basis", "linear", "ff"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let o = usv_doe(&["--out", &out, "--resolution", "30", "--basis", "linear", "grid"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("grids/ff_area_mse.csv")).unwrap();
    let (hash, body) = read_stamped_csv(&text);
    assert_eq!(hash.unwrap().len(), 64);
    let (x1, x2, v) = GridField::parse_matrix_csv(body).unwrap();
    assert_eq!((x1.len(), x2.len(), v.len()), (30, 30, 900));
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = out_arg(&dir.path().join("x"));

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "seed = \"one\"\n").unwrap();
    let o = usv_doe(&["--config", bad.to_str().unwrap(), "--out", &out, "wp"]);
    assert_eq!(o.status.code(), Some(2));

    let o = usv_doe(&["--out", &out, "simulate", "--x1", "60", "--x2", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("(60, 1)"));

    assert_eq!(usv_doe(&["--out", &out, "grid"]).status.code(), Some(2));
    assert_eq!(usv_doe(&["--out", &out, "--index", "bogus", "wp"]).status.code(), Some(2));

    let tight = dir.path().join("tight.toml");
    fs::write(&tight, "[box]\nr = 60.0\n").unwrap();
    let o = usv_doe(&["--config", tight.to_str().unwrap(), "--out", &out, "simulate", "--x1", "5", "--x2", "1"]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));

    let file = dir.path().join("plain");
    fs::write(&file, "not a directory").unwrap();
    let o = usv_doe(&["--out", file.to_str().unwrap(), "simulate", "--x1", "5", "--x2", "1"]);
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn validate_passes() {
    let o = usv_doe(&["validate"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 5);
}
