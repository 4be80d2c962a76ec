use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn msl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_msl"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn affine_solve_exits_zero_with_tiny_residual() {
    let dir = tempfile::tempdir().unwrap();
    let o = msl(dir.path(), &["solve", "--boundary", "affine", "--out-dir", "out"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&dir.path().join("out/solve.json"));
    assert_eq!(v["format_version"], "msl-v1");
    assert_eq!(v["config"]["boundary"], "affine");
    for form in ["nondivergence", "divergence"] {
        assert!(v["sup_residual"][form].as_f64().unwrap() <= 1e-12);
    }
    assert_eq!(v["report"]["iterations"], 0);
}

#[test]
fn tiny_iteration_cap_exits_two_and_keeps_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = msl(dir.path(), &["solve", "--max-iter", "2", "--out-dir", "out"]);
    assert_eq!(code(&o), 2);
    assert!(dir.path().join("out/solution.bin").exists());
    let v = read_json(&dir.path().join("out/solve.json"));
    assert_eq!(v["report"]["converged"], false);
}

#[test]
fn certify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let o = msl(dir.path(), &["certify", "--family", "l1", "--eps", "0.01", "--out-dir", "l1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&dir.path().join("l1/certificate.json"));
    assert_eq!(v["certificate"]["verdict"], "pass");
    assert!(v["certificate"]["min_margin"].as_f64().unwrap() > 0.0);

    let o = msl(dir.path(), &["certify", "--family", "neg-sphere", "--eps", "0.01", "--out-dir", "neg"]);
    assert_eq!(code(&o), 3);

    let o = msl(dir.path(), &["certify", "--family", "l1"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&msl(dir.path(), &["solve", "--bogus"])), 1);
    assert_eq!(code(&msl(dir.path(), &["solve", "--n", "7"])), 1);
    assert_eq!(code(&msl(dir.path(), &["solve", "--boundary", "wavy"])), 1);
    assert_eq!(code(&msl(dir.path(), &["experiment", "--kind", "nothing"])), 1);
    assert_eq!(code(&msl(dir.path(), &["--help"])), 0);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.cfg"), "# flat run\nboundary = affine\nseed = 4\nout_dir = from_file\n").unwrap();
    let o = msl(dir.path(), &["solve", "--config", "run.cfg", "--seed", "9"]);
    assert_eq!(code(&o), 0);
    let v = read_json(&dir.path().join("from_file/solve.json"));
    assert_eq!(v["config"]["seed"], 9);
    assert_eq!(v["config"]["boundary"], "affine");

    fs::write(dir.path().join("bad.cfg"), "colour = blue\n").unwrap();
    assert_eq!(code(&msl(dir.path(), &["solve", "--config", "bad.cfg"])), 1);
}

#[test]
fn screen_flags_bumped_grids() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&msl(dir.path(), &["screen", "--count", "20", "--out-dir", "clean"])), 0);
    let o = msl(dir.path(), &["screen", "--count", "100", "--bump", "0.01", "--out-dir", "bumped"]);
    assert_eq!(code(&o), 3);
    let v = read_json(&dir.path().join("bumped/screen.json"));
    assert!(v["violations"].as_u64().unwrap() >= 1);
}

#[test]
fn out_of_regime_experiment_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let o = msl(
        dir.path(),
        &["experiment", "--kind", "flatness", "--jobs", "1", "--eps", "0.05", "--eps0", "0.01", "--out-dir", "oor"],
    );
    assert_eq!(code(&o), 3);
    let v = read_json(&dir.path().join("oor/experiment.json"));
    assert_eq!(v["report"]["out_of_regime"], true);
}

#[test]
fn lawson_osserman_experiment_passes() {
    let dir = tempfile::tempdir().unwrap();
    let o = msl(dir.path(), &["experiment", "--kind", "lawson-osserman", "--out-dir", "lo"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let v = read_json(&dir.path().join("lo/experiment.json"));
    let order = v["report"]["constants"]["order_0"].as_f64().unwrap();
    assert!((1.8..=2.2).contains(&order));
}

#[test]
fn validate_accepts_outputs_and_rejects_bare_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(&msl(d, &["experiment", "--kind", "flatness", "--jobs", "1", "--out-dir", "fl"])), 0);
    assert_eq!(code(&msl(d, &["solve", "--boundary", "affine", "--out-dir", "s"])), 0);
    let o = msl(d, &["validate", "fl/experiment.json", "fl/trace_0.csv", "s/solve.json", "s/solution.bin"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));

    fs::write(d.join("bare.json"), "{\"format_version\": \"msl-v1\"}").unwrap();
    fs::write(d.join("bare.csv"), "k,eps\n0,1\n").unwrap();
    fs::write(d.join("short.bin"), b"msl-v1\0\0").unwrap();
    for f in ["bare.json", "bare.csv", "short.bin"] {
        assert_eq!(code(&msl(d, &["validate", f])), 3, "{f}");
    }
    assert_eq!(code(&msl(d, &["validate", "missing.json"])), 1);
}
