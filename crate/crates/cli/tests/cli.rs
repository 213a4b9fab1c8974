use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const MINIMAL: &str = r#"
seed = 1

[problem]
kind = "quadratic"
dim = 6
sigma = 0.5

[regularizer]
kind = "l1"
nu = 0.05

[fed]
n = 4
q = 3
rounds = 12
eta_a = 0.05
gamma = 0.3
"#;

fn fednmap(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fednmap"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p
}

fn shipped(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .display()
        .to_string()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn minimal_run_writes_one_row_per_round() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let out = dir.path().join("out");
    let o = fednmap(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("round,algo,n,Q,seed"));
    assert_eq!(lines.count(), 13);
    assert!(fs::read_to_string(out.join("curves.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn unknown_key_is_a_config_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &MINIMAL.replace("eta_a = 0.05", "etaa = 0.05"));
    let o = fednmap(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("fed.etaa"), "{}", stderr(&o));
}

#[test]
fn bad_override_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let o = fednmap(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--set",
        "fed.q=minus",
        "--quiet",
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn missing_config_file_is_a_config_error() {
    let o = fednmap(&["run", "--config", "/nonexistent/run.toml"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn record_draws_writes_one_file_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let out = dir.path().join("out");
    let o = fednmap(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--seeds",
        "3,4",
        "--set",
        "run.record_draws=true",
        "--quiet",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(out.join("draws-3.bin").exists());
    assert!(out.join("draws-4.bin").exists());
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 13);
}

#[test]
fn compare_includes_scaffold_only_without_regularizer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let run = |extra: &[&str], out: &Path| {
        let mut args = vec![
            "compare",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--quiet",
        ];
        args.extend_from_slice(extra);
        let o = fednmap(&args);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        fs::read_to_string(out.join("compare.csv")).unwrap()
    };
    let with_l1 = run(&[], &dir.path().join("a"));
    assert!(with_l1.contains(",fednmap,") && with_l1.contains(",zhang,"));
    assert!(!with_l1.contains(",scaffold,"));
    let plain = run(&["--set", "regularizer={kind=\"zero\"}"], &dir.path().join("b"));
    assert!(plain.contains(",scaffold,"), "{plain}");
    assert!(dir.path().join("b/compare.svg").exists());
}

#[test]
fn single_cell_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let text = format!("{MINIMAL}\n[sweep]\nns = [4]\nqs = [3]\nseeds = [0, 1]\n");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = fednmap(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("speedup.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.lines().nth(1).unwrap().starts_with("4,3,12,2,"));
    assert!(out.join("sweep.svg").exists());
}

#[test]
fn sweep_without_grid_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let o = fednmap(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn verify_passes_and_catches_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), MINIMAL);
    let ok = fednmap(&["verify", "--config", cfg.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stdout));
    let table = String::from_utf8_lossy(&ok.stdout);
    assert_eq!(table.matches("PASS").count(), 6, "{table}");

    let bad = fednmap(&["verify", "--config", cfg.to_str().unwrap(), "--inject-fault"]);
    assert_eq!(bad.status.code(), Some(3));
    let table = String::from_utf8_lossy(&bad.stdout);
    assert!(
        table
            .lines()
            .any(|l| l.starts_with("tracking identity") && l.contains("FAIL")),
        "{table}"
    );
}

#[test]
fn divergence_exits_with_its_own_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &MINIMAL.replace("eta_a = 0.05", "eta_a = 50.0"));
    let out = dir.path().join("out");
    let o = fednmap(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--quiet",
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.lines().last().unwrap().contains("NaN"));
}

#[test]
fn outputs_are_byte_identical_across_workers() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = shipped("quadratic.toml");
    let mut seen = Vec::new();
    for w in ["1", "3"] {
        let out = dir.path().join(w);
        let o = fednmap(&[
            "run",
            "--config",
            &cfg,
            "--out",
            out.to_str().unwrap(),
            "--workers",
            w,
            "--quiet",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        seen.push((
            fs::read(out.join("metrics.csv")).unwrap(),
            fs::read(out.join("curves.svg")).unwrap(),
        ));
    }
    assert_eq!(seen[0], seen[1]);
}

#[test]
fn mlp_config_reports_test_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = fednmap(&[
        "run",
        "--config",
        &shipped("mlp_synthetic.toml"),
        "--out",
        out.to_str().unwrap(),
        "--set",
        "fed.rounds=3",
        "--quiet",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    let last = csv.lines().last().unwrap();
    let acc: f64 = last.split(',').nth(14).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}
