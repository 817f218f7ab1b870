use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn waveinv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_waveinv")).args(args).env("WAVEINV_WORKERS", "2").output().expect("binary runs")
}

fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn manifest_digest(dir: &Path) -> String {
    let text = std::fs::read_to_string(dir.join("manifest.toml")).unwrap();
    let value: toml::Value = toml::from_str(&text).unwrap();
    value["csv_digest"].as_str().unwrap().to_string()
}

const FORWARD: &str = r#"
name = "eigenmode"
gamma0 = "all"
[grid]
dim = 1
extents = [[0.0, 1.0]]
nx = [40]
nt = 160
T = 2.0
[initial.phi]
kind = "eigenmode"
mode = [1]
[pipeline]
kind = "forward"
"#;

#[test]
fn forward_run_writes_outputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "fwd.toml", FORWARD);
    let out = dir.path().join("out");
    let o = waveinv(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["field.wfld", "energy.csv", "flux.csv", "summary.csv", "manifest.toml"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let manifest: toml::Value = toml::from_str(&std::fs::read_to_string(out.join("manifest.toml")).unwrap()).unwrap();
    assert_eq!(manifest["pipeline"].as_str(), Some("forward"));
    assert_eq!(manifest["seed"].as_integer(), Some(0));
    assert!(manifest["config_source"].as_str().unwrap().contains("eigenmode"));
}

#[test]
fn default_output_dir_sits_next_to_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "wave.toml", FORWARD);
    assert!(waveinv(&["run", cfg.to_str().unwrap()]).status.success());
    assert!(dir.path().join("wave.out").join("energy.csv").exists());
}

#[test]
fn unknown_key_is_a_config_error_with_position() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", &FORWARD.replace("nt = 160", "nt = 160\nspeed = 2"));
    let o = waveinv(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("bad.toml:9:1"), "{err}");
    assert!(err.contains("speed"), "{err}");
    // nothing was computed
    assert!(!dir.path().join("bad.out").exists());
}

#[test]
fn invalid_grid_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "cfl.toml", &FORWARD.replace("nt = 160", "nt = 20"));
    assert_eq!(waveinv(&["run", cfg.to_str().unwrap()]).status.code(), Some(1));
}

#[test]
fn blow_up_is_a_numerical_failure_with_stage() {
    let dir = tempfile::tempdir().unwrap();
    let src = FORWARD.replace("mode = [1]", "mode = [1]\namplitude = 20.0") + "[nonlinearity]\nkind = \"cubic\"\nc = -1.0\n";
    let cfg = write(dir.path(), "boom.toml", &src);
    let o = waveinv(&["run", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("forward"));
}

#[test]
fn converge_needs_two_levels_and_reports_order() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "fwd.toml", FORWARD);
    assert_eq!(waveinv(&["converge", cfg.to_str().unwrap(), "--levels", "40"]).status.code(), Some(1));
    let csv = dir.path().join("conv.csv");
    let o = waveinv(&["converge", cfg.to_str().unwrap(), "--levels", "25,50,100", "--out", csv.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(&csv).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    let order: f64 = rows[2][3].parse().unwrap();
    assert!((1.8..=2.2).contains(&order), "{order}");
}

#[test]
fn probe_delta_prints_threshold() {
    let dir = tempfile::tempdir().unwrap();
    let src = FORWARD.replace("[initial.phi]\nkind = \"eigenmode\"\nmode = [1]\n", "") + "[nonlinearity]\nkind = \"cubic\"\nc = -1.0\n";
    let cfg = write(dir.path(), "p.toml", &src);
    let o = waveinv(&["probe-delta", cfg.to_str().unwrap(), "--steps", "10"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("delta = "));
}

#[test]
fn suite_runs_each_config_into_its_own_directory() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "a.toml", FORWARD);
    write(dir.path(), "b.toml", &FORWARD.replace("mode = [1]", "mode = [2]"));
    let o = waveinv(&["suite", dir.path().to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let (a, b) = (dir.path().join("a.out"), dir.path().join("b.out"));
    assert!(a.join("manifest.toml").exists() && b.join("manifest.toml").exists());
    assert_ne!(manifest_digest(&a), manifest_digest(&b));
}

#[test]
fn suite_with_a_broken_config_runs_nothing() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "a.toml", FORWARD);
    write(dir.path(), "b.toml", "[grid]\n");
    assert_eq!(waveinv(&["suite", dir.path().to_str().unwrap()]).status.code(), Some(1));
    assert!(!dir.path().join("a.out").exists());
}

#[test]
fn seeded_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let src = FORWARD.replace("kind = \"eigenmode\"\nmode = [1]", "kind = \"random\"\nmodes = 6\namplitude = 0.5").replace("name =", "seed = 99\nname =");
    let cfg = write(dir.path(), "r.toml", &src);
    let mut digests = Vec::new();
    for run in ["one", "two"] {
        let out = dir.path().join(run);
        assert!(waveinv(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
        digests.push((manifest_digest(&out), std::fs::read(out.join("energy.csv")).unwrap()));
    }
    assert_eq!(digests[0], digests[1]);
    let other = dir.path().join("other");
    let cfg2 = write(dir.path(), "r2.toml", &src.replace("seed = 99", "seed = 100"));
    assert!(waveinv(&["run", cfg2.to_str().unwrap(), "--out", other.to_str().unwrap()]).status.success());
    assert_ne!(manifest_digest(&other), digests[0].0);
}
