use std::path::{Path, PathBuf};

use waveinv::config::{LoadedConfig, PipelineSpec};
use waveinv::pipelines::run_experiment;

fn shipped() -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).filter(|p| p.extension().is_some_and(|x| x == "toml")).collect();
    v.sort();
    v
}

#[test]
fn every_shipped_config_parses() {
    let all = shipped();
    assert!(all.len() >= 10);
    for p in all {
        LoadedConfig::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
}

#[test]
fn shipped_experiments_meet_their_targets() {
    let out = tempfile::tempdir().unwrap();
    for p in shipped() {
        let loaded = LoadedConfig::read(&p).unwrap();
        if matches!(loaded.config.pipeline, PipelineSpec::Suite { .. }) {
            continue;
        }
        let stem = p.file_stem().unwrap().to_string_lossy().to_string();
        let s = run_experiment(&loaded, &out.path().join(&stem)).unwrap_or_else(|e| panic!("{stem}: {e}"));
        let m = |k: &str| *s.metrics.get(k).unwrap_or_else(|| panic!("{stem}: no metric {k} in {:?}", s.metrics.keys()));
        match stem.as_str() {
            "forward_eigenmode" => assert!(m("wave_energy_drift") < 1e-2),
            "control_hum" => assert!(m("terminal_error") < 1e-4 * m("initial_energy")),
            "runge" => assert!(m("rel_error_32") < 0.05),
            "cgo_ladder" => assert_eq!(m("decreasing"), 1.0),
            "recover_q" | "recover_taylor" => assert!(m("rel_l2_error") < 0.1, "{stem}"),
            "passive_linear" | "active_spliced" => assert!(m("phi_rel_l2_error") < 0.05, "{stem}"),
            "simultaneous" => assert!(m("q_rel_l2_error") < 0.2 && m("phi_rel_l2_error") < 0.1),
            "nonuniqueness" => assert!(m("flux_norm_1").max(m("flux_norm_2")) < 1e-10 && m("initial_distance") > 0.1),
            other => panic!("no target for {other}"),
        }
    }
}

#[test]
fn suite_pipeline_subset_writes_table() {
    let src = "[grid]\ndim = 1\nextents = [[0.0, 1.0]]\nnx = [10]\nnt = 20\nT = 1.0\n[pipeline]\nkind = \"suite\"\nonly = [1, 4]\n";
    let loaded = LoadedConfig::from_source(src.into(), Path::new("mini.toml")).unwrap();
    let out = tempfile::tempdir().unwrap();
    let s = run_experiment(&loaded, out.path()).unwrap();
    assert_eq!(s.passed, Some(true));
    let table = std::fs::read_to_string(out.path().join("suite.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
    let bad = LoadedConfig::from_source(src.replace("[1, 4]", "[18]"), Path::new("mini.toml")).unwrap();
    assert!(run_experiment(&bad, out.path()).is_err());
}
