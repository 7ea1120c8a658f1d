//! Shared helpers for scenario-driven integration tests.
//!
//! Compiled into several test targets; not every target uses every helper.
#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::Command;

#[derive(Debug, Clone)]
pub struct ScenarioMeta {
    pub name: String,
    pub dispatcher: String,
    pub mode: String,
    pub expected_calls: u64,
    pub expected_vulnerable: bool,
    pub expected_cwes: Vec<String>,
}

pub fn fixtures_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn scenario_dirs() -> Vec<PathBuf> {
    let root = fixtures_root().join("scenarios");
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&root)
        .unwrap_or_else(|e| panic!("scenario fixtures at {}: {e}", root.display()))
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    assert!(!dirs.is_empty(), "no scenarios found under {}", root.display());
    dirs
}

pub fn load_meta(dir: &Path) -> ScenarioMeta {
    let text = std::fs::read_to_string(dir.join("scenario.json"))
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()));
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    ScenarioMeta {
        name: v["name"].as_str().unwrap().to_string(),
        dispatcher: v["dispatcher"].as_str().unwrap().to_string(),
        mode: v["mode"].as_str().unwrap().to_string(),
        expected_calls: v["expected_calls"].as_u64().unwrap(),
        expected_vulnerable: v["expected_vulnerable"].as_bool().unwrap(),
        expected_cwes: v["expected_cwes"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c.as_str().unwrap().to_string())
            .collect(),
    }
}

pub fn sample_id(dir: &Path) -> String {
    let text = std::fs::read_to_string(dir.join("sample.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    v["id"].as_str().unwrap().to_string()
}

/// Run `vulscout detect` for one scenario into `out`; panics on failure.
pub fn run_scenario(dir: &Path, out: &Path) {
    let meta = load_meta(dir);
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_vulscout"));
    cmd.arg("detect")
        .arg(dir.join("sample.json"))
        .arg("--backend")
        .arg("mock")
        .arg("--mock-script")
        .arg(dir.join("script.json"))
        .arg("--dispatcher")
        .arg(&meta.dispatcher)
        .arg("--mode")
        .arg(&meta.mode)
        .arg("--workers")
        .arg("1")
        .arg("--out")
        .arg(out);
    if dir.join("context.json").exists() {
        cmd.arg("--context").arg(dir.join("context.json"));
    }
    let status = cmd.status().expect("binary runs");
    assert!(
        status.success(),
        "scenario {} exited with {status:?}",
        meta.name
    );
}

pub fn read_manifest(out: &Path) -> serde_json::Value {
    let text = std::fs::read_to_string(out.join("manifest.run")).unwrap();
    serde_json::from_str(&text).unwrap()
}

pub fn report_path(out: &Path, sample: &str) -> PathBuf {
    out.join("reports").join(format!("{sample}.report"))
}
