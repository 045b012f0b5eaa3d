//! Fixture loading shared by the benchmarks.

use std::path::PathBuf;

use homecheck::appdsl::parse_apps_with;
use homecheck::{load_config, AppSpec, CapabilityCatalog, SystemConfig};

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures")
}

pub fn library() -> Vec<AppSpec> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(fixtures().join("apps"))
        .expect("fixture apps")
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    paths
        .iter()
        .flat_map(|p| parse_apps_with(&std::fs::read_to_string(p).unwrap(), CapabilityCatalog::builtin()).unwrap())
        .collect()
}

pub fn config(name: &str) -> SystemConfig {
    let src = std::fs::read_to_string(fixtures().join(format!("configs/{name}.cfg"))).expect("fixture config");
    load_config(&src, &library()).unwrap()
}
