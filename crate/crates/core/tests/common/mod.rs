#![allow(dead_code)]

use std::path::PathBuf;

use homecheck::appdsl::parse_apps_with;
use homecheck::{load_config, AppSpec, CapabilityCatalog, SystemConfig};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn app_source(name: &str) -> String {
    std::fs::read_to_string(fixtures().join("apps").join(format!("{name}.app"))).unwrap()
}

/// Every app in the fixture library.
pub fn library() -> Vec<AppSpec> {
    let mut paths: Vec<_> = std::fs::read_dir(fixtures().join("apps"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "app"))
        .collect();
    paths.sort();
    paths
        .iter()
        .flat_map(|p| {
            let src = std::fs::read_to_string(p).unwrap();
            parse_apps_with(&src, CapabilityCatalog::builtin())
                .unwrap_or_else(|e| panic!("{}: {e}", p.display()))
        })
        .collect()
}

pub fn config_source(name: &str) -> String {
    std::fs::read_to_string(fixtures().join("configs").join(format!("{name}.cfg"))).unwrap()
}

pub fn config(name: &str) -> SystemConfig {
    load_config(&config_source(name), &library()).unwrap_or_else(|e| panic!("{name}: {e}"))
}

pub fn config_names() -> Vec<String> {
    let mut names: Vec<String> = std::fs::read_dir(fixtures().join("configs"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "cfg"))
        .map(|p| p.file_stem().unwrap().to_string_lossy().into_owned())
        .collect();
    names.sort();
    names
}
