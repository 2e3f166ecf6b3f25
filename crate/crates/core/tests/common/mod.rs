#![allow(dead_code)]

pub mod criteria;
pub mod fd;

use std::path::PathBuf;

use xconv::config::RunConfig;

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Every shipped model-zoo configuration, by file stem.
pub fn shipped_configs() -> Vec<(String, RunConfig)> {
    let mut out: Vec<(String, RunConfig)> = std::fs::read_dir(configs_dir())
        .expect("configs directory")
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            let cfg = RunConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            (name, cfg)
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

pub fn shipped(name: &str) -> RunConfig {
    let mut cfg = RunConfig::load(&configs_dir().join(format!("{name}.toml"))).expect("shipped config");
    cfg.paths = Default::default();
    cfg
}
