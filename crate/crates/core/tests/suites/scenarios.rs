//! Access to the scenario files shipped at the repository root.

use std::path::PathBuf;

use p2plbs_core::harness::ScenarioConfig;

pub fn path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(format!("{name}.toml"))
}

pub fn load(name: &str) -> ScenarioConfig {
    ScenarioConfig::load(&path(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}
