use std::path::PathBuf;

use meshprobe_core::Scenario;

pub fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios")).join(format!("{name}.json"))
}

pub fn shipped(name: &str) -> Scenario {
    Scenario::load(scenario_path(name)).unwrap()
}
