//! Reference implementations shared by the test targets.
#![allow(dead_code)]

pub mod atomic;
pub mod oracle;

use std::sync::Arc;

use qkdsim::Topology;

pub const TOPOLOGY: &str = include_str!("../../configs/topology.json");
pub const TOPOLOGY_LINK2_FIRST: &str = include_str!("../../configs/topology-link2-first.json");

pub fn topology() -> Arc<Topology> {
    Arc::new(Topology::from_json(TOPOLOGY).expect("bundled topology"))
}

pub fn config(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}
