//! Network description: switches, the parallel quantum links, and the ordered
//! list of pre-computed secure paths between the two QKD units.
//!
//! A path is an ordered list of cross-connects. The first one takes light in
//! on the Alice QKD port, the last one delivers it out on the Bob QKD port,
//! and consecutive cross-connects sit on different switches joined by the
//! path's link. Path order in the file is the order in which the monitor
//! falls back to them.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{LinkId, PathId, PortId, SwitchId};
use crate::physics::{calibrate, CalibrationAnchors, ChannelParams, PhysicsError};

/// Committed cross-connects of one switch, `in_port → out_port`.
pub type CrossConnectTable = BTreeMap<PortId, PortId>;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot parse topology: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid topology: {0}")]
    Invalid(String),
    #[error("link {link}: {source}")]
    Channel { link: LinkId, source: PhysicsError },
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, TopologyError> {
    Err(TopologyError::Invalid(msg.into()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchSpec {
    pub id: SwitchId,
    pub ports: u32,
}

/// A `(switch, port)` pair, serialized as `[switch, port]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Endpoint(pub SwitchId, pub PortId);

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CrossConnect {
    pub switch: SwitchId,
    pub in_port: PortId,
    pub out_port: PortId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkKind {
    Coupler,
    Mcf,
    Multihop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub id: LinkId,
    pub kind: LinkKind,
    pub hop_count: u32,
    pub channel: ChannelParams,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PathSpec {
    pub id: PathId,
    pub link: LinkId,
    pub cross_connects: Vec<CrossConnect>,
}

/// A validated topology. Construct with [`load_topology`] or
/// [`Topology::from_json`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Topology {
    pub switches: Vec<SwitchSpec>,
    pub alice_port: Endpoint,
    pub bob_port: Endpoint,
    pub links: Vec<LinkSpec>,
    pub paths: Vec<PathSpec>,
}

// On-disk form: a link's channel is either explicit parameters or anchors to
// calibrate from.
#[derive(Deserialize)]
struct RawTopology {
    switches: Vec<SwitchSpec>,
    alice_port: Endpoint,
    bob_port: Endpoint,
    links: Vec<RawLink>,
    paths: Vec<PathSpec>,
}

#[derive(Deserialize)]
struct RawLink {
    id: LinkId,
    kind: LinkKind,
    hop_count: u32,
    channel: RawChannel,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawChannel {
    Calibrate { calibrate: CalibrationAnchors },
    Params(ChannelParams),
}

pub fn load_topology(file_path: impl AsRef<Path>) -> Result<Topology, TopologyError> {
    let path = file_path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TopologyError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Topology::from_json(&text)
}

impl Topology {
    pub fn from_json(text: &str) -> Result<Self, TopologyError> {
        let raw: RawTopology = serde_json::from_str(text)?;
        let mut links = Vec::with_capacity(raw.links.len());
        for link in raw.links {
            let channel = match link.channel {
                RawChannel::Params(p) => p,
                RawChannel::Calibrate { calibrate: anchors } => {
                    calibrate(&anchors).map_err(|source| TopologyError::Channel {
                        link: link.id.clone(),
                        source,
                    })?
                }
            };
            links.push(LinkSpec {
                id: link.id,
                kind: link.kind,
                hop_count: link.hop_count,
                channel,
            });
        }
        let topology = Topology {
            switches: raw.switches,
            alice_port: raw.alice_port,
            bob_port: raw.bob_port,
            links,
            paths: raw.paths,
        };
        topology.validate()?;
        Ok(topology)
    }

    /// Checks every invariant and reports the first violation.
    pub fn validate(&self) -> Result<(), TopologyError> {
        let mut port_counts = BTreeMap::new();
        for sw in &self.switches {
            if sw.ports == 0 {
                return invalid(format!("switch {} has no ports", sw.id));
            }
            if port_counts.insert(sw.id.clone(), sw.ports).is_some() {
                return invalid(format!("duplicate switch id {}", sw.id));
            }
        }
        let port_exists = |sw: &SwitchId, port: PortId| {
            port_counts
                .get(sw)
                .is_some_and(|&n| port >= 1 && port <= n)
        };
        for (name, ep) in [("alice_port", &self.alice_port), ("bob_port", &self.bob_port)] {
            if !port_exists(&ep.0, ep.1) {
                return invalid(format!("{name} [{}, {}] does not exist", ep.0, ep.1));
            }
        }
        if self.alice_port == self.bob_port {
            return invalid("alice_port and bob_port coincide");
        }

        let mut link_ids = BTreeSet::new();
        for link in &self.links {
            if !link_ids.insert(&link.id) {
                return invalid(format!("duplicate link id {}", link.id));
            }
            let hops_ok = match link.kind {
                LinkKind::Multihop => link.hop_count >= 2,
                LinkKind::Coupler | LinkKind::Mcf => link.hop_count == 1,
            };
            if !hops_ok {
                return invalid(format!(
                    "link {} of kind {:?} cannot have hop_count {}",
                    link.id, link.kind, link.hop_count
                ));
            }
            link.channel
                .validate()
                .map_err(|source| TopologyError::Channel {
                    link: link.id.clone(),
                    source,
                })?;
        }

        if self.paths.is_empty() {
            return invalid("topology has no paths");
        }
        let endpoints: HashSet<(&SwitchId, PortId)> = [
            (&self.alice_port.0, self.alice_port.1),
            (&self.bob_port.0, self.bob_port.1),
        ]
        .into_iter()
        .collect();
        let mut path_ids = BTreeSet::new();
        let mut port_owner: BTreeMap<(&SwitchId, PortId), &PathId> = BTreeMap::new();
        for path in &self.paths {
            if !path_ids.insert(&path.id) {
                return invalid(format!("duplicate path id {}", path.id));
            }
            if !link_ids.contains(&path.link) {
                return invalid(format!("path {} references unknown link {}", path.id, path.link));
            }
            let (Some(first), Some(last)) = (path.cross_connects.first(), path.cross_connects.last())
            else {
                return invalid(format!("path {} has no cross-connects", path.id));
            };
            for xc in &path.cross_connects {
                if !port_counts.contains_key(&xc.switch) {
                    return invalid(format!(
                        "path {} references unknown switch {}",
                        path.id, xc.switch
                    ));
                }
                for port in [xc.in_port, xc.out_port] {
                    if !port_exists(&xc.switch, port) {
                        return invalid(format!(
                            "path {} references missing port {} on switch {}",
                            path.id, port, xc.switch
                        ));
                    }
                }
                if xc.in_port == xc.out_port {
                    return invalid(format!(
                        "path {} connects port {} on switch {} to itself",
                        path.id, xc.in_port, xc.switch
                    ));
                }
            }
            if first.switch != self.alice_port.0 || first.in_port != self.alice_port.1 {
                return invalid(format!("path {} does not start at alice_port", path.id));
            }
            if last.switch != self.bob_port.0 || last.out_port != self.bob_port.1 {
                return invalid(format!("path {} does not end at bob_port", path.id));
            }
            let mut visited = BTreeSet::new();
            for xc in &path.cross_connects {
                if !visited.insert(&xc.switch) {
                    return invalid(format!(
                        "path {} crosses switch {} more than once",
                        path.id, xc.switch
                    ));
                }
            }
            // Paths are physically parallel: apart from the QKD unit ports
            // every port belongs to at most one path.
            for xc in &path.cross_connects {
                for port in [xc.in_port, xc.out_port] {
                    let key = (&xc.switch, port);
                    if endpoints.contains(&key) {
                        continue;
                    }
                    if let Some(other) = port_owner.insert(key, &path.id) {
                        if other != &path.id {
                            return invalid(format!(
                                "paths {} and {} share port {} on switch {}",
                                other, path.id, port, xc.switch
                            ));
                        }
                    }
                }
            }
        }

        let kind_of = |path: &PathSpec| self.link(path.link.as_str()).map(|l| l.kind);
        let longest_single = self
            .paths
            .iter()
            .filter(|p| kind_of(p) != Some(LinkKind::Multihop))
            .map(|p| p.cross_connects.len())
            .max();
        if let Some(longest_single) = longest_single {
            for p in self.paths.iter().filter(|p| kind_of(p) == Some(LinkKind::Multihop)) {
                if p.cross_connects.len() <= longest_single {
                    return invalid(format!(
                        "multihop path {} needs more cross-connects than single-hop paths",
                        p.id
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn switch(&self, id: &str) -> Option<&SwitchSpec> {
        self.switches.iter().find(|s| s.id == id)
    }

    pub fn link(&self, id: &str) -> Option<&LinkSpec> {
        self.links.iter().find(|l| l.id == id)
    }

    pub fn path(&self, id: &str) -> Option<&PathSpec> {
        self.paths.iter().find(|p| p.id == id)
    }

    /// Link carrying the given path.
    pub fn link_of_path(&self, path_id: &str) -> Option<&LinkSpec> {
        self.path(path_id).and_then(|p| self.link(p.link.as_str()))
    }

    pub fn path_ids(&self) -> Vec<PathId> {
        self.paths.iter().map(|p| p.id.clone()).collect()
    }

    /// The switch holding the Alice QKD port. Reconfigurations commit it last.
    pub fn alice_switch(&self) -> &SwitchId {
        &self.alice_port.0
    }
}

/// Returns the single path whose whole circuit is installed, if any.
///
/// A path resolves only when every one of its cross-connects is present in
/// its switch's table and the circuit runs without a gap from the Alice QKD
/// port to the Bob QKD port. A partially installed circuit never resolves.
/// Missing switches are treated as empty.
pub fn resolve_active_path(
    topology: &Topology,
    switch_states: &BTreeMap<SwitchId, CrossConnectTable>,
) -> Option<PathId> {
    let mut found = None;
    for path in &topology.paths {
        if circuit_complete(topology, path, switch_states) {
            if found.is_some() {
                return None;
            }
            found = Some(path.id.clone());
        }
    }
    found
}

fn circuit_complete(
    topology: &Topology,
    path: &PathSpec,
    switch_states: &BTreeMap<SwitchId, CrossConnectTable>,
) -> bool {
    let mut at = (&topology.alice_port.0, topology.alice_port.1);
    for (i, xc) in path.cross_connects.iter().enumerate() {
        if i == 0 && (&xc.switch, xc.in_port) != at {
            return false;
        }
        let installed = switch_states
            .get(&xc.switch)
            .and_then(|t| t.get(&xc.in_port))
            .is_some_and(|&out| out == xc.out_port);
        if !installed {
            return false;
        }
        at = (&xc.switch, xc.out_port);
    }
    at == (&topology.bob_port.0, topology.bob_port.1)
}
