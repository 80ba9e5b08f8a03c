use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{
    FlowGroup, GroupId, LinkId, Node, NodeId, NodeRole, NetworkId, NetworkKind, OverlayLink,
    PortId, Sla, TrafficClass, TransportNetwork, UnderlayPort,
};
use crate::qos::QosWeights;
use crate::sabe::{SabeConfig, SabeSettings};
use crate::sim::{CrossTrafficProfile, SimConfig, TrafficProfile};
use crate::spr::SprSettings;

const REFERENCE_SCENARIO: &str = include_str!("../../scenarios/reference.toml");

/// A violated invariant, naming the offending field.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field}: {problem}")]
pub struct ValidationError {
    pub field: String,
    pub problem: String,
}

impl ValidationError {
    fn new(field: impl Into<String>, problem: impl fmt::Display) -> Self {
        Self {
            field: field.into(),
            problem: problem.to_string(),
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse scenario: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario: {0}")]
    Invalid(#[from] ValidationError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub id: String,
    pub kind: NetworkKind,
    /// Default propagation delay of tunnels over this network.
    pub prop_delay_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: String,
    pub role: NodeRole,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortConfig {
    pub node: String,
    pub network: String,
    pub capacity_mbps: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cross_traffic: Option<CrossTrafficProfile>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub id: String,
    pub src: String,
    pub dst: String,
    pub network: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prop_delay_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowGroupConfig {
    pub id: String,
    pub src: String,
    pub dst: String,
    pub class: TrafficClass,
    /// Allowed transport networks; every network with a tunnel for the OD
    /// pair when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub networks: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sla_delay_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sla_loss: Option<f64>,
    pub traffic: TrafficProfile,
}

/// On-disk scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub seed: u64,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub sabe: SabeSettings,
    #[serde(default)]
    pub spr: SprSettings,
    #[serde(default)]
    pub qos: QosWeights,
    pub networks: Vec<NetworkConfig>,
    pub nodes: Vec<NodeConfig>,
    pub ports: Vec<PortConfig>,
    pub overlay_links: Vec<LinkConfig>,
    pub flow_groups: Vec<FlowGroupConfig>,
}

impl ScenarioFile {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes to TOML")
    }
}

/// Optimizer, estimator and simulator settings after validation.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub sim: SimConfig,
    pub sabe: SabeConfig,
    pub spr: SprSettings,
    pub qos: QosWeights,
}

/// A validated scenario. Immutable; share it freely between runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub seed: u64,
    pub networks: Vec<TransportNetwork>,
    pub nodes: Vec<Node>,
    pub ports: Vec<UnderlayPort>,
    /// Cross-traffic schedule per port, indexed by [`PortId`].
    pub cross_traffic: Vec<Option<CrossTrafficProfile>>,
    pub links: Vec<OverlayLink>,
    pub groups: Vec<FlowGroup>,
    pub settings: Settings,
    source: ScenarioFile,
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Self, ScenarioError> {
        Ok(validate_scenario(&ScenarioFile::parse(text)?)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Two hubs, eight spokes, two MPLS providers and one Internet provider.
    pub fn reference() -> Self {
        Self::parse(REFERENCE_SCENARIO).expect("reference scenario is valid")
    }

    pub fn reference_toml() -> &'static str {
        REFERENCE_SCENARIO
    }

    pub fn source(&self) -> &ScenarioFile {
        &self.source
    }

    pub fn to_toml(&self) -> String {
        self.source.to_toml()
    }

    pub fn link(&self, id: LinkId) -> &OverlayLink {
        &self.links[id.0]
    }

    pub fn group(&self, id: GroupId) -> &FlowGroup {
        &self.groups[id.0]
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn port(&self, id: PortId) -> &UnderlayPort {
        &self.ports[id.0]
    }

    pub fn link_by_name(&self, name: &str) -> Option<LinkId> {
        self.links.iter().find(|l| l.name == name).map(|l| l.id)
    }

    pub fn group_by_name(&self, name: &str) -> Option<GroupId> {
        self.groups.iter().find(|g| g.name == name).map(|g| g.id)
    }

    /// Links whose scheduler sits at `node`.
    pub fn links_from(&self, node: NodeId) -> impl Iterator<Item = &OverlayLink> {
        self.links.iter().filter(move |l| l.src == node)
    }

    /// Nodes that originate at least one overlay link, in id order.
    pub fn sending_nodes(&self) -> Vec<NodeId> {
        let set: BTreeSet<NodeId> = self.links.iter().map(|l| l.src).collect();
        set.into_iter().collect()
    }

    /// `"src>dst"` label of a group's origin-destination pair.
    pub fn od_label(&self, group: GroupId) -> String {
        let g = self.group(group);
        format!("{}>{}", self.node(g.src).name, self.node(g.dst).name)
    }
}

fn check_finite(field: &str, value: f64) -> Result<(), ValidationError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(ValidationError::new(field, "must be finite"))
    }
}

fn check_unique<'a>(
    section: &str,
    ids: impl Iterator<Item = &'a str>,
) -> Result<BTreeMap<&'a str, usize>, ValidationError> {
    let mut index = BTreeMap::new();
    for (i, id) in ids.enumerate() {
        if index.insert(id, i).is_some() {
            return Err(ValidationError::new(
                format!("{section}[{i}].id"),
                format!("duplicate id {id:?}"),
            ));
        }
    }
    Ok(index)
}

fn lookup(
    index: &BTreeMap<&str, usize>,
    field: String,
    name: &str,
    what: &str,
) -> Result<usize, ValidationError> {
    index
        .get(name)
        .copied()
        .ok_or_else(|| ValidationError::new(field, format!("unknown {what} {name:?}")))
}

/// Check every invariant of a parsed scenario and build the indexed model,
/// including the shared-bottleneck sets `F(e)`.
pub fn validate_scenario(file: &ScenarioFile) -> Result<Scenario, ValidationError> {
    let sim = file.sim.validated()?;
    let sabe = SabeConfig::from_settings(&file.sabe)?;
    file.spr.validate()?;
    file.qos.validate()?;

    let network_index = check_unique("networks", file.networks.iter().map(|n| n.id.as_str()))?;
    let mut networks = Vec::with_capacity(file.networks.len());
    for (i, n) in file.networks.iter().enumerate() {
        let field = format!("networks[{i}].prop_delay_ms");
        check_finite(&field, n.prop_delay_ms)?;
        if n.prop_delay_ms < 0.0 {
            return Err(ValidationError::new(field, "must be >= 0"));
        }
        networks.push(TransportNetwork {
            id: NetworkId(i),
            name: n.id.clone(),
            kind: n.kind,
        });
    }
    if networks.is_empty() {
        return Err(ValidationError::new("networks", "at least one network is required"));
    }

    let node_index = check_unique("nodes", file.nodes.iter().map(|n| n.id.as_str()))?;
    let nodes: Vec<Node> = file
        .nodes
        .iter()
        .enumerate()
        .map(|(i, n)| Node {
            id: NodeId(i),
            name: n.id.clone(),
            role: n.role,
        })
        .collect();
    if !nodes.iter().any(|n| n.role == NodeRole::Hub) {
        return Err(ValidationError::new("nodes", "at least one hub is required"));
    }
    if !nodes.iter().any(|n| n.role == NodeRole::Spoke) {
        return Err(ValidationError::new("nodes", "at least one spoke is required"));
    }

    let mut ports = Vec::with_capacity(file.ports.len());
    let mut cross_traffic = Vec::with_capacity(file.ports.len());
    let mut port_of: BTreeMap<(NodeId, NetworkId), PortId> = BTreeMap::new();
    for (i, p) in file.ports.iter().enumerate() {
        let node = NodeId(lookup(&node_index, format!("ports[{i}].node"), &p.node, "node")?);
        let network = NetworkId(lookup(
            &network_index,
            format!("ports[{i}].network"),
            &p.network,
            "network",
        )?);
        let field = format!("ports[{i}].capacity_mbps");
        check_finite(&field, p.capacity_mbps)?;
        if p.capacity_mbps <= 0.0 {
            return Err(ValidationError::new(field, "must be > 0"));
        }
        if port_of.insert((node, network), PortId(i)).is_some() {
            return Err(ValidationError::new(
                format!("ports[{i}]"),
                format!("second port for ({}, {})", p.node, p.network),
            ));
        }
        if let Some(xt) = &p.cross_traffic {
            xt.validate(&format!("ports[{i}].cross_traffic"))?;
        }
        ports.push(UnderlayPort {
            id: PortId(i),
            node,
            network,
            capacity_mbps: p.capacity_mbps,
        });
        cross_traffic.push(p.cross_traffic.clone());
    }

    check_unique("overlay_links", file.overlay_links.iter().map(|l| l.id.as_str()))?;
    let mut links = Vec::with_capacity(file.overlay_links.len());
    for (i, l) in file.overlay_links.iter().enumerate() {
        let src = NodeId(lookup(&node_index, format!("overlay_links[{i}].src"), &l.src, "node")?);
        let dst = NodeId(lookup(&node_index, format!("overlay_links[{i}].dst"), &l.dst, "node")?);
        if src == dst {
            return Err(ValidationError::new(
                format!("overlay_links[{i}]"),
                "source and destination must differ",
            ));
        }
        let net_idx = lookup(
            &network_index,
            format!("overlay_links[{i}].network"),
            &l.network,
            "network",
        )?;
        let network = NetworkId(net_idx);
        let port_for = |node: NodeId, end: &str, name: &str| {
            port_of.get(&(node, network)).copied().ok_or_else(|| {
                ValidationError::new(
                    format!("overlay_links[{i}].{end}"),
                    format!("node {name:?} has no port on network {:?}", l.network),
                )
            })
        };
        let src_port = port_for(src, "src", &l.src)?;
        let dst_port = port_for(dst, "dst", &l.dst)?;
        let bottleneck_port =
            if ports[src_port.0].capacity_mbps < ports[dst_port.0].capacity_mbps {
                src_port
            } else {
                dst_port
            };
        let prop_ms = l.prop_delay_ms.unwrap_or(file.networks[net_idx].prop_delay_ms);
        let field = format!("overlay_links[{i}].prop_delay_ms");
        check_finite(&field, prop_ms)?;
        if prop_ms < 0.0 {
            return Err(ValidationError::new(field, "must be >= 0"));
        }
        links.push(OverlayLink {
            id: LinkId(i),
            name: l.id.clone(),
            src,
            dst,
            network,
            nominal_capacity_mbps: ports[bottleneck_port.0].capacity_mbps,
            prop_delay: prop_ms / 1000.0,
            bottleneck_port,
            bottleneck_group: Vec::new(),
        });
    }
    let mut by_port: BTreeMap<PortId, Vec<LinkId>> = BTreeMap::new();
    for l in &links {
        by_port.entry(l.bottleneck_port).or_default().push(l.id);
    }
    for l in links.iter_mut() {
        l.bottleneck_group = by_port[&l.bottleneck_port]
            .iter()
            .copied()
            .filter(|&other| other != l.id)
            .collect();
    }

    check_unique("flow_groups", file.flow_groups.iter().map(|g| g.id.as_str()))?;
    let mut groups = Vec::with_capacity(file.flow_groups.len());
    for (i, g) in file.flow_groups.iter().enumerate() {
        let src = NodeId(lookup(&node_index, format!("flow_groups[{i}].src"), &g.src, "node")?);
        let dst = NodeId(lookup(&node_index, format!("flow_groups[{i}].dst"), &g.dst, "node")?);
        let default_sla = g.class.default_sla();
        let sla = Sla::new(
            g.sla_delay_ms.map_or(default_sla.delay, |ms| ms / 1000.0),
            g.sla_loss.unwrap_or(default_sla.loss),
        );
        if !(sla.delay.is_finite() && sla.delay > 0.0) {
            return Err(ValidationError::new(
                format!("flow_groups[{i}].sla_delay_ms"),
                "must be > 0",
            ));
        }
        if !(0.0..=1.0).contains(&sla.loss) {
            return Err(ValidationError::new(
                format!("flow_groups[{i}].sla_loss"),
                format!("must lie in [0, 1], got {}", sla.loss),
            ));
        }
        g.traffic.validate(&format!("flow_groups[{i}].traffic"))?;
        let od_links: Vec<&OverlayLink> = links
            .iter()
            .filter(|l| l.src == src && l.dst == dst)
            .collect();
        let allowed_links: Vec<LinkId> = match &g.networks {
            Some(names) => {
                let mut allowed = Vec::new();
                for (j, name) in names.iter().enumerate() {
                    let field = format!("flow_groups[{i}].networks[{j}]");
                    let net = NetworkId(lookup(&network_index, field.clone(), name, "network")?);
                    let on_net: Vec<LinkId> = od_links
                        .iter()
                        .filter(|l| l.network == net)
                        .map(|l| l.id)
                        .collect();
                    if on_net.is_empty() {
                        return Err(ValidationError::new(
                            field,
                            format!("no overlay link from {} to {} over {name:?}", g.src, g.dst),
                        ));
                    }
                    allowed.extend(on_net);
                }
                allowed.sort_unstable();
                allowed.dedup();
                allowed
            }
            None => od_links.iter().map(|l| l.id).collect(),
        };
        if allowed_links.is_empty() {
            return Err(ValidationError::new(
                format!("flow_groups[{i}]"),
                format!("no overlay link from {} to {}", g.src, g.dst),
            ));
        }
        groups.push(FlowGroup {
            id: GroupId(i),
            name: g.id.clone(),
            src,
            dst,
            class: g.class,
            sla,
            allowed_links,
            traffic: g.traffic.clone(),
        });
    }
    if groups.is_empty() {
        return Err(ValidationError::new("flow_groups", "at least one flow group is required"));
    }

    Ok(Scenario {
        seed: file.seed,
        networks,
        nodes,
        ports,
        cross_traffic,
        links,
        groups,
        settings: Settings {
            sim,
            sabe,
            spr: file.spr.clone(),
            qos: file.qos.clone(),
        },
        source: file.clone(),
    })
}
