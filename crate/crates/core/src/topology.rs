//! Router association graph, best-signal routing and formation diagnosis.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{FloorPlan, Point2D};
use crate::radio::{self, LinkQuality, RadioParams};

pub type NodeId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeRole {
    /// The router the CPE device attaches to.
    DeviceSide,
    Relay,
    Gateway,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshNode {
    pub id: NodeId,
    pub position: Point2D,
    pub role: NodeRole,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Edge {
    pub a: NodeId,
    pub b: NodeId,
    pub quality: LinkQuality,
}

/// Usable links between routers. Pairs that failed the usability test are
/// kept in `rejected` so diagnosis can report them.
#[derive(Debug, Clone, PartialEq)]
pub struct MeshGraph {
    pub nodes: Vec<MeshNode>,
    edges: BTreeMap<(NodeId, NodeId), LinkQuality>,
    rejected: BTreeMap<(NodeId, NodeId), LinkQuality>,
}

fn key(a: NodeId, b: NodeId) -> (NodeId, NodeId) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TopologyError {
    #[error("node {0} is not in the graph")]
    UnknownNode(NodeId),
    #[error("duplicate node id {0}")]
    DuplicateNode(NodeId),
    #[error("self-edge on node {0}")]
    SelfEdge(NodeId),
    #[error("nodes {a} and {b} share a position")]
    CoincidentNodes { a: NodeId, b: NodeId },
    #[error("no usable path from {src} to {dst}; reachable from {src}: {reachable:?}")]
    FormationFailure {
        src: NodeId,
        dst: NodeId,
        reachable: BTreeSet<NodeId>,
    },
}

impl MeshGraph {
    /// Graph from explicit link qualities; unusable links go to `rejected`.
    pub fn from_links(
        nodes: Vec<MeshNode>,
        links: impl IntoIterator<Item = (NodeId, NodeId, LinkQuality)>,
    ) -> Result<Self, TopologyError> {
        let mut ids = BTreeSet::new();
        for n in &nodes {
            if !ids.insert(n.id) {
                return Err(TopologyError::DuplicateNode(n.id));
            }
        }
        let mut edges = BTreeMap::new();
        let mut rejected = BTreeMap::new();
        for (a, b, q) in links {
            if a == b {
                return Err(TopologyError::SelfEdge(a));
            }
            for id in [a, b] {
                if !ids.contains(&id) {
                    return Err(TopologyError::UnknownNode(id));
                }
            }
            if q.usable {
                edges.insert(key(a, b), q);
            } else {
                rejected.insert(key(a, b), q);
            }
        }
        Ok(Self {
            nodes,
            edges,
            rejected,
        })
    }

    pub fn node(&self, id: NodeId) -> Option<&MeshNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn edge(&self, a: NodeId, b: NodeId) -> Option<&LinkQuality> {
        self.edges.get(&key(a, b))
    }

    /// Quality of any evaluated pair, usable or not.
    pub fn link(&self, a: NodeId, b: NodeId) -> Option<&LinkQuality> {
        self.edges.get(&key(a, b)).or_else(|| self.rejected.get(&key(a, b)))
    }

    pub fn edges(&self) -> impl Iterator<Item = Edge> + '_ {
        self.edges.iter().map(|(&(a, b), q)| Edge { a, b, quality: *q })
    }

    pub fn rejected(&self) -> impl Iterator<Item = Edge> + '_ {
        self.rejected.iter().map(|(&(a, b), q)| Edge { a, b, quality: *q })
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn remove_edge(&mut self, a: NodeId, b: NodeId) -> Option<LinkQuality> {
        self.edges.remove(&key(a, b))
    }

    /// Apply `f` to every usable edge cost.
    pub fn map_costs(&mut self, mut f: impl FnMut(f64) -> f64) {
        for q in self.edges.values_mut() {
            q.attenuation = f(q.attenuation);
        }
    }

    pub fn neighbors(&self, id: NodeId) -> impl Iterator<Item = (NodeId, &LinkQuality)> + '_ {
        self.edges.iter().filter_map(move |(&(a, b), q)| {
            if a == id {
                Some((b, q))
            } else if b == id {
                Some((a, q))
            } else {
                None
            }
        })
    }

    pub fn gateway(&self) -> Option<&MeshNode> {
        self.nodes.iter().find(|n| n.role == NodeRole::Gateway)
    }

    /// The device-side router; a lone gateway plays both roles.
    pub fn device_side(&self) -> Option<&MeshNode> {
        self.nodes
            .iter()
            .find(|n| n.role == NodeRole::DeviceSide)
            .or_else(|| if self.nodes.len() == 1 { self.nodes.first() } else { None })
    }

    fn reachable_from(&self, src: NodeId) -> BTreeSet<NodeId> {
        let mut seen = BTreeSet::from([src]);
        let mut queue = VecDeque::from([src]);
        while let Some(u) = queue.pop_front() {
            for (v, _) in self.neighbors(u) {
                if seen.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        seen
    }
}

/// Evaluate every router pair through the floor plan and keep the usable ones.
pub fn build_graph(
    nodes: &[MeshNode],
    plan: &FloorPlan,
    params: &RadioParams,
) -> Result<MeshGraph, TopologyError> {
    let mut links = Vec::new();
    for (i, a) in nodes.iter().enumerate() {
        for b in &nodes[i + 1..] {
            let q = radio::link_quality(a.position, b.position, plan, params)
                .map_err(|_| TopologyError::CoincidentNodes { a: a.id, b: b.id })?;
            links.push((a.id, b.id, q));
        }
    }
    MeshGraph::from_links(nodes.to_vec(), links)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoutePath {
    pub hops: Vec<NodeId>,
    /// Sum of per-link attenuation along the path, dB.
    pub total_cost: f64,
    pub router_count: usize,
}

impl RoutePath {
    pub fn links(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.hops.windows(2).map(|w| (w[0], w[1]))
    }
}

#[derive(Clone)]
struct Label {
    cost: f64,
    hops: Vec<NodeId>,
}

impl Label {
    /// Cheaper first, then fewer hops, then the smaller id sequence.
    fn better_than(&self, other: &Label) -> bool {
        match self.cost.total_cmp(&other.cost) {
            std::cmp::Ordering::Less => true,
            std::cmp::Ordering::Greater => false,
            std::cmp::Ordering::Equal => (self.hops.len(), &self.hops) < (other.hops.len(), &other.hops),
        }
    }
}

/// Minimum total-attenuation path, ties broken by hop count and then by the
/// lexicographically smallest id sequence.
///
/// Edge cost is the link attenuation, floored at zero (sub-meter links under
/// a small reference loss can come out negative).
///
/// Label-setting Dijkstra over the full (cost, hops, sequence) label; the
/// order is preserved under extension by a common edge, so settled labels are
/// final.
pub fn best_path(graph: &MeshGraph, src: NodeId, dst: NodeId) -> Result<RoutePath, TopologyError> {
    for id in [src, dst] {
        if graph.node(id).is_none() {
            return Err(TopologyError::UnknownNode(id));
        }
    }
    let mut best: BTreeMap<NodeId, Label> = BTreeMap::new();
    let mut settled: BTreeSet<NodeId> = BTreeSet::new();
    best.insert(
        src,
        Label {
            cost: 0.0,
            hops: vec![src],
        },
    );
    loop {
        let next = best
            .iter()
            .filter(|(id, _)| !settled.contains(id))
            .fold(None::<(NodeId, &Label)>, |acc, (&id, l)| match acc {
                Some((_, cur)) if !l.better_than(cur) => acc,
                _ => Some((id, l)),
            })
            .map(|(id, l)| (id, l.clone()));
        let Some((u, label)) = next else { break };
        settled.insert(u);
        if u == dst {
            return Ok(RoutePath {
                router_count: label.hops.len(),
                total_cost: label.cost,
                hops: label.hops,
            });
        }
        for (v, q) in graph.neighbors(u) {
            if settled.contains(&v) {
                continue;
            }
            let mut hops = label.hops.clone();
            hops.push(v);
            let cand = Label {
                cost: label.cost + q.attenuation.max(0.0),
                hops,
            };
            if best.get(&v).is_none_or(|cur| cand.better_than(cur)) {
                best.insert(v, cand);
            }
        }
    }
    Err(TopologyError::FormationFailure {
        src,
        dst,
        reachable: graph.reachable_from(src),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormationVerdict {
    Formed,
    Partial,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NeighborChoice {
    pub node: NodeId,
    /// Next hop toward the gateway, or the strongest usable neighbor when the
    /// gateway is out of reach.
    pub best_neighbor: Option<NodeId>,
    pub reaches_gateway: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FormationReport {
    pub verdict: FormationVerdict,
    pub components: Vec<Vec<NodeId>>,
    pub neighbors: Vec<NeighborChoice>,
    pub unusable_pairs: Vec<Edge>,
    pub route: Option<RoutePath>,
}

pub fn diagnose(graph: &MeshGraph) -> FormationReport {
    let mut components = Vec::new();
    let mut seen = BTreeSet::new();
    let mut ids: Vec<NodeId> = graph.nodes.iter().map(|n| n.id).collect();
    ids.sort_unstable();
    for &id in &ids {
        if seen.contains(&id) {
            continue;
        }
        let comp = graph.reachable_from(id);
        seen.extend(comp.iter().copied());
        components.push(comp.into_iter().collect::<Vec<_>>());
    }

    let gateway = graph.gateway().map(|g| g.id);
    let neighbors = ids
        .iter()
        .map(|&id| {
            let toward = gateway.and_then(|g| best_path(graph, id, g).ok());
            match toward {
                Some(path) => NeighborChoice {
                    node: id,
                    best_neighbor: path.hops.get(1).copied(),
                    reaches_gateway: true,
                },
                None => NeighborChoice {
                    node: id,
                    best_neighbor: graph
                        .neighbors(id)
                        .min_by(|x, y| x.1.attenuation.total_cmp(&y.1.attenuation).then(x.0.cmp(&y.0)))
                        .map(|(v, _)| v),
                    reaches_gateway: false,
                },
            }
        })
        .collect();

    let route = match (graph.device_side(), gateway) {
        (Some(d), Some(g)) => best_path(graph, d.id, g).ok(),
        _ => None,
    };
    let verdict = if route.is_some() {
        FormationVerdict::Formed
    } else if graph.edge_count() == 0 {
        FormationVerdict::Failed
    } else {
        FormationVerdict::Partial
    };

    FormationReport {
        verdict,
        components,
        neighbors,
        unusable_pairs: graph.rejected().collect(),
        route,
    }
}
