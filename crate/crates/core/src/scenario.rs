//! Scenario files: one deployment (building, router placement, radio,
//! protocol and stochastic parameters) per JSON document.
//!
//! The loader rejects unknown keys and unknown schema versions, and every
//! invariant is checked while parsing so errors carry the JSON path and the
//! line they were detected on.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::{compute_budget, DelayBudget, HardwareDelays};
use crate::geometry::{distance, FloorPlan, Point2D};
use crate::protocol::ProtocolParams;
use crate::radio::{CalibrationTarget, LinkGeometry, RadioParams};
use crate::sim::StochasticModel;
use crate::topology::{self, build_graph, FormationReport, MeshGraph, MeshNode, NodeId, NodeRole};

pub const SCHEMA_VERSION: u32 = 1;

/// Published figures a scenario is pinned against. All optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expected {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_pd_ms: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_mean_pd_ms: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pdr: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub test_pdr: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signal_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage_linear_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage_direct_m: Option<f64>,
    /// A second direct-coverage figure quoted for the same deployment, kept
    /// apart because it disagrees with the summed link lengths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage_direct_reported_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_link_m: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub formation: Option<topology::FormationVerdict>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScenario")]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    pub floor_plan: FloorPlan,
    /// Where the CPE device sits; defaults to the device-side router.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cpe_device: Option<Point2D>,
    pub nodes: Vec<MeshNode>,
    pub radio: RadioParams,
    pub protocol: ProtocolParams,
    #[serde(default)]
    pub hardware: HardwareDelays,
    pub stochastic: StochasticModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<Expected>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schema_version: u32,
    name: String,
    #[serde(default)]
    description: Option<String>,
    floor_plan: FloorPlan,
    #[serde(default)]
    cpe_device: Option<Point2D>,
    nodes: Vec<MeshNode>,
    radio: RadioParams,
    protocol: ProtocolParams,
    #[serde(default)]
    hardware: HardwareDelays,
    stochastic: StochasticModel,
    #[serde(default)]
    expected: Option<Expected>,
}

impl TryFrom<RawScenario> for Scenario {
    type Error = String;

    fn try_from(r: RawScenario) -> Result<Self, String> {
        let s = Scenario {
            schema_version: r.schema_version,
            name: r.name,
            description: r.description,
            floor_plan: r.floor_plan,
            cpe_device: r.cpe_device,
            nodes: r.nodes,
            radio: r.radio,
            protocol: r.protocol,
            hardware: r.hardware,
            stochastic: r.stochastic,
            expected: r.expected,
        };
        s.validate()?;
        Ok(s)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("unsupported schema_version {found} (this build reads {SCHEMA_VERSION})")]
    UnsupportedVersion { found: u64 },
    #[error("missing or non-integer `schema_version`")]
    MissingVersion,
    #[error("at `{field}` (line {line}, column {column}): {message}")]
    Invalid {
        field: String,
        line: usize,
        column: usize,
        message: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coverage {
    /// Straight-line distance from the CPE device to the gateway.
    pub linear: f64,
    /// Sum of hop lengths along `path`.
    pub direct: f64,
    pub per_link: Vec<f64>,
    pub path: Vec<NodeId>,
}

/// serde_json's message without its trailing " at line L column C".
fn bare_message(e: &serde_json::Error) -> String {
    let full = e.to_string();
    let suffix = format!(" at line {} column {}", e.line(), e.column());
    full.strip_suffix(&suffix).map_or(full.clone(), str::to_string)
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ScenarioError::Invalid {
            field: ".".into(),
            line: e.line(),
            column: e.column(),
            message: bare_message(&e),
        })?;
        match value.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            Some(found) => return Err(ScenarioError::UnsupportedVersion { found }),
            None => return Err(ScenarioError::MissingVersion),
        }
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            let inner = e.into_inner();
            ScenarioError::Invalid {
                field,
                line: inner.line(),
                column: inner.column(),
                message: bare_message(&inner),
            }
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenarios always serialize");
        s.push('\n');
        s
    }

    fn validate(&self) -> Result<(), String> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(format!("unsupported schema_version {}", self.schema_version));
        }
        if self.nodes.is_empty() {
            return Err("nodes: at least one mesh router is required".into());
        }
        let gateways = self.nodes.iter().filter(|n| n.role == NodeRole::Gateway).count();
        if gateways != 1 {
            return Err(format!("nodes: exactly one gateway is required, found {gateways}"));
        }
        let device_side = self.nodes.iter().filter(|n| n.role == NodeRole::DeviceSide).count();
        if device_side > 1 || (self.nodes.len() > 1 && device_side != 1) {
            return Err(format!(
                "nodes: exactly one device_side router is required, found {device_side}"
            ));
        }
        let mut ids: Vec<NodeId> = self.nodes.iter().map(|n| n.id).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(format!("nodes: id {} is not unique", w[0]));
        }
        for (i, n) in self.nodes.iter().enumerate() {
            if !self.floor_plan.extent.contains(n.position) {
                return Err(format!("nodes[{i}] (id {}) lies outside the floor-plan extent", n.id));
            }
        }
        for (i, a) in self.nodes.iter().enumerate() {
            if let Some(b) = self.nodes[i + 1..].iter().find(|b| b.position == a.position) {
                return Err(format!("nodes: routers {} and {} share a position", a.id, b.id));
            }
        }
        if let Some(p) = self.cpe_device {
            if !self.floor_plan.extent.contains(p) {
                return Err("cpe_device lies outside the floor-plan extent".into());
            }
        }
        Ok(())
    }

    pub fn graph(&self) -> MeshGraph {
        build_graph(&self.nodes, &self.floor_plan, &self.radio).expect("validated scenario builds a graph")
    }

    pub fn diagnose(&self) -> FormationReport {
        topology::diagnose(&self.graph())
    }

    pub fn node(&self, id: NodeId) -> Option<&MeshNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn gateway(&self) -> &MeshNode {
        self.nodes
            .iter()
            .find(|n| n.role == NodeRole::Gateway)
            .expect("validated scenario has a gateway")
    }

    pub fn device_side(&self) -> &MeshNode {
        self.nodes
            .iter()
            .find(|n| n.role == NodeRole::DeviceSide)
            .unwrap_or_else(|| self.gateway())
    }

    /// Router ids in deployment order (ascending id).
    pub fn deployment_order(&self) -> Vec<NodeId> {
        let mut ids: Vec<NodeId> = self.nodes.iter().map(|n| n.id).collect();
        ids.sort_unstable();
        ids
    }

    /// Link geometry of consecutive routers in deployment order.
    pub fn chain_links(&self) -> Vec<LinkGeometry> {
        self.deployment_order()
            .windows(2)
            .map(|w| {
                let a = self.node(w[0]).expect("id from nodes").position;
                let b = self.node(w[1]).expect("id from nodes").position;
                LinkGeometry::measure(a, b, &self.floor_plan).expect("validated positions are distinct")
            })
            .collect()
    }

    pub fn calibration_target(&self, attenuation: f64, snr: f64) -> CalibrationTarget {
        CalibrationTarget {
            label: self.name.clone(),
            links: self.chain_links(),
            attenuation,
            snr,
        }
    }

    /// Network reach: along the selected route when the mesh forms, along the
    /// deployment order otherwise.
    pub fn coverage(&self) -> Coverage {
        let path = self
            .diagnose()
            .route
            .map(|r| r.hops)
            .unwrap_or_else(|| self.deployment_order());
        let pos = |id: NodeId| self.node(id).expect("path ids come from nodes").position;
        let per_link: Vec<f64> = path.windows(2).map(|w| distance(pos(w[0]), pos(w[1]))).collect();
        let device = self.cpe_device.unwrap_or(self.device_side().position);
        Coverage {
            linear: distance(device, self.gateway().position),
            direct: per_link.iter().sum(),
            per_link,
            path,
        }
    }

    /// Delay budget over all routers in the deployment.
    pub fn budget(&self) -> DelayBudget {
        compute_budget(self.nodes.len(), &self.protocol, &self.hardware)
    }
}
