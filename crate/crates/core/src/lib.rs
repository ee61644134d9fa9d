//! Mesh-network measurement lab: link model, mesh formation, the CPE probe
//! protocol, the delay budget, PD/PDR measurement, a seeded discrete-event
//! simulator and a TCP stand-in for the live link.

pub mod budget;
pub mod clock;
pub mod fit;
pub mod geometry;
pub mod live;
pub mod measurement;
pub mod protocol;
pub mod radio;
pub mod scenario;
pub mod session;
pub mod sim;
pub mod topology;

pub use budget::{compute_budget, DelayBudget, DirectionalFloor, HardwareDelays};
pub use clock::Micros;
pub use geometry::{distance, wall_crossings, FloorPlan, Material, Point2D, Rect, Region, Wall};
pub use measurement::{packet_delivery_ratio, pooled_mean, propagation_delay, summarize, SessionStats};
pub use protocol::{
    decode, device_step, encode, serial_tx_time, AccelReading, CpeDevice, DeviceState, FrameError, PoseString,
    ProtocolParams, SensorSource, SyntheticSensor,
};
pub use radio::{calibrate, link_quality, Calibration, CalibrationTarget, LinkGrade, LinkQuality, RadioParams};
pub use scenario::{Coverage, Scenario, ScenarioError};
pub use session::{ProbeOutcome, ProbeRecord, SessionRecord, WireTranscript};
pub use sim::{run_session, StochasticModel};
pub use topology::{best_path, build_graph, diagnose, FormationReport, FormationVerdict, MeshGraph, MeshNode, NodeId, NodeRole, RoutePath};
