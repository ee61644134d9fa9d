//! Deterministic transmission-delay budget: the fixed costs that sit
//! underneath every measured propagation delay.
//!
//! The mesh term is `router_count × per_router_delay` (four routers give
//! 8 ms), i.e. it counts routers rather than inter-router hops.

use serde::{Deserialize, Serialize};

use crate::clock::Micros;
use crate::protocol::{serial_tx_time, ProtocolParams, FRAME_LEN};

pub const DEFAULT_PER_ROUTER_DELAY_MS: f64 = 2.0;
pub const DEFAULT_WIFI_MODULE_MS: f64 = 19.0;

/// Hardware delay figures that are not part of the wire protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareDelays {
    pub per_router_delay: f64,
    pub wifi_module_max: f64,
}

impl Default for HardwareDelays {
    fn default() -> Self {
        Self {
            per_router_delay: DEFAULT_PER_ROUTER_DELAY_MS,
            wifi_module_max: DEFAULT_WIFI_MODULE_MS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayBudget {
    pub router_count: usize,
    pub serial_tx: f64,
    pub device_loop: f64,
    pub wifi_module: f64,
    pub mesh_routers: f64,
    pub total: f64,
    pub breakdown: Vec<(String, f64)>,
}

pub fn compute_budget(router_count: usize, params: &ProtocolParams, hw: &HardwareDelays) -> DelayBudget {
    let serial_tx = serial_tx_time(FRAME_LEN, params.serial_baud);
    let device_loop = params.device_loop_delay;
    let wifi_module = hw.wifi_module_max;
    let mesh_routers = router_count as f64 * hw.per_router_delay;
    let breakdown = vec![
        ("serial transmission (22 bytes)".to_string(), serial_tx),
        ("device loop delay".to_string(), device_loop),
        ("serial-to-Wi-Fi module".to_string(), wifi_module),
        (format!("mesh routers ({router_count} x {} ms)", hw.per_router_delay), mesh_routers),
    ];
    DelayBudget {
        router_count,
        serial_tx,
        device_loop,
        wifi_module,
        mesh_routers,
        total: breakdown.iter().map(|(_, ms)| ms).sum(),
        breakdown,
    }
}

/// Fixed per-direction delay of one probe on a path through `router_count`
/// routers.
///
/// The request (start byte) pays the routers and the Wi-Fi module; the
/// response additionally pays the 22-byte serial transfer. The device loop
/// delay is not charged to a probe: it only spaces consecutive responses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DirectionalFloor {
    pub request: Micros,
    pub response: Micros,
}

impl DirectionalFloor {
    pub fn new(router_count: usize, params: &ProtocolParams, hw: &HardwareDelays) -> Self {
        let mesh = Micros::from_ms(router_count as f64 * hw.per_router_delay);
        let wifi = Micros::from_ms(hw.wifi_module_max);
        let serial = Micros::from_ms(serial_tx_time(FRAME_LEN, params.serial_baud));
        Self {
            request: mesh + wifi,
            response: serial + wifi + mesh,
        }
    }

    /// Smallest possible half round trip, ms.
    pub fn min_propagation_delay(&self) -> f64 {
        (self.request + self.response).as_ms() / 2.0
    }
}
