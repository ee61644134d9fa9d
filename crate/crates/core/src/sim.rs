//! Seeded discrete-event simulation of a probe session over a routed mesh
//! path.
//!
//! Each request walks the path with a fixed per-direction floor (see
//! [`DirectionalFloor`]) plus one truncated-Normal contention draw per
//! direction. Every link can drop the frame independently in each
//! direction with probability `clamp((att - 40) / 100, 0, 1) * loss_scale`.
//! A drop either way means the client times out. Requests are strictly
//! sequential: the next start byte goes out when the previous probe is
//! answered or times out.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::budget::DirectionalFloor;
use crate::clock::Micros;
use crate::protocol::{CpeDevice, Emission, PoseString, StepOutcome};
use crate::scenario::Scenario;
use crate::session::{ProbeOutcome, ProbeRecord, SessionRecord, WireTranscript};
use crate::topology::{FormationReport, RoutePath};

/// Attenuation at or below which a link never drops frames, dB.
pub const LOSS_FREE_ATTENUATION_DB: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawStochasticModel")]
pub struct StochasticModel {
    /// One-way contention delay mean, ms.
    pub contention_mean: f64,
    pub contention_stddev: f64,
    pub loss_scale: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStochasticModel {
    contention_mean: f64,
    contention_stddev: f64,
    loss_scale: f64,
}

impl TryFrom<RawStochasticModel> for StochasticModel {
    type Error = String;

    fn try_from(r: RawStochasticModel) -> Result<Self, String> {
        let m = StochasticModel {
            contention_mean: r.contention_mean,
            contention_stddev: r.contention_stddev,
            loss_scale: r.loss_scale,
        };
        m.validate()?;
        Ok(m)
    }
}

impl StochasticModel {
    /// No contention, no loss: every probe takes exactly the floor.
    pub const DETERMINISTIC: StochasticModel = StochasticModel {
        contention_mean: 0.0,
        contention_stddev: 0.0,
        loss_scale: 0.0,
    };

    pub fn validate(&self) -> Result<(), String> {
        if !(self.contention_mean >= 0.0 && self.contention_mean.is_finite()) {
            return Err(format!("contention_mean must be >= 0, got {}", self.contention_mean));
        }
        if !(self.contention_stddev >= 0.0 && self.contention_stddev.is_finite()) {
            return Err(format!("contention_stddev must be >= 0, got {}", self.contention_stddev));
        }
        if !(0.0..=1.0).contains(&self.loss_scale) {
            return Err(format!("loss_scale must lie in [0, 1], got {}", self.loss_scale));
        }
        Ok(())
    }

    pub fn per_link_loss(&self, attenuation: f64) -> f64 {
        ((attenuation - LOSS_FREE_ATTENUATION_DB) / 100.0).clamp(0.0, 1.0) * self.loss_scale
    }

    /// Probability a probe survives both directions over links with the
    /// given attenuations.
    pub fn expected_pdr(&self, attenuations: &[f64]) -> f64 {
        attenuations
            .iter()
            .map(|&a| (1.0 - self.per_link_loss(a)).powi(2))
            .product()
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("topology is not formed ({:?}); see the formation report", .0.verdict)]
    NotFormed(Box<FormationReport>),
    #[error("a session needs at least one request")]
    NoRequests,
}

/// Everything about the path a session runs over that does not change
/// between probes.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedPath {
    pub route: RoutePath,
    /// Attenuation of each path link, device side first.
    pub link_attenuation: Vec<f64>,
    pub floor: DirectionalFloor,
}

impl PreparedPath {
    pub fn from_scenario(scenario: &Scenario) -> Result<Self, SimError> {
        let graph = scenario.graph();
        let report = crate::topology::diagnose(&graph);
        let Some(route) = report.route.clone() else {
            return Err(SimError::NotFormed(Box::new(report)));
        };
        let link_attenuation = route
            .links()
            .map(|(a, b)| graph.edge(a, b).expect("route uses graph edges").attenuation)
            .collect();
        let floor = DirectionalFloor::new(route.router_count, &scenario.protocol, &scenario.hardware);
        Ok(Self {
            route,
            link_attenuation,
            floor,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Issue { seq: u32 },
    StartByteAtDevice { seq: u32 },
    DeviceWake,
    FrameAtClient { seq: u32, frame: PoseString },
    Timeout { seq: u32 },
}

/// Min-heap of events keyed by (time, insertion order).
struct Agenda {
    heap: BinaryHeap<Reverse<(Micros, u64, usize)>>,
    events: Vec<Event>,
    counter: u64,
}

impl Agenda {
    fn new() -> Self {
        Self {
            heap: BinaryHeap::new(),
            events: Vec::new(),
            counter: 0,
        }
    }

    fn schedule(&mut self, at: Micros, ev: Event) {
        self.events.push(ev);
        self.heap.push(Reverse((at, self.counter, self.events.len() - 1)));
        self.counter += 1;
    }

    fn pop(&mut self) -> Option<(Micros, Event)> {
        self.heap.pop().map(|Reverse((at, _, idx))| (at, self.events[idx]))
    }
}

struct Session<'a> {
    path: &'a PreparedPath,
    model: StochasticModel,
    timeout: Micros,
    start_byte: u8,
    n_requests: u32,
    rng: ChaCha8Rng,
    contention: Option<Normal<f64>>,
    device: CpeDevice,
    /// Request a held device response belongs to.
    device_pending: Option<u32>,
    outstanding: Option<(u32, Micros)>,
    probes: Vec<ProbeRecord>,
    transcript: WireTranscript,
    agenda: Agenda,
}

impl Session<'_> {
    /// True when the frame survives every link in one direction. All links
    /// draw, so RNG consumption per probe does not depend on outcomes.
    fn survives(&mut self) -> bool {
        let mut ok = true;
        for i in 0..self.path.link_attenuation.len() {
            let p = self.model.per_link_loss(self.path.link_attenuation[i]);
            let u: f64 = self.rng.gen();
            if u < p {
                ok = false;
            }
        }
        ok
    }

    fn contention_delay(&mut self) -> Micros {
        let Some(dist) = self.contention else {
            return Micros::from_ms(self.model.contention_mean);
        };
        // Normal truncated at zero, by rejection.
        for _ in 0..1000 {
            let x = dist.sample(&mut self.rng);
            if x >= 0.0 {
                return Micros::from_ms(x);
            }
        }
        Micros::ZERO
    }

    fn send_response(&mut self, seq: u32, em: Emission) {
        let lost = !self.survives();
        let delay = self.path.floor.response + self.contention_delay();
        if !lost {
            self.agenda.schedule(em.at + delay, Event::FrameAtClient { seq, frame: em.frame });
        }
    }

    fn finish_probe(&mut self, now: Micros, outcome: ProbeOutcome) {
        let (seq, tx) = self.outstanding.take().expect("a probe is outstanding");
        self.probes.push(ProbeRecord {
            seq,
            tx_ms: tx.as_ms(),
            rx_ms: (outcome == ProbeOutcome::Delivered).then(|| now.as_ms()),
            outcome,
        });
        if seq + 1 < self.n_requests {
            self.agenda.schedule(now, Event::Issue { seq: seq + 1 });
        }
    }

    fn release_device(&mut self, now: Micros) {
        if let Some(em) = self.device.poll(now) {
            let seq = self.device_pending.take().expect("held request has an owner");
            self.send_response(seq, em);
        }
    }

    fn run(mut self) -> (Vec<ProbeRecord>, WireTranscript) {
        self.agenda.schedule(Micros::ZERO, Event::Issue { seq: 0 });
        while let Some((now, ev)) = self.agenda.pop() {
            match ev {
                Event::Issue { seq } => {
                    self.transcript.sent.push(self.start_byte);
                    self.outstanding = Some((seq, now));
                    self.agenda.schedule(now + self.timeout, Event::Timeout { seq });
                    let lost = !self.survives();
                    let delay = self.path.floor.request + self.contention_delay();
                    if !lost {
                        self.agenda.schedule(now + delay, Event::StartByteAtDevice { seq });
                    }
                }
                Event::StartByteAtDevice { seq } => {
                    self.release_device(now);
                    match self.device.step(now, self.start_byte) {
                        (StepOutcome::Emit, Some(em)) => self.send_response(seq, em),
                        (StepOutcome::Queued, _) => {
                            self.device_pending = Some(seq);
                            let wake = self.device.next_wakeup().expect("queued request has a wakeup");
                            self.agenda.schedule(wake, Event::DeviceWake);
                        }
                        _ => {}
                    }
                }
                Event::DeviceWake => self.release_device(now),
                Event::FrameAtClient { seq, frame } => {
                    // Frames for a probe that already timed out are discarded.
                    if matches!(self.outstanding, Some((s, _)) if s == seq) {
                        self.transcript.received.extend_from_slice(frame.as_bytes());
                        self.finish_probe(now, ProbeOutcome::Delivered);
                    }
                }
                Event::Timeout { seq } => {
                    if matches!(self.outstanding, Some((s, _)) if s == seq) {
                        self.finish_probe(now, ProbeOutcome::TimedOut);
                    }
                }
            }
        }
        (self.probes, self.transcript)
    }
}

/// Run `n_requests` probes over a prepared path.
pub fn simulate_path(
    label: &str,
    path: &PreparedPath,
    scenario: &Scenario,
    model: StochasticModel,
    n_requests: u32,
    seed: u64,
) -> Result<(SessionRecord, WireTranscript), SimError> {
    if n_requests == 0 {
        return Err(SimError::NoRequests);
    }
    let contention = (model.contention_stddev > 0.0)
        .then(|| Normal::new(model.contention_mean, model.contention_stddev).expect("validated stddev"));
    let session = Session {
        path,
        model,
        timeout: scenario.protocol.timeout_micros(),
        start_byte: scenario.protocol.start_byte,
        n_requests,
        rng: ChaCha8Rng::seed_from_u64(seed),
        contention,
        device: CpeDevice::synthetic(scenario.protocol),
        device_pending: None,
        outstanding: None,
        probes: Vec::with_capacity(n_requests as usize),
        transcript: WireTranscript::default(),
        agenda: Agenda::new(),
    };
    let (probes, transcript) = session.run();
    Ok((SessionRecord::new(label, seed, probes), transcript))
}

/// Seeded session over the scenario's selected route. Equal inputs give
/// identical records.
pub fn run_session(scenario: &Scenario, n_requests: u32, seed: u64) -> Result<SessionRecord, SimError> {
    run_session_captured(scenario, n_requests, seed).map(|(rec, _)| rec)
}

/// As [`run_session`], also returning the bytes the client sent and the
/// frames it accepted.
pub fn run_session_captured(
    scenario: &Scenario,
    n_requests: u32,
    seed: u64,
) -> Result<(SessionRecord, WireTranscript), SimError> {
    let path = PreparedPath::from_scenario(scenario)?;
    simulate_path(&scenario.name, &path, scenario, scenario.stochastic, n_requests, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn loss_law() {
        let m = StochasticModel {
            loss_scale: 0.5,
            ..StochasticModel::DETERMINISTIC
        };
        assert_eq!(m.per_link_loss(30.0), 0.0);
        assert_eq!(m.per_link_loss(40.0), 0.0);
        assert!((m.per_link_loss(60.0) - 0.1).abs() < 1e-12);
        assert_eq!(m.per_link_loss(500.0), 0.5);
        assert!((m.expected_pdr(&[60.0]) - 0.81).abs() < 1e-12);
    }

    #[test]
    fn model_validation() {
        let bad = StochasticModel {
            loss_scale: 1.5,
            ..StochasticModel::DETERMINISTIC
        };
        assert!(bad.validate().is_err());
        let bad = StochasticModel {
            contention_mean: -1.0,
            ..StochasticModel::DETERMINISTIC
        };
        assert!(bad.validate().is_err());
    }
}
