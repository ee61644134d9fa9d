//! Probe arithmetic: half-RTT propagation delay, delivery ratio and
//! per-session statistics.
//!
//! The laptop-side loop this mirrors prints `RequestCount / ReceivedCount`
//! as its running PDR, which is the reciprocal of the ratio it reports.
//! Here PDR is always `received / requested`, so it stays within [0, 1].

use serde::Serialize;
use thiserror::Error;

use crate::session::{ProbeOutcome, SessionRecord};

/// Delivered probes per data set.
pub const DATASET_SIZE: usize = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeasureError {
    #[error("rx ({rx} ms) precedes tx ({tx} ms)")]
    ClockOrder { tx: f64, rx: f64 },
    #[error("received count {received} exceeds requested count {requested}")]
    CounterCorruption { requested: u32, received: u32 },
    #[error("no requests were issued")]
    NoRequests,
    #[error("session has no probes")]
    EmptySession,
}

/// One-way delay estimate from a round trip: `(rx - tx) / 2`.
pub fn propagation_delay(tx: f64, rx: f64) -> Result<f64, MeasureError> {
    if rx < tx {
        return Err(MeasureError::ClockOrder { tx, rx });
    }
    Ok((rx - tx) / 2.0)
}

pub fn packet_delivery_ratio(requested: u32, received: u32) -> Result<f64, MeasureError> {
    if requested == 0 {
        return Err(MeasureError::NoRequests);
    }
    if received > requested {
        return Err(MeasureError::CounterCorruption { requested, received });
    }
    Ok(f64::from(received) / f64::from(requested))
}

/// Equal-weight mean of per-test means.
pub fn pooled_mean(test_means: &[f64]) -> Option<f64> {
    if test_means.is_empty() {
        None
    } else {
        Some(test_means.iter().sum::<f64>() / test_means.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DataSet {
    pub index: usize,
    pub count: usize,
    pub mean_pd: f64,
    /// Fewer than ten strings (the tail of the session).
    pub partial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SessionStats {
    pub n_requested: u32,
    pub n_delivered: u32,
    pub pdr: f64,
    pub mean_pd: Option<f64>,
    /// Sample (n - 1) standard deviation; absent below two delivered probes.
    pub stddev_pd: Option<f64>,
    pub min_pd: Option<f64>,
    pub max_pd: Option<f64>,
    pub datasets: Vec<DataSet>,
}

impl SessionStats {
    pub fn dataset_means(&self) -> impl Iterator<Item = f64> + '_ {
        self.datasets.iter().map(|d| d.mean_pd)
    }
}

/// Single-pass (Welford) accumulator.
#[derive(Default)]
struct Running {
    n: usize,
    mean: f64,
    m2: f64,
    min: f64,
    max: f64,
}

impl Running {
    fn push(&mut self, x: f64) {
        if self.n == 0 {
            self.min = x;
            self.max = x;
        } else {
            self.min = self.min.min(x);
            self.max = self.max.max(x);
        }
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }
}

pub fn summarize(session: &SessionRecord) -> Result<SessionStats, MeasureError> {
    if session.probes.is_empty() {
        return Err(MeasureError::EmptySession);
    }
    let delivered = session
        .probes
        .iter()
        .filter(|p| p.outcome == ProbeOutcome::Delivered)
        .map(|p| propagation_delay(p.tx_ms, p.rx_ms.unwrap_or(f64::NAN)))
        .collect::<Result<Vec<f64>, _>>()?;
    let pdr = packet_delivery_ratio(session.request_count, session.received_count)?;

    let mut all = Running::default();
    for &pd in &delivered {
        all.push(pd);
    }
    let datasets = delivered
        .chunks(DATASET_SIZE)
        .enumerate()
        .map(|(index, chunk)| {
            let mut r = Running::default();
            chunk.iter().for_each(|&pd| r.push(pd));
            DataSet {
                index,
                count: chunk.len(),
                mean_pd: r.mean,
                partial: chunk.len() < DATASET_SIZE,
            }
        })
        .collect();

    let any = all.n > 0;
    Ok(SessionStats {
        n_requested: session.request_count,
        n_delivered: session.received_count,
        pdr,
        mean_pd: any.then_some(all.mean),
        stddev_pd: (all.n >= 2).then(|| (all.m2 / (all.n - 1) as f64).sqrt()),
        min_pd: any.then_some(all.min),
        max_pd: any.then_some(all.max),
        datasets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::session::ProbeRecord;

    fn session(rtts: &[Option<f64>]) -> SessionRecord {
        let mut t = 0.0;
        let probes = rtts
            .iter()
            .enumerate()
            .map(|(i, rtt)| {
                let tx = t;
                let (rx, outcome) = match rtt {
                    Some(r) => (Some(tx + r), ProbeOutcome::Delivered),
                    None => (None, ProbeOutcome::TimedOut),
                };
                t = rx.unwrap_or(tx + 2000.0);
                ProbeRecord {
                    seq: i as u32,
                    tx_ms: tx,
                    rx_ms: rx,
                    outcome,
                }
            })
            .collect();
        SessionRecord::new("t", 0, probes)
    }

    #[test]
    fn half_round_trip() {
        assert_eq!(propagation_delay(5.0, 5.0).unwrap(), 0.0);
        assert_eq!(propagation_delay(0.0, 100.0).unwrap(), 50.0);
        assert!(matches!(propagation_delay(10.0, 9.0), Err(MeasureError::ClockOrder { .. })));
        // A mean RTT of 488.66 ms halves to the configuration-1 mean.
        assert!((propagation_delay(0.0, 488.66).unwrap() - 244.33).abs() < 1e-9);
    }

    #[test]
    fn delivery_ratios() {
        assert_eq!(packet_delivery_ratio(100, 100).unwrap(), 1.0);
        assert_eq!(packet_delivery_ratio(100, 88).unwrap(), 0.88);
        assert_eq!(packet_delivery_ratio(100, 0).unwrap(), 0.0);
        assert!(matches!(
            packet_delivery_ratio(100, 101),
            Err(MeasureError::CounterCorruption { .. })
        ));
        assert_eq!(packet_delivery_ratio(0, 0), Err(MeasureError::NoRequests));
    }

    #[test]
    fn constant_rtt_session() {
        let s = summarize(&session(&[Some(200.0); 100])).unwrap();
        assert_eq!(s.mean_pd, Some(100.0));
        assert_eq!(s.stddev_pd, Some(0.0));
        assert_eq!(s.datasets.len(), 10);
        assert!(s.datasets.iter().all(|d| d.mean_pd == 100.0 && !d.partial));
        assert_eq!(s.pdr, 1.0);
    }

    #[test]
    fn partial_tail_block_is_flagged() {
        let mut rtts = vec![Some(100.0); 23];
        rtts.push(None);
        let s = summarize(&session(&rtts)).unwrap();
        assert_eq!(s.datasets.len(), 3);
        assert_eq!(s.datasets[2].count, 3);
        assert!(s.datasets[2].partial);
        assert_eq!(s.pdr, 23.0 / 24.0);
    }

    #[test]
    fn nothing_delivered_keeps_pdr_only() {
        let s = summarize(&session(&[None, None])).unwrap();
        assert_eq!(s.pdr, 0.0);
        assert_eq!(s.mean_pd, None);
        assert_eq!(s.stddev_pd, None);
        assert!(s.datasets.is_empty());
    }

    #[test]
    fn pooled_test_means() {
        assert!((pooled_mean(&[748.69, 664.5]).unwrap() - 706.6).abs() < 0.01);
        assert!((pooled_mean(&[170.24, 318.42]).unwrap() - 244.33).abs() < 1e-9);
        // Published configuration-2 mean is 485.58; equal pooling gives 485.815.
        assert!((pooled_mean(&[456.4, 515.23]).unwrap() - 485.815).abs() < 1e-9);
        assert_eq!(pooled_mean(&[]), None);
    }

    #[test]
    fn empty_session_rejected() {
        assert_eq!(summarize(&session(&[])), Err(MeasureError::EmptySession));
    }
}
