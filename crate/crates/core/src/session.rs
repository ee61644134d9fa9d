//! Session records shared by the simulator and the live transport.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeOutcome {
    Delivered,
    /// A response arrived but could not be decoded.
    Lost,
    TimedOut,
}

impl ProbeOutcome {
    pub fn as_str(self) -> &'static str {
        match self {
            ProbeOutcome::Delivered => "delivered",
            ProbeOutcome::Lost => "lost",
            ProbeOutcome::TimedOut => "timed_out",
        }
    }
}

/// One request/response sample. Times are milliseconds since session start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeRecord {
    pub seq: u32,
    pub tx_ms: f64,
    pub rx_ms: Option<f64>,
    pub outcome: ProbeOutcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionRecord {
    pub scenario: String,
    pub seed: u64,
    pub request_count: u32,
    pub received_count: u32,
    pub probes: Vec<ProbeRecord>,
}

#[derive(Debug, Error)]
pub enum RecordError {
    #[error("malformed session record: {0}")]
    Malformed(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub const CSV_HEADER: [&str; 4] = ["seq", "tx_ms", "rx_ms", "outcome"];

#[derive(Serialize, Deserialize)]
struct CsvRow {
    seq: u32,
    tx_ms: f64,
    rx_ms: Option<f64>,
    outcome: ProbeOutcome,
}

impl SessionRecord {
    pub fn new(scenario: impl Into<String>, seed: u64, probes: Vec<ProbeRecord>) -> Self {
        let received = probes.iter().filter(|p| p.outcome == ProbeOutcome::Delivered).count();
        Self {
            scenario: scenario.into(),
            seed,
            request_count: probes.len() as u32,
            received_count: received as u32,
            probes,
        }
    }

    /// Counter and per-probe checks.
    pub fn validate(&self) -> Result<(), RecordError> {
        let bad = |m: String| Err(RecordError::Malformed(m));
        if self.request_count as usize != self.probes.len() {
            return bad(format!(
                "request_count {} but {} probes",
                self.request_count,
                self.probes.len()
            ));
        }
        let delivered = self.probes.iter().filter(|p| p.outcome == ProbeOutcome::Delivered).count();
        if self.received_count as usize != delivered {
            return bad(format!(
                "received_count {} but {} delivered probes",
                self.received_count, delivered
            ));
        }
        for p in &self.probes {
            match (p.outcome, p.rx_ms) {
                (ProbeOutcome::Delivered, Some(rx)) if rx >= p.tx_ms => {}
                (ProbeOutcome::Delivered, Some(_)) => return bad(format!("probe {}: rx before tx", p.seq)),
                (ProbeOutcome::Delivered, None) => return bad(format!("probe {}: delivered without rx", p.seq)),
                (_, Some(_)) => return bad(format!("probe {}: rx on an undelivered probe", p.seq)),
                (_, None) => {}
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("session records always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, RecordError> {
        let rec: SessionRecord = serde_json::from_str(text)?;
        rec.validate()?;
        Ok(rec)
    }

    /// One probe per row: `seq,tx_ms,rx_ms,outcome`, header always present,
    /// empty `rx_ms` for undelivered probes.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), RecordError> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out);
        w.write_record(CSV_HEADER)?;
        for p in &self.probes {
            w.serialize(CsvRow {
                seq: p.seq,
                tx_ms: p.tx_ms,
                rx_ms: p.rx_ms,
                outcome: p.outcome,
            })?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is ASCII")
    }

    /// CSV carries no scenario or seed; callers supply them.
    pub fn read_csv<R: Read>(input: R, scenario: &str, seed: u64) -> Result<Self, RecordError> {
        let mut rdr = csv::Reader::from_reader(input);
        let headers = rdr.headers()?.clone();
        if headers.iter().ne(CSV_HEADER) {
            return Err(RecordError::Malformed(format!(
                "expected header {:?}, found {:?}",
                CSV_HEADER,
                headers.iter().collect::<Vec<_>>()
            )));
        }
        let probes = rdr
            .deserialize::<CsvRow>()
            .map(|row| {
                row.map(|r| ProbeRecord {
                    seq: r.seq,
                    tx_ms: r.tx_ms,
                    rx_ms: r.rx_ms,
                    outcome: r.outcome,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        let rec = SessionRecord::new(scenario, seed, probes);
        rec.validate()?;
        Ok(rec)
    }
}

/// Bytes the client put on the wire and the frames it accepted, in order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WireTranscript {
    pub sent: Vec<u8>,
    pub received: Vec<u8>,
}
