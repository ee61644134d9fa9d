//! The probe protocol over real TCP sockets.
//!
//! The device role answers each start byte with one 22-byte frame, with no
//! extra framing, through the same state machine the simulator uses. The
//! client role issues start bytes one at a time and stamps them with a
//! monotonic clock, producing the same record schema as a simulated run.

use std::io::{self, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::Serialize;
use thiserror::Error;

use crate::clock::Micros;
use crate::protocol::{decode, CpeDevice, ProtocolParams, FRAME_LEN, FRAME_START};
use crate::session::{ProbeOutcome, ProbeRecord, SessionRecord, WireTranscript};

#[derive(Debug, Error)]
pub enum LiveError {
    #[error("cannot connect to {addr}: {source}")]
    Connect {
        addr: String,
        #[source]
        source: io::Error,
    },
    #[error("device closed the connection after {completed} probes")]
    Disconnected { completed: u32 },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// What a device endpoint did while serving.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct DeviceStats {
    pub sessions: u64,
    pub bytes_in: u64,
    pub frames_out: u64,
}

fn elapsed(start: Instant) -> Micros {
    Micros(start.elapsed().as_micros() as u64)
}

/// Serve one client until it disconnects. Each connection gets a fresh
/// device, so the sensor sequence restarts.
pub fn serve_connection(mut stream: TcpStream, params: ProtocolParams, stats: &mut DeviceStats) -> io::Result<()> {
    stream.set_nodelay(true)?;
    let start = Instant::now();
    let mut device = CpeDevice::synthetic(params);
    let mut buf = [0u8; 256];
    loop {
        let wait = device
            .next_wakeup()
            .map(|w| Duration::from_micros(w.0.saturating_sub(elapsed(start).0).max(1)));
        stream.set_read_timeout(wait)?;
        let mut out = Vec::new();
        match stream.read(&mut buf) {
            Ok(0) => return Ok(()),
            Ok(n) => {
                stats.bytes_in += n as u64;
                for &b in &buf[..n] {
                    out.extend(device.on_byte(elapsed(start), b));
                }
            }
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                out.extend(device.poll(elapsed(start)));
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) if is_disconnect(&e) => return Ok(()),
            Err(e) => return Err(e),
        }
        for em in out {
            if let Err(e) = stream.write_all(em.frame.as_bytes()) {
                return if is_disconnect(&e) { Ok(()) } else { Err(e) };
            }
            stats.frames_out += 1;
        }
    }
}

fn is_disconnect(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        ErrorKind::ConnectionReset | ErrorKind::ConnectionAborted | ErrorKind::BrokenPipe | ErrorKind::UnexpectedEof
    )
}

/// Accept clients one at a time. Stops after `max_sessions` if given.
pub fn serve(listener: &TcpListener, params: ProtocolParams, max_sessions: Option<u64>) -> io::Result<DeviceStats> {
    let mut stats = DeviceStats::default();
    while max_sessions.is_none_or(|m| stats.sessions < m) {
        let (stream, _) = listener.accept()?;
        serve_connection(stream, params, &mut stats)?;
        stats.sessions += 1;
    }
    Ok(stats)
}

/// Bind `addr` and serve on a background thread. Returns the bound address
/// (useful with port 0).
pub fn spawn_device(
    addr: impl ToSocketAddrs,
    params: ProtocolParams,
    max_sessions: Option<u64>,
) -> io::Result<(SocketAddr, JoinHandle<io::Result<DeviceStats>>)> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let handle = std::thread::spawn(move || serve(&listener, params, max_sessions));
    Ok((local, handle))
}

enum Reply {
    Frame([u8; FRAME_LEN]),
    Timeout,
    Closed,
}

/// Client-side byte stream with resynchronisation on the frame start.
struct FrameReader {
    stream: TcpStream,
    buf: Vec<u8>,
}

impl FrameReader {
    fn next_frame(&mut self, deadline: Instant) -> io::Result<Reply> {
        let mut chunk = [0u8; 256];
        loop {
            if let Some(pos) = self.buf.iter().position(|&b| b == FRAME_START) {
                self.buf.drain(..pos);
                if self.buf.len() >= FRAME_LEN {
                    let mut frame = [0u8; FRAME_LEN];
                    frame.copy_from_slice(&self.buf[..FRAME_LEN]);
                    self.buf.drain(..FRAME_LEN);
                    return Ok(Reply::Frame(frame));
                }
            } else {
                self.buf.clear();
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(Reply::Timeout);
            }
            self.stream.set_read_timeout(Some(deadline - now))?;
            match self.stream.read(&mut chunk) {
                Ok(0) => return Ok(Reply::Closed),
                Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
                Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                    return Ok(Reply::Timeout)
                }
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) if is_disconnect(&e) => return Ok(Reply::Closed),
                Err(e) => return Err(e),
            }
        }
    }
}

/// Run `n_requests` sequential probes against a device at `addr`.
pub fn run_client(
    addr: &str,
    params: &ProtocolParams,
    n_requests: u32,
) -> Result<(SessionRecord, WireTranscript), LiveError> {
    let stream = TcpStream::connect(addr).map_err(|source| LiveError::Connect {
        addr: addr.to_string(),
        source,
    })?;
    stream.set_nodelay(true)?;
    let timeout = Duration::from_micros(params.timeout_micros().0);
    let mut reader = FrameReader {
        stream: stream.try_clone()?,
        buf: Vec::new(),
    };
    let mut writer = stream;
    let mut transcript = WireTranscript::default();
    let mut probes = Vec::with_capacity(n_requests as usize);
    let start = Instant::now();
    for seq in 0..n_requests {
        let sent_at = Instant::now();
        let tx = elapsed(start);
        if let Err(e) = writer.write_all(&[params.start_byte]) {
            if is_disconnect(&e) {
                return Err(LiveError::Disconnected { completed: seq });
            }
            return Err(e.into());
        }
        transcript.sent.push(params.start_byte);
        let (rx, outcome) = match reader.next_frame(sent_at + timeout)? {
            Reply::Frame(frame) => match decode(&frame) {
                Ok(_) => {
                    transcript.received.extend_from_slice(&frame);
                    (Some(elapsed(start).as_ms()), ProbeOutcome::Delivered)
                }
                Err(_) => (None, ProbeOutcome::Lost),
            },
            Reply::Timeout => (None, ProbeOutcome::TimedOut),
            Reply::Closed => return Err(LiveError::Disconnected { completed: seq }),
        };
        probes.push(ProbeRecord {
            seq,
            tx_ms: tx.as_ms(),
            rx_ms: rx,
            outcome,
        });
    }
    Ok((SessionRecord::new("live", 0, probes), transcript))
}
