//! The CPE probe protocol.
//!
//! A client sends a single start byte (`~`). For every start byte the device
//! answers with one 22-byte pose string:
//!
//! ```text
//! offset  0    1..=4  5   6..=9  10  11..=14  15  16..=19  20  21
//!         '*'  AccAx  ' ' AccAy  ' ' AccBx    ' ' AccBy    ' ' '\n'
//! ```
//!
//! Each field is a zero-padded decimal in 0000..=1023 (10-bit ADC counts).
//! After answering, the device sleeps for its loop delay (50 ms by default).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Micros;

pub const FRAME_LEN: usize = 22;
pub const FRAME_START: u8 = b'*';
pub const FRAME_END: u8 = b'\n';
pub const DEFAULT_START_BYTE: u8 = b'~';
pub const MAX_READING: u16 = 1023;

/// Offsets of the four 4-digit fields.
pub const FIELD_OFFSETS: [usize; 4] = [1, 6, 11, 16];
/// Offsets that must hold a single space.
pub const SPACE_OFFSETS: [usize; 4] = [5, 10, 15, 20];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccelReading {
    pub acc_ax: u16,
    pub acc_ay: u16,
    pub acc_bx: u16,
    pub acc_by: u16,
}

impl AccelReading {
    pub const fn new(acc_ax: u16, acc_ay: u16, acc_bx: u16, acc_by: u16) -> Self {
        Self {
            acc_ax,
            acc_ay,
            acc_bx,
            acc_by,
        }
    }

    fn fields(&self) -> [u16; 4] {
        [self.acc_ax, self.acc_ay, self.acc_bx, self.acc_by]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PoseString([u8; FRAME_LEN]);

impl PoseString {
    pub fn as_bytes(&self) -> &[u8; FRAME_LEN] {
        &self.0
    }

    pub fn reading(&self) -> AccelReading {
        decode(&self.0).expect("PoseString is always well formed")
    }
}

impl AsRef<[u8]> for PoseString {
    fn as_ref(&self) -> &[u8] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("field {field} = {value} exceeds {MAX_READING}")]
    OutOfRange { field: &'static str, value: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameFault {
    WrongLength,
    BadStart,
    BadSeparator,
    BadTerminator,
    NonDigit,
    FieldOverflow,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("frame error at offset {offset}: {fault:?}")]
pub struct FrameError {
    pub offset: usize,
    pub fault: FrameFault,
}

const FIELD_NAMES: [&str; 4] = ["acc_ax", "acc_ay", "acc_bx", "acc_by"];

pub fn encode(r: &AccelReading) -> Result<PoseString, EncodeError> {
    let mut out = [b' '; FRAME_LEN];
    out[0] = FRAME_START;
    out[FRAME_LEN - 1] = FRAME_END;
    for ((value, offset), field) in r.fields().into_iter().zip(FIELD_OFFSETS).zip(FIELD_NAMES) {
        if value > MAX_READING {
            return Err(EncodeError::OutOfRange { field, value });
        }
        let mut v = value;
        for k in (0..4).rev() {
            out[offset + k] = b'0' + (v % 10) as u8;
            v /= 10;
        }
    }
    Ok(PoseString(out))
}

/// Parse a frame; the error names the first offending byte offset.
pub fn decode(bytes: &[u8]) -> Result<AccelReading, FrameError> {
    let err = |offset, fault| Err(FrameError { offset, fault });
    let checked = bytes.len().min(FRAME_LEN);
    let mut fields = [0u16; 4];
    for i in 0..checked {
        let b = bytes[i];
        if i == 0 {
            if b != FRAME_START {
                return err(0, FrameFault::BadStart);
            }
        } else if i == FRAME_LEN - 1 {
            if b != FRAME_END {
                return err(i, FrameFault::BadTerminator);
            }
        } else if SPACE_OFFSETS.contains(&i) {
            if b != b' ' {
                return err(i, FrameFault::BadSeparator);
            }
        } else if !b.is_ascii_digit() {
            return err(i, FrameFault::NonDigit);
        }
        // Range-check a field once its last digit has been seen.
        if let Some(f) = FIELD_OFFSETS.iter().position(|&o| o + 3 == i) {
            let start = FIELD_OFFSETS[f];
            let v = bytes[start..start + 4]
                .iter()
                .fold(0u16, |acc, d| acc * 10 + u16::from(d - b'0'));
            if v > MAX_READING {
                return err(start, FrameFault::FieldOverflow);
            }
            fields[f] = v;
        }
    }
    if bytes.len() != FRAME_LEN {
        return err(checked, FrameFault::WrongLength);
    }
    Ok(AccelReading::new(fields[0], fields[1], fields[2], fields[3]))
}

/// Serial transfer time in ms, counting 8 bits per byte and no start/stop
/// framing (22 bytes at 38400 Bd is 176 / 38400 s, about 4.58 ms).
pub fn serial_tx_time(n_bytes: usize, baud: u32) -> f64 {
    (n_bytes as f64 * 8.0) / f64::from(baud) * 1000.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawProtocolParams")]
pub struct ProtocolParams {
    pub start_byte: u8,
    /// Device sleep after each response, ms.
    pub device_loop_delay: f64,
    pub serial_baud: u32,
    /// Client wait before declaring a probe timed out, ms.
    pub response_timeout: f64,
}

impl Default for ProtocolParams {
    fn default() -> Self {
        Self {
            start_byte: DEFAULT_START_BYTE,
            device_loop_delay: 50.0,
            serial_baud: 38_400,
            response_timeout: 2000.0,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawProtocolParams {
    start_byte: u8,
    device_loop_delay: f64,
    serial_baud: u32,
    response_timeout: f64,
}

impl TryFrom<RawProtocolParams> for ProtocolParams {
    type Error = String;

    fn try_from(r: RawProtocolParams) -> Result<Self, String> {
        if r.serial_baud == 0 {
            return Err("serial_baud must be > 0".into());
        }
        if !(r.response_timeout > 0.0 && r.response_timeout.is_finite()) {
            return Err(format!("response_timeout must be > 0, got {}", r.response_timeout));
        }
        if !(r.device_loop_delay >= 0.0 && r.device_loop_delay.is_finite()) {
            return Err(format!("device_loop_delay must be >= 0, got {}", r.device_loop_delay));
        }
        Ok(Self {
            start_byte: r.start_byte,
            device_loop_delay: r.device_loop_delay,
            serial_baud: r.serial_baud,
            response_timeout: r.response_timeout,
        })
    }
}

impl ProtocolParams {
    pub fn loop_delay_micros(&self) -> Micros {
        Micros::from_ms(self.device_loop_delay)
    }

    pub fn timeout_micros(&self) -> Micros {
        Micros::from_ms(self.response_timeout)
    }
}

/// Where the device reads its accelerometers from.
pub trait SensorSource {
    fn read(&mut self) -> AccelReading;
}

/// Deterministic stand-in for the accelerometers: reading `i` is a fixed
/// function of the emission index, so two devices answering the same
/// number of requests put identical bytes on the wire.
#[derive(Debug, Clone, Default)]
pub struct SyntheticSensor {
    index: u64,
}

impl SyntheticSensor {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reading_at(index: u64) -> AccelReading {
        // splitmix64
        let mut z = index.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        let f = |k: u32| ((z >> (k * 10)) & 0x3FF) as u16;
        AccelReading::new(f(0), f(1), f(2), f(3))
    }
}

impl SensorSource for SyntheticSensor {
    fn read(&mut self) -> AccelReading {
        let r = Self::reading_at(self.index);
        self.index += 1;
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DeviceState {
    #[default]
    Idle,
    /// Sleeping until `until`; `pending` records one start byte that arrived
    /// during the sleep and will be answered when it ends.
    Busy { until: Micros, pending: bool },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepOutcome {
    /// Answer now.
    Emit,
    /// Answer when the current sleep ends.
    Queued,
    Ignored,
}

/// One input byte through the device loop at time `now`.
///
/// A start byte on an idle device is answered immediately. During the loop
/// delay one start byte is held and answered when the delay ends; further
/// start bytes in the same window are dropped, as the loop reads a single
/// start bit per iteration. Anything else is ignored.
pub fn device_step(
    state: DeviceState,
    now: Micros,
    input: u8,
    params: &ProtocolParams,
) -> (DeviceState, StepOutcome) {
    let state = settle(state, now);
    if input != params.start_byte {
        return (state, StepOutcome::Ignored);
    }
    match state {
        DeviceState::Idle => (
            DeviceState::Busy {
                until: now + params.loop_delay_micros(),
                pending: false,
            },
            StepOutcome::Emit,
        ),
        DeviceState::Busy { until, pending: false } => (DeviceState::Busy { until, pending: true }, StepOutcome::Queued),
        busy @ DeviceState::Busy { pending: true, .. } => (busy, StepOutcome::Ignored),
    }
}

/// Advance time without input. When a held request comes due, returns the
/// instant it is answered (the end of the loop delay).
pub fn device_tick(state: DeviceState, now: Micros, params: &ProtocolParams) -> (DeviceState, Option<Micros>) {
    match state {
        DeviceState::Busy { until, pending: true } if now >= until => (
            DeviceState::Busy {
                until: until + params.loop_delay_micros(),
                pending: false,
            },
            Some(until),
        ),
        other => (settle(other, now), None),
    }
}

fn settle(state: DeviceState, now: Micros) -> DeviceState {
    match state {
        DeviceState::Busy { until, pending: false } if now >= until => DeviceState::Idle,
        other => other,
    }
}

/// A frame leaving the device at `at`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Emission {
    pub at: Micros,
    pub frame: PoseString,
}

/// The device endpoint: the state machine plus its sensor.
#[derive(Debug, Clone)]
pub struct CpeDevice<S = SyntheticSensor> {
    params: ProtocolParams,
    sensor: S,
    state: DeviceState,
}

impl CpeDevice<SyntheticSensor> {
    pub fn synthetic(params: ProtocolParams) -> Self {
        Self::new(params, SyntheticSensor::new())
    }
}

impl<S: SensorSource> CpeDevice<S> {
    pub fn new(params: ProtocolParams, sensor: S) -> Self {
        Self {
            params,
            sensor,
            state: DeviceState::Idle,
        }
    }

    pub fn state(&self) -> DeviceState {
        self.state
    }

    fn emit(&mut self, at: Micros) -> Emission {
        let frame = encode(&self.sensor.read()).expect("sensor readings are 10-bit");
        Emission { at, frame }
    }

    /// Release a held request whose delay has elapsed by `now`.
    pub fn poll(&mut self, now: Micros) -> Option<Emission> {
        let (state, released) = device_tick(self.state, now, &self.params);
        self.state = state;
        released.map(|at| self.emit(at))
    }

    /// Run one byte through the loop without releasing held requests first;
    /// callers that care about ordering `poll` before calling this.
    pub fn step(&mut self, now: Micros, byte: u8) -> (StepOutcome, Option<Emission>) {
        let (state, outcome) = device_step(self.state, now, byte, &self.params);
        self.state = state;
        let emission = (outcome == StepOutcome::Emit).then(|| self.emit(now));
        (outcome, emission)
    }

    /// Feed one received byte. Any held request that came due first is
    /// returned ahead of the response to this byte.
    pub fn on_byte(&mut self, now: Micros, byte: u8) -> Vec<Emission> {
        let mut out: Vec<Emission> = self.poll(now).into_iter().collect();
        out.extend(self.step(now, byte).1);
        out
    }

    /// When the device next needs a `poll`, if it holds a request.
    pub fn next_wakeup(&self) -> Option<Micros> {
        match self.state {
            DeviceState::Busy { until, pending: true } => Some(until),
            _ => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn encodes_templates() {
        assert_eq!(
            encode(&AccelReading::new(0, 0, 0, 0)).unwrap().as_bytes(),
            b"*0000 0000 0000 0000 \n"
        );
        assert_eq!(
            encode(&AccelReading::new(1023, 1023, 1023, 1023)).unwrap().as_bytes(),
            b"*1023 1023 1023 1023 \n"
        );
        assert_eq!(
            encode(&AccelReading::new(512, 300, 7, 64)).unwrap().as_bytes(),
            b"*0512 0300 0007 0064 \n"
        );
    }

    #[test]
    fn encode_rejects_out_of_range() {
        assert_eq!(
            encode(&AccelReading::new(0, 1024, 0, 0)),
            Err(EncodeError::OutOfRange {
                field: "acc_ay",
                value: 1024
            })
        );
    }

    #[test]
    fn decodes_known_frame() {
        assert_eq!(decode(b"*0512 0300 0007 0064 \n").unwrap(), AccelReading::new(512, 300, 7, 64));
    }

    #[test]
    fn truncated_frame_reports_offset_21() {
        let e = decode(&b"*0512 0300 0007 0064 \n"[..21]).unwrap_err();
        assert_eq!(e.offset, 21);
        assert_eq!(e.fault, FrameFault::WrongLength);
    }

    #[test]
    fn overlong_frame_reports_offset_22() {
        let mut v = b"*0512 0300 0007 0064 \n".to_vec();
        v.push(b'x');
        assert_eq!(decode(&v).unwrap_err().offset, 22);
    }

    #[test]
    fn field_overflow_points_at_field_start() {
        let e = decode(b"*0512 0300 1024 0064 \n").unwrap_err();
        assert_eq!(e, FrameError { offset: 11, fault: FrameFault::FieldOverflow });
    }

    #[test]
    fn serial_times() {
        assert!((serial_tx_time(22, 38_400) - 4.583).abs() < 0.001);
        assert_eq!(serial_tx_time(0, 38_400), 0.0);
        assert!((serial_tx_time(22, 48_000) - 3.667).abs() < 0.001);
    }

    #[test]
    fn idle_device_answers_start_byte() {
        let p = ProtocolParams::default();
        let (s, o) = device_step(DeviceState::Idle, Micros(0), b'~', &p);
        assert_eq!(o, StepOutcome::Emit);
        assert_eq!(s, DeviceState::Busy { until: Micros(50_000), pending: false });
    }

    #[test]
    fn idle_device_ignores_garbage() {
        let p = ProtocolParams::default();
        assert_eq!(
            device_step(DeviceState::Idle, Micros(0), b'x', &p),
            (DeviceState::Idle, StepOutcome::Ignored)
        );
    }

    #[test]
    fn second_start_byte_waits_for_loop_delay() {
        let mut dev = CpeDevice::synthetic(ProtocolParams::default());
        let first = dev.on_byte(Micros(0), b'~');
        assert_eq!(first.len(), 1);
        assert_eq!(first[0].at, Micros(0));
        assert!(dev.on_byte(Micros(10_000), b'~').is_empty());
        // A third start byte in the same window is dropped.
        assert!(dev.on_byte(Micros(20_000), b'~').is_empty());
        assert_eq!(dev.next_wakeup(), Some(Micros(50_000)));
        assert!(dev.poll(Micros(49_999)).is_none());
        let second = dev.poll(Micros(50_000)).unwrap();
        assert_eq!(second.at, Micros(50_000));
        assert_eq!(dev.state(), DeviceState::Busy { until: Micros(100_000), pending: false });
        assert!(dev.poll(Micros(100_000)).is_none());
        assert_eq!(dev.on_byte(Micros(100_000), b'~').len(), 1);
    }

    #[test]
    fn synthetic_sensor_is_in_range_and_repeatable() {
        let mut a = SyntheticSensor::new();
        let mut b = SyntheticSensor::new();
        for _ in 0..1000 {
            let r = a.read();
            assert_eq!(r, b.read());
            assert!(r.fields().iter().all(|&v| v <= MAX_READING));
        }
    }
}
