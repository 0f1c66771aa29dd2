//! Binary sample frames and LF-terminated control lines.
//!
//! Frame layout, little-endian:
//!
//! ```text
//! A5 5A | flags u8 | seq u32 | timestamp_us u64 | 8 x i32 eeg | battery u8 | marker u8
//!       | [3 x i16 accel, if flags bit 0] | CRC-16/CCITT-FALSE u16
//! ```
//!
//! The CRC covers every preceding byte including the magic.

use std::fmt;

use crc::{Crc, CRC_16_IBM_3740};
use thiserror::Error;

pub const MAGIC: [u8; 2] = [0xA5, 0x5A];
pub const EEG_CHANNELS: usize = 8;
pub const FLAG_ACCEL: u8 = 0x01;
pub const FRAME_LEN: usize = 51;
pub const FRAME_LEN_ACCEL: usize = 57;
/// Bytes without a valid frame or line after which the stream is abandoned.
pub const MAX_DESYNC_BYTES: usize = 1 << 20;
/// Longest accepted control line, terminator included.
pub const MAX_LINE_LEN: usize = 256;

pub const COUNT_MIN: i32 = -(1 << 23);
pub const COUNT_MAX: i32 = (1 << 23) - 1;

/// Event marker vocabulary.
pub mod marker {
    pub const NONE: u8 = 0;
    pub const TRIAL_START: u8 = 1;
    pub const TRIAL_STOP: u8 = 2;
}

const CRC16: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

pub fn crc16(bytes: &[u8]) -> u16 {
    CRC16.checksum(bytes)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("resync: bad magic {0:02X?}")]
    BadMagic([u8; 2]),
    #[error("CRC mismatch: frame carries {carried:#06x}, computed {computed:#06x}")]
    BadCrc { carried: u16, computed: u16 },
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("EEG channel {channel} count {value} outside 24-bit signed range")]
    CountOutOfRange { channel: usize, value: i32 },
    #[error("battery {0}% outside 0..=100")]
    BatteryOutOfRange(u8),
    #[error("reserved flag bits set: {0:#04x}")]
    ReservedFlags(u8),
    #[error("no valid frame in {0} bytes")]
    Desync(usize),
    #[error("malformed control line: {0:?}")]
    BadLine(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StreamFrame {
    pub seq: u32,
    pub timestamp_us: u64,
    pub eeg_counts: [i32; EEG_CHANNELS],
    pub battery_pct: u8,
    pub event_marker: u8,
    pub accel: Option<[i16; 3]>,
}

impl StreamFrame {
    pub fn flags(&self) -> u8 {
        if self.accel.is_some() {
            FLAG_ACCEL
        } else {
            0
        }
    }

    pub fn encoded_len(&self) -> usize {
        frame_len(self.flags())
    }

    fn validate(&self) -> Result<(), CodecError> {
        if let Some((channel, &value)) = self
            .eeg_counts
            .iter()
            .enumerate()
            .find(|(_, v)| !(COUNT_MIN..=COUNT_MAX).contains(*v))
        {
            return Err(CodecError::CountOutOfRange { channel, value });
        }
        if self.battery_pct > 100 {
            return Err(CodecError::BatteryOutOfRange(self.battery_pct));
        }
        Ok(())
    }
}

fn frame_len(flags: u8) -> usize {
    if flags & FLAG_ACCEL != 0 {
        FRAME_LEN_ACCEL
    } else {
        FRAME_LEN
    }
}

/// Append the encoded frame to `out`.
pub fn encode_frame_into(frame: &StreamFrame, out: &mut Vec<u8>) -> Result<(), CodecError> {
    frame.validate()?;
    let start = out.len();
    out.extend_from_slice(&MAGIC);
    out.push(frame.flags());
    out.extend_from_slice(&frame.seq.to_le_bytes());
    out.extend_from_slice(&frame.timestamp_us.to_le_bytes());
    for c in frame.eeg_counts {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.push(frame.battery_pct);
    out.push(frame.event_marker);
    if let Some(accel) = frame.accel {
        for a in accel {
            out.extend_from_slice(&a.to_le_bytes());
        }
    }
    let crc = crc16(&out[start..]);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(())
}

pub fn encode_frame(frame: &StreamFrame) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(frame.encoded_len());
    encode_frame_into(frame, &mut out)?;
    Ok(out)
}

/// Decode one frame from the start of `bytes`; trailing bytes are ignored.
/// The CRC is checked before any field is interpreted.
pub fn decode_frame(bytes: &[u8]) -> Result<StreamFrame, CodecError> {
    if bytes.len() < 3 {
        return Err(CodecError::Truncated {
            needed: FRAME_LEN,
            available: bytes.len(),
        });
    }
    if bytes[..2] != MAGIC {
        return Err(CodecError::BadMagic([bytes[0], bytes[1]]));
    }
    let flags = bytes[2];
    let len = frame_len(flags);
    if bytes.len() < len {
        return Err(CodecError::Truncated {
            needed: len,
            available: bytes.len(),
        });
    }
    let body = &bytes[..len - 2];
    let carried = u16::from_le_bytes([bytes[len - 2], bytes[len - 1]]);
    let computed = crc16(body);
    if carried != computed {
        return Err(CodecError::BadCrc { carried, computed });
    }
    if flags & !FLAG_ACCEL != 0 {
        return Err(CodecError::ReservedFlags(flags));
    }

    let u32_at = |o: usize| u32::from_le_bytes(body[o..o + 4].try_into().expect("4 bytes"));
    let seq = u32_at(3);
    let timestamp_us = u64::from_le_bytes(body[7..15].try_into().expect("8 bytes"));
    let mut eeg_counts = [0i32; EEG_CHANNELS];
    for (c, v) in eeg_counts.iter_mut().enumerate() {
        *v = u32_at(15 + 4 * c) as i32;
    }
    let battery_pct = body[47];
    let event_marker = body[48];
    let accel = (flags & FLAG_ACCEL != 0).then(|| {
        let i16_at = |o: usize| i16::from_le_bytes([body[o], body[o + 1]]);
        [i16_at(49), i16_at(51), i16_at(53)]
    });
    let frame = StreamFrame {
        seq,
        timestamp_us,
        eeg_counts,
        battery_pct,
        event_marker,
        accel,
    };
    frame.validate()?;
    Ok(frame)
}

/// Text messages sharing the connection with frames.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlMessage {
    TrialStart,
    TrialStop,
    /// Device to client only.
    Decision { target_hz: f64, rho_peak: f64 },
    /// Device to client: a trial could not be decoded.
    Error(String),
}

impl ControlMessage {
    /// Line without the terminating LF.
    pub fn to_line(&self) -> String {
        self.to_string()
    }

    pub fn parse_line(line: &str) -> Result<ControlMessage, CodecError> {
        let bad = || CodecError::BadLine(line.to_string());
        let line = line.strip_suffix('\n').unwrap_or(line);
        let mut parts = line.split(' ');
        match parts.next() {
            Some("TRIAL_START") if line == "TRIAL_START" => Ok(ControlMessage::TrialStart),
            Some("TRIAL_STOP") if line == "TRIAL_STOP" => Ok(ControlMessage::TrialStop),
            Some("DECISION") => {
                let target_hz = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                let rho_peak = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
                if parts.next().is_some() {
                    return Err(bad());
                }
                Ok(ControlMessage::Decision { target_hz, rho_peak })
            }
            Some("ERROR") => Ok(ControlMessage::Error(
                line.strip_prefix("ERROR").unwrap_or("").trim_start().to_string(),
            )),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for ControlMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ControlMessage::TrialStart => f.write_str("TRIAL_START"),
            ControlMessage::TrialStop => f.write_str("TRIAL_STOP"),
            ControlMessage::Decision { target_hz, rho_peak } => {
                write!(f, "DECISION {target_hz} {rho_peak}")
            }
            ControlMessage::Error(msg) => write!(f, "ERROR {}", msg.replace('\n', " ")),
        }
    }
}

/// One unit recovered from the byte stream.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoded {
    Frame(StreamFrame),
    Control(ControlMessage),
}

const LINE_VERBS: [&[u8]; 4] = [b"DECISION ", b"ERROR", b"TRIAL_START", b"TRIAL_STOP"];

/// Incremental decoder for a mixed frame/line byte stream.
///
/// Non-fatal problems (bad magic, bad CRC, malformed line) are returned as
/// errors and decoding continues on the next call after skipping past the
/// damage. More than [`MAX_DESYNC_BYTES`] consecutive bytes without a valid
/// unit yield [`CodecError::Desync`].
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    pos: usize,
    skipped_run: usize,
    pub bytes_skipped: usize,
    pub resyncs: usize,
    pub crc_errors: usize,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        if self.pos > 0 && self.pos >= self.buf.len() / 2 {
            self.buf.drain(..self.pos);
            self.pos = 0;
        }
        self.buf.extend_from_slice(bytes);
    }

    pub fn buffered(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn skip(&mut self, n: usize) -> Result<(), CodecError> {
        self.pos += n;
        self.bytes_skipped += n;
        self.skipped_run += n;
        if self.skipped_run > MAX_DESYNC_BYTES {
            return Err(CodecError::Desync(self.skipped_run));
        }
        Ok(())
    }

    /// Decode the next unit; `None` when more bytes are needed.
    pub fn next(&mut self) -> Option<Result<Decoded, CodecError>> {
        let rest = &self.buf[self.pos..];
        if rest.is_empty() {
            return None;
        }
        if rest[0] == MAGIC[0] {
            if rest.len() < 2 {
                return None;
            }
            if rest[1] == MAGIC[1] {
                return self.next_frame();
            }
        } else if let Some(r) = self.next_line() {
            return r;
        }
        // Garbage: advance to the next candidate magic byte.
        let rest = &self.buf[self.pos..];
        let skip = rest[1..]
            .iter()
            .position(|&b| b == MAGIC[0] || b.is_ascii_uppercase())
            .map_or(rest.len(), |i| i + 1);
        let magic = [rest[0], rest.get(1).copied().unwrap_or(0)];
        self.resyncs += 1;
        Some(self.skip(skip).and(Err(CodecError::BadMagic(magic))))
    }

    fn next_frame(&mut self) -> Option<Result<Decoded, CodecError>> {
        let rest = &self.buf[self.pos..];
        if rest.len() < 3 || rest.len() < frame_len(rest[2]) {
            return None;
        }
        match decode_frame(rest) {
            Ok(frame) => {
                self.pos += frame.encoded_len();
                self.skipped_run = 0;
                Some(Ok(Decoded::Frame(frame)))
            }
            Err(e) => {
                if matches!(e, CodecError::BadCrc { .. }) {
                    self.crc_errors += 1;
                }
                Some(self.skip(1).and(Err(e)))
            }
        }
    }

    /// `None` means the bytes do not start a line; `Some(None)` means a line
    /// prefix is waiting for more bytes.
    fn next_line(&mut self) -> Option<Option<Result<Decoded, CodecError>>> {
        let rest = &self.buf[self.pos..];
        let prefix_ok = LINE_VERBS.iter().any(|verb| {
            let n = verb.len().min(rest.len());
            rest[..n] == verb[..n]
        });
        if !prefix_ok {
            return None;
        }
        let Some(end) = rest.iter().take(MAX_LINE_LEN).position(|&b| b == b'\n') else {
            return if rest.len() >= MAX_LINE_LEN { None } else { Some(None) };
        };
        let text = String::from_utf8_lossy(&rest[..end]).into_owned();
        self.pos += end + 1;
        self.skipped_run = 0;
        Some(Some(ControlMessage::parse_line(&text).map(Decoded::Control)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(seq: u32) -> StreamFrame {
        StreamFrame {
            seq,
            timestamp_us: 2000 * seq as u64,
            eeg_counts: [1, -1, COUNT_MAX, COUNT_MIN, 0, 42, -42, 7],
            battery_pct: 87,
            event_marker: marker::NONE,
            accel: None,
        }
    }

    #[test]
    fn crc_check_value() {
        assert_eq!(crc16(b"123456789"), 0x29B1);
    }

    #[test]
    fn zero_frame_layout() {
        let bytes = encode_frame(&StreamFrame::default()).unwrap();
        assert_eq!(bytes.len(), FRAME_LEN);
        assert_eq!(&bytes[..2], &MAGIC);
        let with_accel = StreamFrame { accel: Some([1, -2, 3]), ..Default::default() };
        assert_eq!(encode_frame(&with_accel).unwrap().len(), FRAME_LEN_ACCEL);
    }

    #[test]
    fn field_ranges() {
        let mut f = sample(1);
        f.eeg_counts[3] = COUNT_MAX + 1;
        assert!(matches!(encode_frame(&f), Err(CodecError::CountOutOfRange { channel: 3, .. })));
        let f = StreamFrame { battery_pct: 101, ..sample(1) };
        assert!(matches!(encode_frame(&f), Err(CodecError::BatteryOutOfRange(101))));
    }

    #[test]
    fn error_taxonomy() {
        let mut bytes = encode_frame(&sample(3)).unwrap();
        assert_eq!(decode_frame(&bytes).unwrap(), sample(3));
        assert!(matches!(decode_frame(&bytes[..50]), Err(CodecError::Truncated { .. })));
        bytes[20] ^= 0x10;
        assert!(matches!(decode_frame(&bytes), Err(CodecError::BadCrc { .. })));
        bytes[0] = 0;
        assert!(matches!(decode_frame(&bytes), Err(CodecError::BadMagic(_))));
    }

    #[test]
    fn control_lines() {
        for m in [
            ControlMessage::TrialStart,
            ControlMessage::TrialStop,
            ControlMessage::Decision { target_hz: 7.5, rho_peak: 0.931_234_5 },
            ControlMessage::Error("window too short".into()),
        ] {
            assert_eq!(ControlMessage::parse_line(&m.to_line()).unwrap(), m);
        }
        assert_eq!(
            ControlMessage::Decision { target_hz: 8.0, rho_peak: 0.5 }.to_line(),
            "DECISION 8 0.5"
        );
        assert!(ControlMessage::parse_line("DECISION 8").is_err());
        assert!(ControlMessage::parse_line("TRIAL_STARTX").is_err());
    }

    #[test]
    fn decoder_mixes_frames_and_lines() {
        let mut bytes = encode_frame(&sample(0)).unwrap();
        bytes.extend_from_slice(b"DECISION 8 0.9\n");
        encode_frame_into(&sample(1), &mut bytes).unwrap();
        let mut d = FrameDecoder::new();
        // Feed one byte at a time to exercise partial input.
        let mut out = Vec::new();
        for b in bytes {
            d.push(&[b]);
            while let Some(item) = d.next() {
                out.push(item.unwrap());
            }
        }
        assert_eq!(
            out,
            vec![
                Decoded::Frame(sample(0)),
                Decoded::Control(ControlMessage::Decision { target_hz: 8.0, rho_peak: 0.9 }),
                Decoded::Frame(sample(1)),
            ]
        );
    }

    #[test]
    fn decoder_gives_up_after_desync_limit() {
        let mut d = FrameDecoder::new();
        d.push(&vec![0x11; MAX_DESYNC_BYTES + 10]);
        let mut fatal = None;
        while let Some(item) = d.next() {
            if let Err(e @ CodecError::Desync(_)) = item {
                fatal = Some(e);
                break;
            }
        }
        assert!(fatal.is_some());
    }
}
