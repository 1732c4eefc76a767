//! Binary uplink framing.
//!
//! Every frame is fixed-size for its kind and big-endian throughout:
//!
//! ```text
//! 0..2   magic "GD" (0x47 0x44)
//! 2      version (1)
//! 3      kind: 0x01 Hello, 0x02 Telemetry, 0x03 Ack
//! 4..6   node_id  u16
//! 6..10  seq      u32
//! 10..18 ts_ms    u64
//! -- Telemetry only --
//! 18..20 raw_adc    u16
//! 20..24 ppm_centi  u32
//! 24     status_code
//! -- all kinds --
//! last 2 bytes: CRC-16/CCITT-FALSE over everything before it
//! ```
//!
//! There is no length prefix. A reader that hits a bad magic or a CRC
//! failure drops one byte and scans forward for the next magic.

use alloc::vec::Vec;

use thiserror::Error;

use crate::aqi::{classify_centi, AqiStatus};
use crate::sensor::adc_max;

pub const MAGIC: [u8; 2] = [0x47, 0x44];
pub const VERSION: u8 = 1;

const HEADER_LEN: usize = 18;
const CRC_LEN: usize = 2;
pub const HELLO_LEN: usize = HEADER_LEN + CRC_LEN;
pub const ACK_LEN: usize = HEADER_LEN + CRC_LEN;
pub const TELEMETRY_LEN: usize = HEADER_LEN + 7 + CRC_LEN;
/// Longest frame of any kind.
pub const MAX_FRAME_LEN: usize = TELEMETRY_LEN;

/// CRC-16/CCITT-FALSE: poly 0x1021, init 0xFFFF, no reflection, no final XOR.
pub fn crc16(bytes: &[u8]) -> u16 {
    let mut crc: u16 = 0xFFFF;
    for &byte in bytes {
        crc ^= u16::from(byte) << 8;
        for _ in 0..8 {
            crc = if crc & 0x8000 != 0 {
                (crc << 1) ^ 0x1021
            } else {
                crc << 1
            };
        }
    }
    crc
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameKind {
    Hello = 0x01,
    Telemetry = 0x02,
    Ack = 0x03,
}

impl FrameKind {
    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0x01 => Some(FrameKind::Hello),
            0x02 => Some(FrameKind::Telemetry),
            0x03 => Some(FrameKind::Ack),
            _ => None,
        }
    }

    pub fn encoded_len(self) -> usize {
        match self {
            FrameKind::Hello => HELLO_LEN,
            FrameKind::Telemetry => TELEMETRY_LEN,
            FrameKind::Ack => ACK_LEN,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Telemetry {
    pub raw_adc: u16,
    /// PPM x 100, rounded.
    pub ppm_centi: u32,
    pub status_code: u8,
}

impl Telemetry {
    /// Builds a payload whose status code is the classification of `ppm_centi`.
    pub fn classified(raw_adc: u16, ppm_centi: u32) -> Self {
        Telemetry {
            raw_adc,
            ppm_centi,
            status_code: classify_centi(ppm_centi).code(),
        }
    }

    pub fn ppm(&self) -> f64 {
        f64::from(self.ppm_centi) / 100.0
    }

    pub fn is_consistent(&self) -> bool {
        classify_centi(self.ppm_centi).code() == self.status_code
    }

    pub fn status(&self) -> Option<AqiStatus> {
        AqiStatus::from_code(self.status_code).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FrameBody {
    Hello,
    Telemetry(Telemetry),
    Ack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Frame {
    pub node_id: u16,
    pub seq: u32,
    pub ts_ms: u64,
    pub body: FrameBody,
}

impl Frame {
    pub fn hello(node_id: u16, seq: u32, ts_ms: u64) -> Self {
        Frame {
            node_id,
            seq,
            ts_ms,
            body: FrameBody::Hello,
        }
    }

    pub fn ack(node_id: u16, seq: u32, ts_ms: u64) -> Self {
        Frame {
            node_id,
            seq,
            ts_ms,
            body: FrameBody::Ack,
        }
    }

    pub fn telemetry(node_id: u16, seq: u32, ts_ms: u64, payload: Telemetry) -> Self {
        Frame {
            node_id,
            seq,
            ts_ms,
            body: FrameBody::Telemetry(payload),
        }
    }

    pub fn kind(&self) -> FrameKind {
        match self.body {
            FrameBody::Hello => FrameKind::Hello,
            FrameBody::Telemetry(_) => FrameKind::Telemetry,
            FrameBody::Ack => FrameKind::Ack,
        }
    }

    pub fn encoded_len(&self) -> usize {
        self.kind().encoded_len()
    }

    /// Semantic checks on top of the structural ones: ADC range and
    /// status/ppm agreement.
    pub fn validate(&self, adc_bits: u8) -> Result<(), FrameError> {
        if let FrameBody::Telemetry(t) = self.body {
            let max = adc_max(adc_bits);
            if t.raw_adc > max {
                return Err(FrameError::AdcRange {
                    raw: t.raw_adc,
                    max,
                });
            }
            if !t.is_consistent() {
                return Err(FrameError::Inconsistent {
                    status_code: t.status_code,
                    ppm_centi: t.ppm_centi,
                });
            }
        }
        Ok(())
    }
}

/// Frame contents violate the frame invariants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("raw ADC {raw} exceeds {max}")]
    AdcRange { raw: u16, max: u16 },
    #[error("status code 0x{status_code:02x} does not match ppm_centi {ppm_centi}")]
    Inconsistent { status_code: u8, ppm_centi: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum DecodeError {
    /// Caller should skip a byte (or [`resync_scan`]) and retry.
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("unknown frame kind 0x{0:02x}")]
    Kind(u8),
    #[error("crc mismatch: frame says 0x{expected:04x}, computed 0x{actual:04x}")]
    Integrity { expected: u16, actual: u16 },
    /// Not an error as such; at least `needed` bytes must be buffered.
    #[error("need {needed} bytes")]
    Incomplete { needed: usize },
    #[error(transparent)]
    Invalid(#[from] FrameError),
}

/// Appends the encoding of `frame` to `out`.
pub fn encode_into(frame: &Frame, adc_bits: u8, out: &mut Vec<u8>) -> Result<(), FrameError> {
    frame.validate(adc_bits)?;
    let start = out.len();
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(frame.kind() as u8);
    out.extend_from_slice(&frame.node_id.to_be_bytes());
    out.extend_from_slice(&frame.seq.to_be_bytes());
    out.extend_from_slice(&frame.ts_ms.to_be_bytes());
    if let FrameBody::Telemetry(t) = frame.body {
        out.extend_from_slice(&t.raw_adc.to_be_bytes());
        out.extend_from_slice(&t.ppm_centi.to_be_bytes());
        out.push(t.status_code);
    }
    let crc = crc16(&out[start..]);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(())
}

pub fn encode(frame: &Frame, adc_bits: u8) -> Result<Vec<u8>, FrameError> {
    let mut out = Vec::with_capacity(frame.encoded_len());
    encode_into(frame, adc_bits, &mut out)?;
    Ok(out)
}

/// Structural decode: magic, version, kind, length and CRC. Telemetry
/// contents are not checked; see [`Frame::validate`].
pub fn decode_frame(bytes: &[u8]) -> Result<(Frame, usize), DecodeError> {
    match bytes {
        [] => {
            return Err(DecodeError::Incomplete {
                needed: MAGIC.len(),
            })
        }
        [b0] if *b0 == MAGIC[0] => {
            return Err(DecodeError::Incomplete {
                needed: MAGIC.len(),
            })
        }
        [b0, ..] if *b0 != MAGIC[0] => return Err(DecodeError::BadMagic),
        [_, b1, ..] if *b1 != MAGIC[1] => return Err(DecodeError::BadMagic),
        _ => {}
    }
    if bytes.len() < 4 {
        return Err(DecodeError::Incomplete { needed: 4 });
    }
    if bytes[2] != VERSION {
        return Err(DecodeError::Version(bytes[2]));
    }
    let kind = FrameKind::from_byte(bytes[3]).ok_or(DecodeError::Kind(bytes[3]))?;
    let len = kind.encoded_len();
    if bytes.len() < len {
        return Err(DecodeError::Incomplete { needed: len });
    }
    let body = &bytes[..len - CRC_LEN];
    let expected = u16::from_be_bytes([bytes[len - 2], bytes[len - 1]]);
    let actual = crc16(body);
    if expected != actual {
        return Err(DecodeError::Integrity { expected, actual });
    }

    let node_id = u16::from_be_bytes(body[4..6].try_into().unwrap());
    let seq = u32::from_be_bytes(body[6..10].try_into().unwrap());
    let ts_ms = u64::from_be_bytes(body[10..18].try_into().unwrap());
    let body = match kind {
        FrameKind::Hello => FrameBody::Hello,
        FrameKind::Ack => FrameBody::Ack,
        FrameKind::Telemetry => FrameBody::Telemetry(Telemetry {
            raw_adc: u16::from_be_bytes(body[18..20].try_into().unwrap()),
            ppm_centi: u32::from_be_bytes(body[20..24].try_into().unwrap()),
            status_code: body[24],
        }),
    };
    Ok((
        Frame {
            node_id,
            seq,
            ts_ms,
            body,
        },
        len,
    ))
}

/// Full decode, returning the frame and the number of bytes it occupied.
pub fn decode(bytes: &[u8], expected_adc_bits: u8) -> Result<(Frame, usize), DecodeError> {
    let (frame, used) = decode_frame(bytes)?;
    frame.validate(expected_adc_bits)?;
    Ok((frame, used))
}

/// Offset of the first magic sequence in `buf`, or `buf.len()` if none.
///
/// A lone trailing `0x47` is reported as a candidate since its second byte
/// may still be in flight.
pub fn resync_scan(buf: &[u8]) -> usize {
    let mut i = 0;
    while i < buf.len() {
        if buf[i] == MAGIC[0] && (i + 1 == buf.len() || buf[i + 1] == MAGIC[1]) {
            return i;
        }
        i += 1;
    }
    buf.len()
}

/// Incremental decoder over a byte stream that skips past garbage and
/// corrupted frames.
#[derive(Debug, Default)]
pub struct StreamDecoder {
    buf: Vec<u8>,
    skipped: u64,
    corrupt: u64,
}

/// One item pulled out of a [`StreamDecoder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamItem {
    Frame(Frame),
    /// A frame-shaped region failed version, kind or CRC checks and was skipped.
    Rejected(DecodeError),
}

impl StreamDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes discarded while hunting for a magic sequence.
    pub fn skipped_bytes(&self) -> u64 {
        self.skipped
    }

    pub fn rejected_frames(&self) -> u64 {
        self.corrupt
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// Next structurally valid frame or rejection, `None` once more bytes are needed.
    pub fn next_item(&mut self) -> Option<StreamItem> {
        loop {
            let start = resync_scan(&self.buf);
            if start > 0 {
                self.skipped += start as u64;
                self.buf.drain(..start);
            }
            match decode_frame(&self.buf) {
                Ok((frame, used)) => {
                    self.buf.drain(..used);
                    return Some(StreamItem::Frame(frame));
                }
                Err(DecodeError::Incomplete { .. }) => return None,
                Err(DecodeError::BadMagic) => {
                    self.skipped += 1;
                    self.buf.drain(..1);
                }
                Err(e) => {
                    self.corrupt += 1;
                    self.buf.drain(..1);
                    return Some(StreamItem::Rejected(e));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample_telemetry() -> Frame {
        Frame::telemetry(7, 42, 1_700_000_000_000, Telemetry::classified(512, 10_000))
    }

    #[test]
    fn crc_reference_values() {
        assert_eq!(crc16(b"123456789"), 0x29B1);
        assert_eq!(crc16(&[]), 0xFFFF);
        let data = b"gasduino";
        assert_eq!(crc16(data), crc16(data));
    }

    #[test]
    fn hello_layout() {
        let bytes = encode(&Frame::hello(1, 0, 0), 10).unwrap();
        assert_eq!(bytes.len(), HELLO_LEN);
        assert_eq!(&bytes[..6], &[0x47, 0x44, 0x01, 0x01, 0x00, 0x01]);
        assert!(bytes[6..18].iter().all(|&b| b == 0));
        // Frozen from an independent CRC-CCITT implementation.
        assert_eq!(&bytes[18..], &[0x36, 0xD6]);
    }

    #[test]
    fn telemetry_layout() {
        let bytes = encode(&sample_telemetry(), 10).unwrap();
        assert_eq!(bytes.len(), TELEMETRY_LEN);
        let expected_body = [
            0x47, 0x44, 0x01, 0x02, 0x00, 0x07, 0x00, 0x00, 0x00, 0x2a, 0x00, 0x00, 0x01, 0x8b,
            0xcf, 0xe5, 0x68, 0x00, 0x02, 0x00, 0x00, 0x00, 0x27, 0x10, 0x01,
        ];
        assert_eq!(&bytes[..25], &expected_body);
        assert_eq!(&bytes[20..24], &[0x00, 0x00, 0x27, 0x10]);
        assert_eq!(&bytes[25..], &[0xB6, 0x10]);
    }

    #[test]
    fn ack_size() {
        assert_eq!(encode(&Frame::ack(3, 9, 5), 10).unwrap().len(), ACK_LEN);
    }

    #[test]
    fn roundtrip() {
        let f = sample_telemetry();
        let bytes = encode(&f, 10).unwrap();
        assert_eq!(decode(&bytes, 10).unwrap(), (f, TELEMETRY_LEN));
    }

    #[test]
    fn encode_rejects_invalid_frames() {
        let f = Frame::telemetry(
            1,
            0,
            0,
            Telemetry {
                raw_adc: 1024,
                ppm_centi: 100,
                status_code: 0,
            },
        );
        assert_eq!(
            encode(&f, 10),
            Err(FrameError::AdcRange {
                raw: 1024,
                max: 1023
            })
        );
        let f = Frame::telemetry(
            1,
            0,
            0,
            Telemetry {
                raw_adc: 10,
                ppm_centi: 17_500,
                status_code: 0,
            },
        );
        assert!(matches!(
            encode(&f, 10),
            Err(FrameError::Inconsistent { .. })
        ));
    }

    #[test]
    fn decode_errors() {
        let good = encode(&sample_telemetry(), 10).unwrap();
        assert_eq!(decode(&[0x00], 10), Err(DecodeError::BadMagic));
        assert_eq!(decode(&[0x47, 0x00], 10), Err(DecodeError::BadMagic));
        assert_eq!(decode(&[], 10), Err(DecodeError::Incomplete { needed: 2 }));
        assert_eq!(
            decode(&good[..10], 10),
            Err(DecodeError::Incomplete {
                needed: TELEMETRY_LEN
            })
        );

        let mut v = good.clone();
        v[2] = 2;
        assert_eq!(decode(&v, 10), Err(DecodeError::Version(2)));
        let mut v = good.clone();
        v[3] = 0x09;
        assert_eq!(decode(&v, 10), Err(DecodeError::Kind(0x09)));

        // Valid CRC but a lying status byte.
        let mut v = good[..25].to_vec();
        v[24] = 0;
        v[22] = 0x44;
        v[23] = 0x5c; // 17500 centi-ppm
        let crc = crc16(&v);
        v.extend_from_slice(&crc.to_be_bytes());
        assert!(matches!(
            decode(&v, 10),
            Err(DecodeError::Invalid(FrameError::Inconsistent { .. }))
        ));
        assert!(decode_frame(&v).is_ok());

        // 8-bit receiver rejects a 10-bit reading.
        assert!(matches!(
            decode(&good, 8),
            Err(DecodeError::Invalid(FrameError::AdcRange { .. }))
        ));
    }

    #[test]
    fn every_single_bit_flip_is_rejected() {
        for f in [
            sample_telemetry(),
            Frame::hello(1, 0, 0),
            Frame::ack(65535, u32::MAX, u64::MAX),
        ] {
            let good = encode(&f, 10).unwrap();
            for bit in 0..good.len() * 8 {
                let mut v = good.clone();
                v[bit / 8] ^= 1 << (bit % 8);
                if let Ok((g, _)) = decode(&v, 10) {
                    panic!("bit {bit} flip decoded as {g:?}");
                }
            }
        }
    }

    #[test]
    fn resync() {
        let frame = encode(&sample_telemetry(), 10).unwrap();
        let mut buf = vec![0x00, 0x13, 0x47, 0x00, 0xff];
        let garbage = buf.len();
        buf.extend_from_slice(&frame);
        assert_eq!(resync_scan(&buf), garbage);
        assert_eq!(resync_scan(&frame), 0);
        assert_eq!(resync_scan(&[1, 2, 3, 4]), 4);
        assert_eq!(resync_scan(&[]), 0);
    }

    #[test]
    fn stream_decoder_skips_garbage_and_corruption() {
        let a = sample_telemetry();
        let b = Frame::hello(2, 3, 4);
        let mut bytes = vec![0xde, 0xad];
        bytes.extend(encode(&a, 10).unwrap());
        let mut broken = encode(&b, 10).unwrap();
        broken[12] ^= 0x10;
        bytes.extend(broken);
        bytes.extend(encode(&b, 10).unwrap());

        let mut dec = StreamDecoder::new();
        let mut frames = vec![];
        let mut rejected = 0;
        // Feed in awkward chunk sizes.
        for chunk in bytes.chunks(5) {
            dec.push(chunk);
            while let Some(item) = dec.next_item() {
                match item {
                    StreamItem::Frame(f) => frames.push(f),
                    StreamItem::Rejected(_) => rejected += 1,
                }
            }
        }
        assert_eq!(frames, vec![a, b]);
        assert!(rejected >= 1);
        assert_eq!(dec.buffered(), 0);
    }
}
