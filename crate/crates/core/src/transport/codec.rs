//! Spike-batch wire format.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "DPSN"
//!      4     1  version = 1
//!      5     1  msg_type (1 = spike batch, 2 = terminate, 3 = hello)
//!      6     2  source_worker      u16 LE
//!      8     4  epoch              u32 LE
//!     12     4  payload_len        u32 LE
//!     16     *  payload
//! ```
//!
//! Spike-batch payload: `count u32 LE` then `count x (gid u32 LE, step_offset u16 LE)`.
//! Terminate and hello frames carry an empty payload.

use thiserror::Error;

use crate::partition::WorkerId;

pub const MAGIC: [u8; 4] = *b"DPSN";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 16;
pub const RECORD_LEN: usize = 6;
/// Largest payload accepted from the wire (256 MiB).
pub const MAX_PAYLOAD: u32 = 256 << 20;

pub const MSG_SPIKE_BATCH: u8 = 1;
pub const MSG_TERMINATE: u8 = 2;
pub const MSG_HELLO: u8 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SpikeRecord {
    pub gid: u32,
    pub step_offset: u16,
}

/// Spikes one worker sends one peer for one epoch. Possibly empty.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SpikeBatch {
    pub epoch: u32,
    pub source_worker: WorkerId,
    /// Sorted by `(step_offset, gid)`.
    pub records: Vec<SpikeRecord>,
}

impl SpikeBatch {
    pub fn is_sorted(&self) -> bool {
        self.records
            .windows(2)
            .all(|w| (w[0].step_offset, w[0].gid) <= (w[1].step_offset, w[1].gid))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Message {
    Spikes(SpikeBatch),
    Terminate { source_worker: WorkerId, epoch: u32 },
    Hello { source_worker: WorkerId },
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodeError {
    #[error("{0} records do not fit a 32-bit count")]
    TooManyRecords(usize),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed frame at byte {offset}: {kind}")]
pub struct ParseError {
    pub offset: usize,
    pub kind: ParseErrorKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    #[error("truncated (need {needed} bytes, have {available})")]
    Truncated { needed: usize, available: usize },
    #[error("bad magic {0:02x?}")]
    Magic([u8; 4]),
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("unknown message type {0}")]
    MessageType(u8),
    #[error("payload length {declared} disagrees with {actual}")]
    Length { declared: usize, actual: usize },
    #[error("payload length {0} exceeds limit")]
    Oversized(u32),
}

fn err(offset: usize, kind: ParseErrorKind) -> ParseError {
    ParseError { offset, kind }
}

/// Fixed-size frame header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub msg_type: u8,
    pub source_worker: WorkerId,
    pub epoch: u32,
    pub payload_len: u32,
}

impl FrameHeader {
    pub fn write(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.push(VERSION);
        out.push(self.msg_type);
        out.extend_from_slice(&self.source_worker.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&self.payload_len.to_le_bytes());
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, ParseError> {
        if bytes.len() < HEADER_LEN {
            return Err(err(
                bytes.len(),
                ParseErrorKind::Truncated {
                    needed: HEADER_LEN,
                    available: bytes.len(),
                },
            ));
        }
        let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(err(0, ParseErrorKind::Magic(magic)));
        }
        if bytes[4] != VERSION {
            return Err(err(4, ParseErrorKind::Version(bytes[4])));
        }
        let msg_type = bytes[5];
        if !matches!(msg_type, MSG_SPIKE_BATCH | MSG_TERMINATE | MSG_HELLO) {
            return Err(err(5, ParseErrorKind::MessageType(msg_type)));
        }
        let payload_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
        if payload_len > MAX_PAYLOAD {
            return Err(err(12, ParseErrorKind::Oversized(payload_len)));
        }
        Ok(FrameHeader {
            msg_type,
            source_worker: u16::from_le_bytes(bytes[6..8].try_into().unwrap()),
            epoch: u32::from_le_bytes(bytes[8..12].try_into().unwrap()),
            payload_len,
        })
    }
}

/// Encodes a spike batch as one frame.
pub fn encode(batch: &SpikeBatch) -> Result<Vec<u8>, EncodeError> {
    debug_assert!(batch.is_sorted());
    let count = u32::try_from(batch.records.len())
        .map_err(|_| EncodeError::TooManyRecords(batch.records.len()))?;
    let payload_len = 4 + batch.records.len() * RECORD_LEN;
    let payload_len =
        u32::try_from(payload_len).map_err(|_| EncodeError::TooManyRecords(batch.records.len()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload_len as usize);
    FrameHeader {
        msg_type: MSG_SPIKE_BATCH,
        source_worker: batch.source_worker,
        epoch: batch.epoch,
        payload_len,
    }
    .write(&mut out);
    out.extend_from_slice(&count.to_le_bytes());
    for r in &batch.records {
        out.extend_from_slice(&r.gid.to_le_bytes());
        out.extend_from_slice(&r.step_offset.to_le_bytes());
    }
    Ok(out)
}

pub fn encode_message(msg: &Message) -> Result<Vec<u8>, EncodeError> {
    let (msg_type, source_worker, epoch) = match *msg {
        Message::Spikes(ref batch) => return encode(batch),
        Message::Terminate {
            source_worker,
            epoch,
        } => (MSG_TERMINATE, source_worker, epoch),
        Message::Hello { source_worker } => (MSG_HELLO, source_worker, 0),
    };
    let mut out = Vec::with_capacity(HEADER_LEN);
    FrameHeader {
        msg_type,
        source_worker,
        epoch,
        payload_len: 0,
    }
    .write(&mut out);
    Ok(out)
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_message(bytes: &[u8]) -> Result<Message, ParseError> {
    let header = FrameHeader::parse(bytes)?;
    let declared = header.payload_len as usize;
    let available = bytes.len() - HEADER_LEN;
    if available < declared {
        return Err(err(
            bytes.len(),
            ParseErrorKind::Truncated {
                needed: HEADER_LEN + declared,
                available: bytes.len(),
            },
        ));
    }
    if available > declared {
        return Err(err(
            12,
            ParseErrorKind::Length {
                declared,
                actual: available,
            },
        ));
    }
    let payload = &bytes[HEADER_LEN..];
    match header.msg_type {
        MSG_SPIKE_BATCH => {
            if payload.len() < 4 {
                return Err(err(
                    bytes.len(),
                    ParseErrorKind::Truncated {
                        needed: HEADER_LEN + 4,
                        available: bytes.len(),
                    },
                ));
            }
            let count = u32::from_le_bytes(payload[0..4].try_into().unwrap()) as usize;
            let expected = count
                .checked_mul(RECORD_LEN)
                .and_then(|n| n.checked_add(4))
                .unwrap_or(usize::MAX);
            if expected != payload.len() {
                return Err(err(
                    HEADER_LEN,
                    ParseErrorKind::Length {
                        declared: expected,
                        actual: payload.len(),
                    },
                ));
            }
            let records = payload[4..]
                .chunks_exact(RECORD_LEN)
                .map(|c| SpikeRecord {
                    gid: u32::from_le_bytes(c[0..4].try_into().unwrap()),
                    step_offset: u16::from_le_bytes(c[4..6].try_into().unwrap()),
                })
                .collect();
            Ok(Message::Spikes(SpikeBatch {
                epoch: header.epoch,
                source_worker: header.source_worker,
                records,
            }))
        }
        other => {
            if declared != 0 {
                return Err(err(
                    12,
                    ParseErrorKind::Length {
                        declared,
                        actual: 0,
                    },
                ));
            }
            Ok(match other {
                MSG_TERMINATE => Message::Terminate {
                    source_worker: header.source_worker,
                    epoch: header.epoch,
                },
                _ => Message::Hello {
                    source_worker: header.source_worker,
                },
            })
        }
    }
}

/// Decodes a frame that must be a spike batch.
pub fn decode(bytes: &[u8]) -> Result<SpikeBatch, ParseError> {
    match decode_message(bytes)? {
        Message::Spikes(batch) => Ok(batch),
        _ => Err(err(5, ParseErrorKind::MessageType(bytes[5]))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_batch_bytes() {
        let bytes = encode(&SpikeBatch::default()).unwrap();
        assert_eq!(
            bytes,
            [
                0x44, 0x50, 0x53, 0x4E, 0x01, 0x01, 0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x04, 0x00,
                0x00, 0x00, 0x00, 0x00, 0x00, 0x00
            ]
        );
    }

    #[test]
    fn one_record_payload() {
        let batch = SpikeBatch {
            epoch: 0,
            source_worker: 0,
            records: vec![SpikeRecord {
                gid: 1,
                step_offset: 2,
            }],
        };
        let bytes = encode(&batch).unwrap();
        assert_eq!(&bytes[12..16], &[0x0A, 0, 0, 0]);
        assert_eq!(
            &bytes[HEADER_LEN..],
            &[0x01, 0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x02, 0x00]
        );
    }

    #[test]
    fn rejects_truncated() {
        let batch = SpikeBatch {
            epoch: 3,
            source_worker: 1,
            records: vec![SpikeRecord {
                gid: 9,
                step_offset: 0,
            }],
        };
        let bytes = encode(&batch).unwrap();
        for cut in [0, 3, 15, 19, bytes.len() - 1] {
            let e = decode(&bytes[..cut]).unwrap_err();
            assert!(
                matches!(e.kind, ParseErrorKind::Truncated { .. }),
                "{cut}: {e}"
            );
        }
    }

    #[test]
    fn rejects_bad_header_fields() {
        let mut bytes = encode(&SpikeBatch::default()).unwrap();
        bytes[0] = b'X';
        assert_eq!(decode(&bytes).unwrap_err().offset, 0);
        let mut bytes = encode(&SpikeBatch::default()).unwrap();
        bytes[4] = 2;
        assert_eq!(decode(&bytes).unwrap_err().kind, ParseErrorKind::Version(2));
        let mut bytes = encode(&SpikeBatch::default()).unwrap();
        bytes[5] = 9;
        assert_eq!(
            decode(&bytes).unwrap_err().kind,
            ParseErrorKind::MessageType(9)
        );
        let mut bytes = encode(&SpikeBatch::default()).unwrap();
        bytes.push(0);
        assert!(matches!(
            decode(&bytes).unwrap_err().kind,
            ParseErrorKind::Length { .. }
        ));
    }

    #[test]
    fn count_must_match_payload() {
        let mut bytes = encode(&SpikeBatch::default()).unwrap();
        bytes[16] = 1;
        assert_eq!(decode(&bytes).unwrap_err().offset, HEADER_LEN);
    }

    #[test]
    fn control_messages_round_trip() {
        for msg in [
            Message::Terminate {
                source_worker: 7,
                epoch: 99,
            },
            Message::Hello { source_worker: 3 },
        ] {
            let bytes = encode_message(&msg).unwrap();
            assert_eq!(bytes.len(), HEADER_LEN);
            assert_eq!(decode_message(&bytes).unwrap(), msg);
        }
    }

    fn batch_strategy() -> impl Strategy<Value = SpikeBatch> {
        (
            any::<u32>(),
            any::<u16>(),
            prop::collection::vec((any::<u32>(), any::<u16>()), 0..200),
        )
            .prop_map(|(epoch, source_worker, raw)| {
                let mut records: Vec<SpikeRecord> = raw
                    .into_iter()
                    .map(|(gid, step_offset)| SpikeRecord { gid, step_offset })
                    .collect();
                records.sort_by_key(|r| (r.step_offset, r.gid));
                SpikeBatch {
                    epoch,
                    source_worker,
                    records,
                }
            })
    }

    proptest! {
        #[test]
        fn round_trip(batch in batch_strategy()) {
            let bytes = encode(&batch).unwrap();
            prop_assert_eq!(bytes.len(), HEADER_LEN + 4 + RECORD_LEN * batch.records.len());
            prop_assert_eq!(decode(&bytes).unwrap(), batch);
        }

        #[test]
        fn encoding_is_injective(a in batch_strategy(), b in batch_strategy()) {
            prop_assume!(a != b);
            prop_assert_ne!(encode(&a).unwrap(), encode(&b).unwrap());
        }

        #[test]
        fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode_message(&bytes);
        }
    }
}
