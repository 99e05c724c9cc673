//! Length-prefixed frame codec.
//!
//! ```text
//! +----------------+---------+----------+------------------+-----------------+
//! | length (u32 BE)| version | msg_type | correlation (u64 BE) | JSON payload |
//! +----------------+---------+----------+------------------+-----------------+
//! ```
//!
//! `length` counts everything after the length field. Payload keys are
//! emitted in lexicographic order, so equal messages encode to equal bytes.

use thiserror::Error;

use super::msg::{CmiMessage, MsgType, CMI_VERSION};

pub const LENGTH_BYTES: usize = 4;
/// version + msg_type + correlation id.
pub const HEADER_BYTES: usize = 10;
pub const MAX_FRAME_BODY: usize = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EncodeError {
    #[error("schema violation for {msg_type:?}: {reason}")]
    SchemaViolation { msg_type: MsgType, reason: String },
    #[error("frame body of {0} bytes exceeds the 1 MiB cap")]
    FrameTooLarge(usize),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DecodeError {
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("unknown message type 0x{0:02X}")]
    UnknownMsgType(u8),
    #[error("malformed payload: {0}")]
    MalformedPayload(String),
    #[error("frame body of {0} bytes exceeds the 1 MiB cap")]
    FrameTooLarge(usize),
}

/// Result of looking at the front of a byte buffer.
#[derive(Debug, Clone, PartialEq)]
pub enum Decoded {
    Frame { msg: CmiMessage, consumed: usize },
    NeedMoreBytes,
    /// The frame was rejected. `consumed` is the full frame length and may
    /// exceed the buffer for oversized frames; the remainder must be skipped
    /// as it arrives.
    Rejected { error: DecodeError, consumed: usize },
}

pub fn encode_frame(msg: &CmiMessage) -> Result<Vec<u8>, EncodeError> {
    msg.validate().map_err(|reason| EncodeError::SchemaViolation {
        msg_type: msg.msg_type(),
        reason,
    })?;
    let payload = serde_json::to_vec(&msg.payload_value()).expect("JSON value serializes");
    let body_len = HEADER_BYTES + payload.len();
    if body_len > MAX_FRAME_BODY {
        return Err(EncodeError::FrameTooLarge(body_len));
    }
    let mut out = Vec::with_capacity(LENGTH_BYTES + body_len);
    out.extend_from_slice(&(body_len as u32).to_be_bytes());
    out.push(CMI_VERSION);
    out.push(msg.msg_type().code());
    out.extend_from_slice(&msg.correlation_id.to_be_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

/// Decodes at most one frame from the front of `buf`. Never panics.
pub fn decode_frame(buf: &[u8]) -> Decoded {
    let Some(len_bytes) = buf.get(..LENGTH_BYTES) else {
        return Decoded::NeedMoreBytes;
    };
    let body_len = u32::from_be_bytes(len_bytes.try_into().expect("4 bytes")) as usize;
    let consumed = LENGTH_BYTES + body_len;
    if body_len > MAX_FRAME_BODY {
        return Decoded::Rejected {
            error: DecodeError::FrameTooLarge(body_len),
            consumed,
        };
    }
    let Some(body) = buf.get(LENGTH_BYTES..consumed) else {
        return Decoded::NeedMoreBytes;
    };
    let reject = |error| Decoded::Rejected { error, consumed };
    if body_len < HEADER_BYTES {
        return reject(DecodeError::MalformedPayload(format!(
            "body of {body_len} bytes is shorter than the {HEADER_BYTES}-byte header"
        )));
    }
    if body[0] != CMI_VERSION {
        return reject(DecodeError::BadVersion(body[0]));
    }
    let Some(msg_type) = MsgType::from_code(body[1]) else {
        return reject(DecodeError::UnknownMsgType(body[1]));
    };
    let correlation_id = u64::from_be_bytes(body[2..HEADER_BYTES].try_into().expect("8 bytes"));
    match CmiMessage::from_payload(msg_type, correlation_id, &body[HEADER_BYTES..]) {
        Ok(msg) => Decoded::Frame { msg, consumed },
        Err(e) => reject(DecodeError::MalformedPayload(e)),
    }
}

/// Byte accounting for a [`FrameDecoder`]; `fed = accepted + rejected +
/// buffered` is an invariant. Bytes still to be skipped have not been fed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecoderStats {
    pub bytes_fed: u64,
    pub bytes_accepted: u64,
    pub bytes_rejected: u64,
    pub frames_accepted: u64,
    pub frames_rejected: u64,
}

/// Streaming decoder over an arbitrary chunking of the byte stream.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    skip: usize,
    stats: DecoderStats,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.stats.bytes_fed += bytes.len() as u64;
        let skipped = self.skip.min(bytes.len());
        self.skip -= skipped;
        self.stats.bytes_rejected += skipped as u64;
        self.buf.extend_from_slice(&bytes[skipped..]);
    }

    /// Next decoded frame, a rejection, or `None` when more bytes are needed.
    pub fn next_frame(&mut self) -> Option<Result<CmiMessage, DecodeError>> {
        match decode_frame(&self.buf) {
            Decoded::NeedMoreBytes => None,
            Decoded::Frame { msg, consumed } => {
                self.buf.drain(..consumed);
                self.stats.bytes_accepted += consumed as u64;
                self.stats.frames_accepted += 1;
                Some(Ok(msg))
            }
            Decoded::Rejected { error, consumed } => {
                let here = consumed.min(self.buf.len());
                self.buf.drain(..here);
                self.skip = consumed - here;
                self.stats.bytes_rejected += here as u64;
                self.stats.frames_rejected += 1;
                Some(Err(error))
            }
        }
    }

    /// Pushes `bytes` and drains every complete frame.
    pub fn feed(&mut self, bytes: &[u8]) -> Vec<Result<CmiMessage, DecodeError>> {
        self.push(bytes);
        std::iter::from_fn(|| self.next_frame()).collect()
    }

    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    pub fn pending_skip(&self) -> usize {
        self.skip
    }

    pub fn stats(&self) -> DecoderStats {
        self.stats
    }

    /// Checks the byte accounting invariant.
    pub fn accounted(&self) -> bool {
        let s = self.stats;
        s.bytes_fed == s.bytes_accepted + s.bytes_rejected + self.buf.len() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmi::msg::{CmiBody, FlowSpec, Hello};
    use crate::flow::{Direction, FlowOutput};

    /// Hand-rolled framing used as the reference for the golden vectors.
    fn reference_frame(version: u8, code: u8, corr: u64, payload: &str) -> Vec<u8> {
        let body_len = 1 + 1 + 8 + payload.len();
        let mut v = vec![
            (body_len >> 24) as u8,
            (body_len >> 16) as u8,
            (body_len >> 8) as u8,
            body_len as u8,
            version,
            code,
        ];
        for shift in (0..8).rev() {
            v.push((corr >> (shift * 8)) as u8);
        }
        v.extend(payload.bytes());
        v
    }

    fn hello0() -> CmiMessage {
        CmiMessage::new(0, CmiBody::Hello(Hello::default()))
    }

    #[test]
    fn hello_golden_bytes() {
        let expected: [u8; 16] = [
            0x00, 0x00, 0x00, 0x0C, 0x01, 0x01, 0, 0, 0, 0, 0, 0, 0, 0, 0x7B, 0x7D,
        ];
        assert_eq!(reference_frame(1, 0x01, 0, "{}"), expected);
        assert_eq!(encode_frame(&hello0()).unwrap(), expected);
        assert_eq!(
            decode_frame(&expected),
            Decoded::Frame {
                msg: hello0(),
                consumed: 16
            }
        );
    }

    #[test]
    fn flow_add_length_is_header_plus_payload() {
        let msg = CmiMessage::new(
            9,
            CmiBody::FlowAdd(FlowSpec {
                rule: 1,
                ue: 3,
                tc: "be".into(),
                dir: Direction::Up,
                rate_mbps: 5.0,
                priority: 2,
                latency_us: 20_000,
                slice: "default".into(),
                out: FlowOutput::N3(17),
                buffer: false,
                chain: None,
            }),
        );
        let payload = r#"{"dir":"UP","latency_us":20000,"out":"N3:17","priority":2,"rate_mbps":5.0,"rule":1,"slice":"default","tc":"be","ue":3}"#;
        let frame = encode_frame(&msg).unwrap();
        assert_eq!(frame, reference_frame(1, 0x20, 9, payload));
        let len = u32::from_be_bytes(frame[..4].try_into().unwrap()) as usize;
        assert_eq!(len, 10 + payload.len());
    }

    #[test]
    fn short_input_needs_more() {
        assert_eq!(decode_frame(&[0, 0, 0]), Decoded::NeedMoreBytes);
        let f = encode_frame(&hello0()).unwrap();
        assert_eq!(decode_frame(&f[..15]), Decoded::NeedMoreBytes);
    }

    #[test]
    fn rejections_consume_the_frame() {
        let unknown = reference_frame(1, 0xEE, 5, "{}");
        assert_eq!(
            decode_frame(&unknown),
            Decoded::Rejected {
                error: DecodeError::UnknownMsgType(0xEE),
                consumed: 16
            }
        );
        let bad_ver = reference_frame(2, 0x01, 5, "{}");
        assert!(matches!(
            decode_frame(&bad_ver),
            Decoded::Rejected {
                error: DecodeError::BadVersion(2),
                consumed: 16
            }
        ));
        let bad_json = reference_frame(1, 0x01, 5, "{");
        assert!(matches!(
            decode_frame(&bad_json),
            Decoded::Rejected {
                error: DecodeError::MalformedPayload(_),
                consumed: 15
            }
        ));
        let tiny = [0, 0, 0, 2, 1, 1];
        assert!(matches!(
            decode_frame(&tiny),
            Decoded::Rejected {
                error: DecodeError::MalformedPayload(_),
                consumed: 6
            }
        ));
    }

    #[test]
    fn oversized_frame_is_skipped_in_stream() {
        let body_len = MAX_FRAME_BODY + 1;
        let mut dec = FrameDecoder::new();
        dec.push(&(body_len as u32).to_be_bytes());
        assert_eq!(dec.next_frame(), Some(Err(DecodeError::FrameTooLarge(body_len))));
        assert_eq!(dec.pending_skip(), body_len);
        let junk = vec![0xAB; body_len];
        for chunk in junk.chunks(4096) {
            dec.push(chunk);
            assert!(dec.next_frame().is_none());
        }
        let good = encode_frame(&hello0()).unwrap();
        let out = dec.feed(&good);
        assert_eq!(out, vec![Ok(hello0())]);
        assert!(dec.accounted());
        assert_eq!(dec.buffered(), 0);
    }

    #[test]
    fn stream_recovers_after_bad_frame() {
        let mut bytes = reference_frame(1, 0xEE, 1, "{}");
        bytes.extend(encode_frame(&hello0()).unwrap());
        let mut dec = FrameDecoder::new();
        let out = dec.feed(&bytes);
        assert_eq!(out.len(), 2);
        assert!(out[0].is_err());
        assert_eq!(out[1], Ok(hello0()));
        assert!(dec.accounted());
    }

    #[test]
    fn encode_rejects_schema_violation() {
        let msg = CmiMessage::new(
            1,
            CmiBody::ChannelSet(crate::cmi::msg::ChannelSet { ap: 0, channel: 3 }),
        );
        assert!(matches!(
            encode_frame(&msg),
            Err(EncodeError::SchemaViolation { .. })
        ));
    }

    mod props {
        use super::*;
        use crate::cmi::arbitrary::message;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn decode_inverts_encode(msg in message()) {
                let bytes = encode_frame(&msg).unwrap();
                prop_assert_eq!(decode_frame(&bytes), Decoded::Frame { msg: msg.clone(), consumed: bytes.len() });
                prop_assert_eq!(encode_frame(&msg).unwrap(), bytes);
            }

            #[test]
            fn any_split_decodes_the_same(
                msgs in proptest::collection::vec(message(), 1..5),
                cuts in proptest::collection::vec(any::<prop::sample::Index>(), 0..8),
            ) {
                let stream: Vec<u8> = msgs.iter().flat_map(|m| encode_frame(m).unwrap()).collect();
                let mut at: Vec<usize> = cuts.iter().map(|i| i.index(stream.len() + 1)).collect();
                at.sort_unstable();
                let mut dec = FrameDecoder::new();
                let mut got = Vec::new();
                let mut prev = 0;
                for cut in at.into_iter().chain([stream.len()]) {
                    got.extend(dec.feed(&stream[prev..cut]));
                    prev = cut;
                }
                prop_assert_eq!(got, msgs.into_iter().map(Ok).collect::<Vec<_>>());
                prop_assert!(dec.accounted());
                prop_assert_eq!(dec.buffered(), 0);
            }

            #[test]
            fn garbage_is_always_accounted(chunks in proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..64), 0..16)) {
                let mut dec = FrameDecoder::new();
                for c in &chunks {
                    dec.feed(c);
                    prop_assert!(dec.accounted());
                }
            }
        }
    }
}
