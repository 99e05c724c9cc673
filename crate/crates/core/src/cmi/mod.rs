//! Control and Management Interface between the RAN controller and the WAE.
//!
//! Frames are carried over TCP ([`CmiStream`]) or over simulated links; the
//! bytes are the same either way.

#[cfg(any(test, feature = "arbitrary"))]
pub mod arbitrary;
pub mod codec;
pub mod msg;
pub mod session;
pub mod tcp;

pub use codec::{decode_frame, encode_frame, DecodeError, Decoded, EncodeError, FrameDecoder};
pub use msg::{CmiBody, CmiMessage, ErrorCode, MsgType};
pub use session::{handshake, CmiSession, HandshakeError, Inbound, Role, SessionEstablished};
pub use tcp::CmiStream;

/// Default TCP port.
pub const DEFAULT_PORT: u16 = 6633;
