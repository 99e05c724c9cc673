//! Simulated packets and the byte sizes of everything that crosses a link.

use serde::{Deserialize, Serialize};

use crate::fivegc::N2Message;
use crate::flow::Direction;
use crate::model::{NodeId, QosProfile};

/// Per-packet overhead of the UE-WAE secure association.
pub const IPSEC_OVERHEAD_BYTES: u32 = 64;
/// GTP-like header added on N3.
pub const N3_HEADER_BYTES: u32 = 36;
/// Envelope around a NAS payload on N2.
pub const NAS_ENVELOPE_BYTES: u32 = 40;
/// Probe, association and disassociation frames.
pub const MGMT_FRAME_BYTES: u32 = 64;
pub const IKE_MESSAGE_BYTES: u32 = 256;
pub const AP_COMMAND_BYTES: u32 = 96;
/// AP report header; each reading adds [`AP_REPORT_ENTRY_BYTES`].
pub const AP_REPORT_BASE_BYTES: u32 = 32;
pub const AP_REPORT_ENTRY_BYTES: u32 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PacketClass {
    Data,
    Cmi,
    Nas,
    Mgmt,
    N3,
}

impl PacketClass {
    pub const ALL: [PacketClass; 5] = [
        PacketClass::Data,
        PacketClass::Cmi,
        PacketClass::Nas,
        PacketClass::Mgmt,
        PacketClass::N3,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PacketClass::Data => "DATA",
            PacketClass::Cmi => "CMI",
            PacketClass::Nas => "NAS",
            PacketClass::Mgmt => "MGMT",
            PacketClass::N3 => "N3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowKey {
    pub ue: NodeId,
    pub traffic_class: String,
    pub direction: Direction,
}

/// Commands the WAE sends to an AP over the backhaul.
#[derive(Debug, Clone, PartialEq)]
pub enum ApCommand {
    /// Apply configuration, then answer with [`ApEvent::Applied`] carrying
    /// the same token.
    Configure {
        token: u64,
        channel: Option<u8>,
        tx_power_dbm: Option<f64>,
        policy: Option<crate::model::MgmtPolicy>,
    },
    Disassociate { ue: NodeId, target: Option<NodeId> },
}

/// One UE reading taken by an AP.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reading {
    pub ue: NodeId,
    pub rssi_dbm: f64,
}

/// Notifications an AP sends to the WAE.
#[derive(Debug, Clone, PartialEq)]
pub enum ApEvent {
    Applied { token: u64 },
    ProbeSeen { reading: Reading },
    Associated { ue: NodeId },
    Disassociated { ue: NodeId },
    /// Periodic measurement: every UE in range and every AP it can hear.
    Report { readings: Vec<Reading>, neighbors: Vec<NodeId> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum Mgmt {
    ProbeRequest,
    ProbeResponse { ap: NodeId, channel: u8 },
    AssocRequest { ap: NodeId },
    AssocResponse { ap: NodeId, accepted: bool },
    /// From an AP: forced disassociation, optionally naming where to go.
    /// From a UE: leaving.
    Disassoc { ap: NodeId, target: Option<NodeId> },
    IkeInit,
    IkeReply,
    IkeDone { tunnel_id: u32, anchor: NodeId, qos: QosProfile },
    Command(ApCommand),
    Event(ApEvent),
}

impl Mgmt {
    pub fn wire_bytes(&self) -> u32 {
        match self {
            Mgmt::IkeInit | Mgmt::IkeReply | Mgmt::IkeDone { .. } => IKE_MESSAGE_BYTES,
            Mgmt::Command(_) => AP_COMMAND_BYTES,
            Mgmt::Event(ApEvent::Report { readings, neighbors }) => {
                AP_REPORT_BASE_BYTES + AP_REPORT_ENTRY_BYTES * (readings.len() + neighbors.len()) as u32
            }
            Mgmt::Event(_) => AP_REPORT_BASE_BYTES + AP_REPORT_ENTRY_BYTES,
            _ => MGMT_FRAME_BYTES,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    /// User data. `ipsec` is set while the packet travels the UE-WAE leg.
    Data { ipsec: bool },
    /// An encoded CMI frame.
    Cmi(Vec<u8>),
    /// NAS bytes between UE and WAE.
    Nas(Vec<u8>),
    N2(N2Message),
    Mgmt(Mgmt),
    N3 { tunnel_id: u32, inner: Box<Packet> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub src: NodeId,
    pub dst: NodeId,
    /// Bytes on the wire for the current hop.
    pub size_bytes: u32,
    pub seq_no: u64,
    pub created_us: u64,
    pub flow: Option<FlowKey>,
    pub payload: Payload,
}

impl Packet {
    pub fn class(&self) -> PacketClass {
        match self.payload {
            Payload::Data { .. } => PacketClass::Data,
            Payload::Cmi(_) => PacketClass::Cmi,
            Payload::Nas(_) | Payload::N2(_) => PacketClass::Nas,
            Payload::Mgmt(_) => PacketClass::Mgmt,
            Payload::N3 { .. } => PacketClass::N3,
        }
    }

    /// User data of `payload_bytes`, outside any tunnel.
    pub fn data(src: NodeId, dst: NodeId, flow: FlowKey, payload_bytes: u32, seq_no: u64, created_us: u64) -> Self {
        Self {
            src,
            dst,
            size_bytes: payload_bytes,
            seq_no,
            created_us,
            flow: Some(flow),
            payload: Payload::Data { ipsec: false },
        }
    }

    pub fn mgmt(src: NodeId, dst: NodeId, created_us: u64, m: Mgmt) -> Self {
        Self {
            src,
            dst,
            size_bytes: m.wire_bytes(),
            seq_no: 0,
            created_us,
            flow: None,
            payload: Payload::Mgmt(m),
        }
    }

    pub fn nas(src: NodeId, dst: NodeId, created_us: u64, bytes: Vec<u8>) -> Self {
        Self {
            src,
            dst,
            size_bytes: bytes.len() as u32,
            seq_no: 0,
            created_us,
            flow: None,
            payload: Payload::Nas(bytes),
        }
    }

    pub fn n2(src: NodeId, dst: NodeId, created_us: u64, msg: N2Message) -> Self {
        Self {
            src,
            dst,
            size_bytes: msg.wire_bytes(),
            seq_no: 0,
            created_us,
            flow: None,
            payload: Payload::N2(msg),
        }
    }

    pub fn cmi(src: NodeId, dst: NodeId, created_us: u64, frame: Vec<u8>) -> Self {
        Self {
            src,
            dst,
            size_bytes: frame.len() as u32,
            seq_no: 0,
            created_us,
            flow: None,
            payload: Payload::Cmi(frame),
        }
    }

    /// User-data bytes, ignoring tunnel overheads.
    pub fn user_bytes(&self) -> u32 {
        match &self.payload {
            Payload::Data { ipsec: true } => self.size_bytes - IPSEC_OVERHEAD_BYTES,
            Payload::Data { ipsec: false } => self.size_bytes,
            Payload::N3 { inner, .. } => inner.user_bytes(),
            _ => 0,
        }
    }

    pub fn set_ipsec(&mut self, on: bool) {
        if let Payload::Data { ipsec } = &mut self.payload {
            if *ipsec != on {
                *ipsec = on;
                if on {
                    self.size_bytes += IPSEC_OVERHEAD_BYTES;
                } else {
                    self.size_bytes -= IPSEC_OVERHEAD_BYTES;
                }
            }
        }
    }

    pub fn encapsulate_n3(self, tunnel_id: u32, src: NodeId, dst: NodeId) -> Packet {
        Packet {
            src,
            dst,
            size_bytes: self.size_bytes + N3_HEADER_BYTES,
            seq_no: self.seq_no,
            created_us: self.created_us,
            flow: self.flow.clone(),
            payload: Payload::N3 {
                tunnel_id,
                inner: Box::new(self),
            },
        }
    }
}
