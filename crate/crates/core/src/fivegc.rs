//! Minimal AMF and UPF: NAS registration with challenge-response
//! authentication, session setup and N3 termination.
//!
//! The AMF creates UPF sessions directly; there is no SMF.

use std::collections::BTreeMap;

use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{NodeId, QosProfile};
use crate::packet::{Packet, Payload, NAS_ENVELOPE_BYTES, N3_HEADER_BYTES};

/// Bytes of a session-setup record on N2, excluding the envelope.
pub const SESSION_SETUP_BYTES: u32 = 32;

/// NAS messages. The access network relays their encoded bytes without
/// looking inside.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "nas", rename_all = "snake_case")]
pub enum NasMessage {
    RegistrationRequest { ue: u32 },
    AuthChallenge { nonce: String },
    AuthResponse { res: String },
    RegistrationAccept,
    RegistrationReject { cause: String },
}

impl NasMessage {
    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("NAS message serializes")
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, String> {
        serde_json::from_slice(bytes).map_err(|e| e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum N2Message {
    UplinkNas { ue: NodeId, nas: Vec<u8> },
    DownlinkNas { ue: NodeId, nas: Vec<u8> },
    SessionSetup {
        ue: NodeId,
        tunnel_id: u32,
        qos: QosProfile,
        traffic_class: String,
    },
}

impl N2Message {
    pub fn wire_bytes(&self) -> u32 {
        match self {
            N2Message::UplinkNas { nas, .. } | N2Message::DownlinkNas { nas, .. } => {
                NAS_ENVELOPE_BYTES + nas.len() as u32
            }
            N2Message::SessionSetup { .. } => NAS_ENVELOPE_BYTES + SESSION_SETUP_BYTES,
        }
    }
}

/// First 16 bytes of SHA-256(key || nonce).
pub fn auth_response(key: &[u8; 16], nonce: &[u8; 16]) -> [u8; 16] {
    let mut h = Sha256::new();
    h.update(key);
    h.update(nonce);
    let digest = h.finalize();
    digest[..16].try_into().expect("16 bytes")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Subscriber {
    pub key: [u8; 16],
    pub qos: QosProfile,
    pub traffic_class: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmfState {
    None,
    Challenged,
    Registered,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AmfUeRecord {
    pub ue: NodeId,
    pub key: [u8; 16],
    pub nonce: [u8; 16],
    pub state: AmfState,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AmfError {
    #[error("{0} is not provisioned")]
    UnknownSubscriber(NodeId),
    #[error("{0} has no outstanding challenge")]
    NotChallenged(NodeId),
    #[error("{0} answered the challenge incorrectly")]
    BadResponse(NodeId),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AmfCounters {
    pub registrations: u64,
    pub accepts: u64,
    pub rejects: u64,
    pub malformed: u64,
}

#[derive(Debug, Clone)]
pub struct Amf {
    subscribers: BTreeMap<NodeId, Subscriber>,
    records: BTreeMap<NodeId, AmfUeRecord>,
    rng: ChaCha8Rng,
    pub counters: AmfCounters,
}

impl Amf {
    pub fn new(subscribers: BTreeMap<NodeId, Subscriber>, rng: ChaCha8Rng) -> Self {
        Self {
            subscribers,
            records: BTreeMap::new(),
            rng,
            counters: AmfCounters::default(),
        }
    }

    pub fn record(&self, ue: NodeId) -> Option<&AmfUeRecord> {
        self.records.get(&ue)
    }

    /// Starts a registration: a fresh nonce for every attempt.
    pub fn amf_register(&mut self, ue: NodeId) -> Result<[u8; 16], AmfError> {
        let sub = self.subscribers.get(&ue).ok_or(AmfError::UnknownSubscriber(ue))?;
        let mut nonce = [0u8; 16];
        self.rng.fill_bytes(&mut nonce);
        self.records.insert(
            ue,
            AmfUeRecord {
                ue,
                key: sub.key,
                nonce,
                state: AmfState::Challenged,
            },
        );
        self.counters.registrations += 1;
        Ok(nonce)
    }

    pub fn amf_verify(&mut self, ue: NodeId, response: &[u8; 16]) -> Result<(), AmfError> {
        let rec = self.records.get_mut(&ue).ok_or(AmfError::NotChallenged(ue))?;
        if rec.state != AmfState::Challenged {
            return Err(AmfError::NotChallenged(ue));
        }
        if auth_response(&rec.key, &rec.nonce) == *response {
            rec.state = AmfState::Registered;
            Ok(())
        } else {
            rec.state = AmfState::None;
            Err(AmfError::BadResponse(ue))
        }
    }

    /// Handles one N2 message and returns the replies, in send order.
    pub fn on_n2(&mut self, msg: &N2Message, upf: &mut Upf) -> Vec<N2Message> {
        let N2Message::UplinkNas { ue, nas } = msg else {
            self.counters.malformed += 1;
            return Vec::new();
        };
        let ue = *ue;
        let down = |m: NasMessage| N2Message::DownlinkNas { ue, nas: m.encode() };
        let reject = |cause: &str| {
            down(NasMessage::RegistrationReject {
                cause: cause.to_string(),
            })
        };
        match NasMessage::decode(nas) {
            Ok(NasMessage::RegistrationRequest { .. }) => match self.amf_register(ue) {
                Ok(nonce) => vec![down(NasMessage::AuthChallenge {
                    nonce: hex::encode(nonce),
                })],
                Err(_) => {
                    self.counters.rejects += 1;
                    vec![reject("unknown subscriber")]
                }
            },
            Ok(NasMessage::AuthResponse { res }) => {
                let parsed: Option<[u8; 16]> = hex::decode(&res).ok().and_then(|v| v.try_into().ok());
                let verdict = match parsed {
                    Some(r) => self.amf_verify(ue, &r),
                    None => Err(AmfError::BadResponse(ue)),
                };
                match verdict {
                    Ok(()) => {
                        self.counters.accepts += 1;
                        let sub = &self.subscribers[&ue];
                        let session = upf.upf_create_session(ue, sub.qos);
                        vec![
                            down(NasMessage::RegistrationAccept),
                            N2Message::SessionSetup {
                                ue,
                                tunnel_id: session.tunnel_id,
                                qos: session.qos,
                                traffic_class: sub.traffic_class.clone(),
                            },
                        ]
                    }
                    Err(_) => {
                        if let Some(r) = self.records.get_mut(&ue) {
                            r.state = AmfState::None;
                        }
                        self.counters.rejects += 1;
                        vec![reject("authentication failed")]
                    }
                }
            }
            _ => {
                self.counters.malformed += 1;
                Vec::new()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpfSession {
    pub ue: NodeId,
    pub tunnel_id: u32,
    pub qos: QosProfile,
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub packets_up: u64,
    pub packets_down: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum UpfError {
    #[error("unknown tunnel {0}")]
    UnknownTunnel(u32),
    #[error("not an N3 packet")]
    NotN3,
}

#[derive(Debug, Clone, Default)]
pub struct Upf {
    sessions: BTreeMap<NodeId, UpfSession>,
    by_tunnel: BTreeMap<u32, NodeId>,
    next_tunnel: u32,
    pub unknown_tunnel_drops: u64,
}

impl Upf {
    pub fn new() -> Self {
        Self {
            next_tunnel: 1,
            ..Default::default()
        }
    }

    pub fn sessions(&self) -> &BTreeMap<NodeId, UpfSession> {
        &self.sessions
    }

    pub fn session(&self, ue: NodeId) -> Option<&UpfSession> {
        self.sessions.get(&ue)
    }

    /// Creates the UE's session, or returns the existing one.
    pub fn upf_create_session(&mut self, ue: NodeId, qos: QosProfile) -> &UpfSession {
        if !self.sessions.contains_key(&ue) {
            let tunnel_id = self.next_tunnel;
            self.next_tunnel += 1;
            self.by_tunnel.insert(tunnel_id, ue);
            self.sessions.insert(
                ue,
                UpfSession {
                    ue,
                    tunnel_id,
                    qos,
                    bytes_up: 0,
                    bytes_down: 0,
                    packets_up: 0,
                    packets_down: 0,
                },
            );
        }
        &self.sessions[&ue]
    }

    /// Decapsulates an uplink N3 packet for the data network.
    pub fn upf_terminate(&mut self, pkt: Packet) -> Result<Packet, UpfError> {
        let Payload::N3 { tunnel_id, inner } = pkt.payload else {
            return Err(UpfError::NotN3);
        };
        let Some(ue) = self.by_tunnel.get(&tunnel_id) else {
            self.unknown_tunnel_drops += 1;
            return Err(UpfError::UnknownTunnel(tunnel_id));
        };
        debug_assert_eq!(inner.size_bytes + N3_HEADER_BYTES, pkt.size_bytes);
        let s = self.sessions.get_mut(ue).expect("indexed session");
        s.bytes_up += inner.size_bytes as u64;
        s.packets_up += 1;
        Ok(*inner)
    }

    /// Wraps downlink data for `ue` toward the WAE.
    pub fn encapsulate_downlink(&mut self, ue: NodeId, inner: Packet, src: NodeId, dst: NodeId) -> Option<Packet> {
        let s = self.sessions.get_mut(&ue)?;
        s.bytes_down += inner.size_bytes as u64;
        s.packets_down += 1;
        Some(inner.encapsulate_n3(s.tunnel_id, src, dst))
    }
}

/// Every UPF session belongs to a UE the AMF has registered.
pub fn check_auth_gate(amf: &Amf, upf: &Upf) -> Result<(), String> {
    for ue in upf.sessions().keys() {
        match amf.record(*ue) {
            Some(r) if r.state == AmfState::Registered => {}
            _ => return Err(format!("{ue} has a UPF session without registration")),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Direction;
    use crate::packet::FlowKey;
    use crate::rng::{stream, Stream};
    use proptest::prelude::*;
    use rand::Rng;

    /// Straightforward FIPS 180-4 SHA-256, kept independent of the `sha2`
    /// crate so it can serve as an oracle.
    fn reference_sha256(msg: &[u8]) -> [u8; 32] {
        const K: [u32; 64] = [
            0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
            0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
            0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
            0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
            0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
            0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
            0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
            0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2,
        ];
        let mut h: [u32; 8] = [
            0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19,
        ];
        let mut data = msg.to_vec();
        let bit_len = (msg.len() as u64) * 8;
        data.push(0x80);
        while data.len() % 64 != 56 {
            data.push(0);
        }
        data.extend_from_slice(&bit_len.to_be_bytes());
        for block in data.chunks(64) {
            let mut w = [0u32; 64];
            for i in 0..16 {
                w[i] = u32::from_be_bytes(block[i * 4..i * 4 + 4].try_into().unwrap());
            }
            for i in 16..64 {
                let s0 = w[i - 15].rotate_right(7) ^ w[i - 15].rotate_right(18) ^ (w[i - 15] >> 3);
                let s1 = w[i - 2].rotate_right(17) ^ w[i - 2].rotate_right(19) ^ (w[i - 2] >> 10);
                w[i] = w[i - 16].wrapping_add(s0).wrapping_add(w[i - 7]).wrapping_add(s1);
            }
            let [mut a, mut b, mut c, mut d, mut e, mut f, mut g, mut hh] = h;
            for i in 0..64 {
                let s1 = e.rotate_right(6) ^ e.rotate_right(11) ^ e.rotate_right(25);
                let ch = (e & f) ^ (!e & g);
                let t1 = hh.wrapping_add(s1).wrapping_add(ch).wrapping_add(K[i]).wrapping_add(w[i]);
                let s0 = a.rotate_right(2) ^ a.rotate_right(13) ^ a.rotate_right(22);
                let maj = (a & b) ^ (a & c) ^ (b & c);
                let t2 = s0.wrapping_add(maj);
                hh = g;
                g = f;
                f = e;
                e = d.wrapping_add(t1);
                d = c;
                c = b;
                b = a;
                a = t1.wrapping_add(t2);
            }
            for (x, y) in h.iter_mut().zip([a, b, c, d, e, f, g, hh]) {
                *x = x.wrapping_add(y);
            }
        }
        let mut out = [0u8; 32];
        for (i, word) in h.iter().enumerate() {
            out[i * 4..i * 4 + 4].copy_from_slice(&word.to_be_bytes());
        }
        out
    }

    fn oracle_response(key: &[u8; 16], nonce: &[u8; 16]) -> [u8; 16] {
        let mut m = key.to_vec();
        m.extend_from_slice(nonce);
        reference_sha256(&m)[..16].try_into().unwrap()
    }

    fn amf_with(ues: &[(u32, [u8; 16])]) -> Amf {
        let subs = ues
            .iter()
            .map(|(i, k)| {
                (
                    NodeId::ue(*i),
                    Subscriber {
                        key: *k,
                        qos: QosProfile::default(),
                        traffic_class: "be".into(),
                    },
                )
            })
            .collect();
        Amf::new(subs, stream(1, Stream::Nonce))
    }

    #[test]
    fn oracle_matches_known_vector() {
        assert_eq!(
            hex::encode(reference_sha256(b"abc")),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn challenge_and_accept() {
        let key = [7u8; 16];
        let mut amf = amf_with(&[(1, key)]);
        let nonce = amf.amf_register(NodeId::ue(1)).unwrap();
        assert_eq!(amf.amf_verify(NodeId::ue(1), &oracle_response(&key, &nonce)), Ok(()));
        assert_eq!(amf.record(NodeId::ue(1)).unwrap().state, AmfState::Registered);
    }

    #[test]
    fn unknown_subscriber_creates_no_record() {
        let mut amf = amf_with(&[(1, [7u8; 16])]);
        assert_eq!(amf.amf_register(NodeId::ue(9)), Err(AmfError::UnknownSubscriber(NodeId::ue(9))));
        assert!(amf.record(NodeId::ue(9)).is_none());
    }

    #[test]
    fn nonces_are_fresh() {
        let mut amf = amf_with(&[(1, [7u8; 16])]);
        let a = amf.amf_register(NodeId::ue(1)).unwrap();
        let b = amf.amf_register(NodeId::ue(1)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn zero_response_rejected_and_reset() {
        let key = [3u8; 16];
        let mut amf = amf_with(&[(1, key)]);
        let nonce = amf.amf_register(NodeId::ue(1)).unwrap();
        assert_ne!(oracle_response(&key, &nonce), [0u8; 16]);
        assert_eq!(amf.amf_verify(NodeId::ue(1), &[0u8; 16]), Err(AmfError::BadResponse(NodeId::ue(1))));
        assert_eq!(amf.record(NodeId::ue(1)).unwrap().state, AmfState::None);
    }

    #[test]
    fn verify_without_challenge() {
        let mut amf = amf_with(&[(1, [3u8; 16])]);
        assert_eq!(amf.amf_verify(NodeId::ue(1), &[0u8; 16]), Err(AmfError::NotChallenged(NodeId::ue(1))));
    }

    #[test]
    fn random_pairs_agree_with_oracle() {
        let mut rng = stream(99, Stream::Topology);
        for _ in 0..100 {
            let key: [u8; 16] = rng.gen();
            let mut amf = amf_with(&[(0, key)]);
            let nonce = amf.amf_register(NodeId::ue(0)).unwrap();
            assert_eq!(auth_response(&key, &nonce), oracle_response(&key, &nonce));
        }
    }

    #[test]
    fn full_exchange_over_n2() {
        let key = [5u8; 16];
        let mut amf = amf_with(&[(1, key)]);
        let mut upf = Upf::new();
        let ue = NodeId::ue(1);
        let req = NasMessage::RegistrationRequest { ue: 1 }.encode();
        let out = amf.on_n2(&N2Message::UplinkNas { ue, nas: req }, &mut upf);
        let N2Message::DownlinkNas { nas, .. } = &out[0] else { panic!() };
        let NasMessage::AuthChallenge { nonce } = NasMessage::decode(nas).unwrap() else { panic!() };
        let nonce: [u8; 16] = hex::decode(nonce).unwrap().try_into().unwrap();
        let res = NasMessage::AuthResponse {
            res: hex::encode(oracle_response(&key, &nonce)),
        };
        let out = amf.on_n2(&N2Message::UplinkNas { ue, nas: res.encode() }, &mut upf);
        assert_eq!(out.len(), 2);
        assert!(matches!(&out[1], N2Message::SessionSetup { tunnel_id: 1, .. }));
        check_auth_gate(&amf, &upf).unwrap();
    }

    #[test]
    fn upf_sessions_idempotent_and_unique() {
        let mut upf = Upf::new();
        let q = QosProfile::default();
        let t1 = upf.upf_create_session(NodeId::ue(1), q).tunnel_id;
        assert_eq!(upf.upf_create_session(NodeId::ue(1), q).tunnel_id, t1);
        let t2 = upf.upf_create_session(NodeId::ue(2), q).tunnel_id;
        assert_ne!(t1, t2);
        assert_eq!(upf.session(NodeId::ue(1)).unwrap().bytes_up, 0);
    }

    #[test]
    fn terminate_strips_header() {
        let mut upf = Upf::new();
        let t = upf.upf_create_session(NodeId::ue(1), QosProfile::default()).tunnel_id;
        let flow = FlowKey {
            ue: NodeId::ue(1),
            traffic_class: "be".into(),
            direction: Direction::Up,
        };
        let inner = Packet::data(NodeId::ue(1), NodeId::dn(0), flow, 1000, 0, 0);
        let n3 = inner.clone().encapsulate_n3(t, NodeId::wae(0), NodeId::upf(0));
        assert_eq!(n3.size_bytes, 1036);
        assert_eq!(upf.upf_terminate(n3).unwrap().size_bytes, 1000);
        let stray = inner.encapsulate_n3(t + 50, NodeId::wae(0), NodeId::upf(0));
        assert_eq!(upf.upf_terminate(stray), Err(UpfError::UnknownTunnel(t + 50)));
        assert_eq!(upf.unknown_tunnel_drops, 1);
        assert_eq!(upf.session(NodeId::ue(1)).unwrap().bytes_up, 1000);
    }

    proptest! {
        #[test]
        fn accept_iff_response_matches_oracle(key in any::<[u8; 16]>(), guess in any::<[u8; 16]>(), honest in any::<bool>()) {
            let mut amf = amf_with(&[(0, key)]);
            let nonce = amf.amf_register(NodeId::ue(0)).unwrap();
            let expected = oracle_response(&key, &nonce);
            let answer = if honest { expected } else { guess };
            prop_assert_eq!(amf.amf_verify(NodeId::ue(0), &answer).is_ok(), answer == expected);
        }
    }
}
