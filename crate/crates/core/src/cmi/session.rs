//! HELLO / HELLO_ACK session bootstrap.

use thiserror::Error;

use super::msg::{CmiBody, CmiMessage, Hello, HelloAck, MsgType};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Controller,
    Wae,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    /// Controller side before HELLO goes out.
    Idle,
    AwaitingHello,
    AwaitingHelloAck,
    Established,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HandshakeError {
    #[error("peer speaks protocol version {0}, only 1 is defined")]
    VersionMismatch(u32),
    #[error("first message was {0:?}, expected HELLO")]
    FirstNotHello(MsgType),
    #[error("{0:?} received before the session was established")]
    NotEstablished(MsgType),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionEstablished {
    pub peer_id: u32,
    pub ap_count: Option<u32>,
}

/// What to do with an inbound message after session processing.
#[derive(Debug, Clone, PartialEq)]
pub enum Inbound {
    /// Handshake step; send this reply.
    Reply(CmiMessage),
    /// The handshake completed with this message.
    Established(SessionEstablished),
    /// Regular traffic on an established session.
    Deliver,
}

#[derive(Debug, Clone)]
pub struct CmiSession {
    role: Role,
    local_id: u32,
    ap_count: u32,
    state: SessionState,
    peer: Option<SessionEstablished>,
}

impl CmiSession {
    pub fn controller(controller_id: u32) -> Self {
        Self {
            role: Role::Controller,
            local_id: controller_id,
            ap_count: 0,
            state: SessionState::Idle,
            peer: None,
        }
    }

    pub fn wae(wae_id: u32, ap_count: u32) -> Self {
        Self {
            role: Role::Wae,
            local_id: wae_id,
            ap_count,
            state: SessionState::AwaitingHello,
            peer: None,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn is_established(&self) -> bool {
        self.state == SessionState::Established
    }

    pub fn peer(&self) -> Option<SessionEstablished> {
        self.peer
    }

    /// Controller only: the HELLO that opens the session.
    pub fn start(&mut self, correlation_id: u64) -> Option<CmiMessage> {
        if self.role != Role::Controller || self.state != SessionState::Idle {
            return None;
        }
        self.state = SessionState::AwaitingHelloAck;
        Some(CmiMessage::new(
            correlation_id,
            CmiBody::Hello(Hello {
                controller_id: Some(self.local_id),
                proto_version: Some(1),
            }),
        ))
    }

    /// Runs `msg` through the session state machine. Errors leave the state
    /// unchanged.
    pub fn on_inbound(&mut self, msg: &CmiMessage) -> Result<Inbound, HandshakeError> {
        match (self.role, self.state, &msg.body) {
            (_, SessionState::Established, _) => Ok(Inbound::Deliver),
            (Role::Wae, SessionState::AwaitingHello, CmiBody::Hello(h)) => {
                let version = h.proto_version.unwrap_or(1);
                if version != 1 {
                    return Err(HandshakeError::VersionMismatch(version));
                }
                let est = SessionEstablished {
                    peer_id: h.controller_id.unwrap_or(0),
                    ap_count: None,
                };
                self.peer = Some(est);
                self.state = SessionState::Established;
                Ok(Inbound::Reply(CmiMessage::new(
                    msg.correlation_id,
                    CmiBody::HelloAck(HelloAck {
                        wae_id: self.local_id,
                        ap_count: self.ap_count,
                    }),
                )))
            }
            (Role::Wae, _, _) => Err(HandshakeError::FirstNotHello(msg.msg_type())),
            (Role::Controller, SessionState::AwaitingHelloAck, CmiBody::HelloAck(a)) => {
                let est = SessionEstablished {
                    peer_id: a.wae_id,
                    ap_count: Some(a.ap_count),
                };
                self.peer = Some(est);
                self.state = SessionState::Established;
                Ok(Inbound::Established(est))
            }
            (Role::Controller, _, _) => Err(HandshakeError::NotEstablished(msg.msg_type())),
        }
    }
}

/// Runs a whole handshake for `role` against the peer's messages, in order.
///
/// For the controller, the HELLO it would send is implied; the peer stream
/// must open with HELLO_ACK. For the WAE the stream must open with HELLO.
pub fn handshake(
    role: Role,
    local_id: u32,
    peer_msgs: impl IntoIterator<Item = CmiMessage>,
) -> Result<SessionEstablished, HandshakeError> {
    let mut session = match role {
        Role::Controller => {
            let mut s = CmiSession::controller(local_id);
            s.start(0);
            s
        }
        Role::Wae => CmiSession::wae(local_id, 0),
    };
    for msg in peer_msgs {
        session.on_inbound(&msg)?;
        if let Some(peer) = session.peer() {
            return Ok(peer);
        }
    }
    Err(match role {
        Role::Controller => HandshakeError::NotEstablished(MsgType::HelloAck),
        Role::Wae => HandshakeError::FirstNotHello(MsgType::Hello),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cmi::msg::FlowRef;

    fn hello(version: Option<u32>) -> CmiMessage {
        CmiMessage::new(
            1,
            CmiBody::Hello(Hello {
                controller_id: Some(0),
                proto_version: version,
            }),
        )
    }

    #[test]
    fn happy_path() {
        let mut ctrl = CmiSession::controller(0);
        let mut wae = CmiSession::wae(0, 4);
        let h = ctrl.start(1).unwrap();
        let Inbound::Reply(ack) = wae.on_inbound(&h).unwrap() else {
            panic!("expected reply");
        };
        assert_eq!(ack.correlation_id, h.correlation_id);
        assert!(!ctrl.is_established());
        let est = ctrl.on_inbound(&ack).unwrap();
        assert_eq!(
            est,
            Inbound::Established(SessionEstablished {
                peer_id: 0,
                ap_count: Some(4)
            })
        );
        assert!(ctrl.is_established() && wae.is_established());
    }

    #[test]
    fn first_message_must_be_hello() {
        let flow = CmiMessage::new(3, CmiBody::FlowDel(FlowRef { rule: 1 }));
        assert_eq!(
            handshake(Role::Wae, 0, [flow.clone()]),
            Err(HandshakeError::FirstNotHello(MsgType::FlowDel))
        );
        let mut wae = CmiSession::wae(0, 1);
        assert!(wae.on_inbound(&flow).is_err());
        assert_eq!(wae.state(), SessionState::AwaitingHello);
        assert!(matches!(wae.on_inbound(&hello(None)), Ok(Inbound::Reply(_))));
    }

    #[test]
    fn version_two_rejected() {
        assert_eq!(
            handshake(Role::Wae, 0, [hello(Some(2))]),
            Err(HandshakeError::VersionMismatch(2))
        );
        assert!(handshake(Role::Wae, 0, [hello(Some(1))]).is_ok());
    }

    #[test]
    fn controller_rejects_traffic_before_ack() {
        let flow_ack = CmiMessage::new(3, CmiBody::FlowAck(FlowRef { rule: 1 }));
        let ack = CmiMessage::new(
            1,
            CmiBody::HelloAck(HelloAck {
                wae_id: 2,
                ap_count: 3,
            }),
        );
        assert_eq!(
            handshake(Role::Controller, 0, [flow_ack, ack.clone()]),
            Err(HandshakeError::NotEstablished(MsgType::FlowAck))
        );
        assert_eq!(
            handshake(Role::Controller, 0, [ack]).unwrap().peer_id,
            2
        );
    }
}
