//! Shared vocabulary: node identities, QoS profiles, AP state and the UE
//! lifecycle state machine.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Channels a radio may be tuned to (non-overlapping 2.4 GHz set).
pub const ALLOWED_CHANNELS: [u8; 3] = [1, 6, 11];

/// Default cap on associated UEs per AP.
pub const DEFAULT_MAX_ASSOCIATED: u32 = 64;

pub fn is_allowed_channel(ch: u8) -> bool {
    ALLOWED_CHANNELS.contains(&ch)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum NodeKind {
    Ue,
    Ap,
    Wae,
    Controller,
    Amf,
    Upf,
    Dn,
}

impl NodeKind {
    fn prefix(self) -> &'static str {
        match self {
            NodeKind::Ue => "ue",
            NodeKind::Ap => "ap",
            NodeKind::Wae => "wae",
            NodeKind::Controller => "ctrl",
            NodeKind::Amf => "amf",
            NodeKind::Upf => "upf",
            NodeKind::Dn => "dn",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeId {
    pub kind: NodeKind,
    pub index: u32,
}

impl NodeId {
    pub const fn new(kind: NodeKind, index: u32) -> Self {
        Self { kind, index }
    }
    pub const fn ue(index: u32) -> Self {
        Self::new(NodeKind::Ue, index)
    }
    pub const fn ap(index: u32) -> Self {
        Self::new(NodeKind::Ap, index)
    }
    pub const fn wae(index: u32) -> Self {
        Self::new(NodeKind::Wae, index)
    }
    pub const fn controller(index: u32) -> Self {
        Self::new(NodeKind::Controller, index)
    }
    pub const fn amf(index: u32) -> Self {
        Self::new(NodeKind::Amf, index)
    }
    pub const fn upf(index: u32) -> Self {
        Self::new(NodeKind::Upf, index)
    }
    pub const fn dn(index: u32) -> Self {
        Self::new(NodeKind::Dn, index)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.kind.prefix(), self.index)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum QosError {
    #[error("rate_mbps must be a positive finite number, got {0}")]
    BadRate(f64),
    #[error("priority must be within 0..=7, got {0}")]
    BadPriority(u8),
    #[error("latency budget must be positive")]
    BadLatency,
}

/// Per-flow QoS attributes handed down from the core.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QosProfile {
    pub rate_mbps: f64,
    /// 0..=7, 7 highest.
    pub priority: u8,
    /// Advisory only.
    pub latency_budget_us: u64,
}

impl QosProfile {
    pub fn new(rate_mbps: f64, priority: u8, latency_budget_us: u64) -> Result<Self, QosError> {
        let q = Self {
            rate_mbps,
            priority,
            latency_budget_us,
        };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<(), QosError> {
        if !(self.rate_mbps.is_finite() && self.rate_mbps > 0.0) {
            return Err(QosError::BadRate(self.rate_mbps));
        }
        if self.priority > 7 {
            return Err(QosError::BadPriority(self.priority));
        }
        if self.latency_budget_us == 0 {
            return Err(QosError::BadLatency);
        }
        Ok(())
    }
}

impl Default for QosProfile {
    fn default() -> Self {
        Self {
            rate_mbps: 10.0,
            priority: 1,
            latency_budget_us: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
    pub fn distance(&self, other: &Point) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MgmtPolicy {
    /// Suppress probe responses while the AP's load is at or above this count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suppress_probe_above_load: Option<u32>,
    #[serde(default)]
    pub deny_list: BTreeSet<NodeId>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ApError {
    #[error("channel {0} is not one of 1, 6, 11")]
    BadChannel(u8),
    #[error("{ap} is full ({max} UEs)")]
    Full { ap: NodeId, max: u32 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApState {
    pub ap: NodeId,
    pub position: Point,
    channel: u8,
    pub tx_power_dbm: f64,
    pub associated: BTreeSet<NodeId>,
    pub mgmt_policy: MgmtPolicy,
    pub radio_capacity_mbps: f64,
    pub max_associated: u32,
}

impl ApState {
    pub fn new(ap: NodeId, position: Point, channel: u8, tx_power_dbm: f64) -> Result<Self, ApError> {
        if !is_allowed_channel(channel) {
            return Err(ApError::BadChannel(channel));
        }
        Ok(Self {
            ap,
            position,
            channel,
            tx_power_dbm,
            associated: BTreeSet::new(),
            mgmt_policy: MgmtPolicy::default(),
            radio_capacity_mbps: 50.0,
            max_associated: DEFAULT_MAX_ASSOCIATED,
        })
    }

    pub fn channel(&self) -> u8 {
        self.channel
    }

    pub fn set_channel(&mut self, channel: u8) -> Result<(), ApError> {
        if !is_allowed_channel(channel) {
            return Err(ApError::BadChannel(channel));
        }
        self.channel = channel;
        Ok(())
    }

    pub fn load(&self) -> u32 {
        self.associated.len() as u32
    }

    pub fn associate(&mut self, ue: NodeId) -> Result<(), ApError> {
        if !self.associated.contains(&ue) && self.load() >= self.max_associated {
            return Err(ApError::Full {
                ap: self.ap,
                max: self.max_associated,
            });
        }
        self.associated.insert(ue);
        Ok(())
    }

    pub fn disassociate(&mut self, ue: NodeId) -> bool {
        self.associated.remove(&ue)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum UeState {
    Idle,
    Scanning,
    Associating,
    Authenticating,
    Registered,
    SessionActive,
    Handover,
}

impl UeState {
    pub const ALL: [UeState; 7] = [
        UeState::Idle,
        UeState::Scanning,
        UeState::Associating,
        UeState::Authenticating,
        UeState::Registered,
        UeState::SessionActive,
        UeState::Handover,
    ];

    pub fn has_serving_ap(self) -> bool {
        matches!(
            self,
            UeState::Authenticating | UeState::Registered | UeState::SessionActive | UeState::Handover
        )
    }

    pub fn has_tunnel(self) -> bool {
        matches!(self, UeState::SessionActive | UeState::Handover)
    }
}

/// Lifecycle triggers. Data-carrying triggers supply the fields the next
/// state requires.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum UeTrigger {
    ProbeSent,
    AssocOk,
    AuthStart { ap: NodeId },
    AuthOk,
    AuthFail,
    SessionOk { tunnel_id: u32, anchor_wae: NodeId, qos: QosProfile },
    Steer { target: NodeId },
    HoDone { ap: NodeId },
    Detach,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TriggerKind {
    ProbeSent,
    AssocOk,
    AuthStart,
    AuthOk,
    AuthFail,
    SessionOk,
    Steer,
    HoDone,
    Detach,
}

impl UeTrigger {
    pub fn kind(&self) -> TriggerKind {
        match self {
            UeTrigger::ProbeSent => TriggerKind::ProbeSent,
            UeTrigger::AssocOk => TriggerKind::AssocOk,
            UeTrigger::AuthStart { .. } => TriggerKind::AuthStart,
            UeTrigger::AuthOk => TriggerKind::AuthOk,
            UeTrigger::AuthFail => TriggerKind::AuthFail,
            UeTrigger::SessionOk { .. } => TriggerKind::SessionOk,
            UeTrigger::Steer { .. } => TriggerKind::Steer,
            UeTrigger::HoDone { .. } => TriggerKind::HoDone,
            UeTrigger::Detach => TriggerKind::Detach,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("illegal transition: {trigger:?} in state {state:?}")]
pub struct IllegalTransition {
    pub state: UeState,
    pub trigger: TriggerKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeContext {
    pub ue: NodeId,
    pub state: UeState,
    pub serving_ap: Option<NodeId>,
    pub anchor_wae: Option<NodeId>,
    pub tunnel_id: Option<u32>,
    pub auth_key: [u8; 16],
    pub qos: Option<QosProfile>,
    pub slice_id: Option<String>,
}

impl UeContext {
    pub fn new(ue: NodeId, auth_key: [u8; 16]) -> Self {
        Self {
            ue,
            state: UeState::Idle,
            serving_ap: None,
            anchor_wae: None,
            tunnel_id: None,
            auth_key,
            qos: None,
            slice_id: None,
        }
    }

    /// Field invariants tied to the lifecycle state.
    pub fn check_invariants(&self) -> Result<(), String> {
        if self.serving_ap.is_some() != self.state.has_serving_ap() {
            return Err(format!(
                "{}: serving_ap {:?} inconsistent with {:?}",
                self.ue, self.serving_ap, self.state
            ));
        }
        if self.tunnel_id.is_some() != self.state.has_tunnel() {
            return Err(format!(
                "{}: tunnel_id {:?} inconsistent with {:?}",
                self.ue, self.tunnel_id, self.state
            ));
        }
        Ok(())
    }
}

/// Applies `trigger` to `ctx` using the fixed transition table.
pub fn ue_transition(ctx: &UeContext, trigger: UeTrigger) -> Result<UeContext, IllegalTransition> {
    use UeState::*;
    let illegal = || IllegalTransition {
        state: ctx.state,
        trigger: trigger.kind(),
    };
    let mut next = ctx.clone();
    match (ctx.state, trigger) {
        (Idle | Scanning, UeTrigger::ProbeSent) => next.state = Scanning,
        (Scanning, UeTrigger::AssocOk) => next.state = Associating,
        (Associating, UeTrigger::AuthStart { ap }) => {
            next.state = Authenticating;
            next.serving_ap = Some(ap);
        }
        (Authenticating, UeTrigger::AuthOk) => next.state = Registered,
        (Authenticating, UeTrigger::AuthFail) => {
            next.state = Idle;
            next.serving_ap = None;
        }
        (
            Registered,
            UeTrigger::SessionOk {
                tunnel_id,
                anchor_wae,
                qos,
            },
        ) => {
            if matches!(ctx.anchor_wae, Some(a) if a != anchor_wae) {
                return Err(illegal());
            }
            next.state = SessionActive;
            next.tunnel_id = Some(tunnel_id);
            next.anchor_wae.get_or_insert(anchor_wae);
            next.qos = Some(qos);
        }
        (SessionActive, UeTrigger::Steer { target }) => {
            if ctx.serving_ap == Some(target) {
                return Err(illegal());
            }
            next.state = Handover;
        }
        (Handover, UeTrigger::HoDone { ap }) => {
            next.state = SessionActive;
            next.serving_ap = Some(ap);
        }
        (s, UeTrigger::Detach) if s != Idle => {
            next.state = Idle;
            next.serving_ap = None;
            next.tunnel_id = None;
            next.qos = None;
        }
        _ => return Err(illegal()),
    }
    Ok(next)
}
