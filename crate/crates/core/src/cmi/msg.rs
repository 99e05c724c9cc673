//! CMI message types and per-type payload schemas.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::flow::{Direction, FlowMatch, FlowOutput, FlowRule};
use crate::model::{is_allowed_channel, MgmtPolicy, NodeId, QosProfile};
use crate::slice::SliceTemplate;

pub const CMI_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MsgType {
    Hello,
    HelloAck,
    ConfigSet,
    ConfigAck,
    ConfigGet,
    FlowAdd,
    FlowMod,
    FlowDel,
    FlowAck,
    StatsReport,
    StatsSubscribe,
    UeSteer,
    ChannelSet,
    MgmtPolicySet,
    SliceCreate,
    SliceRead,
    SliceUpdate,
    SliceDelete,
    SliceAck,
    SessionNotify,
    Error,
}

impl MsgType {
    pub const ALL: [MsgType; 21] = [
        MsgType::Hello,
        MsgType::HelloAck,
        MsgType::ConfigSet,
        MsgType::ConfigAck,
        MsgType::ConfigGet,
        MsgType::FlowAdd,
        MsgType::FlowMod,
        MsgType::FlowDel,
        MsgType::FlowAck,
        MsgType::StatsReport,
        MsgType::StatsSubscribe,
        MsgType::UeSteer,
        MsgType::ChannelSet,
        MsgType::MgmtPolicySet,
        MsgType::SliceCreate,
        MsgType::SliceRead,
        MsgType::SliceUpdate,
        MsgType::SliceDelete,
        MsgType::SliceAck,
        MsgType::SessionNotify,
        MsgType::Error,
    ];

    pub fn code(self) -> u8 {
        match self {
            MsgType::Hello => 0x01,
            MsgType::HelloAck => 0x02,
            MsgType::ConfigSet => 0x10,
            MsgType::ConfigAck => 0x11,
            MsgType::ConfigGet => 0x12,
            MsgType::FlowAdd => 0x20,
            MsgType::FlowMod => 0x21,
            MsgType::FlowDel => 0x22,
            MsgType::FlowAck => 0x23,
            MsgType::StatsReport => 0x30,
            MsgType::StatsSubscribe => 0x31,
            MsgType::UeSteer => 0x40,
            MsgType::ChannelSet => 0x41,
            MsgType::MgmtPolicySet => 0x42,
            MsgType::SliceCreate => 0x50,
            MsgType::SliceRead => 0x51,
            MsgType::SliceUpdate => 0x52,
            MsgType::SliceDelete => 0x53,
            MsgType::SliceAck => 0x54,
            MsgType::SessionNotify => 0x61,
            MsgType::Error => 0x7F,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.code() == code)
    }

    /// Requests the controller sends toward the WAE. None of them carries
    /// user data.
    pub fn is_controller_request(self) -> bool {
        matches!(
            self,
            MsgType::Hello
                | MsgType::ConfigSet
                | MsgType::ConfigGet
                | MsgType::FlowAdd
                | MsgType::FlowMod
                | MsgType::FlowDel
                | MsgType::StatsSubscribe
                | MsgType::UeSteer
                | MsgType::ChannelSet
                | MsgType::MgmtPolicySet
                | MsgType::SliceCreate
                | MsgType::SliceRead
                | MsgType::SliceUpdate
                | MsgType::SliceDelete
        )
    }

    /// The reply type a request of this type expects.
    pub fn ack_type(self) -> Option<MsgType> {
        match self {
            MsgType::Hello => Some(MsgType::HelloAck),
            MsgType::ConfigSet
            | MsgType::ConfigGet
            | MsgType::StatsSubscribe
            | MsgType::UeSteer
            | MsgType::ChannelSet
            | MsgType::MgmtPolicySet => Some(MsgType::ConfigAck),
            MsgType::FlowAdd | MsgType::FlowMod | MsgType::FlowDel => Some(MsgType::FlowAck),
            MsgType::SliceCreate | MsgType::SliceRead | MsgType::SliceUpdate | MsgType::SliceDelete => {
                Some(MsgType::SliceAck)
            }
            _ => None,
        }
    }
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hello {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub controller_id: Option<u32>,
    /// Absent means version 1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proto_version: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HelloAck {
    pub wae_id: u32,
    pub ap_count: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WirePolicy {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suppress_probe_above_load: Option<u32>,
    #[serde(default)]
    pub deny_list: BTreeSet<u32>,
}

impl From<&MgmtPolicy> for WirePolicy {
    fn from(p: &MgmtPolicy) -> Self {
        Self {
            suppress_probe_above_load: p.suppress_probe_above_load,
            deny_list: p.deny_list.iter().map(|n| n.index).collect(),
        }
    }
}

impl From<&WirePolicy> for MgmtPolicy {
    fn from(p: &WirePolicy) -> Self {
        Self {
            suppress_probe_above_load: p.suppress_probe_above_load,
            deny_list: p.deny_list.iter().map(|i| NodeId::ue(*i)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigSet {
    pub ap: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tx_power_dbm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mgmt_policy: Option<WirePolicy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApConfigEntry {
    pub ap: u32,
    pub channel: u8,
    pub tx_power_dbm: f64,
    pub load: u32,
    pub mgmt_policy: WirePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleEntry {
    pub rule: u32,
    pub ue: u32,
    pub tc: String,
    pub dir: Direction,
    pub out: FlowOutput,
    pub slice: String,
}

/// WAE configuration snapshot returned for CONFIG_GET.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaeSnapshot {
    pub aps: Vec<ApConfigEntry>,
    pub rules: Vec<RuleEntry>,
    pub slices: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigAck {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ap: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<WaeSnapshot>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigGet {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub rule: u32,
    pub ue: u32,
    pub tc: String,
    pub dir: Direction,
    pub rate_mbps: f64,
    pub priority: u8,
    pub latency_us: u64,
    pub slice: String,
    pub out: FlowOutput,
    #[serde(default, skip_serializing_if = "is_false")]
    pub buffer: bool,
    /// Correlation id of the request this message belongs with (UE_STEER
    /// for a handover redirect).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain: Option<u64>,
}

impl From<&FlowRule> for RuleEntry {
    fn from(rule: &FlowRule) -> Self {
        Self {
            rule: rule.rule_id,
            ue: rule.matcher.ue.index,
            tc: rule.matcher.traffic_class.clone(),
            dir: rule.matcher.direction,
            out: rule.output,
            slice: rule.slice_id.clone(),
        }
    }
}

impl FlowSpec {
    pub fn from_rule(rule: &FlowRule, chain: Option<u64>) -> Self {
        Self {
            rule: rule.rule_id,
            ue: rule.matcher.ue.index,
            tc: rule.matcher.traffic_class.clone(),
            dir: rule.matcher.direction,
            rate_mbps: rule.qos.rate_mbps,
            priority: rule.qos.priority,
            latency_us: rule.qos.latency_budget_us,
            slice: rule.slice_id.clone(),
            out: rule.output,
            buffer: rule.buffer_during_handover,
            chain,
        }
    }

    pub fn to_rule(&self) -> FlowRule {
        FlowRule {
            rule_id: self.rule,
            matcher: FlowMatch {
                ue: NodeId::ue(self.ue),
                traffic_class: self.tc.clone(),
                direction: self.dir,
            },
            output: self.out,
            qos: self.qos(),
            slice_id: self.slice.clone(),
            buffer_during_handover: self.buffer,
        }
    }

    pub fn qos(&self) -> QosProfile {
        QosProfile {
            rate_mbps: self.rate_mbps,
            priority: self.priority,
            latency_budget_us: self.latency_us,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowRef {
    pub rule: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeRssi {
    pub ue: u32,
    pub rssi_dbm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApReport {
    pub ap: u32,
    pub channel: u8,
    pub load: u32,
    pub associated: Vec<u32>,
    pub rssi: Vec<UeRssi>,
    /// APs whose beacons this AP hears at or above the interference floor.
    pub neighbors: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsReport {
    pub time_us: u64,
    pub aps: Vec<ApReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StatsSubscribe {
    pub period_us: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeSteer {
    pub ue: u32,
    pub from_ap: u32,
    pub target_ap: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSet {
    pub ap: u32,
    pub channel: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MgmtPolicySet {
    pub ap: u32,
    pub policy: WirePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceBody {
    pub template: SliceTemplate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceRef {
    pub slice: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceAck {
    pub slice: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template: Option<SliceTemplate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionNotify {
    pub ue: u32,
    pub tunnel: u32,
    pub ap: u32,
    pub tc: String,
    pub qos: QosProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ErrorCode {
    UnknownAp,
    UnknownRule,
    BadSlice,
    BadChannel,
    UnknownUe,
    Handshake,
    NotEstablished,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErrorBody {
    pub code: ErrorCode,
    pub detail: String,
}

/// Typed payload; the variant determines the message type code.
#[derive(Debug, Clone, PartialEq)]
pub enum CmiBody {
    Hello(Hello),
    HelloAck(HelloAck),
    ConfigSet(ConfigSet),
    ConfigAck(ConfigAck),
    ConfigGet(ConfigGet),
    FlowAdd(FlowSpec),
    FlowMod(FlowSpec),
    FlowDel(FlowRef),
    FlowAck(FlowRef),
    StatsReport(StatsReport),
    StatsSubscribe(StatsSubscribe),
    UeSteer(UeSteer),
    ChannelSet(ChannelSet),
    MgmtPolicySet(MgmtPolicySet),
    SliceCreate(SliceBody),
    SliceRead(SliceRef),
    SliceUpdate(SliceBody),
    SliceDelete(SliceRef),
    SliceAck(SliceAck),
    SessionNotify(SessionNotify),
    Error(ErrorBody),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmiMessage {
    pub correlation_id: u64,
    pub body: CmiBody,
}

impl CmiMessage {
    pub fn new(correlation_id: u64, body: CmiBody) -> Self {
        Self { correlation_id, body }
    }

    pub fn msg_type(&self) -> MsgType {
        match &self.body {
            CmiBody::Hello(_) => MsgType::Hello,
            CmiBody::HelloAck(_) => MsgType::HelloAck,
            CmiBody::ConfigSet(_) => MsgType::ConfigSet,
            CmiBody::ConfigAck(_) => MsgType::ConfigAck,
            CmiBody::ConfigGet(_) => MsgType::ConfigGet,
            CmiBody::FlowAdd(_) => MsgType::FlowAdd,
            CmiBody::FlowMod(_) => MsgType::FlowMod,
            CmiBody::FlowDel(_) => MsgType::FlowDel,
            CmiBody::FlowAck(_) => MsgType::FlowAck,
            CmiBody::StatsReport(_) => MsgType::StatsReport,
            CmiBody::StatsSubscribe(_) => MsgType::StatsSubscribe,
            CmiBody::UeSteer(_) => MsgType::UeSteer,
            CmiBody::ChannelSet(_) => MsgType::ChannelSet,
            CmiBody::MgmtPolicySet(_) => MsgType::MgmtPolicySet,
            CmiBody::SliceCreate(_) => MsgType::SliceCreate,
            CmiBody::SliceRead(_) => MsgType::SliceRead,
            CmiBody::SliceUpdate(_) => MsgType::SliceUpdate,
            CmiBody::SliceDelete(_) => MsgType::SliceDelete,
            CmiBody::SliceAck(_) => MsgType::SliceAck,
            CmiBody::SessionNotify(_) => MsgType::SessionNotify,
            CmiBody::Error(_) => MsgType::Error,
        }
    }

    pub fn error(correlation_id: u64, code: ErrorCode, detail: impl Into<String>) -> Self {
        Self::new(
            correlation_id,
            CmiBody::Error(ErrorBody {
                code,
                detail: detail.into(),
            }),
        )
    }

    /// Payload as a JSON value (object with lexicographically ordered keys).
    pub fn payload_value(&self) -> serde_json::Value {
        let v = match &self.body {
            CmiBody::Hello(p) => serde_json::to_value(p),
            CmiBody::HelloAck(p) => serde_json::to_value(p),
            CmiBody::ConfigSet(p) => serde_json::to_value(p),
            CmiBody::ConfigAck(p) => serde_json::to_value(p),
            CmiBody::ConfigGet(p) => serde_json::to_value(p),
            CmiBody::FlowAdd(p) | CmiBody::FlowMod(p) => serde_json::to_value(p),
            CmiBody::FlowDel(p) | CmiBody::FlowAck(p) => serde_json::to_value(p),
            CmiBody::StatsReport(p) => serde_json::to_value(p),
            CmiBody::StatsSubscribe(p) => serde_json::to_value(p),
            CmiBody::UeSteer(p) => serde_json::to_value(p),
            CmiBody::ChannelSet(p) => serde_json::to_value(p),
            CmiBody::MgmtPolicySet(p) => serde_json::to_value(p),
            CmiBody::SliceCreate(p) | CmiBody::SliceUpdate(p) => serde_json::to_value(p),
            CmiBody::SliceRead(p) | CmiBody::SliceDelete(p) => serde_json::to_value(p),
            CmiBody::SliceAck(p) => serde_json::to_value(p),
            CmiBody::SessionNotify(p) => serde_json::to_value(p),
            CmiBody::Error(p) => serde_json::to_value(p),
        };
        v.expect("payload structs always serialize")
    }

    /// Parses a payload for `msg_type` and checks it against the type's
    /// schema.
    pub fn from_payload(
        msg_type: MsgType,
        correlation_id: u64,
        payload: &[u8],
    ) -> Result<Self, String> {
        fn p<T: serde::de::DeserializeOwned>(b: &[u8]) -> Result<T, String> {
            serde_json::from_slice(b).map_err(|e| e.to_string())
        }
        let body = match msg_type {
            MsgType::Hello => CmiBody::Hello(p(payload)?),
            MsgType::HelloAck => CmiBody::HelloAck(p(payload)?),
            MsgType::ConfigSet => CmiBody::ConfigSet(p(payload)?),
            MsgType::ConfigAck => CmiBody::ConfigAck(p(payload)?),
            MsgType::ConfigGet => CmiBody::ConfigGet(p(payload)?),
            MsgType::FlowAdd => CmiBody::FlowAdd(p(payload)?),
            MsgType::FlowMod => CmiBody::FlowMod(p(payload)?),
            MsgType::FlowDel => CmiBody::FlowDel(p(payload)?),
            MsgType::FlowAck => CmiBody::FlowAck(p(payload)?),
            MsgType::StatsReport => CmiBody::StatsReport(p(payload)?),
            MsgType::StatsSubscribe => CmiBody::StatsSubscribe(p(payload)?),
            MsgType::UeSteer => CmiBody::UeSteer(p(payload)?),
            MsgType::ChannelSet => CmiBody::ChannelSet(p(payload)?),
            MsgType::MgmtPolicySet => CmiBody::MgmtPolicySet(p(payload)?),
            MsgType::SliceCreate => CmiBody::SliceCreate(p(payload)?),
            MsgType::SliceRead => CmiBody::SliceRead(p(payload)?),
            MsgType::SliceUpdate => CmiBody::SliceUpdate(p(payload)?),
            MsgType::SliceDelete => CmiBody::SliceDelete(p(payload)?),
            MsgType::SliceAck => CmiBody::SliceAck(p(payload)?),
            MsgType::SessionNotify => CmiBody::SessionNotify(p(payload)?),
            MsgType::Error => CmiBody::Error(p(payload)?),
        };
        let msg = Self::new(correlation_id, body);
        msg.validate()?;
        Ok(msg)
    }

    /// Value-level schema rules that the serde shape alone cannot express.
    pub fn validate(&self) -> Result<(), String> {
        fn finite(x: f64, what: &str) -> Result<(), String> {
            if x.is_finite() {
                Ok(())
            } else {
                Err(format!("{what} must be finite"))
            }
        }
        fn channel(c: u8) -> Result<(), String> {
            if is_allowed_channel(c) {
                Ok(())
            } else {
                Err(format!("channel {c} not in {{1, 6, 11}}"))
            }
        }
        match &self.body {
            CmiBody::ConfigSet(c) => {
                if let Some(ch) = c.channel {
                    channel(ch)?;
                }
                if let Some(tx) = c.tx_power_dbm {
                    finite(tx, "tx_power_dbm")?;
                }
            }
            CmiBody::ConfigAck(a) => {
                if let Some(s) = &a.snapshot {
                    for ap in &s.aps {
                        channel(ap.channel)?;
                        finite(ap.tx_power_dbm, "tx_power_dbm")?;
                    }
                }
            }
            CmiBody::FlowAdd(f) | CmiBody::FlowMod(f) => {
                f.qos().validate().map_err(|e| e.to_string())?;
                if f.tc.is_empty() || f.slice.is_empty() {
                    return Err("traffic class and slice must be non-empty".into());
                }
            }
            CmiBody::StatsReport(r) => {
                for ap in &r.aps {
                    channel(ap.channel)?;
                    for u in &ap.rssi {
                        finite(u.rssi_dbm, "rssi_dbm")?;
                    }
                }
            }
            CmiBody::StatsSubscribe(s) if s.period_us == 0 => {
                return Err("period_us must be positive".into());
            }
            CmiBody::ChannelSet(c) => channel(c.channel)?,
            CmiBody::SliceCreate(s) | CmiBody::SliceUpdate(s) => s.template.validate()?,
            CmiBody::SliceAck(a) => {
                if let Some(t) = &a.template {
                    t.validate()?;
                }
            }
            CmiBody::SessionNotify(n) => {
                n.qos.validate().map_err(|e| e.to_string())?;
                if n.tc.is_empty() {
                    return Err("traffic class must be non-empty".into());
                }
            }
            _ => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes_are_distinct_and_invertible() {
        let mut seen = std::collections::HashSet::new();
        for t in MsgType::ALL {
            assert!(seen.insert(t.code()));
            assert_eq!(MsgType::from_code(t.code()), Some(t));
        }
        assert_eq!(MsgType::from_code(0xEE), None);
        assert_eq!(MsgType::from_code(0x00), None);
    }

    #[test]
    fn controller_requests_all_expect_acks() {
        for t in MsgType::ALL.into_iter().filter(|t| t.is_controller_request()) {
            assert!(t.ack_type().is_some(), "{t:?}");
        }
    }

    #[test]
    fn schema_rejects_bad_values() {
        let bad = br#"{"ap":1,"channel":3}"#;
        assert!(CmiMessage::from_payload(MsgType::ChannelSet, 1, bad).is_err());
        let extra = br#"{"ap":1,"channel":6,"x":1}"#;
        assert!(CmiMessage::from_payload(MsgType::ChannelSet, 1, extra).is_err());
        let ok = br#"{"channel":6,"ap":1}"#;
        assert!(CmiMessage::from_payload(MsgType::ChannelSet, 1, ok).is_ok());
    }
}
