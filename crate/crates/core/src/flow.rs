//! Match-action flow rules shared by the controller and the WAE.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::model::{NodeId, QosProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Direction {
    Up,
    Down,
}

/// Traffic class tag used when a flow does not name one.
pub const DEFAULT_TRAFFIC_CLASS: &str = "be";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FlowMatch {
    pub ue: NodeId,
    pub traffic_class: String,
    pub direction: Direction,
}

/// Rule output: an AP port (downlink) or an N3 tunnel (uplink).
///
/// On the wire this is the string `AP:<index>` or `N3:<tunnel_id>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FlowOutput {
    Ap(u32),
    N3(u32),
}

impl fmt::Display for FlowOutput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FlowOutput::Ap(i) => write!(f, "AP:{i}"),
            FlowOutput::N3(t) => write!(f, "N3:{t}"),
        }
    }
}

impl FromStr for FlowOutput {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, num) = s.split_once(':').ok_or_else(|| format!("bad output {s:?}"))?;
        if num.is_empty() || !num.bytes().all(|b| b.is_ascii_digit()) {
            return Err(format!("bad output {s:?}"));
        }
        let n: u32 = num.parse().map_err(|_| format!("bad output {s:?}"))?;
        match kind {
            "AP" => Ok(FlowOutput::Ap(n)),
            "N3" => Ok(FlowOutput::N3(n)),
            _ => Err(format!("bad output {s:?}")),
        }
    }
}

impl Serialize for FlowOutput {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FlowOutput {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowRule {
    pub rule_id: u32,
    pub matcher: FlowMatch,
    pub output: FlowOutput,
    pub qos: QosProfile,
    pub slice_id: String,
    /// Hold downlink packets at the WAE until the UE re-associates.
    pub buffer_during_handover: bool,
}
