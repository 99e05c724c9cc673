//! Data plane: the WLAN access engine and the APs behind it.

pub mod ap;
pub mod flow_table;
pub mod scheduler;
pub mod wae;

use serde::{Deserialize, Serialize};

pub use ap::{ap_handle_probe, ApNode, ApOut, ProbeOutcome};
pub use flow_table::{FlowTable, FlowTableError};
pub use scheduler::{Dequeue, SliceScheduler, TokenBucket};
pub use wae::{DropReason, ForwardDecision, Wae, WaeAction, WaeConfig};

/// Where control and user planes meet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Mode {
    /// A dedicated aggregation entity; the controller only speaks CMI.
    Proposed,
    /// Baseline: user data and CMI share the controller's link.
    SplitMac,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Proposed, Mode::SplitMac];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Proposed => "proposed",
            Mode::SplitMac => "splitmac",
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "proposed" => Ok(Mode::Proposed),
            "splitmac" | "split-mac" => Ok(Mode::SplitMac),
            _ => Err(format!("unknown mode {s:?} (expected proposed or splitmac)")),
        }
    }
}
