//! Application functions hosted on the controller. Everything here is pure
//! decision logic over a snapshot of the network view; the controller turns
//! the decisions into CMI messages.

pub mod admission;
pub mod channels;
pub mod load_balance;
pub mod mobility;

use serde::{Deserialize, Serialize};

pub use admission::{admission_policy_update, AdmissionParams};
pub use channels::{assign_channels, conflict_count, ConflictGraph};
pub use load_balance::{lb_select_ap, LbCandidate, NoCandidate};
pub use mobility::{ho_decide, HandoverPolicy};

/// Which applications run and with what parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AppsConfig {
    #[serde(default)]
    pub load_balancing: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub admission: Option<AdmissionParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mobility: Option<HandoverPolicy>,
    #[serde(default)]
    pub interference: bool,
}
