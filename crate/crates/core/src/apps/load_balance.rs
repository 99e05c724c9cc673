use std::cmp::Ordering;

use thiserror::Error;

use crate::model::NodeId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbCandidate {
    pub ap: NodeId,
    pub rssi_dbm: f64,
    pub load: u32,
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("no candidate AP")]
pub struct NoCandidate;

/// Least-loaded AP; ties go to the stronger RSSI, then the lower AP index.
pub fn lb_select_ap(candidates: &[LbCandidate]) -> Result<NodeId, NoCandidate> {
    candidates
        .iter()
        .min_by(|a, b| {
            a.load
                .cmp(&b.load)
                .then_with(|| b.rssi_dbm.total_cmp(&a.rssi_dbm))
                .then_with(|| a.ap.index.cmp(&b.ap.index))
                .then(Ordering::Equal)
        })
        .map(|c| c.ap)
        .ok_or(NoCandidate)
}
