use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::model::{MgmtPolicy, NodeId, UeState};
use crate::slice::SliceTemplate;

/// RSSI readings kept per UE.
pub const RSSI_HISTORY_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct ApView {
    pub channel: u8,
    /// Associated UE count.
    pub load: u32,
    pub associated: BTreeSet<NodeId>,
    pub ue_rssi: BTreeMap<NodeId, f64>,
    pub neighbors: BTreeSet<NodeId>,
    /// Neighbours sharing each channel, as last computed.
    pub interference_count: BTreeMap<u8, u32>,
    /// Policy most recently pushed to the AP.
    pub mgmt_policy: MgmtPolicy,
    pub tx_power_dbm: Option<f64>,
}

impl ApView {
    pub fn new(channel: u8) -> Self {
        Self {
            channel,
            load: 0,
            associated: BTreeSet::new(),
            ue_rssi: BTreeMap::new(),
            neighbors: BTreeSet::new(),
            interference_count: BTreeMap::new(),
            mgmt_policy: MgmtPolicy::default(),
            tx_power_dbm: None,
        }
    }
}

/// One measurement round for a UE: RSSI seen by each AP that heard it.
#[derive(Debug, Clone, PartialEq)]
pub struct RssiReport {
    pub time_us: u64,
    pub readings: BTreeMap<NodeId, f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UeView {
    pub state: UeState,
    pub serving_ap: Option<NodeId>,
    pub tunnel_id: Option<u32>,
    pub traffic_class: Option<String>,
    pub rssi_history: VecDeque<RssiReport>,
}

impl Default for UeView {
    fn default() -> Self {
        Self {
            state: UeState::Idle,
            serving_ap: None,
            tunnel_id: None,
            traffic_class: None,
            rssi_history: VecDeque::with_capacity(RSSI_HISTORY_LEN),
        }
    }
}

impl UeView {
    /// Records a reading. Readings with the same timestamp share a round;
    /// rounds stay ordered by time and only the last eight are kept.
    pub fn record_rssi(&mut self, time_us: u64, ap: NodeId, rssi_dbm: f64) {
        let pos = self
            .rssi_history
            .iter()
            .rposition(|r| r.time_us <= time_us);
        match pos {
            Some(i) if self.rssi_history[i].time_us == time_us => {
                self.rssi_history[i].readings.insert(ap, rssi_dbm);
            }
            _ => {
                let at = pos.map_or(0, |i| i + 1);
                let report = RssiReport {
                    time_us,
                    readings: BTreeMap::from([(ap, rssi_dbm)]),
                };
                self.rssi_history.insert(at, report);
                while self.rssi_history.len() > RSSI_HISTORY_LEN {
                    self.rssi_history.pop_front();
                }
            }
        }
    }

    pub fn latest(&self) -> Option<&RssiReport> {
        self.rssi_history.back()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetworkView {
    pub aps: BTreeMap<NodeId, ApView>,
    pub ues: BTreeMap<NodeId, UeView>,
    pub slices: BTreeMap<String, SliceTemplate>,
    pub last_report_time: u64,
}

impl NetworkView {
    pub fn check_invariants(&self) -> Result<(), String> {
        for (ue, v) in &self.ues {
            if let Some(ap) = v.serving_ap {
                if !self.aps.contains_key(&ap) {
                    return Err(format!("{ue} served by unknown {ap}"));
                }
            }
            if v.rssi_history.iter().zip(v.rssi_history.iter().skip(1)).any(|(a, b)| a.time_us >= b.time_us) {
                return Err(format!("{ue} rssi history out of order"));
            }
        }
        let explicit: Vec<_> = self.slices.values().collect();
        for (i, a) in explicit.iter().enumerate() {
            for b in &explicit[i + 1..] {
                if a.conflicts_with(b) {
                    return Err(format!("slices {} and {} overlap", a.slice_id, b.slice_id));
                }
            }
        }
        Ok(())
    }

    /// Recomputes per-channel interference counts from neighbour sets.
    pub fn refresh_interference(&mut self) {
        let channels: BTreeMap<NodeId, u8> = self.aps.iter().map(|(id, a)| (*id, a.channel)).collect();
        for ap in self.aps.values_mut() {
            let mut counts = BTreeMap::new();
            for n in &ap.neighbors {
                if let Some(ch) = channels.get(n) {
                    *counts.entry(*ch).or_insert(0) += 1;
                }
            }
            ap.interference_count = counts;
        }
    }
}
