//! Log-distance path loss and the geometric interference graph.

use crate::apps::ConflictGraph;
use crate::model::{NodeId, Point};

pub const PL0_DB: f64 = 40.0;
pub const D0_M: f64 = 1.0;
pub const PATH_LOSS_EXPONENT: f64 = 3.0;
/// Weakest signal that counts as in range, for association and interference
/// alike.
pub const RANGE_THRESHOLD_DBM: f64 = -82.0;
pub const AP_RADIO_MBPS: f64 = 50.0;

/// Received power of a transmitter at `tx_power_dbm` located `from` → `to`.
pub fn rssi(tx_power_dbm: f64, from: Point, to: Point) -> f64 {
    let d = from.distance(&to).max(D0_M);
    tx_power_dbm - (PL0_DB + 10.0 * PATH_LOSS_EXPONENT * (d / D0_M).log10())
}

pub fn in_range(rssi_dbm: f64) -> bool {
    rssi_dbm >= RANGE_THRESHOLD_DBM
}

/// An edge wherever either AP hears the other in range.
pub fn build_conflict_graph(aps: &[(NodeId, Point, f64)]) -> ConflictGraph {
    let mut g = ConflictGraph::new(aps.iter().map(|a| a.0));
    for (i, a) in aps.iter().enumerate() {
        for b in &aps[i + 1..] {
            let ab = rssi(a.2, a.1, b.1);
            let ba = rssi(b.2, b.1, a.1);
            if in_range(ab.max(ba)) {
                g.add_edge(a.0, b.0);
            }
        }
    }
    g
}

/// APs that `ap` hears in range, by index order.
pub fn neighbors_of(ap: usize, aps: &[(NodeId, Point, f64)]) -> Vec<NodeId> {
    aps.iter()
        .enumerate()
        .filter(|(j, b)| *j != ap && in_range(rssi(b.2, b.1, aps[ap].1)))
        .map(|(_, b)| b.0)
        .collect()
}
