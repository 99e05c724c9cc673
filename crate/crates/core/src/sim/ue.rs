//! Simulated UE: lifecycle context, mobility and scan bookkeeping. The
//! world drives it; this module holds the per-UE state and pure helpers.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::model::{ue_transition, IllegalTransition, NodeId, Point, UeContext, UeTrigger};
use crate::packet::Packet;

/// Probe rounds per scan, spaced by [`PROBE_INTERVAL_US`].
pub const PROBE_ROUNDS: u32 = 4;
pub const PROBE_INTERVAL_US: u64 = 10_000;
/// Back-off before scanning again after a failed or empty scan.
pub const RESCAN_US: u64 = 500_000;
/// Uplink held by the UE while it moves between APs.
pub const UE_HOLD_PACKETS: usize = 256;
/// Transmit power of every UE.
pub const UE_TX_POWER_DBM: f64 = 20.0;

/// Position on a piecewise-linear path, held at the ends.
pub fn position_at(waypoints: &[(u64, Point)], t_us: u64) -> Point {
    let Some(&(t0, p0)) = waypoints.first() else {
        return Point::default();
    };
    if t_us <= t0 {
        return p0;
    }
    for w in waypoints.windows(2) {
        let ((ta, a), (tb, b)) = (w[0], w[1]);
        if t_us <= tb {
            let f = (t_us - ta) as f64 / (tb - ta) as f64;
            return Point {
                x: a.x + (b.x - a.x) * f,
                y: a.y + (b.y - a.y) * f,
            };
        }
    }
    waypoints.last().expect("non-empty").1
}

/// Strongest responder; ties go to the lower AP index.
pub fn pick_strongest(responses: &BTreeMap<NodeId, f64>) -> Option<NodeId> {
    let mut best: Option<(NodeId, f64)> = None;
    for (&ap, &rssi) in responses {
        if best.is_none_or(|(_, b)| rssi > b) {
            best = Some((ap, rssi));
        }
    }
    best.map(|(ap, _)| ap)
}

#[derive(Debug, Clone)]
pub struct UeAgent {
    pub ctx: UeContext,
    pub waypoints: Vec<(u64, Point)>,
    pub position: Point,
    pub start_us: u64,
    /// Bumped on every scan so stale scan timers can be recognised.
    pub attempt: u32,
    pub responses: BTreeMap<NodeId, f64>,
    pub pending_ap: Option<NodeId>,
    pub handover_target: Option<NodeId>,
    /// Set after an authentication reject; the UE never retries.
    pub rejected: bool,
    pub hold: VecDeque<Packet>,
    pub hold_drops: u64,
    pub traffic_started: bool,
    pub anchors: BTreeSet<(NodeId, u32)>,
    pub handovers: u64,
    pub associations: u64,
    pub illegal: Vec<IllegalTransition>,
}

impl UeAgent {
    pub fn new(ue: NodeId, key: [u8; 16], waypoints: Vec<(u64, Point)>, start_us: u64) -> Self {
        let position = position_at(&waypoints, 0);
        Self {
            ctx: UeContext::new(ue, key),
            waypoints,
            position,
            start_us,
            attempt: 0,
            responses: BTreeMap::new(),
            pending_ap: None,
            handover_target: None,
            rejected: false,
            hold: VecDeque::new(),
            hold_drops: 0,
            traffic_started: false,
            anchors: BTreeSet::new(),
            handovers: 0,
            associations: 0,
            illegal: Vec::new(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.ctx.ue
    }

    /// Applies a lifecycle trigger; illegal ones are recorded and ignored.
    pub fn fire(&mut self, trigger: UeTrigger) -> bool {
        match ue_transition(&self.ctx, trigger) {
            Ok(next) => {
                self.ctx = next;
                true
            }
            Err(e) => {
                self.illegal.push(e);
                false
            }
        }
    }

    pub fn move_to(&mut self, t_us: u64) {
        self.position = position_at(&self.waypoints, t_us);
    }

    pub fn hold_uplink(&mut self, pkt: Packet) {
        if self.hold.len() >= UE_HOLD_PACKETS {
            self.hold.pop_front();
            self.hold_drops += 1;
        }
        self.hold.push_back(pkt);
    }
}
