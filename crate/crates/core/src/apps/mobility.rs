use serde::{Deserialize, Serialize};

use crate::controller::view::UeView;
use crate::model::{NodeId, UeState};

/// Handover trigger: a candidate must beat the serving AP by more than
/// `hysteresis_db` in each of the last `consecutive_reports` rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HandoverPolicy {
    #[serde(default = "default_hysteresis")]
    pub hysteresis_db: f64,
    #[serde(default = "default_reports")]
    pub consecutive_reports: u32,
}

fn default_hysteresis() -> f64 {
    3.0
}

fn default_reports() -> u32 {
    2
}

impl Default for HandoverPolicy {
    fn default() -> Self {
        Self {
            hysteresis_db: default_hysteresis(),
            consecutive_reports: default_reports(),
        }
    }
}

impl HandoverPolicy {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.hysteresis_db.is_finite() && self.hysteresis_db > 0.0) {
            return Err(format!("hysteresis_db must be > 0, got {}", self.hysteresis_db));
        }
        if self.consecutive_reports == 0 {
            return Err("consecutive_reports must be >= 1".into());
        }
        Ok(())
    }
}

pub fn ho_decide(policy: &HandoverPolicy, ue: &UeView) -> Option<NodeId> {
    if ue.state != UeState::SessionActive {
        return None;
    }
    let serving = ue.serving_ap?;
    let k = policy.consecutive_reports as usize;
    if k == 0 || ue.rssi_history.len() < k {
        return None;
    }
    let window: Vec<_> = ue.rssi_history.iter().rev().take(k).collect();
    let latest = window[0];
    let mut best: Option<(NodeId, f64)> = None;
    for (&ap, &rssi) in &latest.readings {
        if ap == serving {
            continue;
        }
        let qualifies = window.iter().all(|r| match (r.readings.get(&ap), r.readings.get(&serving)) {
            (Some(c), Some(s)) => *c > *s + policy.hysteresis_db,
            _ => false,
        });
        // Strictly stronger wins; equal RSSI keeps the lower index.
        if qualifies && best.is_none_or(|(_, b)| rssi > b) {
            best = Some((ap, rssi));
        }
    }
    best.map(|(ap, _)| ap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ue_with(rounds: &[(f64, f64)]) -> UeView {
        let mut v = UeView {
            state: UeState::SessionActive,
            serving_ap: Some(NodeId::ap(0)),
            ..Default::default()
        };
        for (t, (s, c)) in rounds.iter().enumerate() {
            v.record_rssi(t as u64 * 100, NodeId::ap(0), *s);
            v.record_rssi(t as u64 * 100, NodeId::ap(1), *c);
        }
        v
    }

    #[test]
    fn four_db_margin_twice_hands_over() {
        let p = HandoverPolicy::default();
        assert_eq!(ho_decide(&p, &ue_with(&[(-70.0, -66.0), (-70.0, -66.0)])), Some(NodeId::ap(1)));
    }

    #[test]
    fn first_report_short_of_margin() {
        let p = HandoverPolicy::default();
        assert_eq!(ho_decide(&p, &ue_with(&[(-70.0, -68.0), (-70.0, -66.0)])), None);
    }

    #[test]
    fn too_few_reports_or_wrong_state() {
        let p = HandoverPolicy::default();
        assert_eq!(ho_decide(&p, &ue_with(&[(-70.0, -60.0)])), None);
        let mut v = ue_with(&[(-70.0, -60.0), (-70.0, -60.0)]);
        v.state = UeState::Handover;
        assert_eq!(ho_decide(&p, &v), None);
    }

    #[test]
    fn missing_serving_reading_blocks() {
        let p = HandoverPolicy::default();
        let mut v = ue_with(&[(-70.0, -60.0)]);
        v.record_rssi(500, NodeId::ap(1), -60.0);
        assert_eq!(ho_decide(&p, &v), None);
    }

    #[test]
    fn oscillation_around_serving_never_triggers() {
        let p = HandoverPolicy::default();
        let mut v = ue_with(&[]);
        let mut handovers = 0;
        for t in 0..200u64 {
            let c = if t % 2 == 0 { -69.0 } else { -71.0 };
            v.record_rssi(t * 100, NodeId::ap(0), -70.0);
            v.record_rssi(t * 100, NodeId::ap(1), c);
            if ho_decide(&p, &v).is_some() {
                handovers += 1;
            }
        }
        assert_eq!(handovers, 0);
    }

    proptest! {
        /// If any report in the window has the candidate within h of serving,
        /// no handover fires.
        #[test]
        fn no_ping_pong(
            walk in prop::collection::vec((-90i32..-40, -6i32..6), 2..30),
            k in 1u32..4,
            weak_slot in 0usize..4,
        ) {
            let p = HandoverPolicy { hysteresis_db: 3.0, consecutive_reports: k };
            let mut rounds: Vec<(f64, f64)> = walk
                .iter()
                .map(|(s, d)| (*s as f64, (*s + *d * 2) as f64))
                .collect();
            let n = rounds.len();
            let slot = n - 1 - (weak_slot % (k as usize).min(n));
            let s = rounds[slot].0;
            rounds[slot].1 = s + 2.5;
            prop_assert_eq!(ho_decide(&p, &ue_with(&rounds)), None);
        }

        #[test]
        fn never_returns_serving(walk in prop::collection::vec((-90i32..-40, -90i32..-40), 1..10)) {
            let rounds: Vec<(f64, f64)> = walk.iter().map(|(a, b)| (*a as f64, *b as f64)).collect();
            let v = ue_with(&rounds);
            prop_assert_ne!(ho_decide(&HandoverPolicy::default(), &v), Some(NodeId::ap(0)));
        }
    }
}
