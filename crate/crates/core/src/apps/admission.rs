use serde::{Deserialize, Serialize};

use crate::controller::view::NetworkView;
use crate::model::{MgmtPolicy, NodeId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdmissionParams {
    /// Suppress probe responses at this many associated UEs.
    #[serde(default = "default_threshold")]
    pub threshold: u32,
    /// Suppression is lifted once load falls below `threshold - hysteresis`.
    #[serde(default = "default_hysteresis")]
    pub hysteresis: u32,
}

fn default_threshold() -> u32 {
    8
}

fn default_hysteresis() -> u32 {
    2
}

impl Default for AdmissionParams {
    fn default() -> Self {
        Self {
            threshold: default_threshold(),
            hysteresis: default_hysteresis(),
        }
    }
}

/// Policy changes for overloaded and recovered APs. Deny lists are carried
/// through untouched.
pub fn admission_policy_update(view: &NetworkView, params: &AdmissionParams) -> Vec<(NodeId, MgmtPolicy)> {
    let t = params.threshold;
    let release_below = t.saturating_sub(params.hysteresis);
    let mut out = Vec::new();
    for (id, ap) in &view.aps {
        let current = ap.mgmt_policy.suppress_probe_above_load;
        let wanted = if ap.load >= t {
            Some(t)
        } else if current.is_some() && ap.load < release_below {
            None
        } else {
            current
        };
        if wanted != current {
            let mut policy = ap.mgmt_policy.clone();
            policy.suppress_probe_above_load = wanted;
            out.push((*id, policy));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::view::ApView;
    use proptest::prelude::*;

    fn view_with(load: u32, suppressed: Option<u32>) -> NetworkView {
        let mut v = NetworkView::default();
        let mut ap = ApView::new(1);
        ap.load = load;
        ap.mgmt_policy.suppress_probe_above_load = suppressed;
        v.aps.insert(NodeId::ap(0), ap);
        v
    }

    fn apply(v: &mut NetworkView, changes: &[(NodeId, MgmtPolicy)]) {
        for (id, p) in changes {
            v.aps.get_mut(id).unwrap().mgmt_policy = p.clone();
        }
    }

    #[test]
    fn threshold_crossing_suppresses() {
        let out = admission_policy_update(&view_with(8, None), &AdmissionParams::default());
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].1.suppress_probe_above_load, Some(8));
    }

    #[test]
    fn hysteresis_band_holds() {
        let p = AdmissionParams::default();
        assert!(admission_policy_update(&view_with(7, Some(8)), &p).is_empty());
        assert!(admission_policy_update(&view_with(6, Some(8)), &p).is_empty());
    }

    #[test]
    fn load_toggle_sequence() {
        // Load rises past T, falls into the band, then below it.
        let p = AdmissionParams::default();
        let mut v = view_with(0, None);
        let mut emitted = Vec::new();
        for load in [3, 8, 9, 7, 6, 5, 4, 8] {
            v.aps.get_mut(&NodeId::ap(0)).unwrap().load = load;
            let out = admission_policy_update(&v, &p);
            emitted.push(out.first().map(|(_, p)| p.suppress_probe_above_load));
            apply(&mut v, &out);
        }
        assert_eq!(
            emitted,
            vec![None, Some(Some(8)), None, None, None, Some(None), None, Some(Some(8))]
        );
    }

    #[test]
    fn deny_list_preserved() {
        let mut v = view_with(9, None);
        v.aps.get_mut(&NodeId::ap(0)).unwrap().mgmt_policy.deny_list.insert(NodeId::ue(4));
        let out = admission_policy_update(&v, &AdmissionParams::default());
        assert!(out[0].1.deny_list.contains(&NodeId::ue(4)));
    }

    proptest! {
        #[test]
        fn idempotent_on_unchanged_view(loads in prop::collection::vec((0u32..12, any::<bool>()), 1..6)) {
            let p = AdmissionParams::default();
            let mut v = NetworkView::default();
            for (i, (load, s)) in loads.iter().enumerate() {
                let mut ap = ApView::new(1);
                ap.load = *load;
                ap.mgmt_policy.suppress_probe_above_load = s.then_some(8);
                v.aps.insert(NodeId::ap(i as u32), ap);
            }
            let first = admission_policy_update(&v, &p);
            apply(&mut v, &first);
            prop_assert!(admission_policy_update(&v, &p).is_empty());
        }
    }
}
