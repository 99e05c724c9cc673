//! Network slice templates: traffic filters bound to weighted data-plane
//! resources.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// Slice that catches every flow not matched by an explicit template.
pub const DEFAULT_SLICE: &str = "default";

/// Matches (UE, traffic class) pairs. An empty set on either axis is a
/// wildcard for that axis.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceFilter {
    #[serde(default)]
    pub ues: BTreeSet<u32>,
    #[serde(default)]
    pub traffic_classes: BTreeSet<String>,
}

impl SliceFilter {
    pub fn for_ues(ues: impl IntoIterator<Item = u32>) -> Self {
        Self {
            ues: ues.into_iter().collect(),
            traffic_classes: BTreeSet::new(),
        }
    }

    pub fn matches(&self, ue: u32, traffic_class: &str) -> bool {
        (self.ues.is_empty() || self.ues.contains(&ue))
            && (self.traffic_classes.is_empty() || self.traffic_classes.contains(traffic_class))
    }

    /// True when some (UE, class) pair matches both filters.
    pub fn overlaps(&self, other: &SliceFilter) -> bool {
        let ues = self.ues.is_empty() || other.ues.is_empty() || !self.ues.is_disjoint(&other.ues);
        let classes = self.traffic_classes.is_empty()
            || other.traffic_classes.is_empty()
            || !self.traffic_classes.is_disjoint(&other.traffic_classes);
        ues && classes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SliceTemplate {
    pub slice_id: String,
    #[serde(default)]
    pub filter: SliceFilter,
    pub weight: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_cap_mbps: Option<f64>,
}

impl SliceTemplate {
    pub fn new(slice_id: impl Into<String>, filter: SliceFilter, weight: u32) -> Self {
        Self {
            slice_id: slice_id.into(),
            filter,
            weight,
            rate_cap_mbps: None,
        }
    }

    /// The catch-all slice. It takes part in no disjointness checks.
    pub fn default_slice() -> Self {
        Self::new(DEFAULT_SLICE, SliceFilter::default(), 1)
    }

    pub fn is_default(&self) -> bool {
        self.slice_id == DEFAULT_SLICE
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.slice_id.is_empty() {
            return Err("slice_id must not be empty".into());
        }
        if self.weight < 1 {
            return Err(format!("slice {}: weight must be >= 1", self.slice_id));
        }
        if let Some(cap) = self.rate_cap_mbps {
            if !(cap.is_finite() && cap > 0.0) {
                return Err(format!("slice {}: rate cap must be positive", self.slice_id));
            }
        }
        Ok(())
    }

    pub fn conflicts_with(&self, other: &SliceTemplate) -> bool {
        !self.is_default() && !other.is_default() && self.filter.overlaps(&other.filter)
    }
}

/// The explicit slice whose filter matches, else the default slice if
/// present.
pub fn select_slice<'a>(
    slices: impl IntoIterator<Item = &'a SliceTemplate>,
    ue: u32,
    traffic_class: &str,
) -> Option<&'a SliceTemplate> {
    let mut fallback = None;
    for s in slices {
        if s.is_default() {
            fallback = Some(s);
        } else if s.filter.matches(ue, traffic_class) {
            return Some(s);
        }
    }
    fallback
}
