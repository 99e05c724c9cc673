//! Scenario documents: topology, subscribers, UE behaviour, applications,
//! slices and timed directives.

pub mod presets;

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::apps::AppsConfig;
use crate::model::{is_allowed_channel, NodeId, Point, QosProfile};
use crate::sim::link::LinkParams;
use crate::sim::traffic::TrafficSpec;
use crate::slice::{SliceTemplate, DEFAULT_SLICE};

pub const SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_AUDIT_PERIOD_US: u64 = 5_000;
pub const DEFAULT_MAX_ASSOCIATED: u32 = 32;

fn default_channel() -> u8 {
    1
}
fn default_tx_power() -> f64 {
    20.0
}
fn default_max_associated() -> u32 {
    DEFAULT_MAX_ASSOCIATED
}
fn default_audit_period() -> u64 {
    DEFAULT_AUDIT_PERIOD_US
}
fn default_traffic_class() -> String {
    "be".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_us: u64,
    /// Start of the window used for RTT and throughput statistics.
    #[serde(default)]
    pub measure_from_us: u64,
    /// Mean spacing of controller audits; 0 disables them.
    #[serde(default = "default_audit_period")]
    pub audit_period_us: u64,
    pub topology: Topology,
    #[serde(default)]
    pub subscribers: Vec<SubscriberSpec>,
    #[serde(default)]
    pub ues: Vec<UeSpec>,
    #[serde(default)]
    pub apps: AppsConfig,
    #[serde(default)]
    pub slices: Vec<SliceTemplate>,
    #[serde(default)]
    pub directives: Vec<Directive>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Topology {
    #[serde(default)]
    pub wae: u32,
    pub aps: Vec<ApSpec>,
    #[serde(default)]
    pub links: LinkSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApSpec {
    pub id: u32,
    pub position: Point,
    #[serde(default = "default_channel")]
    pub channel: u8,
    #[serde(default = "default_tx_power")]
    pub tx_power_dbm: f64,
    #[serde(default = "default_max_associated")]
    pub max_associated: u32,
}

impl ApSpec {
    pub fn new(id: u32, x: f64, y: f64) -> Self {
        Self {
            id,
            position: Point { x, y },
            channel: default_channel(),
            tx_power_dbm: default_tx_power(),
            max_associated: DEFAULT_MAX_ASSOCIATED,
        }
    }
}

macro_rules! link_default {
    ($name:ident, $mbps:expr, $us:expr) => {
        fn $name() -> LinkParams {
            LinkParams::new($mbps, $us)
        }
    };
}
link_default!(radio_default, 50.0, 10);
link_default!(backhaul_default, 1000.0, 50);
link_default!(cmi_default, 100.0, 500);
link_default!(n2_default, 1000.0, 1000);
link_default!(n3_default, 1000.0, 1000);

/// Link parameters by role. `radio` applies to every AP's air interface,
/// `backhaul` to every AP-WAE link. In split-MAC wiring the N2 and N3 links
/// attach to the controller host instead of the WAE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkSet {
    #[serde(default = "radio_default")]
    pub radio: LinkParams,
    #[serde(default = "backhaul_default")]
    pub backhaul: LinkParams,
    #[serde(default = "cmi_default")]
    pub cmi: LinkParams,
    #[serde(default = "n2_default")]
    pub n2: LinkParams,
    #[serde(default = "n3_default")]
    pub n3: LinkParams,
}

impl Default for LinkSet {
    fn default() -> Self {
        Self {
            radio: radio_default(),
            backhaul: backhaul_default(),
            cmi: cmi_default(),
            n2: n2_default(),
            n3: n3_default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubscriberSpec {
    pub ue: u32,
    /// 16-byte permanent key, hex.
    pub key: String,
    pub qos: QosProfile,
    #[serde(default = "default_traffic_class")]
    pub traffic_class: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UeSpec {
    pub id: u32,
    /// Key the UE itself holds; defaults to the provisioned one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default)]
    pub start_us: u64,
    pub waypoints: Vec<Waypoint>,
    #[serde(default)]
    pub traffic: Vec<TrafficSpec>,
}

/// A position at a time, given directly or as an AP's location.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<Point>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_ap: Option<u32>,
}

impl Waypoint {
    pub fn at(t_us: u64, x: f64, y: f64) -> Self {
        Self {
            t_us,
            position: Some(Point { x, y }),
            at_ap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case", deny_unknown_fields)]
pub enum Directive {
    SliceCreate {
        at_us: u64,
        template: SliceTemplate,
    },
    SliceRead {
        at_us: u64,
        slice_id: String,
    },
    SliceUpdate {
        at_us: u64,
        template: SliceTemplate,
    },
    SliceDelete {
        at_us: u64,
        slice_id: String,
        #[serde(default)]
        force: bool,
    },
    SetApps {
        at_us: u64,
        apps: AppsConfig,
    },
    PushConfig {
        at_us: u64,
        ap: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        channel: Option<u8>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tx_power_dbm: Option<f64>,
    },
}

impl Directive {
    pub fn at_us(&self) -> u64 {
        match self {
            Directive::SliceCreate { at_us, .. }
            | Directive::SliceRead { at_us, .. }
            | Directive::SliceUpdate { at_us, .. }
            | Directive::SliceDelete { at_us, .. }
            | Directive::SetApps { at_us, .. }
            | Directive::PushConfig { at_us, .. } => *at_us,
        }
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("{} validation error(s):\n  {}", .0.len(), .0.join("\n  "))]
    Validation(Vec<String>),
}

pub fn parse_key(hex_key: &str) -> Result<[u8; 16], String> {
    let bytes = hex::decode(hex_key).map_err(|e| format!("key {hex_key:?}: {e}"))?;
    bytes
        .try_into()
        .map_err(|b: Vec<u8>| format!("key {hex_key:?}: expected 16 bytes, got {}", b.len()))
}

impl Scenario {
    pub fn ap(&self, id: u32) -> Option<&ApSpec> {
        self.topology.aps.iter().find(|a| a.id == id)
    }

    pub fn subscriber(&self, ue: u32) -> Option<&SubscriberSpec> {
        self.subscribers.iter().find(|s| s.ue == ue)
    }

    /// Key held by UE `ue`: its own override, else the provisioned key, else
    /// all zeros.
    pub fn ue_key(&self, ue: &UeSpec) -> [u8; 16] {
        ue.key
            .as_deref()
            .or(self.subscriber(ue.id).map(|s| s.key.as_str()))
            .and_then(|k| parse_key(k).ok())
            .unwrap_or([0; 16])
    }

    /// Resolved waypoints as (time, position).
    pub fn waypoints(&self, ue: &UeSpec) -> Vec<(u64, Point)> {
        ue.waypoints
            .iter()
            .filter_map(|w| {
                let p = match (w.position, w.at_ap) {
                    (Some(p), _) => p,
                    (None, Some(ap)) => self.ap(ap)?.position,
                    (None, None) => return None,
                };
                Some((w.t_us, p))
            })
            .collect()
    }

    /// Scales every traffic rate by `factor`. A factor of 0 removes the
    /// traffic entirely.
    pub fn scaled(&self, factor: f64) -> Scenario {
        let mut s = self.clone();
        for ue in &mut s.ues {
            if factor == 0.0 {
                ue.traffic.clear();
            } else {
                for t in &mut ue.traffic {
                    t.rate_mbps *= factor;
                }
            }
        }
        s
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("scenario serializes");
        s.push('\n');
        s
    }

    /// Every problem found, not just the first.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        let mut err = |m: String| errs.push(m);
        if self.schema != SCHEMA_VERSION {
            err(format!("schema {} is not supported (expected {SCHEMA_VERSION})", self.schema));
        }
        if self.duration_us == 0 {
            err("duration_us must be > 0".into());
        }
        if self.measure_from_us >= self.duration_us.max(1) {
            err(format!(
                "measure_from_us {} must be before the horizon {}",
                self.measure_from_us, self.duration_us
            ));
        }

        if self.topology.aps.is_empty() {
            err("topology has no APs".into());
        }
        let mut ap_ids = BTreeSet::new();
        for ap in &self.topology.aps {
            if !ap_ids.insert(ap.id) {
                err(format!("duplicate AP id {}", ap.id));
            }
            if !is_allowed_channel(ap.channel) {
                err(format!("AP {}: channel {} is not one of 1, 6, 11", ap.id, ap.channel));
            }
            if !ap.tx_power_dbm.is_finite() {
                err(format!("AP {}: tx_power_dbm must be finite", ap.id));
            }
            if !(ap.position.x.is_finite() && ap.position.y.is_finite()) {
                err(format!("AP {}: position must be finite", ap.id));
            }
            if ap.max_associated == 0 {
                err(format!("AP {}: max_associated must be > 0", ap.id));
            }
        }
        let l = &self.topology.links;
        for (name, p) in [
            ("radio", l.radio),
            ("backhaul", l.backhaul),
            ("cmi", l.cmi),
            ("n2", l.n2),
            ("n3", l.n3),
        ] {
            if !(p.capacity_mbps.is_finite() && p.capacity_bps() > 0) {
                err(format!("link {name}: capacity_mbps must be > 0"));
            }
        }

        let ue_ids: BTreeSet<u32> = self.ues.iter().map(|u| u.id).collect();
        let mut subs = BTreeSet::new();
        for s in &self.subscribers {
            if !subs.insert(s.ue) {
                err(format!("duplicate subscriber for UE {}", s.ue));
            }
            if let Err(e) = parse_key(&s.key) {
                err(format!("subscriber {}: {e}", s.ue));
            }
            if let Err(e) = s.qos.validate() {
                err(format!("subscriber {}: {e}", s.ue));
            }
            if s.traffic_class.is_empty() {
                err(format!("subscriber {}: empty traffic_class", s.ue));
            }
        }

        let mut seen = BTreeSet::new();
        for ue in &self.ues {
            let who = NodeId::ue(ue.id);
            if !seen.insert(ue.id) {
                err(format!("duplicate UE id {}", ue.id));
            }
            if let Some(k) = &ue.key {
                if let Err(e) = parse_key(k) {
                    err(format!("{who}: {e}"));
                }
            }
            if ue.waypoints.is_empty() {
                err(format!("{who}: needs at least one waypoint"));
            }
            for (i, w) in ue.waypoints.iter().enumerate() {
                match (w.position, w.at_ap) {
                    (Some(_), Some(_)) | (None, None) => {
                        err(format!("{who}: waypoint {i} needs exactly one of position, at_ap"))
                    }
                    (None, Some(ap)) if !ap_ids.contains(&ap) => {
                        err(format!("{who}: waypoint {i} references unknown AP {ap}"))
                    }
                    (Some(p), None) if !(p.x.is_finite() && p.y.is_finite()) => {
                        err(format!("{who}: waypoint {i} position must be finite"))
                    }
                    _ => {}
                }
                if i > 0 && w.t_us <= ue.waypoints[i - 1].t_us {
                    err(format!("{who}: waypoint times must be strictly increasing"));
                }
            }
            for (i, t) in ue.traffic.iter().enumerate() {
                if let Err(e) = t.validate() {
                    err(format!("{who}: traffic {i}: {}", e.0));
                }
            }
        }

        if let Some(m) = &self.apps.mobility {
            if let Err(e) = m.validate() {
                err(format!("apps.mobility: {e}"));
            }
        }
        if let Some(a) = &self.apps.admission {
            if a.threshold == 0 {
                err("apps.admission: threshold must be > 0".into());
            }
        }

        let mut slices: BTreeSet<String> = BTreeSet::new();
        let mut live: Vec<SliceTemplate> = Vec::new();
        for t in &self.slices {
            if !slices.insert(t.slice_id.clone()) {
                err(format!("duplicate slice id {:?}", t.slice_id));
            }
            check_template(t, &ue_ids, &live, &mut err);
            live.push(t.clone());
        }

        let mut last = 0;
        for (i, d) in self.directives.iter().enumerate() {
            let at = d.at_us();
            if at < last {
                err(format!("directive {i}: directives must be in time order"));
            }
            last = at;
            if at >= self.duration_us {
                err(format!("directive {i}: at_us {at} is past the horizon"));
            }
            match d {
                Directive::SliceCreate { template, .. } => {
                    if live.iter().any(|s| s.slice_id == template.slice_id) {
                        err(format!("directive {i}: duplicate slice id {:?}", template.slice_id));
                    }
                    check_template(template, &ue_ids, &live, &mut err);
                    live.push(template.clone());
                }
                Directive::SliceUpdate { template, .. } => {
                    let Some(pos) = live.iter().position(|s| s.slice_id == template.slice_id) else {
                        err(format!("directive {i}: unknown slice {:?}", template.slice_id));
                        continue;
                    };
                    let others: Vec<_> = live.iter().filter(|s| s.slice_id != template.slice_id).cloned().collect();
                    check_template(template, &ue_ids, &others, &mut err);
                    live[pos] = template.clone();
                }
                Directive::SliceRead { slice_id, .. } => {
                    if slice_id != DEFAULT_SLICE && !live.iter().any(|s| &s.slice_id == slice_id) {
                        err(format!("directive {i}: unknown slice {slice_id:?}"));
                    }
                }
                Directive::SliceDelete { slice_id, .. } => {
                    if !live.iter().any(|s| &s.slice_id == slice_id) {
                        err(format!("directive {i}: unknown slice {slice_id:?}"));
                    }
                    live.retain(|s| &s.slice_id != slice_id);
                }
                Directive::SetApps { apps, .. } => {
                    if let Some(Err(e)) = apps.mobility.as_ref().map(|m| m.validate()) {
                        err(format!("directive {i}: {e}"));
                    }
                }
                Directive::PushConfig {
                    ap,
                    channel,
                    tx_power_dbm,
                    ..
                } => {
                    if !ap_ids.contains(ap) {
                        err(format!("directive {i}: unknown AP {ap}"));
                    }
                    if channel.is_some_and(|c| !is_allowed_channel(c)) {
                        err(format!("directive {i}: channel {} is not one of 1, 6, 11", channel.unwrap()));
                    }
                    if tx_power_dbm.is_some_and(|p| !p.is_finite()) {
                        err(format!("directive {i}: tx_power_dbm must be finite"));
                    }
                }
            }
        }

        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

fn check_template(t: &SliceTemplate, ues: &BTreeSet<u32>, live: &[SliceTemplate], err: &mut impl FnMut(String)) {
    if let Err(e) = t.validate() {
        err(format!("slice {:?}: {e}", t.slice_id));
    }
    if t.is_default() {
        err(format!("slice {:?} is reserved", t.slice_id));
    }
    for u in &t.filter.ues {
        if !ues.contains(u) {
            err(format!("slice {:?} references unknown UE {u}", t.slice_id));
        }
    }
    if let Some(o) = live.iter().find(|s| s.conflicts_with(t)) {
        err(format!("slice {:?} filter overlaps slice {:?}", t.slice_id, o.slice_id));
    }
}

/// Parses and validates a scenario document.
pub fn parse_scenario_str(text: &str) -> Result<Scenario, ScenarioError> {
    let sc: Scenario = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
        line: e.line(),
        reason: e.to_string(),
    })?;
    sc.validate().map_err(ScenarioError::Validation)?;
    Ok(sc)
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario_str(&text)
}

#[cfg(test)]
mod tests;
