//! The RAN controller: network view, configuration push (RMF), flow
//! programming (FCF), UE/AP control (RCF), slice management (NV) and the
//! hosting surface for the control applications.
//!
//! The controller performs no I/O. Callers feed it inbound messages and
//! timer expiries and collect outbound messages and retry timers with
//! [`RanController::take_output`].

pub mod view;

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

use crate::apps::{
    admission_policy_update, assign_channels, channels::channel_changes, ho_decide, lb_select_ap, AppsConfig,
    ConflictGraph, LbCandidate,
};
use crate::cmi::msg::{
    ChannelSet, CmiBody, CmiMessage, ConfigGet, ConfigSet, ErrorBody, FlowRef, FlowSpec, MgmtPolicySet, MsgType,
    RuleEntry, SessionNotify, SliceBody, SliceRef, StatsReport, StatsSubscribe, UeSteer, WaeSnapshot, WirePolicy,
};
use crate::cmi::session::{CmiSession, Inbound};
use crate::flow::{Direction, FlowMatch, FlowOutput, FlowRule};
use crate::model::{is_allowed_channel, MgmtPolicy, NodeId, QosProfile, UeState, ALLOWED_CHANNELS};
use crate::slice::{select_slice, SliceTemplate};
pub use view::{ApView, NetworkView, RssiReport, UeView};

/// Weakest signal at which an AP can serve a UE.
pub const ASSOC_THRESHOLD_DBM: f64 = -82.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub controller_id: u32,
    pub retransmit_timeout_us: u64,
    pub max_attempts: u32,
    pub stats_period_us: u64,
    pub apps: AppsConfig,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            controller_id: 0,
            retransmit_timeout_us: 50_000,
            max_attempts: 3,
            stats_period_us: 200_000,
            apps: AppsConfig::default(),
        }
    }
}

/// Static facts about an AP known to the controller at start-up.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApSeed {
    pub ap: NodeId,
    pub channel: u8,
    pub tx_power_dbm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleStatus {
    Pending,
    Confirmed,
    Failed,
    Deleting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleRecord {
    pub rule: FlowRule,
    pub status: RuleStatus,
}

/// Events produced by view updates and consumed by the applications.
#[derive(Debug, Clone, PartialEq)]
pub enum AppTrigger {
    RssiUpdated(NodeId),
    LoadUpdated(NodeId),
    InterferenceUpdated,
    Associated { ue: NodeId, ap: NodeId },
    Disassociated { ue: NodeId, ap: NodeId },
    RuleFailed(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryTimer {
    pub at_us: u64,
    pub correlation_id: u64,
    pub attempt: u32,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControllerOutput {
    pub messages: Vec<CmiMessage>,
    pub timers: Vec<RetryTimer>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfigUpdate {
    pub channel: Option<u8>,
    pub tx_power_dbm: Option<f64>,
    pub mgmt_policy: Option<MgmtPolicy>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SliceOp {
    Create(SliceTemplate),
    Read(String),
    Update(SliceTemplate),
    Delete { slice_id: String, force: bool },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SliceOutcome {
    pub messages: Vec<CmiMessage>,
    /// The controller's copy of the template after the operation.
    pub template: Option<SliceTemplate>,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("report references unknown node {0}")]
pub struct UnknownNode(pub NodeId);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error("rate {rate_mbps} Mbps exceeds slice {slice} cap of {cap_mbps} Mbps")]
    SliceCapExceeded { slice: String, rate_mbps: f64, cap_mbps: f64 },
    #[error("unknown slice {0:?}")]
    UnknownSlice(String),
    #[error("{0} has no active session")]
    UeNotReady(NodeId),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SteerError {
    #[error("target is already the serving AP")]
    SameAp,
    #[error("unknown target {0}")]
    UnknownTarget(NodeId),
    #[error("unknown UE {0}")]
    UnknownUe(NodeId),
    #[error("{0} is not in SESSION_ACTIVE")]
    UeNotActive(NodeId),
    #[error("{0} has no confirmed downlink rule")]
    NoDownlinkRule(NodeId),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("channel {0} is not one of 1, 6, 11")]
    BadChannel(u8),
    #[error("unknown AP {0}")]
    UnknownAp(NodeId),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SliceError {
    #[error("slice {0:?} already exists")]
    DuplicateSlice(String),
    #[error("filter overlaps slice {0:?}")]
    OverlappingFilter(String),
    #[error("slice {slice:?} is referenced by {rules} confirmed rule(s)")]
    SliceInUse { slice: String, rules: usize },
    #[error("unknown slice {0:?}")]
    UnknownSlice(String),
    #[error("invalid template: {0}")]
    Invalid(String),
}

/// Result of the most recent CONFIG_GET audit.
#[derive(Debug, Clone, PartialEq)]
pub struct AuditResult {
    pub time_us: u64,
    pub coherent: bool,
    pub snapshot: WaeSnapshot,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ControllerStats {
    pub unknown_node: u64,
    /// Request to matching reply, measured from the first transmission.
    pub rtt_samples_us: Vec<u64>,
    pub retransmissions: u64,
    pub failed_requests: u64,
    pub error_replies: u64,
    pub duplicate_replies: u64,
    pub protocol_errors: u64,
    pub flow_install_failures: u64,
    pub handovers_initiated: u64,
    pub audits: u64,
    pub audit_mismatches: u64,
    pub sent_by_type: BTreeMap<MsgType, u64>,
}

#[derive(Debug, Clone)]
struct Pending {
    msg: CmiMessage,
    attempts: u32,
    first_sent_us: u64,
}

#[derive(Debug, Clone)]
pub struct RanController {
    cfg: ControllerConfig,
    session: CmiSession,
    view: NetworkView,
    rules: BTreeMap<u32, RuleRecord>,
    next_rule_id: u32,
    next_corr: u64,
    pending: BTreeMap<u64, Pending>,
    deferred: Vec<CmiMessage>,
    out: ControllerOutput,
    now: u64,
    stats: ControllerStats,
    channel_sets_in_flight: BTreeSet<u64>,
    last_audit: Option<AuditResult>,
    last_read: Option<SliceTemplate>,
    triggers: Vec<AppTrigger>,
}

impl RanController {
    /// A controller for the given roster. The default slice and `slices`
    /// are created as soon as the session comes up.
    pub fn new(
        cfg: ControllerConfig,
        aps: &[ApSeed],
        ues: impl IntoIterator<Item = NodeId>,
        slices: &[SliceTemplate],
    ) -> Self {
        let mut view = NetworkView::default();
        for a in aps {
            let mut v = ApView::new(a.channel);
            v.tx_power_dbm = Some(a.tx_power_dbm);
            view.aps.insert(a.ap, v);
        }
        for ue in ues {
            view.ues.insert(ue, UeView::default());
        }
        let mut c = Self {
            session: CmiSession::controller(cfg.controller_id),
            cfg,
            view,
            rules: BTreeMap::new(),
            next_rule_id: 1,
            next_corr: 1,
            pending: BTreeMap::new(),
            deferred: Vec::new(),
            out: ControllerOutput::default(),
            now: 0,
            stats: ControllerStats::default(),
            channel_sets_in_flight: BTreeSet::new(),
            last_audit: None,
            last_read: None,
            triggers: Vec::new(),
        };
        let period_us = c.cfg.stats_period_us.max(1);
        let corr = c.corr();
        c.dispatch(CmiMessage::new(corr, CmiBody::StatsSubscribe(StatsSubscribe { period_us })));
        let mut all = vec![SliceTemplate::default_slice()];
        all.extend(slices.iter().filter(|s| !s.is_default()).cloned());
        for s in all {
            // Scenario validation has already rejected bad templates.
            let _ = c.nv_slice_crud(SliceOp::Create(s));
        }
        c
    }

    pub fn view(&self) -> &NetworkView {
        &self.view
    }

    pub fn stats(&self) -> &ControllerStats {
        &self.stats
    }

    pub fn rules(&self) -> &BTreeMap<u32, RuleRecord> {
        &self.rules
    }

    pub fn is_established(&self) -> bool {
        self.session.is_established()
    }

    pub fn in_flight(&self) -> usize {
        self.pending.len()
    }

    pub fn last_audit(&self) -> Option<&AuditResult> {
        self.last_audit.as_ref()
    }

    pub fn last_read(&self) -> Option<&SliceTemplate> {
        self.last_read.as_ref()
    }

    pub fn apps(&self) -> &AppsConfig {
        &self.cfg.apps
    }

    pub fn set_apps(&mut self, apps: AppsConfig) {
        self.cfg.apps = apps;
    }

    /// Triggers produced since the last call, for observers.
    pub fn take_triggers(&mut self) -> Vec<AppTrigger> {
        std::mem::take(&mut self.triggers)
    }

    pub fn take_output(&mut self) -> ControllerOutput {
        std::mem::take(&mut self.out)
    }

    /// Opens the session with HELLO.
    pub fn start(&mut self, now: u64) {
        self.now = now;
        let corr = self.corr();
        if let Some(hello) = self.session.start(corr) {
            self.send(hello);
        }
    }

    /// Sends a CONFIG_GET snapshot request; the reply is audited against the
    /// rule table.
    pub fn request_audit(&mut self, now: u64) {
        self.now = now;
        let corr = self.corr();
        self.dispatch(CmiMessage::new(corr, CmiBody::ConfigGet(ConfigGet {})));
    }

    pub fn on_message(&mut self, now: u64, msg: CmiMessage) {
        self.now = now;
        match self.session.on_inbound(&msg) {
            Err(_) | Ok(Inbound::Reply(_)) => self.stats.protocol_errors += 1,
            Ok(Inbound::Established(_)) => {
                self.complete(msg.correlation_id, MsgType::HelloAck);
                for m in std::mem::take(&mut self.deferred) {
                    self.send(m);
                }
            }
            Ok(Inbound::Deliver) => self.handle(msg),
        }
    }

    /// Retry timer expiry. Stale timers (already answered or superseded) are
    /// ignored.
    pub fn on_timeout(&mut self, now: u64, correlation_id: u64, attempt: u32) {
        self.now = now;
        let Some(p) = self.pending.get_mut(&correlation_id) else {
            return;
        };
        if p.attempts != attempt {
            return;
        }
        if p.attempts < self.cfg.max_attempts {
            p.attempts += 1;
            let msg = p.msg.clone();
            let attempt = p.attempts;
            self.stats.retransmissions += 1;
            self.emit(msg, attempt);
            return;
        }
        let p = self.pending.remove(&correlation_id).expect("present");
        self.stats.failed_requests += 1;
        self.request_failed(&p.msg);
    }

    fn handle(&mut self, msg: CmiMessage) {
        let corr = msg.correlation_id;
        match msg.body {
            CmiBody::ConfigAck(ack) => {
                if let Some(p) = self.complete(corr, MsgType::ConfigAck) {
                    self.config_acked(&p.msg, ack.snapshot);
                }
            }
            CmiBody::FlowAck(_) => {
                if let Some(p) = self.complete(corr, MsgType::FlowAck) {
                    self.flow_acked(&p.msg);
                }
            }
            CmiBody::SliceAck(ack) => {
                if let Some(p) = self.complete(corr, MsgType::SliceAck) {
                    if let CmiBody::SliceRead(_) = p.msg.body {
                        self.last_read = ack.template;
                    }
                }
            }
            CmiBody::Error(e) => self.on_error(corr, e),
            CmiBody::StatsReport(report) => {
                if let Ok(triggers) = self.on_stats_report(&report) {
                    self.run_apps(&triggers);
                    self.triggers.extend(triggers);
                }
            }
            CmiBody::SessionNotify(n) => self.on_session_notify(&n),
            _ => self.stats.protocol_errors += 1,
        }
    }

    fn complete(&mut self, corr: u64, reply: MsgType) -> Option<Pending> {
        match self.pending.get(&corr) {
            Some(p) if p.msg.msg_type().ack_type() == Some(reply) => {
                let p = self.pending.remove(&corr).expect("present");
                self.stats.rtt_samples_us.push(self.now - p.first_sent_us);
                Some(p)
            }
            Some(_) => {
                self.stats.protocol_errors += 1;
                None
            }
            None => {
                self.stats.duplicate_replies += 1;
                None
            }
        }
    }

    fn on_error(&mut self, corr: u64, _e: ErrorBody) {
        self.stats.error_replies += 1;
        if let Some(p) = self.pending.remove(&corr) {
            self.request_failed(&p.msg);
        }
    }

    fn request_failed(&mut self, msg: &CmiMessage) {
        match &msg.body {
            CmiBody::FlowAdd(f) | CmiBody::FlowMod(f) => {
                if let Some(r) = self.rules.get_mut(&f.rule) {
                    r.status = RuleStatus::Failed;
                }
                self.triggers.push(AppTrigger::RuleFailed(f.rule));
            }
            CmiBody::FlowDel(r) => {
                if let Some(rec) = self.rules.get_mut(&r.rule) {
                    rec.status = RuleStatus::Failed;
                }
                self.triggers.push(AppTrigger::RuleFailed(r.rule));
            }
            CmiBody::SliceCreate(b) => {
                self.view.slices.remove(&b.template.slice_id);
            }
            CmiBody::ChannelSet(_) => {
                self.channel_sets_in_flight.remove(&msg.correlation_id);
            }
            _ => {}
        }
    }

    fn config_acked(&mut self, req: &CmiMessage, snapshot: Option<WaeSnapshot>) {
        match &req.body {
            CmiBody::ConfigSet(c) => {
                if let Some(ap) = self.view.aps.get_mut(&NodeId::ap(c.ap)) {
                    if let Some(ch) = c.channel {
                        ap.channel = ch;
                    }
                    if let Some(tx) = c.tx_power_dbm {
                        ap.tx_power_dbm = Some(tx);
                    }
                }
                if c.channel.is_some() {
                    self.view.refresh_interference();
                }
            }
            CmiBody::ChannelSet(c) => {
                self.channel_sets_in_flight.remove(&req.correlation_id);
                if let Some(ap) = self.view.aps.get_mut(&NodeId::ap(c.ap)) {
                    ap.channel = c.channel;
                }
                self.view.refresh_interference();
            }
            CmiBody::ConfigGet(_) => {
                if let Some(snapshot) = snapshot {
                    let coherent = self.audit(&snapshot);
                    self.stats.audits += 1;
                    if !coherent {
                        self.stats.audit_mismatches += 1;
                    }
                    self.last_audit = Some(AuditResult {
                        time_us: self.now,
                        coherent,
                        snapshot,
                    });
                }
            }
            _ => {}
        }
    }

    fn flow_acked(&mut self, req: &CmiMessage) {
        match &req.body {
            CmiBody::FlowAdd(f) | CmiBody::FlowMod(f) => {
                if let Some(r) = self.rules.get_mut(&f.rule) {
                    r.status = RuleStatus::Confirmed;
                }
            }
            CmiBody::FlowDel(r) => {
                self.rules.remove(&r.rule);
            }
            _ => {}
        }
    }

    /// Confirmed rules in wire form, ordered by rule id.
    pub fn confirmed_rules(&self) -> Vec<RuleEntry> {
        self.rules
            .values()
            .filter(|r| r.status == RuleStatus::Confirmed)
            .map(|r| RuleEntry::from(&r.rule))
            .collect()
    }

    /// Compares a WAE snapshot with the confirmed rule table. Rules still in
    /// flight are ignored on both sides.
    pub fn audit(&self, snapshot: &WaeSnapshot) -> bool {
        let in_flight: BTreeSet<u32> = self
            .rules
            .iter()
            .filter(|(_, r)| r.status != RuleStatus::Confirmed)
            .map(|(id, _)| *id)
            .collect();
        let mut theirs: Vec<RuleEntry> = snapshot
            .rules
            .iter()
            .filter(|r| !in_flight.contains(&r.rule))
            .cloned()
            .collect();
        theirs.sort_by_key(|r| r.rule);
        theirs == self.confirmed_rules()
    }

    /// Folds a STATS_REPORT into the view. A report naming any node outside
    /// the roster is discarded whole.
    pub fn on_stats_report(&mut self, report: &StatsReport) -> Result<Vec<AppTrigger>, UnknownNode> {
        for ap in &report.aps {
            let id = NodeId::ap(ap.ap);
            if !self.view.aps.contains_key(&id) {
                return Err(self.unknown(id));
            }
            for ue in ap.associated.iter().chain(ap.rssi.iter().map(|r| &r.ue)) {
                if !self.view.ues.contains_key(&NodeId::ue(*ue)) {
                    return Err(self.unknown(NodeId::ue(*ue)));
                }
            }
            if let Some(n) = ap.neighbors.iter().find(|n| !self.view.aps.contains_key(&NodeId::ap(**n))) {
                return Err(self.unknown(NodeId::ap(*n)));
            }
        }

        let mut triggers = Vec::new();
        let mut gone = Vec::new();
        let mut joined = Vec::new();
        let mut interference = false;
        let mut rssi_seen = BTreeSet::new();
        for r in &report.aps {
            let id = NodeId::ap(r.ap);
            let ap = self.view.aps.get_mut(&id).expect("checked");
            if ap.channel != r.channel {
                ap.channel = r.channel;
                interference = true;
            }
            if ap.load != r.load {
                ap.load = r.load;
                triggers.push(AppTrigger::LoadUpdated(id));
            }
            let now_assoc: BTreeSet<NodeId> = r.associated.iter().map(|u| NodeId::ue(*u)).collect();
            gone.extend(ap.associated.difference(&now_assoc).map(|ue| (*ue, id)));
            joined.extend(now_assoc.difference(&ap.associated).map(|ue| (*ue, id)));
            ap.associated = now_assoc;
            let neighbors: BTreeSet<NodeId> = r.neighbors.iter().map(|n| NodeId::ap(*n)).collect();
            if ap.neighbors != neighbors {
                ap.neighbors = neighbors;
                interference = true;
            }
            for reading in &r.rssi {
                let ue = NodeId::ue(reading.ue);
                ap.ue_rssi.insert(ue, reading.rssi_dbm);
                self.view
                    .ues
                    .get_mut(&ue)
                    .expect("checked")
                    .record_rssi(report.time_us, id, reading.rssi_dbm);
                rssi_seen.insert(ue);
            }
        }
        for (ue, ap) in gone {
            let v = self.view.ues.get_mut(&ue).expect("checked");
            if v.serving_ap == Some(ap) && v.state != UeState::Handover {
                *v = UeView {
                    rssi_history: std::mem::take(&mut v.rssi_history),
                    ..UeView::default()
                };
            }
            triggers.push(AppTrigger::Disassociated { ue, ap });
        }
        for (ue, ap) in joined {
            let v = self.view.ues.get_mut(&ue).expect("checked");
            v.serving_ap = Some(ap);
            v.state = match v.state {
                UeState::Handover | UeState::SessionActive => UeState::SessionActive,
                _ => UeState::Associating,
            };
            triggers.push(AppTrigger::Associated { ue, ap });
        }
        for ue in rssi_seen {
            let v = self.view.ues.get_mut(&ue).expect("checked");
            if v.state == UeState::Idle {
                v.state = UeState::Scanning;
            }
            triggers.push(AppTrigger::RssiUpdated(ue));
        }
        if interference {
            self.view.refresh_interference();
            triggers.push(AppTrigger::InterferenceUpdated);
        }
        self.view.last_report_time = self.view.last_report_time.max(report.time_us);
        Ok(triggers)
    }

    fn unknown(&mut self, id: NodeId) -> UnknownNode {
        self.stats.unknown_node += 1;
        UnknownNode(id)
    }

    fn on_session_notify(&mut self, n: &SessionNotify) {
        let ue = NodeId::ue(n.ue);
        let ap = NodeId::ap(n.ap);
        if !self.view.aps.contains_key(&ap) {
            self.unknown(ap);
            return;
        }
        let Some(v) = self.view.ues.get_mut(&ue) else {
            self.unknown(ue);
            return;
        };
        v.state = UeState::SessionActive;
        v.serving_ap = Some(ap);
        v.tunnel_id = Some(n.tunnel);
        v.traffic_class = Some(n.tc.clone());
        let slice = select_slice(self.view.slices.values(), n.ue, &n.tc).map(|s| s.slice_id.clone());
        for dir in [Direction::Up, Direction::Down] {
            let exists = self.rules.values().any(|r| {
                r.rule.matcher.ue == ue
                    && r.rule.matcher.traffic_class == n.tc
                    && r.rule.matcher.direction == dir
                    && r.status != RuleStatus::Failed
            });
            if exists {
                continue;
            }
            let result = match &slice {
                Some(s) => self.fcf_install_flow(ue, &n.tc, dir, n.qos, s),
                None => Err(FlowError::UnknownSlice(String::new())),
            };
            if result.is_err() {
                self.stats.flow_install_failures += 1;
            }
        }
    }

    /// Programs one direction of a UE's flow. Uplink rules output to the
    /// UE's N3 tunnel, downlink rules to its serving AP.
    pub fn fcf_install_flow(
        &mut self,
        ue: NodeId,
        traffic_class: &str,
        direction: Direction,
        qos: QosProfile,
        slice_id: &str,
    ) -> Result<CmiMessage, FlowError> {
        let slice = self
            .view
            .slices
            .get(slice_id)
            .ok_or_else(|| FlowError::UnknownSlice(slice_id.to_string()))?;
        if let Some(cap) = slice.rate_cap_mbps {
            if qos.rate_mbps > cap {
                return Err(FlowError::SliceCapExceeded {
                    slice: slice_id.to_string(),
                    rate_mbps: qos.rate_mbps,
                    cap_mbps: cap,
                });
            }
        }
        let v = self.view.ues.get(&ue).ok_or(FlowError::UeNotReady(ue))?;
        if !matches!(v.state, UeState::SessionActive | UeState::Handover) {
            return Err(FlowError::UeNotReady(ue));
        }
        let output = match direction {
            Direction::Up => FlowOutput::N3(v.tunnel_id.ok_or(FlowError::UeNotReady(ue))?),
            Direction::Down => FlowOutput::Ap(v.serving_ap.ok_or(FlowError::UeNotReady(ue))?.index),
        };
        let rule = FlowRule {
            rule_id: self.next_rule_id,
            matcher: FlowMatch {
                ue,
                traffic_class: traffic_class.to_string(),
                direction,
            },
            output,
            qos,
            slice_id: slice_id.to_string(),
            buffer_during_handover: direction == Direction::Down,
        };
        self.next_rule_id += 1;
        let corr = self.corr();
        let msg = CmiMessage::new(corr, CmiBody::FlowAdd(FlowSpec::from_rule(&rule, None)));
        self.rules.insert(
            rule.rule_id,
            RuleRecord {
                rule,
                status: RuleStatus::Pending,
            },
        );
        self.dispatch(msg.clone());
        Ok(msg)
    }

    /// Moves a UE to `target_ap`: UE_STEER for the WAE, then FLOW_MOD
    /// repointing its downlink rule. The FLOW_MOD names the UE_STEER's
    /// correlation id as its chain.
    pub fn rcf_steer_ue(&mut self, ue: NodeId, target_ap: NodeId) -> Result<[CmiMessage; 2], SteerError> {
        let v = self.view.ues.get(&ue).ok_or(SteerError::UnknownUe(ue))?;
        if v.serving_ap == Some(target_ap) {
            return Err(SteerError::SameAp);
        }
        if !self.view.aps.contains_key(&target_ap) {
            return Err(SteerError::UnknownTarget(target_ap));
        }
        let (UeState::SessionActive, Some(serving)) = (v.state, v.serving_ap) else {
            return Err(SteerError::UeNotActive(ue));
        };
        let rule_id = self
            .rules
            .values()
            .find(|r| {
                r.rule.matcher.ue == ue
                    && r.rule.matcher.direction == Direction::Down
                    && r.status == RuleStatus::Confirmed
            })
            .map(|r| r.rule.rule_id)
            .ok_or(SteerError::NoDownlinkRule(ue))?;

        let steer_corr = self.corr();
        let steer = CmiMessage::new(
            steer_corr,
            CmiBody::UeSteer(UeSteer {
                ue: ue.index,
                from_ap: serving.index,
                target_ap: target_ap.index,
            }),
        );
        let record = self.rules.get_mut(&rule_id).expect("found above");
        record.rule.output = FlowOutput::Ap(target_ap.index);
        record.rule.buffer_during_handover = true;
        record.status = RuleStatus::Pending;
        let spec = FlowSpec::from_rule(&record.rule, Some(steer_corr));
        let fm = CmiMessage::new(self.corr(), CmiBody::FlowMod(spec));
        self.view.ues.get_mut(&ue).expect("checked").state = UeState::Handover;
        self.stats.handovers_initiated += 1;
        self.dispatch(steer.clone());
        self.dispatch(fm.clone());
        Ok([steer, fm])
    }

    pub fn rmf_push_config(&mut self, ap: NodeId, config: ConfigUpdate) -> Result<CmiMessage, ConfigError> {
        if let Some(ch) = config.channel {
            if !is_allowed_channel(ch) {
                return Err(ConfigError::BadChannel(ch));
            }
        }
        let view = self.view.aps.get_mut(&ap).ok_or(ConfigError::UnknownAp(ap))?;
        if let Some(p) = &config.mgmt_policy {
            view.mgmt_policy = p.clone();
        }
        let corr = self.corr();
        let msg = CmiMessage::new(
            corr,
            CmiBody::ConfigSet(ConfigSet {
                ap: ap.index,
                channel: config.channel,
                tx_power_dbm: config.tx_power_dbm,
                mgmt_policy: config.mgmt_policy.as_ref().map(WirePolicy::from),
            }),
        );
        self.dispatch(msg.clone());
        Ok(msg)
    }

    pub fn nv_slice_crud(&mut self, op: SliceOp) -> Result<SliceOutcome, SliceError> {
        match op {
            SliceOp::Create(t) => {
                t.validate().map_err(SliceError::Invalid)?;
                if self.view.slices.contains_key(&t.slice_id) {
                    return Err(SliceError::DuplicateSlice(t.slice_id));
                }
                if let Some(other) = self.view.slices.values().find(|s| s.conflicts_with(&t)) {
                    return Err(SliceError::OverlappingFilter(other.slice_id.clone()));
                }
                self.view.slices.insert(t.slice_id.clone(), t.clone());
                let corr = self.corr();
                let msg = CmiMessage::new(corr, CmiBody::SliceCreate(SliceBody { template: t.clone() }));
                self.dispatch(msg.clone());
                Ok(SliceOutcome {
                    messages: vec![msg],
                    template: Some(t),
                })
            }
            SliceOp::Read(id) => {
                let t = self.view.slices.get(&id).cloned().ok_or(SliceError::UnknownSlice(id.clone()))?;
                let corr = self.corr();
                let msg = CmiMessage::new(corr, CmiBody::SliceRead(SliceRef { slice: id }));
                self.dispatch(msg.clone());
                Ok(SliceOutcome {
                    messages: vec![msg],
                    template: Some(t),
                })
            }
            SliceOp::Update(t) => {
                t.validate().map_err(SliceError::Invalid)?;
                if !self.view.slices.contains_key(&t.slice_id) {
                    return Err(SliceError::UnknownSlice(t.slice_id));
                }
                if let Some(other) = self
                    .view
                    .slices
                    .values()
                    .find(|s| s.slice_id != t.slice_id && s.conflicts_with(&t))
                {
                    return Err(SliceError::OverlappingFilter(other.slice_id.clone()));
                }
                self.view.slices.insert(t.slice_id.clone(), t.clone());
                let corr = self.corr();
                let msg = CmiMessage::new(corr, CmiBody::SliceUpdate(SliceBody { template: t.clone() }));
                self.dispatch(msg.clone());
                Ok(SliceOutcome {
                    messages: vec![msg],
                    template: Some(t),
                })
            }
            SliceOp::Delete { slice_id, force } => {
                if !self.view.slices.contains_key(&slice_id) {
                    return Err(SliceError::UnknownSlice(slice_id));
                }
                let referencing: Vec<u32> = self
                    .rules
                    .values()
                    .filter(|r| r.rule.slice_id == slice_id && r.status != RuleStatus::Deleting)
                    .map(|r| r.rule.rule_id)
                    .collect();
                let confirmed = referencing
                    .iter()
                    .filter(|id| self.rules[id].status == RuleStatus::Confirmed)
                    .count();
                if confirmed > 0 && !force {
                    return Err(SliceError::SliceInUse {
                        slice: slice_id,
                        rules: confirmed,
                    });
                }
                let mut messages = Vec::new();
                for id in referencing {
                    self.rules.get_mut(&id).expect("listed").status = RuleStatus::Deleting;
                    let corr = self.corr();
                    messages.push(CmiMessage::new(corr, CmiBody::FlowDel(FlowRef { rule: id })));
                }
                self.view.slices.remove(&slice_id);
                let corr = self.corr();
                messages.push(CmiMessage::new(corr, CmiBody::SliceDelete(SliceRef { slice: slice_id })));
                for m in &messages {
                    self.dispatch(m.clone());
                }
                Ok(SliceOutcome {
                    messages,
                    template: None,
                })
            }
        }
    }

    fn run_apps(&mut self, triggers: &[AppTrigger]) {
        let apps = self.cfg.apps.clone();
        let mut rssi_ues = BTreeSet::new();
        let mut joined = BTreeSet::new();
        let mut load_changed = false;
        let mut interference = false;
        for t in triggers {
            match t {
                AppTrigger::RssiUpdated(ue) => {
                    rssi_ues.insert(*ue);
                }
                AppTrigger::Associated { ue, .. } => {
                    joined.insert(*ue);
                }
                AppTrigger::LoadUpdated(_) => load_changed = true,
                AppTrigger::InterferenceUpdated => interference = true,
                _ => {}
            }
        }
        if apps.load_balancing {
            for ue in &joined {
                self.lb_release(*ue);
            }
            for ue in &rssi_ues {
                let state = self.view.ues[ue].state;
                if matches!(state, UeState::Idle | UeState::Scanning) {
                    self.lb_steer(*ue);
                }
            }
        }
        if let Some(params) = apps.admission {
            if load_changed {
                for (ap, policy) in admission_policy_update(&self.view, &params) {
                    self.push_policy(ap, policy);
                }
            }
        }
        if let Some(policy) = apps.mobility {
            for ue in &rssi_ues {
                if let Some(target) = ho_decide(&policy, &self.view.ues[ue]) {
                    let _ = self.rcf_steer_ue(*ue, target);
                }
            }
        }
        if apps.interference && interference {
            self.run_channel_app();
        }
    }

    /// Lets only the least-loaded AP that hears `ue` answer it.
    fn lb_steer(&mut self, ue: NodeId) {
        let Some(latest) = self.view.ues[&ue].latest() else {
            return;
        };
        let candidates: Vec<LbCandidate> = latest
            .readings
            .iter()
            .filter(|(_, rssi)| **rssi >= ASSOC_THRESHOLD_DBM)
            .map(|(ap, rssi)| LbCandidate {
                ap: *ap,
                rssi_dbm: *rssi,
                load: self.view.aps[ap].load,
            })
            .collect();
        let Ok(chosen) = lb_select_ap(&candidates) else {
            return;
        };
        for c in &candidates {
            let mut policy = self.view.aps[&c.ap].mgmt_policy.clone();
            let changed = if c.ap == chosen {
                policy.deny_list.remove(&ue)
            } else {
                policy.deny_list.insert(ue)
            };
            if changed {
                self.push_policy(c.ap, policy);
            }
        }
    }

    fn lb_release(&mut self, ue: NodeId) {
        let holding: Vec<NodeId> = self
            .view
            .aps
            .iter()
            .filter(|(_, a)| a.mgmt_policy.deny_list.contains(&ue))
            .map(|(id, _)| *id)
            .collect();
        for ap in holding {
            let mut policy = self.view.aps[&ap].mgmt_policy.clone();
            policy.deny_list.remove(&ue);
            self.push_policy(ap, policy);
        }
    }

    fn push_policy(&mut self, ap: NodeId, policy: MgmtPolicy) {
        let wire = WirePolicy::from(&policy);
        self.view.aps.get_mut(&ap).expect("known AP").mgmt_policy = policy;
        let corr = self.corr();
        self.dispatch(CmiMessage::new(
            corr,
            CmiBody::MgmtPolicySet(MgmtPolicySet {
                ap: ap.index,
                policy: wire,
            }),
        ));
    }

    /// Conflict graph from the neighbour lists the APs report.
    pub fn conflict_graph(&self) -> ConflictGraph {
        let mut g = ConflictGraph::new(self.view.aps.keys().copied());
        for (id, ap) in &self.view.aps {
            for n in &ap.neighbors {
                g.add_edge(*id, *n);
            }
        }
        g
    }

    fn run_channel_app(&mut self) {
        if !self.channel_sets_in_flight.is_empty() {
            return;
        }
        let g = self.conflict_graph();
        let current: BTreeMap<NodeId, u8> = self.view.aps.iter().map(|(id, a)| (*id, a.channel)).collect();
        let plan = assign_channels(&g, &ALLOWED_CHANNELS, &current);
        for (ap, channel) in channel_changes(&current, &plan) {
            let corr = self.corr();
            self.channel_sets_in_flight.insert(corr);
            self.dispatch(CmiMessage::new(
                corr,
                CmiBody::ChannelSet(ChannelSet {
                    ap: ap.index,
                    channel,
                }),
            ));
        }
    }

    fn corr(&mut self) -> u64 {
        let c = self.next_corr;
        self.next_corr += 1;
        c
    }

    /// Sends now if the session is up, otherwise queues until it is.
    fn dispatch(&mut self, msg: CmiMessage) {
        if self.session.is_established() {
            self.send(msg);
        } else {
            self.deferred.push(msg);
        }
    }

    fn send(&mut self, msg: CmiMessage) {
        debug_assert!(msg.msg_type().is_controller_request());
        self.pending.insert(
            msg.correlation_id,
            Pending {
                msg: msg.clone(),
                attempts: 1,
                first_sent_us: self.now,
            },
        );
        self.emit(msg, 1);
    }

    fn emit(&mut self, msg: CmiMessage, attempt: u32) {
        *self.stats.sent_by_type.entry(msg.msg_type()).or_default() += 1;
        self.out.timers.push(RetryTimer {
            at_us: self.now + self.cfg.retransmit_timeout_us,
            correlation_id: msg.correlation_id,
            attempt,
        });
        self.out.messages.push(msg);
    }
}

#[cfg(test)]
mod tests;
