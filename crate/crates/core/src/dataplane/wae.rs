//! The WLAN aggregation entity: CMI endpoint, flow-table enforcement, secure
//! association termination, NAS/N2 relay, N3 encapsulation and handover
//! buffering.
//!
//! Like the controller, the WAE performs no I/O. Each handler returns the
//! actions the hosting simulation must carry out.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::flow_table::{FlowTable, FlowTableError};
use super::scheduler::{Dequeue, SliceScheduler};
use super::Mode;
use crate::cmi::msg::{
    ApConfigEntry, ApReport, CmiBody, CmiMessage, ConfigAck, ErrorBody, ErrorCode, FlowRef, FlowSpec,
    RuleEntry, SessionNotify, SliceAck, StatsReport, UeRssi, UeSteer, WaeSnapshot, WirePolicy,
};
use crate::cmi::session::{CmiSession, Inbound};
use crate::fivegc::N2Message;
use crate::flow::{Direction, FlowOutput};
use crate::model::{is_allowed_channel, MgmtPolicy, NodeId, NodeKind, QosProfile};
use crate::packet::{ApCommand, ApEvent, Mgmt, Packet, Payload};
use crate::slice::SliceTemplate;

pub const HANDOVER_BUFFER_PACKETS: usize = 256;
/// Window over which AP events are merged into one STATS_REPORT.
pub const REPORT_COALESCE_US: u64 = 1_000;
const RESPONSE_CACHE_ENTRIES: usize = 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct WaeConfig {
    pub wae_id: u32,
    pub mode: Mode,
    pub upf: NodeId,
    pub report_coalesce_us: u64,
    pub buffer_packets: usize,
}

impl Default for WaeConfig {
    fn default() -> Self {
        Self {
            wae_id: 0,
            mode: Mode::Proposed,
            upf: NodeId::upf(0),
            report_coalesce_us: REPORT_COALESCE_US,
            buffer_packets: HANDOVER_BUFFER_PACKETS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    /// No installed rule matches (default deny).
    NoRule,
    /// The UE has no secure association or serving AP.
    NoAssociation,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ForwardDecision {
    ToN2,
    ToCmi,
    /// Terminated at the WAE (IKE, AP events).
    Local,
    ToN3 { tunnel_id: u32, slice: String, rule_id: u32 },
    ToAp { ap: NodeId, rule_id: u32 },
    Buffer,
    Drop(DropReason),
}

#[derive(Debug, Clone, PartialEq)]
pub enum WaeAction {
    Cmi(CmiMessage),
    ToAp { ap: NodeId, pkt: Packet },
    N2(N2Message),
    /// Uplink waiting in the slice scheduler.
    N3Ready,
    /// Encapsulated uplink handed to the controller host.
    Northbound(Packet),
    /// Call [`Wae::flush_reports`] at this time.
    ArmFlush { at_us: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SecureAssociation {
    pub ue: NodeId,
    pub established_us: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WaeUe {
    pub serving_ap: Option<NodeId>,
    pub tunnel_id: Option<u32>,
    pub qos: Option<QosProfile>,
    pub traffic_class: Option<String>,
    pub sa: Option<SecureAssociation>,
    ike_reply: bool,
    pub handover_target: Option<NodeId>,
    pub buffer: VecDeque<Packet>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaeAp {
    pub channel: u8,
    pub tx_power_dbm: f64,
    pub policy: MgmtPolicy,
    pub associated: BTreeSet<NodeId>,
    pub neighbors: Vec<NodeId>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WaeCounters {
    pub unmatched: u64,
    pub no_association: u64,
    pub unknown_ue: u64,
    pub buffered: u64,
    pub buffer_overflow: u64,
    pub flushed: u64,
    pub n3_queue_drops: u64,
    pub slice_delete_drops: u64,
    pub error_replies: u64,
    pub duplicate_requests: u64,
    pub handovers_completed: u64,
    pub uplink_encapsulated: u64,
}

#[derive(Debug, Clone)]
struct PendingConfig {
    corr: u64,
    ap: NodeId,
    channel: Option<u8>,
    tx_power_dbm: Option<f64>,
    policy: Option<MgmtPolicy>,
}

#[derive(Debug, Clone, Default)]
struct ReportEntry {
    readings: BTreeMap<NodeId, f64>,
}

type Failure = (ErrorCode, String);

#[derive(Debug, Clone)]
pub struct Wae {
    cfg: WaeConfig,
    node: NodeId,
    session: CmiSession,
    table: FlowTable,
    scheduler: SliceScheduler,
    slices: BTreeMap<String, SliceTemplate>,
    ues: BTreeMap<NodeId, WaeUe>,
    aps: BTreeMap<NodeId, WaeAp>,
    pending: BTreeMap<u64, PendingConfig>,
    cache: BTreeMap<u64, CmiMessage>,
    cache_order: VecDeque<u64>,
    subscribed: Option<u64>,
    reports: BTreeMap<NodeId, ReportEntry>,
    flush_armed: bool,
    next_corr: u64,
    pub counters: WaeCounters,
}

impl Wae {
    /// `aps`: (AP, channel, tx power) for every AP behind this WAE.
    pub fn new(cfg: WaeConfig, aps: &[(NodeId, u8, f64)]) -> Self {
        let aps: BTreeMap<NodeId, WaeAp> = aps
            .iter()
            .map(|&(ap, channel, tx)| {
                (
                    ap,
                    WaeAp {
                        channel,
                        tx_power_dbm: tx,
                        policy: MgmtPolicy::default(),
                        associated: BTreeSet::new(),
                        neighbors: Vec::new(),
                    },
                )
            })
            .collect();
        Self {
            node: NodeId::wae(cfg.wae_id),
            session: CmiSession::wae(cfg.wae_id, aps.len() as u32),
            cfg,
            table: FlowTable::new(),
            scheduler: SliceScheduler::new(),
            slices: BTreeMap::new(),
            ues: BTreeMap::new(),
            aps,
            pending: BTreeMap::new(),
            cache: BTreeMap::new(),
            cache_order: VecDeque::new(),
            subscribed: None,
            reports: BTreeMap::new(),
            flush_armed: false,
            next_corr: 1,
            counters: WaeCounters::default(),
        }
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn mode(&self) -> Mode {
        self.cfg.mode
    }

    pub fn is_established(&self) -> bool {
        self.session.is_established()
    }

    pub fn flow_table(&self) -> &FlowTable {
        &self.table
    }

    pub fn scheduler(&self) -> &SliceScheduler {
        &self.scheduler
    }

    pub fn slices(&self) -> &BTreeMap<String, SliceTemplate> {
        &self.slices
    }

    pub fn ue(&self, ue: NodeId) -> Option<&WaeUe> {
        self.ues.get(&ue)
    }

    pub fn ap(&self, ap: NodeId) -> Option<&WaeAp> {
        self.aps.get(&ap)
    }

    pub fn stats_period_us(&self) -> Option<u64> {
        self.subscribed
    }

    fn corr(&mut self) -> u64 {
        let c = self.next_corr;
        self.next_corr += 1;
        c
    }

    fn remember(&mut self, reply: &CmiMessage) {
        if self.cache.insert(reply.correlation_id, reply.clone()).is_none() {
            self.cache_order.push_back(reply.correlation_id);
            if self.cache_order.len() > RESPONSE_CACHE_ENTRIES {
                let old = self.cache_order.pop_front().expect("non-empty");
                self.cache.remove(&old);
            }
        }
    }

    fn error(&mut self, corr: u64, code: ErrorCode, detail: String) -> CmiMessage {
        self.counters.error_replies += 1;
        CmiMessage::new(corr, CmiBody::Error(ErrorBody { code, detail }))
    }

    /// Handles one decoded CMI message from the controller.
    pub fn wae_handle_cmi(&mut self, now: u64, msg: CmiMessage) -> Vec<WaeAction> {
        let corr = msg.correlation_id;
        match self.session.on_inbound(&msg) {
            Err(e) => {
                let reply = self.error(corr, ErrorCode::Handshake, e.to_string());
                return vec![WaeAction::Cmi(reply)];
            }
            Ok(Inbound::Reply(r)) => {
                self.remember(&r);
                return vec![WaeAction::Cmi(r)];
            }
            Ok(Inbound::Established(_)) => return Vec::new(),
            Ok(Inbound::Deliver) => {}
        }
        if !msg.msg_type().is_controller_request() {
            return Vec::new();
        }
        if let Some(r) = self.cache.get(&corr) {
            self.counters.duplicate_requests += 1;
            return vec![WaeAction::Cmi(r.clone())];
        }
        if self.pending.values().any(|p| p.corr == corr) {
            self.counters.duplicate_requests += 1;
            return Vec::new();
        }
        let mut actions = Vec::new();
        match self.process(now, &msg, &mut actions) {
            Ok(Some(body)) => {
                let reply = CmiMessage::new(corr, body);
                self.remember(&reply);
                actions.insert(0, WaeAction::Cmi(reply));
            }
            Ok(None) => {}
            Err((code, detail)) => {
                let reply = self.error(corr, code, detail);
                self.remember(&reply);
                actions = vec![WaeAction::Cmi(reply)];
            }
        }
        actions
    }

    fn known_ap(&self, index: u32) -> Result<NodeId, Failure> {
        let ap = NodeId::ap(index);
        if self.aps.contains_key(&ap) {
            Ok(ap)
        } else {
            Err((ErrorCode::UnknownAp, format!("unknown AP {index}")))
        }
    }

    fn process(&mut self, now: u64, msg: &CmiMessage, out: &mut Vec<WaeAction>) -> Result<Option<CmiBody>, Failure> {
        let corr = msg.correlation_id;
        match &msg.body {
            CmiBody::ConfigSet(c) => {
                let ap = self.known_ap(c.ap)?;
                if let Some(ch) = c.channel {
                    check_channel(ch)?;
                }
                let policy = c.mgmt_policy.as_ref().map(MgmtPolicy::from);
                out.push(self.configure(now, corr, ap, c.channel, c.tx_power_dbm, policy));
                Ok(None)
            }
            CmiBody::ChannelSet(c) => {
                let ap = self.known_ap(c.ap)?;
                check_channel(c.channel)?;
                out.push(self.configure(now, corr, ap, Some(c.channel), None, None));
                Ok(None)
            }
            CmiBody::MgmtPolicySet(m) => {
                let ap = self.known_ap(m.ap)?;
                out.push(self.configure(now, corr, ap, None, None, Some(MgmtPolicy::from(&m.policy))));
                Ok(None)
            }
            CmiBody::ConfigGet(_) => Ok(Some(CmiBody::ConfigAck(ConfigAck {
                ap: None,
                snapshot: Some(self.snapshot()),
            }))),
            CmiBody::StatsSubscribe(s) => {
                self.subscribed = Some(s.period_us);
                Ok(Some(CmiBody::ConfigAck(ConfigAck::default())))
            }
            CmiBody::FlowAdd(spec) => {
                self.check_spec(spec)?;
                self.table.insert(spec.to_rule()).map_err(table_failure)?;
                self.after_rule_change(now, spec, out);
                Ok(Some(CmiBody::FlowAck(FlowRef { rule: spec.rule })))
            }
            CmiBody::FlowMod(spec) => {
                if self.table.get(spec.rule).is_none() {
                    return Err(table_failure(FlowTableError::UnknownRule(spec.rule)));
                }
                self.check_spec(spec)?;
                self.table.modify(spec.to_rule()).map_err(table_failure)?;
                self.after_rule_change(now, spec, out);
                Ok(Some(CmiBody::FlowAck(FlowRef { rule: spec.rule })))
            }
            CmiBody::FlowDel(r) => {
                self.table.remove(r.rule).map_err(table_failure)?;
                self.scheduler.remove_flow(r.rule);
                Ok(Some(CmiBody::FlowAck(FlowRef { rule: r.rule })))
            }
            CmiBody::UeSteer(s) => self.steer(now, s, out),
            CmiBody::SliceCreate(b) => {
                let t = &b.template;
                t.validate().map_err(|e| (ErrorCode::BadSlice, e))?;
                if self.slices.contains_key(&t.slice_id) {
                    return Err((ErrorCode::BadSlice, format!("slice {:?} exists", t.slice_id)));
                }
                self.scheduler.add_slice(&t.slice_id, t.weight);
                self.slices.insert(t.slice_id.clone(), t.clone());
                Ok(Some(slice_ack(&t.slice_id, None)))
            }
            CmiBody::SliceRead(r) => {
                let t = self.slice(&r.slice)?;
                Ok(Some(slice_ack(&r.slice, Some(t.clone()))))
            }
            CmiBody::SliceUpdate(b) => {
                let t = &b.template;
                t.validate().map_err(|e| (ErrorCode::BadSlice, e))?;
                self.slice(&t.slice_id)?;
                self.scheduler.set_weight(&t.slice_id, t.weight);
                self.slices.insert(t.slice_id.clone(), t.clone());
                Ok(Some(slice_ack(&t.slice_id, None)))
            }
            CmiBody::SliceDelete(r) => {
                self.slice(&r.slice)?;
                let users = self.table.rules_in_slice(&r.slice);
                if users > 0 {
                    return Err((ErrorCode::BadSlice, format!("slice {:?} has {users} rule(s)", r.slice)));
                }
                self.slices.remove(&r.slice);
                let dropped = self.scheduler.remove_slice(&r.slice).unwrap_or(0);
                self.counters.slice_delete_drops += dropped as u64;
                Ok(Some(slice_ack(&r.slice, None)))
            }
            CmiBody::Hello(_) => Ok(None),
            other => Err((
                ErrorCode::NotEstablished,
                format!("unexpected {:?}", CmiMessage::new(0, other.clone()).msg_type()),
            )),
        }
    }

    fn slice(&self, id: &str) -> Result<&SliceTemplate, Failure> {
        self.slices
            .get(id)
            .ok_or_else(|| (ErrorCode::BadSlice, format!("unknown slice {id:?}")))
    }

    fn check_spec(&self, spec: &FlowSpec) -> Result<(), Failure> {
        self.slice(&spec.slice)?;
        if let FlowOutput::Ap(i) = spec.out {
            self.known_ap(i)?;
        }
        spec.qos()
            .validate()
            .map_err(|e| (ErrorCode::UnknownRule, format!("rule {}: {e}", spec.rule)))
    }

    fn configure(
        &mut self,
        now: u64,
        corr: u64,
        ap: NodeId,
        channel: Option<u8>,
        tx_power_dbm: Option<f64>,
        policy: Option<MgmtPolicy>,
    ) -> WaeAction {
        self.pending.insert(
            corr,
            PendingConfig {
                corr,
                ap,
                channel,
                tx_power_dbm,
                policy: policy.clone(),
            },
        );
        let cmd = ApCommand::Configure {
            token: corr,
            channel,
            tx_power_dbm,
            policy,
        };
        WaeAction::ToAp {
            ap,
            pkt: Packet::mgmt(self.node, ap, now, Mgmt::Command(cmd)),
        }
    }

    fn after_rule_change(&mut self, now: u64, spec: &FlowSpec, out: &mut Vec<WaeAction>) {
        if spec.dir == Direction::Up {
            self.scheduler.set_flow(spec.rule, spec.rate_mbps, now);
        }
        let ue = NodeId::ue(spec.ue);
        out.extend(self.maybe_complete_sa(now, ue));
        out.extend(self.try_flush(ue));
    }

    fn steer(&mut self, now: u64, s: &UeSteer, out: &mut Vec<WaeAction>) -> Result<Option<CmiBody>, Failure> {
        let from = self.known_ap(s.from_ap)?;
        let target = self.known_ap(s.target_ap)?;
        let ue = NodeId::ue(s.ue);
        match self.ues.get_mut(&ue) {
            Some(rec) if rec.serving_ap == Some(from) => rec.handover_target = Some(target),
            _ => return Err((ErrorCode::UnknownUe, format!("{ue} is not served by {from}"))),
        }
        let cmd = ApCommand::Disassociate {
            ue,
            target: Some(target),
        };
        out.push(WaeAction::ToAp {
            ap: from,
            pkt: Packet::mgmt(self.node, from, now, Mgmt::Command(cmd)),
        });
        Ok(Some(CmiBody::ConfigAck(ConfigAck {
            ap: Some(from.index),
            snapshot: None,
        })))
    }

    /// Current configuration as reported for CONFIG_GET.
    pub fn snapshot(&self) -> WaeSnapshot {
        WaeSnapshot {
            aps: self
                .aps
                .iter()
                .map(|(id, a)| ApConfigEntry {
                    ap: id.index,
                    channel: a.channel,
                    tx_power_dbm: a.tx_power_dbm,
                    load: a.associated.len() as u32,
                    mgmt_policy: WirePolicy::from(&a.policy),
                })
                .collect(),
            rules: self.table.iter().map(RuleEntry::from).collect(),
            slices: self.slices.keys().cloned().collect(),
        }
    }

    /// Where a packet arriving at the WAE goes next.
    pub fn wae_classify_and_forward(&self, pkt: &Packet) -> ForwardDecision {
        match &pkt.payload {
            Payload::Nas(_) => ForwardDecision::ToN2,
            Payload::Cmi(_) => ForwardDecision::ToCmi,
            Payload::Mgmt(_) | Payload::N2(_) => ForwardDecision::Local,
            Payload::Data { .. } => {
                let Some(flow) = &pkt.flow else {
                    return ForwardDecision::Drop(DropReason::NoRule);
                };
                if self.ues.get(&flow.ue).and_then(|u| u.sa).is_none() {
                    return ForwardDecision::Drop(DropReason::NoAssociation);
                }
                match self.table.lookup(flow.ue, &flow.traffic_class, Direction::Up) {
                    Some(rule) => match rule.output {
                        FlowOutput::N3(t) => ForwardDecision::ToN3 {
                            tunnel_id: t,
                            slice: rule.slice_id.clone(),
                            rule_id: rule.rule_id,
                        },
                        FlowOutput::Ap(_) => ForwardDecision::Drop(DropReason::NoRule),
                    },
                    None => ForwardDecision::Drop(DropReason::NoRule),
                }
            }
            Payload::N3 { inner, .. } => {
                let Some(flow) = &inner.flow else {
                    return ForwardDecision::Drop(DropReason::NoRule);
                };
                let Some(rule) = self.table.lookup(flow.ue, &flow.traffic_class, Direction::Down) else {
                    return ForwardDecision::Drop(DropReason::NoRule);
                };
                let FlowOutput::Ap(i) = rule.output else {
                    return ForwardDecision::Drop(DropReason::NoRule);
                };
                let ap = NodeId::ap(i);
                let Some(rec) = self.ues.get(&flow.ue) else {
                    return ForwardDecision::Drop(DropReason::NoAssociation);
                };
                let in_transit =
                    rec.handover_target.is_some() || !rec.buffer.is_empty() || rec.serving_ap != Some(ap);
                if in_transit {
                    if rule.buffer_during_handover && rec.sa.is_some() {
                        ForwardDecision::Buffer
                    } else {
                        ForwardDecision::Drop(DropReason::NoAssociation)
                    }
                } else if rec.sa.is_none() {
                    ForwardDecision::Drop(DropReason::NoAssociation)
                } else {
                    ForwardDecision::ToAp {
                        ap,
                        rule_id: rule.rule_id,
                    }
                }
            }
        }
    }

    fn count_drop(&mut self, r: DropReason) {
        match r {
            DropReason::NoRule => self.counters.unmatched += 1,
            DropReason::NoAssociation => self.counters.no_association += 1,
        }
    }

    /// A packet arriving from an AP over the backhaul.
    pub fn on_backhaul(&mut self, now: u64, pkt: Packet) -> Vec<WaeAction> {
        match self.wae_classify_and_forward(&pkt) {
            ForwardDecision::ToN2 => {
                let Payload::Nas(nas) = pkt.payload else { unreachable!() };
                vec![WaeAction::N2(wae_relay_nas_up(pkt.src, nas))]
            }
            ForwardDecision::Local => match pkt.payload {
                Payload::Mgmt(Mgmt::Event(ev)) if pkt.src.kind == NodeKind::Ap => self.on_ap_event(now, pkt.src, ev),
                Payload::Mgmt(Mgmt::IkeReply) => {
                    self.ues.entry(pkt.src).or_default().ike_reply = true;
                    self.maybe_complete_sa(now, pkt.src)
                }
                _ => Vec::new(),
            },
            ForwardDecision::ToN3 {
                tunnel_id,
                slice,
                rule_id,
            } => {
                let mut inner = pkt;
                inner.set_ipsec(false);
                let outer = inner.encapsulate_n3(tunnel_id, self.node, self.cfg.upf);
                self.counters.uplink_encapsulated += 1;
                match self.cfg.mode {
                    Mode::SplitMac => vec![WaeAction::Northbound(outer)],
                    Mode::Proposed => match self.scheduler.enqueue(&slice, rule_id, outer) {
                        Ok(()) => vec![WaeAction::N3Ready],
                        Err(_) => {
                            self.counters.n3_queue_drops += 1;
                            Vec::new()
                        }
                    },
                }
            }
            ForwardDecision::Drop(r) => {
                self.count_drop(r);
                Vec::new()
            }
            ForwardDecision::ToCmi | ForwardDecision::ToAp { .. } | ForwardDecision::Buffer => Vec::new(),
        }
    }

    /// Next uplink packet for the N3 link.
    pub fn next_n3(&mut self, now: u64) -> Dequeue {
        self.scheduler.dequeue(now)
    }

    /// Downlink N3 packet from the core.
    pub fn on_n3(&mut self, pkt: Packet) -> Vec<WaeAction> {
        let decision = self.wae_classify_and_forward(&pkt);
        let Payload::N3 { inner, .. } = pkt.payload else {
            return Vec::new();
        };
        let mut inner = *inner;
        match decision {
            ForwardDecision::ToAp { ap, .. } => {
                inner.set_ipsec(true);
                vec![WaeAction::ToAp { ap, pkt: inner }]
            }
            ForwardDecision::Buffer => {
                let cap = self.cfg.buffer_packets;
                let ue = inner.flow.as_ref().expect("classified flow").ue;
                let rec = self.ues.get_mut(&ue).expect("classified UE");
                if rec.buffer.len() >= cap {
                    rec.buffer.pop_front();
                    self.counters.buffer_overflow += 1;
                }
                rec.buffer.push_back(inner);
                self.counters.buffered += 1;
                Vec::new()
            }
            ForwardDecision::Drop(r) => {
                self.count_drop(r);
                Vec::new()
            }
            _ => Vec::new(),
        }
    }

    /// N2 message from the AMF.
    pub fn on_n2(&mut self, now: u64, msg: N2Message) -> Vec<WaeAction> {
        match msg {
            N2Message::DownlinkNas { ue, nas } => match self.ues.get(&ue).and_then(|r| r.serving_ap) {
                Some(ap) => vec![WaeAction::ToAp {
                    ap,
                    pkt: Packet::nas(self.node, ue, now, nas),
                }],
                None => {
                    self.counters.unknown_ue += 1;
                    Vec::new()
                }
            },
            N2Message::SessionSetup {
                ue,
                tunnel_id,
                qos,
                traffic_class,
            } => {
                let Some(ap) = self.ues.get(&ue).and_then(|r| r.serving_ap) else {
                    self.counters.unknown_ue += 1;
                    return Vec::new();
                };
                let rec = self.ues.get_mut(&ue).expect("present");
                rec.tunnel_id = Some(tunnel_id);
                rec.qos = Some(qos);
                rec.traffic_class = Some(traffic_class.clone());
                let corr = self.corr();
                let notify = CmiMessage::new(
                    corr,
                    CmiBody::SessionNotify(SessionNotify {
                        ue: ue.index,
                        tunnel: tunnel_id,
                        ap: ap.index,
                        tc: traffic_class,
                        qos,
                    }),
                );
                let mut out = vec![
                    WaeAction::Cmi(notify),
                    WaeAction::ToAp {
                        ap,
                        pkt: Packet::mgmt(self.node, ue, now, Mgmt::IkeInit),
                    },
                ];
                out.extend(self.maybe_complete_sa(now, ue));
                out
            }
            N2Message::UplinkNas { .. } => Vec::new(),
        }
    }

    /// Completes the secure association once the UE has answered the IKE
    /// exchange and both of its rules are installed.
    fn maybe_complete_sa(&mut self, now: u64, ue: NodeId) -> Vec<WaeAction> {
        let Some(rec) = self.ues.get(&ue) else {
            return Vec::new();
        };
        if rec.sa.is_some() || !rec.ike_reply {
            return Vec::new();
        }
        let (Some(tunnel_id), Some(qos), Some(tc), Some(ap)) =
            (rec.tunnel_id, rec.qos, rec.traffic_class.clone(), rec.serving_ap)
        else {
            return Vec::new();
        };
        let up = self.table.lookup(ue, &tc, Direction::Up).is_some();
        let down = self.table.lookup(ue, &tc, Direction::Down).is_some();
        if !(up && down) {
            return Vec::new();
        }
        let rec = self.ues.get_mut(&ue).expect("present");
        rec.sa = Some(SecureAssociation {
            ue,
            established_us: now,
        });
        let done = Mgmt::IkeDone {
            tunnel_id,
            anchor: self.node,
            qos,
        };
        vec![WaeAction::ToAp {
            ap,
            pkt: Packet::mgmt(self.node, ue, now, done),
        }]
    }

    /// Releases buffered downlink once the UE sits at the AP its rule
    /// points to.
    fn try_flush(&mut self, ue: NodeId) -> Vec<WaeAction> {
        let Some(rec) = self.ues.get(&ue) else {
            return Vec::new();
        };
        if rec.buffer.is_empty() && rec.handover_target.is_none() {
            return Vec::new();
        }
        let (Some(ap), Some(tc), Some(_)) = (rec.serving_ap, rec.traffic_class.as_deref(), rec.sa) else {
            return Vec::new();
        };
        match self.table.lookup(ue, tc, Direction::Down) {
            Some(rule) if rule.output == FlowOutput::Ap(ap.index) => {}
            _ => return Vec::new(),
        }
        let rec = self.ues.get_mut(&ue).expect("present");
        if rec.handover_target.take().is_some() {
            self.counters.handovers_completed += 1;
        }
        let drained: Vec<Packet> = rec.buffer.drain(..).collect();
        self.counters.flushed += drained.len() as u64;
        drained
            .into_iter()
            .map(|mut p| {
                p.set_ipsec(true);
                WaeAction::ToAp { ap, pkt: p }
            })
            .collect()
    }

    fn on_ap_event(&mut self, now: u64, ap: NodeId, ev: ApEvent) -> Vec<WaeAction> {
        let mut out = Vec::new();
        match ev {
            ApEvent::Applied { token } => {
                let Some(p) = self.pending.remove(&token) else {
                    return out;
                };
                if let Some(m) = self.aps.get_mut(&p.ap) {
                    if let Some(ch) = p.channel {
                        m.channel = ch;
                    }
                    if let Some(tx) = p.tx_power_dbm {
                        m.tx_power_dbm = tx;
                    }
                    if let Some(pol) = p.policy {
                        m.policy = pol;
                    }
                }
                let reply = CmiMessage::new(
                    p.corr,
                    CmiBody::ConfigAck(ConfigAck {
                        ap: Some(p.ap.index),
                        snapshot: None,
                    }),
                );
                self.remember(&reply);
                out.push(WaeAction::Cmi(reply));
                return out;
            }
            ApEvent::ProbeSeen { reading } => {
                self.touch(ap).readings.insert(reading.ue, reading.rssi_dbm);
            }
            ApEvent::Associated { ue } => {
                if let Some(m) = self.aps.get_mut(&ap) {
                    m.associated.insert(ue);
                }
                // A UE sits at one AP at a time.
                for (id, m) in self.aps.iter_mut() {
                    if *id != ap {
                        m.associated.remove(&ue);
                    }
                }
                self.ues.entry(ue).or_default().serving_ap = Some(ap);
                self.touch(ap);
                out.extend(self.try_flush(ue));
            }
            ApEvent::Disassociated { ue } => {
                if let Some(m) = self.aps.get_mut(&ap) {
                    m.associated.remove(&ue);
                }
                if let Some(rec) = self.ues.get_mut(&ue) {
                    if rec.serving_ap == Some(ap) {
                        rec.serving_ap = None;
                    }
                }
                self.touch(ap);
            }
            ApEvent::Report { readings, neighbors } => {
                if let Some(m) = self.aps.get_mut(&ap) {
                    m.neighbors = neighbors;
                }
                let entry = self.touch(ap);
                for r in readings {
                    entry.readings.insert(r.ue, r.rssi_dbm);
                }
            }
        }
        if self.subscribed.is_some() && !self.flush_armed {
            self.flush_armed = true;
            out.push(WaeAction::ArmFlush {
                at_us: now + self.cfg.report_coalesce_us,
            });
        }
        out
    }

    fn touch(&mut self, ap: NodeId) -> &mut ReportEntry {
        self.reports.entry(ap).or_default()
    }

    /// Emits the coalesced STATS_REPORT.
    pub fn flush_reports(&mut self, now: u64) -> Vec<WaeAction> {
        self.flush_armed = false;
        let pending = std::mem::take(&mut self.reports);
        if pending.is_empty() || self.subscribed.is_none() || !self.session.is_established() {
            return Vec::new();
        }
        let aps = pending
            .into_iter()
            .filter_map(|(ap, entry)| {
                let m = self.aps.get(&ap)?;
                Some(ApReport {
                    ap: ap.index,
                    channel: m.channel,
                    load: m.associated.len() as u32,
                    associated: m.associated.iter().map(|u| u.index).collect(),
                    rssi: entry
                        .readings
                        .into_iter()
                        .map(|(ue, rssi_dbm)| UeRssi { ue: ue.index, rssi_dbm })
                        .collect(),
                    neighbors: m.neighbors.iter().map(|n| n.index).collect(),
                })
            })
            .collect();
        let corr = self.corr();
        vec![WaeAction::Cmi(CmiMessage::new(
            corr,
            CmiBody::StatsReport(StatsReport { time_us: now, aps }),
        ))]
    }

    /// Cross-structure consistency, for tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        self.table.check_invariants()?;
        for rule in self.table.iter() {
            if !self.slices.contains_key(&rule.slice_id) {
                return Err(format!("rule {} references missing slice {}", rule.rule_id, rule.slice_id));
            }
        }
        for (ue, rec) in &self.ues {
            if rec.buffer.len() > self.cfg.buffer_packets {
                return Err(format!("{ue} buffer exceeds cap"));
            }
        }
        Ok(())
    }
}

fn check_channel(ch: u8) -> Result<(), Failure> {
    if is_allowed_channel(ch) {
        Ok(())
    } else {
        Err((ErrorCode::BadChannel, format!("channel {ch} is not one of 1, 6, 11")))
    }
}

fn table_failure(e: FlowTableError) -> Failure {
    (ErrorCode::UnknownRule, e.to_string())
}

fn slice_ack(slice: &str, template: Option<SliceTemplate>) -> CmiBody {
    CmiBody::SliceAck(SliceAck {
        slice: slice.to_string(),
        template,
    })
}

/// Uplink NAS from `ue`, wrapped for N2 byte for byte.
pub fn wae_relay_nas_up(ue: NodeId, nas: Vec<u8>) -> N2Message {
    N2Message::UplinkNas { ue, nas }
}
