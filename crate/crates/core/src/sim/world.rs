//! The simulated network: every node, every link, and the event loop that
//! moves packets between them.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::event::EventQueue;
use super::link::Link;
use super::radio::{build_conflict_graph, in_range, neighbors_of, rssi};
use super::trace::{digest_hex, Trace, TraceRecord};
use super::traffic::TrafficGen;
use super::ue::{pick_strongest, UeAgent, PROBE_INTERVAL_US, PROBE_ROUNDS, RESCAN_US, UE_TX_POWER_DBM};
use crate::apps::conflict_count;
use crate::cmi::codec::{encode_frame, FrameDecoder};
use crate::cmi::msg::CmiBody;
use crate::controller::{ApSeed, ConfigUpdate, ControllerConfig, RanController, SliceOp};
use crate::dataplane::{ApNode, ApOut, Dequeue, Mode, Wae, WaeAction, WaeConfig};
use crate::fivegc::{auth_response, check_auth_gate, Amf, NasMessage, Subscriber, Upf};
use crate::flow::Direction;
use crate::model::{ApState, NodeId, NodeKind, Point, UeState, UeTrigger};
use crate::packet::{FlowKey, Mgmt, Packet, PacketClass, Payload, Reading};
use crate::report::{
    Anchor, ConflictSample, FlowMetrics, LinkClassMetrics, LinkMetrics, MetricsReport, RttStats, SliceMetrics,
    UeMetrics, REPORT_SCHEMA, SLICE_BIN_US,
};
use crate::rng::{stream, Stream};
use crate::scenario::{parse_key, Directive, Scenario};

/// Interval of AP measurement reports.
pub const STATS_PERIOD_US: u64 = 200_000;
/// Interval of UE position updates.
pub const MOBILITY_TICK_US: u64 = 100_000;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("scenario invalid:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("runtime assertion failed: {0}")]
    Assertion(String),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    /// Keep every trace record in memory (for dumping or replay).
    pub keep_trace: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: MetricsReport,
    pub trace: Option<Vec<TraceRecord>>,
}

/// Runs `scenario` to its horizon. The report depends only on the
/// arguments.
pub fn run(scenario: &Scenario, mode: Mode, seed: u64) -> Result<MetricsReport, RunError> {
    run_with(scenario, mode, seed, RunOptions::default()).map(|o| o.report)
}

pub fn run_with(scenario: &Scenario, mode: Mode, seed: u64, opts: RunOptions) -> Result<RunOutput, RunError> {
    scenario.validate().map_err(RunError::Invalid)?;
    let mut w = World::new(scenario, mode, seed, opts);
    w.run();
    w.finish()
}

#[derive(Debug)]
enum Ev {
    Deliver {
        link: usize,
        dir: usize,
        from: NodeId,
        to: NodeId,
        pkt: Packet,
    },
    CtrlStart,
    UeStart(NodeId),
    Probe {
        ue: NodeId,
        attempt: u32,
        round: u32,
    },
    ScanDecide {
        ue: NodeId,
        attempt: u32,
    },
    Rescan {
        ue: NodeId,
        attempt: u32,
    },
    Gen(usize),
    StatsTick,
    MobilityTick,
    Audit,
    CtrlTimeout {
        corr: u64,
        attempt: u32,
    },
    WaeFlush,
    N3Wake,
    Directive(usize),
}

struct LinkSlot {
    link: Link,
    /// Direction 0 runs from `ends[0]` to `ends[1]`.
    ends: [String; 2],
    in_flight: BTreeMap<(usize, PacketClass), u64>,
}

struct GenSlot {
    ue: NodeId,
    flow: FlowKey,
    pkt_bytes: u32,
    gen: TrafficGen,
    next_seq: u64,
}

#[derive(Debug, Default)]
struct FlowRx {
    sent: u64,
    received: u64,
    bytes: u64,
    window_bytes: u64,
    delay_sum: u64,
    max_seq: Option<u64>,
    gaps: u64,
    reorders: u64,
}

impl FlowRx {
    fn record(&mut self, now: u64, pkt: &Packet, in_window: bool) {
        let user = pkt.user_bytes() as u64;
        self.received += 1;
        self.bytes += user;
        if in_window {
            self.window_bytes += user;
        }
        self.delay_sum += now - pkt.created_us;
        let seq = pkt.seq_no;
        match self.max_seq {
            None => self.gaps += seq,
            Some(m) if seq > m => self.gaps += seq - m - 1,
            Some(_) => self.reorders += 1,
        }
        self.max_seq = Some(self.max_seq.map_or(seq, |m| m.max(seq)));
    }
}

struct World<'a> {
    sc: &'a Scenario,
    mode: Mode,
    q: EventQueue<Ev>,
    trace: Trace,
    links: Vec<LinkSlot>,
    routes: BTreeMap<(NodeId, NodeId), (usize, usize)>,
    radio: BTreeMap<NodeId, usize>,
    aps: Vec<ApNode>,
    ap_index: BTreeMap<NodeId, usize>,
    wae: Wae,
    ctrl: RanController,
    amf: Amf,
    upf: Upf,
    ues: BTreeMap<NodeId, UeAgent>,
    traffic_class: BTreeMap<NodeId, String>,
    decoders: BTreeMap<(NodeId, NodeId), FrameDecoder>,
    gens: Vec<GenSlot>,
    audit_rng: ChaCha8Rng,
    seed: u64,
    n3_wake: Option<u64>,
    ctrl_node: NodeId,
    wae_node: NodeId,
    amf_node: NodeId,
    upf_node: NodeId,
    dn_node: NodeId,
    // metrics
    flows: BTreeMap<FlowKey, FlowRx>,
    rtt: Vec<u64>,
    rtt_seen: usize,
    flow_adds: BTreeMap<u32, u64>,
    n3_bytes: BTreeMap<u32, u64>,
    flow_slice: BTreeMap<FlowKey, String>,
    slice_bins: BTreeMap<String, Vec<u64>>,
    conflicts: Vec<ConflictSample>,
    counters: BTreeMap<&'static str, u64>,
    ever_active: BTreeSet<NodeId>,
}

impl<'a> World<'a> {
    fn new(sc: &'a Scenario, mode: Mode, seed: u64, opts: RunOptions) -> Self {
        let wae_node = NodeId::wae(sc.topology.wae);
        let ctrl_node = NodeId::controller(0);
        let amf_node = NodeId::amf(0);
        let upf_node = NodeId::upf(0);

        let aps: Vec<ApNode> = sc
            .topology
            .aps
            .iter()
            .map(|a| {
                let mut st = ApState::new(NodeId::ap(a.id), a.position, a.channel, a.tx_power_dbm)
                    .expect("validated AP");
                st.max_associated = a.max_associated;
                st.radio_capacity_mbps = sc.topology.links.radio.capacity_mbps;
                ApNode::new(st, wae_node)
            })
            .collect();
        let ap_index = aps.iter().enumerate().map(|(i, a)| (a.id(), i)).collect();

        let l = &sc.topology.links;
        let mut links = Vec::new();
        let mut routes = BTreeMap::new();
        let mut radio = BTreeMap::new();
        let add = |links: &mut Vec<LinkSlot>, name: String, a: NodeId, b: NodeId, p, half: bool| {
            let i = links.len();
            links.push(LinkSlot {
                link: Link::new(name, p, half),
                ends: [a.to_string(), if half { "ue".into() } else { b.to_string() }],
                in_flight: BTreeMap::new(),
            });
            i
        };
        for ap in &aps {
            let id = ap.id();
            let r = add(&mut links, format!("radio-{id}"), id, id, l.radio, true);
            radio.insert(id, r);
            let b = add(&mut links, format!("backhaul-{id}"), id, wae_node, l.backhaul, false);
            routes.insert((id, wae_node), (b, 0));
            routes.insert((wae_node, id), (b, 1));
        }
        let mut pair = |links: &mut Vec<LinkSlot>, name: &str, a: NodeId, b: NodeId, p| {
            let i = add(links, name.to_string(), a, b, p, false);
            routes.insert((a, b), (i, 0));
            routes.insert((b, a), (i, 1));
        };
        pair(&mut links, "cmi", wae_node, ctrl_node, l.cmi);
        let core_side = match mode {
            Mode::Proposed => wae_node,
            Mode::SplitMac => ctrl_node,
        };
        pair(&mut links, "n2", core_side, amf_node, l.n2);
        pair(&mut links, "n3", core_side, upf_node, l.n3);

        let subscribers = sc
            .subscribers
            .iter()
            .map(|s| {
                (
                    NodeId::ue(s.ue),
                    Subscriber {
                        key: parse_key(&s.key).expect("validated key"),
                        qos: s.qos,
                        traffic_class: s.traffic_class.clone(),
                    },
                )
            })
            .collect();
        let traffic_class = sc
            .ues
            .iter()
            .map(|u| {
                let tc = sc.subscriber(u.id).map_or("be".to_string(), |s| s.traffic_class.clone());
                (NodeId::ue(u.id), tc)
            })
            .collect();

        let wae = Wae::new(
            WaeConfig {
                wae_id: sc.topology.wae,
                mode,
                upf: upf_node,
                ..WaeConfig::default()
            },
            &aps.iter()
                .map(|a| (a.id(), a.state.channel(), a.state.tx_power_dbm))
                .collect::<Vec<_>>(),
        );
        let seeds: Vec<ApSeed> = aps
            .iter()
            .map(|a| ApSeed {
                ap: a.id(),
                channel: a.state.channel(),
                tx_power_dbm: a.state.tx_power_dbm,
            })
            .collect();
        let ctrl = RanController::new(
            ControllerConfig {
                stats_period_us: STATS_PERIOD_US,
                apps: sc.apps.clone(),
                ..ControllerConfig::default()
            },
            &seeds,
            sc.ues.iter().map(|u| NodeId::ue(u.id)),
            &sc.slices,
        );

        let ues = sc
            .ues
            .iter()
            .map(|u| {
                let id = NodeId::ue(u.id);
                (id, UeAgent::new(id, sc.ue_key(u), sc.waypoints(u), u.start_us))
            })
            .collect();

        let mut w = Self {
            sc,
            mode,
            q: EventQueue::new(),
            trace: Trace::new(opts.keep_trace),
            links,
            routes,
            radio,
            aps,
            ap_index,
            wae,
            ctrl,
            amf: Amf::new(subscribers, stream(seed, Stream::Nonce)),
            upf: Upf::new(),
            ues,
            traffic_class,
            decoders: BTreeMap::new(),
            gens: Vec::new(),
            audit_rng: stream(seed, Stream::Audit),
            seed,
            n3_wake: None,
            ctrl_node,
            wae_node,
            amf_node,
            upf_node,
            dn_node: NodeId::dn(0),
            flows: BTreeMap::new(),
            rtt: Vec::new(),
            rtt_seen: 0,
            flow_adds: BTreeMap::new(),
            n3_bytes: BTreeMap::new(),
            flow_slice: BTreeMap::new(),
            slice_bins: BTreeMap::new(),
            conflicts: Vec::new(),
            counters: BTreeMap::new(),
            ever_active: BTreeSet::new(),
        };
        w.record_conflicts(0);
        w.q.schedule(0, Ev::CtrlStart);
        for u in &sc.ues {
            w.q.schedule(u.start_us, Ev::UeStart(NodeId::ue(u.id)));
        }
        w.q.schedule(STATS_PERIOD_US, Ev::StatsTick);
        w.q.schedule(MOBILITY_TICK_US, Ev::MobilityTick);
        if sc.audit_period_us > 0 {
            let first = w.audit_gap();
            w.q.schedule(first, Ev::Audit);
        }
        for (i, d) in sc.directives.iter().enumerate() {
            w.q.schedule(d.at_us(), Ev::Directive(i));
        }
        w
    }

    fn bump(&mut self, name: &'static str) {
        *self.counters.entry(name).or_default() += 1;
    }

    /// Half to one-and-a-half audit periods, so audits never phase-lock
    /// with periodic traffic.
    fn audit_gap(&mut self) -> u64 {
        let p = self.sc.audit_period_us;
        p / 2 + self.audit_rng.gen_range(0..p)
    }

    fn ap_geometry(&self) -> Vec<(NodeId, Point, f64)> {
        self.aps
            .iter()
            .map(|a| (a.id(), a.state.position, a.state.tx_power_dbm))
            .collect()
    }

    fn record_conflicts(&mut self, now: u64) {
        let g = build_conflict_graph(&self.ap_geometry());
        let channels: BTreeMap<NodeId, u8> = self.aps.iter().map(|a| (a.id(), a.state.channel())).collect();
        let conflicts = conflict_count(&g, &channels) as u32;
        if self.conflicts.last().is_some_and(|c| c.conflicts == conflicts) {
            return;
        }
        self.conflicts.push(ConflictSample { time_us: now, conflicts });
    }

    fn in_window(&self, now: u64) -> bool {
        now >= self.sc.measure_from_us
    }

    fn run(&mut self) {
        let horizon = self.sc.duration_us;
        while self.q.peek_time().is_some_and(|t| t <= horizon) {
            let (now, _, ev) = self.q.pop().expect("peeked");
            self.trace_event(now, &ev);
            self.handle(now, ev);
        }
    }

    fn trace_event(&mut self, now: u64, ev: &Ev) {
        let t = &mut self.trace;
        match ev {
            Ev::Deliver { link, to, pkt, .. } => t.record(
                now,
                &to.to_string(),
                "deliver",
                format_args!(
                    "{} {} {}B seq={} {}>{}",
                    self.links[*link].link.name,
                    pkt.class().as_str(),
                    pkt.size_bytes,
                    pkt.seq_no,
                    pkt.src,
                    pkt.dst
                ),
            ),
            Ev::CtrlStart => t.record(now, "controller0", "start", format_args!("")),
            Ev::UeStart(ue) => t.record(now, &ue.to_string(), "ue_start", format_args!("")),
            Ev::Probe { ue, attempt, round } => {
                t.record(now, &ue.to_string(), "probe", format_args!("attempt={attempt} round={round}"))
            }
            Ev::ScanDecide { ue, attempt } => {
                t.record(now, &ue.to_string(), "scan_decide", format_args!("attempt={attempt}"))
            }
            Ev::Rescan { ue, attempt } => t.record(now, &ue.to_string(), "rescan", format_args!("attempt={attempt}")),
            Ev::Gen(i) => {
                let g = &self.gens[*i];
                t.record(now, &g.ue.to_string(), "generate", format_args!("flow={} seq={}", i, g.next_seq))
            }
            Ev::StatsTick => t.record(now, "aps", "stats_tick", format_args!("")),
            Ev::MobilityTick => t.record(now, "ues", "mobility_tick", format_args!("")),
            Ev::Audit => t.record(now, "controller0", "audit", format_args!("")),
            Ev::CtrlTimeout { corr, attempt } => t.record(
                now,
                "controller0",
                "retry_timer",
                format_args!("corr={corr} attempt={attempt}"),
            ),
            Ev::WaeFlush => t.record(now, &self.wae_node.to_string(), "report_flush", format_args!("")),
            Ev::N3Wake => t.record(now, &self.wae_node.to_string(), "n3_wake", format_args!("")),
            Ev::Directive(i) => t.record(now, "operator", "directive", format_args!("{i}")),
        }
    }

    fn handle(&mut self, now: u64, ev: Ev) {
        match ev {
            Ev::Deliver {
                link,
                dir,
                from,
                to,
                pkt,
            } => {
                let class = pkt.class();
                let slot = &mut self.links[link];
                slot.link.delivered(dir, class, pkt.size_bytes);
                *slot.in_flight.get_mut(&(dir, class)).expect("counted in flight") -= 1;
                self.deliver(now, from, to, pkt);
            }
            Ev::CtrlStart => {
                self.ctrl.start(now);
                self.ctrl_flush(now);
            }
            Ev::UeStart(ue) => {
                let a = &self.ues[&ue];
                if a.ctx.state == UeState::Idle && !a.rejected {
                    self.begin_scan(now, ue);
                }
            }
            Ev::Probe { ue, attempt, round } => self.probe(now, ue, attempt, round),
            Ev::ScanDecide { ue, attempt } => self.scan_decide(now, ue, attempt),
            Ev::Rescan { ue, attempt } => {
                let a = &self.ues[&ue];
                if a.attempt == attempt && matches!(a.ctx.state, UeState::Idle | UeState::Scanning) && !a.rejected {
                    self.begin_scan(now, ue);
                }
            }
            Ev::Gen(i) => self.generate(now, i),
            Ev::StatsTick => {
                self.stats_tick(now);
                self.q.schedule(now + STATS_PERIOD_US, Ev::StatsTick);
            }
            Ev::MobilityTick => {
                for ue in self.ues.values_mut() {
                    ue.move_to(now);
                }
                self.q.schedule(now + MOBILITY_TICK_US, Ev::MobilityTick);
            }
            Ev::Audit => {
                self.ctrl.request_audit(now);
                self.ctrl_flush(now);
                let gap = self.audit_gap();
                self.q.schedule(now + gap, Ev::Audit);
            }
            Ev::CtrlTimeout { corr, attempt } => {
                self.ctrl.on_timeout(now, corr, attempt);
                self.ctrl_flush(now);
            }
            Ev::WaeFlush => {
                let acts = self.wae.flush_reports(now);
                self.wae_actions(now, acts);
            }
            Ev::N3Wake => {
                if self.n3_wake == Some(now) {
                    self.n3_wake = None;
                }
                self.pump_n3(now);
            }
            Ev::Directive(i) => self.directive(now, i),
        }
    }

    // ---- transport ----

    fn route(&self, from: NodeId, to: NodeId) -> Option<(usize, usize)> {
        match (from.kind, to.kind) {
            (NodeKind::Ue, NodeKind::Ap) => self.radio.get(&to).map(|&l| (l, 1)),
            (NodeKind::Ap, NodeKind::Ue) => self.radio.get(&from).map(|&l| (l, 0)),
            _ => self.routes.get(&(from, to)).copied(),
        }
    }

    fn send(&mut self, now: u64, from: NodeId, to: NodeId, pkt: Packet) {
        let Some((link, dir)) = self.route(from, to) else {
            self.bump("unroutable");
            return;
        };
        let class = pkt.class();
        if class == PacketClass::N3 && matches!(from.kind, NodeKind::Wae | NodeKind::Upf) {
            if let Some(f) = &pkt.flow {
                *self.n3_bytes.entry(f.ue.index).or_default() += pkt.size_bytes as u64;
            }
        }
        let slot = &mut self.links[link];
        if let Some(at) = slot.link.transmit(dir, class, pkt.size_bytes, now) {
            *slot.in_flight.entry((dir, class)).or_default() += 1;
            self.q.schedule(
                at,
                Ev::Deliver {
                    link,
                    dir,
                    from,
                    to,
                    pkt,
                },
            );
        }
    }

    fn deliver(&mut self, now: u64, from: NodeId, to: NodeId, pkt: Packet) {
        match to.kind {
            NodeKind::Ue => self.ue_rx(now, to, from, pkt),
            NodeKind::Ap => self.ap_rx(now, to, from, pkt),
            NodeKind::Wae => self.wae_rx(now, from, pkt),
            NodeKind::Controller => self.ctrl_rx(now, from, pkt),
            NodeKind::Amf => self.amf_rx(now, from, pkt),
            NodeKind::Upf => self.upf_rx(now, pkt),
            NodeKind::Dn => {}
        }
    }

    fn decode_cmi(&mut self, from: NodeId, to: NodeId, bytes: &[u8]) -> Vec<crate::cmi::msg::CmiMessage> {
        let mut out = Vec::new();
        for r in self.decoders.entry((from, to)).or_default().feed(bytes) {
            match r {
                Ok(m) => out.push(m),
                Err(_) => self.bump("cmi_decode_errors"),
            }
        }
        out
    }

    // ---- AP ----

    fn ap_rx(&mut self, now: u64, ap: NodeId, from: NodeId, pkt: Packet) {
        let i = self.ap_index[&ap];
        let outs = if from.kind == NodeKind::Ue {
            let pos = self.ues.get(&from).map_or(Point::default(), |u| u.position);
            let r = rssi(UE_TX_POWER_DBM, pos, self.aps[i].state.position);
            self.aps[i].on_radio(now, pkt, r)
        } else {
            let before = self.aps[i].state.channel();
            let outs = self.aps[i].on_backhaul(now, pkt);
            if self.aps[i].state.channel() != before {
                self.record_conflicts(now);
            }
            outs
        };
        self.ap_out(now, ap, outs);
    }

    fn ap_out(&mut self, now: u64, ap: NodeId, outs: Vec<ApOut>) {
        for o in outs {
            match o {
                ApOut::Radio(p) => {
                    let dst = p.dst;
                    self.send(now, ap, dst, p);
                }
                ApOut::Backhaul(p) => self.send(now, ap, self.wae_node, p),
            }
        }
    }

    fn stats_tick(&mut self, now: u64) {
        let geo = self.ap_geometry();
        for i in 0..self.aps.len() {
            let pos = self.aps[i].state.position;
            let readings = self
                .ues
                .values()
                .filter(|u| now >= u.start_us)
                .filter_map(|u| {
                    let r = rssi(UE_TX_POWER_DBM, u.position, pos);
                    in_range(r).then_some(Reading { ue: u.id(), rssi_dbm: r })
                })
                .collect();
            let out = self.aps[i].report(now, readings, neighbors_of(i, &geo));
            let id = self.aps[i].id();
            self.ap_out(now, id, vec![out]);
        }
    }

    // ---- WAE ----

    fn wae_rx(&mut self, now: u64, from: NodeId, pkt: Packet) {
        let acts = if from.kind == NodeKind::Ap {
            self.wae.on_backhaul(now, pkt)
        } else {
            match pkt.payload {
                Payload::Cmi(ref bytes) => {
                    let msgs = self.decode_cmi(from, self.wae_node, bytes);
                    let mut acts = Vec::new();
                    for m in msgs {
                        acts.extend(self.wae.wae_handle_cmi(now, m));
                    }
                    acts
                }
                Payload::N2(msg) => self.wae.on_n2(now, msg),
                Payload::N3 { .. } => self.wae.on_n3(pkt),
                _ => {
                    self.bump("wae_stray_packets");
                    Vec::new()
                }
            }
        };
        self.wae_actions(now, acts);
    }

    fn wae_actions(&mut self, now: u64, acts: Vec<WaeAction>) {
        let wae = self.wae_node;
        for a in acts {
            match a {
                WaeAction::Cmi(m) => {
                    let frame = encode_frame(&m).expect("WAE messages fit a frame");
                    self.send(now, wae, self.ctrl_node, Packet::cmi(wae, self.ctrl_node, now, frame));
                }
                WaeAction::ToAp { ap, pkt } => self.send(now, wae, ap, pkt),
                WaeAction::N2(msg) => {
                    let pkt = Packet::n2(wae, self.amf_node, now, msg);
                    let next = match self.mode {
                        Mode::Proposed => self.amf_node,
                        Mode::SplitMac => self.ctrl_node,
                    };
                    self.send(now, wae, next, pkt);
                }
                WaeAction::N3Ready => self.pump_n3(now),
                WaeAction::Northbound(pkt) => {
                    self.note_slice(&pkt);
                    self.send(now, wae, self.ctrl_node, pkt);
                }
                WaeAction::ArmFlush { at_us } => {
                    self.q.schedule(at_us, Ev::WaeFlush);
                }
            }
        }
    }

    fn note_slice(&mut self, pkt: &Packet) {
        let Some(f) = &pkt.flow else { return };
        if let Some(rule) = self.wae.flow_table().lookup(f.ue, &f.traffic_class, f.direction) {
            if self.flow_slice.get(f) != Some(&rule.slice_id) {
                self.flow_slice.insert(f.clone(), rule.slice_id.clone());
            }
        }
    }

    /// Moves uplink from the slice scheduler onto the N3 link whenever the
    /// link is idle.
    fn pump_n3(&mut self, now: u64) {
        let (link, dir) = self.routes[&(self.wae_node, self.upf_node)];
        loop {
            let busy = self.links[link].link.busy_until(dir);
            if busy > now {
                self.wake_n3(busy);
                return;
            }
            match self.wae.next_n3(now) {
                Dequeue::Packet(p) => {
                    self.note_slice(&p);
                    self.send(now, self.wae_node, self.upf_node, p);
                }
                Dequeue::Wait(t) => {
                    self.wake_n3(t);
                    return;
                }
                Dequeue::Empty => return,
            }
        }
    }

    fn wake_n3(&mut self, at: u64) {
        if self.n3_wake.is_none_or(|w| at < w) {
            self.n3_wake = Some(at);
            self.q.schedule(at, Ev::N3Wake);
        }
    }

    // ---- controller host ----

    fn ctrl_rx(&mut self, now: u64, from: NodeId, pkt: Packet) {
        if let Payload::Cmi(bytes) = &pkt.payload {
            for m in self.decode_cmi(from, self.ctrl_node, bytes) {
                self.ctrl.on_message(now, m);
            }
            self.ctrl_flush(now);
            return;
        }
        // Split-MAC relay between the access side and the core.
        let next = if from == self.wae_node { pkt.dst } else { self.wae_node };
        self.send(now, self.ctrl_node, next, pkt);
    }

    fn ctrl_flush(&mut self, now: u64) {
        let out = self.ctrl.take_output();
        let (ctrl, wae) = (self.ctrl_node, self.wae_node);
        for m in out.messages {
            if let CmiBody::FlowAdd(spec) = &m.body {
                *self.flow_adds.entry(spec.ue).or_default() += 1;
            }
            let frame = encode_frame(&m).expect("controller messages fit a frame");
            self.send(now, ctrl, wae, Packet::cmi(ctrl, wae, now, frame));
        }
        for t in out.timers {
            self.q.schedule(
                t.at_us,
                Ev::CtrlTimeout {
                    corr: t.correlation_id,
                    attempt: t.attempt,
                },
            );
        }
        let samples = &self.ctrl.stats().rtt_samples_us;
        if samples.len() > self.rtt_seen {
            if now >= self.sc.measure_from_us {
                self.rtt.extend_from_slice(&samples[self.rtt_seen..]);
            }
            self.rtt_seen = samples.len();
        }
        self.ctrl.take_triggers();
    }

    fn directive(&mut self, now: u64, i: usize) {
        let d = self.sc.directives[i].clone();
        let ok = match d {
            Directive::SliceCreate { template, .. } => self.ctrl.nv_slice_crud(SliceOp::Create(template)).is_ok(),
            Directive::SliceRead { slice_id, .. } => self.ctrl.nv_slice_crud(SliceOp::Read(slice_id)).is_ok(),
            Directive::SliceUpdate { template, .. } => self.ctrl.nv_slice_crud(SliceOp::Update(template)).is_ok(),
            Directive::SliceDelete { slice_id, force, .. } => {
                self.ctrl.nv_slice_crud(SliceOp::Delete { slice_id, force }).is_ok()
            }
            Directive::SetApps { apps, .. } => {
                self.ctrl.set_apps(apps);
                true
            }
            Directive::PushConfig {
                ap,
                channel,
                tx_power_dbm,
                ..
            } => self
                .ctrl
                .rmf_push_config(
                    NodeId::ap(ap),
                    ConfigUpdate {
                        channel,
                        tx_power_dbm,
                        mgmt_policy: None,
                    },
                )
                .is_ok(),
        };
        if !ok {
            self.bump("directive_errors");
        }
        self.ctrl_flush(now);
    }

    // ---- core ----

    fn amf_rx(&mut self, now: u64, from: NodeId, pkt: Packet) {
        let Payload::N2(msg) = pkt.payload else {
            self.bump("amf_stray_packets");
            return;
        };
        for r in self.amf.on_n2(&msg, &mut self.upf) {
            let reply = Packet::n2(self.amf_node, self.wae_node, now, r);
            self.send(now, self.amf_node, from, reply);
        }
    }

    fn upf_rx(&mut self, now: u64, pkt: Packet) {
        if let Some(f) = &pkt.flow {
            if let Some(slice) = self.flow_slice.get(f) {
                let bin = (now / SLICE_BIN_US) as usize;
                let bins = self.slice_bins.entry(slice.clone()).or_default();
                if bins.len() <= bin {
                    bins.resize(bin + 1, 0);
                }
                bins[bin] += pkt.size_bytes as u64;
            }
        }
        match self.upf.upf_terminate(pkt) {
            Ok(inner) => {
                let w = self.in_window(now);
                if let Some(f) = inner.flow.clone() {
                    self.flows.entry(f).or_default().record(now, &inner, w);
                }
            }
            Err(_) => self.bump("upf_rejected"),
        }
    }

    // ---- UE ----

    fn begin_scan(&mut self, now: u64, ue: NodeId) {
        let a = self.ues.get_mut(&ue).expect("known UE");
        a.attempt += 1;
        a.responses.clear();
        if !a.fire(UeTrigger::ProbeSent) {
            return;
        }
        let attempt = a.attempt;
        self.q.schedule(now, Ev::Probe { ue, attempt, round: 0 });
        self.q.schedule(
            now + PROBE_ROUNDS as u64 * PROBE_INTERVAL_US,
            Ev::ScanDecide { ue, attempt },
        );
    }

    fn probe(&mut self, now: u64, ue: NodeId, attempt: u32, round: u32) {
        let a = self.ues.get_mut(&ue).expect("known UE");
        if a.attempt != attempt || a.ctx.state != UeState::Scanning {
            return;
        }
        // Only the latest round's answers count.
        a.responses.clear();
        let pos = a.position;
        let targets: Vec<NodeId> = self
            .aps
            .iter()
            .filter(|ap| in_range(rssi(ap.state.tx_power_dbm, ap.state.position, pos)))
            .map(|ap| ap.id())
            .collect();
        for ap in targets {
            self.send(now, ue, ap, Packet::mgmt(ue, ap, now, Mgmt::ProbeRequest));
        }
        if round + 1 < PROBE_ROUNDS {
            self.q.schedule(
                now + PROBE_INTERVAL_US,
                Ev::Probe {
                    ue,
                    attempt,
                    round: round + 1,
                },
            );
        }
    }

    fn scan_decide(&mut self, now: u64, ue: NodeId, attempt: u32) {
        let a = self.ues.get_mut(&ue).expect("known UE");
        if a.attempt != attempt || a.ctx.state != UeState::Scanning {
            return;
        }
        match pick_strongest(&a.responses) {
            Some(ap) => {
                a.fire(UeTrigger::AssocOk);
                a.pending_ap = Some(ap);
                self.send(now, ue, ap, Packet::mgmt(ue, ap, now, Mgmt::AssocRequest { ap }));
            }
            None => {
                self.q.schedule(now + RESCAN_US, Ev::Rescan { ue, attempt });
            }
        }
    }

    fn schedule_rescan(&mut self, now: u64, ue: NodeId) {
        let attempt = self.ues[&ue].attempt;
        self.q.schedule(now + RESCAN_US, Ev::Rescan { ue, attempt });
    }

    fn ue_rx(&mut self, now: u64, ue: NodeId, from: NodeId, pkt: Packet) {
        let wae = self.wae_node;
        match pkt.payload {
            Payload::Mgmt(m) => self.ue_mgmt(now, ue, from, m),
            Payload::Nas(ref bytes) => {
                let Ok(nas) = NasMessage::decode(bytes) else {
                    self.bump("ue_bad_nas");
                    return;
                };
                let a = self.ues.get_mut(&ue).expect("known UE");
                if a.ctx.state != UeState::Authenticating {
                    return;
                }
                let serving = a.ctx.serving_ap.expect("authenticating UE has an AP");
                match nas {
                    NasMessage::AuthChallenge { nonce } => {
                        let nonce: Option<[u8; 16]> = hex::decode(&nonce).ok().and_then(|v| v.try_into().ok());
                        let Some(nonce) = nonce else {
                            self.bump("ue_bad_nas");
                            return;
                        };
                        let res = hex::encode(auth_response(&a.ctx.auth_key, &nonce));
                        let reply = NasMessage::AuthResponse { res }.encode();
                        self.send(now, ue, serving, Packet::nas(ue, wae, now, reply));
                    }
                    NasMessage::RegistrationAccept => {
                        a.fire(UeTrigger::AuthOk);
                    }
                    NasMessage::RegistrationReject { .. } => {
                        a.fire(UeTrigger::AuthFail);
                        a.rejected = true;
                        let bye = Mgmt::Disassoc {
                            ap: serving,
                            target: None,
                        };
                        self.send(now, ue, serving, Packet::mgmt(ue, serving, now, bye));
                    }
                    _ => {}
                }
            }
            Payload::Data { .. } => {
                let w = self.in_window(now);
                if let Some(f) = pkt.flow.clone() {
                    self.flows.entry(f).or_default().record(now, &pkt, w);
                }
            }
            _ => {}
        }
    }

    fn ue_mgmt(&mut self, now: u64, ue: NodeId, _from: NodeId, m: Mgmt) {
        let wae = self.wae_node;
        let a = self.ues.get_mut(&ue).expect("known UE");
        match m {
            Mgmt::ProbeResponse { ap, .. } => {
                if a.ctx.state == UeState::Scanning {
                    let i = self.ap_index[&ap];
                    let st = &self.aps[i].state;
                    a.responses.insert(ap, rssi(st.tx_power_dbm, st.position, a.position));
                }
            }
            Mgmt::AssocResponse { ap, accepted } => match a.ctx.state {
                UeState::Associating if a.pending_ap == Some(ap) => {
                    a.pending_ap = None;
                    if accepted {
                        a.fire(UeTrigger::AuthStart { ap });
                        a.associations += 1;
                        let req = NasMessage::RegistrationRequest { ue: ue.index }.encode();
                        self.send(now, ue, ap, Packet::nas(ue, wae, now, req));
                    } else {
                        a.fire(UeTrigger::Detach);
                        self.schedule_rescan(now, ue);
                    }
                }
                UeState::Handover if a.handover_target == Some(ap) => {
                    a.handover_target = None;
                    if accepted {
                        a.fire(UeTrigger::HoDone { ap });
                        a.handovers += 1;
                        a.associations += 1;
                        let held: Vec<Packet> = a.hold.drain(..).collect();
                        for p in held {
                            self.send(now, ue, ap, p);
                        }
                    } else {
                        a.fire(UeTrigger::Detach);
                        self.schedule_rescan(now, ue);
                    }
                }
                _ => {}
            },
            Mgmt::Disassoc { ap, target } => {
                if a.ctx.serving_ap != Some(ap) {
                    return;
                }
                match (a.ctx.state, target) {
                    (UeState::SessionActive, Some(t)) if t != ap => {
                        a.fire(UeTrigger::Steer { target: t });
                        a.handover_target = Some(t);
                        self.send(now, ue, t, Packet::mgmt(ue, t, now, Mgmt::AssocRequest { ap: t }));
                    }
                    _ => {
                        a.fire(UeTrigger::Detach);
                        self.schedule_rescan(now, ue);
                    }
                }
            }
            Mgmt::IkeInit => {
                if a.ctx.state == UeState::Registered {
                    let ap = a.ctx.serving_ap.expect("registered UE has an AP");
                    self.send(now, ue, ap, Packet::mgmt(ue, wae, now, Mgmt::IkeReply));
                }
            }
            Mgmt::IkeDone {
                tunnel_id,
                anchor,
                qos,
            } => {
                if a.ctx.state != UeState::Registered {
                    return;
                }
                a.fire(UeTrigger::SessionOk {
                    tunnel_id,
                    anchor_wae: anchor,
                    qos,
                });
                a.anchors.insert((anchor, tunnel_id));
                self.ever_active.insert(ue);
                if !a.traffic_started {
                    a.traffic_started = true;
                    self.start_traffic(now, ue);
                }
            }
            _ => {}
        }
    }

    fn start_traffic(&mut self, now: u64, ue: NodeId) {
        let spec = self.sc.ues.iter().find(|u| u.id == ue.index).expect("known UE");
        let tc = self.traffic_class[&ue].clone();
        for (k, t) in spec.traffic.iter().enumerate() {
            let rng = stream(self.seed, Stream::Traffic(ue.index.wrapping_mul(8).wrapping_add(k as u32)));
            let Ok(mut gen) = TrafficGen::new(t.clone(), now, rng) else {
                continue;
            };
            let first = gen.next_arrival();
            let i = self.gens.len();
            self.gens.push(GenSlot {
                ue,
                flow: FlowKey {
                    ue,
                    traffic_class: tc.clone(),
                    direction: t.direction,
                },
                pkt_bytes: t.pkt_bytes,
                gen,
                next_seq: 0,
            });
            if let Some(at) = first {
                self.q.schedule(at, Ev::Gen(i));
            }
        }
    }

    fn generate(&mut self, now: u64, i: usize) {
        let g = &mut self.gens[i];
        let (ue, flow, bytes, seq) = (g.ue, g.flow.clone(), g.pkt_bytes, g.next_seq);
        g.next_seq += 1;
        if let Some(next) = g.gen.next_arrival() {
            self.q.schedule(next, Ev::Gen(i));
        }
        self.flows.entry(flow.clone()).or_default().sent += 1;
        match flow.direction {
            Direction::Up => {
                let mut pkt = Packet::data(ue, self.dn_node, flow, bytes, seq, now);
                pkt.set_ipsec(true);
                let a = self.ues.get_mut(&ue).expect("known UE");
                match a.ctx.state {
                    UeState::SessionActive => {
                        let ap = a.ctx.serving_ap.expect("active UE has an AP");
                        self.send(now, ue, ap, pkt);
                    }
                    UeState::Handover => a.hold_uplink(pkt),
                    _ => self.bump("ue_uplink_no_session"),
                }
            }
            Direction::Down => {
                let pkt = Packet::data(self.dn_node, ue, flow, bytes, seq, now);
                let next = match self.mode {
                    Mode::Proposed => self.wae_node,
                    Mode::SplitMac => self.ctrl_node,
                };
                match self.upf.encapsulate_downlink(ue, pkt, self.upf_node, self.wae_node) {
                    Some(p) => self.send(now, self.upf_node, next, p),
                    None => self.bump("upf_no_session"),
                }
            }
        }
    }

    // ---- end of run ----

    fn check(&self) -> Result<(), String> {
        check_auth_gate(&self.amf, &self.upf)?;
        self.wae.check_invariants()?;
        self.ctrl.view().check_invariants()?;
        for slot in &self.links {
            slot.link.check_conservation(&slot.in_flight)?;
        }
        for a in self.ues.values() {
            a.ctx.check_invariants()?;
        }
        for d in self.decoders.values() {
            if !d.accounted() {
                return Err("CMI decoder lost track of consumed bytes".into());
            }
        }
        Ok(())
    }

    fn finish(mut self) -> Result<RunOutput, RunError> {
        self.check().map_err(RunError::Assertion)?;
        let sc = self.sc;
        let window_us = sc.duration_us - sc.measure_from_us;
        let mbps = |bytes: u64| bytes as f64 * 8.0 / window_us as f64;

        let flows = self
            .flows
            .iter()
            .map(|(k, rx)| FlowMetrics {
                ue: k.ue.index,
                traffic_class: k.traffic_class.clone(),
                direction: k.direction,
                sent_packets: rx.sent,
                received_packets: rx.received,
                received_bytes: rx.bytes,
                throughput_mbps: mbps(rx.window_bytes),
                mean_delay_us: if rx.received == 0 {
                    0.0
                } else {
                    rx.delay_sum as f64 / rx.received as f64
                },
                seq_gaps: rx.gaps,
                reorders: rx.reorders,
                lost_packets: rx.sent.saturating_sub(rx.received),
            })
            .collect();

        let first_bin = (sc.measure_from_us / SLICE_BIN_US) as usize;
        let slices = self
            .slice_bins
            .iter()
            .map(|(id, bins)| {
                let bytes: u64 = bins.iter().skip(first_bin).sum();
                SliceMetrics {
                    slice_id: id.clone(),
                    bytes,
                    throughput_mbps: mbps(bytes),
                    series: bins.clone(),
                }
            })
            .collect();

        let ues: Vec<UeMetrics> = self
            .ues
            .values()
            .map(|a| UeMetrics {
                ue: a.id().index,
                state: a.ctx.state,
                serving_ap: a.ctx.serving_ap.map(|n| n.index),
                anchors: a
                    .anchors
                    .iter()
                    .map(|&(w, t)| Anchor {
                        wae: w.index,
                        tunnel_id: t,
                    })
                    .collect(),
                handovers: a.handovers,
                associations: a.associations,
                auth_rejected: a.rejected,
                ever_session_active: self.ever_active.contains(&a.id()),
                flow_adds: self.flow_adds.get(&a.id().index).copied().unwrap_or(0),
                n3_bytes: self.n3_bytes.get(&a.id().index).copied().unwrap_or(0),
                illegal_transitions: a.illegal.len() as u64,
            })
            .collect();

        let links = self
            .links
            .iter()
            .map(|slot| {
                let mut classes = Vec::new();
                for dir in 0..2 {
                    let (from, to) = if dir == 0 {
                        (&slot.ends[0], &slot.ends[1])
                    } else {
                        (&slot.ends[1], &slot.ends[0])
                    };
                    for (class, c) in slot.link.counters(dir) {
                        classes.push(LinkClassMetrics {
                            from: from.clone(),
                            to: to.clone(),
                            class: *class,
                            counters: *c,
                        });
                    }
                }
                LinkMetrics {
                    name: slot.link.name.clone(),
                    capacity_mbps: slot.link.params.capacity_mbps,
                    delay_us: slot.link.params.delay_us,
                    classes,
                }
            })
            .collect();

        let mut counters: BTreeMap<String, u64> = self.counters.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        let wc = &self.wae.counters;
        for (k, v) in [
            ("wae_unmatched", wc.unmatched),
            ("wae_no_association", wc.no_association),
            ("wae_unknown_ue", wc.unknown_ue),
            ("wae_buffered", wc.buffered),
            ("wae_buffer_overflow", wc.buffer_overflow),
            ("wae_flushed", wc.flushed),
            ("wae_n3_queue_drops", wc.n3_queue_drops),
            ("wae_slice_delete_drops", wc.slice_delete_drops),
            ("wae_error_replies", wc.error_replies),
            ("wae_duplicate_requests", wc.duplicate_requests),
            ("wae_handovers_completed", wc.handovers_completed),
            ("wae_uplink_encapsulated", wc.uplink_encapsulated),
        ] {
            counters.insert(k.into(), v);
        }
        let cs = self.ctrl.stats();
        for (k, v) in [
            ("ctrl_retransmissions", cs.retransmissions),
            ("ctrl_failed_requests", cs.failed_requests),
            ("ctrl_error_replies", cs.error_replies),
            ("ctrl_duplicate_replies", cs.duplicate_replies),
            ("ctrl_protocol_errors", cs.protocol_errors),
            ("ctrl_unknown_node", cs.unknown_node),
            ("ctrl_flow_install_failures", cs.flow_install_failures),
            ("ctrl_handovers_initiated", cs.handovers_initiated),
            ("ctrl_audits", cs.audits),
            ("ctrl_audit_mismatches", cs.audit_mismatches),
            ("amf_accepts", self.amf.counters.accepts),
            ("amf_rejects", self.amf.counters.rejects),
            ("upf_unknown_tunnel_drops", self.upf.unknown_tunnel_drops),
            ("ue_hold_drops", self.ues.values().map(|a| a.hold_drops).sum()),
        ] {
            counters.insert(k.into(), v);
        }
        let ap_drops: u64 = self.aps.iter().map(|a| a.counters.dropped_unassociated).sum();
        counters.insert("ap_dropped_unassociated".into(), ap_drops);

        let handover_count = ues.iter().map(|u| u.handovers).sum();
        let association_churn = ues.iter().map(|u| u.associations.saturating_sub(1)).sum();
        let report = MetricsReport {
            schema: REPORT_SCHEMA,
            scenario: sc.name.clone(),
            mode: self.mode,
            seed: self.seed,
            duration_us: sc.duration_us,
            measure_from_us: sc.measure_from_us,
            control_rtt_us: RttStats::from_samples(&self.rtt),
            flows,
            slices,
            handover_count,
            association_churn,
            ues,
            links,
            channel_conflicts: std::mem::take(&mut self.conflicts),
            counters,
            events: self.q.executed(),
            digest: digest_hex(self.trace.digest()),
        };
        let trace = self.trace.records().map(|r| r.to_vec());
        Ok(RunOutput { report, trace })
    }
}

#[cfg(test)]
mod tests;
