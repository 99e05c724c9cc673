//! Thin AP: radio termination, association bookkeeping and the command
//! endpoint for the WAE. All forwarding decisions live in the WAE.

use crate::model::{ApState, NodeId};
use crate::packet::{ApCommand, ApEvent, Mgmt, Packet, Payload, Reading};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeOutcome {
    Response { ap: NodeId, channel: u8 },
    Suppressed,
}

/// Answer to a probe from `ue` under the AP's management policy.
pub fn ap_handle_probe(ue: NodeId, ap: &ApState) -> ProbeOutcome {
    let policy = &ap.mgmt_policy;
    let overloaded = policy.suppress_probe_above_load.is_some_and(|t| ap.load() >= t);
    if overloaded || policy.deny_list.contains(&ue) {
        ProbeOutcome::Suppressed
    } else {
        ProbeOutcome::Response {
            ap: ap.ap,
            channel: ap.channel(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ApOut {
    /// Over the air to `pkt.dst`.
    Radio(Packet),
    /// Up the backhaul to the WAE.
    Backhaul(Packet),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ApCounters {
    pub probes_answered: u64,
    pub probes_suppressed: u64,
    pub assoc_accepted: u64,
    pub assoc_rejected: u64,
    pub dropped_unassociated: u64,
    pub commands: u64,
}

#[derive(Debug, Clone)]
pub struct ApNode {
    pub state: ApState,
    wae: NodeId,
    pub counters: ApCounters,
}

impl ApNode {
    pub fn new(state: ApState, wae: NodeId) -> Self {
        Self {
            state,
            wae,
            counters: ApCounters::default(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.state.ap
    }

    fn event(&self, now: u64, ev: ApEvent) -> ApOut {
        ApOut::Backhaul(Packet::mgmt(self.state.ap, self.wae, now, Mgmt::Event(ev)))
    }

    fn frame(&self, now: u64, ue: NodeId, m: Mgmt) -> ApOut {
        ApOut::Radio(Packet::mgmt(self.state.ap, ue, now, m))
    }

    /// A frame heard from a UE at `rssi_dbm`.
    pub fn on_radio(&mut self, now: u64, pkt: Packet, rssi_dbm: f64) -> Vec<ApOut> {
        let ue = pkt.src;
        let me = self.state.ap;
        match &pkt.payload {
            Payload::Mgmt(Mgmt::ProbeRequest) => {
                let mut out = vec![self.event(now, ApEvent::ProbeSeen {
                    reading: Reading { ue, rssi_dbm },
                })];
                match ap_handle_probe(ue, &self.state) {
                    ProbeOutcome::Response { ap, channel } => {
                        self.counters.probes_answered += 1;
                        out.push(self.frame(now, ue, Mgmt::ProbeResponse { ap, channel }));
                    }
                    ProbeOutcome::Suppressed => self.counters.probes_suppressed += 1,
                }
                out
            }
            Payload::Mgmt(Mgmt::AssocRequest { ap }) if *ap == me => {
                let denied = self.state.mgmt_policy.deny_list.contains(&ue);
                if !denied && self.state.associate(ue).is_ok() {
                    self.counters.assoc_accepted += 1;
                    vec![
                        self.frame(now, ue, Mgmt::AssocResponse { ap: me, accepted: true }),
                        self.event(now, ApEvent::Associated { ue }),
                    ]
                } else {
                    self.counters.assoc_rejected += 1;
                    vec![self.frame(now, ue, Mgmt::AssocResponse { ap: me, accepted: false })]
                }
            }
            Payload::Mgmt(Mgmt::Disassoc { ap, .. }) if *ap == me => {
                if self.state.disassociate(ue) {
                    vec![self.event(now, ApEvent::Disassociated { ue })]
                } else {
                    Vec::new()
                }
            }
            Payload::Mgmt(Mgmt::AssocRequest { .. }) | Payload::Mgmt(Mgmt::Disassoc { .. }) => Vec::new(),
            _ if self.state.associated.contains(&ue) => {
                let mut pkt = pkt;
                pkt.dst = self.wae;
                vec![ApOut::Backhaul(pkt)]
            }
            _ => {
                self.counters.dropped_unassociated += 1;
                Vec::new()
            }
        }
    }

    /// A packet from the WAE.
    pub fn on_backhaul(&mut self, now: u64, pkt: Packet) -> Vec<ApOut> {
        match pkt.payload {
            Payload::Mgmt(Mgmt::Command(cmd)) => {
                self.counters.commands += 1;
                self.apply(now, cmd)
            }
            _ if self.state.associated.contains(&pkt.dst) => vec![ApOut::Radio(pkt)],
            _ => {
                self.counters.dropped_unassociated += 1;
                Vec::new()
            }
        }
    }

    fn apply(&mut self, now: u64, cmd: ApCommand) -> Vec<ApOut> {
        match cmd {
            ApCommand::Configure {
                token,
                channel,
                tx_power_dbm,
                policy,
            } => {
                if let Some(ch) = channel {
                    // The WAE validates channels before forwarding.
                    let _ = self.state.set_channel(ch);
                }
                if let Some(p) = tx_power_dbm {
                    self.state.tx_power_dbm = p;
                }
                if let Some(p) = policy {
                    self.state.mgmt_policy = p;
                }
                vec![self.event(now, ApEvent::Applied { token })]
            }
            ApCommand::Disassociate { ue, target } => {
                if !self.state.disassociate(ue) {
                    return Vec::new();
                }
                vec![
                    self.frame(now, ue, Mgmt::Disassoc { ap: self.state.ap, target }),
                    self.event(now, ApEvent::Disassociated { ue }),
                ]
            }
        }
    }

    /// Periodic measurement report.
    pub fn report(&self, now: u64, readings: Vec<Reading>, neighbors: Vec<NodeId>) -> ApOut {
        self.event(now, ApEvent::Report { readings, neighbors })
    }
}
