//! Run metrics: the JSON report document and its flat CSV projection.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataplane::Mode;
use crate::flow::Direction;
use crate::model::UeState;
use crate::packet::PacketClass;
use crate::sim::link::ClassCounters;

pub const REPORT_SCHEMA: u32 = 1;
/// Width of the per-slice throughput bins.
pub const SLICE_BIN_US: u64 = 100_000;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RttStats {
    pub samples: u64,
    pub mean: f64,
    pub p50: u64,
    pub p95: u64,
    pub p99: u64,
    pub max: u64,
}

impl RttStats {
    /// Nearest-rank percentiles.
    pub fn from_samples(samples: &[u64]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut s = samples.to_vec();
        s.sort_unstable();
        let rank = |p: f64| s[((p / 100.0 * s.len() as f64).ceil() as usize).clamp(1, s.len()) - 1];
        Self {
            samples: s.len() as u64,
            mean: s.iter().sum::<u64>() as f64 / s.len() as f64,
            p50: rank(50.0),
            p95: rank(95.0),
            p99: rank(99.0),
            max: *s.last().expect("non-empty"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowMetrics {
    pub ue: u32,
    pub traffic_class: String,
    pub direction: Direction,
    pub sent_packets: u64,
    pub received_packets: u64,
    pub received_bytes: u64,
    /// Received user payload over the measurement window.
    pub throughput_mbps: f64,
    pub mean_delay_us: f64,
    /// Sequence numbers skipped at the receiver.
    pub seq_gaps: u64,
    /// Arrivals at or below the highest sequence number already seen.
    pub reorders: u64,
    pub lost_packets: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceMetrics {
    pub slice_id: String,
    /// N3 wire bytes reaching the UPF inside the measurement window.
    pub bytes: u64,
    pub throughput_mbps: f64,
    /// N3 wire bytes per bin of [`SLICE_BIN_US`], from time zero.
    pub series: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub wae: u32,
    pub tunnel_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UeMetrics {
    pub ue: u32,
    pub state: UeState,
    pub serving_ap: Option<u32>,
    pub anchors: Vec<Anchor>,
    pub handovers: u64,
    pub associations: u64,
    pub auth_rejected: bool,
    pub ever_session_active: bool,
    /// FLOW_ADD requests the controller sent for this UE.
    pub flow_adds: u64,
    pub n3_bytes: u64,
    pub illegal_transitions: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkClassMetrics {
    pub from: String,
    pub to: String,
    pub class: PacketClass,
    #[serde(flatten)]
    pub counters: ClassCounters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkMetrics {
    pub name: String,
    pub capacity_mbps: f64,
    pub delay_us: u64,
    pub classes: Vec<LinkClassMetrics>,
}

impl LinkMetrics {
    pub fn class_bytes(&self, class: PacketClass) -> u64 {
        self.classes.iter().filter(|c| c.class == class).map(|c| c.counters.offered_bytes).sum()
    }

    pub fn dropped_packets(&self) -> u64 {
        self.classes.iter().map(|c| c.counters.dropped_packets).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictSample {
    pub time_us: u64,
    pub conflicts: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: u32,
    pub scenario: String,
    pub mode: Mode,
    pub seed: u64,
    pub duration_us: u64,
    pub measure_from_us: u64,
    /// Controller request round trips completed inside the window.
    pub control_rtt_us: RttStats,
    pub flows: Vec<FlowMetrics>,
    pub slices: Vec<SliceMetrics>,
    pub handover_count: u64,
    /// Successful associations beyond each UE's first.
    pub association_churn: u64,
    pub ues: Vec<UeMetrics>,
    pub links: Vec<LinkMetrics>,
    pub channel_conflicts: Vec<ConflictSample>,
    pub counters: BTreeMap<String, u64>,
    pub events: u64,
    /// 64-bit hash of the event trace, hex.
    pub digest: String,
}

impl MetricsReport {
    pub fn link(&self, name: &str) -> Option<&LinkMetrics> {
        self.links.iter().find(|l| l.name == name)
    }

    pub fn flow(&self, ue: u32, direction: Direction) -> Option<&FlowMetrics> {
        self.flows.iter().find(|f| f.ue == ue && f.direction == direction)
    }

    pub fn slice(&self, id: &str) -> Option<&SliceMetrics> {
        self.slices.iter().find(|s| s.slice_id == id)
    }

    pub fn ue(&self, ue: u32) -> Option<&UeMetrics> {
        self.ues.iter().find(|u| u.ue == ue)
    }

    pub fn data_throughput_mbps(&self) -> f64 {
        self.flows.iter().fold(0.0, |acc, f| acc + f.throughput_mbps)
    }

    pub fn total_drops(&self) -> u64 {
        self.links.iter().map(|l| l.dropped_packets()).sum::<u64>()
            + self.counters.get("wae_n3_queue_drops").copied().unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Long format: `section,key,metric,value`, one scalar per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("section,key,metric,value\n");
        let mut row = |section: &str, key: &str, metric: &str, value: &dyn std::fmt::Display| {
            let _ = writeln!(out, "{section},{key},{metric},{value}");
        };
        row("run", "", "scenario", &self.scenario);
        row("run", "", "mode", &self.mode.as_str());
        row("run", "", "seed", &self.seed);
        row("run", "", "duration_us", &self.duration_us);
        row("run", "", "events", &self.events);
        row("run", "", "digest", &self.digest);
        row("run", "", "handover_count", &self.handover_count);
        row("run", "", "association_churn", &self.association_churn);
        let r = &self.control_rtt_us;
        row("control_rtt_us", "", "samples", &r.samples);
        row("control_rtt_us", "", "mean", &r.mean);
        row("control_rtt_us", "", "p50", &r.p50);
        row("control_rtt_us", "", "p95", &r.p95);
        row("control_rtt_us", "", "p99", &r.p99);
        row("control_rtt_us", "", "max", &r.max);
        for f in &self.flows {
            let key = flow_key(f.ue, &f.traffic_class, f.direction);
            row("flow", &key, "sent_packets", &f.sent_packets);
            row("flow", &key, "received_packets", &f.received_packets);
            row("flow", &key, "received_bytes", &f.received_bytes);
            row("flow", &key, "throughput_mbps", &f.throughput_mbps);
            row("flow", &key, "mean_delay_us", &f.mean_delay_us);
            row("flow", &key, "seq_gaps", &f.seq_gaps);
            row("flow", &key, "reorders", &f.reorders);
            row("flow", &key, "lost_packets", &f.lost_packets);
        }
        for s in &self.slices {
            row("slice", &s.slice_id, "bytes", &s.bytes);
            row("slice", &s.slice_id, "throughput_mbps", &s.throughput_mbps);
        }
        for u in &self.ues {
            let key = format!("ue{}", u.ue);
            row("ue", &key, "handovers", &u.handovers);
            row("ue", &key, "associations", &u.associations);
            row("ue", &key, "flow_adds", &u.flow_adds);
            row("ue", &key, "n3_bytes", &u.n3_bytes);
        }
        for l in &self.links {
            for c in &l.classes {
                let key = format!("{}:{}>{}:{}", l.name, c.from, c.to, c.class.as_str());
                let k = &c.counters;
                row("link", &key, "offered_packets", &k.offered_packets);
                row("link", &key, "offered_bytes", &k.offered_bytes);
                row("link", &key, "delivered_packets", &k.delivered_packets);
                row("link", &key, "delivered_bytes", &k.delivered_bytes);
                row("link", &key, "dropped_packets", &k.dropped_packets);
                row("link", &key, "dropped_bytes", &k.dropped_bytes);
            }
        }
        for c in &self.channel_conflicts {
            row("channel_conflicts", &c.time_us.to_string(), "conflicts", &c.conflicts);
        }
        for (k, v) in &self.counters {
            row("counter", k, "value", v);
        }
        out
    }
}

pub fn flow_key(ue: u32, traffic_class: &str, direction: Direction) -> String {
    let d = match direction {
        Direction::Up => "up",
        Direction::Down => "down",
    };
    format!("ue{ue}/{traffic_class}/{d}")
}
