//! Built-in scenarios used by the acceptance suite and shipped as JSON under
//! `scenarios/`.

use rand::Rng;

use super::{ApSpec, Directive, LinkSet, Scenario, SubscriberSpec, Topology, UeSpec, Waypoint, SCHEMA_VERSION};
use crate::apps::{AppsConfig, HandoverPolicy};
use crate::flow::Direction;
use crate::model::QosProfile;
use crate::rng::{stream, Stream};
use crate::sim::link::LinkParams;
use crate::sim::traffic::TrafficSpec;
use crate::slice::{SliceFilter, SliceTemplate};

const MS: u64 = 1_000;
const S: u64 = 1_000_000;

/// Deterministic per-UE key.
pub fn test_key(ue: u32) -> String {
    format!("{:032x}", 0x5eed_0000_u64 + ue as u64)
}

fn subscriber(ue: u32, rate_mbps: f64) -> SubscriberSpec {
    SubscriberSpec {
        ue,
        key: test_key(ue),
        qos: QosProfile::new(rate_mbps, 4, 20_000).expect("valid qos"),
        traffic_class: "be".into(),
    }
}

fn ue_at(id: u32, x: f64, y: f64, start_us: u64, traffic: Vec<TrafficSpec>) -> UeSpec {
    UeSpec {
        id,
        key: None,
        start_us,
        waypoints: vec![Waypoint::at(0, x, y)],
        traffic,
    }
}

fn base(name: &str, duration_us: u64, aps: Vec<ApSpec>) -> Scenario {
    Scenario {
        schema: SCHEMA_VERSION,
        name: name.into(),
        seed: 1,
        duration_us,
        measure_from_us: 0,
        audit_period_us: super::DEFAULT_AUDIT_PERIOD_US,
        topology: Topology {
            wae: 0,
            aps,
            links: LinkSet::default(),
        },
        subscribers: Vec::new(),
        ues: Vec::new(),
        apps: AppsConfig::default(),
        slices: Vec::new(),
        directives: Vec::new(),
    }
}

/// Per-UE uplink rate at load 1.0: ten UEs together offer the 100 Mbps the
/// controller link carries.
pub const LATENCY_UE_RATE_MBPS: f64 = 10.0;

/// Four APs, ten UEs with CBR uplink. Scale with [`Scenario::scaled`].
pub fn latency() -> Scenario {
    let spots = [(0.0, 0.0), (60.0, 0.0), (0.0, 60.0), (60.0, 60.0)];
    let aps = spots
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| ApSpec {
            channel: [1, 6, 11, 1][i],
            ..ApSpec::new(i as u32, x, y)
        })
        .collect();
    let mut sc = base("latency", 3 * S, aps);
    sc.measure_from_us = S;
    for i in 0..10u32 {
        let (x, y) = spots[i as usize % 4];
        sc.subscribers.push(subscriber(i, 50.0));
        let mut t = TrafficSpec::cbr(Direction::Up, LATENCY_UE_RATE_MBPS, 1500);
        t.start_us = 0;
        sc.ues.push(ue_at(i, x + 2.0 + i as f64 * 0.1, y + 2.0, 0, vec![t]));
    }
    sc
}

/// One UE walks from AP 0 to AP 1 and back under 5 Mbps CBR downlink.
pub fn handover() -> Scenario {
    let aps = vec![
        ApSpec::new(0, 0.0, 0.0),
        ApSpec {
            channel: 6,
            ..ApSpec::new(1, 60.0, 0.0)
        },
    ];
    let mut sc = base("handover", 62 * S, aps);
    sc.measure_from_us = S;
    sc.apps.mobility = Some(HandoverPolicy::default());
    sc.subscribers.push(subscriber(0, 20.0));
    let mut t = TrafficSpec::cbr(Direction::Down, 5.0, 1250);
    t.start_us = S;
    t.stop_us = Some(60 * S);
    sc.ues.push(UeSpec {
        id: 0,
        key: None,
        start_us: 0,
        waypoints: vec![
            Waypoint::at(0, 10.0, 5.0),
            Waypoint::at(20 * S, 50.0, 5.0),
            Waypoint::at(60 * S, 10.0, 5.0),
        ],
        traffic: vec![t],
    });
    sc
}

pub const LB_UES: u32 = 20;
pub const LB_ARRIVAL_GAP_US: u64 = 300 * MS;

/// Twenty UEs arrive one at a time at the centre of four corner APs, all at
/// equal distance. With `enabled` the load balancer places them; without it
/// AP 0 transmits 2 dB hotter and attracts every UE on signal strength.
pub fn load_balance(enabled: bool) -> Scenario {
    let aps = [(0.0, 0.0), (20.0, 0.0), (0.0, 20.0), (20.0, 20.0)]
        .iter()
        .enumerate()
        .map(|(i, &(x, y))| ApSpec {
            channel: [1, 6, 11, 1][i],
            tx_power_dbm: if !enabled && i == 0 { 22.0 } else { 20.0 },
            ..ApSpec::new(i as u32, x, y)
        })
        .collect();
    let name = if enabled { "load_balance" } else { "load_balance_off" };
    let mut sc = base(name, LB_UES as u64 * LB_ARRIVAL_GAP_US + S, aps);
    sc.apps.load_balancing = enabled;
    for i in 0..LB_UES {
        sc.subscribers.push(subscriber(i, 5.0));
        sc.ues.push(ue_at(i, 10.0, 10.0, 100 * MS + i as u64 * LB_ARRIVAL_GAP_US, Vec::new()));
    }
    sc
}

pub const CHANNEL_FIELD_M: f64 = 150.0;

/// Two to eight APs scattered over a square, all starting on channel 1, with
/// the channel app on. The geometry is drawn from `seed`.
pub fn channels(seed: u64) -> Scenario {
    let mut rng = stream(seed, Stream::Topology);
    let n = rng.gen_range(2..=8u32);
    let aps = (0..n)
        .map(|i| {
            ApSpec::new(
                i,
                (rng.gen_range(0.0..CHANNEL_FIELD_M) * 10.0_f64).round() / 10.0,
                (rng.gen_range(0.0..CHANNEL_FIELD_M) * 10.0_f64).round() / 10.0,
            )
        })
        .collect();
    let mut sc = base(&format!("channels_{seed}"), S, aps);
    sc.seed = seed;
    sc.apps.interference = true;
    sc
}

/// Two weighted slices saturating a 30 Mbps N3 link; the light one is
/// force-deleted at 3 s.
pub fn slices() -> Scenario {
    let aps = vec![
        ApSpec::new(0, 0.0, 0.0),
        ApSpec {
            channel: 6,
            ..ApSpec::new(1, 100.0, 0.0)
        },
    ];
    let mut sc = base("slices", 4 * S, aps);
    sc.measure_from_us = S;
    sc.topology.links.n3 = LinkParams::new(30.0, 1000);
    for (i, x) in [(0u32, 2.0), (1, 102.0)] {
        sc.subscribers.push(subscriber(i, 40.0));
        sc.ues.push(ue_at(i, x, 2.0, 0, vec![TrafficSpec::cbr(Direction::Up, 30.0, 1500)]));
    }
    sc.slices = vec![
        SliceTemplate::new("gold", SliceFilter::for_ues([0]), 2),
        SliceTemplate::new("bronze", SliceFilter::for_ues([1]), 1),
    ];
    sc.directives.push(Directive::SliceDelete {
        at_us: 3 * S,
        slice_id: "bronze".into(),
        force: true,
    });
    sc
}

/// A correctly provisioned UE next to one whose own key is corrupted.
pub fn auth() -> Scenario {
    let mut sc = base("auth", 2 * S, vec![ApSpec::new(0, 0.0, 0.0)]);
    for i in 0..2u32 {
        sc.subscribers.push(subscriber(i, 10.0));
        sc.ues.push(ue_at(
            i,
            3.0 + i as f64,
            3.0,
            0,
            vec![TrafficSpec::cbr(Direction::Up, 1.0, 1000)],
        ));
    }
    let mut bad = super::parse_key(&test_key(1)).expect("valid key");
    bad[0] ^= 0xff;
    sc.ues[1].key = Some(hex::encode(bad));
    sc
}

/// Every named preset with its file name under `scenarios/`.
pub fn all() -> Vec<(&'static str, Scenario)> {
    vec![
        ("latency.json", latency()),
        ("handover.json", handover()),
        ("load_balance.json", load_balance(true)),
        ("load_balance_off.json", load_balance(false)),
        ("channels.json", channels(1)),
        ("slices.json", slices()),
        ("auth.json", auth()),
    ]
}
