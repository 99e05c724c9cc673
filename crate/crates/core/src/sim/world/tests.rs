use super::*;
use crate::scenario::presets;

fn quiet(mut sc: Scenario) -> Scenario {
    sc.audit_period_us = 0;
    sc
}

#[test]
fn empty_scenario_runs_to_horizon() {
    let mut sc = presets::auth();
    sc.ues.clear();
    sc.subscribers.clear();
    for mode in Mode::ALL {
        let r = run(&sc, mode, 3).unwrap();
        assert!(r.flows.is_empty());
        let data: u64 = r.links.iter().map(|l| l.class_bytes(PacketClass::Data)).sum();
        assert_eq!(data, 0);
        // Periodic ticks keep the clock moving to the end.
        assert!(r.events > sc.duration_us / STATS_PERIOD_US);
    }
}

#[test]
fn reruns_are_identical() {
    let sc = presets::auth();
    let a = run(&sc, Mode::Proposed, 11).unwrap();
    let b = run(&sc, Mode::Proposed, 11).unwrap();
    assert_eq!(a.digest, b.digest);
    assert_eq!(a, b);
}

#[test]
fn good_ue_attaches_and_sends() {
    let r = run(&presets::auth(), Mode::Proposed, 1).unwrap();
    let good = r.ue(0).unwrap();
    assert_eq!(good.state, UeState::SessionActive, "{r:#?}");
    assert_eq!(good.anchors.len(), 1);
    assert_eq!(good.illegal_transitions, 0);
    let f = r.flow(0, Direction::Up).unwrap();
    assert!(f.received_packets > 0 && f.lost_packets <= 2, "{f:?}");
    assert_eq!(f.seq_gaps, 0);
}

#[test]
fn trace_records_match_digest() {
    let sc = quiet(presets::auth());
    let out = run_with(&sc, Mode::SplitMac, 5, RunOptions { keep_trace: true }).unwrap();
    let recs = out.trace.unwrap();
    assert_eq!(recs.len() as u64, out.report.events);
    assert_eq!(
        digest_hex(crate::sim::trace::digest_records(&recs)),
        out.report.digest
    );
    assert!(recs.windows(2).all(|w| w[0].time_us <= w[1].time_us));
}
