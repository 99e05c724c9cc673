use super::*;
use crate::sim::traffic::TrafficKind;

const MINIMAL: &str = r#"{
  "schema": 1,
  "name": "minimal",
  "duration_us": 1000000,
  "topology": { "aps": [ { "id": 0, "position": { "x": 0.0, "y": 0.0 } } ] },
  "subscribers": [
    { "ue": 0, "key": "000102030405060708090a0b0c0d0e0f",
      "qos": { "rate_mbps": 5.0, "priority": 3, "latency_budget_us": 20000 } }
  ],
  "ues": [ { "id": 0, "waypoints": [ { "t_us": 0, "at_ap": 0 } ] } ]
}"#;

#[test]
fn minimal_scenario_gets_defaults() {
    let sc = parse_scenario_str(MINIMAL).unwrap();
    let ap = &sc.topology.aps[0];
    assert_eq!((ap.channel, ap.tx_power_dbm, ap.max_associated), (1, 20.0, 32));
    assert_eq!(sc.topology.wae, 0);
    assert_eq!(sc.topology.links, LinkSet::default());
    assert_eq!(sc.topology.links.cmi, LinkParams::new(100.0, 500));
    assert_eq!(sc.subscribers[0].traffic_class, "be");
    assert_eq!(sc.audit_period_us, DEFAULT_AUDIT_PERIOD_US);
    assert_eq!(sc.waypoints(&sc.ues[0]), vec![(0, Point { x: 0.0, y: 0.0 })]);
    assert_eq!(sc.ue_key(&sc.ues[0])[15], 0x0f);
}

#[test]
fn dangling_ap_reference_is_named() {
    let mut sc = presets::handover();
    sc.ues[0].waypoints[1] = Waypoint {
        t_us: 20_000_000,
        position: None,
        at_ap: Some(5),
    };
    let errs = sc.validate().unwrap_err();
    assert!(errs.iter().any(|e| e.contains("unknown AP 5")), "{errs:?}");
}

#[test]
fn duplicate_slice_ids_rejected() {
    let mut sc = presets::slices();
    sc.slices[1].slice_id = "gold".into();
    sc.slices[1].filter = crate::slice::SliceFilter::for_ues([1]);
    let errs = sc.validate().unwrap_err();
    assert!(errs.iter().any(|e| e.contains("duplicate slice id")), "{errs:?}");
}

#[test]
fn all_errors_reported_together() {
    let mut sc = presets::auth();
    sc.duration_us = 0;
    sc.topology.aps[0].channel = 3;
    sc.subscribers[0].key = "zz".into();
    sc.ues[1].traffic[0].pkt_bytes = 9000;
    let errs = sc.validate().unwrap_err();
    assert!(errs.len() >= 4, "{errs:?}");
}

#[test]
fn parse_error_carries_line() {
    let text = "{\n  \"schema\": 1,\n  \"name\": oops\n}";
    match parse_scenario_str(text) {
        Err(ScenarioError::Parse { line, .. }) => assert_eq!(line, 3),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        parse_scenario_str(r#"{"schema":1,"name":"x","duration_us":1,"topology":{"aps":[]},"bogus":1}"#),
        Err(ScenarioError::Parse { .. })
    ));
}

#[test]
fn directive_order_and_references_checked() {
    let mut sc = presets::slices();
    sc.directives.push(Directive::SliceRead {
        at_us: 3_500_000,
        slice_id: "bronze".into(),
    });
    let errs = sc.validate().unwrap_err();
    assert!(errs.iter().any(|e| e.contains("unknown slice \"bronze\"")), "{errs:?}");
}

#[test]
fn directive_json_shape() {
    let d: Directive =
        serde_json::from_str(r#"{"action":"slice_delete","at_us":5,"slice_id":"gold","force":true}"#).unwrap();
    assert_eq!(
        d,
        Directive::SliceDelete {
            at_us: 5,
            slice_id: "gold".into(),
            force: true
        }
    );
    assert!(serde_json::from_str::<Directive>(r#"{"action":"slice_read","at_us":5,"slice_id":"g","x":1}"#).is_err());
}

#[test]
fn scaling_multiplies_rates_and_zero_removes_traffic() {
    let sc = presets::latency();
    let half = sc.scaled(0.5);
    assert_eq!(half.ues[3].traffic[0].rate_mbps, sc.ues[3].traffic[0].rate_mbps * 0.5);
    assert!(sc.scaled(0.0).ues.iter().all(|u| u.traffic.is_empty()));
    assert!(sc.scaled(0.0).validate().is_ok());
}

#[test]
fn presets_are_valid_and_round_trip() {
    for (file, sc) in presets::all() {
        sc.validate().unwrap_or_else(|e| panic!("{file}: {e:?}"));
        let back = parse_scenario_str(&sc.to_json()).unwrap();
        assert_eq!(back, sc, "{file}");
    }
}

#[test]
fn channel_presets_span_sizes() {
    let sizes: BTreeSet<usize> = (0..50).map(|s| presets::channels(s).topology.aps.len()).collect();
    assert!(sizes.iter().all(|n| (2..=8).contains(n)));
    assert!(sizes.len() >= 5, "{sizes:?}");
    assert_eq!(presets::channels(9), presets::channels(9));
}

/// The shipped scenario files are the presets, byte for byte. Set
/// `SDWLAN_BLESS=1` to rewrite them.
#[test]
fn shipped_files_match_presets() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let bless = std::env::var_os("SDWLAN_BLESS").is_some();
    for (file, sc) in presets::all() {
        let path = dir.join(file);
        if bless {
            std::fs::create_dir_all(&dir).unwrap();
            std::fs::write(&path, sc.to_json()).unwrap();
        }
        let text = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(text, sc.to_json(), "{file} is stale; rerun with SDWLAN_BLESS=1");
        assert_eq!(parse_scenario(&path).unwrap(), sc);
    }
}

mod props {
    use super::*;
    use proptest::prelude::*;

    fn arb_traffic() -> impl Strategy<Value = TrafficSpec> {
        (prop::bool::ANY, 0.1f64..50.0, 64u32..=1500, 0u64..1_000_000, prop::bool::ANY).prop_map(
            |(onoff, rate, bytes, start, down)| TrafficSpec {
                kind: if onoff { TrafficKind::Onoff } else { TrafficKind::Cbr },
                direction: if down { crate::flow::Direction::Down } else { crate::flow::Direction::Up },
                rate_mbps: rate,
                pkt_bytes: bytes,
                start_us: start,
                stop_us: None,
                on_mean_us: onoff.then_some(20_000),
                off_mean_us: onoff.then_some(30_000),
            },
        )
    }

    fn arb_scenario() -> impl Strategy<Value = Scenario> {
        (
            1usize..5,
            prop::collection::vec((0u32..4, -50.0f64..50.0, -50.0f64..50.0, 0u64..2_000_000), 0..6),
            prop::collection::vec(arb_traffic(), 0..3),
            any::<u64>(),
        )
            .prop_map(|(n_aps, ues, traffic, seed)| {
                let mut sc = presets::auth();
                sc.seed = seed;
                sc.topology.aps = (0..n_aps as u32)
                    .map(|i| ApSpec::new(i, i as f64 * 30.0, 0.0))
                    .collect();
                sc.subscribers.clear();
                sc.ues = ues
                    .iter()
                    .enumerate()
                    .map(|(i, &(ap, x, y, start))| UeSpec {
                        id: i as u32,
                        key: None,
                        start_us: start,
                        waypoints: vec![
                            Waypoint::at(0, x, y),
                            Waypoint {
                                t_us: 1_000_000,
                                position: None,
                                at_ap: Some(ap % n_aps as u32),
                            },
                        ],
                        traffic: traffic.clone(),
                    })
                    .collect();
                for u in &sc.ues {
                    sc.subscribers.push(SubscriberSpec {
                        ue: u.id,
                        key: presets::test_key(u.id),
                        qos: QosProfile::default(),
                        traffic_class: "be".into(),
                    });
                }
                sc
            })
    }

    proptest! {
        #[test]
        fn parse_emit_identity(sc in arb_scenario()) {
            prop_assert!(sc.validate().is_ok());
            let once = parse_scenario_str(&sc.to_json()).unwrap();
            let twice = parse_scenario_str(&once.to_json()).unwrap();
            prop_assert_eq!(&once, &sc);
            prop_assert_eq!(once, twice);
        }
    }
}
