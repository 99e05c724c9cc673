use super::*;
use crate::cmi::msg::{ApReport, ConfigAck, HelloAck, UeRssi};
use crate::slice::SliceFilter;
use proptest::prelude::*;

fn seeds(n: u32) -> Vec<ApSeed> {
    (0..n)
        .map(|i| ApSeed {
            ap: NodeId::ap(i),
            channel: 1,
            tx_power_dbm: 20.0,
        })
        .collect()
}

fn controller(apps: AppsConfig) -> RanController {
    let cfg = ControllerConfig {
        apps,
        ..Default::default()
    };
    let mut c = RanController::new(cfg, &seeds(4), (0..6).map(NodeId::ue), &[]);
    c.start(0);
    let hello = c.take_output().messages.remove(0);
    let ack = CmiMessage::new(
        hello.correlation_id,
        CmiBody::HelloAck(HelloAck { wae_id: 0, ap_count: 4 }),
    );
    c.on_message(10, ack);
    c
}

/// Answers every outstanding request the way a WAE would on success.
fn ack_all(c: &mut RanController, now: u64) -> Vec<CmiMessage> {
    let out = c.take_output().messages;
    for m in &out {
        let body = match m.msg_type().ack_type().unwrap() {
            MsgType::ConfigAck => CmiBody::ConfigAck(ConfigAck::default()),
            MsgType::FlowAck => CmiBody::FlowAck(FlowRef { rule: 0 }),
            MsgType::SliceAck => CmiBody::SliceAck(crate::cmi::msg::SliceAck {
                slice: String::new(),
                template: None,
            }),
            other => panic!("unexpected {other:?}"),
        };
        c.on_message(now, CmiMessage::new(m.correlation_id, body));
    }
    out
}

fn report(time_us: u64, aps: Vec<ApReport>) -> StatsReport {
    StatsReport { time_us, aps }
}

fn ap_report(ap: u32, load: u32, associated: Vec<u32>, rssi: &[(u32, f64)]) -> ApReport {
    ApReport {
        ap,
        channel: 1,
        load,
        associated,
        rssi: rssi.iter().map(|(ue, r)| UeRssi { ue: *ue, rssi_dbm: *r }).collect(),
        neighbors: vec![],
    }
}

fn notify(ue: u32, ap: u32, tunnel: u32, qos: QosProfile) -> CmiMessage {
    CmiMessage::new(
        0,
        CmiBody::SessionNotify(SessionNotify {
            ue,
            tunnel,
            ap,
            tc: "be".into(),
            qos,
        }),
    )
}

/// Controller with ue `ue` attached at `ap` and both flow rules confirmed.
fn attached(ue: u32, ap: u32) -> RanController {
    let mut c = controller(AppsConfig::default());
    ack_all(&mut c, 20);
    let r = report(100, vec![ap_report(ap, 1, vec![ue], &[])]);
    c.on_message(100, CmiMessage::new(0, CmiBody::StatsReport(r)));
    c.on_message(200, notify(ue, ap, 17, QosProfile::default()));
    ack_all(&mut c, 300);
    c
}

#[test]
fn load_field_copied_with_trigger() {
    let mut c = controller(AppsConfig::default());
    let t = c.on_stats_report(&report(5, vec![ap_report(0, 3, vec![], &[])])).unwrap();
    assert_eq!(c.view().aps[&NodeId::ap(0)].load, 3);
    assert!(t.contains(&AppTrigger::LoadUpdated(NodeId::ap(0))));
}

#[test]
fn unknown_ap_report_discarded() {
    let mut c = controller(AppsConfig::default());
    let before = c.view().clone();
    let err = c.on_stats_report(&report(5, vec![ap_report(0, 2, vec![], &[]), ap_report(99, 3, vec![], &[])]));
    assert_eq!(err, Err(UnknownNode(NodeId::ap(99))));
    assert_eq!(c.view(), &before);
    assert_eq!(c.stats().unknown_node, 1);
}

#[test]
fn rssi_history_in_report_order() {
    let mut c = controller(AppsConfig::default());
    c.on_stats_report(&report(100, vec![ap_report(0, 0, vec![], &[(1, -60.0)])])).unwrap();
    c.on_stats_report(&report(300, vec![ap_report(0, 0, vec![], &[(1, -58.0)])])).unwrap();
    let hist: Vec<f64> = c.view().ues[&NodeId::ue(1)]
        .rssi_history
        .iter()
        .map(|r| r.readings[&NodeId::ap(0)])
        .collect();
    assert_eq!(hist, vec![-60.0, -58.0]);
    c.view().check_invariants().unwrap();
}

#[test]
fn session_notify_installs_uplink_to_tunnel() {
    let mut c = controller(AppsConfig::default());
    ack_all(&mut c, 20);
    let qos = QosProfile::new(5.0, 2, 20_000).unwrap();
    c.on_message(100, notify(3, 0, 17, qos));
    let out = c.take_output().messages;
    let adds: Vec<&FlowSpec> = out
        .iter()
        .filter_map(|m| match &m.body {
            CmiBody::FlowAdd(f) => Some(f),
            _ => None,
        })
        .collect();
    assert_eq!(adds.len(), 2);
    let up = adds.iter().find(|f| f.dir == Direction::Up).unwrap();
    assert_eq!((up.ue, up.rate_mbps, up.priority, up.out), (3, 5.0, 2, FlowOutput::N3(17)));
    assert_eq!(up.slice, "default");
    let down = adds.iter().find(|f| f.dir == Direction::Down).unwrap();
    assert_eq!(down.out, FlowOutput::Ap(0));
    assert!(c.rules().values().all(|r| r.status == RuleStatus::Pending));
}

#[test]
fn install_flow_errors() {
    let mut c = controller(AppsConfig::default());
    let mut capped = SliceTemplate::new("silver", SliceFilter::for_ues([4]), 1);
    capped.rate_cap_mbps = Some(30.0);
    c.nv_slice_crud(SliceOp::Create(capped)).unwrap();
    ack_all(&mut c, 20);
    c.on_message(50, notify(4, 0, 9, QosProfile::default()));
    ack_all(&mut c, 60);
    let fat = QosProfile::new(40.0, 1, 20_000).unwrap();
    assert!(matches!(
        c.fcf_install_flow(NodeId::ue(4), "video", Direction::Up, fat, "silver"),
        Err(FlowError::SliceCapExceeded { .. })
    ));
    assert_eq!(
        c.fcf_install_flow(NodeId::ue(4), "be", Direction::Up, fat, "gold"),
        Err(FlowError::UnknownSlice("gold".into()))
    );
    assert_eq!(
        c.fcf_install_flow(NodeId::ue(5), "be", Direction::Up, fat, "default"),
        Err(FlowError::UeNotReady(NodeId::ue(5)))
    );
}

#[test]
fn rule_confirmed_only_by_matching_ack() {
    let mut c = controller(AppsConfig::default());
    ack_all(&mut c, 20);
    c.on_message(100, notify(1, 0, 5, QosProfile::default()));
    let out = c.take_output().messages;
    // A FLOW_ACK under an unrelated correlation id changes nothing.
    c.on_message(110, CmiMessage::new(9999, CmiBody::FlowAck(FlowRef { rule: 1 })));
    assert!(c.rules().values().all(|r| r.status == RuleStatus::Pending));
    c.on_message(120, CmiMessage::new(out[0].correlation_id, CmiBody::FlowAck(FlowRef { rule: 1 })));
    assert_eq!(c.rules()[&1].status, RuleStatus::Confirmed);
    assert_eq!(c.rules()[&2].status, RuleStatus::Pending);
    assert_eq!(c.stats().rtt_samples_us.last(), Some(&20));
}

#[test]
fn retransmits_then_fails() {
    let mut c = controller(AppsConfig::default());
    ack_all(&mut c, 20);
    c.on_message(1_000, notify(1, 0, 5, QosProfile::default()));
    let out = c.take_output();
    let corr = out.messages[0].correlation_id;
    let t1 = out.timers.iter().find(|t| t.correlation_id == corr).copied().unwrap();
    assert_eq!(t1.at_us, 51_000);
    c.on_timeout(t1.at_us, corr, 1);
    let again = c.take_output();
    assert_eq!(again.messages, vec![out.messages[0].clone()]);
    c.on_timeout(again.timers[0].at_us, corr, 2);
    let third = c.take_output();
    assert_eq!(third.messages.len(), 1);
    // Stale timer for an earlier attempt is ignored.
    c.on_timeout(200_000, corr, 2);
    assert!(c.take_output().messages.is_empty());
    c.on_timeout(third.timers[0].at_us, corr, 3);
    assert!(c.take_output().messages.is_empty());
    assert_eq!(c.rules()[&1].status, RuleStatus::Failed);
    assert_eq!(c.stats().failed_requests, 1);
    assert_eq!(c.stats().retransmissions, 2);
    assert!(c.take_triggers().contains(&AppTrigger::RuleFailed(1)));
}

#[test]
fn steer_emits_chained_pair() {
    let mut c = attached(1, 0);
    let [steer, fm] = c.rcf_steer_ue(NodeId::ue(1), NodeId::ap(1)).unwrap();
    let CmiBody::UeSteer(s) = &steer.body else { panic!() };
    assert_eq!((s.ue, s.from_ap, s.target_ap), (1, 0, 1));
    let CmiBody::FlowMod(f) = &fm.body else { panic!() };
    assert_eq!(f.chain, Some(steer.correlation_id));
    assert_eq!((f.ue, f.dir, f.out, f.buffer), (1, Direction::Down, FlowOutput::Ap(1), true));
    let before = c.rules().values().find(|r| r.rule.rule_id == f.rule).unwrap();
    assert_eq!(before.rule.matcher.ue, NodeId::ue(1));
    assert_eq!(c.view().ues[&NodeId::ue(1)].state, UeState::Handover);
}

#[test]
fn steer_errors() {
    let mut c = attached(1, 0);
    assert_eq!(c.rcf_steer_ue(NodeId::ue(1), NodeId::ap(0)), Err(SteerError::SameAp));
    assert_eq!(
        c.rcf_steer_ue(NodeId::ue(1), NodeId::ap(7)),
        Err(SteerError::UnknownTarget(NodeId::ap(7)))
    );
    assert_eq!(
        c.rcf_steer_ue(NodeId::ue(2), NodeId::ap(1)),
        Err(SteerError::UeNotActive(NodeId::ue(2)))
    );
}

#[test]
fn handover_completes_when_ue_appears_at_target() {
    let mut c = attached(1, 0);
    c.rcf_steer_ue(NodeId::ue(1), NodeId::ap(1)).unwrap();
    ack_all(&mut c, 400);
    let r = report(500, vec![ap_report(0, 0, vec![], &[]), ap_report(1, 1, vec![1], &[])]);
    c.on_message(500, CmiMessage::new(0, CmiBody::StatsReport(r)));
    let v = &c.view().ues[&NodeId::ue(1)];
    assert_eq!((v.state, v.serving_ap, v.tunnel_id), (UeState::SessionActive, Some(NodeId::ap(1)), Some(17)));
}

#[test]
fn push_config_passthrough() {
    let mut c = controller(AppsConfig::default());
    let msg = c
        .rmf_push_config(
            NodeId::ap(2),
            ConfigUpdate {
                channel: Some(6),
                ..Default::default()
            },
        )
        .unwrap();
    assert_eq!(msg.payload_value(), serde_json::json!({"ap": 2, "channel": 6}));
    assert_eq!(
        c.rmf_push_config(
            NodeId::ap(2),
            ConfigUpdate {
                channel: Some(3),
                ..Default::default()
            }
        ),
        Err(ConfigError::BadChannel(3))
    );
    assert_eq!(
        c.rmf_push_config(NodeId::ap(9), ConfigUpdate::default()),
        Err(ConfigError::UnknownAp(NodeId::ap(9)))
    );
    let policy = MgmtPolicy {
        suppress_probe_above_load: Some(8),
        ..Default::default()
    };
    let msg = c
        .rmf_push_config(
            NodeId::ap(1),
            ConfigUpdate {
                mgmt_policy: Some(policy),
                ..Default::default()
            },
        )
        .unwrap();
    assert_eq!(
        msg.payload_value()["mgmt_policy"]["suppress_probe_above_load"],
        serde_json::json!(8)
    );
}

#[test]
fn channel_applied_to_view_on_ack() {
    let mut c = controller(AppsConfig::default());
    ack_all(&mut c, 20);
    c.rmf_push_config(
        NodeId::ap(2),
        ConfigUpdate {
            channel: Some(11),
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(c.view().aps[&NodeId::ap(2)].channel, 1);
    ack_all(&mut c, 30);
    assert_eq!(c.view().aps[&NodeId::ap(2)].channel, 11);
}

#[test]
fn slice_crud() {
    let mut c = controller(AppsConfig::default());
    let gold = SliceTemplate::new("gold", SliceFilter::for_ues([1, 2]), 2);
    c.nv_slice_crud(SliceOp::Create(gold.clone())).unwrap();
    let read = c.nv_slice_crud(SliceOp::Read("gold".into())).unwrap();
    assert_eq!(read.template, Some(gold.clone()));
    assert_eq!(read.messages[0].msg_type(), MsgType::SliceRead);
    assert_eq!(
        c.nv_slice_crud(SliceOp::Create(SliceTemplate::new("silver", SliceFilter::for_ues([1]), 1))),
        Err(SliceError::OverlappingFilter("gold".into()))
    );
    assert_eq!(
        c.nv_slice_crud(SliceOp::Create(gold.clone())),
        Err(SliceError::DuplicateSlice("gold".into()))
    );
    assert_eq!(
        c.nv_slice_crud(SliceOp::Read("none".into())),
        Err(SliceError::UnknownSlice("none".into()))
    );
}

#[test]
fn delete_in_use_slice() {
    let mut c = controller(AppsConfig::default());
    c.nv_slice_crud(SliceOp::Create(SliceTemplate::new("gold", SliceFilter::for_ues([1]), 2)))
        .unwrap();
    ack_all(&mut c, 20);
    c.on_message(100, notify(1, 0, 5, QosProfile::default()));
    ack_all(&mut c, 200);
    assert_eq!(
        c.nv_slice_crud(SliceOp::Delete {
            slice_id: "gold".into(),
            force: false
        }),
        Err(SliceError::SliceInUse {
            slice: "gold".into(),
            rules: 2
        })
    );
    let out = c
        .nv_slice_crud(SliceOp::Delete {
            slice_id: "gold".into(),
            force: true,
        })
        .unwrap();
    let types: Vec<MsgType> = out.messages.iter().map(|m| m.msg_type()).collect();
    assert_eq!(types, vec![MsgType::FlowDel, MsgType::FlowDel, MsgType::SliceDelete]);
    ack_all(&mut c, 300);
    assert!(c.rules().is_empty());
    assert!(!c.view().slices.contains_key("gold"));
}

#[test]
fn messages_wait_for_session() {
    let cfg = ControllerConfig::default();
    let mut c = RanController::new(cfg, &seeds(1), [NodeId::ue(0)], &[]);
    c.nv_slice_crud(SliceOp::Create(SliceTemplate::new("gold", SliceFilter::for_ues([0]), 2)))
        .unwrap();
    assert!(c.take_output().messages.is_empty());
    c.start(0);
    let hello = c.take_output().messages;
    assert_eq!(hello.len(), 1);
    c.on_message(
        5,
        CmiMessage::new(
            hello[0].correlation_id,
            CmiBody::HelloAck(HelloAck { wae_id: 0, ap_count: 1 }),
        ),
    );
    let types: Vec<MsgType> = c.take_output().messages.iter().map(|m| m.msg_type()).collect();
    assert_eq!(
        types,
        vec![MsgType::StatsSubscribe, MsgType::SliceCreate, MsgType::SliceCreate]
    );
    assert_eq!(c.stats().rtt_samples_us, vec![5]);
}

#[test]
fn audit_detects_divergence() {
    let mut c = attached(1, 0);
    c.request_audit(1_000);
    let get = c.take_output().messages.remove(0);
    let snapshot = WaeSnapshot {
        aps: vec![],
        rules: c.confirmed_rules(),
        slices: vec!["default".into()],
    };
    c.on_message(
        1_100,
        CmiMessage::new(
            get.correlation_id,
            CmiBody::ConfigAck(ConfigAck {
                ap: None,
                snapshot: Some(snapshot.clone()),
            }),
        ),
    );
    assert!(c.last_audit().unwrap().coherent);
    let mut broken = snapshot;
    broken.rules.pop();
    assert!(!c.audit(&broken));
}

#[test]
fn lb_denies_all_but_least_loaded() {
    let apps = AppsConfig {
        load_balancing: true,
        ..Default::default()
    };
    let mut c = controller(apps);
    ack_all(&mut c, 20);
    let r = report(
        100,
        vec![
            ap_report(0, 2, vec![], &[(5, -50.0)]),
            ap_report(1, 1, vec![], &[(5, -60.0)]),
            ap_report(2, 1, vec![], &[(5, -55.0)]),
        ],
    );
    c.on_message(100, CmiMessage::new(0, CmiBody::StatsReport(r)));
    let sets: Vec<(u32, BTreeSet<u32>)> = c
        .take_output()
        .messages
        .iter()
        .filter_map(|m| match &m.body {
            CmiBody::MgmtPolicySet(p) => Some((p.ap, p.policy.deny_list.clone())),
            _ => None,
        })
        .collect();
    // AP 2 wins: load 1 ties with AP 1, stronger RSSI.
    assert_eq!(sets, vec![(0, BTreeSet::from([5])), (1, BTreeSet::from([5]))]);
}

#[test]
fn admission_app_suppresses_at_threshold() {
    let apps = AppsConfig {
        admission: Some(Default::default()),
        ..Default::default()
    };
    let mut c = controller(apps);
    ack_all(&mut c, 20);
    let r = report(100, vec![ap_report(0, 8, (0..6).collect(), &[])]);
    c.on_message(100, CmiMessage::new(0, CmiBody::StatsReport(r)));
    let out = c.take_output().messages;
    assert!(out.iter().any(|m| matches!(&m.body,
        CmiBody::MgmtPolicySet(p) if p.ap == 0 && p.policy.suppress_probe_above_load == Some(8))));
}

#[test]
fn mobility_app_steers_after_two_reports() {
    let mut c = attached(1, 0);
    c.set_apps(AppsConfig {
        mobility: Some(Default::default()),
        ..Default::default()
    });
    for (t, cand) in [(1_000, -66.0), (2_000, -66.0)] {
        let r = report(
            t,
            vec![ap_report(0, 1, vec![1], &[(1, -70.0)]), ap_report(1, 0, vec![], &[(1, cand)])],
        );
        c.on_message(t, CmiMessage::new(0, CmiBody::StatsReport(r)));
    }
    let types: Vec<MsgType> = c.take_output().messages.iter().map(|m| m.msg_type()).collect();
    assert_eq!(types, vec![MsgType::UeSteer, MsgType::FlowMod]);
}

#[test]
fn interference_app_recolours_reported_graph() {
    let apps = AppsConfig {
        interference: true,
        ..Default::default()
    };
    let mut c = controller(apps);
    ack_all(&mut c, 20);
    let mut aps: Vec<ApReport> = (0..3).map(|i| ap_report(i, 0, vec![], &[])).collect();
    aps[0].neighbors = vec![1, 2];
    aps[1].neighbors = vec![0, 2];
    aps[2].neighbors = vec![0, 1];
    c.on_message(100, CmiMessage::new(0, CmiBody::StatsReport(report(100, aps))));
    let sets = ack_all(&mut c, 200);
    assert_eq!(sets.iter().filter(|m| m.msg_type() == MsgType::ChannelSet).count(), 2);
    let g = c.conflict_graph();
    let channels: BTreeMap<NodeId, u8> = c.view().aps.iter().map(|(id, a)| (*id, a.channel)).collect();
    assert_eq!(crate::apps::conflict_count(&g, &channels), 0);
}

#[derive(Debug, Clone)]
enum CrudStep {
    Create(String, Vec<u32>),
    Update(String, Vec<u32>),
    Delete(String),
}

fn crud_step() -> impl Strategy<Value = CrudStep> {
    let id = prop::sample::select(vec!["a", "b", "c", "d"]).prop_map(String::from);
    let ues = prop::collection::vec(0u32..6, 0..3);
    prop_oneof![
        (id.clone(), ues.clone()).prop_map(|(i, u)| CrudStep::Create(i, u)),
        (id.clone(), ues).prop_map(|(i, u)| CrudStep::Update(i, u)),
        id.prop_map(CrudStep::Delete),
    ]
}

proptest! {
    #[test]
    fn slices_stay_disjoint(steps in prop::collection::vec(crud_step(), 1..30)) {
        let mut c = controller(AppsConfig::default());
        for step in steps {
            let _ = match step {
                CrudStep::Create(id, ues) => c.nv_slice_crud(SliceOp::Create(SliceTemplate::new(id, SliceFilter::for_ues(ues), 1))),
                CrudStep::Update(id, ues) => c.nv_slice_crud(SliceOp::Update(SliceTemplate::new(id, SliceFilter::for_ues(ues), 2))),
                CrudStep::Delete(id) => c.nv_slice_crud(SliceOp::Delete { slice_id: id, force: false }),
            };
            prop_assert!(c.view().check_invariants().is_ok());
        }
        for m in c.take_output().messages {
            prop_assert!(m.msg_type().is_controller_request());
        }
    }
}
