//! Proptest strategies producing schema-valid CMI messages of every type.

use proptest::collection::{btree_set, vec};
use proptest::option;
use proptest::prelude::*;

use super::msg::*;
use crate::flow::{Direction, FlowOutput};
use crate::model::QosProfile;
use crate::slice::{SliceFilter, SliceTemplate};

fn text() -> impl Strategy<Value = String> {
    "\\PC{1,12}"
}

fn channel() -> impl Strategy<Value = u8> {
    prop::sample::select(vec![1u8, 6, 11])
}

fn finite() -> impl Strategy<Value = f64> {
    any::<f64>().prop_filter("finite", |x| x.is_finite())
}

fn rate() -> impl Strategy<Value = f64> {
    prop_oneof![0.001f64..10_000.0, (1u32..1000).prop_map(f64::from)]
}

fn direction() -> impl Strategy<Value = Direction> {
    prop_oneof![Just(Direction::Up), Just(Direction::Down)]
}

fn output() -> impl Strategy<Value = FlowOutput> {
    prop_oneof![any::<u32>().prop_map(FlowOutput::Ap), any::<u32>().prop_map(FlowOutput::N3)]
}

fn qos() -> impl Strategy<Value = QosProfile> {
    (rate(), 0u8..=7, 1u64..1_000_000).prop_map(|(rate_mbps, priority, latency_budget_us)| QosProfile {
        rate_mbps,
        priority,
        latency_budget_us,
    })
}

fn policy() -> impl Strategy<Value = WirePolicy> {
    (option::of(any::<u32>()), btree_set(any::<u32>(), 0..4)).prop_map(|(suppress_probe_above_load, deny_list)| {
        WirePolicy {
            suppress_probe_above_load,
            deny_list,
        }
    })
}

fn template() -> impl Strategy<Value = SliceTemplate> {
    (
        text(),
        btree_set(any::<u32>(), 0..4),
        btree_set(text(), 0..3),
        1u32..100,
        option::of(rate()),
    )
        .prop_map(|(slice_id, ues, traffic_classes, weight, rate_cap_mbps)| SliceTemplate {
            slice_id,
            filter: SliceFilter { ues, traffic_classes },
            weight,
            rate_cap_mbps,
        })
}

fn flow_spec() -> impl Strategy<Value = FlowSpec> {
    (
        (any::<u32>(), any::<u32>(), text(), direction()),
        qos(),
        (text(), output(), any::<bool>(), option::of(any::<u64>())),
    )
        .prop_map(|((rule, ue, tc, dir), q, (slice, out, buffer, chain))| FlowSpec {
            rule,
            ue,
            tc,
            dir,
            rate_mbps: q.rate_mbps,
            priority: q.priority,
            latency_us: q.latency_budget_us,
            slice,
            out,
            buffer,
            chain,
        })
}

fn ap_report() -> impl Strategy<Value = ApReport> {
    (
        any::<u32>(),
        channel(),
        any::<u32>(),
        vec(any::<u32>(), 0..4),
        vec((any::<u32>(), -120.0f64..0.0), 0..4),
        vec(any::<u32>(), 0..4),
    )
        .prop_map(|(ap, channel, load, associated, rssi, neighbors)| ApReport {
            ap,
            channel,
            load,
            associated,
            rssi: rssi.into_iter().map(|(ue, rssi_dbm)| UeRssi { ue, rssi_dbm }).collect(),
            neighbors,
        })
}

fn snapshot() -> impl Strategy<Value = WaeSnapshot> {
    let ap = (any::<u32>(), channel(), finite(), any::<u32>(), policy()).prop_map(
        |(ap, channel, tx_power_dbm, load, mgmt_policy)| ApConfigEntry {
            ap,
            channel,
            tx_power_dbm,
            load,
            mgmt_policy,
        },
    );
    let rule = (any::<u32>(), any::<u32>(), text(), direction(), output(), text())
        .prop_map(|(rule, ue, tc, dir, out, slice)| RuleEntry { rule, ue, tc, dir, out, slice });
    (vec(ap, 0..3), vec(rule, 0..3), vec(text(), 0..3)).prop_map(|(aps, rules, slices)| WaeSnapshot {
        aps,
        rules,
        slices,
    })
}

fn error_code() -> impl Strategy<Value = ErrorCode> {
    prop::sample::select(vec![
        ErrorCode::UnknownAp,
        ErrorCode::UnknownRule,
        ErrorCode::BadSlice,
        ErrorCode::BadChannel,
        ErrorCode::UnknownUe,
        ErrorCode::Handshake,
        ErrorCode::NotEstablished,
    ])
}

/// Any body that passes schema validation.
pub fn body() -> impl Strategy<Value = CmiBody> {
    prop_oneof![
        (option::of(any::<u32>()), option::of(any::<u32>()))
            .prop_map(|(controller_id, proto_version)| CmiBody::Hello(Hello { controller_id, proto_version })),
        (any::<u32>(), any::<u32>()).prop_map(|(wae_id, ap_count)| CmiBody::HelloAck(HelloAck { wae_id, ap_count })),
        (any::<u32>(), option::of(channel()), option::of(finite()), option::of(policy())).prop_map(
            |(ap, channel, tx_power_dbm, mgmt_policy)| CmiBody::ConfigSet(ConfigSet {
                ap,
                channel,
                tx_power_dbm,
                mgmt_policy
            })
        ),
        (option::of(any::<u32>()), option::of(snapshot()))
            .prop_map(|(ap, snapshot)| CmiBody::ConfigAck(ConfigAck { ap, snapshot })),
        Just(CmiBody::ConfigGet(ConfigGet {})),
        flow_spec().prop_map(CmiBody::FlowAdd),
        flow_spec().prop_map(CmiBody::FlowMod),
        any::<u32>().prop_map(|rule| CmiBody::FlowDel(FlowRef { rule })),
        any::<u32>().prop_map(|rule| CmiBody::FlowAck(FlowRef { rule })),
        (any::<u64>(), vec(ap_report(), 0..3)).prop_map(|(time_us, aps)| CmiBody::StatsReport(StatsReport { time_us, aps })),
        (1u64..u64::MAX).prop_map(|period_us| CmiBody::StatsSubscribe(StatsSubscribe { period_us })),
        (any::<u32>(), any::<u32>(), any::<u32>())
            .prop_map(|(ue, from_ap, target_ap)| CmiBody::UeSteer(UeSteer { ue, from_ap, target_ap })),
        (any::<u32>(), channel()).prop_map(|(ap, channel)| CmiBody::ChannelSet(ChannelSet { ap, channel })),
        (any::<u32>(), policy()).prop_map(|(ap, policy)| CmiBody::MgmtPolicySet(MgmtPolicySet { ap, policy })),
        template().prop_map(|template| CmiBody::SliceCreate(SliceBody { template })),
        text().prop_map(|slice| CmiBody::SliceRead(SliceRef { slice })),
        template().prop_map(|template| CmiBody::SliceUpdate(SliceBody { template })),
        text().prop_map(|slice| CmiBody::SliceDelete(SliceRef { slice })),
        (text(), option::of(template())).prop_map(|(slice, template)| CmiBody::SliceAck(SliceAck { slice, template })),
        (any::<u32>(), any::<u32>(), any::<u32>(), text(), qos())
            .prop_map(|(ue, tunnel, ap, tc, qos)| CmiBody::SessionNotify(SessionNotify { ue, tunnel, ap, tc, qos })),
        (error_code(), "\\PC{0,24}").prop_map(|(code, detail)| CmiBody::Error(ErrorBody { code, detail })),
    ]
}

pub fn message() -> impl Strategy<Value = CmiMessage> {
    (any::<u64>(), body()).prop_map(|(correlation_id, body)| CmiMessage::new(correlation_id, body))
}
