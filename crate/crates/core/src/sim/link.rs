//! Point-to-point links with drop-tail FIFO queues and per-class byte
//! accounting.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::packet::PacketClass;

pub const LINK_QUEUE_PACKETS: usize = 100;

/// Capacity and one-way delay of a link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkParams {
    pub capacity_mbps: f64,
    pub delay_us: u64,
}

impl LinkParams {
    pub const fn new(capacity_mbps: f64, delay_us: u64) -> Self {
        Self { capacity_mbps, delay_us }
    }

    pub fn capacity_bps(&self) -> u64 {
        (self.capacity_mbps * 1e6).round() as u64
    }
}

/// Serialization time of `bytes` at `capacity_bps`, rounded up to whole
/// microseconds.
pub fn serialization_us(bytes: u32, capacity_bps: u64) -> u64 {
    (bytes as u64 * 8 * 1_000_000).div_ceil(capacity_bps.max(1))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounters {
    pub offered_packets: u64,
    pub offered_bytes: u64,
    pub delivered_packets: u64,
    pub delivered_bytes: u64,
    pub dropped_packets: u64,
    pub dropped_bytes: u64,
}

impl ClassCounters {
    pub fn in_flight_packets(&self) -> u64 {
        self.offered_packets - self.delivered_packets - self.dropped_packets
    }
}

#[derive(Debug, Clone, Default)]
struct Lane {
    busy_until: u64,
    /// Transmission end times of packets still queued or in service.
    backlog: VecDeque<u64>,
}

impl Lane {
    fn occupancy(&mut self, now: u64) -> usize {
        while self.backlog.front().is_some_and(|&end| end <= now) {
            self.backlog.pop_front();
        }
        self.backlog.len()
    }
}

#[derive(Debug, Clone)]
pub struct Link {
    pub name: String,
    pub params: LinkParams,
    capacity_bps: u64,
    /// One queue shared by both directions (a radio channel).
    half_duplex: bool,
    lanes: [Lane; 2],
    counters: [BTreeMap<PacketClass, ClassCounters>; 2],
}

impl Link {
    pub fn new(name: impl Into<String>, params: LinkParams, half_duplex: bool) -> Self {
        Self {
            name: name.into(),
            capacity_bps: params.capacity_bps(),
            params,
            half_duplex,
            lanes: Default::default(),
            counters: Default::default(),
        }
    }

    fn lane(&self, dir: usize) -> usize {
        if self.half_duplex {
            0
        } else {
            dir
        }
    }

    /// Time the lane for `dir` finishes its current backlog.
    pub fn busy_until(&self, dir: usize) -> u64 {
        self.lanes[self.lane(dir)].busy_until
    }

    /// Queues a packet in direction `dir` (0 or 1). Returns the delivery
    /// time, or `None` when the queue is full and the packet is dropped.
    pub fn transmit(&mut self, dir: usize, class: PacketClass, bytes: u32, now: u64) -> Option<u64> {
        let li = self.lane(dir);
        let c = self.counters[dir].entry(class).or_default();
        c.offered_packets += 1;
        c.offered_bytes += bytes as u64;
        let lane = &mut self.lanes[li];
        if lane.occupancy(now) >= LINK_QUEUE_PACKETS {
            c.dropped_packets += 1;
            c.dropped_bytes += bytes as u64;
            return None;
        }
        let start = lane.busy_until.max(now);
        let end = start + serialization_us(bytes, self.capacity_bps);
        lane.busy_until = end;
        lane.backlog.push_back(end);
        Some(end + self.params.delay_us)
    }

    /// Records arrival at the far end.
    pub fn delivered(&mut self, dir: usize, class: PacketClass, bytes: u32) {
        let c = self.counters[dir].entry(class).or_default();
        c.delivered_packets += 1;
        c.delivered_bytes += bytes as u64;
    }

    pub fn counters(&self, dir: usize) -> &BTreeMap<PacketClass, ClassCounters> {
        &self.counters[dir]
    }

    /// Bytes of `class` offered in either direction.
    pub fn class_bytes(&self, class: PacketClass) -> u64 {
        self.counters
            .iter()
            .filter_map(|m| m.get(&class))
            .map(|c| c.offered_bytes)
            .sum()
    }

    /// offered = delivered + dropped + in flight, per class and direction.
    pub fn check_conservation(&self, in_flight: &BTreeMap<(usize, PacketClass), u64>) -> Result<(), String> {
        for dir in 0..2 {
            for (class, c) in &self.counters[dir] {
                let f = in_flight.get(&(dir, *class)).copied().unwrap_or(0);
                if c.offered_packets != c.delivered_packets + c.dropped_packets + f {
                    return Err(format!("{} dir {dir} {}: {c:?} with {f} in flight", self.name, class.as_str()));
                }
            }
        }
        Ok(())
    }
}
