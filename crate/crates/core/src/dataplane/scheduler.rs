//! Uplink scheduling onto N3: deficit round robin across slices with a
//! token-bucket shaper per flow.
//!
//! The scheduler is pull-based. The owner calls [`SliceScheduler::dequeue`]
//! whenever the N3 link goes idle and, on [`Dequeue::Wait`], again at the
//! returned time.

use std::collections::{BTreeMap, VecDeque};

use thiserror::Error;

use crate::packet::Packet;

/// DRR quantum per unit of slice weight, in wire bytes.
pub const QUANTUM_UNIT_BYTES: u64 = 1500;
pub const SLICE_QUEUE_PACKETS: usize = 100;
pub const BUCKET_DEPTH_BYTES: u64 = 3000;

const US_PER_S: u128 = 1_000_000;

/// Token bucket in integer units of bit-microseconds: one second of a
/// 1 bit/s flow is worth 10^6 units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBucket {
    rate_bps: u128,
    depth: u128,
    tokens: u128,
    last_us: u64,
}

impl TokenBucket {
    /// Starts full.
    pub fn new(rate_mbps: f64, depth_bytes: u64, now_us: u64) -> Self {
        let depth = depth_bytes as u128 * 8 * US_PER_S;
        Self {
            rate_bps: rate_to_bps(rate_mbps),
            depth,
            tokens: depth,
            last_us: now_us,
        }
    }

    pub fn rate_bps(&self) -> u64 {
        self.rate_bps as u64
    }

    pub fn set_rate(&mut self, rate_mbps: f64, now_us: u64) {
        self.refill(now_us);
        self.rate_bps = rate_to_bps(rate_mbps);
    }

    fn refill(&mut self, now_us: u64) {
        if now_us > self.last_us {
            let dt = (now_us - self.last_us) as u128;
            self.tokens = (self.tokens + dt * self.rate_bps).min(self.depth);
            self.last_us = now_us;
        }
    }

    fn need(&self, bytes: u32) -> u128 {
        (bytes as u128 * 8 * US_PER_S).min(self.depth)
    }

    pub fn conforms(&mut self, now_us: u64, bytes: u32) -> bool {
        self.refill(now_us);
        self.tokens >= self.need(bytes)
    }

    /// Earliest time at which `bytes` conform.
    pub fn ready_at(&mut self, now_us: u64, bytes: u32) -> u64 {
        self.refill(now_us);
        let need = self.need(bytes);
        if self.tokens >= need {
            return now_us;
        }
        let missing = need - self.tokens;
        now_us + missing.div_ceil(self.rate_bps.max(1)) as u64
    }

    pub fn consume(&mut self, now_us: u64, bytes: u32) {
        self.refill(now_us);
        self.tokens = self.tokens.saturating_sub(self.need(bytes));
    }
}

fn rate_to_bps(rate_mbps: f64) -> u128 {
    (rate_mbps * 1e6).round().max(1.0) as u128
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnqueueError {
    #[error("no queue for slice {0:?}")]
    UnknownSlice(String),
    #[error("queue for slice {0:?} is full")]
    QueueFull(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SliceQueueStats {
    pub enqueued: u64,
    pub sent_packets: u64,
    pub sent_bytes: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone)]
struct SliceQueue {
    weight: u32,
    queue: VecDeque<(u32, Packet)>,
    deficit: u64,
    stats: SliceQueueStats,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dequeue {
    Packet(Packet),
    /// Nothing conforms yet; the earliest head becomes eligible then.
    Wait(u64),
    Empty,
}

#[derive(Debug, Clone, Default)]
pub struct SliceScheduler {
    slices: BTreeMap<String, SliceQueue>,
    buckets: BTreeMap<u32, TokenBucket>,
    cursor: usize,
    turn_open: bool,
}

impl SliceScheduler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_slice(&mut self, slice_id: &str, weight: u32) {
        self.slices.insert(
            slice_id.to_string(),
            SliceQueue {
                weight: weight.max(1),
                queue: VecDeque::new(),
                deficit: 0,
                stats: SliceQueueStats::default(),
            },
        );
        self.turn_open = false;
        self.cursor = 0;
    }

    pub fn has_slice(&self, slice_id: &str) -> bool {
        self.slices.contains_key(slice_id)
    }

    pub fn set_weight(&mut self, slice_id: &str, weight: u32) -> bool {
        match self.slices.get_mut(slice_id) {
            Some(q) => {
                q.weight = weight.max(1);
                true
            }
            None => false,
        }
    }

    /// Drops the slice and everything queued in it. Returns the number of
    /// packets discarded.
    pub fn remove_slice(&mut self, slice_id: &str) -> Option<usize> {
        let q = self.slices.remove(slice_id)?;
        self.turn_open = false;
        self.cursor = 0;
        Some(q.queue.len())
    }

    /// Installs or re-rates the shaper for `flow`.
    pub fn set_flow(&mut self, flow: u32, rate_mbps: f64, now_us: u64) {
        match self.buckets.get_mut(&flow) {
            Some(b) => b.set_rate(rate_mbps, now_us),
            None => {
                self.buckets.insert(flow, TokenBucket::new(rate_mbps, BUCKET_DEPTH_BYTES, now_us));
            }
        }
    }

    pub fn remove_flow(&mut self, flow: u32) {
        self.buckets.remove(&flow);
    }

    pub fn stats(&self, slice_id: &str) -> Option<&SliceQueueStats> {
        self.slices.get(slice_id).map(|q| &q.stats)
    }

    pub fn backlog(&self) -> usize {
        self.slices.values().map(|q| q.queue.len()).sum()
    }

    pub fn slice_backlog(&self, slice_id: &str) -> usize {
        self.slices.get(slice_id).map_or(0, |q| q.queue.len())
    }

    /// Queues `pkt` of `flow` in `slice_id`. Tail drop when full.
    pub fn enqueue(&mut self, slice_id: &str, flow: u32, pkt: Packet) -> Result<(), EnqueueError> {
        let q = self
            .slices
            .get_mut(slice_id)
            .ok_or_else(|| EnqueueError::UnknownSlice(slice_id.to_string()))?;
        if q.queue.len() >= SLICE_QUEUE_PACKETS {
            q.stats.dropped += 1;
            return Err(EnqueueError::QueueFull(slice_id.to_string()));
        }
        q.stats.enqueued += 1;
        q.queue.push_back((flow, pkt));
        Ok(())
    }

    pub fn dequeue(&mut self, now_us: u64) -> Dequeue {
        let n = self.slices.len();
        if n == 0 || self.backlog() == 0 {
            return Dequeue::Empty;
        }
        let mut idle_visits = 0;
        let mut earliest: Option<u64> = None;
        loop {
            if idle_visits >= n {
                return earliest.map_or(Dequeue::Empty, Dequeue::Wait);
            }
            self.cursor %= n;
            let q = self.slices.values_mut().nth(self.cursor).expect("cursor in range");
            let Some((flow, head)) = q.queue.front() else {
                q.deficit = 0;
                self.cursor += 1;
                self.turn_open = false;
                idle_visits += 1;
                continue;
            };
            let user = head.user_bytes();
            let wire = head.size_bytes as u64;
            let ready = self.buckets.get_mut(flow).map_or(now_us, |b| b.ready_at(now_us, user));
            if ready > now_us {
                earliest = Some(earliest.map_or(ready, |e| e.min(ready)));
                self.cursor += 1;
                self.turn_open = false;
                idle_visits += 1;
                continue;
            }
            if !self.turn_open {
                q.deficit += q.weight as u64 * QUANTUM_UNIT_BYTES;
                self.turn_open = true;
            }
            if q.deficit < wire {
                self.cursor += 1;
                self.turn_open = false;
                idle_visits = 0;
                continue;
            }
            let (flow, pkt) = q.queue.pop_front().expect("head");
            q.deficit -= wire;
            q.stats.sent_packets += 1;
            q.stats.sent_bytes += wire;
            if q.queue.is_empty() {
                q.deficit = 0;
                self.cursor += 1;
                self.turn_open = false;
            }
            if let Some(b) = self.buckets.get_mut(&flow) {
                b.consume(now_us, user);
            }
            return Dequeue::Packet(pkt);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::Direction;
    use crate::model::NodeId;
    use crate::packet::FlowKey;
    use proptest::prelude::*;

    fn pkt(ue: u32, bytes: u32, seq: u64) -> Packet {
        let flow = FlowKey {
            ue: NodeId::ue(ue),
            traffic_class: "be".into(),
            direction: Direction::Up,
        };
        Packet::data(NodeId::ue(ue), NodeId::dn(0), flow, bytes, seq, 0).encapsulate_n3(1, NodeId::wae(0), NodeId::upf(0))
    }

    #[test]
    fn bucket_refills_at_rate() {
        // 12 Mbps: 1500 bytes = 12000 bits take 1000 us.
        let mut b = TokenBucket::new(12.0, 1500, 0);
        assert!(b.conforms(0, 1500));
        b.consume(0, 1500);
        assert!(!b.conforms(999, 1500));
        assert_eq!(b.ready_at(999, 1500), 1000);
        assert!(b.conforms(1000, 1500));
    }

    #[test]
    fn bucket_caps_at_depth() {
        let mut b = TokenBucket::new(8.0, 3000, 0);
        b.consume(0, 3000);
        assert!(b.conforms(1_000_000_000, 3000));
        b.consume(1_000_000_000, 3000);
        assert!(!b.conforms(1_000_000_000, 1));
    }

    #[test]
    fn tail_drop_at_capacity() {
        let mut s = SliceScheduler::new();
        s.add_slice("a", 1);
        for i in 0..SLICE_QUEUE_PACKETS {
            s.enqueue("a", 1, pkt(0, 100, i as u64)).unwrap();
        }
        assert_eq!(s.enqueue("a", 1, pkt(0, 100, 999)), Err(EnqueueError::QueueFull("a".into())));
        assert_eq!(s.stats("a").unwrap().dropped, 1);
        assert!(matches!(s.enqueue("zz", 1, pkt(0, 100, 0)), Err(EnqueueError::UnknownSlice(_))));
    }

    #[test]
    fn unshaped_fifo_within_slice() {
        let mut s = SliceScheduler::new();
        s.add_slice("a", 1);
        for i in 0..5 {
            s.enqueue("a", 1, pkt(0, 1000, i)).unwrap();
        }
        let seqs: Vec<u64> = (0..5)
            .map(|_| match s.dequeue(0) {
                Dequeue::Packet(p) => p.seq_no,
                other => panic!("{other:?}"),
            })
            .collect();
        assert_eq!(seqs, vec![0, 1, 2, 3, 4]);
        assert_eq!(s.dequeue(0), Dequeue::Empty);
    }

    #[test]
    fn shaped_head_waits() {
        let mut s = SliceScheduler::new();
        s.add_slice("a", 1);
        s.set_flow(1, 12.0, 0);
        for i in 0..3 {
            s.enqueue("a", 1, pkt(0, 1500, i)).unwrap();
        }
        // Depth 3000 bytes lets two through at once.
        assert!(matches!(s.dequeue(0), Dequeue::Packet(_)));
        assert!(matches!(s.dequeue(0), Dequeue::Packet(_)));
        assert_eq!(s.dequeue(0), Dequeue::Wait(1000));
        assert!(matches!(s.dequeue(1000), Dequeue::Packet(_)));
    }

    #[test]
    fn remove_slice_discards_backlog() {
        let mut s = SliceScheduler::new();
        s.add_slice("a", 1);
        s.add_slice("b", 1);
        for i in 0..4 {
            s.enqueue("b", 2, pkt(1, 500, i)).unwrap();
        }
        assert_eq!(s.remove_slice("b"), Some(4));
        assert_eq!(s.backlog(), 0);
        assert_eq!(s.remove_slice("b"), None);
    }

    /// Both slices stay backlogged; count bytes served per slice.
    fn serve(weights: (u32, u32), sizes: (u32, u32), total_bytes: u64) -> (u64, u64) {
        let mut s = SliceScheduler::new();
        s.add_slice("a", weights.0);
        s.add_slice("b", weights.1);
        let (mut a, mut b) = (0u64, 0u64);
        let mut seq = 0;
        while a + b < total_bytes {
            while s.slice_backlog("a") < 10 {
                seq += 1;
                s.enqueue("a", 1, pkt(0, sizes.0, seq)).unwrap();
            }
            while s.slice_backlog("b") < 10 {
                seq += 1;
                s.enqueue("b", 2, pkt(1, sizes.1, seq)).unwrap();
            }
            match s.dequeue(0) {
                Dequeue::Packet(p) if p.flow.as_ref().unwrap().ue == NodeId::ue(0) => a += p.size_bytes as u64,
                Dequeue::Packet(p) => b += p.size_bytes as u64,
                other => panic!("{other:?}"),
            }
        }
        (a, b)
    }

    #[test]
    fn weighted_share_two_to_one() {
        let (a, b) = serve((2, 1), (1464, 1464), 4_000_000);
        let ratio = a as f64 / b as f64;
        assert!((ratio - 2.0).abs() < 0.05, "{ratio}");
    }

    proptest! {
        #[test]
        fn drr_share_tracks_weights(w0 in 1u32..5, w1 in 1u32..5, s0 in 64u32..1464, s1 in 64u32..1464) {
            let (a, b) = serve((w0, w1), (s0, s1), 3_000_000);
            let want = w0 as f64 / w1 as f64;
            let got = a as f64 / b as f64;
            // After R rounds each slice is within one packet of R quanta.
            prop_assert!((got / want - 1.0).abs() <= 0.03, "got {got} want {want}");
        }

        #[test]
        fn shaper_never_exceeds_rate_plus_depth(rate in 1u32..100, sizes in prop::collection::vec(64u32..1500, 1..200)) {
            let mut s = SliceScheduler::new();
            s.add_slice("a", 1);
            s.set_flow(1, rate as f64, 0);
            let mut now = 0u64;
            let mut sent: Vec<(u64, u64)> = Vec::new();
            let mut pending = sizes.into_iter();
            let mut queued = 0usize;
            loop {
                while queued < 5 {
                    match pending.next() {
                        Some(sz) => { s.enqueue("a", 1, pkt(0, sz, 0)).unwrap(); queued += 1; }
                        None => break,
                    }
                }
                match s.dequeue(now) {
                    Dequeue::Packet(p) => { sent.push((now, p.user_bytes() as u64)); queued -= 1; }
                    Dequeue::Wait(t) => { prop_assert!(t > now); now = t; }
                    Dequeue::Empty => break,
                }
            }
            // Over any window starting at a send time: bits <= rate*dt + depth.
            for i in 0..sent.len() {
                let mut bytes = 0u64;
                for &(t, b) in &sent[i..] {
                    bytes += b;
                    let dt = t - sent[i].0;
                    let allowed = rate as u64 * dt / 8 + BUCKET_DEPTH_BYTES;
                    prop_assert!(bytes <= allowed, "{bytes} > {allowed} over {dt} us");
                }
            }
        }
    }
}
