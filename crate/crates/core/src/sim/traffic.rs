//! Packet arrival processes: constant bit rate and exponential on/off.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::flow::Direction;

pub const MIN_PKT_BYTES: u32 = 64;
pub const MAX_PKT_BYTES: u32 = 1500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum TrafficKind {
    Cbr,
    Onoff,
}

fn up() -> Direction {
    Direction::Up
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSpec {
    pub kind: TrafficKind,
    #[serde(default = "up")]
    pub direction: Direction,
    /// Long-run average rate of user payload.
    pub rate_mbps: f64,
    pub pkt_bytes: u32,
    #[serde(default)]
    pub start_us: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_us: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub on_mean_us: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub off_mean_us: Option<u64>,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("bad traffic spec: {0}")]
pub struct BadSpec(pub String);

impl TrafficSpec {
    pub fn cbr(direction: Direction, rate_mbps: f64, pkt_bytes: u32) -> Self {
        Self {
            kind: TrafficKind::Cbr,
            direction,
            rate_mbps,
            pkt_bytes,
            start_us: 0,
            stop_us: None,
            on_mean_us: None,
            off_mean_us: None,
        }
    }

    pub fn validate(&self) -> Result<(), BadSpec> {
        if !(self.rate_mbps.is_finite() && self.rate_mbps > 0.0) {
            return Err(BadSpec(format!("rate_mbps must be positive, got {}", self.rate_mbps)));
        }
        if !(MIN_PKT_BYTES..=MAX_PKT_BYTES).contains(&self.pkt_bytes) {
            return Err(BadSpec(format!(
                "pkt_bytes must be within [{MIN_PKT_BYTES}, {MAX_PKT_BYTES}], got {}",
                self.pkt_bytes
            )));
        }
        if let Some(stop) = self.stop_us {
            if stop <= self.start_us {
                return Err(BadSpec("stop_us must be after start_us".into()));
            }
        }
        match self.kind {
            TrafficKind::Cbr => Ok(()),
            TrafficKind::Onoff => match (self.on_mean_us, self.off_mean_us) {
                (Some(on), Some(off)) if on > 0 && off > 0 => Ok(()),
                _ => Err(BadSpec("ONOFF needs positive on_mean_us and off_mean_us".into())),
            },
        }
    }

    /// Microseconds between packets at `rate_mbps`.
    pub fn interval_us(&self, rate_mbps: f64) -> f64 {
        self.pkt_bytes as f64 * 8.0 / rate_mbps
    }
}

/// Lazily produces arrival times for one flow. Packet k of a burst is
/// emitted at `start + floor((k + 1) * interval)`; the stop time is
/// inclusive.
#[derive(Debug, Clone)]
pub struct TrafficGen {
    spec: TrafficSpec,
    rng: ChaCha8Rng,
    interval: f64,
    burst_start: u64,
    burst_end: u64,
    k: u64,
    done: bool,
}

impl TrafficGen {
    /// Arrivals begin at the later of `spec.start_us` and `active_from_us`.
    pub fn new(spec: TrafficSpec, active_from_us: u64, mut rng: ChaCha8Rng) -> Result<Self, BadSpec> {
        spec.validate()?;
        let origin = spec.start_us.max(active_from_us);
        let (interval, burst_end) = match spec.kind {
            TrafficKind::Cbr => (spec.interval_us(spec.rate_mbps), u64::MAX),
            TrafficKind::Onoff => {
                let on = spec.on_mean_us.expect("validated") as f64;
                let off = spec.off_mean_us.expect("validated") as f64;
                let peak = spec.rate_mbps * (on + off) / on;
                (spec.interval_us(peak), origin + exp_sample(&mut rng, on))
            }
        };
        Ok(Self {
            spec,
            rng,
            interval,
            burst_start: origin,
            burst_end,
            k: 0,
            done: false,
        })
    }

    pub fn spec(&self) -> &TrafficSpec {
        &self.spec
    }

    pub fn next_arrival(&mut self) -> Option<u64> {
        loop {
            if self.done {
                return None;
            }
            let t = self.burst_start + ((self.k + 1) as f64 * self.interval).floor() as u64;
            if t >= self.burst_end {
                // End of an on period: wait out an off period.
                let on = self.spec.on_mean_us.expect("onoff") as f64;
                let off = self.spec.off_mean_us.expect("onoff") as f64;
                self.burst_start = self.burst_end + exp_sample(&mut self.rng, off);
                self.burst_end = self.burst_start + exp_sample(&mut self.rng, on);
                self.k = 0;
                continue;
            }
            if self.spec.stop_us.is_some_and(|stop| t > stop) {
                self.done = true;
                return None;
            }
            self.k += 1;
            return Some(t);
        }
    }
}

fn exp_sample(rng: &mut ChaCha8Rng, mean: f64) -> u64 {
    let u: f64 = rng.gen();
    ((-mean * (1.0 - u).ln()).round() as u64).max(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    fn rng() -> ChaCha8Rng {
        stream(7, Stream::Traffic(0))
    }

    #[test]
    fn cbr_interval() {
        let mut g = TrafficGen::new(TrafficSpec::cbr(Direction::Up, 1.0, 1250), 0, rng()).unwrap();
        let t: Vec<u64> = (0..3).map(|_| g.next_arrival().unwrap()).collect();
        assert_eq!(t, vec![10_000, 20_000, 30_000]);
    }

    #[test]
    fn cbr_count_is_floor_of_duration() {
        for (rate, bytes) in [(1.0, 1250), (3.0, 1000), (7.3, 333)] {
            let spec = TrafficSpec {
                stop_us: Some(1_000_000),
                ..TrafficSpec::cbr(Direction::Up, rate, bytes)
            };
            let interval = bytes as f64 * 8.0 / rate;
            let mut g = TrafficGen::new(spec, 0, rng()).unwrap();
            let n = std::iter::from_fn(|| g.next_arrival()).count() as u64;
            let expect = (1_000_000.0 / interval).floor() as u64;
            assert_eq!(n, expect, "rate {rate} bytes {bytes}");
        }
    }

    #[test]
    fn starts_when_activated() {
        let spec = TrafficSpec {
            start_us: 100,
            ..TrafficSpec::cbr(Direction::Down, 1.0, 1250)
        };
        let mut g = TrafficGen::new(spec, 5_000, rng()).unwrap();
        assert_eq!(g.next_arrival(), Some(15_000));
    }

    #[test]
    fn onoff_long_run_mean() {
        let spec = TrafficSpec {
            kind: TrafficKind::Onoff,
            stop_us: Some(100_000_000),
            on_mean_us: Some(20_000),
            off_mean_us: Some(20_000),
            ..TrafficSpec::cbr(Direction::Up, 4.0, 1000)
        };
        let mut g = TrafficGen::new(spec, 0, rng()).unwrap();
        let n = std::iter::from_fn(|| g.next_arrival()).count() as f64;
        let mbps = n * 1000.0 * 8.0 / 100e6;
        assert!((mbps / 4.0 - 1.0).abs() < 0.05, "{mbps}");
    }

    #[test]
    fn bad_specs() {
        let base = TrafficSpec::cbr(Direction::Up, 1.0, 1000);
        for bad in [
            TrafficSpec { rate_mbps: 0.0, ..base.clone() },
            TrafficSpec { pkt_bytes: 63, ..base.clone() },
            TrafficSpec { pkt_bytes: 1501, ..base.clone() },
            TrafficSpec { start_us: 5, stop_us: Some(5), ..base.clone() },
            TrafficSpec { kind: TrafficKind::Onoff, ..base.clone() },
        ] {
            assert!(TrafficGen::new(bad, 0, rng()).is_err());
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let spec = TrafficSpec {
            kind: TrafficKind::Onoff,
            on_mean_us: Some(5_000),
            off_mean_us: Some(9_000),
            stop_us: Some(2_000_000),
            ..TrafficSpec::cbr(Direction::Up, 2.0, 500)
        };
        let a: Vec<u64> = {
            let mut g = TrafficGen::new(spec.clone(), 0, rng()).unwrap();
            std::iter::from_fn(|| g.next_arrival()).collect()
        };
        let mut g = TrafficGen::new(spec, 0, rng()).unwrap();
        assert_eq!(a, std::iter::from_fn(|| g.next_arrival()).collect::<Vec<_>>());
    }
}
