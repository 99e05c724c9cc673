//! Event trace: a running SHA-256 over one line per executed event, with an
//! optional in-memory copy for dumping.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub time_us: u64,
    pub node: String,
    pub event_kind: String,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct Trace {
    hasher: Sha256,
    keep: Option<Vec<TraceRecord>>,
    line: String,
    count: u64,
}

impl Trace {
    pub fn new(keep_records: bool) -> Self {
        Self {
            hasher: Sha256::new(),
            keep: keep_records.then(Vec::new),
            line: String::new(),
            count: 0,
        }
    }

    pub fn record(&mut self, time_us: u64, node: &str, event_kind: &str, detail: std::fmt::Arguments<'_>) {
        self.line.clear();
        let _ = write!(self.line, "{time_us} {node} {event_kind} ");
        let start = self.line.len();
        let _ = self.line.write_fmt(detail);
        self.line.push('\n');
        self.hasher.update(self.line.as_bytes());
        self.count += 1;
        if let Some(keep) = &mut self.keep {
            keep.push(TraceRecord {
                time_us,
                node: node.to_string(),
                event_kind: event_kind.to_string(),
                detail: self.line[start..self.line.len() - 1].to_string(),
            });
        }
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// First eight bytes of the running hash, big-endian.
    pub fn digest(&self) -> u64 {
        let d = self.hasher.clone().finalize();
        u64::from_be_bytes(d[..8].try_into().expect("8 bytes"))
    }

    pub fn records(&self) -> Option<&[TraceRecord]> {
        self.keep.as_deref()
    }
}

/// Digest of a dumped trace; equals [`Trace::digest`] of the run that
/// produced it.
pub fn digest_records(records: &[TraceRecord]) -> u64 {
    let mut t = Trace::new(false);
    for r in records {
        t.record(r.time_us, &r.node, &r.event_kind, format_args!("{}", r.detail));
    }
    t.digest()
}

pub fn digest_hex(d: u64) -> String {
    format!("{d:016x}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_depends_on_every_line() {
        let mut a = Trace::new(true);
        let mut b = Trace::new(false);
        for t in [&mut a, &mut b] {
            t.record(1, "ue0", "deliver", format_args!("seq {}", 4));
        }
        assert_eq!(a.digest(), b.digest());
        b.record(2, "ue0", "deliver", format_args!("seq 5"));
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.records().unwrap()[0].detail, "seq 4");
    }

    #[test]
    fn empty_trace_hash() {
        // SHA-256 of the empty string starts e3b0c442 98fc1c14.
        assert_eq!(digest_hex(Trace::new(false).digest()), "e3b0c44298fc1c14");
    }
}
