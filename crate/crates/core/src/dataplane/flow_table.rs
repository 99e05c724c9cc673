//! The WAE's rule table. Rules are keyed by id and indexed by match so a
//! packet lookup is a single map probe.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::flow::{Direction, FlowMatch, FlowRule};
use crate::model::NodeId;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FlowTableError {
    #[error("rule {0} already installed")]
    DuplicateRule(u32),
    #[error("match already covered by rule {0}")]
    DuplicateMatch(u32),
    #[error("unknown rule {0}")]
    UnknownRule(u32),
}

#[derive(Debug, Clone, Default)]
pub struct FlowTable {
    rules: BTreeMap<u32, FlowRule>,
    index: BTreeMap<FlowMatch, u32>,
}

impl FlowTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    pub fn get(&self, rule_id: u32) -> Option<&FlowRule> {
        self.rules.get(&rule_id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &FlowRule> {
        self.rules.values()
    }

    pub fn lookup(&self, ue: NodeId, traffic_class: &str, direction: Direction) -> Option<&FlowRule> {
        let key = FlowMatch {
            ue,
            traffic_class: traffic_class.to_string(),
            direction,
        };
        self.index.get(&key).and_then(|id| self.rules.get(id))
    }

    pub fn insert(&mut self, rule: FlowRule) -> Result<(), FlowTableError> {
        if self.rules.contains_key(&rule.rule_id) {
            return Err(FlowTableError::DuplicateRule(rule.rule_id));
        }
        if let Some(&other) = self.index.get(&rule.matcher) {
            return Err(FlowTableError::DuplicateMatch(other));
        }
        self.index.insert(rule.matcher.clone(), rule.rule_id);
        self.rules.insert(rule.rule_id, rule);
        Ok(())
    }

    /// Replaces rule `rule.rule_id`, returning the previous version.
    pub fn modify(&mut self, rule: FlowRule) -> Result<FlowRule, FlowTableError> {
        let old = self
            .rules
            .get(&rule.rule_id)
            .ok_or(FlowTableError::UnknownRule(rule.rule_id))?;
        if let Some(&other) = self.index.get(&rule.matcher) {
            if other != rule.rule_id {
                return Err(FlowTableError::DuplicateMatch(other));
            }
        }
        let old_match = old.matcher.clone();
        self.index.remove(&old_match);
        self.index.insert(rule.matcher.clone(), rule.rule_id);
        Ok(self.rules.insert(rule.rule_id, rule).expect("present"))
    }

    pub fn remove(&mut self, rule_id: u32) -> Result<FlowRule, FlowTableError> {
        let rule = self.rules.remove(&rule_id).ok_or(FlowTableError::UnknownRule(rule_id))?;
        self.index.remove(&rule.matcher);
        Ok(rule)
    }

    pub fn rules_in_slice(&self, slice_id: &str) -> usize {
        self.rules.values().filter(|r| r.slice_id == slice_id).count()
    }

    pub fn check_invariants(&self) -> Result<(), String> {
        if self.index.len() != self.rules.len() {
            return Err(format!("index has {} entries for {} rules", self.index.len(), self.rules.len()));
        }
        for (m, id) in &self.index {
            match self.rules.get(id) {
                Some(r) if &r.matcher == m => {}
                _ => return Err(format!("index entry for rule {id} is stale")),
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowOutput;
    use crate::model::QosProfile;
    use proptest::prelude::*;

    fn rule(id: u32, ue: u32, dir: Direction) -> FlowRule {
        FlowRule {
            rule_id: id,
            matcher: FlowMatch {
                ue: NodeId::ue(ue),
                traffic_class: "be".into(),
                direction: dir,
            },
            output: FlowOutput::N3(1),
            qos: QosProfile::new(10.0, 0, 1000).unwrap(),
            slice_id: "default".into(),
            buffer_during_handover: false,
        }
    }

    #[test]
    fn add_then_delete_restores_table() {
        let mut t = FlowTable::new();
        t.insert(rule(1, 0, Direction::Up)).unwrap();
        let before: Vec<_> = t.iter().cloned().collect();
        t.insert(rule(7, 3, Direction::Down)).unwrap();
        t.remove(7).unwrap();
        assert_eq!(t.iter().cloned().collect::<Vec<_>>(), before);
        assert!(t.lookup(NodeId::ue(3), "be", Direction::Down).is_none());
    }

    #[test]
    fn rejects_duplicates_and_unknown() {
        let mut t = FlowTable::new();
        t.insert(rule(1, 0, Direction::Up)).unwrap();
        assert_eq!(t.insert(rule(1, 5, Direction::Up)), Err(FlowTableError::DuplicateRule(1)));
        assert_eq!(t.insert(rule(2, 0, Direction::Up)), Err(FlowTableError::DuplicateMatch(1)));
        assert_eq!(t.remove(9), Err(FlowTableError::UnknownRule(9)));
        assert_eq!(t.modify(rule(9, 0, Direction::Up)), Err(FlowTableError::UnknownRule(9)));
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn modify_moves_index() {
        let mut t = FlowTable::new();
        t.insert(rule(1, 0, Direction::Down)).unwrap();
        let mut r = rule(1, 0, Direction::Down);
        r.output = FlowOutput::Ap(2);
        t.modify(r).unwrap();
        assert_eq!(t.lookup(NodeId::ue(0), "be", Direction::Down).unwrap().output, FlowOutput::Ap(2));
        t.check_invariants().unwrap();
    }

    proptest! {
        #[test]
        fn random_ops_keep_index_consistent(ops in prop::collection::vec((0u8..3, 0u32..6, 0u32..4, any::<bool>()), 0..60)) {
            let mut t = FlowTable::new();
            for (op, id, ue, up) in ops {
                let dir = if up { Direction::Up } else { Direction::Down };
                let _ = match op {
                    0 => t.insert(rule(id, ue, dir)),
                    1 => t.modify(rule(id, ue, dir)).map(|_| ()),
                    _ => t.remove(id).map(|_| ()),
                };
                prop_assert!(t.check_invariants().is_ok());
            }
        }
    }
}
