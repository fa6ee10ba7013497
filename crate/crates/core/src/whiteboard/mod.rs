//! In-process tuplespace shared by every PC-class peer.
//!
//! Keys are `/`-separated paths. Writes are last-writer-wins with no
//! history. Subscriptions use patterns in which `*` stands for exactly one
//! segment. The store is sans-IO: [`Whiteboard::publish`] returns the
//! notifications it triggered and the caller decides how to deliver them.

pub mod proxy;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{WhiteboardError, WireError};
use crate::types::{Pid, RubiconAddress};
use crate::wire::TransitEnvelope;

pub use proxy::{Converter, Proxy};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tuple {
    pub key: String,
    pub data: Vec<u8>,
    pub timestamp: u64,
    pub creator: Pid,
}

impl Tuple {
    pub fn new(key: impl Into<String>, data: impl Into<Vec<u8>>, timestamp: u64, creator: Pid) -> Self {
        Self { key: key.into(), data: data.into(), timestamp, creator }
    }
}

/// A validated subscription pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    segments: Vec<String>,
}

impl Pattern {
    pub fn parse(s: &str) -> Result<Self, WhiteboardError> {
        if s.is_empty() {
            return Err(WhiteboardError::BadPattern(s.to_owned()));
        }
        let segments: Vec<String> = s.split('/').map(str::to_owned).collect();
        let bad = segments.iter().any(|seg| seg.is_empty() || (seg.contains('*') && seg != "*"));
        if bad {
            return Err(WhiteboardError::BadPattern(s.to_owned()));
        }
        Ok(Self { segments })
    }

    pub fn matches(&self, key: &str) -> bool {
        let mut parts = key.split('/');
        for seg in &self.segments {
            match parts.next() {
                Some(p) if seg == "*" || seg == p => {}
                _ => return false,
            }
        }
        parts.next().is_none()
    }
}

impl std::fmt::Display for Pattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.segments.join("/"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subscription {
    pub id: u64,
    pub pattern: Pattern,
    pub subscriber: Pid,
}

/// One delivery owed to a subscriber.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Notification {
    pub subscription: u64,
    pub subscriber: Pid,
    pub tuple: Tuple,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhiteboardCounters {
    pub writes: u64,
    pub notifications: u64,
    pub transit_published: u64,
    pub transit_consumed: u64,
}

#[derive(Debug, Default)]
pub struct Whiteboard {
    tuples: BTreeMap<String, Tuple>,
    subs: BTreeMap<u64, Subscription>,
    next_sub: u64,
    basestations: BTreeSet<Pid>,
    counters: WhiteboardCounters,
}

pub const TRANSIT_PREFIX: &str = "transit";

pub fn transit_key(pid: Pid) -> String {
    format!("{TRANSIT_PREFIX}/{pid}")
}

pub fn descr_key(island: Pid, devid: u16) -> String {
    format!("island/{island}/mote/{devid}/descr")
}

impl Whiteboard {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn counters(&self) -> WhiteboardCounters {
        self.counters
    }

    /// Store `t` (replacing any tuple under the same key) and return one
    /// notification per matching subscription, in subscription order.
    pub fn publish(&mut self, t: Tuple) -> Result<Vec<Notification>, WhiteboardError> {
        if t.key.is_empty() {
            return Err(WhiteboardError::EmptyKey);
        }
        self.counters.writes += 1;
        let notes: Vec<Notification> = self
            .subs
            .values()
            .filter(|s| s.pattern.matches(&t.key))
            .map(|s| Notification { subscription: s.id, subscriber: s.subscriber, tuple: t.clone() })
            .collect();
        self.counters.notifications += notes.len() as u64;
        self.tuples.insert(t.key.clone(), t);
        Ok(notes)
    }

    pub fn subscribe(&mut self, pattern: &str, subscriber: Pid) -> Result<u64, WhiteboardError> {
        let pattern = Pattern::parse(pattern)?;
        self.next_sub += 1;
        let id = self.next_sub;
        self.subs.insert(id, Subscription { id, pattern, subscriber });
        Ok(id)
    }

    pub fn unsubscribe(&mut self, id: u64) -> Result<(), WhiteboardError> {
        self.subs.remove(&id).map(|_| ()).ok_or(WhiteboardError::UnknownSubscription(id))
    }

    pub fn read(&self, key: &str) -> Option<&Tuple> {
        self.tuples.get(key)
    }

    pub fn take(&mut self, key: &str) -> Option<Tuple> {
        self.tuples.remove(key)
    }

    /// Tuples whose key matches `pattern`, in key order.
    pub fn read_matching(&self, pattern: &str) -> Result<Vec<&Tuple>, WhiteboardError> {
        let p = Pattern::parse(pattern)?;
        Ok(self.tuples.values().filter(|t| p.matches(&t.key)).collect())
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Declare the basestation (or PC peer) that owns `pid`. It is the only
    /// peer allowed to consume `transit/<pid>`.
    pub fn register_basestation(&mut self, pid: Pid) -> Result<u64, WhiteboardError> {
        self.basestations.insert(pid);
        self.subscribe(&transit_key(pid), pid)
    }

    pub fn is_registered(&self, pid: Pid) -> bool {
        self.basestations.contains(&pid)
    }

    /// Outbound half of basestation forwarding: park the envelope under
    /// `transit/<dst_pid>`.
    pub fn publish_transit(&mut self, env: &TransitEnvelope, now: u64) -> Result<Vec<Notification>, WhiteboardError> {
        self.counters.transit_published += 1;
        self.publish(Tuple::new(transit_key(env.dst_pid), env.encode(), now, env.src_pid))
    }

    /// Inbound half: `consumer` takes the transit tuple addressed to it.
    /// Other peers get nothing and the tuple stays put.
    pub fn take_transit(&mut self, consumer: Pid) -> Option<Result<TransitEnvelope, WireError>> {
        if !self.basestations.contains(&consumer) {
            return None;
        }
        let t = self.take(&transit_key(consumer))?;
        self.counters.transit_consumed += 1;
        Some(TransitEnvelope::decode(&t.data))
    }
}

/// Tuple data for a mote descriptor: `type=<t> transducers=<hex> actuators=<n> addr=<pid,devid>`.
pub fn render_descr(mote: RubiconAddress, d: &crate::types::MoteDescriptor) -> String {
    format!("addr={} type={} transducers={:#06x} actuators={}", mote, d.mote_type, d.transducers, d.actuators)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn publish_read_last_writer_wins() {
        let mut wb = Whiteboard::new();
        wb.publish(Tuple::new("a/b", b"1".to_vec(), 1, 9)).unwrap();
        assert_eq!(wb.read("a/b").unwrap().data, b"1");
        wb.publish(Tuple::new("a/b", b"2".to_vec(), 2, 8)).unwrap();
        let t = wb.read("a/b").unwrap();
        assert_eq!((t.data.as_slice(), t.timestamp, t.creator), (&b"2"[..], 2, 8));
        assert!(wb.read("a/c").is_none());
        assert_eq!(wb.publish(Tuple::new("", vec![], 0, 0)), Err(WhiteboardError::EmptyKey));
    }

    #[test]
    fn wildcard_notifies_once() {
        let mut wb = Whiteboard::new();
        let id = wb.subscribe("island/*/descr", 3).unwrap();
        let n = wb.publish(Tuple::new("island/10/descr", vec![1], 0, 1)).unwrap();
        assert_eq!(n.len(), 1);
        assert_eq!(n[0].subscription, id);
        assert!(wb.publish(Tuple::new("island/10/x/descr", vec![1], 0, 1)).unwrap().is_empty());
        assert!(wb.publish(Tuple::new("island/descr", vec![1], 0, 1)).unwrap().is_empty());
    }

    #[test]
    fn unsubscribe_stops_notifications() {
        let mut wb = Whiteboard::new();
        let id = wb.subscribe("k", 1).unwrap();
        assert_eq!(wb.publish(Tuple::new("k", vec![], 0, 1)).unwrap().len(), 1);
        wb.unsubscribe(id).unwrap();
        assert!(wb.publish(Tuple::new("k", vec![], 0, 1)).unwrap().is_empty());
        assert_eq!(wb.unsubscribe(id), Err(WhiteboardError::UnknownSubscription(id)));
    }

    #[test]
    fn overlapping_patterns_each_notify() {
        let mut wb = Whiteboard::new();
        wb.subscribe("a/*", 1).unwrap();
        wb.subscribe("*/b", 1).unwrap();
        wb.subscribe("a/b", 2).unwrap();
        assert_eq!(wb.publish(Tuple::new("a/b", vec![], 0, 1)).unwrap().len(), 3);
    }

    #[test]
    fn bad_patterns_rejected() {
        for p in ["", "a//b", "a/b*", "/a", "a/"] {
            assert!(Pattern::parse(p).is_err(), "{p:?}");
        }
    }

    #[test]
    fn transit_consumed_only_by_owner() {
        let mut wb = Whiteboard::new();
        wb.register_basestation(10).unwrap();
        wb.register_basestation(20).unwrap();
        let env = TransitEnvelope { src_pid: 10, dst_pid: 20, frame: vec![1, 0, 0, 0, 0, 0, 0, 0] };
        let n = wb.publish_transit(&env, 5).unwrap();
        assert_eq!(n.len(), 1);
        assert_eq!(n[0].subscriber, 20);
        assert!(wb.take_transit(10).is_none());
        assert!(wb.take_transit(30).is_none());
        assert_eq!(wb.take_transit(20), Some(Ok(env)));
        assert!(wb.read("transit/20").is_none());
    }

    #[test]
    fn unregistered_transit_persists() {
        let mut wb = Whiteboard::new();
        let env = TransitEnvelope { src_pid: 10, dst_pid: 99, frame: vec![0; 8] };
        assert!(wb.publish_transit(&env, 0).unwrap().is_empty());
        assert!(wb.take_transit(99).is_none());
        assert!(wb.read("transit/99").is_some());
        assert_eq!(wb.counters().transit_consumed, 0);
    }

    fn naive_match(pattern: &[String], key: &[String]) -> bool {
        pattern.len() == key.len() && pattern.iter().zip(key).all(|(p, k)| p == "*" || p == k)
    }

    proptest! {
        #[test]
        fn pattern_matches_segmentwise(
            key in prop::collection::vec("[a-c]{1,2}", 1..5),
            mask in prop::collection::vec(any::<bool>(), 1..5),
            extra in 0usize..2,
        ) {
            // Build a pattern from the key with some segments starred, then
            // maybe lengthen it so it must not match.
            let mut pat: Vec<String> = key.iter().zip(mask.iter().cycle()).map(|(k, m)| if *m { "*".into() } else { k.clone() }).collect();
            for _ in 0..extra { pat.push("*".into()); }
            let p = Pattern::parse(&pat.join("/")).unwrap();
            prop_assert_eq!(p.matches(&key.join("/")), naive_match(&pat, &key));
        }

        #[test]
        fn one_notification_per_matching_subscription(
            pats in prop::collection::vec(prop::collection::vec(prop_oneof!["a", "b", Just("*".to_string())], 1..4), 0..6),
            key in prop::collection::vec(prop_oneof!["a", "b"], 1..4),
        ) {
            let mut wb = Whiteboard::new();
            for p in &pats { wb.subscribe(&p.join("/"), 1).unwrap(); }
            let expected = pats.iter().filter(|p| naive_match(p, &key)).count();
            let n = wb.publish(Tuple::new(key.join("/"), vec![], 0, 0)).unwrap();
            prop_assert_eq!(n.len(), expected);
        }
    }
}
