//! Parametric radio medium: who hears whom, how late, and how often not at all.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Index of a node inside one simulation.
pub type NodeIdx = usize;

#[derive(Debug, Clone)]
pub struct LinkModel {
    /// Symmetric: holds `(a, b)` with `a < b`.
    in_range: BTreeSet<(NodeIdx, NodeIdx)>,
    pub loss_prob: f64,
    pub delay_ms: u64,
    pub serial_delay_ms: u64,
    pub whiteboard_delay_ms: u64,
    /// Directed per-edge radio delays that differ from `delay_ms`.
    edge_delay: BTreeMap<(NodeIdx, NodeIdx), u64>,
    pub rng_seed: u64,
}

impl LinkModel {
    pub fn new(loss_prob: f64, delay_ms: u64, rng_seed: u64) -> Self {
        Self {
            in_range: BTreeSet::new(),
            loss_prob,
            delay_ms,
            serial_delay_ms: 0,
            whiteboard_delay_ms: 0,
            edge_delay: BTreeMap::new(),
            rng_seed,
        }
    }

    pub fn connect(&mut self, a: NodeIdx, b: NodeIdx) {
        if a != b {
            self.in_range.insert((a.min(b), a.max(b)));
        }
    }

    pub fn cut(&mut self, a: NodeIdx, b: NodeIdx) {
        self.in_range.remove(&(a.min(b), a.max(b)));
    }

    pub fn in_range(&self, a: NodeIdx, b: NodeIdx) -> bool {
        self.in_range.contains(&(a.min(b), a.max(b)))
    }

    /// Nodes in range of `a`, in index order.
    pub fn neighbours(&self, a: NodeIdx) -> Vec<NodeIdx> {
        self.in_range
            .iter()
            .filter_map(|&(x, y)| {
                if x == a {
                    Some(y)
                } else if y == a {
                    Some(x)
                } else {
                    None
                }
            })
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn set_delay(&mut self, from: NodeIdx, to: NodeIdx, ms: u64) {
        self.edge_delay.insert((from, to), ms);
    }

    pub fn radio_delay(&self, from: NodeIdx, to: NodeIdx) -> u64 {
        self.edge_delay.get(&(from, to)).copied().unwrap_or(self.delay_ms)
    }

    /// Give every directed in-range edge without an override a constant
    /// extra delay in `0..=max`. Constant per edge, so FIFO order holds.
    pub fn add_jitter(&mut self, max: u64) {
        if max == 0 {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.rng_seed ^ 0x6a69_7474_6572);
        let edges: Vec<(NodeIdx, NodeIdx)> = self.in_range.iter().flat_map(|&(a, b)| [(a, b), (b, a)]).collect();
        for e in edges {
            let extra = rng.gen_range(0..=max);
            self.edge_delay.entry(e).or_insert(self.delay_ms + extra);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_is_symmetric() {
        let mut l = LinkModel::new(0.0, 3, 1);
        l.connect(2, 0);
        assert!(l.in_range(0, 2) && l.in_range(2, 0));
        assert!(!l.in_range(0, 1));
        assert_eq!(l.neighbours(0), vec![2]);
        l.cut(0, 2);
        assert!(!l.in_range(2, 0));
    }

    #[test]
    fn jitter_is_seeded_and_bounded() {
        let build = |seed| {
            let mut l = LinkModel::new(0.0, 10, seed);
            l.connect(0, 1);
            l.connect(1, 2);
            l.set_delay(0, 1, 99);
            l.add_jitter(5);
            l
        };
        let (a, b) = (build(7), build(7));
        for (x, y) in [(0, 1), (1, 0), (1, 2), (2, 1)] {
            assert_eq!(a.radio_delay(x, y), b.radio_delay(x, y));
        }
        assert_eq!(a.radio_delay(0, 1), 99);
        assert!((10..=15).contains(&a.radio_delay(1, 2)));
    }
}
