//! Brute-force reference LLC used as an oracle by the integration tests.
//!
//! Each set keeps its ways as plain slots plus an explicit recency list of way
//! indices (oldest first). Counts are always recomputed by scanning; nothing
//! is cached between accesses.

#![allow(dead_code)]

pub mod worked_example;

use tppd_core::{CacheGeometry, Pid};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RefPolicy {
    Lru,
    /// Floors for the spy and the trojan.
    Tppd {
        spy_floor: usize,
        trojan_floor: usize,
    },
    Nomo {
        reserved: usize,
    },
}

#[derive(Debug, Clone)]
struct RefSet {
    ways: Vec<Option<(u64, Pid)>>,
    recency: Vec<usize>,
    pair: Option<(Pid, Pid)>,
}

impl RefSet {
    fn count(&self, pid: Pid) -> usize {
        self.ways.iter().flatten().filter(|(_, o)| *o == pid).count()
    }

    fn make_mru(&mut self, way: usize) {
        self.recency.retain(|&w| w != way);
        self.recency.push(way);
    }

    fn oldest(&self, mut ok: impl FnMut(Pid) -> bool) -> Option<usize> {
        self.recency
            .iter()
            .copied()
            .find(|&w| self.ways[w].is_some_and(|(_, o)| ok(o)))
    }
}

/// Outcome of one reference access: whether it hit, and the way and block
/// replaced on a miss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RefOutcome {
    pub hit: bool,
    pub way: usize,
    pub evicted: Option<(u64, Pid)>,
}

#[derive(Debug, Clone)]
pub struct RefLlc {
    geometry: CacheGeometry,
    sets: Vec<RefSet>,
    policy: RefPolicy,
    active: Vec<Pid>,
}

impl RefLlc {
    pub fn new(geometry: CacheGeometry, policy: RefPolicy, active: Vec<Pid>) -> Self {
        let set = RefSet {
            ways: vec![None; geometry.associativity],
            recency: Vec::new(),
            pair: None,
        };
        Self {
            geometry,
            sets: vec![set; geometry.num_sets],
            policy,
            active,
        }
    }

    pub fn engage(&mut self, set: usize, spy: Pid, trojan: Pid) {
        self.sets[set].pair = Some((spy, trojan));
    }

    /// Scanned `(spy, trojan)` block counts of an engaged set.
    pub fn pair_counts(&self, set: usize) -> Option<(usize, usize)> {
        let s = &self.sets[set];
        s.pair.map(|(a, b)| (s.count(a), s.count(b)))
    }

    pub fn access(&mut self, pid: Pid, address: u64) -> RefOutcome {
        let block = address / self.geometry.block_size;
        let n = self.geometry.num_sets as u64;
        let (idx, tag) = ((block % n) as usize, block / n);
        let policy = self.policy;
        let active = self.active.clone();
        let s = &mut self.sets[idx];
        if let Some(way) = s.ways.iter().position(|w| w.is_some_and(|(t, _)| t == tag)) {
            s.make_mru(way);
            return RefOutcome {
                hit: true,
                way,
                evicted: None,
            };
        }
        let way = match policy {
            RefPolicy::Lru => lru(s),
            RefPolicy::Tppd {
                spy_floor,
                trojan_floor,
            } => tppd(s, pid, spy_floor, trojan_floor),
            RefPolicy::Nomo { reserved } => nomo(s, pid, reserved, &active),
        };
        let evicted = s.ways[way];
        s.ways[way] = Some((tag, pid));
        s.make_mru(way);
        RefOutcome {
            hit: false,
            way,
            evicted,
        }
    }
}

fn lru(s: &RefSet) -> usize {
    s.ways.iter().position(Option::is_none).unwrap_or_else(|| s.recency[0])
}

fn tppd(s: &RefSet, p: Pid, spy_floor: usize, trojan_floor: usize) -> usize {
    let candidate = lru(s);
    let Some((spy, trojan)) = s.pair else {
        return candidate;
    };
    let Some((_, owner)) = s.ways[candidate] else {
        return candidate;
    };
    let suspicious = |q: Pid| q == spy || q == trojan;
    if !suspicious(p) || owner == p {
        return candidate;
    }
    let at_floor = (owner == spy && s.count(spy) <= spy_floor) || (owner == trojan && s.count(trojan) <= trojan_floor);
    if at_floor {
        return s
            .oldest(|o| o != owner)
            .expect("some block not owned by the protected process");
    }
    candidate
}

fn nomo(s: &RefSet, p: Pid, v: usize, active: &[Pid]) -> usize {
    let empty = s.ways.iter().filter(|w| w.is_none()).count();
    let owed: usize = active
        .iter()
        .filter(|&&q| q != p)
        .map(|&q| v.saturating_sub(s.count(q)))
        .sum();
    if empty > owed {
        return s.ways.iter().position(Option::is_none).unwrap();
    }
    s.oldest(|o| o == p || !active.contains(&o) || s.count(o) > v)
        .expect("an evictable block")
}
