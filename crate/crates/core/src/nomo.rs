//! NoMo-style static way reservation, applied to every set and every process.
//!
//! Each active process owns `v` reserved ways in every set. A process may
//! always replace its own blocks, may replace another process's block only
//! when that process holds more than `v` blocks in the set, and may only take
//! an empty way if enough empty ways remain to cover the reservations of
//! processes still below `v`.

use serde::{Deserialize, Serialize};

use crate::cache::{BlockMeta, Pid};
use crate::error::{ConfigError, SimError};
use crate::hierarchy::ReplacementHook;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NomoConfig {
    reserved_ways: usize,
}

impl NomoConfig {
    pub fn new(reserved_ways: usize, active_processes: usize, associativity: usize) -> Result<Self, ConfigError> {
        if reserved_ways == 0 {
            return Err(ConfigError::new("defense.reserved_ways", "must be at least 1"));
        }
        if reserved_ways * active_processes > associativity {
            return Err(ConfigError::new(
                "defense.reserved_ways",
                format!(
                    "{reserved_ways} ways x {active_processes} processes exceeds the associativity {associativity}"
                ),
            ));
        }
        Ok(Self { reserved_ways })
    }

    pub fn reserved_ways(&self) -> usize {
        self.reserved_ways
    }
}

/// Victim for a fill by `p`, honoring every other active process's reservation.
pub fn nomo_victim(
    set: &[BlockMeta],
    set_index: usize,
    p: Pid,
    config: NomoConfig,
    active: &[Pid],
) -> Result<usize, SimError> {
    let v = config.reserved_ways;
    let held = |q: Pid| set.iter().filter(|b| b.owned_by(q)).count();

    let reserved_empty: usize = active
        .iter()
        .filter(|&&q| q != p)
        .map(|&q| v.saturating_sub(held(q)))
        .sum();
    let empty = set.iter().filter(|b| !b.valid).count();
    if empty > reserved_empty {
        if let Some(way) = set.iter().position(|b| !b.valid) {
            return Ok(way);
        }
    }

    let evictable = |b: &BlockMeta| b.valid && (b.owner == p || !active.contains(&b.owner) || held(b.owner) > v);
    let mut victim: Option<usize> = None;
    for (way, block) in set.iter().enumerate() {
        if !evictable(block) {
            continue;
        }
        match victim {
            Some(best) if set[best].age >= block.age => {}
            _ => victim = Some(way),
        }
    }
    victim.ok_or(SimError::NoEligibleVictim {
        set: set_index,
        omit: p,
    })
}

/// Replacement hook applying [`nomo_victim`] uniformly.
#[derive(Debug, Clone)]
pub struct NomoPolicy {
    config: NomoConfig,
    active: Vec<Pid>,
}

impl NomoPolicy {
    pub fn new(config: NomoConfig, mut active: Vec<Pid>) -> Self {
        active.sort_unstable();
        active.dedup();
        Self { config, active }
    }

    pub fn config(&self) -> NomoConfig {
        self.config
    }

    pub fn active(&self) -> &[Pid] {
        &self.active
    }
}

impl ReplacementHook for NomoPolicy {
    fn select_victim(&mut self, set_index: usize, set: &[BlockMeta], incoming: Pid) -> Result<usize, SimError> {
        nomo_victim(set, set_index, incoming, self.config, &self.active)
    }
}
