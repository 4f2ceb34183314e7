//! Targeted pseudo-partitioning.
//!
//! Every LLC set carries a small tuple `(attack_flag, spy, trojan, spy_count,
//! trojan_count)`. Until a detector flags a set, the tuple is ignored and the
//! set replaces by plain LRU. Once engaged, the flagged pair can no longer push
//! each other below a per-process floor of ways in that set; every other
//! process, and every other set, keeps plain LRU.

use serde::{Deserialize, Serialize};

use crate::cache::{self, BlockMeta, Pid};
use crate::error::{ConfigError, SimError};
use crate::hierarchy::ReplacementHook;

/// Per-set engagement state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TppdSetState {
    pub attack_flag: bool,
    pub spy: Pid,
    pub trojan: Pid,
    /// Valid blocks owned by `spy` in the set.
    pub spy_count: usize,
    /// Valid blocks owned by `trojan` in the set.
    pub trojan_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Spy,
    Trojan,
    Innocent,
}

impl TppdSetState {
    fn role(&self, pid: Option<Pid>) -> Role {
        match pid {
            Some(p) if p == self.spy => Role::Spy,
            Some(p) if p == self.trojan => Role::Trojan,
            _ => Role::Innocent,
        }
    }
}

/// Partition floors, in ways, for the spy and the trojan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdConfig {
    spy_floor: usize,
    trojan_floor: usize,
}

impl ThresholdConfig {
    pub fn new(spy_floor: usize, trojan_floor: usize, associativity: usize) -> Result<Self, ConfigError> {
        if spy_floor == 0 || trojan_floor == 0 {
            return Err(ConfigError::new("defense.threshold", "thresholds must be at least 1"));
        }
        if spy_floor + trojan_floor > associativity {
            return Err(ConfigError::new(
                "defense.threshold",
                format!(
                    "th_s + th_t = {} exceeds the associativity {associativity}",
                    spy_floor + trojan_floor
                ),
            ));
        }
        Ok(Self {
            spy_floor,
            trojan_floor,
        })
    }

    /// TPPD-z: both floors equal to `z`, `1 <= z <= A/2`.
    pub fn symmetric(z: usize, associativity: usize) -> Result<Self, ConfigError> {
        Self::new(z, z, associativity)
    }

    pub fn spy_floor(&self) -> usize {
        self.spy_floor
    }

    pub fn trojan_floor(&self) -> usize {
        self.trojan_floor
    }
}

/// Adjusts the pair's counters for a block of `p_in` replacing a block of
/// `p_out` (`None` when the way was invalid).
pub fn update_counter(
    state: &mut TppdSetState,
    set_index: usize,
    associativity: usize,
    p_in: Pid,
    p_out: Option<Pid>,
) -> Result<(), SimError> {
    if Some(p_in) == p_out {
        return Ok(());
    }
    let underflow = SimError::CounterUnderflow { set: set_index };
    match state.role(p_out) {
        Role::Spy => state.spy_count = state.spy_count.checked_sub(1).ok_or(underflow)?,
        Role::Trojan => state.trojan_count = state.trojan_count.checked_sub(1).ok_or(underflow)?,
        Role::Innocent => {}
    }
    match state.role(Some(p_in)) {
        Role::Spy => state.spy_count += 1,
        Role::Trojan => state.trojan_count += 1,
        Role::Innocent => {}
    }
    if state.spy_count + state.trojan_count > associativity {
        return Err(SimError::CounterOverflow { set: set_index });
    }
    Ok(())
}

/// LLC replacement with the dual victim policy on engaged sets.
#[derive(Debug, Clone)]
pub struct TppdPolicy {
    states: Vec<TppdSetState>,
    thresholds: ThresholdConfig,
    associativity: usize,
}

impl TppdPolicy {
    pub fn new(num_sets: usize, associativity: usize, thresholds: ThresholdConfig) -> Self {
        Self {
            states: vec![TppdSetState::default(); num_sets],
            thresholds,
            associativity,
        }
    }

    pub fn thresholds(&self) -> ThresholdConfig {
        self.thresholds
    }

    pub fn state(&self, set_index: usize) -> &TppdSetState {
        &self.states[set_index]
    }

    pub fn engaged_sets(&self) -> impl Iterator<Item = usize> + '_ {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, s)| s.attack_flag)
            .map(|(i, _)| i)
    }

    /// Turns the dual victim policy on for `set_index`, seeding the counters
    /// from the current set contents.
    ///
    /// Re-engaging the same pair is a no-op; a different pair is rejected.
    pub fn engage(
        &mut self,
        set_index: usize,
        spy: Pid,
        trojan: Pid,
        set: &[BlockMeta],
    ) -> Result<TppdSetState, SimError> {
        if spy == trojan {
            return Err(SimError::SamePair(spy));
        }
        let num_sets = self.states.len();
        let state = self.states.get_mut(set_index).ok_or(SimError::SetOutOfRange {
            set: set_index,
            num_sets,
        })?;
        if state.attack_flag {
            if state.spy == spy && state.trojan == trojan {
                return Ok(*state);
            }
            return Err(SimError::AlreadyEngaged {
                set: set_index,
                spy: state.spy,
                trojan: state.trojan,
            });
        }
        *state = TppdSetState {
            attack_flag: true,
            spy,
            trojan,
            spy_count: cache::occupancy(set, spy),
            trojan_count: cache::occupancy(set, trojan),
        };
        Ok(*state)
    }

    /// Returns the set to plain LRU. Not used by the default engagement mode,
    /// which keeps a flagged set engaged for the rest of the run.
    pub fn disengage(&mut self, set_index: usize) {
        self.states[set_index] = TppdSetState::default();
    }

    /// Picks the way to replace when process `p` misses in `set_index`.
    pub fn eviction_victim(&mut self, set_index: usize, p: Pid, set: &[BlockMeta]) -> Result<usize, SimError> {
        let lru = cache::lru_victim(set);
        let state = &mut self.states[set_index];
        if !state.attack_flag {
            return Ok(lru);
        }
        let lru_owner = set[lru].valid.then_some(set[lru].owner);
        let victim_role = state.role(lru_owner);

        if state.role(Some(p)) == Role::Innocent || lru_owner == Some(p) {
            update_counter(state, set_index, self.associativity, p, lru_owner)?;
            return Ok(lru);
        }

        // A suspicious process is about to evict the other one's block: refuse
        // if that would take the owner below its floor.
        let protected = match victim_role {
            Role::Spy => state.spy_count <= self.thresholds.spy_floor,
            Role::Trojan => state.trojan_count <= self.thresholds.trojan_floor,
            Role::Innocent => false,
        };
        if protected {
            let omit = lru_owner.expect("protected victim is always valid");
            let alternate = cache::find_victim_except(set, set_index, omit)?;
            // The alternate is either p's own block (no change) or an innocent one.
            update_counter(state, set_index, self.associativity, p, Some(set[alternate].owner))?;
            return Ok(alternate);
        }

        update_counter(state, set_index, self.associativity, p, lru_owner)?;
        Ok(lru)
    }
}

impl ReplacementHook for TppdPolicy {
    fn select_victim(&mut self, set_index: usize, set: &[BlockMeta], incoming: Pid) -> Result<usize, SimError> {
        self.eviction_victim(set_index, incoming, set)
    }
}
