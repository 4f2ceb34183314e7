//! Two-level inclusive hierarchy: one private L1 per core in front of a
//! shared LLC.
//!
//! The LLC's recency state follows every reference issued by any core, L1 hits
//! included, so LLC replacement depends only on the reference stream and never
//! on which private copies happen to be cached.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cache::{self, BlockMeta, Cache, CacheGeometry, Pid};
use crate::error::{ConfigError, SimError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Op {
    Read,
    Write,
}

/// One memory reference issued by a process.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AccessRecord {
    pub pid: Pid,
    pub address: u64,
    pub op: Op,
}

impl AccessRecord {
    pub fn read(pid: Pid, address: u64) -> Self {
        Self {
            pid,
            address,
            op: Op::Read,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HitLevel {
    L1,
    Llc,
    Miss,
}

/// A valid LLC block displaced by a fill.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Eviction {
    pub way: usize,
    pub tag: u64,
    pub owner: Pid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessResult {
    pub level: HitLevel,
    pub latency: u64,
    /// LLC set the address maps to.
    pub set_index: usize,
    /// LLC way now holding the block.
    pub way: usize,
    pub evicted: Option<Eviction>,
    /// An L1 copy of the evicted block was dropped to keep inclusion.
    pub back_invalidated: bool,
}

impl AccessResult {
    pub fn is_llc_miss(&self) -> bool {
        self.level == HitLevel::Miss
    }
}

/// Chooses the LLC way to replace when a fill finds the set without a free way
/// the policy is willing to use.
///
/// Called exactly once per LLC miss, and the returned way is always filled, so
/// implementations may update their own bookkeeping as part of the decision.
pub trait ReplacementHook {
    fn select_victim(&mut self, set_index: usize, set: &[BlockMeta], incoming: Pid) -> Result<usize, SimError>;
}

/// Plain LRU.
#[derive(Debug, Clone, Copy, Default)]
pub struct Lru;

impl ReplacementHook for Lru {
    fn select_victim(&mut self, _set_index: usize, set: &[BlockMeta], _incoming: Pid) -> Result<usize, SimError> {
        Ok(cache::lru_victim(set))
    }
}

impl<P: ReplacementHook + ?Sized> ReplacementHook for Box<P> {
    fn select_victim(&mut self, set_index: usize, set: &[BlockMeta], incoming: Pid) -> Result<usize, SimError> {
        (**self).select_victim(set_index, set, incoming)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HierarchyConfig {
    pub cores: usize,
    pub l1: CacheGeometry,
    pub llc: CacheGeometry,
    /// Cycles added on an LLC miss.
    pub memory_latency: u64,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        Self {
            cores: 4,
            l1: CacheGeometry::default_l1(),
            llc: CacheGeometry::default_llc(),
            memory_latency: 250,
        }
    }
}

impl HierarchyConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.cores == 0 {
            return Err(ConfigError::new("cores", "must be at least 1"));
        }
        self.l1.validate("l1")?;
        self.llc.validate("llc")?;
        if self.l1.block_size != self.llc.block_size {
            return Err(ConfigError::new(
                "l1.block_size",
                format!(
                    "must equal llc.block_size ({} != {})",
                    self.l1.block_size, self.llc.block_size
                ),
            ));
        }
        Ok(())
    }

    pub fn l1_hit_latency(&self) -> u64 {
        self.l1.hit_latency
    }

    pub fn llc_hit_latency(&self) -> u64 {
        self.l1.hit_latency + self.llc.hit_latency
    }

    pub fn miss_latency(&self) -> u64 {
        self.llc_hit_latency() + self.memory_latency
    }
}

#[derive(Debug, Clone)]
pub struct Hierarchy<P> {
    config: HierarchyConfig,
    l1: Vec<Cache>,
    llc: Cache,
    policy: P,
    bindings: BTreeMap<Pid, usize>,
}

impl<P: ReplacementHook> Hierarchy<P> {
    pub fn new(config: HierarchyConfig, policy: P) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self {
            l1: (0..config.cores).map(|_| Cache::new(config.l1)).collect(),
            llc: Cache::new(config.llc),
            config,
            policy,
            bindings: BTreeMap::new(),
        })
    }

    /// Pins `pid` to `core`. Several processes may share a core.
    pub fn bind(&mut self, pid: Pid, core: usize) -> Result<(), SimError> {
        if core >= self.config.cores {
            return Err(SimError::UnknownCore {
                core,
                cores: self.config.cores,
            });
        }
        self.bindings.insert(pid, core);
        Ok(())
    }

    pub fn core_of(&self, pid: Pid) -> Option<usize> {
        self.bindings.get(&pid).copied()
    }

    pub fn processes(&self) -> impl Iterator<Item = Pid> + '_ {
        self.bindings.keys().copied()
    }

    pub fn config(&self) -> &HierarchyConfig {
        &self.config
    }

    pub fn llc(&self) -> &Cache {
        &self.llc
    }

    pub fn l1(&self, core: usize) -> &Cache {
        &self.l1[core]
    }

    pub fn policy(&self) -> &P {
        &self.policy
    }

    pub fn policy_mut(&mut self) -> &mut P {
        &mut self.policy
    }

    /// LLC contents alongside a mutable policy, for policies that need to
    /// inspect a set while updating their own state.
    pub fn llc_and_policy_mut(&mut self) -> (&Cache, &mut P) {
        (&self.llc, &mut self.policy)
    }

    pub fn access(&mut self, record: AccessRecord) -> Result<AccessResult, SimError> {
        let core = self.core_of(record.pid).ok_or(SimError::UnknownProcess(record.pid))?;
        let block = record.address / self.config.llc.block_size;
        let (set_index, tag) = self.config.llc.map_block(block);

        let l1 = &mut self.l1[core];
        let (l1_set, l1_tag) = self.config.l1.map_block(block);
        if let Some(way) = cache::lookup(l1.set(l1_set), l1_tag) {
            cache::touch(l1.set_mut(l1_set), way);
            // Inclusion guarantees the LLC copy exists.
            let llc_way =
                cache::lookup(self.llc.set(set_index), tag).expect("inclusion violated: L1 block missing from LLC");
            cache::touch(self.llc.set_mut(set_index), llc_way);
            return Ok(AccessResult {
                level: HitLevel::L1,
                latency: self.config.l1_hit_latency(),
                set_index,
                way: llc_way,
                evicted: None,
                back_invalidated: false,
            });
        }

        let mut evicted = None;
        let mut back_invalidated = false;
        let (level, way) = match cache::lookup(self.llc.set(set_index), tag) {
            Some(way) => {
                cache::touch(self.llc.set_mut(set_index), way);
                (HitLevel::Llc, way)
            }
            None => {
                let way = self
                    .policy
                    .select_victim(set_index, self.llc.set(set_index), record.pid)?;
                if let Some((old_tag, owner)) = cache::fill(self.llc.set_mut(set_index), way, tag, record.pid) {
                    evicted = Some(Eviction {
                        way,
                        tag: old_tag,
                        owner,
                    });
                    let old_block = self.config.llc.block_number(set_index, old_tag);
                    for l1 in &mut self.l1 {
                        back_invalidated |= l1.invalidate_block(old_block);
                    }
                }
                (HitLevel::Miss, way)
            }
        };

        let l1 = &mut self.l1[core];
        let l1_way = cache::lru_victim(l1.set(l1_set));
        cache::fill(l1.set_mut(l1_set), l1_way, l1_tag, record.pid);

        let latency = match level {
            HitLevel::Llc => self.config.llc_hit_latency(),
            _ => self.config.miss_latency(),
        };
        Ok(AccessResult {
            level,
            latency,
            set_index,
            way,
            evicted,
            back_invalidated,
        })
    }

    /// Every valid L1 block is also valid in the LLC.
    pub fn check_inclusion(&self) -> bool {
        self.l1
            .iter()
            .all(|l1| l1.resident_blocks().all(|b| self.llc.contains_block(b)))
    }

    /// Every set of every level has dense ages.
    pub fn check_ages(&self) -> bool {
        self.l1
            .iter()
            .chain(std::iter::once(&self.llc))
            .all(|c| c.sets().all(cache::ages_are_permutation))
    }
}
