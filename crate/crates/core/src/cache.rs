//! Set-associative cache storage with age-based LRU.
//!
//! Every way carries an age. Within a set the ages of the valid ways always
//! form the permutation `0..valid_count`: the most recently touched block has
//! age 0 and the least recently used block has the largest age. Touching,
//! filling and invalidating a way all preserve that shape, so no periodic
//! renormalization is needed.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, SimError};

/// Process identifier attached to every cached block.
///
/// In the single-process-per-core setup this is just the core id; nothing in
/// the simulator depends on the width of the identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Pid(pub u32);

impl fmt::Display for Pid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "P{}", self.0)
    }
}

/// Shape and hit latency of one cache level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheGeometry {
    pub num_sets: usize,
    pub associativity: usize,
    pub block_size: u64,
    /// Cycles charged when a lookup reaches this level.
    pub hit_latency: u64,
}

impl CacheGeometry {
    pub fn new(num_sets: usize, associativity: usize, block_size: u64, hit_latency: u64) -> Result<Self, ConfigError> {
        let geometry = Self {
            num_sets,
            associativity,
            block_size,
            hit_latency,
        };
        geometry.validate("geometry")?;
        Ok(geometry)
    }

    /// Builds a geometry from a total capacity in bytes.
    pub fn with_capacity(
        capacity: u64,
        associativity: usize,
        block_size: u64,
        hit_latency: u64,
    ) -> Result<Self, ConfigError> {
        let per_set = associativity as u64 * block_size;
        if per_set == 0 || !capacity.is_multiple_of(per_set) {
            return Err(ConfigError::new(
                "geometry.capacity",
                format!("{capacity} bytes is not a multiple of {associativity} x {block_size}"),
            ));
        }
        Self::new((capacity / per_set) as usize, associativity, block_size, hit_latency)
    }

    /// Private L1: 64 KB, 4-way, 64 B blocks, 2 cycles.
    pub fn default_l1() -> Self {
        Self {
            num_sets: 256,
            associativity: 4,
            block_size: 64,
            hit_latency: 2,
        }
    }

    /// Shared LLC: 2 MB, 8-way, 64 B blocks, 18 cycles.
    pub fn default_llc() -> Self {
        Self {
            num_sets: 4096,
            associativity: 8,
            block_size: 64,
            hit_latency: 18,
        }
    }

    pub fn validate(&self, path: &str) -> Result<(), ConfigError> {
        if self.num_sets == 0 || !self.num_sets.is_power_of_two() {
            return Err(ConfigError::new(
                format!("{path}.num_sets"),
                format!("must be a positive power of two, got {}", self.num_sets),
            ));
        }
        if self.block_size == 0 || !self.block_size.is_power_of_two() {
            return Err(ConfigError::new(
                format!("{path}.block_size"),
                format!("must be a positive power of two, got {}", self.block_size),
            ));
        }
        if self.associativity < 2 {
            return Err(ConfigError::new(
                format!("{path}.associativity"),
                format!("must be at least 2, got {}", self.associativity),
            ));
        }
        Ok(())
    }

    pub fn capacity(&self) -> u64 {
        self.num_sets as u64 * self.associativity as u64 * self.block_size
    }

    /// Splits a byte address into `(set_index, tag)`.
    pub fn map_address(&self, address: u64) -> (usize, u64) {
        self.map_block(address / self.block_size)
    }

    /// Splits a block number (address without offset bits) into `(set_index, tag)`.
    pub fn map_block(&self, block: u64) -> (usize, u64) {
        let sets = self.num_sets as u64;
        ((block % sets) as usize, block / sets)
    }

    /// Block number of the block stored at `(set_index, tag)`.
    pub fn block_number(&self, set_index: usize, tag: u64) -> u64 {
        tag * self.num_sets as u64 + set_index as u64
    }

    /// First byte address of the block stored at `(set_index, tag)`.
    pub fn block_address(&self, set_index: usize, tag: u64) -> u64 {
        self.block_number(set_index, tag) * self.block_size
    }
}

/// Metadata of one cache way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BlockMeta {
    pub valid: bool,
    pub tag: u64,
    pub owner: Pid,
    /// LRU recency; larger is older.
    pub age: u32,
}

impl BlockMeta {
    pub fn owned_by(&self, pid: Pid) -> bool {
        self.valid && self.owner == pid
    }

    fn owner_if_valid(&self) -> Option<Pid> {
        self.valid.then_some(self.owner)
    }
}

/// Plain LRU victim: the first invalid way if any, else the oldest way.
pub fn lru_victim(set: &[BlockMeta]) -> usize {
    if let Some(way) = set.iter().position(|b| !b.valid) {
        return way;
    }
    let mut victim = 0;
    for (way, block) in set.iter().enumerate().skip(1) {
        if block.age > set[victim].age {
            victim = way;
        }
    }
    victim
}

/// Oldest valid way not owned by `omit`.
///
/// Scans ascending and only replaces the candidate on a strictly greater age,
/// so the lowest way index wins any tie.
pub fn find_victim_except(set: &[BlockMeta], set_index: usize, omit: Pid) -> Result<usize, SimError> {
    let mut candidate: Option<usize> = None;
    for (way, block) in set.iter().enumerate() {
        if !block.valid || block.owner == omit {
            continue;
        }
        match candidate {
            Some(best) if set[best].age >= block.age => {}
            _ => candidate = Some(way),
        }
    }
    candidate.ok_or(SimError::NoEligibleVictim { set: set_index, omit })
}

/// Way holding `tag`, if resident.
pub fn lookup(set: &[BlockMeta], tag: u64) -> Option<usize> {
    set.iter().position(|b| b.valid && b.tag == tag)
}

/// Number of valid blocks owned by `pid`.
pub fn occupancy(set: &[BlockMeta], pid: Pid) -> usize {
    set.iter().filter(|b| b.owned_by(pid)).count()
}

/// Makes `way` the most recently used block of the set.
pub fn touch(set: &mut [BlockMeta], way: usize) {
    let previous = if set[way].valid {
        set[way].age
    } else {
        set.iter().filter(|b| b.valid).count() as u32
    };
    for (w, block) in set.iter_mut().enumerate() {
        if w != way && block.valid && block.age < previous {
            block.age += 1;
        }
    }
    set[way].valid = true;
    set[way].age = 0;
}

/// Installs a new block in `way` as the most recently used block and returns
/// the displaced block's `(tag, owner)`, if the way was valid.
pub fn fill(set: &mut [BlockMeta], way: usize, tag: u64, owner: Pid) -> Option<(u64, Pid)> {
    let displaced = set[way].owner_if_valid().map(|o| (set[way].tag, o));
    touch(set, way);
    set[way].tag = tag;
    set[way].owner = owner;
    displaced
}

/// Drops the block in `way`, closing the gap it leaves in the age order.
pub fn invalidate(set: &mut [BlockMeta], way: usize) {
    if !set[way].valid {
        return;
    }
    let age = set[way].age;
    set[way] = BlockMeta::default();
    for block in set.iter_mut().filter(|b| b.valid && b.age > age) {
        block.age -= 1;
    }
}

/// True when the valid ages of the set are exactly `0..valid_count`.
pub fn ages_are_permutation(set: &[BlockMeta]) -> bool {
    let mut ages: Vec<u32> = set.iter().filter(|b| b.valid).map(|b| b.age).collect();
    ages.sort_unstable();
    ages.iter().enumerate().all(|(i, &a)| a == i as u32)
}

/// One cache level: `num_sets * associativity` ways stored set-major.
#[derive(Debug, Clone)]
pub struct Cache {
    geometry: CacheGeometry,
    blocks: Vec<BlockMeta>,
}

impl Cache {
    pub fn new(geometry: CacheGeometry) -> Self {
        Self {
            blocks: vec![BlockMeta::default(); geometry.num_sets * geometry.associativity],
            geometry,
        }
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geometry
    }

    pub fn set(&self, index: usize) -> &[BlockMeta] {
        let a = self.geometry.associativity;
        &self.blocks[index * a..(index + 1) * a]
    }

    pub fn set_mut(&mut self, index: usize) -> &mut [BlockMeta] {
        let a = self.geometry.associativity;
        &mut self.blocks[index * a..(index + 1) * a]
    }

    pub fn sets(&self) -> impl Iterator<Item = &[BlockMeta]> {
        self.blocks.chunks(self.geometry.associativity)
    }

    /// Way holding the given block number, if resident.
    pub fn find_block(&self, block: u64) -> Option<(usize, usize)> {
        let (set, tag) = self.geometry.map_block(block);
        lookup(self.set(set), tag).map(|way| (set, way))
    }

    pub fn contains_block(&self, block: u64) -> bool {
        self.find_block(block).is_some()
    }

    /// Invalidates the block if present; returns whether it was resident.
    pub fn invalidate_block(&mut self, block: u64) -> bool {
        match self.find_block(block) {
            Some((set, way)) => {
                invalidate(self.set_mut(set), way);
                true
            }
            None => false,
        }
    }

    /// Block numbers of every valid block, in set-major order.
    pub fn resident_blocks(&self) -> impl Iterator<Item = u64> + '_ {
        self.sets().enumerate().flat_map(move |(set, ways)| {
            ways.iter()
                .filter(|b| b.valid)
                .map(move |b| self.geometry.block_number(set, b.tag))
        })
    }
}
