//! Reference Prime+Probe covert channel over one LLC set.
//!
//! The spy fills the target set with its eviction set (prime), the trojan
//! either re-fills the set with its own eviction set (bit 1) or stays idle
//! (bit 0), and the spy times a second pass over its eviction set (probe).
//! The probe of one round is the prime of the next. Each pass walks the
//! eviction set in the opposite direction of the previous one, so blocks that
//! are still resident get touched before the pass's own misses can push them
//! out of an LRU set.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheGeometry, Pid};
use crate::error::SimError;
use crate::hierarchy::{AccessRecord, AccessResult, HierarchyConfig};
use crate::sim::Simulator;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttackError {
    #[error("eviction set needs at least {associativity} addresses, got {count}")]
    EvictionSetTooSmall { count: usize, associativity: usize },
    #[error("set index {set} out of range ({num_sets} sets)")]
    SetOutOfRange { set: usize, num_sets: usize },
    #[error("spy and trojan eviction sets share tags")]
    SharedTags,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Distinct block addresses that all map to one LLC set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvictionSet {
    pub set_index: usize,
    pub addresses: Vec<u64>,
    pub owner: Pid,
}

/// Addresses `(tag_seed + k) * num_sets * block_size + set_index * block_size`.
pub fn build_eviction_set(
    geometry: &CacheGeometry,
    set_index: usize,
    count: usize,
    owner: Pid,
    tag_seed: u64,
) -> Result<EvictionSet, AttackError> {
    if count < geometry.associativity {
        return Err(AttackError::EvictionSetTooSmall {
            count,
            associativity: geometry.associativity,
        });
    }
    if set_index >= geometry.num_sets {
        return Err(AttackError::SetOutOfRange {
            set: set_index,
            num_sets: geometry.num_sets,
        });
    }
    let addresses = (0..count as u64)
        .map(|k| geometry.block_address(set_index, tag_seed + k))
        .collect();
    Ok(EvictionSet {
        set_index,
        addresses,
        owner,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeOrder {
    Forward,
    Reverse,
}

impl ProbeOrder {
    pub fn flipped(self) -> Self {
        match self {
            ProbeOrder::Forward => ProbeOrder::Reverse,
            ProbeOrder::Reverse => ProbeOrder::Forward,
        }
    }

    /// Direction of the probe closing round `round`; the initial prime is forward.
    pub fn for_round(round: usize) -> Self {
        if round.is_multiple_of(2) {
            ProbeOrder::Reverse
        } else {
            ProbeOrder::Forward
        }
    }
}

impl EvictionSet {
    pub fn records(&self, order: ProbeOrder) -> Vec<AccessRecord> {
        let forward = self.addresses.iter().map(|&a| AccessRecord::read(self.owner, a));
        match order {
            ProbeOrder::Forward => forward.collect(),
            ProbeOrder::Reverse => forward.rev().collect(),
        }
    }
}

/// LLC misses and summed latency over one pass of the spy's eviction set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeOutcome {
    pub miss_count: usize,
    pub total_latency: u64,
}

impl ProbeOutcome {
    fn add(&mut self, result: &AccessResult) {
        self.miss_count += usize::from(result.is_llc_miss());
        self.total_latency += result.latency;
    }
}

/// Spy fills the target set.
pub fn prime(sim: &mut Simulator, spy: &EvictionSet, order: ProbeOrder) -> Result<(), SimError> {
    probe(sim, spy, order).map(|_| ())
}

/// Trojan sends one bit; returns the number of accesses issued.
pub fn transmit(sim: &mut Simulator, trojan: &EvictionSet, bit: bool) -> Result<usize, SimError> {
    if !bit {
        return Ok(0);
    }
    for record in trojan.records(ProbeOrder::Forward) {
        sim.access(record)?;
    }
    Ok(trojan.addresses.len())
}

/// Spy re-walks its eviction set and measures.
pub fn probe(sim: &mut Simulator, spy: &EvictionSet, order: ProbeOrder) -> Result<ProbeOutcome, SimError> {
    let mut outcome = ProbeOutcome::default();
    for record in spy.records(order) {
        outcome.add(&sim.access(record)?);
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Prime,
    Transmit,
    Probe,
}

/// One scheduled access of the channel. `round` is `None` for the initial prime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackEvent {
    pub record: AccessRecord,
    pub phase: Phase,
    pub round: Option<usize>,
}

/// Result of sending a bit string through the channel.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelRun {
    pub bits_sent: Vec<bool>,
    pub bits_decoded: Vec<bool>,
    pub per_bit_probe: Vec<ProbeOutcome>,
    pub decode_threshold: u64,
}

impl ChannelRun {
    /// A bit decodes as 1 iff its probe took strictly longer than the threshold.
    pub fn decode(bits_sent: Vec<bool>, per_bit_probe: Vec<ProbeOutcome>, decode_threshold: u64) -> Self {
        let bits_decoded = per_bit_probe
            .iter()
            .map(|p| p.total_latency > decode_threshold)
            .collect();
        Self {
            bits_sent,
            bits_decoded,
            per_bit_probe,
            decode_threshold,
        }
    }

    /// Fraction of bits recovered; 1.0 for an empty run.
    pub fn accuracy(&self) -> f64 {
        accuracy_of(&self.bits_sent, &self.bits_decoded)
    }

    /// Accuracy over rounds `range` only.
    pub fn accuracy_in(&self, range: std::ops::Range<usize>) -> f64 {
        accuracy_of(&self.bits_sent[range.clone()], &self.bits_decoded[range])
    }

    /// Distinct probe miss counts seen for bit 1 and for bit 0 among rounds `from..`.
    pub fn miss_counts_by_bit(&self, from: usize) -> (Vec<usize>, Vec<usize>) {
        let mut ones = Vec::new();
        let mut zeros = Vec::new();
        for (bit, probe) in self.bits_sent.iter().zip(&self.per_bit_probe).skip(from) {
            let bucket = if *bit { &mut ones } else { &mut zeros };
            if !bucket.contains(&probe.miss_count) {
                bucket.push(probe.miss_count);
            }
        }
        ones.sort_unstable();
        zeros.sort_unstable();
        (ones, zeros)
    }
}

fn accuracy_of(sent: &[bool], decoded: &[bool]) -> f64 {
    if sent.is_empty() {
        return 1.0;
    }
    let correct = sent.iter().zip(decoded).filter(|(a, b)| a == b).count();
    correct as f64 / sent.len() as f64
}

/// Threshold halfway between an all-hit and an all-miss probe of `probe_len` blocks.
pub fn midpoint_threshold(config: &HierarchyConfig, probe_len: usize) -> u64 {
    let n = probe_len as u64;
    (n * config.llc_hit_latency() + n * config.miss_latency()) / 2
}

/// `n` uniformly random bits from a fixed seed.
pub fn random_bits(n: usize, seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_bool(0.5)).collect()
}

/// Collects per-round probe outcomes from executed [`AttackEvent`]s.
#[derive(Debug, Clone, Default)]
pub struct ChannelRecorder {
    probes: Vec<ProbeOutcome>,
}

impl ChannelRecorder {
    pub fn new(rounds: usize) -> Self {
        Self {
            probes: vec![ProbeOutcome::default(); rounds],
        }
    }

    pub fn observe(&mut self, event: &AttackEvent, result: &AccessResult) {
        if let (Phase::Probe, Some(round)) = (event.phase, event.round) {
            self.probes[round].add(result);
        }
    }

    pub fn finish(self, bits: Vec<bool>, decode_threshold: u64) -> ChannelRun {
        ChannelRun::decode(bits, self.probes, decode_threshold)
    }
}

/// A spy/trojan pair sharing one target set through tag-disjoint eviction sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CovertChannel {
    spy: EvictionSet,
    trojan: EvictionSet,
}

impl CovertChannel {
    pub fn new(spy: EvictionSet, trojan: EvictionSet) -> Result<Self, AttackError> {
        if spy.addresses.iter().any(|a| trojan.addresses.contains(a)) {
            return Err(AttackError::SharedTags);
        }
        Ok(Self { spy, trojan })
    }

    /// Eviction sets of exactly `A` blocks each.
    pub fn standard(
        geometry: &CacheGeometry,
        set_index: usize,
        spy: Pid,
        trojan: Pid,
        spy_seed: u64,
        trojan_seed: u64,
    ) -> Result<Self, AttackError> {
        let a = geometry.associativity;
        Self::new(
            build_eviction_set(geometry, set_index, a, spy, spy_seed)?,
            build_eviction_set(geometry, set_index, a, trojan, trojan_seed)?,
        )
    }

    pub fn spy(&self) -> &EvictionSet {
        &self.spy
    }

    pub fn trojan(&self) -> &EvictionSet {
        &self.trojan
    }

    pub fn set_index(&self) -> usize {
        self.spy.set_index
    }

    /// The full access schedule for `bits`: initial prime, then per bit a
    /// transmit and a probe.
    pub fn plan(&self, bits: &[bool]) -> Vec<AttackEvent> {
        let mut events: Vec<AttackEvent> = self
            .spy
            .records(ProbeOrder::Forward)
            .into_iter()
            .map(|record| AttackEvent {
                record,
                phase: Phase::Prime,
                round: None,
            })
            .collect();
        for (round, &bit) in bits.iter().enumerate() {
            if bit {
                events.extend(
                    self.trojan
                        .records(ProbeOrder::Forward)
                        .into_iter()
                        .map(|record| AttackEvent {
                            record,
                            phase: Phase::Transmit,
                            round: Some(round),
                        }),
                );
            }
            events.extend(
                self.spy
                    .records(ProbeOrder::for_round(round))
                    .into_iter()
                    .map(|record| AttackEvent {
                        record,
                        phase: Phase::Probe,
                        round: Some(round),
                    }),
            );
        }
        events
    }

    /// Runs the channel alone on `sim`.
    pub fn run(&self, sim: &mut Simulator, bits: &[bool], decode_threshold: u64) -> Result<ChannelRun, SimError> {
        let mut recorder = ChannelRecorder::new(bits.len());
        for event in self.plan(bits) {
            let result = sim.access(event.record)?;
            recorder.observe(&event, &result);
        }
        Ok(recorder.finish(bits.to_vec(), decode_threshold))
    }
}
