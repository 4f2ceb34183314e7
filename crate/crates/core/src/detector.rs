//! Covert-channel detection from LLC eviction behaviour.
//!
//! The online detector counts cross-process evictions per set and per ordered
//! `(evictor, victim owner)` pair, and at every epoch boundary flags the set
//! whose busiest pair evicts each other in both directions often enough. The
//! offline analyzer correlates per-set occupancy time series of two processes.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{BlockMeta, Pid};
use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Epoch length in memory accesses.
    pub epoch_length: u64,
    /// Minimum bidirectional cross-eviction count per set per epoch.
    pub threshold: u64,
}

impl DetectorConfig {
    /// 10,000-access epochs and a threshold of `4 * associativity`.
    pub fn for_associativity(associativity: usize) -> Self {
        Self {
            epoch_length: 10_000,
            threshold: 4 * associativity as u64,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.epoch_length == 0 {
            return Err(ConfigError::new("detector.epoch_length", "must be positive"));
        }
        if self.threshold == 0 {
            return Err(ConfigError::new("detector.threshold", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub set_index: usize,
    pub spy: Pid,
    pub trojan: Pid,
    pub epoch: u64,
    pub pair_score: u64,
}

/// Cross-process eviction counts for the current epoch.
#[derive(Debug, Clone, Default)]
pub struct DetectorEpochStats {
    counts: HashMap<usize, HashMap<(Pid, Pid), u64>>,
    current_epoch: u64,
}

/// One row of the per-epoch dump: cross-evictions between a pair on a set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairCount {
    pub epoch: u64,
    pub set_index: usize,
    pub a: Pid,
    pub b: Pid,
    pub a_evicts_b: u64,
    pub b_evicts_a: u64,
}

impl DetectorEpochStats {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn current_epoch(&self) -> u64 {
        self.current_epoch
    }

    /// Counts an eviction of `victim_owner`'s block caused by `evictor`.
    pub fn record_eviction(&mut self, set_index: usize, evictor: Pid, victim_owner: Pid) {
        if evictor == victim_owner {
            return;
        }
        *self
            .counts
            .entry(set_index)
            .or_default()
            .entry((evictor, victim_owner))
            .or_default() += 1;
    }

    pub fn count(&self, set_index: usize, evictor: Pid, victim_owner: Pid) -> u64 {
        self.counts
            .get(&set_index)
            .and_then(|m| m.get(&(evictor, victim_owner)))
            .copied()
            .unwrap_or(0)
    }

    /// Unordered pairs on `set_index` with their directional counts, sorted by pair.
    pub fn pairs(&self, set_index: usize) -> Vec<PairCount> {
        let Some(per_set) = self.counts.get(&set_index) else {
            return Vec::new();
        };
        let mut pairs: BTreeMap<(Pid, Pid), (u64, u64)> = BTreeMap::new();
        for (&(evictor, owner), &n) in per_set {
            let key = (evictor.min(owner), evictor.max(owner));
            let entry = pairs.entry(key).or_default();
            if evictor == key.0 {
                entry.0 += n;
            } else {
                entry.1 += n;
            }
        }
        pairs
            .into_iter()
            .map(|((a, b), (ab, ba))| PairCount {
                epoch: self.current_epoch,
                set_index,
                a,
                b,
                a_evicts_b: ab,
                b_evicts_a: ba,
            })
            .collect()
    }

    /// Sets with any cross-process eviction this epoch, ascending.
    pub fn active_sets(&self) -> Vec<usize> {
        let mut sets: Vec<usize> = self.counts.keys().copied().collect();
        sets.sort_unstable();
        sets
    }

    /// Verdict for one set: the highest-scoring pair that evicted each other in
    /// both directions, if its score reaches `threshold`. The lower pid is
    /// labelled spy.
    pub fn evaluate_epoch(&self, set_index: usize, threshold: u64) -> Option<DetectionVerdict> {
        self.pairs(set_index)
            .into_iter()
            .filter(|p| p.a_evicts_b > 0 && p.b_evicts_a > 0)
            .map(|p| (p.a_evicts_b + p.b_evicts_a, p))
            // max_by_key keeps the last maximum; pairs are ascending, so reverse
            // to keep the lowest pair on ties.
            .rev()
            .max_by_key(|(score, _)| *score)
            .filter(|(score, _)| *score >= threshold)
            .map(|(score, p)| DetectionVerdict {
                set_index,
                spy: p.a,
                trojan: p.b,
                epoch: self.current_epoch,
                pair_score: score,
            })
    }

    /// Zeroes every counter and moves to the next epoch.
    pub fn reset(&mut self) {
        self.counts.clear();
        self.current_epoch += 1;
    }
}

/// Epoch-driven detector wrapping [`DetectorEpochStats`].
#[derive(Debug, Clone)]
pub struct CcaDetector {
    config: DetectorConfig,
    stats: DetectorEpochStats,
    accesses_in_epoch: u64,
    history: Vec<PairCount>,
    keep_history: bool,
}

impl CcaDetector {
    pub fn new(config: DetectorConfig) -> Self {
        Self {
            config,
            stats: DetectorEpochStats::new(),
            accesses_in_epoch: 0,
            history: Vec::new(),
            keep_history: false,
        }
    }

    /// Keep every per-epoch pair count for later CSV export.
    pub fn with_history(mut self) -> Self {
        self.keep_history = true;
        self
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn stats(&self) -> &DetectorEpochStats {
        &self.stats
    }

    pub fn history(&self) -> &[PairCount] {
        &self.history
    }

    pub fn record_eviction(&mut self, set_index: usize, evictor: Pid, victim_owner: Pid) {
        self.stats.record_eviction(set_index, evictor, victim_owner);
    }

    /// Advances the access clock by one. At an epoch boundary, returns the
    /// verdicts of the closing epoch and starts a fresh one.
    pub fn tick(&mut self) -> Option<Vec<DetectionVerdict>> {
        self.accesses_in_epoch += 1;
        if self.accesses_in_epoch < self.config.epoch_length {
            return None;
        }
        Some(self.close_epoch())
    }

    /// Evaluates every active set, then resets the counters.
    pub fn close_epoch(&mut self) -> Vec<DetectionVerdict> {
        let sets = self.stats.active_sets();
        if self.keep_history {
            for &set in &sets {
                self.history.extend(self.stats.pairs(set));
            }
        }
        let verdicts = sets
            .into_iter()
            .filter_map(|s| self.stats.evaluate_epoch(s, self.config.threshold))
            .collect();
        self.stats.reset();
        self.accesses_in_epoch = 0;
        verdicts
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CorrelationError {
    #[error("traces differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least two samples, got {0}")]
    TooShort(usize),
    #[error("occupancy trace has zero variance")]
    DegenerateTrace,
}

/// Pearson correlation of two occupancy time series.
pub fn occupancy_correlation(a: &[f64], b: &[f64]) -> Result<f64, CorrelationError> {
    if a.len() != b.len() {
        return Err(CorrelationError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return Err(CorrelationError::TooShort(n));
    }
    let mean = |x: &[f64]| x.iter().sum::<f64>() / n as f64;
    let (ma, mb) = (mean(a), mean(b));
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        cov += dx * dy;
        va += dx * dx;
        vb += dy * dy;
    }
    if va == 0.0 || vb == 0.0 {
        return Err(CorrelationError::DegenerateTrace);
    }
    Ok((cov / (va.sqrt() * vb.sqrt())).clamp(-1.0, 1.0))
}

/// Samples per-process occupancy of one LLC set at a fixed access interval.
#[derive(Debug, Clone)]
pub struct OccupancyTracker {
    set_index: usize,
    interval: u64,
    pids: Vec<Pid>,
    samples: Vec<Vec<f64>>,
    ticks: u64,
}

impl OccupancyTracker {
    pub fn new(set_index: usize, interval: u64, pids: Vec<Pid>) -> Self {
        let samples = vec![Vec::new(); pids.len()];
        Self {
            set_index,
            interval: interval.max(1),
            pids,
            samples,
            ticks: 0,
        }
    }

    pub fn set_index(&self) -> usize {
        self.set_index
    }

    /// Called once per access with the tracked set's current contents.
    pub fn tick(&mut self, set: &[BlockMeta]) {
        self.ticks += 1;
        if !self.ticks.is_multiple_of(self.interval) {
            return;
        }
        for (pid, series) in self.pids.iter().zip(&mut self.samples) {
            series.push(set.iter().filter(|b| b.owned_by(*pid)).count() as f64);
        }
    }

    pub fn series(&self, pid: Pid) -> Option<&[f64]> {
        self.pids
            .iter()
            .position(|&p| p == pid)
            .map(|i| self.samples[i].as_slice())
    }

    pub fn correlation(&self, a: Pid, b: Pid) -> Result<f64, CorrelationError> {
        let empty: &[f64] = &[];
        occupancy_correlation(self.series(a).unwrap_or(empty), self.series(b).unwrap_or(empty))
    }
}
