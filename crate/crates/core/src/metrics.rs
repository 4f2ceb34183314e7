//! Evaluation quantities: miss counts, MPKI, the isolated-impact metrics and
//! the defense's storage overhead.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::Pid;
use crate::hierarchy::{AccessResult, HitLevel};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("average over an empty benchmark set")]
    EmptyBenchmarkSet,
    #[error("division by zero: no accesses")]
    DivisionByZero,
    #[error("associativity {0} is not a power of two")]
    AssociativityNotPowerOfTwo(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PidStats {
    pub accesses: u64,
    pub l1_hits: u64,
    pub llc_hits: u64,
    pub llc_misses: u64,
}

/// Counters accumulated over one simulation run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub total_accesses: u64,
    pub l1_hits: u64,
    pub llc_hits: u64,
    pub llc_misses: u64,
    pub per_pid: BTreeMap<Pid, PidStats>,
    /// LLC misses per set, only sets with at least one miss.
    pub per_set_misses: BTreeMap<usize, u64>,
}

impl RunStats {
    pub fn record(&mut self, pid: Pid, result: &AccessResult) {
        self.total_accesses += 1;
        let p = self.per_pid.entry(pid).or_default();
        p.accesses += 1;
        match result.level {
            HitLevel::L1 => {
                self.l1_hits += 1;
                p.l1_hits += 1;
            }
            HitLevel::Llc => {
                self.llc_hits += 1;
                p.llc_hits += 1;
            }
            HitLevel::Miss => {
                self.llc_misses += 1;
                p.llc_misses += 1;
                *self.per_set_misses.entry(result.set_index).or_default() += 1;
            }
        }
    }

    /// Accesses that missed in L1 and looked up the LLC.
    pub fn llc_lookups(&self) -> u64 {
        self.llc_hits + self.llc_misses
    }

    pub fn pid(&self, pid: Pid) -> PidStats {
        self.per_pid.get(&pid).copied().unwrap_or_default()
    }

    pub fn mpki(&self) -> Result<f64, MetricsError> {
        mpki(self.llc_misses, self.total_accesses)
    }
}

/// Extra LLC misses of a defended attack-only run over the undefended one.
pub fn diff(misses_z: u64, misses_0: u64) -> i64 {
    misses_z as i64 - misses_0 as i64
}

/// Extra misses attributable to the defense for one benchmark, beyond what the
/// attack-only run already shows.
pub fn isolated_impact(diff_prime: i64, diff_attack_only: i64) -> i64 {
    diff_prime - diff_attack_only
}

pub fn avg_impact(impacts: &[i64]) -> Result<f64, MetricsError> {
    if impacts.is_empty() {
        return Err(MetricsError::EmptyBenchmarkSet);
    }
    Ok(impacts.iter().sum::<i64>() as f64 / impacts.len() as f64)
}

/// Misses per thousand memory accesses. There is no instruction stream in a
/// trace-driven run, so accesses stand in for instructions.
pub fn mpki(misses: u64, accesses: u64) -> Result<f64, MetricsError> {
    if accesses == 0 {
        return Err(MetricsError::DivisionByZero);
    }
    Ok(misses as f64 * 1000.0 / accesses as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageOverhead {
    pub bits_per_set: u64,
    pub total_bits: u64,
    pub total_bytes: f64,
}

impl StorageOverhead {
    pub fn total_kib(&self) -> f64 {
        self.total_bytes / 1024.0
    }
}

/// Per-set tuple cost: one flag bit, two process ids of `id_bits` each and two
/// counters of `log2(A)` bits each.
pub fn storage_overhead(num_sets: u64, associativity: usize, id_bits: u64) -> Result<StorageOverhead, MetricsError> {
    if associativity == 0 || !associativity.is_power_of_two() {
        return Err(MetricsError::AssociativityNotPowerOfTwo(associativity));
    }
    let counter_bits = u64::from(associativity.trailing_zeros());
    let bits_per_set = 1 + 2 * (id_bits + counter_bits);
    let total_bits = bits_per_set * num_sets;
    Ok(StorageOverhead {
        bits_per_set,
        total_bits,
        total_bytes: total_bits as f64 / 8.0,
    })
}

/// One benchmark's row of the impact table for a given `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactRow {
    pub z: usize,
    pub benchmark: String,
    pub misses: u64,
    pub misses_baseline: u64,
    /// `DIFF'`: this benchmark's misses under TPPD-z minus under no defense.
    pub diff_prime: i64,
    /// Isolated impact `D = DIFF' - DIFF`.
    pub impact: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactSummary {
    pub z: usize,
    pub attack_only_misses: u64,
    /// `DIFF`: attack-only misses under TPPD-z minus under no defense.
    pub diff: i64,
    pub avg_impact: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImpactTable {
    pub rows: Vec<ImpactRow>,
    pub summaries: Vec<ImpactSummary>,
}

impl ImpactTable {
    /// Assembles the table from total LLC misses keyed by `(z, workload)`.
    ///
    /// `attack_only` names the workload without benign co-runners; `z = 0` is
    /// the undefended baseline and must be present for every workload.
    pub fn build(misses: &BTreeMap<(usize, String), u64>, attack_only: &str) -> Result<Self, ImpactError> {
        let zs: Vec<usize> = {
            let mut zs: Vec<usize> = misses.keys().map(|(z, _)| *z).collect();
            zs.dedup();
            zs
        };
        let benchmarks: Vec<String> = {
            let mut b: Vec<String> = misses
                .keys()
                .map(|(_, w)| w.clone())
                .filter(|w| w != attack_only)
                .collect();
            b.sort();
            b.dedup();
            b
        };
        let get = |z: usize, w: &str| {
            misses
                .get(&(z, w.to_string()))
                .copied()
                .ok_or_else(|| ImpactError::MissingCell {
                    z,
                    workload: w.to_string(),
                })
        };
        if benchmarks.is_empty() {
            return Err(MetricsError::EmptyBenchmarkSet.into());
        }
        let base_attack = get(0, attack_only)?;
        let mut rows = Vec::new();
        let mut summaries = Vec::new();
        for &z in zs.iter().filter(|&&z| z > 0) {
            let attack_z = get(z, attack_only)?;
            let d = diff(attack_z, base_attack);
            let mut impacts = Vec::new();
            for b in &benchmarks {
                let m = get(z, b)?;
                let m0 = get(0, b)?;
                let diff_prime = diff(m, m0);
                let impact = isolated_impact(diff_prime, d);
                impacts.push(impact);
                rows.push(ImpactRow {
                    z,
                    benchmark: b.clone(),
                    misses: m,
                    misses_baseline: m0,
                    diff_prime,
                    impact,
                });
            }
            summaries.push(ImpactSummary {
                z,
                attack_only_misses: attack_z,
                diff: d,
                avg_impact: avg_impact(&impacts)?,
            });
        }
        Ok(Self { rows, summaries })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ImpactError {
    #[error("matrix has no cell for z = {z}, workload `{workload}`")]
    MissingCell { z: usize, workload: String },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}
