//! Synthetic benign traces, trace interleaving and the plain-text trace format.
//!
//! A trace file holds one access per line as `pid,R|W,0xADDRESS`. Blank lines
//! and everything after `#` are ignored.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{CacheGeometry, Pid};
use crate::error::ConfigError;
use crate::hierarchy::{AccessRecord, Op};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TraceEvent {
    pub seq: u64,
    pub pid: Pid,
    pub address: u64,
    pub op: Op,
}

impl TraceEvent {
    pub fn record(&self) -> AccessRecord {
        AccessRecord {
            pid: self.pid,
            address: self.address,
            op: self.op,
        }
    }
}

/// Renumbers `events` as `0, 1, 2, ...` in their current order.
pub fn resequence(events: &mut [TraceEvent]) {
    for (i, e) in events.iter_mut().enumerate() {
        e.seq = i as u64;
    }
}

/// Parameters of one synthetic benign process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenignProfile {
    pub pid: Pid,
    /// LLC sets the process touches.
    pub footprint_sets: Range<usize>,
    /// Probability that an event re-issues an earlier block.
    pub locality: f64,
    /// Number of distinct blocks a fresh draw picks from.
    pub working_set_blocks: u64,
    pub rng_seed: u64,
    /// Tag offset keeping this process's blocks apart from everyone else's.
    pub tag_base: u64,
    #[serde(default)]
    pub write_fraction: f64,
}

impl BenignProfile {
    pub fn validate(&self, geometry: &CacheGeometry) -> Result<(), ConfigError> {
        if self.footprint_sets.is_empty() {
            return Err(ConfigError::new("workload.footprint_sets", "footprint is empty"));
        }
        if self.footprint_sets.end > geometry.num_sets {
            return Err(ConfigError::new(
                "workload.footprint_sets",
                format!(
                    "ends at {} but the LLC has {} sets",
                    self.footprint_sets.end, geometry.num_sets
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.locality) {
            return Err(ConfigError::new("workload.locality", "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.write_fraction) {
            return Err(ConfigError::new("workload.write_fraction", "must lie in [0, 1]"));
        }
        if self.working_set_blocks == 0 {
            return Err(ConfigError::new("workload.working_set_blocks", "must be at least 1"));
        }
        Ok(())
    }

    /// Address of the `k`-th block of the working set. Consecutive blocks
    /// walk the footprint's sets before moving to the next tag.
    pub fn block_address(&self, geometry: &CacheGeometry, k: u64) -> u64 {
        let len = self.footprint_sets.len() as u64;
        let set = self.footprint_sets.start + (k % len) as usize;
        geometry.block_address(set, self.tag_base + k / len)
    }
}

/// Draws `n_events` accesses for `profile`. The profile is assumed valid.
pub fn generate_benign(profile: &BenignProfile, geometry: &CacheGeometry, n_events: usize) -> Vec<TraceEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(profile.rng_seed);
    let mut issued: Vec<u64> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut out = Vec::with_capacity(n_events);
    for seq in 0..n_events as u64 {
        let k = if !issued.is_empty() && rng.gen_bool(profile.locality) {
            issued[rng.gen_range(0..issued.len())]
        } else {
            let k = rng.gen_range(0..profile.working_set_blocks);
            if seen.insert(k) {
                issued.push(k);
            }
            k
        };
        let op = if profile.write_fraction > 0.0 && rng.gen_bool(profile.write_fraction) {
            Op::Write
        } else {
            Op::Read
        };
        out.push(TraceEvent {
            seq,
            pid: profile.pid,
            address: profile.block_address(geometry, k),
            op,
        });
    }
    out
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    #[default]
    RoundRobin,
    /// Take `ratio[i]` consecutive events from trace `i` per turn.
    Ratio(Vec<usize>),
}

/// Deterministic merge of `traces`. Each trace keeps its internal order; once
/// a trace runs out the remaining ones continue in the same pattern.
pub fn interleave<T>(traces: Vec<Vec<T>>, schedule: &Schedule) -> Vec<T> {
    let quotas: Vec<usize> = match schedule {
        Schedule::RoundRobin => vec![1; traces.len()],
        Schedule::Ratio(r) => (0..traces.len()).map(|i| r.get(i).copied().unwrap_or(1)).collect(),
    };
    let total = traces.iter().map(Vec::len).sum();
    let mut iters: Vec<_> = traces.into_iter().map(Vec::into_iter).collect();
    let mut out = Vec::with_capacity(total);
    while out.len() < total {
        let before = out.len();
        for (it, &q) in iters.iter_mut().zip(&quotas) {
            out.extend(it.by_ref().take(q));
        }
        if out.len() == before {
            // Only zero-quota traces remain.
            for it in iters.iter_mut() {
                out.extend(it.by_ref());
            }
        }
    }
    out
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn parse_line(line: &str, line_no: usize, seq: u64) -> Result<Option<TraceEvent>, TraceError> {
    let content = line.split('#').next().unwrap_or("").trim();
    if content.is_empty() {
        return Ok(None);
    }
    let err = |message: String| TraceError::Parse { line: line_no, message };
    let fields: Vec<&str> = content.split(',').map(str::trim).collect();
    let [pid, op, addr] = fields.as_slice() else {
        return Err(err(format!("expected `pid,R|W,0xADDRESS`, got `{content}`")));
    };
    let pid = pid.parse::<u32>().map_err(|_| err(format!("bad pid `{pid}`")))?;
    let op = match *op {
        "R" => Op::Read,
        "W" => Op::Write,
        other => return Err(err(format!("bad op `{other}`"))),
    };
    let hex = addr
        .strip_prefix("0x")
        .or_else(|| addr.strip_prefix("0X"))
        .ok_or_else(|| err(format!("address `{addr}` lacks 0x prefix")))?;
    let address = u64::from_str_radix(hex, 16).map_err(|_| err(format!("bad hex address `{addr}`")))?;
    Ok(Some(TraceEvent {
        seq,
        pid: Pid(pid),
        address,
        op,
    }))
}

/// Parses trace text; events are numbered in file order.
pub fn parse_trace(text: &str) -> Result<Vec<TraceEvent>, TraceError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if let Some(e) = parse_line(line, i + 1, out.len() as u64)? {
            out.push(e);
        }
    }
    Ok(out)
}

pub fn format_trace(events: &[TraceEvent]) -> String {
    let mut s = String::with_capacity(events.len() * 20);
    for e in events {
        let op = match e.op {
            Op::Read => 'R',
            Op::Write => 'W',
        };
        let _ = writeln!(s, "{},{},{:#x}", e.pid.0, op, e.address);
    }
    s
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceEvent>, TraceError> {
    parse_trace(&fs::read_to_string(path)?)
}

pub fn write_trace(path: impl AsRef<Path>, events: &[TraceEvent]) -> Result<(), TraceError> {
    fs::write(path, format_trace(events))?;
    Ok(())
}

/// Shape of one process in a preset mix, with the footprint given in eighths
/// of the LLC's sets.
#[derive(Debug, Clone, Copy)]
struct Shape {
    eighths: (usize, usize),
    locality: f64,
    /// Working set in multiples of the LLC's set count.
    ws_per_set: u64,
    write_fraction: f64,
}

const fn shape(lo: usize, hi: usize, locality: f64, ws_per_set: u64, write_fraction: f64) -> Shape {
    Shape {
        eighths: (lo, hi),
        locality,
        ws_per_set,
        write_fraction,
    }
}

const PRESETS: [(&str, [Shape; 2]); 7] = [
    ("mix1", [shape(0, 8, 0.90, 4, 0.2), shape(0, 8, 0.80, 2, 0.1)]),
    ("mix2", [shape(0, 4, 0.70, 1, 0.3), shape(4, 8, 0.95, 1, 0.0)]),
    ("mix3", [shape(0, 8, 0.50, 8, 0.1), shape(0, 8, 0.90, 1, 0.2)]),
    ("mix4", [shape(0, 2, 0.85, 2, 0.2), shape(0, 8, 0.60, 4, 0.1)]),
    ("mix5", [shape(0, 8, 0.95, 16, 0.0), shape(0, 8, 0.95, 16, 0.3)]),
    ("mix6", [shape(2, 6, 0.75, 3, 0.1), shape(0, 8, 0.90, 1, 0.1)]),
    ("mix7", [shape(0, 8, 0.30, 2, 0.2), shape(4, 8, 0.80, 5, 0.0)]),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// Tag offset for a benign pid, far above any tag used by eviction sets.
pub fn benign_tag_base(pid: Pid) -> u64 {
    (u64::from(pid.0) + 1) << 32
}

/// The two benign co-runners of preset `name` for an LLC of shape `llc`.
pub fn mix_profiles(
    name: &str,
    llc: &CacheGeometry,
    pids: [Pid; 2],
    seed: u64,
) -> Result<Vec<BenignProfile>, ConfigError> {
    let (_, shapes) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| ConfigError::new("workload.benign", format!("unknown preset `{name}`")))?;
    let n = llc.num_sets;
    Ok(shapes
        .iter()
        .zip(pids)
        .enumerate()
        .map(|(i, (s, pid))| {
            let start = n * s.eighths.0 / 8;
            let end = (n * s.eighths.1 / 8).max(start + 1);
            BenignProfile {
                pid,
                footprint_sets: start..end,
                locality: s.locality,
                working_set_blocks: s.ws_per_set * n as u64,
                rng_seed: seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i as u64 + 1),
                tag_base: benign_tag_base(pid),
                write_fraction: s.write_fraction,
            }
        })
        .collect())
}
