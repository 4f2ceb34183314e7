//! Browser bindings for the simulator. Each export returns a JSON string; the
//! plain `*_json` functions behind them are what the native tests exercise.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use tppd_core::attack::{build_eviction_set, midpoint_threshold, random_bits, CovertChannel, EvictionSet, ProbeOrder};
use tppd_core::{AccessRecord, CacheGeometry, DefenseSpec, HierarchyConfig, HitLevel, Pid, Simulator};

const SPY: Pid = Pid(0);
const TROJAN: Pid = Pid(1);
const MAX_BITS: usize = 8192;

#[derive(Serialize)]
struct Round {
    bit: bool,
    decoded: bool,
    misses: usize,
    latency: u64,
}

#[derive(Serialize)]
struct ChannelTrace {
    defense: String,
    associativity: usize,
    threshold: u64,
    accuracy: f64,
    rounds: Vec<Round>,
}

fn parse_defense(kind: &str, z: usize) -> Result<DefenseSpec, String> {
    match kind {
        "none" => Ok(DefenseSpec::None),
        "tppd" => Ok(DefenseSpec::tppd(z)),
        "nomo" => Ok(DefenseSpec::nomo(z)),
        other => Err(format!("unknown defense `{other}` (expected none, tppd or nomo)")),
    }
}

/// Runs the covert channel on the default hierarchy. TPPD is engaged on the
/// target set from the start.
pub fn channel_trace_json(defense: &str, z: usize, bits: usize, seed: u64) -> Result<String, String> {
    if bits == 0 || bits > MAX_BITS {
        return Err(format!("bits must be in 1..={MAX_BITS}"));
    }
    let spec = parse_defense(defense, z)?;
    let config = HierarchyConfig::default();
    let mut sim = Simulator::new(config, &spec, &[(SPY, 0), (TROJAN, 1)]).map_err(|e| e.to_string())?;
    let set = 77;
    if matches!(spec, DefenseSpec::Tppd { .. }) {
        sim.engage(set, SPY, TROJAN).map_err(|e| e.to_string())?;
    }
    let a = config.llc.associativity;
    let ch = CovertChannel::standard(&config.llc, set, SPY, TROJAN, 0, 1000).map_err(|e| e.to_string())?;
    let threshold = midpoint_threshold(&config, a);
    let sent = random_bits(bits, seed);
    let run = ch.run(&mut sim, &sent, threshold).map_err(|e| e.to_string())?;
    let rounds = run
        .bits_sent
        .iter()
        .zip(&run.bits_decoded)
        .zip(&run.per_bit_probe)
        .map(|((&bit, &decoded), p)| Round {
            bit,
            decoded,
            misses: p.miss_count,
            latency: p.total_latency,
        })
        .collect();
    let out = ChannelTrace {
        defense: spec.label(),
        associativity: a,
        threshold,
        accuracy: run.accuracy(),
        rounds,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Step {
    phase: &'static str,
    block: String,
    level: &'static str,
    ways: Vec<Option<String>>,
    spy_count: Option<usize>,
    trojan_count: Option<usize>,
}

#[derive(Serialize)]
struct WorkedExample {
    z: usize,
    bit: bool,
    steps: Vec<Step>,
    probe_hits: usize,
    probe_misses: usize,
}

struct Example {
    sim: Simulator,
    steps: Vec<Step>,
}

const SET: usize = 1;
const TROJAN_SEED: u64 = 100;

fn label(tag: u64, owner: Pid) -> String {
    if owner == SPY {
        format!("S{tag}")
    } else {
        format!("T{}", tag - TROJAN_SEED)
    }
}

impl Example {
    fn play(&mut self, phase: &'static str, es: &EvictionSet, order: ProbeOrder) -> Result<(usize, usize), String> {
        let (mut hits, mut misses) = (0, 0);
        for record in es.records(order) {
            let r = self.sim.access(record).map_err(|e| e.to_string())?;
            let (_, tag) = self.sim.config().llc.map_address(record.address);
            if r.is_llc_miss() {
                misses += 1;
            } else {
                hits += 1;
            }
            let set = self.sim.hierarchy().llc().set(SET);
            let state = self.sim.hierarchy().policy().as_tppd().map(|t| t.state(SET));
            self.steps.push(Step {
                phase,
                block: label(tag, record.pid),
                level: match r.level {
                    HitLevel::L1 => "L1",
                    HitLevel::Llc => "LLC",
                    HitLevel::Miss => "MEM",
                },
                ways: set.iter().map(|b| b.valid.then(|| label(b.tag, b.owner))).collect(),
                spy_count: state.filter(|s| s.attack_flag).map(|s| s.spy_count),
                trojan_count: state.filter(|s| s.attack_flag).map(|s| s.trojan_count),
            });
        }
        Ok((hits, misses))
    }
}

/// One round of the channel on a single 4-way set: the trojan has warmed the
/// set, the spy primes, the trojan transmits `bit`, the spy probes.
/// `z = 0` runs without a defense.
pub fn worked_example_json(z: usize, bit: bool) -> Result<String, String> {
    let llc = CacheGeometry::new(4, 4, 64, 18).map_err(|e| e.to_string())?;
    let l1 = CacheGeometry::new(4, 4, 64, 2).map_err(|e| e.to_string())?;
    let config = HierarchyConfig {
        cores: 2,
        l1,
        llc,
        memory_latency: 250,
    };
    let spec = if z == 0 {
        DefenseSpec::None
    } else {
        DefenseSpec::tppd(z)
    };
    let mut sim = Simulator::new(config, &spec, &[(SPY, 0), (TROJAN, 1)]).map_err(|e| e.to_string())?;
    let spy = build_eviction_set(&llc, SET, 4, SPY, 0).map_err(|e| e.to_string())?;
    let trojan = build_eviction_set(&llc, SET, 4, TROJAN, TROJAN_SEED).map_err(|e| e.to_string())?;
    for a in &trojan.addresses {
        sim.access(AccessRecord::read(TROJAN, *a)).map_err(|e| e.to_string())?;
    }
    if z > 0 {
        sim.engage(SET, SPY, TROJAN).map_err(|e| e.to_string())?;
    }
    let mut ex = Example { sim, steps: Vec::new() };
    ex.play("prime", &spy, ProbeOrder::Forward)?;
    if bit {
        ex.play("transmit", &trojan, ProbeOrder::Forward)?;
    }
    let (probe_hits, probe_misses) = ex.play("probe", &spy, ProbeOrder::Reverse)?;
    let out = WorkedExample {
        z,
        bit,
        steps: ex.steps,
        probe_hits,
        probe_misses,
    };
    serde_json::to_string(&out).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Storage {
    bits_per_set: u64,
    total_bits: u64,
    total_bytes: f64,
    total_kib: f64,
}

pub fn storage_overhead_json(num_sets: u64, associativity: usize, id_bits: u64) -> Result<String, String> {
    let s = tppd_core::metrics::storage_overhead(num_sets, associativity, id_bits).map_err(|e| e.to_string())?;
    serde_json::to_string(&Storage {
        bits_per_set: s.bits_per_set,
        total_bits: s.total_bits,
        total_bytes: s.total_bytes,
        total_kib: s.total_kib(),
    })
    .map_err(|e| e.to_string())
}

fn js(r: Result<String, String>) -> Result<String, JsValue> {
    r.map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn channel_trace(defense: &str, z: usize, bits: usize, seed: u64) -> Result<String, JsValue> {
    js(channel_trace_json(defense, z, bits, seed))
}

#[wasm_bindgen]
pub fn worked_example(z: usize, bit: bool) -> Result<String, JsValue> {
    js(worked_example_json(z, bit))
}

#[wasm_bindgen]
pub fn storage_overhead(num_sets: u64, associativity: usize, id_bits: u64) -> Result<String, JsValue> {
    js(storage_overhead_json(num_sets, associativity, id_bits))
}
