//! Block-by-block replay of the A = 4, z = 2 worked example.

use std::fmt::Write as _;

use tppd_core::attack::{build_eviction_set, EvictionSet, ProbeOrder};
use tppd_core::hierarchy::AccessRecord;
use tppd_core::{CacheGeometry, DefenseSpec, HierarchyConfig, HitLevel, Pid, Simulator};

const SET: usize = 1;
const SPY: Pid = Pid(0);
const TROJAN: Pid = Pid(1);
const TROJAN_SEED: u64 = 100;

struct Replay {
    sim: Simulator,
    out: String,
}

impl Replay {
    fn label(&self, tag: u64, owner: Pid) -> String {
        if owner == SPY {
            format!("S{tag}")
        } else {
            format!("T{}", tag - TROJAN_SEED)
        }
    }

    fn state(&self) -> String {
        let set = self.sim.hierarchy().llc().set(SET);
        let ways: Vec<String> = set
            .iter()
            .map(|b| {
                if b.valid {
                    self.label(b.tag, b.owner)
                } else {
                    "--".into()
                }
            })
            .collect();
        let st = self.sim.hierarchy().policy().as_tppd().unwrap().state(SET);
        format!("| {} | CpS={} CpT={}", ways.join(" "), st.spy_count, st.trojan_count)
    }

    fn step(&mut self, phase: &str, es: &EvictionSet, order: ProbeOrder) -> (usize, usize) {
        let (mut hits, mut misses) = (0, 0);
        for record in es.records(order) {
            let r = self.sim.access(record).unwrap();
            let (_, tag) = self.sim.config().llc.map_address(record.address);
            let level = match r.level {
                HitLevel::L1 => "L1",
                HitLevel::Llc => "LLC",
                HitLevel::Miss => "MEM",
            };
            if r.is_llc_miss() {
                misses += 1;
            } else {
                hits += 1;
            }
            let state = self.state();
            writeln!(
                self.out,
                "{phase:<8} {:<3} {level:<3} {state}",
                self.label(tag, record.pid)
            )
            .unwrap();
        }
        (hits, misses)
    }
}

/// Replays the worked example and renders it in the golden-file format.
pub fn render() -> String {
    let llc = CacheGeometry::new(4, 4, 64, 18).unwrap();
    let l1 = CacheGeometry::new(4, 4, 64, 2).unwrap();
    let config = HierarchyConfig {
        cores: 2,
        l1,
        llc,
        memory_latency: 250,
    };
    let mut sim = Simulator::new(config, &DefenseSpec::tppd(2), &[(SPY, 0), (TROJAN, 1)]).unwrap();
    let spy = build_eviction_set(&llc, SET, 4, SPY, 0).unwrap();
    let trojan = build_eviction_set(&llc, SET, 4, TROJAN, TROJAN_SEED).unwrap();
    for a in &trojan.addresses {
        sim.access(AccessRecord::read(TROJAN, *a)).unwrap();
    }
    sim.engage(SET, SPY, TROJAN).unwrap();

    let mut r = Replay {
        sim,
        out: String::new(),
    };
    r.out
        .push_str("# A = 4, z = 2. Ways 0..3 of the target set; Sk/Tk are spy/trojan blocks.\n");
    r.out
        .push_str("# columns: step block level | way contents | counters\n");
    let start = r.state();
    writeln!(r.out, "start    --  --  {start}").unwrap();
    r.step("prime", &spy, ProbeOrder::Forward);
    let primed = r.sim.clone();

    r.out.push_str("== bit 1\n");
    r.step("transmit", &trojan, ProbeOrder::Forward);
    let (h, m) = r.step("probe", &spy, ProbeOrder::Reverse);
    writeln!(r.out, "outcome hits={h} misses={m}").unwrap();

    r.sim = primed;
    r.out.push_str("== bit 0\n");
    let (h, m) = r.step("probe", &spy, ProbeOrder::Reverse);
    writeln!(r.out, "outcome hits={h} misses={m}").unwrap();
    r.out
}
