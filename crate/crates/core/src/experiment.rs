//! Experiment configs, single runs and the defense × workload matrix.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{midpoint_threshold, random_bits, AttackEvent, ChannelRecorder, ChannelRun, CovertChannel};
use crate::cache::{CacheGeometry, Pid};
use crate::defense::DefenseSpec;
use crate::detector::{CcaDetector, DetectionVerdict, DetectorConfig, OccupancyTracker, PairCount};
use crate::error::{ConfigError, SimError};
use crate::hierarchy::HierarchyConfig;
use crate::metrics::{ImpactError, ImpactTable, MetricsError, RunStats};
use crate::sim::{Engagement, Simulator};
use crate::workload::{self, generate_benign, interleave, BenignProfile, Schedule, TraceEvent};

/// Workload name of the matrix column without benign co-runners.
pub const ATTACK_ONLY: &str = "attack-only";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub cores: usize,
    pub l1: CacheGeometry,
    pub llc: CacheGeometry,
    pub memory_latency: u64,
    pub defense: DefenseSpec,
    /// Engage TPPD on the attacked set before the first access.
    pub force_engage: bool,
    pub detector: DetectorSection,
    pub attack: AttackSection,
    pub workload: WorkloadSection,
    pub occupancy: Option<OccupancySection>,
    pub matrix: Option<MatrixSection>,
    pub output: OutputSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let h = HierarchyConfig::default();
        Self {
            name: "experiment".into(),
            seed: 1,
            cores: h.cores,
            l1: h.l1,
            llc: h.llc,
            memory_latency: h.memory_latency,
            defense: DefenseSpec::None,
            force_engage: false,
            detector: DetectorSection::default(),
            attack: AttackSection::default(),
            workload: WorkloadSection::default(),
            occupancy: None,
            matrix: None,
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorSection {
    pub enabled: bool,
    pub epoch_length: u64,
    /// Defaults to four times the LLC associativity.
    pub threshold: Option<u64>,
    /// Keep every epoch's pair counts for `epochs.csv`.
    pub dump_epochs: bool,
}

impl Default for DetectorSection {
    fn default() -> Self {
        Self {
            enabled: false,
            epoch_length: 10_000,
            threshold: None,
            dump_epochs: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackSection {
    pub enabled: bool,
    pub set_index: usize,
    pub bits: usize,
    pub spy_pid: u32,
    pub trojan_pid: u32,
    pub spy_tag_seed: u64,
    pub trojan_tag_seed: u64,
    /// Seed of the transmitted bit string; defaults to the experiment seed.
    pub bit_seed: Option<u64>,
    /// Probe latency above which a bit decodes as 1; defaults to the midpoint
    /// of the all-hit and all-miss probe latencies.
    pub decode_threshold: Option<u64>,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            enabled: true,
            set_index: 77,
            bits: 256,
            spy_pid: 0,
            trojan_pid: 1,
            spy_tag_seed: 0,
            trojan_tag_seed: 1000,
            bit_seed: None,
            decode_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSection {
    /// Preset mix names; each contributes two benign processes.
    pub benign: Vec<String>,
    /// Events generated per benign process.
    pub events: usize,
    /// Merge order of the attack trace followed by the benign traces.
    pub schedule: Schedule,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        Self {
            benign: Vec::new(),
            events: 100_000,
            schedule: Schedule::RoundRobin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupancySection {
    /// Accesses between samples.
    pub interval: u64,
    /// Set to sample; defaults to the attacked set.
    #[serde(default)]
    pub set_index: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSection {
    /// Thresholds to sweep; `0` is the undefended baseline.
    pub z: Vec<usize>,
    /// `attack-only` and preset names.
    pub workloads: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(ConfigError),
    #[error("config parse error: {0}")]
    Parse(toml::de::Error),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{failed} of {total} matrix cells failed")]
    CellsFailed { failed: usize, total: usize },
}

// Hand-written so the wrapped error is not also reported as the source.
impl From<ConfigError> for ExperimentError {
    fn from(e: ConfigError) -> Self {
        ExperimentError::Config(e)
    }
}

impl From<toml::de::Error> for ExperimentError {
    fn from(e: toml::de::Error) -> Self {
        ExperimentError::Parse(e)
    }
}

impl ExperimentError {
    pub fn is_config(&self) -> bool {
        matches!(self, ExperimentError::Config(_) | ExperimentError::Parse(_))
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ExperimentError> {
        let path = path.as_ref();
        Self::from_toml(&fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn hierarchy(&self) -> HierarchyConfig {
        HierarchyConfig {
            cores: self.cores,
            l1: self.l1,
            llc: self.llc,
            memory_latency: self.memory_latency,
        }
    }

    pub fn detector_config(&self) -> DetectorConfig {
        let mut d = DetectorConfig::for_associativity(self.llc.associativity);
        d.epoch_length = self.detector.epoch_length;
        if let Some(t) = self.detector.threshold {
            d.threshold = t;
        }
        d
    }

    fn spy(&self) -> Pid {
        Pid(self.attack.spy_pid)
    }

    fn trojan(&self) -> Pid {
        Pid(self.attack.trojan_pid)
    }

    /// Pids given to benign processes: the lowest ones not used by the attack.
    fn benign_pids(&self) -> Vec<Pid> {
        let needed = 2 * self.workload.benign.len();
        (0u32..)
            .map(Pid)
            .filter(|p| !self.attack.enabled || (*p != self.spy() && *p != self.trojan()))
            .take(needed)
            .collect()
    }

    /// Every process with its core: spy and trojan first, then benign ones.
    pub fn bindings(&self) -> Vec<(Pid, usize)> {
        let mut pids = Vec::new();
        if self.attack.enabled {
            pids.push(self.spy());
            pids.push(self.trojan());
        }
        pids.extend(self.benign_pids());
        pids.into_iter().enumerate().map(|(core, p)| (p, core)).collect()
    }

    pub fn benign_profiles(&self) -> Result<Vec<BenignProfile>, ConfigError> {
        let pids = self.benign_pids();
        let mut out = Vec::new();
        for (i, name) in self.workload.benign.iter().enumerate() {
            let seed = self.seed.wrapping_add(i as u64 * 7919);
            out.extend(workload::mix_profiles(
                name,
                &self.llc,
                [pids[2 * i], pids[2 * i + 1]],
                seed,
            )?);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let h = self.hierarchy();
        h.validate()?;
        let a = self.llc.associativity;
        self.defense
            .build(self.llc.num_sets, a, &vec![Pid(0); self.bindings().len()])?;
        let processes = self.bindings().len();
        if processes > self.cores {
            return Err(ConfigError::new(
                "cores",
                format!(
                    "{processes} processes need as many cores, only {} configured",
                    self.cores
                ),
            ));
        }
        if self.attack.enabled {
            if self.attack.spy_pid == self.attack.trojan_pid {
                return Err(ConfigError::new("attack.trojan_pid", "must differ from attack.spy_pid"));
            }
            if self.attack.set_index >= self.llc.num_sets {
                return Err(ConfigError::new(
                    "attack.set_index",
                    format!("must be below {}", self.llc.num_sets),
                ));
            }
            let (lo, hi) = (self.attack.spy_tag_seed, self.attack.trojan_tag_seed);
            if lo.abs_diff(hi) < a as u64 {
                return Err(ConfigError::new(
                    "attack.trojan_tag_seed",
                    "spy and trojan eviction sets overlap",
                ));
            }
        }
        if self.force_engage {
            if self.matrix.is_none() && !matches!(self.defense, DefenseSpec::Tppd { .. }) {
                return Err(ConfigError::new("force_engage", "requires defense kind = \"tppd\""));
            }
            if !self.attack.enabled {
                return Err(ConfigError::new("force_engage", "requires an enabled attack"));
            }
        }
        if self.detector.enabled {
            self.detector_config().validate()?;
        }
        if let Schedule::Ratio(r) = &self.workload.schedule {
            if r.iter().all(|&q| q == 0) {
                return Err(ConfigError::new("workload.schedule", "ratio must have a nonzero entry"));
            }
        }
        for p in self.benign_profiles()? {
            p.validate(&self.llc)?;
        }
        if let Some(o) = &self.occupancy {
            if o.interval == 0 {
                return Err(ConfigError::new("occupancy.interval", "must be positive"));
            }
            if o.set_index.unwrap_or(self.attack.set_index) >= self.llc.num_sets {
                return Err(ConfigError::new("occupancy.set_index", "out of range"));
            }
        }
        if let Some(m) = &self.matrix {
            if !m.z.contains(&0) {
                return Err(ConfigError::new("matrix.z", "needs the z = 0 undefended baseline"));
            }
            if !m.workloads.iter().any(|w| w == ATTACK_ONLY) {
                return Err(ConfigError::new("matrix.workloads", format!("needs `{ATTACK_ONLY}`")));
            }
            for &z in &m.z {
                if z > 0 {
                    crate::tppd::ThresholdConfig::symmetric(z, a)
                        .map_err(|e| ConfigError::new("matrix.z", e.message))?;
                }
            }
            for w in m.workloads.iter().filter(|w| *w != ATTACK_ONLY) {
                if !workload::preset_names().any(|n| n == w) {
                    return Err(ConfigError::new("matrix.workloads", format!("unknown preset `{w}`")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracySlice {
    pub rounds: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub bits: usize,
    pub accuracy: f64,
    pub decode_threshold: u64,
    /// Rounds that started before the attacked set was engaged.
    pub pre_engagement: AccuracySlice,
    pub post_engagement: AccuracySlice,
    /// Distinct probe miss counts for bit 1 and bit 0 from the round after
    /// the first bit 1 sent once engaged (or once the channel starts).
    pub steady_misses_bit1: Vec<usize>,
    pub steady_misses_bit0: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub a: Pid,
    pub b: Pid,
    pub r: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub defense: String,
    pub seed: u64,
    pub stats: RunStats,
    pub mpki: Option<f64>,
    pub channel: Option<ChannelSummary>,
    pub verdicts: Vec<DetectionVerdict>,
    pub engagements: Vec<Engagement>,
    pub rejected_verdicts: usize,
    pub occupancy: Vec<CorrelationEntry>,
    #[serde(skip)]
    pub channel_run: Option<ChannelRun>,
    /// First access index of each channel round.
    #[serde(skip)]
    pub round_starts: Vec<u64>,
    #[serde(skip)]
    pub epochs: Vec<PairCount>,
}

enum Item {
    Attack(AttackEvent),
    Benign(TraceEvent),
}

/// Runs one experiment end to end. No files are written.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    config.validate()?;
    let hierarchy = config.hierarchy();
    let bindings = config.bindings();
    let mut sim = Simulator::new(hierarchy, &config.defense, &bindings)?;
    if config.detector.enabled {
        let mut det = CcaDetector::new(config.detector_config());
        if config.detector.dump_epochs {
            det = det.with_history();
        }
        sim = sim.with_detector(det, matches!(config.defense, DefenseSpec::Tppd { .. }));
    }
    if let Some(o) = &config.occupancy {
        let set = o.set_index.unwrap_or(config.attack.set_index);
        sim = sim.with_occupancy(OccupancyTracker::new(
            set,
            o.interval,
            bindings.iter().map(|b| b.0).collect(),
        ));
    }

    let bits = random_bits(config.attack.bits, config.attack.bit_seed.unwrap_or(config.seed));
    let channel = if config.attack.enabled {
        let ch = CovertChannel::standard(
            &config.llc,
            config.attack.set_index,
            config.spy(),
            config.trojan(),
            config.attack.spy_tag_seed,
            config.attack.trojan_tag_seed,
        )
        .map_err(|e| ConfigError::new("attack", e.to_string()))?;
        if config.force_engage {
            sim.engage(config.attack.set_index, config.spy(), config.trojan())?;
        }
        Some(ch)
    } else {
        None
    };

    let mut sources: Vec<Vec<Item>> = Vec::new();
    if let Some(ch) = &channel {
        sources.push(ch.plan(&bits).into_iter().map(Item::Attack).collect());
    }
    for p in config.benign_profiles()? {
        sources.push(
            generate_benign(&p, &config.llc, config.workload.events)
                .into_iter()
                .map(Item::Benign)
                .collect(),
        );
    }
    let merged = interleave(sources, &config.workload.schedule);

    let mut recorder = ChannelRecorder::new(bits.len());
    let mut round_starts = vec![u64::MAX; bits.len()];
    for item in merged {
        match item {
            Item::Attack(event) => {
                if let Some(r) = event.round {
                    round_starts[r] = round_starts[r].min(sim.stats().total_accesses);
                }
                let result = sim.access(event.record)?;
                recorder.observe(&event, &result);
            }
            Item::Benign(e) => {
                sim.access(e.record())?;
            }
        }
    }

    let decode_threshold = config
        .attack
        .decode_threshold
        .unwrap_or_else(|| midpoint_threshold(&hierarchy, config.llc.associativity));
    let channel_run = channel
        .as_ref()
        .map(|_| recorder.finish(bits.clone(), decode_threshold));
    let engaged_at = sim
        .engagements()
        .iter()
        .find(|e| e.set_index == config.attack.set_index)
        .map(|e| e.at_access);
    let summary = channel_run
        .as_ref()
        .map(|run| summarize(run, &round_starts, engaged_at));

    let occupancy = match sim.occupancy() {
        Some(t) => {
            let mut v = Vec::new();
            for (i, &(a, _)) in bindings.iter().enumerate() {
                for &(b, _) in &bindings[i + 1..] {
                    v.push(CorrelationEntry {
                        a,
                        b,
                        r: t.correlation(a, b).ok(),
                    });
                }
            }
            v
        }
        None => Vec::new(),
    };

    let stats = sim.stats().clone();
    Ok(ExperimentReport {
        name: config.name.clone(),
        defense: config.defense.label(),
        seed: config.seed,
        mpki: stats.mpki().ok(),
        stats,
        channel: summary,
        verdicts: sim.verdicts().to_vec(),
        engagements: sim.engagements().to_vec(),
        rejected_verdicts: sim.rejected_verdicts().len(),
        occupancy,
        channel_run,
        round_starts,
        epochs: sim.detector().map(|d| d.history().to_vec()).unwrap_or_default(),
    })
}

fn summarize(run: &ChannelRun, round_starts: &[u64], engaged_at: Option<u64>) -> ChannelSummary {
    let split = match engaged_at {
        Some(at) => round_starts.iter().position(|&s| s >= at).unwrap_or(round_starts.len()),
        None => round_starts.len(),
    };
    let n = run.bits_sent.len();
    let from = if engaged_at.is_some() { split } else { 0 };
    let steady_from = run.bits_sent[from..]
        .iter()
        .position(|&b| b)
        .map_or(n, |i| from + i + 1);
    let (ones, zeros) = run.miss_counts_by_bit(steady_from);
    ChannelSummary {
        bits: n,
        accuracy: run.accuracy(),
        decode_threshold: run.decode_threshold,
        pre_engagement: AccuracySlice {
            rounds: split,
            accuracy: run.accuracy_in(0..split),
        },
        post_engagement: AccuracySlice {
            rounds: n - split,
            accuracy: run.accuracy_in(split..n),
        },
        steady_misses_bit1: ones,
        steady_misses_bit0: zeros,
    }
}

/// Writes `report.json`, plus `channel.csv` and `epochs.csv` when there is
/// data for them.
pub fn write_reports(report: &ExperimentReport, dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let json = dir.join("report.json");
    fs::write(&json, serde_json::to_string_pretty(report)? + "\n").map_err(io_err(&json))?;
    if let Some(run) = &report.channel_run {
        let mut w = csv::Writer::from_path(dir.join("channel.csv"))?;
        w.write_record([
            "round",
            "start_access",
            "bit_sent",
            "bit_decoded",
            "miss_count",
            "probe_latency",
        ])?;
        for (i, ((sent, decoded), probe)) in run
            .bits_sent
            .iter()
            .zip(&run.bits_decoded)
            .zip(&run.per_bit_probe)
            .enumerate()
        {
            w.write_record([
                i.to_string(),
                report.round_starts[i].to_string(),
                u8::from(*sent).to_string(),
                u8::from(*decoded).to_string(),
                probe.miss_count.to_string(),
                probe.total_latency.to_string(),
            ])?;
        }
        w.flush().map_err(io_err(dir))?;
    }
    if !report.epochs.is_empty() {
        let mut w = csv::Writer::from_path(dir.join("epochs.csv"))?;
        for row in &report.epochs {
            w.serialize(row)?;
        }
        w.flush().map_err(io_err(dir))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub z: usize,
    pub workload: String,
    pub llc_misses: Option<u64>,
    pub mpki: Option<f64>,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixReport {
    pub cells: Vec<MatrixCell>,
    pub table: Option<ImpactTable>,
}

impl MatrixReport {
    pub fn failures(&self) -> usize {
        self.cells.iter().filter(|c| c.error.is_some()).count()
    }
}

/// The config of one matrix cell.
pub fn cell_config(base: &ExperimentConfig, z: usize, workload: &str) -> ExperimentConfig {
    let mut c = base.clone();
    c.matrix = None;
    c.name = format!("z{z}-{workload}");
    c.defense = if z == 0 {
        DefenseSpec::None
    } else {
        DefenseSpec::tppd(z)
    };
    c.force_engage = base.force_engage && z > 0;
    c.workload.benign = if workload == ATTACK_ONLY {
        Vec::new()
    } else {
        vec![workload.to_string()]
    };
    c
}

fn run_cell(base: &ExperimentConfig, z: usize, workload: &str) -> MatrixCell {
    let result = run_experiment(&cell_config(base, z, workload));
    match result {
        Ok(r) => MatrixCell {
            z,
            workload: workload.to_string(),
            llc_misses: Some(r.stats.llc_misses),
            mpki: r.mpki,
            accuracy: r.channel.map(|c| c.accuracy),
            error: None,
        },
        Err(e) => {
            log::error!("cell z={z} {workload}: {e}");
            MatrixCell {
                z,
                workload: workload.to_string(),
                llc_misses: None,
                mpki: None,
                accuracy: None,
                error: Some(e.to_string()),
            }
        }
    }
}

/// Runs every `(z, workload)` cell of `config.matrix` and assembles the
/// impact table. Failing cells are reported and skipped; the table is built
/// only when every cell succeeds.
pub fn run_matrix(config: &ExperimentConfig) -> Result<MatrixReport, ExperimentError> {
    let m = config
        .matrix
        .as_ref()
        .ok_or_else(|| ConfigError::new("matrix", "missing [matrix] section"))?;
    config.validate()?;
    if !m.workloads.iter().any(|w| w != ATTACK_ONLY) {
        return Err(MetricsError::EmptyBenchmarkSet.into());
    }
    let jobs: Vec<(usize, &str)> =
        m.z.iter()
            .flat_map(|&z| m.workloads.iter().map(move |w| (z, w.as_str())))
            .collect();

    #[cfg(feature = "parallel")]
    let cells: Vec<MatrixCell> = {
        use rayon::prelude::*;
        jobs.par_iter().map(|&(z, w)| run_cell(config, z, w)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let cells: Vec<MatrixCell> = jobs.iter().map(|&(z, w)| run_cell(config, z, w)).collect();

    let mut report = MatrixReport { cells, table: None };
    if report.failures() == 0 {
        let misses: BTreeMap<(usize, String), u64> = report
            .cells
            .iter()
            .map(|c| ((c.z, c.workload.clone()), c.llc_misses.unwrap_or(0)))
            .collect();
        report.table = Some(ImpactTable::build(&misses, ATTACK_ONLY).map_err(|e| match e {
            ImpactError::Metrics(m) => ExperimentError::Metrics(m),
            other => ConfigError::new("matrix", other.to_string()).into(),
        })?);
    }
    Ok(report)
}

/// Writes `matrix.csv` and `impact.json`.
pub fn write_matrix(report: &MatrixReport, dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let mut text =
        String::from("# mpki counts LLC misses per thousand memory accesses (trace-driven, no instruction count)\n");
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "z",
        "workload",
        "llc_misses",
        "mpki",
        "accuracy",
        "diff_prime",
        "impact",
        "error",
    ])?;
    let rows: BTreeMap<(usize, &str), (i64, i64)> = report
        .table
        .iter()
        .flat_map(|t| &t.rows)
        .map(|r| ((r.z, r.benchmark.as_str()), (r.diff_prime, r.impact)))
        .collect();
    let opt = |v: Option<String>| v.unwrap_or_default();
    for c in &report.cells {
        let d = rows.get(&(c.z, c.workload.as_str()));
        w.write_record([
            c.z.to_string(),
            c.workload.clone(),
            opt(c.llc_misses.map(|m| m.to_string())),
            opt(c.mpki.map(|m| format!("{m:.4}"))),
            opt(c.accuracy.map(|a| format!("{a:.4}"))),
            opt(d.map(|d| d.0.to_string())),
            opt(d.map(|d| d.1.to_string())),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| ExperimentError::Io {
        path: dir.join("matrix.csv"),
        source: e.into_error(),
    })?;
    text.push_str(&String::from_utf8_lossy(&bytes));
    let csv_path = dir.join("matrix.csv");
    fs::write(&csv_path, text).map_err(io_err(&csv_path))?;
    let json_path = dir.join("impact.json");
    fs::write(&json_path, serde_json::to_string_pretty(report)? + "\n").map_err(io_err(&json_path))?;
    Ok(())
}
