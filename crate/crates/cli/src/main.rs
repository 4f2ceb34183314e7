//! `tppd-sim`: runs experiments, matrices and a self-check from TOML configs.

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use tppd_core::attack::ChannelRun;
use tppd_core::experiment::{
    run_experiment, run_matrix, write_matrix, write_reports, ExperimentConfig, ExperimentError, ExperimentReport,
};
use tppd_core::metrics::storage_overhead;
use tppd_core::DefenseSpec;

#[derive(Parser)]
#[command(
    name = "tppd-sim",
    version,
    about = "Trace-driven LLC covert-channel and TPPD defense simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write report.json (plus channel.csv, epochs.csv).
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the z x workload matrix and write matrix.csv and impact.json.
    Matrix {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Check channel, defense and storage invariants on the config's geometry.
    Selfcheck {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DefenseKind {
    None,
    Tppd,
    Nomo,
}

#[derive(Args)]
struct Overrides {
    /// Defense to use instead of the config's.
    #[arg(long, value_enum)]
    defense: Option<DefenseKind>,
    /// TPPD threshold or NoMo reserved ways; for `matrix`, a comma-separated list of z.
    #[arg(long, value_delimiter = ',')]
    z: Vec<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `[output] dir`).
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A config problem found by the CLI itself.
#[derive(Debug)]
struct UsageError(String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "config error: {}", self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Selfcheck found a violated invariant.
#[derive(Debug)]
struct CheckFailed(usize);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} self-check(s) failed", self.0)
    }
}

impl std::error::Error for CheckFailed {}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<CheckFailed>().is_some() {
        3
    } else if e.downcast_ref::<UsageError>().is_some()
        || e.downcast_ref::<ExperimentError>()
            .is_some_and(ExperimentError::is_config)
    {
        1
    } else {
        2
    }
}

fn load(path: &Path) -> Result<ExperimentConfig> {
    match ExperimentConfig::load(path) {
        Ok(c) => Ok(c),
        // An unreadable config file is a config problem, not a runtime one.
        Err(ExperimentError::Io { path, source }) => Err(usage(format!("{}: {source}", path.display()))),
        Err(e) => Err(anyhow::Error::new(e).context(format!("loading {}", path.display()))),
    }
}

fn apply(config: &mut ExperimentConfig, o: &Overrides, matrix: bool) -> Result<()> {
    if let Some(seed) = o.seed {
        config.seed = seed;
    }
    if let Some(out) = &o.out {
        config.output.dir = Some(out.clone());
    }
    if matrix {
        if o.defense.is_some() {
            return Err(usage(
                "--defense does not apply to `matrix`; use --z to pick the z values",
            ));
        }
        if let (Some(m), false) = (config.matrix.as_mut(), o.z.is_empty()) {
            m.z = o.z.clone();
        }
        return Ok(());
    }
    let z = match o.z.as_slice() {
        [] => None,
        [z] => Some(*z),
        _ => return Err(usage("--z takes a single value here")),
    };
    let kind = match (o.defense, config.defense) {
        (Some(k), _) => k,
        (None, DefenseSpec::None) => DefenseKind::None,
        (None, DefenseSpec::Tppd { .. }) => DefenseKind::Tppd,
        (None, DefenseSpec::Nomo { .. }) => DefenseKind::Nomo,
    };
    config.defense = match (kind, z) {
        (DefenseKind::None, Some(_)) => return Err(usage("--z needs --defense tppd or nomo")),
        (DefenseKind::None, None) => DefenseSpec::None,
        (DefenseKind::Tppd, Some(z)) => DefenseSpec::tppd(z),
        (DefenseKind::Nomo, Some(v)) => DefenseSpec::nomo(v),
        (DefenseKind::Tppd, None) => match config.defense {
            d @ DefenseSpec::Tppd { .. } => d,
            _ => DefenseSpec::tppd(config.llc.associativity / 2),
        },
        (DefenseKind::Nomo, None) => match config.defense {
            d @ DefenseSpec::Nomo { .. } => d,
            _ => DefenseSpec::nomo(1),
        },
    };
    if !matches!(config.defense, DefenseSpec::Tppd { .. }) {
        config.force_engage = false;
    }
    Ok(())
}

fn out_dir(config: &ExperimentConfig) -> PathBuf {
    config
        .output
        .dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("results").join(&config.name))
}

fn print_summary(r: &ExperimentReport) {
    println!("experiment {} (defense {}, seed {})", r.name, r.defense, r.seed);
    println!(
        "  accesses {}  llc misses {}  mpki {}",
        r.stats.total_accesses,
        r.stats.llc_misses,
        r.mpki.map_or("-".into(), |m| format!("{m:.3}"))
    );
    if let Some(c) = &r.channel {
        println!(
            "  channel: {} bits, accuracy {:.4} (pre-engagement {} rounds {:.4}, post {} rounds {:.4})",
            c.bits,
            c.accuracy,
            c.pre_engagement.rounds,
            c.pre_engagement.accuracy,
            c.post_engagement.rounds,
            c.post_engagement.accuracy
        );
    }
    for v in r.verdicts.iter().take(5) {
        println!(
            "  verdict: epoch {} set {} pair (P{}, P{}) score {}",
            v.epoch, v.set_index, v.spy.0, v.trojan.0, v.pair_score
        );
    }
    if r.verdicts.len() > 5 {
        println!("  ... {} verdicts in total", r.verdicts.len());
    }
    for e in &r.engagements {
        println!(
            "  engaged set {} at access {} ({})",
            e.set_index,
            e.at_access,
            if e.from_detector { "detector" } else { "forced" }
        );
    }
    for c in &r.occupancy {
        let r = c.r.map_or("undefined".into(), |x| format!("{x:.3}"));
        println!("  occupancy r(P{}, P{}) = {r}", c.a.0, c.b.0);
    }
}

fn cmd_run(path: &Path, o: &Overrides) -> Result<()> {
    let mut config = load(path)?;
    apply(&mut config, o, false)?;
    let report = run_experiment(&config)?;
    print_summary(&report);
    let dir = out_dir(&config);
    write_reports(&report, &dir)?;
    info!("reports written to {}", dir.display());
    println!("reports in {}", dir.display());
    Ok(())
}

fn cmd_matrix(path: &Path, o: &Overrides) -> Result<()> {
    let mut config = load(path)?;
    apply(&mut config, o, true)?;
    if config.matrix.is_none() {
        return Err(usage("matrix: missing [matrix] section"));
    }
    let report = run_matrix(&config)?;
    let dir = out_dir(&config);
    write_matrix(&report, &dir)?;
    for cell in &report.cells {
        match (&cell.error, cell.llc_misses) {
            (Some(e), _) => println!("z={} {:<12} FAILED: {e}", cell.z, cell.workload),
            (None, Some(m)) => println!("z={} {:<12} llc misses {m}", cell.z, cell.workload),
            (None, None) => {}
        }
    }
    if let Some(t) = &report.table {
        for s in &t.summaries {
            println!("z={} avg impact {:.2} (attack-only diff {})", s.z, s.avg_impact, s.diff);
        }
    }
    println!("matrix in {}", dir.display());
    let failed = report.failures();
    if failed > 0 {
        return Err(ExperimentError::CellsFailed {
            failed,
            total: report.cells.len(),
        }
        .into());
    }
    Ok(())
}

fn steady_from(bits: &[bool]) -> usize {
    bits.iter().position(|&b| b).map_or(bits.len(), |i| i + 1)
}

fn channel(base: &ExperimentConfig, defense: DefenseSpec) -> Result<ChannelRun> {
    let mut c = base.clone();
    c.matrix = None;
    c.workload.benign.clear();
    c.detector.enabled = false;
    c.occupancy = None;
    c.attack.enabled = true;
    c.force_engage = matches!(defense, DefenseSpec::Tppd { .. });
    c.defense = defense;
    run_experiment(&c)?
        .channel_run
        .context("attack run produced no channel data")
}

fn ceil_log2(n: u64) -> u64 {
    u64::from(n.next_power_of_two().trailing_zeros())
}

fn cmd_selfcheck(path: &Path, o: &Overrides) -> Result<()> {
    let mut config = load(path)?;
    apply(&mut config, o, false)?;
    config.validate().map_err(ExperimentError::from)?;
    let a = config.llc.associativity;
    let mut failed = 0;
    let mut report = |name: &str, ok: bool, detail: String| {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    };

    let run = channel(&config, DefenseSpec::None)?;
    let (ones, zeros) = run.miss_counts_by_bit(0);
    report(
        "undefended channel",
        ones.iter().all(|&m| m == a) && zeros.iter().all(|&m| m == 0) && run.accuracy() == 1.0,
        format!("misses bit1 {ones:?} bit0 {zeros:?}, accuracy {:.4}", run.accuracy()),
    );

    for z in 1..=a / 2 {
        let run = channel(&config, DefenseSpec::tppd(z))?;
        let (ones, zeros) = run.miss_counts_by_bit(steady_from(&run.bits_sent));
        let gap = match (ones.as_slice(), zeros.as_slice()) {
            ([x], [y]) => Some(x.abs_diff(*y)),
            _ => None,
        };
        report(
            &format!("tppd z={z} miss gap"),
            gap == Some(a - 2 * z),
            format!("bit1 {ones:?} bit0 {zeros:?}, expected gap {}", a - 2 * z),
        );
    }

    let id_bits = ceil_log2(config.cores as u64).max(1);
    let counter = u64::from(a.ilog2());
    let s = storage_overhead(config.llc.num_sets as u64, a, id_bits)?;
    let want = 1 + 2 * id_bits + 2 * counter;
    report(
        "storage overhead",
        s.bits_per_set == want && s.total_bits == want * config.llc.num_sets as u64,
        format!("{} bits/set, {} KiB", s.bits_per_set, s.total_kib()),
    );

    let first = serde_json::to_string(&run_experiment(&config)?)?;
    let second = serde_json::to_string(&run_experiment(&config)?)?;
    report("determinism", first == second, format!("{} report bytes", first.len()));

    if failed > 0 {
        return Err(CheckFailed(failed).into());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("TPPD_LOG", "warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, overrides } => cmd_run(config, overrides),
        Command::Matrix { config, overrides } => cmd_matrix(config, overrides),
        Command::Selfcheck { config, overrides } => cmd_selfcheck(config, overrides),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
