use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
name = "small"
seed = 7

[l1]
num_sets = 4
associativity = 2
block_size = 64
hit_latency = 2

[llc]
num_sets = 16
associativity = 4
block_size = 64
hit_latency = 18

[attack]
set_index = 3
bits = 64
trojan_tag_seed = 100
"#;

fn tppd_sim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tppd-sim"))
        .args(args)
        .output()
        .expect("spawn tppd-sim")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn run_writes_reports_and_honours_overrides() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = tmp.path().join("out");
    let o = tppd_sim(&["run", &cfg, "--out", out.to_str().unwrap(), "--seed", "11"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("accuracy 1.0000"));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["seed"], 11);
    assert_eq!(report["defense"], "none");
    assert!(out.join("channel.csv").exists());

    let o = tppd_sim(&[
        "run",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--defense",
        "tppd",
        "--z",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["defense"], "tppd-2");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = tmp.path().join(format!("out{i}"));
        let o = tppd_sim(&["run", &cfg, "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(0));
        outputs.push((
            fs::read(out.join("report.json")).unwrap(),
            fs::read(out.join("channel.csv")).unwrap(),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.toml");
    assert_eq!(tppd_sim(&["run", missing.to_str().unwrap()]).status.code(), Some(1));

    let unknown = write_config(tmp.path(), "unknown.toml", "bogus = 1\n");
    assert_eq!(tppd_sim(&["run", &unknown]).status.code(), Some(1));

    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let o = tppd_sim(&["run", &cfg, "--defense", "tppd", "--z", "4"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("defense.threshold"));

    assert_eq!(tppd_sim(&["matrix", &cfg]).status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "").unwrap();
    let out = blocker.join("out");
    assert_eq!(
        tppd_sim(&["run", &cfg, "--out", out.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn selfcheck_passes_and_reports_failures_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let o = tppd_sim(&["selfcheck", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert!(!stdout(&o).contains("FAIL"));

    // A decode threshold of zero reads every round as 1.
    let broken = write_config(
        tmp.path(),
        "broken.toml",
        &SMALL.replace("bits = 64", "bits = 64\ndecode_threshold = 0"),
    );
    let o = tppd_sim(&["selfcheck", &broken]);
    assert_eq!(o.status.code(), Some(3), "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL undefended channel"));
}

#[test]
fn matrix_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replacen("seed = 7", "seed = 7\nforce_engage = true", 1)
        + "\n[workload]\nevents = 2000\n\n[matrix]\nz = [0, 1, 2]\nworkloads = [\"attack-only\", \"mix1\"]\n";
    let cfg = write_config(tmp.path(), "m.toml", &text);
    let out = tmp.path().join("m");
    let o = tppd_sim(&["matrix", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("matrix.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 6);
    assert!(out.join("impact.json").exists());

    let o = tppd_sim(&["matrix", &cfg, "--out", out.to_str().unwrap(), "--z", "0,1"]);
    assert_eq!(o.status.code(), Some(0));
    let csv = fs::read_to_string(out.join("matrix.csv")).unwrap();
    assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 1 + 4);
    assert_eq!(tppd_sim(&["matrix", &cfg, "--defense", "tppd"]).status.code(), Some(1));
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut seen = 0;
    for entry in fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            let c = tppd_core::experiment::ExperimentConfig::load(&path).unwrap();
            c.validate().unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 4);
}
