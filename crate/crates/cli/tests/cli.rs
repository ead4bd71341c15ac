//! End-to-end checks of the command-line driver.

use std::path::PathBuf;
use std::process::Command;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gmmddpm"))
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("gmmddpm-cli-{}-{name}", std::process::id()));
    std::fs::remove_dir_all(&dir).ok();
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

const SMALL_SWEEP: &str = "seed = 17\n\
[target]\nk = 2\nd = 2\nseparation = 3\n\
[schedule]\nt = 8 12 16 24\n\
[run]\nchains = 1200\nprojections = 6\nbins = 64\n";

#[test]
fn sweep_writes_reports_and_charts_render() {
    let dir = scratch("sweep");
    let cfg = dir.join("exp.cfg");
    std::fs::write(&cfg, SMALL_SWEEP).unwrap();
    let out = dir.join("out");
    let status = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("report.csv")).unwrap();
    assert!(csv.starts_with("run_id,T,d,K,oracle,amplitude,delta,metric,value,mc_error,seed"));
    assert!(out.join("report.json").exists());
    assert!(out.join("timings.json").exists());

    let status = bin().arg("chart").arg("--out").arg(&out).status().unwrap();
    assert!(status.success());
    assert!(out.join("tv_vs_t.svg").exists());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sweep_csv_is_byte_identical_across_thread_counts() {
    let dir = scratch("determinism");
    let cfg = dir.join("exp.cfg");
    std::fs::write(&cfg, SMALL_SWEEP).unwrap();
    let mut outputs = Vec::new();
    for threads in ["1", "3"] {
        let out = dir.join(format!("out-{threads}"));
        let status = bin()
            .args(["sweep", "--threads", threads, "--format", "csv", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(&out)
            .status()
            .unwrap();
        assert!(status.success());
        outputs.push(std::fs::read(out.join("report.csv")).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn seed_override_changes_the_report() {
    let dir = scratch("seed-override");
    let cfg = dir.join("exp.cfg");
    std::fs::write(&cfg, SMALL_SWEEP).unwrap();
    let run = |seed: Option<&str>, out: &PathBuf| {
        let mut cmd = bin();
        cmd.args(["sweep", "--format", "csv", "--config"]).arg(&cfg).arg("--out").arg(out);
        if let Some(s) = seed {
            cmd.args(["--seed", s]);
        }
        assert!(cmd.status().unwrap().success());
        std::fs::read(out.join("report.csv")).unwrap()
    };
    let base = run(None, &dir.join("a"));
    let same = run(Some("17"), &dir.join("b"));
    let different = run(Some("18"), &dir.join("c"));
    assert_eq!(base, same);
    assert_ne!(base, different);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn invalid_constants_are_rejected_with_the_rule() {
    let dir = scratch("badcfg");
    let cfg = dir.join("exp.cfg");
    std::fs::write(&cfg, "seed = 1\n[schedule]\nt = 8\nc0 = 2\nc1 = 6\n").unwrap();
    let output = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("c1/c0 > 4"), "stderr: {stderr}");
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sample_dumps_batch_with_provenance_header() {
    let dir = scratch("sample");
    let cfg = dir.join("exp.cfg");
    std::fs::write(
        &cfg,
        "seed = 9\n[target]\nk = 1\nd = 2\n[schedule]\nt = 8\n[run]\nchains = 50\n",
    )
    .unwrap();
    let out = dir.join("out");
    let status = bin()
        .args(["sample", "--dump-schedule", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("batch.csv")).unwrap();
    assert!(csv.starts_with("# seed=9\n# T=8\n# c0=2\n# c1=10\n# oracle="));
    let mut lines = csv.lines().skip_while(|l| l.starts_with('#'));
    assert_eq!(lines.next().unwrap(), "x1,x2");
    assert_eq!(lines.count(), 50);
    let sched = std::fs::read_to_string(out.join("schedule.csv")).unwrap();
    assert!(sched.starts_with("t,alpha,alpha_bar,one_minus_alpha\n"));
    assert_eq!(sched.lines().count(), 9);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn probe_and_score_error_emit_json() {
    let dir = scratch("probe");
    let cfg = dir.join("exp.cfg");
    std::fs::write(
        &cfg,
        "seed = 3\n[target]\nk = 2\nd = 2\nseparation = 4\n[schedule]\nt = 16\n\
         [oracle]\nkind = gaussian-field\namplitude = 0.2\n\
         [run]\nchains = 100\nprobe_samples = 2000\nscore_error_samples = 400\n",
    )
    .unwrap();
    let out = dir.join("out");
    let status =
        bin().args(["probe", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert!(status.success());
    let probes: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("probes.json")).unwrap()).unwrap();
    let rows = probes.as_array().unwrap();
    assert!(!rows.is_empty());
    for row in rows {
        assert!(row.get("probe").is_some());
        assert!(row.get("estimate").is_some());
        assert!(row.get("t").is_some());
    }

    let status = bin()
        .args(["score-error", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("score_error.json")).unwrap())
            .unwrap();
    assert!(report.get("epsilon_score").unwrap().as_f64().unwrap() > 0.0);
    assert_eq!(report.get("per_t").unwrap().as_array().unwrap().len(), 16);
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn failed_cells_exit_with_code_two() {
    let dir = scratch("failcell");
    let cfg = dir.join("exp.cfg");
    // extreme constants drive the schedule into the f64 gap floor at larger T
    std::fs::write(
        &cfg,
        "seed = 1\n[target]\nk = 2\nd = 2\nseparation = 3\n[schedule]\nt = 2 8\nc0 = 100\nc1 = 500\n[run]\nchains = 100\nprojections = 4\nbins = 64\n",
    )
    .unwrap();
    let output = bin()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    std::fs::remove_dir_all(&dir).ok();
}
