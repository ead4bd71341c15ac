//! Experiment driver. Subcommands: `sample` (one cell, dump the output
//! batch), `sweep` (full grid → CSV/JSON/charts), `probe` (theory probes
//! only), `score-error` (measurement only), `chart` (render SVGs from a
//! report). Exit code 0 on full success, 2 if any sweep cell failed.
//! Verbosity via GMMDDPM_LOG={error,info,debug}.

use clap::{Parser, Subcommand};
use gmmddpm_core::experiment::{
    parse_config, render_charts, run_sweep, ExperimentSpec, OracleKind,
};
use gmmddpm_core::oracle::{clip_oracle, exact_oracle, measure_score_error, perturb_oracle,
    PerturbModel};
use gmmddpm_core::probes::{trace_quantiles, tweedie_bound_check, typical_set_probability,
    ProbeRow};
use gmmddpm_core::rng;
use gmmddpm_core::sampler::{ddpm_sample, SnapshotPolicy};
use gmmddpm_core::schedule::NoiseSchedule;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
enum LogLevel {
    Error,
    Info,
    Debug,
}

fn log_level() -> LogLevel {
    match std::env::var("GMMDDPM_LOG").as_deref() {
        Ok("debug") => LogLevel::Debug,
        Ok("info") => LogLevel::Info,
        _ => LogLevel::Error,
    }
}

macro_rules! info {
    ($($arg:tt)*) => {
        if log_level() >= LogLevel::Info {
            eprintln!("[info] {}", format!($($arg)*));
        }
    };
}

macro_rules! debug {
    ($($arg:tt)*) => {
        if log_level() >= LogLevel::Debug {
            eprintln!("[debug] {}", format!($($arg)*));
        }
    };
}

#[derive(Parser)]
#[command(name = "gmmddpm", about = "DDPM sampling experiments on Gaussian mixture targets")]
struct Cli {
    /// Experiment config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Master seed override
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (affects speed only, never results)
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Report format for sweep
    #[arg(long, global = true, default_value = "both", value_parser = ["csv", "json", "both"])]
    format: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single cell and dump the output batch as CSV
    Sample {
        /// Also write the noise schedule as schedule.csv
        #[arg(long)]
        dump_schedule: bool,
    },
    /// Run the full sweep grid
    Sweep,
    /// Run theory probes only
    Probe,
    /// Measure the score error of the configured oracle
    ScoreError,
    /// Render charts from an existing report JSON
    Chart {
        /// Path to report.json (defaults to <out>/report.json)
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: cannot configure {threads} threads: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn load_spec(cli: &Cli) -> Result<ExperimentSpec, String> {
    let path = cli.config.as_ref().ok_or("--config is required for this subcommand")?;
    let mut spec = parse_config(path).map_err(|e| e.to_string())?;
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    Ok(spec)
}

fn ensure_out(dir: &PathBuf) -> Result<(), String> {
    std::fs::create_dir_all(dir).map_err(|e| format!("cannot create {}: {e}", dir.display()))
}

fn singleton<T: Copy>(list: &[T], what: &str) -> Result<T, String> {
    if list.len() != 1 {
        return Err(format!("`{what}` must be a single value for this subcommand"));
    }
    Ok(list[0])
}

fn build_cell_oracle(
    spec: &ExperimentSpec,
    gmm: &gmmddpm_core::GaussianMixture,
    sched: &NoiseSchedule,
    amplitude: f64,
    seed: u64,
) -> Result<gmmddpm_core::ScoreOracle, String> {
    let exact = exact_oracle(gmm, sched);
    let inner = match spec.oracle.kind {
        OracleKind::Exact => exact,
        OracleKind::GaussianField => {
            perturb_oracle(&exact, gmm, sched, PerturbModel::GaussianField, amplitude, seed)
                .map_err(|e| e.to_string())?
        }
        OracleKind::MeanJitter => {
            perturb_oracle(&exact, gmm, sched, PerturbModel::MeanJitter, amplitude, seed)
                .map_err(|e| e.to_string())?
        }
    };
    clip_oracle(&inner, sched, spec.oracle.c_clip).map_err(|e| e.to_string())
}

fn run(cli: &Cli) -> Result<ExitCode, String> {
    match &cli.command {
        Command::Sweep => {
            let spec = load_spec(cli)?;
            ensure_out(&cli.out)?;
            info!("sweep: {} cells", spec.schedule.t.len() * spec.target.d.len()
                * spec.target.k.len() * spec.oracle.amplitudes.len()
                * spec.target.deltas.len());
            let (report, timings) = run_sweep(&spec);
            for t in &timings {
                debug!("cell {} took {} ms", t.index, t.wall_ms);
            }
            if cli.format == "csv" || cli.format == "both" {
                let path = cli.out.join("report.csv");
                std::fs::write(&path, report.to_csv()).map_err(|e| e.to_string())?;
                info!("wrote {}", path.display());
            }
            if cli.format == "json" || cli.format == "both" {
                let path = cli.out.join("report.json");
                std::fs::write(&path, report.to_json()).map_err(|e| e.to_string())?;
                info!("wrote {}", path.display());
            }
            // timings are deliberately outside the deterministic report
            let timing_json =
                serde_json::to_string_pretty(&timings).map_err(|e| e.to_string())?;
            std::fs::write(cli.out.join("timings.json"), timing_json)
                .map_err(|e| e.to_string())?;
            if report.any_failed() {
                let failures: Vec<String> = report
                    .cells
                    .iter()
                    .filter(|c| c.error.is_some())
                    .map(|c| format!("cell {}: {}", c.coords.index, c.error.as_ref().unwrap()))
                    .collect();
                eprintln!("{} cell(s) failed:\n{}", failures.len(), failures.join("\n"));
                return Ok(ExitCode::from(2));
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sample { dump_schedule } => {
            let spec = load_spec(cli)?;
            ensure_out(&cli.out)?;
            let t = singleton(&spec.schedule.t, "schedule.t")?;
            let d = singleton(&spec.target.d, "target.d")?;
            let k = singleton(&spec.target.k, "target.k")?;
            let amplitude = singleton(&spec.oracle.amplitudes, "oracle.amplitude")?;
            let gmm = spec.build_gmm(k, d).map_err(|e| e.to_string())?;
            let sched =
                NoiseSchedule::build(t, spec.schedule.c0, spec.schedule.c1)
                    .map_err(|e| e.to_string())?;
            if *dump_schedule {
                let path = cli.out.join("schedule.csv");
                std::fs::write(&path, sched.to_csv()).map_err(|e| e.to_string())?;
                info!("wrote {}", path.display());
            }
            let oracle = build_cell_oracle(&spec, &gmm, &sched, amplitude, spec.seed)?;
            info!("sampling {} chains, T={t}, d={d}, K={k}", spec.run.chains);
            let traj = ddpm_sample(&oracle, &sched, d, spec.run.chains, spec.seed,
                &SnapshotPolicy::None)
                .map_err(|e| e.to_string())?;
            let mut csv = String::new();
            csv.push_str(&format!("# seed={}\n", spec.seed));
            csv.push_str(&format!("# T={t}\n# c0={}\n# c1={}\n", spec.schedule.c0,
                spec.schedule.c1));
            csv.push_str(&format!("# oracle={}\n", oracle.descriptor()));
            let header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
            csv.push_str(&header.join(","));
            csv.push('\n');
            for p in traj.output.iter_points() {
                let row: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
                csv.push_str(&row.join(","));
                csv.push('\n');
            }
            let path = cli.out.join("batch.csv");
            std::fs::write(&path, csv).map_err(|e| e.to_string())?;
            info!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Probe => {
            let spec = load_spec(cli)?;
            ensure_out(&cli.out)?;
            let t_count = singleton(&spec.schedule.t, "schedule.t")?;
            let d = singleton(&spec.target.d, "target.d")?;
            let k = singleton(&spec.target.k, "target.k")?;
            let gmm = spec.build_gmm(k, d).map_err(|e| e.to_string())?;
            let sched = NoiseSchedule::build(t_count, spec.schedule.c0, spec.schedule.c1)
                .map_err(|e| e.to_string())?;
            let mut t_set = vec![
                2,
                t_count.div_ceil(4),
                t_count.div_ceil(2),
                3 * t_count / 4,
                t_count,
            ];
            t_set.retain(|&t| (1..=t_count).contains(&t));
            t_set.sort_unstable();
            t_set.dedup();
            let mut rows: Vec<ProbeRow> = Vec::new();
            for &t in &t_set {
                debug!("probing t={t}");
                let tq = trace_quantiles(&gmm, &sched, t, spec.run.probe_samples, spec.seed)
                    .map_err(|e| e.to_string())?;
                rows.push(ProbeRow {
                    probe: "trace_q999_ratio".into(),
                    t,
                    k,
                    d,
                    t_count,
                    estimate: tq.ratio_q999_to_log_kt,
                    ci_low: 0.0,
                    ci_high: 0.0,
                    thresholds: vec![],
                });
                let ts = typical_set_probability(&gmm, &sched, t, spec.run.probe_samples,
                    spec.run.probe_c1, spec.run.probe_c2, spec.seed)
                    .map_err(|e| e.to_string())?;
                rows.push(ProbeRow {
                    probe: "typical_set_violation".into(),
                    t,
                    k,
                    d,
                    t_count,
                    estimate: ts.estimate,
                    ci_low: ts.ci_low,
                    ci_high: ts.ci_high,
                    thresholds: vec![spec.run.probe_c1, spec.run.probe_c2],
                });
                let tw = tweedie_bound_check(&gmm, &sched, t, spec.run.probe_samples,
                    spec.oracle.c_clip, spec.seed)
                    .map_err(|e| e.to_string())?;
                rows.push(ProbeRow {
                    probe: "tweedie_violation".into(),
                    t,
                    k,
                    d,
                    t_count,
                    estimate: tw.estimate,
                    ci_low: tw.ci_low,
                    ci_high: tw.ci_high,
                    thresholds: vec![spec.oracle.c_clip],
                });
            }
            let json = serde_json::to_string_pretty(&rows).map_err(|e| e.to_string())?;
            let path = cli.out.join("probes.json");
            std::fs::write(&path, json).map_err(|e| e.to_string())?;
            info!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::ScoreError => {
            let spec = load_spec(cli)?;
            ensure_out(&cli.out)?;
            let t = singleton(&spec.schedule.t, "schedule.t")?;
            let d = singleton(&spec.target.d, "target.d")?;
            let k = singleton(&spec.target.k, "target.k")?;
            let amplitude = singleton(&spec.oracle.amplitudes, "oracle.amplitude")?;
            let gmm = spec.build_gmm(k, d).map_err(|e| e.to_string())?;
            let sched = NoiseSchedule::build(t, spec.schedule.c0, spec.schedule.c1)
                .map_err(|e| e.to_string())?;
            let oracle = build_cell_oracle(&spec, &gmm, &sched, amplitude, spec.seed)?;
            let report = measure_score_error(&oracle, &gmm, &sched,
                spec.run.score_error_samples, rng::mix(spec.seed, &[0x5c]))
                .map_err(|e| e.to_string())?;
            let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
            let path = cli.out.join("score_error.json");
            std::fs::write(&path, json).map_err(|e| e.to_string())?;
            info!("wrote {}", path.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Chart { report } => {
            ensure_out(&cli.out)?;
            let report_path =
                report.clone().unwrap_or_else(|| cli.out.join("report.json"));
            let text = std::fs::read_to_string(&report_path)
                .map_err(|e| format!("cannot read {}: {e}", report_path.display()))?;
            let report: gmmddpm_core::experiment::ExperimentReport =
                serde_json::from_str(&text)
                    .map_err(|e| format!("malformed report: {e}"))?;
            let charts = render_charts(&report).map_err(|e| e.to_string())?;
            for (name, svg) in &charts {
                let path = cli.out.join(name);
                std::fs::write(&path, svg).map_err(|e| e.to_string())?;
                info!("wrote {}", path.display());
            }
            println!("{} chart(s) rendered", charts.len());
            Ok(ExitCode::SUCCESS)
        }
    }
}
