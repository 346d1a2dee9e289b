//! Scenario runner CLI.
//!
//! `run` executes one scenario file and writes JSONL + CSV reports plus a
//! summary; `compare` computes best-of speedups across finished runs;
//! `sweep` runs many scenarios on a bounded worker pool; `validate` checks
//! a scenario file without running it.
//!
//! Exit codes: 0 success, 2 validation/structural failure, 3 infeasible.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pipesim_core::report::{compare, read_summary, summary_sibling, EmitFormat};
use pipesim_core::runner::{final_iteration_trace, run_scenario};
use pipesim_core::scenario::Scenario;
use pipesim_core::Error;

/// Environment variable naming the default output root for `run`/`sweep`.
const OUT_ENV: &str = "PIPESIM_OUT";

#[derive(Parser)]
#[command(name = "pipesim", version, about = "Pipeline-parallel dynamic-load simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario file and emit reports.
    Run {
        scenario: PathBuf,
        /// Override the scenario's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory (default: $PIPESIM_OUT/<stem> or ./runs/<stem>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also export the final iteration as a Chrome trace (trace.json).
        #[arg(long)]
        trace: bool,
    },
    /// Compare finished runs: speedup of each candidate over the baseline.
    Compare {
        baseline_dir: PathBuf,
        #[arg(required = true)]
        candidate_dirs: Vec<PathBuf>,
    },
    /// Run many scenarios concurrently.
    Sweep {
        #[arg(required = true)]
        scenarios: Vec<PathBuf>,
        /// Worker pool size.
        #[arg(long, default_value_t = 4)]
        parallel: usize,
        /// Output root (default: $PIPESIM_OUT or ./runs).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parse and validate a scenario file.
    Validate { scenario: PathBuf },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Validation(_) | Error::Structural(_) => 2,
        Error::Infeasible(_) => 3,
        Error::Io { .. } => 1,
    }
}

fn out_root(explicit: Option<PathBuf>) -> PathBuf {
    explicit
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn scenario_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".to_string())
}

fn run_one(
    scenario_path: &Path,
    seed: Option<u64>,
    out_dir: &Path,
    trace: bool,
) -> Result<String, Error> {
    let mut scenario = Scenario::from_file(scenario_path)?;
    if let Some(seed) = seed {
        scenario.run.seed = seed;
    }
    let report = run_scenario(&scenario)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    report.emit(EmitFormat::Jsonl, &out_dir.join("run.jsonl"))?;
    report.emit(EmitFormat::Csv, &out_dir.join("run.csv"))?;
    if trace {
        let trace_json = final_iteration_trace(&scenario)?.chrome_trace();
        let path = out_dir.join("trace.json");
        std::fs::write(&path, serde_json::to_string(&trace_json).expect("trace serializes"))
            .map_err(|e| Error::io(path.display().to_string(), e))?;
    }
    let s = &report.summary;
    Ok(format!(
        "{}: {} x {} iterations | mean makespan {:.6} s | bubble {:.4} | throughput/worker {:.1} tok/s | avg workers {:.2}",
        scenario_stem(scenario_path),
        s.balancer,
        s.iterations,
        s.mean_makespan_s,
        s.mean_bubble_ratio,
        s.throughput_per_worker,
        s.avg_active_workers,
    ))
}

fn cmd_run(
    scenario: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    trace: bool,
) -> Result<(), Error> {
    let out_dir = match out {
        Some(dir) => dir,
        None => out_root(None).join(scenario_stem(scenario)),
    };
    let line = run_one(scenario, seed, &out_dir, trace)?;
    println!("{line}");
    println!("reports written to {}", out_dir.display());
    Ok(())
}

fn cmd_compare(baseline_dir: &Path, candidate_dirs: &[PathBuf]) -> Result<(), Error> {
    let load = |dir: &Path| {
        let path = summary_sibling(&dir.join("run.jsonl"));
        read_summary(&path)
    };
    let baseline = load(baseline_dir)?;
    let candidates = candidate_dirs
        .iter()
        .map(|d| load(d))
        .collect::<Result<Vec<_>, _>>()?;
    let summary = compare(&baseline, &candidates)?;
    println!(
        "baseline {} (mean makespan {:.6} s)",
        summary.baseline, baseline.mean_makespan_s
    );
    for entry in &summary.entries {
        println!(
            "  {:>20}: {:.6} s  speedup {:.3}x",
            entry.balancer, entry.mean_makespan_s, entry.speedup
        );
    }
    println!(
        "best: {} at {:.3}x",
        summary.best_balancer, summary.best_speedup
    );
    Ok(())
}

fn cmd_sweep(scenarios: &[PathBuf], parallel: usize, out: Option<PathBuf>) -> Result<(), Error> {
    let root = out_root(out);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel.max(1))
        .build()
        .map_err(|e| Error::Validation(format!("thread pool: {e}")))?;
    let results: Vec<(PathBuf, Result<String, Error>)> = pool.install(|| {
        use rayon::prelude::*;
        scenarios
            .par_iter()
            .map(|path| {
                let out_dir = root.join(scenario_stem(path));
                (path.clone(), run_one(path, None, &out_dir, false))
            })
            .collect()
    });
    let mut failed = None;
    for (path, result) in results {
        match result {
            Ok(line) => println!("ok   {line}"),
            Err(err) => {
                eprintln!("FAIL {}: {err}", path.display());
                failed = Some(exit_code_for(&err));
            }
        }
    }
    match failed {
        None => Ok(()),
        Some(code) => std::process::exit(code.into()),
    }
}

fn cmd_validate(scenario: &Path) -> Result<(), Error> {
    let sc = Scenario::from_file(scenario)?;
    sc.validate()?;
    // ensure a memory-feasible initial placement exists before calling it valid
    let layers = sc.build_layers()?;
    let workers = sc.build_workers();
    let assignment =
        pipesim_core::balance::initial_assignment(sc.balancer.kind, &layers, &workers)?;
    let states = vec![pipesim_core::workload::LayerState::dense(); layers.len()];
    assignment.validate(&layers, &states, &workers)?;
    println!(
        "{}: ok ({} layers, {} workers, {} iterations, case {})",
        scenario.display(),
        sc.model.depth,
        sc.workers.count,
        sc.run.iterations,
        sc.case_name(),
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            scenario,
            seed,
            out,
            trace,
        } => cmd_run(&scenario, seed, out, trace),
        Command::Compare {
            baseline_dir,
            candidate_dirs,
        } => cmd_compare(&baseline_dir, &candidate_dirs),
        Command::Sweep {
            scenarios,
            parallel,
            out,
        } => cmd_sweep(&scenarios, parallel, out),
        Command::Validate { scenario } => cmd_validate(&scenario),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}
