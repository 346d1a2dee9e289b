//! Run reports and their serialized forms.
//!
//! A run emits one record per iteration plus a summary. JSONL output starts
//! with a schema-versioned header line followed by one record per line; CSV
//! uses a fixed, documented column order. The `balancing_wall_s` field is
//! measured wall-clock time (the balancer decision), so it is the one
//! column excluded from byte-level golden comparisons; everything else is
//! deterministic for a fixed scenario and seed.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA: &str = "pipesim.run.v1";

/// CSV column order. `balancing_wall_s` stays last so golden comparisons
/// can strip one trailing column.
pub const CSV_COLUMNS: [&str; 15] = [
    "iteration",
    "delta_l_before",
    "delta_l_after",
    "bubble_ratio",
    "bubble_ratio_overheads_busy",
    "makespan_s",
    "active_workers",
    "profiling_s",
    "migration_s",
    "moves",
    "dynamism_bytes_moved",
    "diffusion_rounds",
    "diffusion_converged",
    "released_workers",
    "balancing_wall_s",
];

/// A worker handed back to the resource manager at an iteration barrier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseEvent {
    pub iteration: u64,
    pub worker_id: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub iteration: u64,
    /// Imbalance on the balancer's measurement basis before/after the
    /// rebalance event at this iteration (equal when no event fired).
    pub delta_l_before: f64,
    pub delta_l_after: f64,
    /// Overheads counted as idleness.
    pub bubble_ratio: f64,
    /// Overheads counted as useful work.
    pub bubble_ratio_overheads_busy: f64,
    pub makespan_s: f64,
    pub active_workers: u32,
    pub profiling_s: f64,
    pub migration_s: f64,
    /// Measured wall-clock seconds of the balancing decision.
    pub balancing_wall_s: f64,
    pub moves: u32,
    pub dynamism_bytes_moved: u64,
    /// Diffusion rounds spent at this iteration's rebalance, when that
    /// balancer ran.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion_rounds: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diffusion_converged: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub released_workers: Vec<ReleaseEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario_hash: String,
    pub balancer: String,
    pub case: String,
    pub seed: u64,
    pub iterations: u64,
    pub mean_makespan_s: f64,
    pub mean_bubble_ratio: f64,
    pub mean_throughput_tokens_per_s: f64,
    /// Throughput divided by the average active worker count: the
    /// per-accelerator efficiency the re-packer optimizes.
    pub throughput_per_worker: f64,
    pub avg_active_workers: f64,
    /// Filled by `compare`, never by a bare run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speedup_vs_baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub schema: String,
    pub scenario_hash: String,
    pub balancer: String,
    pub case: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub header: ReportHeader,
    pub records: Vec<RunRecord>,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    Jsonl,
    Csv,
}

impl RunReport {
    /// Writes the report and its sibling `<path>.summary.json`; returns the
    /// written paths.
    pub fn emit(&self, format: EmitFormat, path: &Path) -> Result<Vec<PathBuf>> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                std::fs::create_dir_all(dir)
                    .map_err(|e| Error::io(dir.display().to_string(), e))?;
            }
        }
        match format {
            EmitFormat::Jsonl => self.write_jsonl(path)?,
            EmitFormat::Csv => self.write_csv(path)?,
        }
        let summary_path = summary_sibling(path);
        let summary = serde_json::to_string_pretty(&self.summary)
            .map_err(|e| Error::structural(format!("summary serialization: {e}")))?;
        std::fs::write(&summary_path, summary)
            .map_err(|e| Error::io(summary_path.display().to_string(), e))?;
        Ok(vec![path.to_path_buf(), summary_path])
    }

    fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file =
            std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut out = std::io::BufWriter::new(file);
        let io_err = |e: std::io::Error| Error::io(path.display().to_string(), e);
        let header = serde_json::to_string(&self.header).expect("header serializes");
        writeln!(out, "{header}").map_err(io_err)?;
        for record in &self.records {
            let line = serde_json::to_string(record).expect("record serializes");
            writeln!(out, "{line}").map_err(io_err)?;
        }
        out.flush().map_err(io_err)
    }

    fn write_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path)
            .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
        let as_csv = |e: csv::Error| Error::validation(format!("{}: {e}", path.display()));
        writer.write_record(CSV_COLUMNS).map_err(as_csv)?;
        for r in &self.records {
            let released = r
                .released_workers
                .iter()
                .map(|e| e.worker_id.to_string())
                .collect::<Vec<_>>()
                .join(";");
            writer
                .write_record(&[
                    r.iteration.to_string(),
                    r.delta_l_before.to_string(),
                    r.delta_l_after.to_string(),
                    r.bubble_ratio.to_string(),
                    r.bubble_ratio_overheads_busy.to_string(),
                    r.makespan_s.to_string(),
                    r.active_workers.to_string(),
                    r.profiling_s.to_string(),
                    r.migration_s.to_string(),
                    r.moves.to_string(),
                    r.dynamism_bytes_moved.to_string(),
                    r.diffusion_rounds.map(|v| v.to_string()).unwrap_or_default(),
                    r.diffusion_converged.map(|v| v.to_string()).unwrap_or_default(),
                    released,
                    r.balancing_wall_s.to_string(),
                ])
                .map_err(as_csv)?;
        }
        writer.flush().map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// Reads a JSONL report back (header plus records; the summary comes
    /// from the sibling file when present).
    pub fn parse_jsonl(path: &Path) -> Result<(ReportHeader, Vec<RunRecord>)> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut lines = text.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::validation(format!("{}: empty report", path.display())))?;
        let header: ReportHeader = serde_json::from_str(header_line)
            .map_err(|e| Error::validation(format!("{}: bad header: {e}", path.display())))?;
        if header.schema != SCHEMA {
            return Err(Error::validation(format!(
                "{}: schema {} (expected {SCHEMA})",
                path.display(),
                header.schema
            )));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: RunRecord = serde_json::from_str(line).map_err(|e| {
                Error::validation(format!("{}: record {}: {e}", path.display(), i + 1))
            })?;
            records.push(record);
        }
        Ok((header, records))
    }
}

pub fn summary_sibling(path: &Path) -> PathBuf {
    let mut name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "report".to_string());
    name.push_str(".summary.json");
    path.with_file_name(name)
}

pub fn read_summary(path: &Path) -> Result<RunSummary> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    serde_json::from_str(&text)
        .map_err(|e| Error::validation(format!("{}: bad summary: {e}", path.display())))
}

/// Speedup of one candidate against the baseline run.
#[derive(Debug, Clone, Serialize)]
pub struct CompareEntry {
    pub balancer: String,
    pub mean_makespan_s: f64,
    pub speedup: f64,
}

/// Best-of comparison across candidate balancers, mirroring the reporting
/// rule of taking the highest speedup among the dynamic variants.
#[derive(Debug, Clone, Serialize)]
pub struct CompareSummary {
    pub baseline: String,
    pub scenario_hash: String,
    pub entries: Vec<CompareEntry>,
    pub best_balancer: String,
    pub best_speedup: f64,
}

/// Validates scenario identity (content hash, which covers the seed) and
/// computes per-candidate and best-of speedups from mean iteration
/// makespans.
pub fn compare(baseline: &RunSummary, candidates: &[RunSummary]) -> Result<CompareSummary> {
    if candidates.is_empty() {
        return Err(Error::validation("compare needs at least one candidate"));
    }
    let mut entries = Vec::with_capacity(candidates.len());
    for cand in candidates {
        if cand.scenario_hash != baseline.scenario_hash {
            return Err(Error::validation(format!(
                "candidate {} ran scenario {} but baseline ran {}",
                cand.balancer, cand.scenario_hash, baseline.scenario_hash
            )));
        }
        if cand.mean_makespan_s <= 0.0 {
            return Err(Error::validation("candidate mean makespan must be > 0"));
        }
        entries.push(CompareEntry {
            balancer: cand.balancer.clone(),
            mean_makespan_s: cand.mean_makespan_s,
            speedup: baseline.mean_makespan_s / cand.mean_makespan_s,
        });
    }
    let best = entries
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.speedup.partial_cmp(&b.1.speedup).unwrap())
        .map(|(i, _)| i)
        .unwrap();
    Ok(CompareSummary {
        baseline: baseline.balancer.clone(),
        scenario_hash: baseline.scenario_hash.clone(),
        best_balancer: entries[best].balancer.clone(),
        best_speedup: entries[best].speedup,
        entries,
    })
}
