//! Busy/idle interval traces of one simulated iteration.

use serde::Serialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    Fwd,
    Bwd,
    Comm,
    Migrate,
    Profile,
    Idle,
}

impl IntervalKind {
    /// Overheads default to idleness in the bubble accounting; the flag
    /// flips them into useful work for overhead-inclusive reporting.
    pub fn is_busy(self, overheads_as_busy: bool) -> bool {
        match self {
            IntervalKind::Fwd | IntervalKind::Bwd | IntervalKind::Comm => true,
            IntervalKind::Migrate | IntervalKind::Profile => overheads_as_busy,
            IntervalKind::Idle => false,
        }
    }

    fn name(self) -> &'static str {
        match self {
            IntervalKind::Fwd => "fwd",
            IntervalKind::Bwd => "bwd",
            IntervalKind::Comm => "comm",
            IntervalKind::Migrate => "migrate",
            IntervalKind::Profile => "profile",
            IntervalKind::Idle => "idle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
    pub kind: IntervalKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub microbatch: Option<u32>,
}

impl Interval {
    pub fn duration(&self) -> f64 {
        self.end - self.start
    }
}

/// Interval row of one worker.
#[derive(Debug, Clone, Serialize)]
pub struct WorkerTrace {
    pub worker_id: usize,
    /// Non-idle intervals, sorted, non-overlapping.
    pub intervals: Vec<Interval>,
}

/// Per-worker busy intervals of one simulated training iteration.
#[derive(Debug, Clone, Serialize)]
pub struct IterationTrace {
    pub workers: Vec<WorkerTrace>,
    pub makespan: f64,
}

impl IterationTrace {
    pub fn new(worker_ids: &[usize]) -> Self {
        IterationTrace {
            workers: worker_ids
                .iter()
                .map(|&worker_id| WorkerTrace {
                    worker_id,
                    intervals: Vec::new(),
                })
                .collect(),
            makespan: 0.0,
        }
    }

    /// Appends an interval to a worker row; rows grow in time order.
    pub fn push(&mut self, row: usize, interval: Interval) {
        debug_assert!(interval.end >= interval.start);
        if let Some(last) = self.workers[row].intervals.last() {
            debug_assert!(interval.start >= last.end - 1e-12, "intervals must not overlap");
        }
        if interval.end > self.makespan {
            self.makespan = interval.end;
        }
        self.workers[row].intervals.push(interval);
    }

    pub fn n_workers(&self) -> usize {
        self.workers.len()
    }

    pub fn busy_time(&self, row: usize, overheads_as_busy: bool) -> f64 {
        self.workers[row]
            .intervals
            .iter()
            .filter(|i| i.kind.is_busy(overheads_as_busy))
            .map(Interval::duration)
            .sum()
    }

    /// Total duration of intervals of one kind on one row.
    pub fn kind_time(&self, row: usize, kind: IntervalKind) -> f64 {
        self.workers[row]
            .intervals
            .iter()
            .filter(|i| i.kind == kind)
            .map(Interval::duration)
            .sum()
    }

    /// End of the last backward interval on a row, if any.
    pub fn last_bwd_end(&self, row: usize) -> Option<f64> {
        self.workers[row]
            .intervals
            .iter()
            .rev()
            .find(|i| i.kind == IntervalKind::Bwd)
            .map(|i| i.end)
    }

    /// Idle fraction per worker under the given busy policy.
    pub fn per_worker_idle(&self, overheads_as_busy: bool) -> Vec<f64> {
        (0..self.n_workers())
            .map(|w| 1.0 - self.busy_time(w, overheads_as_busy) / self.makespan)
            .collect()
    }

    /// 1 - (total busy time) / (workers x makespan).
    pub fn bubble_ratio(&self, overheads_as_busy: bool) -> Result<f64> {
        if self.makespan <= 0.0 {
            return Err(Error::validation("bubble ratio of a zero-makespan trace"));
        }
        let busy: f64 = (0..self.n_workers())
            .map(|w| self.busy_time(w, overheads_as_busy))
            .sum();
        Ok(1.0 - busy / (self.n_workers() as f64 * self.makespan))
    }

    /// Backward-phase idle time of a row: gaps between that row's first and
    /// last backward interval. This is the slack migration can hide in when
    /// it overlaps backpropagation.
    pub fn backward_slack(&self, row: usize) -> f64 {
        let intervals = &self.workers[row].intervals;
        let first = intervals.iter().find(|i| i.kind == IntervalKind::Bwd);
        let last = intervals.iter().rev().find(|i| i.kind == IntervalKind::Bwd);
        match (first, last) {
            (Some(f), Some(l)) => {
                let span = l.end - f.start;
                let busy: f64 = intervals
                    .iter()
                    .filter(|i| i.start >= f.start && i.end <= l.end)
                    .map(Interval::duration)
                    .sum();
                (span - busy).max(0.0)
            }
            _ => 0.0,
        }
    }

    /// Appends a migration window of `duration` at the end of the iteration
    /// on the given rows.
    pub fn append_migration(&mut self, rows: &[usize], duration: f64) {
        if duration <= 0.0 || rows.is_empty() {
            return;
        }
        let start = self.makespan;
        for &row in rows {
            self.push(
                row,
                Interval {
                    start,
                    end: start + duration,
                    kind: IntervalKind::Migrate,
                    microbatch: None,
                },
            );
        }
    }

    /// Materializes idle gaps so that every row tiles [0, makespan].
    pub fn with_idle_filled(&self) -> IterationTrace {
        let mut out = self.clone();
        for row in &mut out.workers {
            let mut filled = Vec::with_capacity(row.intervals.len() * 2 + 1);
            let mut t = 0.0;
            for iv in &row.intervals {
                if iv.start > t {
                    filled.push(Interval {
                        start: t,
                        end: iv.start,
                        kind: IntervalKind::Idle,
                        microbatch: None,
                    });
                }
                filled.push(*iv);
                t = iv.end;
            }
            if t < out.makespan {
                filled.push(Interval {
                    start: t,
                    end: out.makespan,
                    kind: IntervalKind::Idle,
                    microbatch: None,
                });
            }
            row.intervals = filled;
        }
        out
    }

    /// Chrome trace format: complete ("X") events in microseconds, one tid
    /// per worker.
    pub fn chrome_trace(&self) -> serde_json::Value {
        let mut events = Vec::new();
        for row in &self.workers {
            for iv in &row.intervals {
                let name = match iv.microbatch {
                    Some(b) => format!("{} b{}", iv.kind.name(), b),
                    None => iv.kind.name().to_string(),
                };
                events.push(serde_json::json!({
                    "name": name,
                    "cat": iv.kind.name(),
                    "ph": "X",
                    "ts": iv.start * 1e6,
                    "dur": iv.duration() * 1e6,
                    "pid": 0,
                    "tid": row.worker_id,
                }));
            }
        }
        serde_json::Value::Array(events)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iv(start: f64, end: f64, kind: IntervalKind) -> Interval {
        Interval {
            start,
            end,
            kind,
            microbatch: None,
        }
    }

    #[test]
    fn bubble_arithmetic() {
        let mut t = IterationTrace::new(&[0, 1]);
        t.push(0, iv(0.0, 10.0, IntervalKind::Fwd));
        t.push(1, iv(0.0, 5.0, IntervalKind::Fwd));
        assert_eq!(t.bubble_ratio(false).unwrap(), 0.25);
    }

    #[test]
    fn fully_busy_trace_has_zero_bubble() {
        let mut t = IterationTrace::new(&[0]);
        t.push(0, iv(0.0, 3.0, IntervalKind::Fwd));
        t.push(0, iv(3.0, 6.0, IntervalKind::Bwd));
        assert_eq!(t.bubble_ratio(false).unwrap(), 0.0);
    }

    #[test]
    fn zero_makespan_rejected() {
        let t = IterationTrace::new(&[0]);
        assert!(t.bubble_ratio(false).is_err());
    }

    #[test]
    fn overhead_busy_policy() {
        let mut t = IterationTrace::new(&[0]);
        t.push(0, iv(0.0, 5.0, IntervalKind::Fwd));
        t.push(0, iv(5.0, 10.0, IntervalKind::Migrate));
        assert_eq!(t.bubble_ratio(false).unwrap(), 0.5);
        assert_eq!(t.bubble_ratio(true).unwrap(), 0.0);
    }

    #[test]
    fn idle_fill_tiles_makespan() {
        let mut t = IterationTrace::new(&[0, 1]);
        t.push(0, iv(1.0, 4.0, IntervalKind::Fwd));
        t.push(1, iv(0.0, 2.0, IntervalKind::Fwd));
        t.push(1, iv(5.0, 6.0, IntervalKind::Bwd));
        let filled = t.with_idle_filled();
        for row in &filled.workers {
            let mut at = 0.0;
            for iv in &row.intervals {
                assert!((iv.start - at).abs() < 1e-12, "gap in tiling");
                at = iv.end;
            }
            assert!((at - filled.makespan).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_slack_measures_gaps() {
        let mut t = IterationTrace::new(&[0]);
        t.push(0, iv(0.0, 2.0, IntervalKind::Fwd));
        t.push(0, iv(2.0, 3.0, IntervalKind::Bwd));
        t.push(0, iv(5.0, 6.0, IntervalKind::Bwd));
        assert_eq!(t.backward_slack(0), 2.0);
    }

    #[test]
    fn chrome_trace_shape() {
        let mut t = IterationTrace::new(&[3]);
        t.push(
            0,
            Interval {
                start: 0.5,
                end: 1.5,
                kind: IntervalKind::Fwd,
                microbatch: Some(2),
            },
        );
        let json = t.chrome_trace();
        let events = json.as_array().unwrap();
        assert_eq!(events.len(), 1);
        assert_eq!(events[0]["name"], "fwd b2");
        assert_eq!(events[0]["ph"], "X");
        assert_eq!(events[0]["tid"], 3);
        assert_eq!(events[0]["ts"], 0.5e6);
        assert_eq!(events[0]["dur"], 1e6);
    }
}
