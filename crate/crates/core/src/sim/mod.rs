//! Deterministic discrete-event simulation of one pipeline-parallel
//! training iteration.
//!
//! Stage costs come from the layer specs and the current multipliers; the
//! schedule (GPipe or 1F1B) fixes each worker's task order, and list
//! scheduling with dependency release times yields start/end times. Ties
//! cannot occur: every worker's order is total, so the trace is a pure
//! function of the inputs.

mod trace;

pub use trace::{Interval, IntervalKind, IterationTrace, WorkerTrace};

use serde::{Deserialize, Serialize};

use crate::balance::MigrationPlan;
use crate::error::{Error, Result};
use crate::workload::{layer_payload_bytes, Assignment, LayerSpec, LayerState};

/// Micro-batch schedule. The pluggable surface for further schedules is
/// this enum plus `local_order`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Schedule {
    #[serde(rename = "gpipe")]
    GPipe,
    #[serde(rename = "1f1b", alias = "one_f_one_b")]
    OneFOneB,
}

/// Whether layer migration serializes with training or hides inside
/// backward-phase slack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MigrationOverlap {
    Serial,
    OverlapBackward,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub n_microbatches: u32,
    pub schedule: Schedule,
    /// Per-hop activation transfer: latency + bytes / bandwidth.
    pub p2p_latency: f64,
    pub p2p_bandwidth: f64,
    pub activation_bytes_per_microbatch: u64,
    pub data_parallel_ways: u32,
    pub allreduce_latency: f64,
    pub allreduce_bandwidth: f64,
    pub migration_overlap: MigrationOverlap,
    /// Optimizer state moved along with weights, as a multiple of the
    /// weight payload.
    pub optimizer_state_factor: f64,
    /// Multiplicative measurement noise of the profiling iteration.
    pub profile_noise: f64,
    /// Count migrate/profile intervals as busy in the bubble ratio.
    pub overheads_as_busy: bool,
    pub tokens_per_microbatch: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_microbatches: 32,
            schedule: Schedule::GPipe,
            p2p_latency: 0.0,
            p2p_bandwidth: 16e9,
            activation_bytes_per_microbatch: 0,
            data_parallel_ways: 1,
            allreduce_latency: 0.0,
            allreduce_bandwidth: 16e9,
            migration_overlap: MigrationOverlap::Serial,
            optimizer_state_factor: 3.0,
            profile_noise: 0.02,
            overheads_as_busy: false,
            tokens_per_microbatch: 4096,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_microbatches == 0 {
            return Err(Error::validation("n_microbatches must be >= 1"));
        }
        if self.p2p_bandwidth <= 0.0 || self.allreduce_bandwidth <= 0.0 {
            return Err(Error::validation("bandwidths must be > 0"));
        }
        if self.data_parallel_ways == 0 {
            return Err(Error::validation("data_parallel_ways must be >= 1"));
        }
        if self.p2p_latency < 0.0 || self.allreduce_latency < 0.0 {
            return Err(Error::validation("latencies must be >= 0"));
        }
        if self.optimizer_state_factor < 0.0 {
            return Err(Error::validation("optimizer_state_factor must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.profile_noise) {
            return Err(Error::validation("profile_noise must be in [0, 1)"));
        }
        Ok(())
    }

    fn hop_cost(&self) -> f64 {
        self.p2p_latency + self.activation_bytes_per_microbatch as f64 / self.p2p_bandwidth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TaskKind {
    RecvFwd,
    Fwd,
    RecvBwd,
    Bwd,
}

#[derive(Debug, Clone, Copy)]
struct Task {
    kind: TaskKind,
    mb: u32, // 1-based micro-batch
}

/// Fixed per-stage task order under a schedule. Receives precede the task
/// they feed; GPipe drains backwards in reverse micro-batch order, 1F1B
/// alternates after its warmup ramp.
fn local_order(schedule: Schedule, stage: usize, n_stages: usize, m: u32) -> Vec<Task> {
    let mut order = Vec::new();
    let first = stage == 0;
    let last = stage + 1 == n_stages;
    let push_fwd = |order: &mut Vec<Task>, b: u32| {
        if !first {
            order.push(Task {
                kind: TaskKind::RecvFwd,
                mb: b,
            });
        }
        order.push(Task {
            kind: TaskKind::Fwd,
            mb: b,
        });
    };
    let push_bwd = |order: &mut Vec<Task>, b: u32| {
        if !last {
            order.push(Task {
                kind: TaskKind::RecvBwd,
                mb: b,
            });
        }
        order.push(Task {
            kind: TaskKind::Bwd,
            mb: b,
        });
    };
    match schedule {
        Schedule::GPipe => {
            for b in 1..=m {
                push_fwd(&mut order, b);
            }
            for b in (1..=m).rev() {
                push_bwd(&mut order, b);
            }
        }
        Schedule::OneFOneB => {
            let warmup = ((n_stages - 1 - stage) as u32).min(m);
            for b in 1..=warmup {
                push_fwd(&mut order, b);
            }
            for j in 1..=m - warmup {
                push_fwd(&mut order, warmup + j);
                push_bwd(&mut order, j);
            }
            for b in m - warmup + 1..=m {
                push_bwd(&mut order, b);
            }
        }
    }
    order
}

/// Effective forward/backward cost of each stage per micro-batch.
fn stage_costs(
    assignment: &Assignment,
    layers: &[LayerSpec],
    states: &[LayerState],
) -> (Vec<f64>, Vec<f64>) {
    let mut fwd = Vec::with_capacity(assignment.n_stages());
    let mut bwd = Vec::with_capacity(assignment.n_stages());
    for s in 0..assignment.n_stages() {
        let mut f = 0.0;
        let mut b = 0.0;
        for i in assignment.stage_range(s) {
            f += layers[i].base_compute_fwd * states[i].fwd_compute;
            b += layers[i].base_compute_bwd * states[i].bwd_compute;
        }
        fwd.push(f);
        bwd.push(b);
    }
    (fwd, bwd)
}

/// Simulates one training iteration and returns the per-worker trace.
pub fn simulate_iteration(
    assignment: &Assignment,
    layers: &[LayerSpec],
    states: &[LayerState],
    config: &PipelineConfig,
) -> Result<IterationTrace> {
    config.validate()?;
    let n_stages = assignment.n_stages();
    if n_stages == 0 {
        return Err(Error::validation("empty pipeline"));
    }
    if states.len() != layers.len() || assignment.n_layers() != layers.len() {
        return Err(Error::structural("assignment/layers/states disagree"));
    }
    let m = config.n_microbatches;
    let hop = config.hop_cost();
    let (fwd_cost, bwd_cost) = stage_costs(assignment, layers, states);

    let orders: Vec<Vec<Task>> = (0..n_stages)
        .map(|s| local_order(config.schedule, s, n_stages, m))
        .collect();
    let mut next_idx = vec![0usize; n_stages];
    let mut free_at = vec![0.0f64; n_stages];
    // completion times, indexed [stage][mb-1]
    let mut fwd_end = vec![vec![f64::NAN; m as usize]; n_stages];
    let mut bwd_end = vec![vec![f64::NAN; m as usize]; n_stages];
    let mut trace = IterationTrace::new(assignment.stage_workers());

    let total_tasks: usize = orders.iter().map(Vec::len).sum();
    let mut scheduled = 0usize;
    while scheduled < total_tasks {
        let mut progressed = false;
        for s in 0..n_stages {
            // run every ready task at the head of this worker's order
            while next_idx[s] < orders[s].len() {
                let task = orders[s][next_idx[s]];
                let b = task.mb as usize - 1;
                // release time of the dependency, if already known
                let ready = match task.kind {
                    TaskKind::RecvFwd => fwd_end[s - 1][b],
                    TaskKind::Fwd => {
                        if s == 0 {
                            0.0
                        } else {
                            // RecvFwd immediately precedes and already ran
                            free_at[s]
                        }
                    }
                    TaskKind::RecvBwd => bwd_end[s + 1][b],
                    TaskKind::Bwd => {
                        if s + 1 == n_stages {
                            fwd_end[s][b]
                        } else {
                            free_at[s]
                        }
                    }
                };
                if ready.is_nan() {
                    break; // dependency not scheduled yet
                }
                let start = free_at[s].max(ready);
                let (duration, kind, record_mb) = match task.kind {
                    TaskKind::RecvFwd | TaskKind::RecvBwd => (hop, IntervalKind::Comm, true),
                    TaskKind::Fwd => (fwd_cost[s], IntervalKind::Fwd, true),
                    TaskKind::Bwd => (bwd_cost[s], IntervalKind::Bwd, true),
                };
                let end = start + duration;
                match task.kind {
                    TaskKind::Fwd => fwd_end[s][b] = end,
                    TaskKind::Bwd => bwd_end[s][b] = end,
                    _ => {}
                }
                free_at[s] = end;
                if duration > 0.0 && record_mb {
                    trace.push(
                        s,
                        Interval {
                            start,
                            end,
                            kind,
                            microbatch: Some(task.mb),
                        },
                    );
                } else if end > trace.makespan {
                    trace.makespan = end;
                }
                next_idx[s] += 1;
                scheduled += 1;
                progressed = true;
            }
        }
        if !progressed {
            return Err(Error::structural(
                "schedule deadlocked; dependency order is inconsistent",
            ));
        }
    }
    Ok(trace)
}

/// Charged migration time of a plan under the overlap model.
///
/// Each moved layer carries its weight payload (CSR-aware for pruned
/// layers) plus optimizer state at `optimizer_state_factor` times the
/// weight bytes; the whole volume crosses one p2p link. Serial mode charges
/// the full transfer; overlap mode hides up to `backward_slack` seconds of
/// it inside backpropagation and charges only the excess.
pub fn migration_overhead(
    plan: &MigrationPlan,
    layers: &[LayerSpec],
    states: &[LayerState],
    config: &PipelineConfig,
    backward_slack: f64,
) -> f64 {
    let mut bytes = 0.0;
    for mv in &plan.moves {
        let weights = layer_payload_bytes(&layers[mv.layer], &states[mv.layer]) as f64;
        let optimizer = config.optimizer_state_factor
            * layers[mv.layer].param_count as f64
            * 4.0
            * states[mv.layer].param_multiplier;
        bytes += weights + optimizer;
    }
    let raw = bytes / config.p2p_bandwidth;
    match config.migration_overlap {
        MigrationOverlap::Serial => raw,
        MigrationOverlap::OverlapBackward => (raw - backward_slack.max(0.0)).max(0.0),
    }
}

/// Appends the end-of-iteration gradient all-reduce for hybrid data
/// parallelism and returns the makespan extension.
///
/// The collective starts once the slowest stage finishes its backward work
/// (stragglers delay everyone) and costs
/// `latency * log2(ways) + 2 * (ways-1)/ways * grad_bytes / bandwidth`
/// per worker. `grad_bytes` is indexed by stage; frozen layers contribute
/// zero gradient traffic.
pub fn hybrid_allreduce_penalty(
    trace: &mut IterationTrace,
    grad_bytes: &[f64],
    config: &PipelineConfig,
) -> f64 {
    let ways = config.data_parallel_ways;
    if ways <= 1 {
        return 0.0;
    }
    let before = trace.makespan;
    let start = (0..trace.n_workers())
        .filter_map(|w| trace.last_bwd_end(w))
        .fold(0.0f64, f64::max);
    let scale = 2.0 * (ways as f64 - 1.0) / ways as f64;
    for w in 0..trace.n_workers() {
        let cost = config.allreduce_latency * (ways as f64).log2()
            + scale * grad_bytes.get(w).copied().unwrap_or(0.0) / config.allreduce_bandwidth;
        if cost > 0.0 {
            trace.push(
                w,
                Interval {
                    start,
                    end: start + cost,
                    kind: IntervalKind::Comm,
                    microbatch: None,
                },
            );
        }
    }
    (trace.makespan - before).max(0.0)
}

/// Analytic GPipe bubble for uniform stages and zero comm.
pub fn uniform_gpipe_bubble(n_stages: u32, n_microbatches: u32) -> f64 {
    (n_stages as f64 - 1.0) / (n_microbatches as f64 + n_stages as f64 - 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::balance::LayerMove;
    use crate::workload::LayerState;

    fn uniform_layers(n: usize, fwd: f64, bwd: f64) -> Vec<LayerSpec> {
        (0..n)
            .map(|i| LayerSpec {
                id: i,
                base_compute_fwd: fwd,
                base_compute_bwd: bwd,
                param_count: 1000,
                memory_bytes: 1 << 20,
            })
            .collect()
    }

    fn zero_comm(m: u32, schedule: Schedule) -> PipelineConfig {
        PipelineConfig {
            n_microbatches: m,
            schedule,
            ..PipelineConfig::default()
        }
    }

    fn one_per_stage(n: usize) -> Assignment {
        let workers: Vec<usize> = (0..n).collect();
        Assignment::uniform(n, &workers).unwrap()
    }

    #[test]
    fn single_stage_has_no_bubble() {
        let layers = uniform_layers(1, 1.0, 1.0);
        let states = vec![LayerState::dense(); 1];
        let trace = simulate_iteration(
            &one_per_stage(1),
            &layers,
            &states,
            &zero_comm(8, Schedule::GPipe),
        )
        .unwrap();
        assert_eq!(trace.bubble_ratio(false).unwrap(), 0.0);
    }

    #[test]
    fn gpipe_uniform_matches_analytic_bubble() {
        for (n, m) in [(2u32, 8u32), (4, 12), (8, 16)] {
            let layers = uniform_layers(n as usize, 0.5, 0.5);
            let states = vec![LayerState::dense(); n as usize];
            let trace = simulate_iteration(
                &one_per_stage(n as usize),
                &layers,
                &states,
                &zero_comm(m, Schedule::GPipe),
            )
            .unwrap();
            let got = trace.bubble_ratio(false).unwrap();
            let want = uniform_gpipe_bubble(n, m);
            assert!(
                (got - want).abs() < 1e-9,
                "n={n} m={m}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn one_f_one_b_uniform_matches_gpipe_bubble() {
        for (n, m) in [(2u32, 8u32), (4, 16), (8, 32)] {
            let layers = uniform_layers(n as usize, 0.5, 0.5);
            let states = vec![LayerState::dense(); n as usize];
            let trace = simulate_iteration(
                &one_per_stage(n as usize),
                &layers,
                &states,
                &zero_comm(m, Schedule::OneFOneB),
            )
            .unwrap();
            let got = trace.bubble_ratio(false).unwrap();
            let want = uniform_gpipe_bubble(n, m);
            assert!(
                (got - want).abs() < 1e-9,
                "n={n} m={m}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn slow_first_stage_starves_second() {
        // costs [2t, t]: the second stage idles toward 50% as m grows
        let mut layers = uniform_layers(2, 1.0, 1.0);
        layers[0].base_compute_fwd = 2.0;
        layers[0].base_compute_bwd = 2.0;
        let states = vec![LayerState::dense(); 2];
        let trace = simulate_iteration(
            &one_per_stage(2),
            &layers,
            &states,
            &zero_comm(64, Schedule::GPipe),
        )
        .unwrap();
        let idle = trace.per_worker_idle(false)[1];
        assert!((idle - 0.5).abs() < 0.02, "stage-2 idle {idle}");
    }

    #[test]
    fn dependency_soundness() {
        use rand::Rng;
        let mut rng = crate::seeds::stream(5, &[77]);
        for &schedule in &[Schedule::GPipe, Schedule::OneFOneB] {
            for _ in 0..10 {
                let n: usize = rng.random_range(2..6);
                let m: u32 = rng.random_range(2..10);
                let layers: Vec<LayerSpec> = (0..n)
                    .map(|i| LayerSpec {
                        id: i,
                        base_compute_fwd: rng.random_range(0.2..2.0),
                        base_compute_bwd: rng.random_range(0.2..2.0),
                        param_count: 10,
                        memory_bytes: 10,
                    })
                    .collect();
                let states = vec![LayerState::dense(); n];
                let mut config = zero_comm(m, schedule);
                config.p2p_latency = 0.05;
                let trace =
                    simulate_iteration(&one_per_stage(n), &layers, &states, &config).unwrap();
                let find = |s: usize, kind: IntervalKind, b: u32| {
                    trace.workers[s]
                        .intervals
                        .iter()
                        .find(|iv| iv.kind == kind && iv.microbatch == Some(b))
                        .copied()
                        .unwrap()
                };
                let hop = config.hop_cost();
                for s in 0..n {
                    for b in 1..=m {
                        let f = find(s, IntervalKind::Fwd, b);
                        if s > 0 {
                            let up = find(s - 1, IntervalKind::Fwd, b);
                            assert!(f.start + 1e-12 >= up.end + hop);
                        }
                        let bw = find(s, IntervalKind::Bwd, b);
                        if s + 1 < n {
                            let down = find(s + 1, IntervalKind::Bwd, b);
                            assert!(bw.start + 1e-12 >= down.end + hop);
                        } else {
                            assert!(bw.start + 1e-12 >= f.end);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn work_conservation() {
        let layers = uniform_layers(4, 0.7, 1.3);
        let states: Vec<LayerState> = (0..4)
            .map(|i| LayerState::uniform(1.0 - 0.2 * i as f64))
            .collect();
        let m = 6u32;
        let a = Assignment::uniform(4, &[0, 1]).unwrap();
        let trace =
            simulate_iteration(&a, &layers, &states, &zero_comm(m, Schedule::GPipe)).unwrap();
        let compute: f64 = (0..trace.n_workers())
            .map(|w| {
                trace.kind_time(w, IntervalKind::Fwd) + trace.kind_time(w, IntervalKind::Bwd)
            })
            .sum();
        let expect: f64 = layers
            .iter()
            .zip(&states)
            .map(|(l, s)| s.effective_cost(l))
            .sum::<f64>()
            * m as f64;
        assert!((compute - expect).abs() <= 1e-9 * expect);
    }

    #[test]
    fn makespan_monotone_in_stage_cost() {
        for &schedule in &[Schedule::GPipe, Schedule::OneFOneB] {
            let layers = uniform_layers(4, 1.0, 1.0);
            let states = vec![LayerState::dense(); 4];
            let base = simulate_iteration(
                &one_per_stage(4),
                &layers,
                &states,
                &zero_comm(8, schedule),
            )
            .unwrap()
            .makespan;
            for grow in 0..4 {
                let mut heavier = states.clone();
                heavier[grow] = LayerState::uniform(1.5);
                let span = simulate_iteration(
                    &one_per_stage(4),
                    &layers,
                    &heavier,
                    &zero_comm(8, schedule),
                )
                .unwrap()
                .makespan;
                assert!(span >= base - 1e-12, "{schedule:?} stage {grow}");
            }
        }
    }

    #[test]
    fn traces_are_deterministic() {
        let layers = uniform_layers(6, 0.9, 1.1);
        let states = vec![LayerState::dense(); 6];
        let a = Assignment::uniform(6, &[0, 1, 2]).unwrap();
        let mut config = zero_comm(12, Schedule::OneFOneB);
        config.p2p_latency = 0.01;
        let t1 = simulate_iteration(&a, &layers, &states, &config).unwrap();
        let t2 = simulate_iteration(&a, &layers, &states, &config).unwrap();
        assert_eq!(format!("{t1:?}"), format!("{t2:?}"));
    }

    fn plan_with_one_move(layers: &[LayerSpec], states: &[LayerState]) -> MigrationPlan {
        let a = Assignment::uniform(layers.len(), &[0, 1]).unwrap();
        MigrationPlan {
            moves: vec![LayerMove {
                layer: 0,
                src: 0,
                dst: 1,
            }],
            bytes_moved: layer_payload_bytes(&layers[0], &states[0]),
            decision_time: 0.0,
            resulting_assignment: a,
            delta_l_before: 0.0,
            delta_l_after: 0.0,
            basis: crate::workload::LoadBasis::Time,
            telemetry: None,
        }
    }

    #[test]
    fn migration_cost_model() {
        let mut layers = uniform_layers(2, 1.0, 1.0);
        layers[0].param_count = 1_000_000;
        let states = vec![LayerState::dense(); 2];
        let config = PipelineConfig::default(); // 16 GB/s, optimizer 3x
        let plan = plan_with_one_move(&layers, &states);
        let t = migration_overhead(&plan, &layers, &states, &config, 0.0);
        // (1 + 3) * 4 MB / 16 GB/s = 1 ms
        assert!((t - 1e-3).abs() < 1e-12);
        // full overlap hides it completely
        let mut overlapped = config.clone();
        overlapped.migration_overlap = MigrationOverlap::OverlapBackward;
        let t = migration_overhead(&plan, &layers, &states, &overlapped, 2e-3);
        assert_eq!(t, 0.0);
    }

    #[test]
    fn empty_plan_costs_nothing() {
        let layers = uniform_layers(2, 1.0, 1.0);
        let states = vec![LayerState::dense(); 2];
        let a = Assignment::uniform(2, &[0, 1]).unwrap();
        let plan = MigrationPlan {
            moves: vec![],
            bytes_moved: 0,
            decision_time: 0.0,
            resulting_assignment: a,
            delta_l_before: 0.0,
            delta_l_after: 0.0,
            basis: crate::workload::LoadBasis::Time,
            telemetry: None,
        };
        let t = migration_overhead(&plan, &layers, &states, &PipelineConfig::default(), 0.0);
        assert_eq!(t, 0.0);
    }

    #[test]
    fn allreduce_single_way_is_free() {
        let mut trace = IterationTrace::new(&[0]);
        trace.push(
            0,
            Interval {
                start: 0.0,
                end: 1.0,
                kind: IntervalKind::Bwd,
                microbatch: Some(1),
            },
        );
        let config = PipelineConfig::default();
        assert_eq!(hybrid_allreduce_penalty(&mut trace, &[1e9], &config), 0.0);
    }

    #[test]
    fn allreduce_straggler_delays_collective() {
        let mut trace = IterationTrace::new(&[0, 1]);
        for (w, end) in [(0usize, 10.0f64), (1, 14.0)] {
            trace.push(
                w,
                Interval {
                    start: 0.0,
                    end,
                    kind: IntervalKind::Bwd,
                    microbatch: Some(1),
                },
            );
        }
        let config = PipelineConfig {
            data_parallel_ways: 4,
            allreduce_bandwidth: 1e9,
            ..PipelineConfig::default()
        };
        let penalty = hybrid_allreduce_penalty(&mut trace, &[1e9, 1e9], &config);
        // both workers start at 14 and transfer 2 * (3/4) * 1 s
        let comm0 = trace.workers[0].intervals.last().unwrap();
        assert_eq!(comm0.kind, IntervalKind::Comm);
        assert_eq!(comm0.start, 14.0);
        assert!((penalty - 1.5).abs() < 1e-12);
        assert!((trace.makespan - 15.5).abs() < 1e-12);
    }

    #[test]
    fn allreduce_balanced_is_pure_transfer() {
        let mut trace = IterationTrace::new(&[0, 1]);
        for w in 0..2 {
            trace.push(
                w,
                Interval {
                    start: 0.0,
                    end: 10.0,
                    kind: IntervalKind::Bwd,
                    microbatch: Some(1),
                },
            );
        }
        let config = PipelineConfig {
            data_parallel_ways: 2,
            allreduce_bandwidth: 1e9,
            ..PipelineConfig::default()
        };
        let penalty = hybrid_allreduce_penalty(&mut trace, &[2e9, 2e9], &config);
        assert!((penalty - 2.0).abs() < 1e-12); // 2 * (1/2) * 2 s
    }
}
