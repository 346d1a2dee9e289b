//! The scenario loop: advance dynamism, profile, balance, re-pack, train.
//!
//! Each iteration advances the dynamism engine and simulates one training
//! iteration. At the rebalance cadence an instrumented profiling iteration
//! runs first on the current placement (its duration lands in the
//! profiling-overhead column), the balancer produces a migration plan from
//! the measured layer times, migration cost is charged under the overlap
//! model, and the re-packer may consolidate workers at the same barrier.
//! Everything except the balancer's wall-clock decision time is a pure
//! function of (scenario, seed).

use rand::Rng;

use crate::balance::{
    initial_assignment, rebalance, MigrationPlan, ProfileSnapshot, RebalanceOptions,
};
use crate::dynamism::DynamismEngine;
use crate::error::{Error, Result};
use crate::repack::{apply_repack, plan_repack};
use crate::report::{ReleaseEvent, ReportHeader, RunRecord, RunReport, RunSummary, SCHEMA};
use crate::scenario::Scenario;
use crate::seeds::{self, tag};
use crate::sim::{
    hybrid_allreduce_penalty, migration_overhead, simulate_iteration, IterationTrace,
    MigrationOverlap, PipelineConfig,
};
use crate::workload::{imbalance, worker_loads, Assignment, LayerSpec, LayerState, LoadBasis};

/// Builds the measured profile of the iteration that just ran: true layer
/// costs with seeded multiplicative instrumentation noise, per-stage memory
/// usage, and the instrumented iteration's duration.
fn make_profile(
    assignment: &Assignment,
    layers: &[LayerSpec],
    states: &[LayerState],
    config: &PipelineConfig,
    seed: u64,
    iteration: u64,
    duration: f64,
) -> ProfileSnapshot {
    let noise = config.profile_noise;
    let layer_times = layers
        .iter()
        .zip(states)
        .map(|(l, s)| {
            let true_cost = s.effective_cost(l);
            let mut rng = seeds::stream(seed, &[tag::PROFILE_NOISE, iteration, l.id as u64]);
            let u = if noise > 0.0 {
                rng.random_range(-noise..=noise)
            } else {
                0.0
            };
            true_cost * (1.0 + u)
        })
        .collect();
    let worker_memory = (0..assignment.n_stages())
        .map(|s| assignment.stage_memory(s, layers, states))
        .collect();
    ProfileSnapshot {
        layer_times,
        worker_memory,
        profiling_duration: duration,
    }
}

/// Gradient bytes each stage contributes to the data-parallel all-reduce;
/// layers without backward work (frozen) contribute nothing.
fn stage_grad_bytes(
    assignment: &Assignment,
    layers: &[LayerSpec],
    states: &[LayerState],
) -> Vec<f64> {
    (0..assignment.n_stages())
        .map(|s| {
            assignment
                .stage_range(s)
                .map(|i| {
                    if states[i].bwd_compute > 0.0 {
                        layers[i].param_count as f64 * 4.0 * states[i].param_multiplier
                    } else {
                        0.0
                    }
                })
                .sum()
        })
        .collect()
}

/// Backward slack available to hide a migration: the tightest source or
/// destination worker bounds the overlap.
fn plan_slack(plan: &MigrationPlan, trace: &IterationTrace, assignment: &Assignment) -> f64 {
    if plan.moves.is_empty() {
        return 0.0;
    }
    let mut involved: Vec<usize> = Vec::new();
    for mv in &plan.moves {
        for w in [mv.src, mv.dst] {
            if !involved.contains(&w) {
                involved.push(w);
            }
        }
    }
    let slack = involved
        .iter()
        .filter_map(|&w| {
            (0..assignment.n_stages())
                .find(|&s| assignment.worker_of_stage(s) == w)
                .map(|s| trace.backward_slack(s))
        })
        .fold(f64::INFINITY, f64::min);
    if slack.is_finite() {
        slack.max(0.0)
    } else {
        0.0
    }
}

/// Rows (stage indices) of the workers touched by migrations, in the
/// post-migration placement. Released workers have no row and drop out.
fn involved_rows(assignment: &Assignment, worker_ids: &[usize]) -> Vec<usize> {
    (0..assignment.n_stages())
        .filter(|&s| worker_ids.contains(&assignment.worker_of_stage(s)))
        .collect()
}

pub fn run_scenario(scenario: &Scenario) -> Result<RunReport> {
    scenario.validate()?;
    let layers = scenario.build_layers()?;
    let mut workers = scenario.build_workers();
    let pipeline = scenario.pipeline.clone();
    let kind = scenario.balancer.kind;
    let opts = RebalanceOptions {
        gamma: scenario.balancer.gamma,
        max_rounds: scenario.balancer.max_rounds,
    };
    let seed = scenario.run.seed;
    let case = scenario.build_case(&layers)?;
    let mut engine = DynamismEngine::new(case, &layers, seed)?;
    let mut snapshot = engine.initial_snapshot();
    let mut assignment = initial_assignment(kind, &layers, &workers)?;
    assignment
        .validate(&layers, &snapshot.states, &workers)
        .map_err(|e| Error::infeasible(format!("initial assignment: {e}")))?;

    let iterations = scenario.run.iterations;
    let tokens_per_iteration =
        (pipeline.n_microbatches as u64 * pipeline.tokens_per_microbatch) as f64;
    let mut records: Vec<RunRecord> = Vec::with_capacity(iterations as usize);

    for k in 1..=iterations {
        snapshot = engine.next_snapshot(&snapshot, k)?;
        let states = &snapshot.states;

        let current_delta_l = {
            let lv = worker_loads(&assignment, &layers, states, &workers, LoadBasis::Time)?;
            imbalance(&lv)?.delta_l
        };
        let mut delta_l_before = current_delta_l;
        let mut delta_l_after = current_delta_l;
        let mut profiling_s = 0.0;
        let mut balancing_wall_s = 0.0;
        let mut migration_s = 0.0;
        let mut moves = 0u32;
        let mut released: Vec<ReleaseEvent> = Vec::new();
        let mut diffusion_rounds = None;
        let mut diffusion_converged = None;
        let mut migrated_workers: Vec<usize> = Vec::new();

        let due = kind.is_dynamic() && k % scenario.run.rebalance_interval == 0;
        if due {
            // profiling iteration: instrumented run on the current placement
            let profile_trace = simulate_iteration(&assignment, &layers, states, &pipeline)
                .map_err(|e| Error::infeasible(format!("iteration {k}: {e}")))?;
            let profile = make_profile(
                &assignment,
                &layers,
                states,
                &pipeline,
                seed,
                k,
                profile_trace.makespan,
            );
            profiling_s = profile.profiling_duration;
            let plan = rebalance(&profile, kind, &assignment, &layers, states, &workers, &opts)
                .map_err(|e| Error::infeasible(format!("iteration {k}: {e}")))?;
            balancing_wall_s = plan.decision_time;
            delta_l_before = plan.delta_l_before;
            delta_l_after = plan.delta_l_after;
            moves = plan.moves.len() as u32;
            if let Some(telemetry) = &plan.telemetry {
                diffusion_rounds = Some(telemetry.rounds);
                diffusion_converged = Some(telemetry.converged);
            }
            let slack = match pipeline.migration_overlap {
                MigrationOverlap::Serial => 0.0,
                MigrationOverlap::OverlapBackward => plan_slack(&plan, &profile_trace, &assignment),
            };
            migration_s += migration_overhead(&plan, &layers, states, &pipeline, slack);
            for mv in &plan.moves {
                for w in [mv.src, mv.dst] {
                    if !migrated_workers.contains(&w) {
                        migrated_workers.push(w);
                    }
                }
            }
            assignment = plan.resulting_assignment;

            // re-packing at the iteration barrier
            if scenario.repack.enabled {
                let mut active = vec![false; workers.len()];
                let mut mem_usage = vec![0u64; workers.len()];
                let mut counts = vec![0usize; workers.len()];
                for s in 0..assignment.n_stages() {
                    let w = assignment.worker_of_stage(s);
                    active[w] = true;
                    mem_usage[w] = assignment.stage_memory(s, &layers, states);
                    counts[w] = assignment.stage_range(s).len();
                }
                let cap = workers
                    .iter()
                    .filter(|w| w.active)
                    .map(|w| w.memory_capacity)
                    .min()
                    .unwrap_or(0);
                let max_mem = (cap as f64 * scenario.repack.headroom) as u64;
                let repack_plan = plan_repack(
                    &active,
                    &mem_usage,
                    &counts,
                    scenario.repack.target_num_workers,
                    max_mem,
                    &scenario.repack_options(),
                )?;
                if !repack_plan.is_empty() {
                    let mut bytes = 0u64;
                    for t in &repack_plan.transfers {
                        let stage = (0..assignment.n_stages())
                            .find(|&s| assignment.worker_of_stage(s) == t.src);
                        if let Some(s) = stage {
                            let range = assignment.stage_range(s);
                            if let Some(layer) = range.clone().nth(t.layer_idx) {
                                bytes += crate::workload::layer_payload_bytes(
                                    &layers[layer],
                                    &states[layer],
                                );
                            }
                        }
                        if !migrated_workers.contains(&t.dst) {
                            migrated_workers.push(t.dst);
                        }
                    }
                    migration_s += bytes as f64 / pipeline.p2p_bandwidth;
                    migration_s += scenario.repack.restart_cost;
                    let (next, next_workers) = apply_repack(&repack_plan, &assignment, &workers)
                        .map_err(|e| Error::infeasible(format!("iteration {k}: {e}")))?;
                    assignment = next;
                    workers = next_workers;
                    released = repack_plan
                        .released_workers
                        .iter()
                        .map(|&worker_id| ReleaseEvent {
                            iteration: k,
                            worker_id,
                            reason: "repack".to_string(),
                        })
                        .collect();
                }
            }
        }

        // the training iteration on the (possibly rebalanced) placement
        let mut trace = simulate_iteration(&assignment, &layers, states, &pipeline)
            .map_err(|e| Error::infeasible(format!("iteration {k}: {e}")))?;
        if pipeline.data_parallel_ways > 1 {
            let grads = stage_grad_bytes(&assignment, &layers, states);
            hybrid_allreduce_penalty(&mut trace, &grads, &pipeline);
        }
        // pruning gather/scatter crosses the same p2p links
        let dynamism_s = snapshot.data_moved_bytes as f64 / pipeline.p2p_bandwidth;
        let overhead_window = migration_s + dynamism_s;
        if overhead_window > 0.0 {
            let rows = if migrated_workers.is_empty() {
                (0..assignment.n_stages()).collect()
            } else {
                involved_rows(&assignment, &migrated_workers)
            };
            trace.append_migration(&rows, overhead_window);
        }

        records.push(RunRecord {
            iteration: k,
            delta_l_before,
            delta_l_after,
            bubble_ratio: trace.bubble_ratio(false)?,
            bubble_ratio_overheads_busy: trace.bubble_ratio(true)?,
            makespan_s: trace.makespan,
            active_workers: assignment.n_stages() as u32,
            profiling_s,
            migration_s,
            balancing_wall_s,
            moves,
            dynamism_bytes_moved: snapshot.data_moved_bytes,
            diffusion_rounds,
            diffusion_converged,
            released_workers: released,
        });
    }

    let hash = scenario.content_hash();
    let total_makespan: f64 = records.iter().map(|r| r.makespan_s).sum();
    let mean_makespan = total_makespan / iterations as f64;
    let mean_bubble =
        records.iter().map(|r| r.bubble_ratio).sum::<f64>() / iterations as f64;
    let avg_active = records
        .iter()
        .map(|r| r.active_workers as f64)
        .sum::<f64>()
        / iterations as f64;
    let throughput = tokens_per_iteration * iterations as f64 / total_makespan;
    let summary = RunSummary {
        scenario_hash: hash.clone(),
        balancer: kind.name().to_string(),
        case: scenario.case_name().to_string(),
        seed,
        iterations,
        mean_makespan_s: mean_makespan,
        mean_bubble_ratio: mean_bubble,
        mean_throughput_tokens_per_s: throughput,
        throughput_per_worker: throughput / avg_active,
        avg_active_workers: avg_active,
        speedup_vs_baseline: None,
    };
    Ok(RunReport {
        header: ReportHeader {
            schema: SCHEMA.to_string(),
            scenario_hash: hash,
            balancer: kind.name().to_string(),
            case: scenario.case_name().to_string(),
            seed,
        },
        records,
        summary,
    })
}

/// Simulates the final iteration once more for trace export: the final
/// dynamism state on the initial placement for static balancers, or on a
/// freshly rebalanced one (noise-free profile) for dynamic kinds.
pub fn final_iteration_trace(scenario: &Scenario) -> Result<IterationTrace> {
    scenario.validate()?;
    let layers = scenario.build_layers()?;
    let workers = scenario.build_workers();
    let case = scenario.build_case(&layers)?;
    let mut engine = DynamismEngine::new(case, &layers, scenario.run.seed)?;
    let mut snapshot = engine.initial_snapshot();
    for k in 1..=scenario.run.iterations {
        snapshot = engine.next_snapshot(&snapshot, k)?;
    }
    let kind = scenario.balancer.kind;
    let mut assignment = initial_assignment(kind, &layers, &workers)?;
    if kind.is_dynamic() {
        let profile = ProfileSnapshot {
            layer_times: layers
                .iter()
                .zip(&snapshot.states)
                .map(|(l, s)| s.effective_cost(l))
                .collect(),
            worker_memory: (0..assignment.n_stages())
                .map(|s| assignment.stage_memory(s, &layers, &snapshot.states))
                .collect(),
            profiling_duration: 0.0,
        };
        let opts = RebalanceOptions {
            gamma: scenario.balancer.gamma,
            max_rounds: scenario.balancer.max_rounds,
        };
        let plan = rebalance(
            &profile,
            kind,
            &assignment,
            &layers,
            &snapshot.states,
            &workers,
            &opts,
        )?;
        assignment = plan.resulting_assignment;
    }
    simulate_iteration(&assignment, &layers, &snapshot.states, &scenario.pipeline)
}
