//! Rebalancing algorithms and the migration plans they produce.
//!
//! Two static baselines (uniform layer counts, parameter-balanced once at
//! startup) and two dynamic algorithms (centralized min-max partitioning,
//! decentralized diffusion), each dynamic one driven by either measured
//! layer times or retained parameter counts.

mod diffusion;
mod partition;

pub use diffusion::{
    diffusion_balance, diffusion_step, potential, DiffusionContext, DiffusionTelemetry,
};
pub use partition::{partition, partition_with_memory, split_bottleneck};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::{
    imbalance, layer_payload_bytes, Assignment, LayerSpec, LayerState, LoadBasis, LoadVector,
    WorkerSpec,
};

/// Which balancing policy a scenario runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalancerKind {
    /// Even layer counts, fixed for the whole run.
    StaticUniform,
    /// Parameter-balanced split computed once before training.
    StaticParamOnce,
    PartitionByParam,
    PartitionByTime,
    DiffusionByParam,
    DiffusionByTime,
}

impl BalancerKind {
    pub fn is_dynamic(self) -> bool {
        !matches!(
            self,
            BalancerKind::StaticUniform | BalancerKind::StaticParamOnce
        )
    }

    /// Measurement basis a dynamic kind balances on.
    pub fn basis(self) -> LoadBasis {
        match self {
            BalancerKind::PartitionByParam
            | BalancerKind::DiffusionByParam
            | BalancerKind::StaticParamOnce => LoadBasis::Params,
            _ => LoadBasis::Time,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BalancerKind::StaticUniform => "static_uniform",
            BalancerKind::StaticParamOnce => "static_param_once",
            BalancerKind::PartitionByParam => "partition_by_param",
            BalancerKind::PartitionByTime => "partition_by_time",
            BalancerKind::DiffusionByParam => "diffusion_by_param",
            BalancerKind::DiffusionByTime => "diffusion_by_time",
        }
    }

    pub const ALL: [BalancerKind; 6] = [
        BalancerKind::StaticUniform,
        BalancerKind::StaticParamOnce,
        BalancerKind::PartitionByParam,
        BalancerKind::PartitionByTime,
        BalancerKind::DiffusionByParam,
        BalancerKind::DiffusionByTime,
    ];

    pub const DYNAMIC: [BalancerKind; 4] = [
        BalancerKind::PartitionByParam,
        BalancerKind::PartitionByTime,
        BalancerKind::DiffusionByParam,
        BalancerKind::DiffusionByTime,
    ];
}

/// Measurements from one profiling iteration.
#[derive(Debug, Clone, Serialize)]
pub struct ProfileSnapshot {
    /// Per-layer measured execution time (true effective cost with
    /// multiplicative instrumentation noise).
    pub layer_times: Vec<f64>,
    /// Per-stage memory usage in pipeline order.
    pub worker_memory: Vec<u64>,
    /// Duration of the instrumented iteration.
    pub profiling_duration: f64,
}

/// One layer migration between workers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LayerMove {
    pub layer: usize,
    pub src: usize,
    pub dst: usize,
}

/// Output of one rebalance decision.
#[derive(Debug, Clone, Serialize)]
pub struct MigrationPlan {
    /// Layer moves in ascending layer order.
    pub moves: Vec<LayerMove>,
    /// Weight payload of the moved layers (CSR-aware, optimizer state
    /// excluded; the transfer model adds it).
    pub bytes_moved: u64,
    /// Wall-clock seconds the balancing decision took. Measured, not
    /// simulated; excluded from golden comparisons.
    pub decision_time: f64,
    pub resulting_assignment: Assignment,
    /// Imbalance on the decision basis before and after.
    pub delta_l_before: f64,
    pub delta_l_after: f64,
    pub basis: LoadBasis,
    pub telemetry: Option<DiffusionTelemetry>,
}

impl MigrationPlan {
    pub fn is_empty(&self) -> bool {
        self.moves.is_empty()
    }
}

/// Knobs for the diffusion variants.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RebalanceOptions {
    pub gamma: f64,
    pub max_rounds: u64,
}

impl Default for RebalanceOptions {
    fn default() -> Self {
        RebalanceOptions {
            gamma: 1e-9,
            max_rounds: 100_000,
        }
    }
}

/// Initial placement for a run: uniform layer counts for every kind except
/// the parameter-balanced-once baseline, which partitions by parameter
/// count before training begins.
pub fn initial_assignment(
    kind: BalancerKind,
    layers: &[LayerSpec],
    workers: &[WorkerSpec],
) -> Result<Assignment> {
    let active: Vec<usize> = workers.iter().filter(|w| w.active).map(|w| w.id).collect();
    if active.is_empty() {
        return Err(Error::validation("no active workers"));
    }
    match kind {
        BalancerKind::StaticParamOnce => {
            let costs: Vec<f64> = layers.iter().map(|l| l.param_count as f64).collect();
            let mem: Vec<u64> = layers.iter().map(|l| l.memory_bytes).collect();
            let caps: Vec<u64> = active.iter().map(|&w| workers[w].memory_capacity).collect();
            let splits = partition_with_memory(&costs, &mem, &caps, active.len())?;
            Assignment::from_splits(&splits, layers.len(), &active)
        }
        _ => Assignment::uniform(layers.len(), &active),
    }
}

fn stage_sums(assignment: &Assignment, costs: &[f64]) -> Vec<f64> {
    (0..assignment.n_stages())
        .map(|s| assignment.stage_range(s).map(|i| costs[i]).sum())
        .collect()
}

fn delta_l(assignment: &Assignment, costs: &[f64], basis: LoadBasis) -> f64 {
    let lv = LoadVector::new(basis, stage_sums(assignment, costs));
    imbalance(&lv).map(|r| r.delta_l).unwrap_or(0.0)
}

fn diff_moves(
    before: &Assignment,
    after: &Assignment,
    layers: &[LayerSpec],
    states: &[LayerState],
) -> (Vec<LayerMove>, u64) {
    let mut moves = Vec::new();
    let mut bytes = 0u64;
    for layer in 0..before.n_layers() {
        let src = before.worker_of_stage(before.stage_of_layer(layer));
        let dst = after.worker_of_stage(after.stage_of_layer(layer));
        if src != dst {
            moves.push(LayerMove { layer, src, dst });
            bytes += layer_payload_bytes(&layers[layer], &states[layer]);
        }
    }
    (moves, bytes)
}

/// Recomputes the placement from the latest profile. Partition kinds diff a
/// fresh optimal split against the current assignment; diffusion kinds run
/// rounds from the current assignment; static kinds never migrate. A plan
/// that would raise the measured-basis imbalance is discarded in favor of
/// keeping the current placement.
pub fn rebalance(
    profile: &ProfileSnapshot,
    kind: BalancerKind,
    current: &Assignment,
    layers: &[LayerSpec],
    states: &[LayerState],
    workers: &[WorkerSpec],
    opts: &RebalanceOptions,
) -> Result<MigrationPlan> {
    if profile.layer_times.len() != layers.len() || states.len() != layers.len() {
        return Err(Error::structural(format!(
            "profile/state sizes ({}, {}) do not match {} layers",
            profile.layer_times.len(),
            states.len(),
            layers.len()
        )));
    }
    let started = Instant::now();
    let basis = kind.basis();
    let costs: Vec<f64> = match basis {
        LoadBasis::Time => profile.layer_times.clone(),
        LoadBasis::Params => layers
            .iter()
            .zip(states)
            .map(|(l, s)| l.param_count as f64 * s.param_multiplier)
            .collect(),
    };
    let before = delta_l(current, &costs, basis);

    if !kind.is_dynamic() {
        return Ok(MigrationPlan {
            moves: Vec::new(),
            bytes_moved: 0,
            decision_time: started.elapsed().as_secs_f64(),
            resulting_assignment: current.clone(),
            delta_l_before: before,
            delta_l_after: before,
            basis,
            telemetry: None,
        });
    }

    let layer_memory: Vec<u64> = layers
        .iter()
        .zip(states)
        .map(|(l, s)| (l.memory_bytes as f64 * s.memory_multiplier).round() as u64)
        .collect();
    let capacities: Vec<u64> = current
        .stage_workers()
        .iter()
        .map(|&w| workers[w].memory_capacity)
        .collect();

    let (mut resulting, telemetry) = match kind {
        BalancerKind::PartitionByParam | BalancerKind::PartitionByTime => {
            let splits =
                partition_with_memory(&costs, &layer_memory, &capacities, current.n_stages())?;
            let next =
                Assignment::from_splits(&splits, layers.len(), current.stage_workers())?;
            (next, None)
        }
        BalancerKind::DiffusionByParam | BalancerKind::DiffusionByTime => {
            let ctx = DiffusionContext {
                costs: &costs,
                layer_memory: &layer_memory,
                capacities: &capacities,
            };
            let (next, telemetry) =
                diffusion_balance(current, &ctx, opts.gamma, opts.max_rounds)?;
            (next, Some(telemetry))
        }
        _ => unreachable!("static kinds returned above"),
    };

    let mut after = delta_l(&resulting, &costs, basis);
    if after > before {
        // keep the current placement rather than migrate into a worse one
        resulting = current.clone();
        after = before;
    }
    let (moves, bytes_moved) = diff_moves(current, &resulting, layers, states);
    Ok(MigrationPlan {
        moves,
        bytes_moved,
        decision_time: started.elapsed().as_secs_f64(),
        resulting_assignment: resulting,
        delta_l_before: before,
        delta_l_after: after,
        basis,
        telemetry,
    })
}
