//! Decentralized diffusion balancing.
//!
//! Each round examines adjacent stage pairs and moves one boundary layer
//! from the heavier to the lighter stage when that strictly reduces the
//! pair's max load and fits the destination's memory. An accepted move
//! lands both new loads strictly inside the old pair's range, so the
//! potential (the sum of pairwise load gaps) never increases and the global
//! max never rises.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::workload::Assignment;

/// Potential function: sum over unordered worker pairs of absolute load
/// differences. Pairs are counted once; an ordered-pair convention would
/// only double every value.
pub fn potential(loads: &[f64]) -> f64 {
    let mut phi = 0.0;
    for i in 0..loads.len() {
        for j in i + 1..loads.len() {
            phi += (loads[i] - loads[j]).abs();
        }
    }
    phi
}

/// Progress record of one diffusion run.
#[derive(Debug, Clone, Serialize)]
pub struct DiffusionTelemetry {
    pub rounds: u64,
    /// Potential before the first round and after each round.
    pub potential_per_round: Vec<f64>,
    pub converged: bool,
    pub gamma: f64,
}

/// Inputs the diffusion steps need beyond the assignment itself.
pub struct DiffusionContext<'a> {
    /// Effective per-layer cost on the balancing basis.
    pub costs: &'a [f64],
    /// Per-layer memory bytes under the current states.
    pub layer_memory: &'a [u64],
    /// Capacity of each stage's worker, in stage order.
    pub capacities: &'a [u64],
}

impl DiffusionContext<'_> {
    fn stage_loads(&self, assignment: &Assignment) -> Vec<f64> {
        (0..assignment.n_stages())
            .map(|s| assignment.stage_range(s).map(|i| self.costs[i]).sum())
            .collect()
    }

    fn stage_memory(&self, assignment: &Assignment, s: usize) -> u64 {
        assignment.stage_range(s).map(|i| self.layer_memory[i]).sum()
    }
}

struct Candidate {
    pair: usize,
    gap: f64,
    /// Move direction: true moves the boundary layer from pair to pair+1.
    forward: bool,
    cost: f64,
}

/// Finds the acting pair for one diffusion round: among all adjacent pairs
/// whose boundary move strictly reduces the pair max and fits memory, the
/// one with the largest load gap (ties to the lowest stage index).
fn find_move(assignment: &Assignment, loads: &[f64], ctx: &DiffusionContext) -> Option<Candidate> {
    let mut best: Option<Candidate> = None;
    for s in 0..assignment.n_stages().saturating_sub(1) {
        let (heavy, light, forward) = if loads[s] >= loads[s + 1] {
            (s, s + 1, true)
        } else {
            (s + 1, s, false)
        };
        let heavy_range = assignment.stage_range(heavy);
        if heavy_range.len() < 2 {
            continue; // a stage never gives up its last layer
        }
        let layer = if forward {
            heavy_range.end - 1
        } else {
            heavy_range.start
        };
        let cost = ctx.costs[layer];
        let new_heavy = loads[heavy] - cost;
        let new_light = loads[light] + cost;
        if new_heavy.max(new_light) >= loads[heavy].max(loads[light]) {
            continue; // not a strict improvement
        }
        let dst_mem = ctx.stage_memory(assignment, light) + ctx.layer_memory[layer];
        if dst_mem > ctx.capacities[light] {
            continue; // infeasible moves are skipped
        }
        let gap = (loads[s] - loads[s + 1]).abs();
        if best.as_ref().map(|b| gap > b.gap).unwrap_or(true) {
            best = Some(Candidate {
                pair: s,
                gap,
                forward,
                cost,
            });
        }
    }
    best
}

fn apply_move(assignment: &Assignment, cand: &Candidate) -> Assignment {
    let mut splits = assignment.splits().to_vec();
    if cand.forward {
        splits[cand.pair] -= 1;
    } else {
        splits[cand.pair] += 1;
    }
    Assignment::from_splits(&splits, assignment.n_layers(), assignment.stage_workers())
        .expect("boundary shift keeps stages non-empty")
}

/// One diffusion round. Returns the (possibly unchanged) assignment, the
/// updated loads, and whether a move happened; `false` means a local
/// optimum under single adjacent moves.
pub fn diffusion_step(
    assignment: &Assignment,
    loads: &[f64],
    ctx: &DiffusionContext,
) -> (Assignment, Vec<f64>, bool) {
    match find_move(assignment, loads, ctx) {
        Some(cand) => {
            let next = apply_move(assignment, &cand);
            let mut new_loads = loads.to_vec();
            let (src, dst) = if cand.forward {
                (cand.pair, cand.pair + 1)
            } else {
                (cand.pair + 1, cand.pair)
            };
            new_loads[src] -= cand.cost;
            new_loads[dst] += cand.cost;
            (next, new_loads, true)
        }
        None => (assignment.clone(), loads.to_vec(), false),
    }
}

/// Runs diffusion rounds until the potential drops to `gamma`, no move is
/// possible, or `max_rounds` is exhausted (the only case reported as not
/// converged).
pub fn diffusion_balance(
    assignment: &Assignment,
    ctx: &DiffusionContext,
    gamma: f64,
    max_rounds: u64,
) -> Result<(Assignment, DiffusionTelemetry)> {
    if gamma <= 0.0 {
        return Err(Error::validation("gamma must be > 0"));
    }
    if max_rounds == 0 {
        return Err(Error::validation("max_rounds must be >= 1"));
    }
    if ctx.capacities.len() != assignment.n_stages() {
        return Err(Error::structural(format!(
            "{} capacities for {} stages",
            ctx.capacities.len(),
            assignment.n_stages()
        )));
    }
    let mut current = assignment.clone();
    let mut loads = ctx.stage_loads(&current);
    let mut phi = potential(&loads);
    let mut history = vec![phi];
    let mut rounds = 0;
    let mut converged = phi <= gamma;
    while phi > gamma && rounds < max_rounds {
        let (next, new_loads, moved) = diffusion_step(&current, &loads, ctx);
        if !moved {
            converged = true; // local optimum: no single adjacent move helps
            break;
        }
        current = next;
        loads = new_loads;
        phi = potential(&loads);
        history.push(phi);
        rounds += 1;
        if phi <= gamma {
            converged = true;
        }
    }
    Ok((
        current,
        DiffusionTelemetry {
            rounds,
            potential_per_round: history,
            converged,
            gamma,
        },
    ))
}
