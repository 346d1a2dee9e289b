//! Consolidation of a shrinking workload onto fewer workers.
//!
//! A first-fit pair scan merges a source worker's layers into a destination
//! whenever their combined memory stays under the cap and the active count
//! still exceeds the target; the source is then released. Two scan modes
//! exist: the default merges only pipeline-adjacent pairs (the result stays
//! a valid chain) and fixes the bookkeeping of the literal listing by
//! zeroing a merged source's memory and skipping released workers in later
//! iterations. The literal mode reproduces the unpatched any-pair scan for
//! comparison; its plans can double-count memory and are not applicable to
//! a pipeline assignment unless the merges happen to preserve the chain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::{Assignment, WorkerSpec};

/// One consolidation transfer: all of `src`'s layers go to `dst`; the layer
/// index is local to `src`'s stage (0..layer_count).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Transfer {
    pub src: usize,
    pub dst: usize,
    pub layer_idx: usize,
}

/// Scan behavior knobs.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RepackOptions {
    /// Merge only pipeline-adjacent pairs so stage order survives.
    pub contiguous: bool,
    /// Reproduce the unpatched pair scan: stale source memory, no skip of
    /// released workers. Only meaningful with `contiguous = false`.
    pub literal_scan: bool,
}

impl Default for RepackOptions {
    fn default() -> Self {
        RepackOptions {
            contiguous: true,
            literal_scan: false,
        }
    }
}

/// Planned consolidation result.
#[derive(Debug, Clone, Serialize)]
pub struct RepackPlan {
    pub transfers: Vec<Transfer>,
    pub released_workers: Vec<usize>,
    pub resulting_active: usize,
    /// True when the active count reached `target_num_workers`.
    pub target_met: bool,
    /// Plans from the literal any-pair scan may not map back onto a
    /// pipeline chain.
    pub literal_scan: bool,
}

impl RepackPlan {
    pub fn is_empty(&self) -> bool {
        self.transfers.is_empty()
    }
}

/// First-fit consolidation scan over per-worker state. Workers are indexed
/// in pipeline order. Combined memory must stay strictly under `max_mem`
/// and the active count never drops below `target_num_workers`.
pub fn plan_repack(
    active: &[bool],
    mem_usage: &[u64],
    layer_counts: &[usize],
    target_num_workers: usize,
    max_mem: u64,
    opts: &RepackOptions,
) -> Result<RepackPlan> {
    let n = active.len();
    if mem_usage.len() != n || layer_counts.len() != n {
        return Err(Error::structural(format!(
            "worker arrays disagree: {} active, {} mem, {} counts",
            n,
            mem_usage.len(),
            layer_counts.len()
        )));
    }
    if target_num_workers == 0 {
        return Err(Error::validation("target_num_workers must be >= 1"));
    }
    let mut active = active.to_vec();
    let mut mem = mem_usage.to_vec();
    let mut counts = layer_counts.to_vec();
    let mut active_count = active.iter().filter(|a| **a).count();
    if active_count < target_num_workers {
        return Err(Error::validation(format!(
            "target {target_num_workers} exceeds {active_count} active workers"
        )));
    }

    let mut transfers = Vec::new();
    let mut released = Vec::new();
    for src in 0..n {
        if !opts.literal_scan && !active[src] {
            continue;
        }
        for dst in src + 1..n {
            if opts.contiguous {
                // only the next active worker preserves the chain
                if !active[dst] {
                    continue;
                }
            } else if !opts.literal_scan && !active[dst] {
                continue;
            }
            if mem[src] + mem[dst] < max_mem && active_count > target_num_workers {
                if active[src] {
                    active_count -= 1;
                    released.push(src);
                }
                active[src] = false;
                for layer_idx in 0..counts[src] {
                    transfers.push(Transfer {
                        src,
                        dst,
                        layer_idx,
                    });
                }
                mem[dst] += mem[src];
                counts[dst] += counts[src];
                if !opts.literal_scan {
                    mem[src] = 0;
                    counts[src] = 0;
                    break; // released source takes no further part
                }
            } else if opts.contiguous {
                break; // the adjacent pair did not fit; farther merges would break the chain
            }
        }
    }
    Ok(RepackPlan {
        transfers,
        released_workers: released,
        resulting_active: active_count,
        target_met: active_count == target_num_workers,
        literal_scan: opts.literal_scan,
    })
}

/// Applies a plan to an assignment: merged stages coalesce into their
/// destination worker's run and released workers go inactive. Returns the
/// new assignment plus the updated worker list. Fails structurally when the
/// plan does not match the assignment, and as infeasible when an any-pair
/// plan's merges interleave stage runs (no valid chain exists).
pub fn apply_repack(
    plan: &RepackPlan,
    assignment: &Assignment,
    workers: &[WorkerSpec],
) -> Result<(Assignment, Vec<WorkerSpec>)> {
    let mut owner: Vec<usize> = Vec::with_capacity(assignment.n_layers());
    let mut stage_of_worker = vec![None; workers.len()];
    for s in 0..assignment.n_stages() {
        let w = assignment.worker_of_stage(s);
        stage_of_worker[w] = Some(s);
        for _ in assignment.stage_range(s) {
            owner.push(w);
        }
    }

    // Replay transfer blocks against the evolving owner state: chained
    // merges hand off layers a source received earlier in the same plan,
    // so the block size is validated against current ownership.
    let mut i = 0;
    while i < plan.transfers.len() {
        let Transfer { src, dst, .. } = plan.transfers[i];
        if stage_of_worker.get(src).copied().flatten().is_none() {
            return Err(Error::structural(format!(
                "plan moves layers from non-stage worker {src}"
            )));
        }
        if workers.get(dst).map(|w| w.active) != Some(true) {
            return Err(Error::structural(format!(
                "plan targets inactive or unknown worker {dst}"
            )));
        }
        let mut block = 0;
        while i < plan.transfers.len()
            && plan.transfers[i].src == src
            && plan.transfers[i].dst == dst
            && plan.transfers[i].layer_idx == block
        {
            block += 1;
            i += 1;
        }
        let held: Vec<usize> = (0..owner.len()).filter(|&l| owner[l] == src).collect();
        if held.len() != block {
            return Err(Error::structural(format!(
                "worker {src} holds {} layers; plan transfers {block}",
                held.len()
            )));
        }
        for l in held {
            owner[l] = dst;
        }
    }

    // derive the new chain: each worker's layers must be one contiguous run
    let mut runs: Vec<(usize, usize, usize)> = Vec::new(); // (start, end, worker)
    let mut i = 0;
    while i < owner.len() {
        let w = owner[i];
        let start = i;
        while i < owner.len() && owner[i] == w {
            i += 1;
        }
        if runs.iter().any(|&(_, _, rw)| rw == w) {
            return Err(Error::infeasible(
                "repack merges interleave stage runs; the pipeline cannot remain a chain",
            ));
        }
        runs.push((start, i, w));
    }
    let splits: Vec<usize> = runs.iter().skip(1).map(|&(s, _, _)| s).collect();
    let stage_workers: Vec<usize> = runs.iter().map(|&(_, _, w)| w).collect();
    let next = Assignment::from_splits(&splits, owner.len(), &stage_workers)?;

    let mut next_workers = workers.to_vec();
    for &r in &plan.released_workers {
        if let Some(w) = next_workers.get_mut(r) {
            w.active = false;
        }
    }
    Ok((next, next_workers))
}
