//! Min-max contiguous partitioning.
//!
//! Splits an ordered cost vector into exactly `n_stages` contiguous runs
//! minimizing the maximum run sum. The optimal bottleneck is always some
//! contiguous interval sum, so we binary-search the sorted set of interval
//! sums with a greedy feasibility check, then probe upward where memory
//! constraints reject the compute-optimal split.

use crate::error::{Error, Result};

/// Zero-cost layers (fully frozen) still need a defined position in the
/// split; a tiny positive cost keeps the search well-founded without
/// affecting real bottlenecks.
const ZERO_COST_EPS: f64 = 1e-9;

// Relative slack for float comparisons against a candidate bottleneck: the
// greedy accumulates sums in a different order than the prefix-sum
// candidates, so bit-equality cannot be assumed.
fn fits(sum: f64, bound: f64) -> bool {
    sum <= bound * (1.0 + 1e-12)
}

fn effective(costs: &[f64]) -> Vec<f64> {
    costs.iter().map(|&c| c.max(ZERO_COST_EPS)).collect()
}

/// Minimum number of contiguous runs with sum <= `bound` (greedy), or None
/// if some single cost exceeds the bound.
fn min_runs(costs: &[f64], bound: f64) -> Option<usize> {
    let mut runs = 1;
    let mut cur = 0.0;
    for &c in costs {
        if !fits(c, bound) {
            return None;
        }
        if cur > 0.0 && !fits(cur + c, bound) {
            runs += 1;
            cur = c;
        } else {
            cur += c;
        }
    }
    Some(runs)
}

/// All contiguous interval sums, ascending. These are the only values the
/// optimal bottleneck can take.
fn candidate_bottlenecks(costs: &[f64]) -> Vec<f64> {
    let n = costs.len();
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    for &c in costs {
        prefix.push(prefix.last().unwrap() + c);
    }
    let max_cost = costs.iter().cloned().fold(f64::MIN, f64::max);
    let mut cands = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in i + 1..=n {
            let s = prefix[j] - prefix[i];
            if s >= max_cost {
                cands.push(s);
            }
        }
    }
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cands.dedup();
    cands
}

/// Minimum runs needed for every suffix `costs[i..]` under `bound`, or
/// usize::MAX when some single cost exceeds the bound.
fn suffix_min_runs(costs: &[f64], bound: f64) -> Vec<usize> {
    let n = costs.len();
    // next_break[i]: first index after i where the greedy run starting at i
    // must close
    let mut next_break = vec![n; n];
    for i in 0..n {
        if !fits(costs[i], bound) {
            next_break[i] = usize::MAX;
            continue;
        }
        let mut cur = 0.0;
        let mut j = i;
        while j < n && fits(cur + costs[j], bound) {
            cur += costs[j];
            j += 1;
        }
        next_break[i] = j;
    }
    let mut runs = vec![0usize; n + 1];
    for i in (0..n).rev() {
        runs[i] = match next_break[i] {
            usize::MAX => usize::MAX,
            j => runs[j].saturating_add(1),
        };
    }
    runs
}

/// Builds an exact-`k` split with every run sum under `bound`, chasing the
/// per-stage average so the result is balanced rather than front-loaded.
/// Greedy-optimal bottleneck plus balanced construction: each stage stops
/// at the feasible cut closest to (remaining cost) / (remaining stages).
fn pack_balanced(costs: &[f64], k: usize, bound: f64) -> Option<Vec<usize>> {
    let n = costs.len();
    let suffix_runs = suffix_min_runs(costs, bound);
    if suffix_runs[0] > k {
        return None;
    }
    let mut remaining: f64 = costs.iter().sum();
    let mut splits = Vec::with_capacity(k - 1);
    let mut idx = 0usize;
    for s in 0..k {
        let stages_left_after = k - s - 1;
        if s + 1 == k {
            // last stage takes everything; feasibility was maintained
            let tail: f64 = costs[idx..].iter().sum();
            if idx >= n || !fits(tail, bound) {
                return None;
            }
            break;
        }
        let target = remaining / (k - s) as f64;
        let mut cur = 0.0;
        let mut j = idx;
        let mut best: Option<(f64, usize, f64)> = None; // (|cur-target|, stop, cur)
        while j < n {
            cur += costs[j];
            j += 1;
            if !fits(cur, bound) {
                break;
            }
            let layers_left = n - j;
            if layers_left < stages_left_after {
                break;
            }
            if suffix_runs[j] <= stages_left_after {
                let score = (cur - target).abs();
                if best.map(|(b, _, _)| score < b).unwrap_or(true) {
                    best = Some((score, j, cur));
                }
            }
        }
        let (_, stop, taken) = best?;
        splits.push(stop);
        remaining -= taken;
        idx = stop;
    }
    Some(splits)
}

/// Optimal contiguous split of `costs` into `n_stages` runs. Returns the
/// interior split points (first layer of each stage after the first).
pub fn partition(costs: &[f64], n_stages: usize) -> Result<Vec<usize>> {
    if costs.is_empty() {
        return Err(Error::validation("partition of an empty cost vector"));
    }
    if n_stages == 0 {
        return Err(Error::validation("n_stages must be >= 1"));
    }
    if n_stages > costs.len() {
        return Err(Error::validation(format!(
            "cannot give every stage a layer: {n_stages} stages for {} layers",
            costs.len()
        )));
    }
    let costs = effective(costs);
    let cands = candidate_bottlenecks(&costs);
    // binary search for the smallest feasible candidate
    let mut lo = 0usize;
    let mut hi = cands.len() - 1;
    while lo < hi {
        let mid = (lo + hi) / 2;
        match min_runs(&costs, cands[mid]) {
            Some(runs) if runs <= n_stages => hi = mid,
            _ => lo = mid + 1,
        }
    }
    pack_balanced(&costs, n_stages, cands[lo])
        .ok_or_else(|| Error::structural("feasible bottleneck failed to pack"))
}

/// Like [`partition`] but enforces per-stage memory capacities. When the
/// compute-optimal bottleneck has no memory-feasible packing, the bound is
/// relaxed to the next larger candidates (linear probing) until one fits.
pub fn partition_with_memory(
    costs: &[f64],
    layer_memory: &[u64],
    capacities: &[u64],
    n_stages: usize,
) -> Result<Vec<usize>> {
    if layer_memory.len() != costs.len() {
        return Err(Error::structural(format!(
            "{} memory entries for {} costs",
            layer_memory.len(),
            costs.len()
        )));
    }
    if capacities.len() != n_stages {
        return Err(Error::structural(format!(
            "{} capacities for {n_stages} stages",
            capacities.len()
        )));
    }
    if costs.is_empty() || n_stages == 0 || n_stages > costs.len() {
        return partition(costs, n_stages); // reuse the validation errors
    }
    let costs = effective(costs);
    let cands = candidate_bottlenecks(&costs);
    let start = cands.partition_point(|&b| match min_runs(&costs, b) {
        Some(runs) => runs > n_stages,
        None => true,
    });
    for &bound in &cands[start..] {
        if let Some(splits) = pack_with_memory(&costs, layer_memory, capacities, n_stages, bound) {
            return Ok(splits);
        }
    }
    Err(Error::infeasible(
        "no contiguous split satisfies the per-stage memory capacities",
    ))
}

/// Balanced pack under both the bottleneck bound and per-stage memory
/// capacities. Suffix feasibility is cost-only, so a memory dead end shows
/// up as `None` and the caller probes the next bound.
fn pack_with_memory(
    costs: &[f64],
    layer_memory: &[u64],
    capacities: &[u64],
    k: usize,
    bound: f64,
) -> Option<Vec<usize>> {
    let n = costs.len();
    let suffix_runs = suffix_min_runs(costs, bound);
    if suffix_runs[0] > k {
        return None;
    }
    let mut remaining: f64 = costs.iter().sum();
    let mut splits = Vec::with_capacity(k - 1);
    let mut idx = 0usize;
    for (s, &capacity) in capacities.iter().enumerate().take(k) {
        let stages_left_after = k - s - 1;
        if s + 1 == k {
            let tail: f64 = costs[idx..].iter().sum();
            let mem: u64 = layer_memory[idx..].iter().sum();
            if idx >= n || !fits(tail, bound) || mem > capacity {
                return None;
            }
            break;
        }
        let target = remaining / (k - s) as f64;
        let mut cur = 0.0;
        let mut mem = 0u64;
        let mut j = idx;
        let mut best: Option<(f64, usize, f64)> = None;
        while j < n {
            cur += costs[j];
            mem += layer_memory[j];
            j += 1;
            if !fits(cur, bound) || mem > capacity {
                break;
            }
            let layers_left = n - j;
            if layers_left < stages_left_after {
                break;
            }
            if suffix_runs[j] <= stages_left_after {
                let score = (cur - target).abs();
                if best.map(|(b, _, _)| score < b).unwrap_or(true) {
                    best = Some((score, j, cur));
                }
            }
        }
        let (_, stop, taken) = best?;
        splits.push(stop);
        remaining -= taken;
        idx = stop;
    }
    Some(splits)
}

/// Max run sum of a split (the value [`partition`] minimizes).
pub fn split_bottleneck(costs: &[f64], splits: &[usize]) -> f64 {
    let mut bounds = Vec::with_capacity(splits.len() + 2);
    bounds.push(0);
    bounds.extend_from_slice(splits);
    bounds.push(costs.len());
    bounds
        .windows(2)
        .map(|w| costs[w[0]..w[1]].iter().sum())
        .fold(f64::MIN, f64::max)
}

#[cfg(test)]
pub(crate) mod oracle {
    /// Exhaustive minimum bottleneck over all contiguous splits.
    pub fn best_bottleneck(costs: &[f64], k: usize) -> f64 {
        fn rec(costs: &[f64], k: usize) -> f64 {
            let n = costs.len();
            if k == 1 {
                return costs.iter().sum();
            }
            let mut best = f64::MAX;
            // first run takes 1..=n-(k-1) layers
            for take in 1..=n - (k - 1) {
                let head: f64 = costs[..take].iter().sum();
                let rest = rec(&costs[take..], k - 1);
                best = best.min(head.max(rest));
            }
            best
        }
        rec(costs, k)
    }
}
