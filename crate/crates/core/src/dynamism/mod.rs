//! Per-iteration multiplier generators for the six dynamism cases.
//!
//! Each case turns (iteration, seed) into a [`LayerState`] vector. All
//! randomness is drawn from tagged sub-streams of the run seed, so a
//! snapshot is a pure function of (case, previous snapshot, iteration,
//! seed) and sweeps can re-generate any iteration bit-identically.
//!
//! The cases with a stochastic component (expert routing, sparse attention,
//! depth routing) combine a persistent per-layer draw with per-iteration
//! noise: routing skew and hash-structure differences are properties of a
//! layer that drift slowly, while the iteration term models batch-to-batch
//! fluctuation.

mod schedule;
mod shards;

pub use schedule::{sparsity_at, PruningSchedule};
pub use shards::{
    global_magnitude_prune, LayerSpan, PruneOutcome, PruneTraffic, ShardedParams,
};

use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma};

use crate::error::{Error, Result};
use crate::seeds::{self, tag};
use crate::workload::{LayerSpec, LayerState};

/// Relative compute cost of a layer at parameter density `rho`.
///
/// Sparse kernels only beat dense ones below a density breakpoint, so cost
/// stays flat at 1 above it and scales linearly below.
pub fn sparse_compute_multiplier(rho: f64, breakpoint: f64) -> f64 {
    if rho > breakpoint {
        1.0
    } else {
        rho / breakpoint
    }
}

/// One of the six dynamism scenarios with its parameters.
#[derive(Debug, Clone)]
pub enum DynamismCase {
    /// Expert routing: every `moe_layer_stride`-th layer hosts experts whose
    /// token shares are Dirichlet-multinomial; the layer's multiplier is the
    /// hottest expert's load relative to the uniform share.
    MoE {
        experts_per_layer: usize,
        tokens_per_batch: u64,
        /// Dirichlet concentration; smaller means more skew.
        routing_skew: f64,
        moe_layer_stride: usize,
    },
    /// Global magnitude pruning on the cubic schedule.
    GradualPruning {
        schedule: PruningSchedule,
        shards: ShardedParams,
        /// Density above which sparse compute provides no speedup.
        compute_breakpoint: f64,
        /// Storage overhead factor on retained values (row offsets plus
        /// column indices).
        csr_overhead: f64,
    },
    /// Front-to-back freezing at fixed intervals; frozen layers keep their
    /// forward pass but contribute no backward compute or gradients.
    LayerFreezing {
        freeze_interval: u64,
        /// Fraction of the depth frozen per event (at least one layer).
        converge_front_bias: f64,
    },
    /// Hash-determined attention sparsity, persistent per layer with small
    /// per-iteration jitter; applies only to the attention share of a layer.
    SparseAttention {
        sparsity_low: f64,
        sparsity_high: f64,
        attention_fraction_of_layer: f64,
    },
    /// Tokens exit after `first_exit_layer`; retention decays geometrically
    /// with depth.
    EarlyExit {
        first_exit_layer: usize,
        exit_prob_per_layer: f64,
    },
    /// Depth routing: alternate blocks process a top-k fraction of tokens,
    /// perturbed by the router predictor's per-layer error.
    MoD {
        capacity_fraction: f64,
        predictor_noise: f64,
    },
}

impl DynamismCase {
    pub fn name(&self) -> &'static str {
        match self {
            DynamismCase::MoE { .. } => "moe",
            DynamismCase::GradualPruning { .. } => "gradual_pruning",
            DynamismCase::LayerFreezing { .. } => "layer_freezing",
            DynamismCase::SparseAttention { .. } => "sparse_attention",
            DynamismCase::EarlyExit { .. } => "early_exit",
            DynamismCase::MoD { .. } => "mod",
        }
    }

    fn validate(&self, depth: usize) -> Result<()> {
        let frac = |v: f64, name: &str| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::validation(format!("{name} must be in [0, 1]; got {v}")))
            }
        };
        match self {
            DynamismCase::MoE {
                experts_per_layer,
                tokens_per_batch,
                routing_skew,
                moe_layer_stride,
            } => {
                if *experts_per_layer == 0 || *tokens_per_batch == 0 || *moe_layer_stride == 0 {
                    return Err(Error::validation(
                        "experts, tokens, and stride must be >= 1",
                    ));
                }
                if *routing_skew <= 0.0 {
                    return Err(Error::validation("routing_skew must be > 0"));
                }
                Ok(())
            }
            DynamismCase::GradualPruning {
                schedule,
                shards,
                compute_breakpoint,
                csr_overhead,
            } => {
                schedule.validate()?;
                if shards.layer_spans().len() != depth {
                    return Err(Error::structural(format!(
                        "shards describe {} layers for a depth-{depth} model",
                        shards.layer_spans().len()
                    )));
                }
                if !(*compute_breakpoint > 0.0 && *compute_breakpoint <= 1.0) {
                    return Err(Error::validation("compute_breakpoint must be in (0, 1]"));
                }
                if *csr_overhead < 1.0 {
                    return Err(Error::validation("csr_overhead must be >= 1"));
                }
                Ok(())
            }
            DynamismCase::LayerFreezing {
                freeze_interval,
                converge_front_bias,
            } => {
                if *freeze_interval == 0 {
                    return Err(Error::validation("freeze_interval must be >= 1"));
                }
                frac(*converge_front_bias, "converge_front_bias")
            }
            DynamismCase::SparseAttention {
                sparsity_low,
                sparsity_high,
                attention_fraction_of_layer,
            } => {
                frac(*sparsity_low, "sparsity_low")?;
                frac(*sparsity_high, "sparsity_high")?;
                frac(*attention_fraction_of_layer, "attention_fraction_of_layer")?;
                if sparsity_low > sparsity_high {
                    return Err(Error::validation("sparsity_low must be <= sparsity_high"));
                }
                Ok(())
            }
            DynamismCase::EarlyExit {
                first_exit_layer,
                exit_prob_per_layer,
            } => {
                if *first_exit_layer >= depth {
                    return Err(Error::validation(format!(
                        "first_exit_layer {first_exit_layer} must be < depth {depth}"
                    )));
                }
                frac(*exit_prob_per_layer, "exit_prob_per_layer")
            }
            DynamismCase::MoD {
                capacity_fraction,
                predictor_noise,
            } => {
                frac(*capacity_fraction, "capacity_fraction")?;
                frac(*predictor_noise, "predictor_noise")
            }
        }
    }
}

/// Per-layer multipliers at one iteration plus the implied total cost.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiplierSnapshot {
    pub iteration: u64,
    pub states: Vec<LayerState>,
    pub total_effective_cost: f64,
    /// Gather/scatter traffic from a pruning step at this iteration, if any.
    pub data_moved_bytes: u64,
}

/// Deterministic generator advancing one case over iterations.
pub struct DynamismEngine {
    case: DynamismCase,
    layers: Vec<LayerSpec>,
    seed: u64,
    /// Persistent per-MoE-layer Dirichlet expert weights.
    moe_weights: Vec<Option<Vec<f64>>>,
    /// Persistent per-layer attention sparsity bases.
    attention_base: Vec<f64>,
    /// Persistent per-layer router predictor bias in [-1, 1].
    predictor_bias: Vec<f64>,
    /// Cache: applied sparsity -> prune result, reused between steps.
    prune_cache: Option<(f64, PruneOutcome)>,
}

fn dirichlet(rng: &mut impl Rng, alpha: f64, n: usize) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha > 0 validated");
    let mut draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng).max(1e-300)).collect();
    let sum: f64 = draws.iter().sum();
    for d in &mut draws {
        *d /= sum;
    }
    draws
}

fn multinomial(rng: &mut impl Rng, total: u64, probs: &[f64]) -> Vec<u64> {
    let mut counts = Vec::with_capacity(probs.len());
    let mut remaining = total;
    let mut tail: f64 = 1.0;
    for (i, &p) in probs.iter().enumerate() {
        if i + 1 == probs.len() {
            counts.push(remaining);
            break;
        }
        let q = if tail > 0.0 { (p / tail).clamp(0.0, 1.0) } else { 0.0 };
        let n = Binomial::new(remaining, q).expect("q in [0,1]").sample(rng);
        counts.push(n);
        remaining -= n;
        tail -= p;
    }
    counts
}

impl DynamismEngine {
    pub fn new(case: DynamismCase, layers: &[LayerSpec], seed: u64) -> Result<Self> {
        case.validate(layers.len())?;
        let d = layers.len();
        let mut moe_weights = vec![None; d];
        let mut attention_base = vec![0.0; d];
        let mut predictor_bias = vec![0.0; d];
        match &case {
            DynamismCase::MoE {
                experts_per_layer,
                routing_skew,
                moe_layer_stride,
                ..
            } => {
                for i in (0..d).step_by(*moe_layer_stride) {
                    let mut rng = seeds::stream(seed, &[tag::MOE, tag::LAYER_BASE, i as u64]);
                    moe_weights[i] = Some(dirichlet(&mut rng, *routing_skew, *experts_per_layer));
                }
            }
            DynamismCase::SparseAttention {
                sparsity_low,
                sparsity_high,
                ..
            } => {
                for (i, base) in attention_base.iter_mut().enumerate() {
                    let mut rng =
                        seeds::stream(seed, &[tag::SPARSE_ATTENTION, tag::LAYER_BASE, i as u64]);
                    *base = rng.random_range(*sparsity_low..=*sparsity_high);
                }
            }
            DynamismCase::MoD { .. } => {
                for (i, bias) in predictor_bias.iter_mut().enumerate() {
                    let mut rng = seeds::stream(seed, &[tag::MOD, tag::LAYER_BASE, i as u64]);
                    *bias = rng.random_range(-1.0..=1.0);
                }
            }
            _ => {}
        }
        Ok(DynamismEngine {
            case,
            layers: layers.to_vec(),
            seed,
            moe_weights,
            attention_base,
            predictor_bias,
            prune_cache: None,
        })
    }

    pub fn case(&self) -> &DynamismCase {
        &self.case
    }

    /// Snapshot for iteration 0: the unmodified dense model.
    pub fn initial_snapshot(&self) -> MultiplierSnapshot {
        let states = vec![LayerState::dense(); self.layers.len()];
        let total = total_cost(&self.layers, &states);
        MultiplierSnapshot {
            iteration: 0,
            states,
            total_effective_cost: total,
            data_moved_bytes: 0,
        }
    }

    /// Advances one iteration. `iteration` must be `prev.iteration + 1`.
    pub fn next_snapshot(
        &mut self,
        prev: &MultiplierSnapshot,
        iteration: u64,
    ) -> Result<MultiplierSnapshot> {
        if iteration != prev.iteration + 1 {
            return Err(Error::structural(format!(
                "snapshot for iteration {iteration} requested after {}",
                prev.iteration
            )));
        }
        let d = self.layers.len();
        let mut states = vec![LayerState::dense(); d];
        let mut data_moved = 0u64;
        match &self.case {
            DynamismCase::MoE {
                experts_per_layer,
                tokens_per_batch,
                moe_layer_stride,
                ..
            } => {
                for i in (0..d).step_by(*moe_layer_stride) {
                    let weights = self.moe_weights[i].as_ref().expect("moe layer has weights");
                    let mut rng = seeds::stream(self.seed, &[tag::MOE, i as u64, iteration]);
                    let counts = multinomial(&mut rng, *tokens_per_batch, weights);
                    let hottest = counts.iter().copied().max().unwrap_or(0) as f64;
                    let uniform = *tokens_per_batch as f64 / *experts_per_layer as f64;
                    let mult = hottest / uniform;
                    states[i].fwd_compute = mult;
                    states[i].bwd_compute = mult;
                }
            }
            DynamismCase::GradualPruning {
                schedule,
                shards,
                compute_breakpoint,
                csr_overhead,
            } => {
                let applied = applied_sparsity(schedule, iteration);
                let freshly_pruned = schedule.is_step(iteration) && applied > 0.0;
                let outcome = match &self.prune_cache {
                    Some((s, out)) if *s == applied => out.clone(),
                    _ => {
                        let out = global_magnitude_prune(shards, applied)?;
                        self.prune_cache = Some((applied, out.clone()));
                        self.prune_cache.as_ref().unwrap().1.clone()
                    }
                };
                if freshly_pruned {
                    data_moved = outcome.traffic.total();
                }
                for (i, span) in shards.layer_spans().iter().enumerate() {
                    let p = if span.len == 0 {
                        1.0
                    } else {
                        outcome.kept_in_span(span) as f64 / span.len as f64
                    };
                    let compute = sparse_compute_multiplier(p, *compute_breakpoint);
                    states[i].fwd_compute = compute;
                    states[i].bwd_compute = compute;
                    states[i].param_multiplier = p;
                    states[i].memory_multiplier =
                        if p < 1.0 { (csr_overhead * p).min(1.0) } else { 1.0 };
                }
            }
            DynamismCase::LayerFreezing {
                freeze_interval,
                converge_front_bias,
            } => {
                let events = iteration / freeze_interval;
                let batch = ((converge_front_bias * d as f64).round() as usize).max(1);
                let frozen = (events as usize).saturating_mul(batch).min(d);
                for state in states.iter_mut().take(frozen) {
                    state.bwd_compute = 0.0;
                }
            }
            DynamismCase::SparseAttention {
                sparsity_low,
                sparsity_high,
                attention_fraction_of_layer,
            } => {
                let jitter = 0.05 * (sparsity_high - sparsity_low);
                for (i, state) in states.iter_mut().enumerate() {
                    let mut rng =
                        seeds::stream(self.seed, &[tag::SPARSE_ATTENTION, i as u64, iteration]);
                    let wobble = if jitter > 0.0 {
                        rng.random_range(-jitter..=jitter)
                    } else {
                        0.0
                    };
                    let s = (self.attention_base[i] + wobble)
                        .clamp(*sparsity_low, *sparsity_high);
                    let mult = (1.0 - attention_fraction_of_layer)
                        + attention_fraction_of_layer * s;
                    state.fwd_compute = mult;
                    state.bwd_compute = mult;
                }
            }
            DynamismCase::EarlyExit {
                first_exit_layer,
                exit_prob_per_layer,
            } => {
                let survive = 1.0 - exit_prob_per_layer;
                for (i, state) in states.iter_mut().enumerate() {
                    if i >= *first_exit_layer {
                        let hops = (i - first_exit_layer + 1) as i32;
                        let retention = survive.powi(hops);
                        state.fwd_compute = retention;
                        state.bwd_compute = retention;
                    }
                }
            }
            DynamismCase::MoD {
                capacity_fraction,
                predictor_noise,
            } => {
                for i in (1..d).step_by(2) {
                    let mut rng = seeds::stream(self.seed, &[tag::MOD, i as u64, iteration]);
                    let wobble: f64 = rng.random_range(-1.0..=1.0);
                    let shift = predictor_noise * (0.8 * self.predictor_bias[i] + 0.2 * wobble);
                    let r = (capacity_fraction * (1.0 + shift)).clamp(0.0, 1.0);
                    states[i].fwd_compute = r;
                    states[i].bwd_compute = r;
                }
            }
        }
        let total = total_cost(&self.layers, &states);
        Ok(MultiplierSnapshot {
            iteration,
            states,
            total_effective_cost: total,
            data_moved_bytes: data_moved,
        })
    }
}

/// Sparsity actually in effect at `t`: the schedule value at the most
/// recent pruning step boundary at or before `t`.
fn applied_sparsity(schedule: &PruningSchedule, t: u64) -> f64 {
    if t < schedule.t0 {
        return schedule.s_initial;
    }
    let stepped = schedule.t0 + ((t - schedule.t0) / schedule.delta_t) * schedule.delta_t;
    sparsity_at(schedule, stepped.min(schedule.window_end()))
}

fn total_cost(layers: &[LayerSpec], states: &[LayerState]) -> f64 {
    layers
        .iter()
        .zip(states)
        .map(|(l, s)| s.effective_cost(l))
        .sum()
}
