//! Declarative scenario files.
//!
//! A scenario is one TOML document describing the model, the worker fleet,
//! the pipeline, the dynamism case, the balancer, and the run length. It is
//! the unit both the CLI and the test suites operate on. Parsing is strict
//! (unknown keys are errors) and every numeric constraint is checked before
//! a run starts.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::balance::BalancerKind;
use crate::dynamism::{DynamismCase, PruningSchedule, ShardedParams};
use crate::error::{Error, Result};
use crate::repack::RepackOptions;
use crate::seeds::{self, tag};
use crate::sim::PipelineConfig;
use crate::workload::{validate_layers, LayerSpec, WorkerSpec};

fn default_bwd_ratio() -> f64 {
    2.0
}

/// Model geometry and per-layer base costs. Scalars apply to every layer;
/// the optional arrays override them per layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub depth: usize,
    /// Forward seconds per micro-batch at full density.
    pub base_fwd: f64,
    /// Backward cost as a multiple of forward (transformers run close to 2x).
    #[serde(default = "default_bwd_ratio")]
    pub bwd_ratio: f64,
    pub params_per_layer: u64,
    pub memory_bytes_per_layer: u64,
    #[serde(default)]
    pub fwd_costs: Option<Vec<f64>>,
    #[serde(default)]
    pub bwd_costs: Option<Vec<f64>>,
    #[serde(default)]
    pub param_counts: Option<Vec<u64>>,
    #[serde(default)]
    pub memory_bytes: Option<Vec<u64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkersConfig {
    pub count: usize,
    pub memory_capacity: u64,
}

fn default_magnitude_samples() -> usize {
    10_000
}

fn default_magnitude_sigma_spread() -> f64 {
    1.0
}

fn default_compute_breakpoint() -> f64 {
    0.25
}

fn default_csr_overhead() -> f64 {
    2.0
}

/// Dynamism case selection plus its parameters. Tagged by `case`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamismConfig {
    Moe {
        experts_per_layer: usize,
        tokens_per_batch: u64,
        routing_skew: f64,
        moe_layer_stride: usize,
    },
    GradualPruning {
        s_initial: f64,
        s_final: f64,
        t0: u64,
        delta_t: u64,
        n_steps: u64,
        /// Synthesized magnitude samples per layer (capped by param count).
        #[serde(default = "default_magnitude_samples")]
        magnitude_samples: usize,
        /// Per-layer magnitude scale spread: sigma_i = exp(U(-s, s)).
        /// Layers with larger weights keep more parameters under global
        /// pruning, which is what skews the pipeline.
        #[serde(default = "default_magnitude_sigma_spread")]
        magnitude_sigma_spread: f64,
        #[serde(default = "default_compute_breakpoint")]
        compute_breakpoint: f64,
        #[serde(default = "default_csr_overhead")]
        csr_overhead: f64,
        /// Optional flat little-endian f32 magnitude file with a JSON
        /// sidecar of shard offsets; replaces synthesis.
        #[serde(default)]
        magnitudes_file: Option<String>,
        #[serde(default)]
        magnitudes_sidecar: Option<String>,
    },
    LayerFreezing {
        freeze_interval: u64,
        converge_front_bias: f64,
    },
    SparseAttention {
        sparsity_low: f64,
        sparsity_high: f64,
        attention_fraction_of_layer: f64,
    },
    EarlyExit {
        first_exit_layer: usize,
        exit_prob_per_layer: f64,
    },
    Mod {
        capacity_fraction: f64,
        predictor_noise: f64,
    },
}

fn default_gamma() -> f64 {
    1e-9
}

fn default_max_rounds() -> u64 {
    100_000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BalancerConfig {
    pub kind: BalancerKind,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: u64,
}

fn default_headroom() -> f64 {
    0.9
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepackConfig {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_one")]
    pub target_num_workers: usize,
    /// Fraction of a worker's capacity usable as the consolidation cap,
    /// leaving room for activation spikes.
    #[serde(default = "default_headroom")]
    pub headroom: f64,
    #[serde(default = "default_true")]
    pub contiguous: bool,
    #[serde(default)]
    pub literal_scan: bool,
    /// Fixed penalty charged when a repack restarts from a checkpoint.
    #[serde(default)]
    pub restart_cost: f64,
}

fn default_one() -> usize {
    1
}

impl Default for RepackConfig {
    fn default() -> Self {
        RepackConfig {
            enabled: false,
            target_num_workers: 1,
            headroom: default_headroom(),
            contiguous: true,
            literal_scan: false,
            restart_cost: 0.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub iterations: u64,
    pub rebalance_interval: u64,
    pub seed: u64,
}

/// One complete scenario.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub model: ModelConfig,
    pub workers: WorkersConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    pub dynamism: DynamismConfig,
    pub balancer: BalancerConfig,
    #[serde(default)]
    pub repack: RepackConfig,
    pub run: RunConfig,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Scenario> {
        toml::from_str(text).map_err(|e| Error::validation(format!("scenario parse error: {e}")))
    }

    pub fn from_file(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Scenario::from_toml_str(&text)
            .map_err(|e| Error::validation(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.depth == 0 {
            return Err(Error::validation("model.depth must be >= 1"));
        }
        if self.model.base_fwd <= 0.0 || self.model.bwd_ratio <= 0.0 {
            return Err(Error::validation("model costs must be > 0"));
        }
        if self.model.params_per_layer == 0 || self.model.memory_bytes_per_layer == 0 {
            return Err(Error::validation("model sizes must be > 0"));
        }
        for (name, len) in [
            ("fwd_costs", self.model.fwd_costs.as_ref().map(Vec::len)),
            ("bwd_costs", self.model.bwd_costs.as_ref().map(Vec::len)),
            ("param_counts", self.model.param_counts.as_ref().map(Vec::len)),
            ("memory_bytes", self.model.memory_bytes.as_ref().map(Vec::len)),
        ] {
            if let Some(len) = len {
                if len != self.model.depth {
                    return Err(Error::validation(format!(
                        "model.{name} has {len} entries for depth {}",
                        self.model.depth
                    )));
                }
            }
        }
        if self.workers.count == 0 || self.workers.count > self.model.depth {
            return Err(Error::validation(format!(
                "workers.count must be in 1..=depth ({})",
                self.model.depth
            )));
        }
        if self.workers.memory_capacity == 0 {
            return Err(Error::validation("workers.memory_capacity must be > 0"));
        }
        self.pipeline.validate()?;
        if self.run.iterations == 0 || self.run.rebalance_interval == 0 {
            return Err(Error::validation(
                "run.iterations and run.rebalance_interval must be >= 1",
            ));
        }
        if self.repack.enabled {
            if self.repack.target_num_workers == 0
                || self.repack.target_num_workers > self.workers.count
            {
                return Err(Error::validation(
                    "repack.target_num_workers must be in 1..=workers.count",
                ));
            }
            if !(0.0 < self.repack.headroom && self.repack.headroom <= 1.0) {
                return Err(Error::validation("repack.headroom must be in (0, 1]"));
            }
            if self.repack.restart_cost < 0.0 {
                return Err(Error::validation("repack.restart_cost must be >= 0"));
            }
        }
        if self.balancer.gamma <= 0.0 {
            return Err(Error::validation("balancer.gamma must be > 0"));
        }
        if self.balancer.max_rounds == 0 {
            return Err(Error::validation("balancer.max_rounds must be >= 1"));
        }
        // full case validation happens when the engine is built; the checks
        // here catch config mistakes before any allocation
        self.build_layers().and(Ok(()))
    }

    pub fn build_layers(&self) -> Result<Vec<LayerSpec>> {
        let m = &self.model;
        let layers: Vec<LayerSpec> = (0..m.depth)
            .map(|i| {
                let fwd = m
                    .fwd_costs
                    .as_ref()
                    .map(|v| v[i])
                    .unwrap_or(m.base_fwd);
                let bwd = m
                    .bwd_costs
                    .as_ref()
                    .map(|v| v[i])
                    .unwrap_or(fwd * m.bwd_ratio);
                LayerSpec {
                    id: i,
                    base_compute_fwd: fwd,
                    base_compute_bwd: bwd,
                    param_count: m
                        .param_counts
                        .as_ref()
                        .map(|v| v[i])
                        .unwrap_or(m.params_per_layer),
                    memory_bytes: m
                        .memory_bytes
                        .as_ref()
                        .map(|v| v[i])
                        .unwrap_or(m.memory_bytes_per_layer),
                }
            })
            .collect();
        validate_layers(&layers)?;
        Ok(layers)
    }

    pub fn build_workers(&self) -> Vec<WorkerSpec> {
        (0..self.workers.count)
            .map(|i| WorkerSpec::new(i, self.workers.memory_capacity))
            .collect()
    }

    pub fn repack_options(&self) -> RepackOptions {
        RepackOptions {
            contiguous: self.repack.contiguous,
            literal_scan: self.repack.literal_scan,
        }
    }

    /// Instantiates the dynamism case, synthesizing pruning magnitudes from
    /// the seed unless a magnitude file is configured.
    pub fn build_case(&self, layers: &[LayerSpec]) -> Result<DynamismCase> {
        Ok(match &self.dynamism {
            DynamismConfig::Moe {
                experts_per_layer,
                tokens_per_batch,
                routing_skew,
                moe_layer_stride,
            } => DynamismCase::MoE {
                experts_per_layer: *experts_per_layer,
                tokens_per_batch: *tokens_per_batch,
                routing_skew: *routing_skew,
                moe_layer_stride: *moe_layer_stride,
            },
            DynamismConfig::GradualPruning {
                s_initial,
                s_final,
                t0,
                delta_t,
                n_steps,
                magnitude_samples,
                magnitude_sigma_spread,
                compute_breakpoint,
                csr_overhead,
                magnitudes_file,
                magnitudes_sidecar,
            } => {
                let shards = match (magnitudes_file, magnitudes_sidecar) {
                    (Some(data), Some(sidecar)) => {
                        ShardedParams::from_files(Path::new(data), Path::new(sidecar))?
                    }
                    (None, None) => synthesize_magnitudes(
                        layers,
                        self.workers.count,
                        *magnitude_samples,
                        *magnitude_sigma_spread,
                        self.run.seed,
                    )?,
                    _ => {
                        return Err(Error::validation(
                            "magnitudes_file and magnitudes_sidecar must be set together",
                        ))
                    }
                };
                DynamismCase::GradualPruning {
                    schedule: PruningSchedule {
                        s_initial: *s_initial,
                        s_final: *s_final,
                        t0: *t0,
                        delta_t: *delta_t,
                        n_steps: *n_steps,
                    },
                    shards,
                    compute_breakpoint: *compute_breakpoint,
                    csr_overhead: *csr_overhead,
                }
            }
            DynamismConfig::LayerFreezing {
                freeze_interval,
                converge_front_bias,
            } => DynamismCase::LayerFreezing {
                freeze_interval: *freeze_interval,
                converge_front_bias: *converge_front_bias,
            },
            DynamismConfig::SparseAttention {
                sparsity_low,
                sparsity_high,
                attention_fraction_of_layer,
            } => DynamismCase::SparseAttention {
                sparsity_low: *sparsity_low,
                sparsity_high: *sparsity_high,
                attention_fraction_of_layer: *attention_fraction_of_layer,
            },
            DynamismConfig::EarlyExit {
                first_exit_layer,
                exit_prob_per_layer,
            } => DynamismCase::EarlyExit {
                first_exit_layer: *first_exit_layer,
                exit_prob_per_layer: *exit_prob_per_layer,
            },
            DynamismConfig::Mod {
                capacity_fraction,
                predictor_noise,
            } => DynamismCase::MoD {
                capacity_fraction: *capacity_fraction,
                predictor_noise: *predictor_noise,
            },
        })
    }

    pub fn case_name(&self) -> &'static str {
        match &self.dynamism {
            DynamismConfig::Moe { .. } => "moe",
            DynamismConfig::GradualPruning { .. } => "gradual_pruning",
            DynamismConfig::LayerFreezing { .. } => "layer_freezing",
            DynamismConfig::SparseAttention { .. } => "sparse_attention",
            DynamismConfig::EarlyExit { .. } => "early_exit",
            DynamismConfig::Mod { .. } => "mod",
        }
    }

    /// Content hash over everything except the balancer section. Two runs
    /// are comparable exactly when their hashes match: same model, fleet,
    /// pipeline, dynamism, repack settings, and seed.
    pub fn content_hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            model: &'a ModelConfig,
            workers: &'a WorkersConfig,
            pipeline: &'a PipelineConfig,
            dynamism: &'a DynamismConfig,
            repack: &'a RepackConfig,
            run: &'a RunConfig,
        }
        let canonical = serde_json::to_string(&Hashed {
            model: &self.model,
            workers: &self.workers,
            pipeline: &self.pipeline,
            dynamism: &self.dynamism,
            repack: &self.repack,
            run: &self.run,
        })
        .expect("scenario serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        let mut hex = String::with_capacity(64);
        for b in digest {
            hex.push_str(&format!("{b:02x}"));
        }
        hex
    }
}

/// Seeded per-layer magnitude synthesis: layer scales are log-uniform so
/// global pruning retains different fractions per layer.
fn synthesize_magnitudes(
    layers: &[LayerSpec],
    n_shards: usize,
    samples: usize,
    sigma_spread: f64,
    seed: u64,
) -> Result<ShardedParams> {
    if samples == 0 {
        return Err(Error::validation("magnitude_samples must be >= 1"));
    }
    if sigma_spread < 0.0 {
        return Err(Error::validation("magnitude_sigma_spread must be >= 0"));
    }
    let per_layer: Vec<Vec<f32>> = layers
        .iter()
        .map(|l| {
            let mut rng = seeds::stream(seed, &[tag::PRUNE_MAGNITUDES, l.id as u64]);
            let sigma = if sigma_spread > 0.0 {
                rng.random_range(-sigma_spread..=sigma_spread).exp()
            } else {
                1.0
            };
            let normal = Normal::new(0.0f64, sigma).expect("sigma > 0");
            let n = samples.min(l.param_count as usize).max(1);
            (0..n)
                .map(|_| normal.sample(&mut rng).abs() as f32)
                .collect()
        })
        .collect();
    ShardedParams::from_layer_magnitudes(per_layer, n_shards)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const MINIMAL: &str = r#"
[model]
depth = 8
base_fwd = 0.5
params_per_layer = 1000
memory_bytes_per_layer = 1000000

[workers]
count = 2
memory_capacity = 100000000

[dynamism]
case = "early_exit"
first_exit_layer = 4
exit_prob_per_layer = 0.3

[balancer]
kind = "partition_by_time"

[run]
iterations = 5
rebalance_interval = 1
seed = 7
"#;

    #[test]
    fn minimal_scenario_parses_and_validates() {
        let sc = Scenario::from_toml_str(MINIMAL).unwrap();
        sc.validate().unwrap();
        assert_eq!(sc.model.depth, 8);
        assert_eq!(sc.balancer.kind, BalancerKind::PartitionByTime);
        assert_eq!(sc.pipeline.n_microbatches, 32); // default
        let layers = sc.build_layers().unwrap();
        assert_eq!(layers.len(), 8);
        assert_eq!(layers[0].base_compute_bwd, 1.0); // bwd_ratio default 2
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = MINIMAL.replace("[run]", "[run]\nbogus_knob = 3");
        let err = Scenario::from_toml_str(&bad);
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn unknown_case_tag_rejected() {
        let bad = MINIMAL.replace("early_exit", "quantum_routing");
        assert!(Scenario::from_toml_str(&bad).is_err());
    }

    #[test]
    fn semantic_validation_catches_bad_counts() {
        let mut sc = Scenario::from_toml_str(MINIMAL).unwrap();
        sc.workers.count = 16; // more stages than layers
        assert!(sc.validate().is_err());
        let mut sc = Scenario::from_toml_str(MINIMAL).unwrap();
        sc.run.rebalance_interval = 0;
        assert!(sc.validate().is_err());
    }

    #[test]
    fn hash_ignores_balancer_kind_only() {
        let a = Scenario::from_toml_str(MINIMAL).unwrap();
        let mut b = a.clone();
        b.balancer.kind = BalancerKind::StaticUniform;
        assert_eq!(a.content_hash(), b.content_hash());
        let mut c = a.clone();
        c.run.seed = 8;
        assert_ne!(a.content_hash(), c.content_hash());
        let mut d = a.clone();
        d.model.depth = 9;
        assert_ne!(a.content_hash(), d.content_hash());
    }

    #[test]
    fn per_layer_arrays_override_scalars() {
        let mut sc = Scenario::from_toml_str(MINIMAL).unwrap();
        sc.model.fwd_costs = Some((1..=8).map(|i| i as f64).collect());
        let layers = sc.build_layers().unwrap();
        assert_eq!(layers[3].base_compute_fwd, 4.0);
        assert_eq!(layers[3].base_compute_bwd, 8.0);
        sc.model.fwd_costs = Some(vec![1.0; 7]); // wrong length
        assert!(sc.validate().is_err());
    }

    #[test]
    fn pruning_case_builds_sharded_magnitudes() {
        let toml = MINIMAL.replace(
            "case = \"early_exit\"\nfirst_exit_layer = 4\nexit_prob_per_layer = 0.3",
            "case = \"gradual_pruning\"\ns_initial = 0.0\ns_final = 0.9\nt0 = 2\ndelta_t = 1\nn_steps = 4\nmagnitude_samples = 50",
        );
        let sc = Scenario::from_toml_str(&toml).unwrap();
        let layers = sc.build_layers().unwrap();
        let case = sc.build_case(&layers).unwrap();
        match case {
            DynamismCase::GradualPruning { shards, .. } => {
                assert_eq!(shards.layer_spans().len(), 8);
                assert_eq!(shards.global_count(), 8 * 50);
                assert_eq!(shards.n_shards(), 2);
            }
            _ => panic!("wrong case"),
        }
    }

    #[test]
    fn magnitude_synthesis_is_seed_deterministic() {
        let sc = Scenario::from_toml_str(MINIMAL).unwrap();
        let layers = sc.build_layers().unwrap();
        let a = synthesize_magnitudes(&layers, 2, 100, 1.0, 42).unwrap();
        let b = synthesize_magnitudes(&layers, 2, 100, 1.0, 42).unwrap();
        assert_eq!(a.shards(), b.shards());
        let c = synthesize_magnitudes(&layers, 2, 100, 1.0, 43).unwrap();
        assert_ne!(a.shards(), c.shards());
    }
}
