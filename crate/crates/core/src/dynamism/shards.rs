//! Sharded parameter magnitudes and distributed global magnitude pruning.
//!
//! Each worker (rank) holds one shard of the flattened parameter vector.
//! Global pruning keeps the k largest magnitudes across all shards: every
//! rank selects its local top-k, the candidates are gathered to rank 0,
//! rank 0 picks the global top-k, and the kept indices are scattered back.
//! Any global top-k element is necessarily in its shard's local top-k of
//! size k, so the two-phase procedure is exact. The gather/scatter traffic
//! is accounted as point-to-point byte transfers for the overhead model.

use std::io::Read;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};

/// Span of one layer's parameters inside the sharded magnitude store.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpan {
    pub shard: usize,
    pub offset: usize,
    pub len: usize,
}

/// Per-worker parameter magnitude arrays with per-layer offsets.
#[derive(Debug, Clone)]
pub struct ShardedParams {
    shards: Vec<Vec<f32>>,
    layer_spans: Vec<LayerSpan>,
}

impl ShardedParams {
    /// Builds a store from per-layer magnitude arrays, grouping layers onto
    /// `n_shards` ranks with a block map (layer i -> shard i*n/d).
    pub fn from_layer_magnitudes(per_layer: Vec<Vec<f32>>, n_shards: usize) -> Result<Self> {
        if n_shards == 0 {
            return Err(Error::validation("n_shards must be >= 1"));
        }
        let d = per_layer.len();
        let mut shards = vec![Vec::new(); n_shards];
        let mut layer_spans = Vec::with_capacity(d);
        for (i, mags) in per_layer.into_iter().enumerate() {
            if mags.iter().any(|m| *m < 0.0 || !m.is_finite()) {
                return Err(Error::validation(format!(
                    "layer {i}: magnitudes must be finite and >= 0"
                )));
            }
            let shard = i * n_shards / d;
            let offset = shards[shard].len();
            layer_spans.push(LayerSpan {
                shard,
                offset,
                len: mags.len(),
            });
            shards[shard].extend_from_slice(&mags);
        }
        Ok(ShardedParams {
            shards,
            layer_spans,
        })
    }

    /// Builds a store from raw shards without layer bookkeeping.
    pub fn from_shards(shards: Vec<Vec<f32>>) -> Result<Self> {
        if shards.is_empty() {
            return Err(Error::validation("shards must be non-empty"));
        }
        for (s, shard) in shards.iter().enumerate() {
            if shard.iter().any(|m| *m < 0.0 || !m.is_finite()) {
                return Err(Error::validation(format!(
                    "shard {s}: magnitudes must be finite and >= 0"
                )));
            }
        }
        Ok(ShardedParams {
            shards,
            layer_spans: Vec::new(),
        })
    }

    /// Loads magnitudes from a flat little-endian f32 file plus a JSON
    /// sidecar `{"shard_offsets": [0, ...], "layer_offsets": [0, ...]}`.
    /// Shard offsets mark each rank's start in the flat array; the optional
    /// layer offsets mark each layer's start (a layer must not straddle a
    /// shard boundary) and enable per-layer retention tracking.
    pub fn from_files(data_path: &Path, sidecar_path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Sidecar {
            shard_offsets: Vec<usize>,
            #[serde(default)]
            layer_offsets: Vec<usize>,
        }
        let mut raw = Vec::new();
        std::fs::File::open(data_path)
            .and_then(|mut f| f.read_to_end(&mut raw))
            .map_err(|e| Error::io(data_path.display().to_string(), e))?;
        if raw.len() % 4 != 0 {
            return Err(Error::validation(format!(
                "{}: length {} is not a multiple of 4",
                data_path.display(),
                raw.len()
            )));
        }
        let flat: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]).abs())
            .collect();
        let sidecar: Sidecar = serde_json::from_str(
            &std::fs::read_to_string(sidecar_path)
                .map_err(|e| Error::io(sidecar_path.display().to_string(), e))?,
        )
        .map_err(|e| Error::validation(format!("{}: {e}", sidecar_path.display())))?;
        let mut offsets = sidecar.shard_offsets;
        if offsets.first() != Some(&0) {
            return Err(Error::validation("shard_offsets must start at 0"));
        }
        offsets.push(flat.len());
        let mut shards = Vec::with_capacity(offsets.len() - 1);
        for w in offsets.windows(2) {
            if w[0] > w[1] || w[1] > flat.len() {
                return Err(Error::validation("shard_offsets must ascend within the file"));
            }
            shards.push(flat[w[0]..w[1]].to_vec());
        }
        let mut store = ShardedParams::from_shards(shards)?;
        if !sidecar.layer_offsets.is_empty() {
            let mut layer_bounds = sidecar.layer_offsets;
            if layer_bounds.first() != Some(&0) {
                return Err(Error::validation("layer_offsets must start at 0"));
            }
            layer_bounds.push(flat.len());
            let mut spans = Vec::with_capacity(layer_bounds.len() - 1);
            for w in layer_bounds.windows(2) {
                if w[0] >= w[1] || w[1] > flat.len() {
                    return Err(Error::validation("layer_offsets must ascend within the file"));
                }
                // locate the shard containing this layer
                let shard = offsets.partition_point(|&o| o <= w[0]) - 1;
                if w[1] > offsets[shard + 1] {
                    return Err(Error::validation(format!(
                        "layer at offset {} straddles a shard boundary",
                        w[0]
                    )));
                }
                spans.push(LayerSpan {
                    shard,
                    offset: w[0] - offsets[shard],
                    len: w[1] - w[0],
                });
            }
            store.layer_spans = spans;
        }
        Ok(store)
    }

    pub fn n_shards(&self) -> usize {
        self.shards.len()
    }

    pub fn shards(&self) -> &[Vec<f32>] {
        &self.shards
    }

    pub fn global_count(&self) -> usize {
        self.shards.iter().map(Vec::len).sum()
    }

    pub fn layer_spans(&self) -> &[LayerSpan] {
        &self.layer_spans
    }
}

/// Bytes moved by the gather/scatter phases of one global pruning step,
/// modeled as point-to-point transfers to and from rank 0.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PruneTraffic {
    pub gather_bytes: u64,
    pub scatter_bytes: u64,
}

impl PruneTraffic {
    pub fn total(&self) -> u64 {
        self.gather_bytes + self.scatter_bytes
    }
}

/// Result of one global magnitude pruning step.
#[derive(Debug, Clone)]
pub struct PruneOutcome {
    /// Kept local indices per shard, ascending.
    pub keep: Vec<Vec<usize>>,
    pub traffic: PruneTraffic,
}

impl PruneOutcome {
    pub fn kept_total(&self) -> usize {
        self.keep.iter().map(Vec::len).sum()
    }

    /// Kept count within one layer span.
    pub fn kept_in_span(&self, span: &LayerSpan) -> usize {
        let keep = &self.keep[span.shard];
        let start = keep.partition_point(|&i| i < span.offset);
        let end = keep.partition_point(|&i| i < span.offset + span.len);
        end - start
    }
}

// Candidate ordering: magnitude descending, ties broken by (shard, index)
// ascending so both phases and the test oracle agree exactly.
fn better(a: (f32, usize, usize), b: (f32, usize, usize)) -> bool {
    if a.0 != b.0 {
        return a.0 > b.0;
    }
    (a.1, a.2) < (b.1, b.2)
}

fn local_topk(shard: &[f32], shard_id: usize, k: usize) -> Vec<(f32, usize, usize)> {
    let mut entries: Vec<(f32, usize, usize)> = shard
        .iter()
        .enumerate()
        .map(|(i, &m)| (m, shard_id, i))
        .collect();
    entries.sort_by(|a, b| {
        if better(*a, *b) {
            std::cmp::Ordering::Less
        } else {
            std::cmp::Ordering::Greater
        }
    });
    entries.truncate(k);
    entries
}

/// Keeps the `floor(global_count * (1 - sparsity))` largest magnitudes
/// across all shards and returns each shard's kept indices.
pub fn global_magnitude_prune(shards: &ShardedParams, sparsity: f64) -> Result<PruneOutcome> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::validation(format!(
            "sparsity must be in [0, 1); got {sparsity}"
        )));
    }
    if shards.n_shards() == 0 {
        return Err(Error::validation("no shards to prune"));
    }
    let global = shards.global_count();
    let k = (global as f64 * (1.0 - sparsity)).floor() as usize;

    // Phase 1: local top-k per rank. Phase 2: rank 0 ranks the gathered
    // candidates and takes the global top-k.
    let mut candidates: Vec<(f32, usize, usize)> = Vec::new();
    let mut traffic = PruneTraffic::default();
    for (s, shard) in shards.shards().iter().enumerate() {
        let local = local_topk(shard, s, k);
        if s != 0 {
            // value payload sent to rank 0 (f32 each)
            traffic.gather_bytes += 4 * local.len() as u64;
        }
        candidates.extend(local);
    }
    candidates.sort_by(|a, b| {
        if better(*a, *b) {
            std::cmp::Ordering::Less
        } else {
            std::cmp::Ordering::Greater
        }
    });
    candidates.truncate(k);

    let mut keep = vec![Vec::new(); shards.n_shards()];
    for (_, s, i) in candidates {
        keep[s].push(i);
    }
    for (s, indices) in keep.iter_mut().enumerate() {
        indices.sort_unstable();
        if s != 0 {
            // keep-index payload scattered back (u64 each)
            traffic.scatter_bytes += 8 * indices.len() as u64;
        }
    }
    Ok(PruneOutcome { keep, traffic })
}


#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn two_shard_example() {
        let shards =
            ShardedParams::from_shards(vec![vec![0.9, 0.1], vec![0.5, 0.8]]).unwrap();
        let out = global_magnitude_prune(&shards, 0.5).unwrap();
        assert_eq!(out.keep, vec![vec![0], vec![1]]);
    }

    #[test]
    fn zero_sparsity_keeps_everything() {
        let shards =
            ShardedParams::from_shards(vec![vec![0.3, 0.2], vec![0.7], vec![]]).unwrap();
        let out = global_magnitude_prune(&shards, 0.0).unwrap();
        assert_eq!(out.kept_total(), 3);
        assert_eq!(out.keep, vec![vec![0, 1], vec![0], vec![]]);
    }

    #[test]
    fn single_shard_quarter() {
        let shards = ShardedParams::from_shards(vec![vec![1.0, 2.0, 3.0, 4.0]]).unwrap();
        let out = global_magnitude_prune(&shards, 0.25).unwrap();
        assert_eq!(out.keep, vec![vec![1, 2, 3]]);
    }

    #[test]
    fn duplicate_magnitudes_break_by_shard_then_index() {
        let shards =
            ShardedParams::from_shards(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let out = global_magnitude_prune(&shards, 0.5).unwrap();
        // k = 2: ties resolve to (shard 0, idx 0) and (shard 0, idx 1).
        assert_eq!(out.keep, vec![vec![0, 1], vec![]]);
    }

    #[test]
    fn sparsity_one_rejected() {
        let shards = ShardedParams::from_shards(vec![vec![1.0]]).unwrap();
        assert!(global_magnitude_prune(&shards, 1.0).is_err());
        assert!(global_magnitude_prune(&shards, -0.1).is_err());
    }

    #[test]
    fn empty_shards_contribute_nothing() {
        let shards = ShardedParams::from_shards(vec![vec![], vec![0.4, 0.6]]).unwrap();
        let out = global_magnitude_prune(&shards, 0.5).unwrap();
        assert_eq!(out.keep, vec![vec![], vec![1]]);
    }

    #[test]
    fn traffic_counts_remote_ranks_only() {
        let shards =
            ShardedParams::from_shards(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let out = global_magnitude_prune(&shards, 0.5).unwrap();
        // rank 1 sends its local top-2 values (2 x 4 B) and receives its
        // kept indices (2 kept x 8 B).
        assert_eq!(out.traffic.gather_bytes, 8);
        assert_eq!(out.traffic.scatter_bytes, 16);
    }

    #[test]
    fn matches_oracle_on_random_instances() {
        let mut rng = crate::seeds::stream(7, &[99]);
        for case in 0..200 {
            let n_shards = 1 + rng.random_range(0..8usize);
            let shards: Vec<Vec<f32>> = (0..n_shards)
                .map(|_| {
                    let len = rng.random_range(0..64usize);
                    (0..len)
                        .map(|_| {
                            if rng.random_bool(0.3) {
                                // duplicates on purpose
                                (rng.random_range(0..4u32) as f32) * 0.25
                            } else {
                                rng.random::<f32>()
                            }
                        })
                        .collect()
                })
                .collect();
            let sparsity = rng.random_range(0.0..0.99);
            let expect = oracle::prune(&shards, sparsity);
            let store = ShardedParams::from_shards(shards).unwrap();
            let got = global_magnitude_prune(&store, sparsity).unwrap();
            assert_eq!(got.keep, expect, "case {case} sparsity {sparsity}");
        }
    }

    #[test]
    fn kept_in_span_counts_layers() {
        let per_layer = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let store = ShardedParams::from_layer_magnitudes(per_layer, 2).unwrap();
        let out = global_magnitude_prune(&store, 0.5).unwrap();
        // k = 3: keeps 6, 5, 4 -> layer0: 0, layer1: 1, layer2: 2.
        let spans = store.layer_spans();
        assert_eq!(out.kept_in_span(&spans[0]), 0);
        assert_eq!(out.kept_in_span(&spans[1]), 1);
        assert_eq!(out.kept_in_span(&spans[2]), 2);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("mags.bin");
        let sidecar = dir.path().join("mags.json");
        let values: Vec<f32> = vec![0.5, -1.5, 2.0, 0.25];
        let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(&data, bytes).unwrap();
        std::fs::write(&sidecar, r#"{"shard_offsets": [0, 3]}"#).unwrap();
        let store = ShardedParams::from_files(&data, &sidecar).unwrap();
        assert_eq!(store.n_shards(), 2);
        // magnitudes are absolute values
        assert_eq!(store.shards()[0], vec![0.5, 1.5, 2.0]);
        assert_eq!(store.shards()[1], vec![0.25]);
    }
}
