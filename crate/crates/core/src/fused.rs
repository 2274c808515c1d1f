//! Two-stage fused tiled matmul-plus-sample.
//!
//! Stage 1 computes logits one (batch tile, vocabulary tile) block at a time,
//! applies the deterministic transform, perturbs with per-token Gumbel noise,
//! and keeps a single `(score, index)` candidate per row and tile. Stage 2
//! reduces the small candidate buffer to one sample per row. The full `[B,V]`
//! logits matrix is never formed; a [`TrafficLedger`] counts every byte class
//! so tests can assert exactly that.
//!
//! Accumulation walks the inner dimension in ascending order within and
//! across k-chunks, so a logit's value is bitwise independent of the tiling.
//! Combined with counter-based noise this makes the fused sampler pathwise
//! identical to a full-row Gumbel-argmax, not merely equal in distribution.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{HiddenStates, LmHeadWeights, Matrix};
use crate::rng::{gumbel_at, RngKey, StreamIndex};
use crate::samplers::{materialized_sample, LogitsRow, SampleResult, TransformSpec};
use crate::scalar::Scalar;

/// Tile sizes for the fused kernel. Results are invariant to every valid
/// choice; these only trade off working-set size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingConfig {
    /// Vocabulary entries per tile.
    pub vocab_tile: usize,
    /// Batch rows per tile.
    pub batch_tile: usize,
    /// Inner-dimension chunk per accumulation step.
    pub k_tile: usize,
}

impl Default for TilingConfig {
    fn default() -> Self {
        TilingConfig {
            vocab_tile: 4096,
            batch_tile: 8,
            k_tile: 64,
        }
    }
}

impl TilingConfig {
    pub fn new(vocab_tile: usize, batch_tile: usize, k_tile: usize) -> Result<Self> {
        let cfg = TilingConfig {
            vocab_tile,
            batch_tile,
            k_tile,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_tile == 0 || self.batch_tile == 0 || self.k_tile == 0 {
            return Err(Error::InvalidParameter(format!(
                "tile sizes must be at least 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Per-row, per-tile maximizer emitted by Stage 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TileCandidate<T> {
    /// Batch row this candidate belongs to.
    pub row: usize,
    /// Vocabulary tile ordinal.
    pub tile: usize,
    /// Best perturbed score in the tile, or -inf when every entry is masked.
    pub score: T,
    /// Global vocabulary index of the maximizer (tile start when score is -inf).
    pub index: usize,
}

/// Dense `B x n_tiles` candidate buffer, the only Stage-1 output.
#[derive(Debug, Clone)]
pub struct CandidateBuffer<T> {
    candidates: Vec<TileCandidate<T>>,
    rows: usize,
    tiles: usize,
}

impl<T: Scalar> CandidateBuffer<T> {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn tiles(&self) -> usize {
        self.tiles
    }

    pub fn get(&self, row: usize, tile: usize) -> &TileCandidate<T> {
        &self.candidates[row * self.tiles + tile]
    }

    /// Build a buffer from explicit candidates (row-major by row, then tile).
    pub fn from_candidates(rows: usize, tiles: usize, candidates: Vec<TileCandidate<T>>) -> Result<Self> {
        if candidates.len() != rows * tiles {
            return Err(Error::ShapeMismatch(format!(
                "candidate buffer {rows}x{tiles} needs {} entries, got {}",
                rows * tiles,
                candidates.len()
            )));
        }
        Ok(CandidateBuffer {
            candidates,
            rows,
            tiles,
        })
    }
}

/// Byte counters per logical memory class. `logits_bytes_*` track `[B,V]`
/// shaped materialization and must stay zero on the fused path.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrafficLedger {
    /// Accounting width used for matrix elements.
    pub bytes_per_element: u64,
    /// Bytes of LM-head weights streamed in.
    pub weight_bytes_read: u64,
    /// Bytes of hidden states streamed in.
    pub hidden_bytes_read: u64,
    /// Bytes of tile candidates written out.
    pub candidate_bytes_written: u64,
    /// Bytes written to `[B,V]`-shaped buffers (logits, probabilities, prefix sums).
    pub logits_bytes_written: u64,
    /// Bytes read back from `[B,V]`-shaped buffers.
    pub logits_bytes_read: u64,
}

impl TrafficLedger {
    pub fn new(bytes_per_element: u64) -> Self {
        TrafficLedger {
            bytes_per_element,
            ..Default::default()
        }
    }

    /// Total `[B,V]`-shaped materialization traffic.
    pub fn materialized_logits_bytes(&self) -> u64 {
        self.logits_bytes_written + self.logits_bytes_read
    }

    pub fn total_bytes(&self) -> u64 {
        self.weight_bytes_read
            + self.hidden_bytes_read
            + self.candidate_bytes_written
            + self.materialized_logits_bytes()
    }

    pub fn merge(&mut self, other: &TrafficLedger) {
        debug_assert_eq!(self.bytes_per_element, other.bytes_per_element);
        self.weight_bytes_read += other.weight_bytes_read;
        self.hidden_bytes_read += other.hidden_bytes_read;
        self.candidate_bytes_written += other.candidate_bytes_written;
        self.logits_bytes_written += other.logits_bytes_written;
        self.logits_bytes_read += other.logits_bytes_read;
    }
}

/// Accounting width of one stored tile candidate: score plus a 32-bit index.
fn candidate_bytes<T>() -> u64 {
    (std::mem::size_of::<T>() + std::mem::size_of::<u32>()) as u64
}

/// Blocked accumulation of `H_block (W_block)^T` over k-chunks.
///
/// Every output element is accumulated in ascending inner-dimension order
/// regardless of `k_tile`, so the result is bitwise identical across
/// chunkings. Accumulation happens in the working scalar type (at least
/// 32-bit).
pub fn blocked_matmul_tile<T: Scalar>(
    h: &Matrix<T>,
    batch_range: Range<usize>,
    w: &Matrix<T>,
    vocab_range: Range<usize>,
    k_tile: usize,
) -> Result<Matrix<T>> {
    if h.cols() != w.cols() {
        return Err(Error::ShapeMismatch(format!(
            "inner dimensions differ: H has {}, W has {}",
            h.cols(),
            w.cols()
        )));
    }
    if batch_range.end > h.rows() || vocab_range.end > w.rows() {
        return Err(Error::ShapeMismatch("tile range out of bounds".into()));
    }
    if k_tile == 0 {
        return Err(Error::InvalidParameter("k_tile must be at least 1".into()));
    }
    let dim = h.cols();
    let nb = batch_range.len();
    let nv = vocab_range.len();
    let mut acc = Matrix::zeros(nb, nv);
    let mut d0 = 0;
    while d0 < dim {
        let d1 = (d0 + k_tile).min(dim);
        for (bi, b) in batch_range.clone().enumerate() {
            let h_chunk = &h.row(b)[d0..d1];
            for (vi, v) in vocab_range.clone().enumerate() {
                let w_chunk = &w.row(v)[d0..d1];
                let mut s = acc.get(bi, vi);
                for (&hv, &wv) in h_chunk.iter().zip(w_chunk) {
                    s += hv * wv;
                }
                acc.set(bi, vi, s);
            }
        }
        d0 = d1;
    }
    Ok(acc)
}

fn tile_ranges(total: usize, tile: usize) -> Vec<Range<usize>> {
    (0..total.div_ceil(tile))
        .map(|t| t * tile..((t + 1) * tile).min(total))
        .collect()
}

/// Stage 1 with global offsets, used when `w` is a shard of a wider
/// vocabulary or `h` a slice of a larger batch. Transform indices and noise
/// positions are global: vocabulary index `vocab_base + i`, row
/// `row_base + b`.
pub fn stage1_tile_candidates_at<T: Scalar>(
    h: &HiddenStates<T>,
    w: &LmHeadWeights<T>,
    spec: &TransformSpec<T>,
    key: RngKey,
    cfg: &TilingConfig,
    vocab_base: usize,
    row_base: usize,
) -> Result<(CandidateBuffer<T>, TrafficLedger)> {
    cfg.validate()?;
    if h.dim() != w.dim() {
        return Err(Error::ShapeMismatch(format!(
            "hidden dim {} does not match weight dim {}",
            h.dim(),
            w.dim()
        )));
    }
    spec.validate_covering(vocab_base + w.vocab())?;

    let batch = h.batch();
    let vocab = w.vocab();
    let dim = h.dim();
    let batch_tiles = tile_ranges(batch, cfg.batch_tile);
    let vocab_tiles = tile_ranges(vocab, cfg.vocab_tile);
    let n_tiles = vocab_tiles.len();
    let bpe = w.bytes_per_element();

    let tasks: Vec<(usize, usize)> = (0..batch_tiles.len())
        .flat_map(|bt| (0..n_tiles).map(move |vt| (bt, vt)))
        .collect();

    // Tasks are independent: each writes candidates for disjoint (row, tile)
    // cells, and noise is addressed by position, so any schedule gives the
    // same buffer.
    let task_results: Vec<(usize, usize, Vec<TileCandidate<T>>)> = tasks
        .into_par_iter()
        .map(|(bt, vt)| -> Result<(usize, usize, Vec<TileCandidate<T>>)> {
            let b_range = batch_tiles[bt].clone();
            let v_range = vocab_tiles[vt].clone();
            let acc = blocked_matmul_tile(h.matrix(), b_range.clone(), w.matrix(), v_range.clone(), cfg.k_tile)?;
            let mut out = Vec::with_capacity(b_range.len());
            for (local_b, row) in b_range.clone().enumerate() {
                let mut best = T::neg_infinity();
                let mut best_index: Option<usize> = None;
                for local_i in 0..v_range.len() {
                    let global = vocab_base + v_range.start + local_i;
                    let y = spec.apply(acc.get(local_b, local_i), global);
                    if y == T::neg_infinity() {
                        continue;
                    }
                    if y.is_nan() || y == T::infinity() {
                        return Err(Error::InvalidLogit(format!(
                            "transform produced {y} at index {global}"
                        )));
                    }
                    let score =
                        y + gumbel_at::<T>(key, StreamIndex::gumbel(row_base + row, global))?;
                    if best_index.is_none() || score > best {
                        best = score;
                        best_index = Some(global);
                    }
                }
                out.push(TileCandidate {
                    row,
                    tile: vt,
                    score: if best_index.is_some() { best } else { T::neg_infinity() },
                    index: best_index.unwrap_or(vocab_base + v_range.start),
                });
            }
            Ok((bt, vt, out))
        })
        .collect::<Result<Vec<_>>>()?;

    let placeholder = TileCandidate {
        row: 0,
        tile: 0,
        score: T::neg_infinity(),
        index: vocab_base,
    };
    let mut candidates = vec![placeholder; batch * n_tiles];
    for (bt, vt, tile_rows) in task_results {
        for (local_b, cand) in tile_rows.into_iter().enumerate() {
            let row = batch_tiles[bt].start + local_b;
            candidates[row * n_tiles + vt] = cand;
        }
    }

    let mut ledger = TrafficLedger::new(bpe);
    ledger.weight_bytes_read = (vocab * dim) as u64 * bpe * batch_tiles.len() as u64;
    ledger.hidden_bytes_read = (batch * dim) as u64 * bpe * n_tiles as u64;
    ledger.candidate_bytes_written = (batch * n_tiles) as u64 * candidate_bytes::<T>();

    Ok((
        CandidateBuffer {
            candidates,
            rows: batch,
            tiles: n_tiles,
        },
        ledger,
    ))
}

/// Stage 1 over the full vocabulary.
pub fn stage1_tile_candidates<T: Scalar>(
    h: &HiddenStates<T>,
    w: &LmHeadWeights<T>,
    spec: &TransformSpec<T>,
    key: RngKey,
    cfg: &TilingConfig,
) -> Result<(CandidateBuffer<T>, TrafficLedger)> {
    stage1_tile_candidates_at(h, w, spec, key, cfg, 0, 0)
}

/// Stage 2: per-row argmax over tile candidates. Scores were computed once in
/// Stage 1 and are only compared here, so the max decomposition is bitwise.
/// Ties break toward the smaller tile ordinal (whose candidate also carries
/// the smaller global index under contiguous tiling).
pub fn stage2_reduce<T: Scalar>(buffer: &CandidateBuffer<T>) -> Result<Vec<SampleResult<T>>> {
    let mut results = Vec::with_capacity(buffer.rows());
    for row in 0..buffer.rows() {
        let mut best: Option<&TileCandidate<T>> = None;
        for tile in 0..buffer.tiles() {
            let cand = buffer.get(row, tile);
            if cand.score == T::neg_infinity() {
                continue;
            }
            match best {
                Some(b) if cand.score <= b.score => {}
                _ => best = Some(cand),
            }
        }
        match best {
            Some(cand) => results.push(SampleResult {
                index: cand.index,
                log_normalizer: None,
            }),
            None => {
                return Err(Error::UndefinedDistribution(format!(
                    "row {row}: every tile candidate has zero mass"
                )))
            }
        }
    }
    Ok(results)
}

/// Fused matmul-sample with global offsets (shard-local or batch-slice runs).
pub fn fused_matmul_sample_at<T: Scalar>(
    h: &HiddenStates<T>,
    w: &LmHeadWeights<T>,
    spec: &TransformSpec<T>,
    key: RngKey,
    cfg: &TilingConfig,
    vocab_base: usize,
    row_base: usize,
) -> Result<(Vec<SampleResult<T>>, TrafficLedger)> {
    let (buffer, ledger) = stage1_tile_candidates_at(h, w, spec, key, cfg, vocab_base, row_base)?;
    let samples = stage2_reduce(&buffer)?;
    Ok((samples, ledger))
}

/// Fused matmul-sample: one exact categorical sample per batch row, without
/// materializing the `[B,V]` logits matrix. For any tiling, the returned
/// index matches a full-row streaming Gumbel-argmax under the same key.
///
/// ```
/// use gemmsample::fused::{fused_matmul_sample, TilingConfig};
/// use gemmsample::rng::RngKey;
/// use gemmsample::samplers::TransformSpec;
/// use gemmsample::synth;
///
/// let h = synth::hidden_states::<f64>(1, 4, 32);
/// let w = synth::lm_head_weights::<f64>(1, 1000, 32);
/// let (samples, ledger) = fused_matmul_sample(
///     &h, &w, &TransformSpec::identity(), RngKey(7), &TilingConfig::default(),
/// ).unwrap();
/// assert_eq!(samples.len(), 4);
/// assert_eq!(ledger.materialized_logits_bytes(), 0);
/// ```
pub fn fused_matmul_sample<T: Scalar>(
    h: &HiddenStates<T>,
    w: &LmHeadWeights<T>,
    spec: &TransformSpec<T>,
    key: RngKey,
    cfg: &TilingConfig,
) -> Result<(Vec<SampleResult<T>>, TrafficLedger)> {
    fused_matmul_sample_at(h, w, spec, key, cfg, 0, 0)
}

/// Materialized baseline with the same GEMM kernel and ledger accounting:
/// logits are written to a `[B,V]` buffer, then the softmax/prefix-sum
/// sampler makes its passes over it. Pass structure per row: transform
/// (read+write), max (read), exp-sum (read, write probabilities), normalize
/// (read+write), prefix search (read up to the sampled index).
pub fn materialized_matmul_sample<T: Scalar>(
    h: &HiddenStates<T>,
    w: &LmHeadWeights<T>,
    spec: &TransformSpec<T>,
    key: RngKey,
    cfg: &TilingConfig,
) -> Result<(Vec<SampleResult<T>>, TrafficLedger)> {
    cfg.validate()?;
    if h.dim() != w.dim() {
        return Err(Error::ShapeMismatch(format!(
            "hidden dim {} does not match weight dim {}",
            h.dim(),
            w.dim()
        )));
    }
    spec.validate_for(w.vocab())?;

    let batch = h.batch();
    let vocab = w.vocab();
    let dim = h.dim();
    let bpe = w.bytes_per_element();
    let batch_tiles = tile_ranges(batch, cfg.batch_tile);
    let vocab_tiles = tile_ranges(vocab, cfg.vocab_tile);

    let mut ledger = TrafficLedger::new(bpe);
    ledger.weight_bytes_read = (vocab * dim) as u64 * bpe * batch_tiles.len() as u64;
    ledger.hidden_bytes_read = (batch * dim) as u64 * bpe * vocab_tiles.len() as u64;

    let mut logits = Matrix::zeros(batch, vocab);
    for b_range in &batch_tiles {
        for v_range in &vocab_tiles {
            let acc = blocked_matmul_tile(
                h.matrix(),
                b_range.clone(),
                w.matrix(),
                v_range.clone(),
                cfg.k_tile,
            )?;
            for (bi, b) in b_range.clone().enumerate() {
                for (vi, v) in v_range.clone().enumerate() {
                    logits.set(b, v, acc.get(bi, vi));
                }
            }
        }
    }
    // One full [B,V] write out of the GEMM.
    ledger.logits_bytes_written += (batch * vocab) as u64 * bpe;

    let per_elem = vocab as u64 * bpe;
    let mut results = Vec::with_capacity(batch);
    for row in 0..batch {
        let row_logits = LogitsRow::new(logits.row(row).to_vec())?;
        let result = materialized_sample(&row_logits, spec, key, row)?;
        // transform in, max pass, exp-sum pass, normalize read.
        ledger.logits_bytes_read += 4 * per_elem;
        // transformed row, probabilities, normalized probabilities.
        ledger.logits_bytes_written += 3 * per_elem;
        // prefix search scans up to and including the sampled index.
        ledger.logits_bytes_read += (result.index as u64 + 1) * bpe;
        results.push(result);
    }
    Ok((results, ledger))
}
