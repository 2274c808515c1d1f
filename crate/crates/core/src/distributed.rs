//! Simulated tensor-parallel vocabulary sharding.
//!
//! Ranks hold contiguous row ranges of the LM-head weights. Each rank sends
//! the coordinator one constant-size summary per row (shard log-mass plus an
//! exact shard-local sample), and the coordinator finishes with a Gumbel-argmax
//! over the log-masses. Ranks run as real threads over an in-process channel;
//! a [`TransportStats`] ledger counts every byte crossing it, which is how the
//! communication-scales-with-shards (not vocabulary) property is asserted.

use std::ops::Range;
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::LmHeadWeights;
use crate::matrix::HiddenStates;
use crate::rng::{derive_uniform, gumbel_at, gumbel_from_uniform, RngKey, StreamIndex};
use crate::samplers::{logsumexp, SampleResult, TransformSpec};
use crate::scalar::Scalar;

/// Fixed summary payload: 8-byte log-mass, 4-byte local index, 4-byte flags.
/// Independent of shard width by construction.
pub const SUMMARY_PAYLOAD_BYTES: u64 = 16;

/// Fixed size of the per-row result broadcast back to ranks.
pub const RESULT_BROADCAST_BYTES: u64 = 8;

/// Static sharding geometry: `world_size` contiguous ranges covering `[0, V)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardLayout {
    pub vocab_size: usize,
    pub world_size: usize,
}

impl ShardLayout {
    pub fn new(vocab_size: usize, world_size: usize) -> Result<Self> {
        if world_size == 0 {
            return Err(Error::InvalidParameter("world size must be at least 1".into()));
        }
        if vocab_size == 0 {
            return Err(Error::InvalidParameter("vocabulary must be non-empty".into()));
        }
        Ok(ShardLayout {
            vocab_size,
            world_size,
        })
    }

    /// Vocabulary range of `rank`. With `V >= n` each rank gets `V / n` rows
    /// and the last rank absorbs the ragged remainder; with `V < n` balanced
    /// splitting leaves some ranks an empty (zero-mass) range.
    pub fn range(&self, rank: usize) -> Range<usize> {
        debug_assert!(rank < self.world_size);
        let (v, n) = (self.vocab_size, self.world_size);
        let base = v / n;
        if base >= 1 {
            let start = rank * base;
            let end = if rank + 1 == n { v } else { (rank + 1) * base };
            start..end
        } else {
            (rank * v / n)..((rank + 1) * v / n)
        }
    }

    pub fn shard(&self, rank: usize) -> ShardSpec {
        ShardSpec {
            world_size: self.world_size,
            rank,
            vocab_range: self.range(rank),
        }
    }
}

/// One rank's view of the sharding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShardSpec {
    pub world_size: usize,
    pub rank: usize,
    pub vocab_range: Range<usize>,
}

/// A rank's weight shard: the rows of the full matrix its range covers.
#[derive(Debug, Clone, Copy)]
pub struct WeightShard<'a, T> {
    weights: &'a LmHeadWeights<T>,
    start: usize,
    width: usize,
}

impl<'a, T: Scalar> WeightShard<'a, T> {
    pub fn new(weights: &'a LmHeadWeights<T>, spec: &ShardSpec) -> Result<Self> {
        if spec.vocab_range.end > weights.vocab() {
            return Err(Error::ShapeMismatch(format!(
                "shard range {:?} exceeds vocabulary {}",
                spec.vocab_range,
                weights.vocab()
            )));
        }
        Ok(WeightShard {
            weights,
            start: spec.vocab_range.start,
            width: spec.vocab_range.len(),
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.weights.dim()
    }

    /// Weight row for shard-local index `local`.
    pub fn row(&self, local: usize) -> &[T] {
        debug_assert!(local < self.width);
        self.weights.row(self.start + local)
    }

    pub fn global_start(&self) -> usize {
        self.start
    }
}

/// Constant-size message a rank sends the coordinator for one row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SummaryMessage<T> {
    pub rank: usize,
    /// Batch row the summary describes (envelope routing, not payload).
    pub row: usize,
    /// Shard log-mass; -inf when the shard holds no finite logit for the row.
    pub log_mass: T,
    /// Shard-local sample, present iff the log-mass is finite.
    pub local_sample: Option<usize>,
    /// Accounted payload size; always [`SUMMARY_PAYLOAD_BYTES`].
    pub payload_bytes: u64,
}

/// Bytes and message counts observed on the simulated transport.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransportStats {
    pub messages_sent: u64,
    /// Bytes of rank-to-coordinator summaries.
    pub summary_bytes: u64,
    /// Bytes of coordinator-to-ranks result broadcasts.
    pub broadcast_bytes: u64,
    pub per_rank_bytes: Vec<u64>,
}

impl TransportStats {
    pub fn total_bytes(&self) -> u64 {
        self.summary_bytes + self.broadcast_bytes
    }
}

/// One transport event, for optional JSON-lines traces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageTrace {
    pub row: usize,
    pub rank: usize,
    pub bytes: u64,
    pub tag: &'static str,
}

/// Compute one rank's summary for one row: project the hidden vector through
/// the shard, transform with global indices, and take the shard log-mass plus
/// an exact local sample. Per-token noise is addressed at global positions,
/// so the local sample is pathwise identical to running the fused sampler on
/// the shard. A fully masked (or empty) shard yields a -inf message.
pub fn rank_local_summary<T: Scalar>(
    shard: &ShardSpec,
    w_shard: &WeightShard<'_, T>,
    hidden: &[T],
    spec: &TransformSpec<T>,
    key: RngKey,
    row: usize,
) -> Result<SummaryMessage<T>> {
    if w_shard.dim() != hidden.len() {
        return Err(Error::ShapeMismatch(format!(
            "hidden dim {} does not match weight dim {}",
            hidden.len(),
            w_shard.dim()
        )));
    }
    if w_shard.width() != shard.vocab_range.len() {
        return Err(Error::ShapeMismatch("shard width does not match range".into()));
    }
    let base = shard.vocab_range.start;
    spec.validate_covering(base + w_shard.width())?;

    let mut running_mass = T::neg_infinity();
    let mut mass_sum = T::zero(); // sum of exp(y - running_mass), online-renormalized
    let mut best = T::neg_infinity();
    let mut best_local: Option<usize> = None;

    for local in 0..w_shard.width() {
        // Ascending-order dot product: bitwise identical to the blocked GEMM.
        let mut logit = T::zero();
        for (&hv, &wv) in hidden.iter().zip(w_shard.row(local)) {
            logit += hv * wv;
        }
        let y = spec.apply(logit, base + local);
        if y == T::neg_infinity() {
            continue;
        }
        if y.is_nan() || y == T::infinity() {
            return Err(Error::InvalidLogit(format!(
                "transform produced {y} at index {}",
                base + local
            )));
        }
        // Online log-sum-exp update.
        if y > running_mass {
            mass_sum = mass_sum * (running_mass - y).exp() + T::one();
            running_mass = y;
        } else {
            mass_sum += (y - running_mass).exp();
        }
        let score = y + gumbel_at::<T>(key, StreamIndex::gumbel(row, base + local))?;
        if best_local.is_none() || score > best {
            best = score;
            best_local = Some(local);
        }
    }

    let log_mass = if best_local.is_some() {
        running_mass + mass_sum.ln()
    } else {
        T::neg_infinity()
    };
    Ok(SummaryMessage {
        rank: shard.rank,
        row,
        log_mass,
        local_sample: best_local,
        payload_bytes: SUMMARY_PAYLOAD_BYTES,
    })
}

/// How the coordinator combines summaries. Both modes see the same perturbed
/// scores and must agree on the winner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReductionMode {
    /// Rank 0 gathers all summaries and scans them.
    Gather,
    /// Pairwise tree reduction over the same scores.
    Tree,
}

fn perturbed_scores<T: Scalar>(
    messages: &[SummaryMessage<T>],
    key: RngKey,
    row: usize,
) -> Vec<Option<T>> {
    messages
        .iter()
        .map(|m| {
            if m.log_mass == T::neg_infinity() {
                None
            } else {
                let u = derive_uniform(key, StreamIndex::outer_group(row, m.rank));
                Some(m.log_mass + gumbel_from_uniform::<T>(u))
            }
        })
        .collect()
}

/// Exact selection over shard log-masses: Gumbel-argmax with one fresh draw
/// per rank, then map the winner's local sample to its global index.
pub fn coordinator_select<T: Scalar>(
    messages: &[SummaryMessage<T>],
    key: RngKey,
    row: usize,
    layout: &ShardLayout,
) -> Result<SampleResult<T>> {
    coordinator_select_with(messages, key, row, layout, ReductionMode::Gather)
}

pub fn coordinator_select_with<T: Scalar>(
    messages: &[SummaryMessage<T>],
    key: RngKey,
    row: usize,
    layout: &ShardLayout,
    mode: ReductionMode,
) -> Result<SampleResult<T>> {
    if messages.len() != layout.world_size {
        return Err(Error::Protocol(format!(
            "expected {} summaries, got {}",
            layout.world_size,
            messages.len()
        )));
    }
    for (k, m) in messages.iter().enumerate() {
        if m.rank != k {
            return Err(Error::Protocol(format!("summary {k} carries rank {}", m.rank)));
        }
        if m.payload_bytes != SUMMARY_PAYLOAD_BYTES {
            return Err(Error::Protocol(format!(
                "rank {k} payload is {} bytes, expected {SUMMARY_PAYLOAD_BYTES}",
                m.payload_bytes
            )));
        }
    }

    let scores = perturbed_scores(messages, key, row);
    let winner = match mode {
        ReductionMode::Gather => {
            let mut best: Option<(T, usize)> = None;
            for (k, s) in scores.iter().enumerate() {
                if let Some(s) = s {
                    match best {
                        Some((bs, _)) if *s <= bs => {}
                        _ => best = Some((*s, k)),
                    }
                }
            }
            best.map(|(_, k)| k)
        }
        ReductionMode::Tree => tree_argmax(&scores),
    };

    let Some(k_star) = winner else {
        return Err(Error::UndefinedDistribution(
            "every shard reported zero mass".into(),
        ));
    };
    let local = messages[k_star]
        .local_sample
        .expect("finite mass implies a sample");
    let masses: Vec<T> = messages.iter().map(|m| m.log_mass).collect();
    Ok(SampleResult {
        index: layout.range(k_star).start + local,
        log_normalizer: Some(logsumexp(&masses)),
    })
}

/// Pairwise reduction with the (score desc, rank asc) tie rule, which is
/// associative, so any reduction tree picks the gather-mode winner.
fn tree_argmax<T: Scalar>(scores: &[Option<T>]) -> Option<usize> {
    let mut level: Vec<Option<(T, usize)>> = scores
        .iter()
        .enumerate()
        .map(|(k, s)| s.map(|v| (v, k)))
        .collect();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| match pair {
                [a] => *a,
                [a, b] => match (a, b) {
                    (Some((sa, ka)), Some((sb, kb))) => {
                        if sb > sa || (sb == sa && kb < ka) {
                            Some((*sb, *kb))
                        } else {
                            Some((*sa, *ka))
                        }
                    }
                    (Some(x), None) | (None, Some(x)) => Some(*x),
                    (None, None) => None,
                },
                _ => unreachable!(),
            })
            .collect();
    }
    level[0].map(|(_, k)| k)
}

/// Run the full distributed pipeline over an in-process transport.
pub fn run_distributed_sample<T: Scalar>(
    h: &HiddenStates<T>,
    w: &LmHeadWeights<T>,
    spec: &TransformSpec<T>,
    key: RngKey,
    world_size: usize,
) -> Result<(Vec<SampleResult<T>>, TransportStats)> {
    run_distributed_sample_with(h, w, spec, key, world_size, ReductionMode::Gather, false)
        .map(|(r, s, _)| (r, s))
}

/// As [`run_distributed_sample`], returning a per-message trace sorted by
/// `(row, rank)` for deterministic output.
pub fn run_distributed_sample_traced<T: Scalar>(
    h: &HiddenStates<T>,
    w: &LmHeadWeights<T>,
    spec: &TransformSpec<T>,
    key: RngKey,
    world_size: usize,
) -> Result<(Vec<SampleResult<T>>, TransportStats, Vec<MessageTrace>)> {
    run_distributed_sample_with(h, w, spec, key, world_size, ReductionMode::Gather, true)
}

pub fn run_distributed_sample_with<T: Scalar>(
    h: &HiddenStates<T>,
    w: &LmHeadWeights<T>,
    spec: &TransformSpec<T>,
    key: RngKey,
    world_size: usize,
    mode: ReductionMode,
    record_trace: bool,
) -> Result<(Vec<SampleResult<T>>, TransportStats, Vec<MessageTrace>)> {
    if h.dim() != w.dim() {
        return Err(Error::ShapeMismatch(format!(
            "hidden dim {} does not match weight dim {}",
            h.dim(),
            w.dim()
        )));
    }
    let layout = ShardLayout::new(w.vocab(), world_size)?;
    spec.validate_for(w.vocab())?;
    let batch = h.batch();

    // Ranks run concurrently; the channel is the only cross-rank path.
    let (tx, rx) = mpsc::channel::<Result<SummaryMessage<T>>>();
    std::thread::scope(|scope| {
        for rank in 0..world_size {
            let tx = tx.clone();
            scope.spawn(move || {
                let shard = layout.shard(rank);
                let w_shard = match WeightShard::new(w, &shard) {
                    Ok(v) => v,
                    Err(e) => {
                        let _ = tx.send(Err(e));
                        return;
                    }
                };
                for row in 0..batch {
                    let msg = rank_local_summary(&shard, &w_shard, h.row(row), spec, key, row);
                    if tx.send(msg).is_err() {
                        return;
                    }
                }
            });
        }
        drop(tx);
    });

    // Gather: bucket summaries by row, order within a row by rank.
    let mut inbox: Vec<Vec<Option<SummaryMessage<T>>>> = vec![vec![None; world_size]; batch];
    let mut stats = TransportStats {
        per_rank_bytes: vec![0; world_size],
        ..Default::default()
    };
    let mut trace = Vec::new();
    for received in rx {
        let msg = received?;
        if msg.payload_bytes != SUMMARY_PAYLOAD_BYTES {
            return Err(Error::Protocol(format!(
                "rank {} sent a {}-byte payload; summaries are fixed at {SUMMARY_PAYLOAD_BYTES}",
                msg.rank, msg.payload_bytes
            )));
        }
        stats.messages_sent += 1;
        stats.summary_bytes += msg.payload_bytes;
        stats.per_rank_bytes[msg.rank] += msg.payload_bytes;
        if record_trace {
            trace.push(MessageTrace {
                row: msg.row,
                rank: msg.rank,
                bytes: msg.payload_bytes,
                tag: "summary",
            });
        }
        let slot = &mut inbox[msg.row][msg.rank];
        if slot.is_some() {
            return Err(Error::Protocol(format!(
                "duplicate summary for row {} rank {}",
                msg.row, msg.rank
            )));
        }
        *slot = Some(msg);
    }

    let mut results = Vec::with_capacity(batch);
    for (row, slots) in inbox.into_iter().enumerate() {
        let messages: Vec<SummaryMessage<T>> = slots
            .into_iter()
            .enumerate()
            .map(|(rank, m)| {
                m.ok_or_else(|| Error::Protocol(format!("missing summary for row {row} rank {rank}")))
            })
            .collect::<Result<_>>()?;
        results.push(coordinator_select_with(&messages, key, row, &layout, mode)?);
        stats.broadcast_bytes += RESULT_BROADCAST_BYTES;
        if record_trace {
            trace.push(MessageTrace {
                row,
                rank: 0,
                bytes: RESULT_BROADCAST_BYTES,
                tag: "result",
            });
        }
    }
    trace.sort_by_key(|t| (t.row, t.rank, t.tag == "result"));
    Ok((results, stats, trace))
}

/// Per-row communication of a full-logits all-gather, for comparison: every
/// vocabulary entry crosses the wire once.
pub fn naive_gather_bytes_per_row(vocab: usize, bytes_per_element: u64) -> u64 {
    vocab as u64 * bytes_per_element
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fused::{fused_matmul_sample_at, TilingConfig};
    use crate::matrix::Matrix;
    use crate::synth;

    const KEY: RngKey = RngKey(0xD157_0000_0000_0005);
    const NEG_INF: f64 = f64::NEG_INFINITY;

    #[test]
    fn ranges_partition_vocabulary() {
        for (v, n) in [(10, 4), (16, 4), (7, 3), (5, 1), (2, 4), (3, 8)] {
            let layout = ShardLayout::new(v, n).unwrap();
            let mut covered = 0;
            for rank in 0..n {
                let r = layout.range(rank);
                assert_eq!(r.start, covered, "v={v} n={n} rank={rank}");
                covered = r.end;
            }
            assert_eq!(covered, v);
        }
        // Ragged remainder lands on the last rank when V >= n.
        let layout = ShardLayout::new(10, 4).unwrap();
        assert_eq!(layout.range(3), 6..10);
    }

    #[test]
    fn summary_payload_is_width_independent() {
        let spec = TransformSpec::identity();
        let mut sizes = Vec::new();
        for v in [1024usize, 65_536] {
            let w = synth::lm_head_weights::<f64>(3, v, 4);
            let h = synth::hidden_states::<f64>(4, 1, 4);
            let layout = ShardLayout::new(v, 4).unwrap();
            let shard = layout.shard(1);
            let w_shard = WeightShard::new(&w, &shard).unwrap();
            let msg = rank_local_summary(&shard, &w_shard, h.row(0), &spec, KEY, 0).unwrap();
            sizes.push(msg.payload_bytes);
        }
        assert_eq!(sizes[0], sizes[1]);
        assert_eq!(sizes[0], SUMMARY_PAYLOAD_BYTES);
    }

    #[test]
    fn masked_shard_reports_zero_mass() {
        let w = synth::lm_head_weights::<f64>(5, 12, 4);
        let h = synth::hidden_states::<f64>(6, 1, 4);
        let layout = ShardLayout::new(12, 3).unwrap();
        let shard = layout.shard(1); // covers 4..8
        let spec = TransformSpec::identity().with_banned(4..8);
        let w_shard = WeightShard::new(&w, &shard).unwrap();
        let msg = rank_local_summary(&shard, &w_shard, h.row(0), &spec, KEY, 0).unwrap();
        assert_eq!(msg.log_mass, NEG_INF);
        assert_eq!(msg.local_sample, None);
    }

    #[test]
    fn rank_sample_matches_fused_sampler_on_shard() {
        // The shard-local sample draws the same per-token stream as the fused
        // sampler restricted to the shard, so the indices agree pathwise.
        let (v, d) = (23, 6);
        let w = synth::lm_head_weights::<f64>(9, v, d);
        let h = synth::hidden_states::<f64>(10, 2, d);
        let spec = TransformSpec::new(0.8).unwrap();
        let layout = ShardLayout::new(v, 3).unwrap();
        for rank in 0..3 {
            let shard = layout.shard(rank);
            let range = shard.vocab_range.clone();
            let w_shard = WeightShard::new(&w, &shard).unwrap();

            let shard_rows: Vec<f64> = range.clone().flat_map(|i| w.row(i).to_vec()).collect();
            let w_sub = LmHeadWeights::new(
                Matrix::new(range.len(), d, shard_rows).unwrap(),
                crate::matrix::ElementPrecision::Full,
            )
            .unwrap();
            let (fused, _) = fused_matmul_sample_at(
                &h,
                &w_sub,
                &spec,
                KEY,
                &TilingConfig::new(5, 1, 3).unwrap(),
                range.start,
                0,
            )
            .unwrap();

            for (row, fused_sample) in fused.iter().enumerate() {
                let msg = rank_local_summary(&shard, &w_shard, h.row(row), &spec, KEY, row).unwrap();
                assert_eq!(range.start + msg.local_sample.unwrap(), fused_sample.index);
            }
        }
    }

    #[test]
    fn coordinator_maps_winner_to_global_index() {
        let layout = ShardLayout::new(12, 3).unwrap();
        let make = |rank: usize, log_mass: f64, local: Option<usize>| SummaryMessage {
            rank,
            row: 0,
            log_mass,
            local_sample: local,
            payload_bytes: SUMMARY_PAYLOAD_BYTES,
        };
        // Only shard 0 has mass; it must win.
        let messages = vec![make(0, 0.0, Some(2)), make(1, NEG_INF, None), make(2, NEG_INF, None)];
        for seed in 0..32 {
            let got = coordinator_select(&messages, RngKey(seed), 0, &layout).unwrap();
            assert_eq!(got.index, 2);
        }
        // Winner on shard 2 maps past both earlier ranges.
        let messages = vec![make(0, NEG_INF, None), make(1, NEG_INF, None), make(2, 0.0, Some(3))];
        let got = coordinator_select(&messages, KEY, 0, &layout).unwrap();
        assert_eq!(got.index, 8 + 3);

        let all_empty = vec![make(0, NEG_INF, None), make(1, NEG_INF, None), make(2, NEG_INF, None)];
        assert!(matches!(
            coordinator_select(&all_empty, KEY, 0, &layout),
            Err(Error::UndefinedDistribution(_))
        ));
    }

    #[test]
    fn single_rank_passes_sample_through() {
        let layout = ShardLayout::new(8, 1).unwrap();
        let messages = vec![SummaryMessage {
            rank: 0,
            row: 0,
            log_mass: 1.5f64,
            local_sample: Some(5),
            payload_bytes: SUMMARY_PAYLOAD_BYTES,
        }];
        let got = coordinator_select(&messages, KEY, 0, &layout).unwrap();
        assert_eq!(got.index, 5);
        assert!((got.log_normalizer.unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn equal_mass_shards_win_evenly() {
        let layout = ShardLayout::new(2, 2).unwrap();
        let make = |rank: usize| SummaryMessage {
            rank,
            row: 0,
            log_mass: 0.7,
            local_sample: Some(0),
            payload_bytes: SUMMARY_PAYLOAD_BYTES,
        };
        let messages = vec![make(0), make(1)];
        let n = 5000usize;
        let mut counts = [0u64; 2];
        for row in 0..n {
            let got = coordinator_select(&messages, KEY, row, &layout).unwrap();
            counts[got.index] += 1;
        }
        let report = crate::statcheck::chi_squared_gof(&counts, &[0.5, 0.5], 0.01).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn tree_reduction_agrees_with_gather() {
        let spec = TransformSpec::identity();
        let w = synth::lm_head_weights::<f64>(15, 37, 8);
        let h = synth::hidden_states::<f64>(16, 4, 8);
        for n in [1usize, 2, 3, 5, 8] {
            let (gather, _, _) =
                run_distributed_sample_with(&h, &w, &spec, KEY, n, ReductionMode::Gather, false)
                    .unwrap();
            let (tree, _, _) =
                run_distributed_sample_with(&h, &w, &spec, KEY, n, ReductionMode::Tree, false)
                    .unwrap();
            let a: Vec<usize> = gather.iter().map(|s| s.index).collect();
            let b: Vec<usize> = tree.iter().map(|s| s.index).collect();
            assert_eq!(a, b, "n={n}");
        }
    }

    #[test]
    fn transport_bytes_scale_with_ranks_not_vocab() {
        let spec = TransformSpec::identity();
        let rows = 3usize;
        let n = 4usize;
        let mut totals = Vec::new();
        for v in [64usize, 512, 4096] {
            let w = synth::lm_head_weights::<f64>(21, v, 4);
            let h = synth::hidden_states::<f64>(22, rows, 4);
            let (_, stats) = run_distributed_sample(&h, &w, &spec, KEY, n).unwrap();
            assert_eq!(stats.messages_sent, (rows * n) as u64);
            assert_eq!(stats.summary_bytes, (rows * n) as u64 * SUMMARY_PAYLOAD_BYTES);
            assert_eq!(stats.broadcast_bytes, rows as u64 * RESULT_BROADCAST_BYTES);
            totals.push(stats.total_bytes());
        }
        assert!(totals.windows(2).all(|w| w[0] == w[1]), "{totals:?}");
    }

    #[test]
    fn trace_is_deterministic_and_ordered() {
        let spec = TransformSpec::identity();
        let w = synth::lm_head_weights::<f64>(5, 16, 4);
        let h = synth::hidden_states::<f64>(6, 2, 4);
        let (_, _, trace_a) = run_distributed_sample_traced(&h, &w, &spec, KEY, 4).unwrap();
        let (_, _, trace_b) = run_distributed_sample_traced(&h, &w, &spec, KEY, 4).unwrap();
        assert_eq!(trace_a, trace_b);
        assert_eq!(trace_a.len(), 2 * 4 + 2); // summaries + one result per row
    }

    #[test]
    fn shard_logits_concatenate_to_full_row() {
        // Same blocked kernel on shard rows must agree bitwise with the full
        // GEMM restricted to those rows.
        let (v, d) = (19, 7);
        let w = synth::lm_head_weights::<f64>(31, v, d);
        let h = synth::hidden_states::<f64>(32, 1, d);
        let full = crate::fused::blocked_matmul_tile(h.matrix(), 0..1, w.matrix(), 0..v, 3).unwrap();
        let layout = ShardLayout::new(v, 4).unwrap();
        for rank in 0..4 {
            let range = layout.range(rank);
            let shard_acc =
                crate::fused::blocked_matmul_tile(h.matrix(), 0..1, w.matrix(), range.clone(), 3)
                    .unwrap();
            for (local, global) in range.enumerate() {
                assert_eq!(shard_acc.get(0, local), full.get(0, global));
            }
        }
    }

    #[test]
    fn rejects_zero_world_or_empty_vocab() {
        assert!(ShardLayout::new(8, 0).is_err());
        assert!(ShardLayout::new(0, 2).is_err());
    }

    #[test]
    fn coordinator_enforces_the_message_protocol() {
        let layout = ShardLayout::new(8, 2).unwrap();
        let good = |rank: usize| SummaryMessage {
            rank,
            row: 0,
            log_mass: 0.0f64,
            local_sample: Some(0),
            payload_bytes: SUMMARY_PAYLOAD_BYTES,
        };

        // Wrong summary count.
        assert!(matches!(
            coordinator_select(&[good(0)], KEY, 0, &layout),
            Err(Error::Protocol(_))
        ));
        // Ranks out of order.
        assert!(matches!(
            coordinator_select(&[good(1), good(0)], KEY, 0, &layout),
            Err(Error::Protocol(_))
        ));
        // Shard-width-dependent payload.
        let mut oversized = good(1);
        oversized.payload_bytes = 1024;
        assert!(matches!(
            coordinator_select(&[good(0), oversized], KEY, 0, &layout),
            Err(Error::Protocol(_))
        ));
    }
}
