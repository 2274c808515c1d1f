//! Hierarchical group sampling.
//!
//! A row is split into contiguous groups; each group contributes its log-mass
//! `L_k = logsumexp` of its transformed logits and an exact within-group
//! sample. Sampling the group from the logits `{L_k}` and then returning the
//! winner's local sample reproduces the full categorical exactly. The online
//! variant streams groups with O(group) working memory, folding each new group
//! in with a Bernoulli replacement draw of probability `exp(L_k - L_new)`.

use crate::error::{Error, Result};
use crate::rng::{derive_uniform, gumbel_at, RngKey, StreamIndex, UniformOpen01};
use crate::samplers::{apply_transform, logsumexp, LogitsRow, SampleResult, TransformSpec};
use crate::scalar::{from_f64, Scalar};

/// One group's contribution: log-mass and, when the mass is nonzero, an exact
/// group-local sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupSummary<T> {
    pub group_id: usize,
    /// `logsumexp` of the group's transformed logits; -inf for zero mass.
    pub log_mass: T,
    /// Group-local index of the sample, present iff `log_mass` is finite.
    pub local_sample: Option<usize>,
}

/// Running state of the streaming variant: the union's log-mass and the
/// current sample (global index), absent until a nonzero-mass group arrives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineState<T> {
    pub running_log_mass: T,
    pub current_sample: Option<usize>,
}

impl<T: Scalar> OnlineState<T> {
    pub fn empty() -> Self {
        OnlineState {
            running_log_mass: T::neg_infinity(),
            current_sample: None,
        }
    }
}

/// Peak working-set report for the streaming variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OnlineMemoryStats {
    /// Largest number of transformed logits held at once (one group).
    pub peak_group_scalars: usize,
    /// Scalars of carried state (running log-mass plus current sample).
    pub state_scalars: usize,
}

/// Gumbel-argmax over a slice of transformed logits, with noise addressed at
/// `global_offset + j`. Ties break toward the smaller index.
fn gumbel_argmax_in<T: Scalar>(
    transformed: &[T],
    key: RngKey,
    row: usize,
    global_offset: usize,
) -> Result<Option<usize>> {
    let mut best = T::neg_infinity();
    let mut best_local: Option<usize> = None;
    for (j, &y) in transformed.iter().enumerate() {
        if y == T::neg_infinity() {
            continue;
        }
        if y.is_nan() || y == T::infinity() {
            return Err(Error::InvalidLogit(format!(
                "entry {} is {y}",
                global_offset + j
            )));
        }
        let score = y + gumbel_at::<T>(key, StreamIndex::gumbel(row, global_offset + j))?;
        if best_local.is_none() || score > best {
            best = score;
            best_local = Some(j);
        }
    }
    Ok(best_local)
}

/// Summarize one group of already-transformed logits. Noise positions are
/// offset to global indices so disjoint groups draw disjoint streams.
pub fn group_summary<T: Scalar>(
    group_logits: &[T],
    key: RngKey,
    row: usize,
    group_id: usize,
    global_offset: usize,
) -> Result<GroupSummary<T>> {
    let log_mass = logsumexp(group_logits);
    if log_mass == T::neg_infinity() {
        return Ok(GroupSummary {
            group_id,
            log_mass,
            local_sample: None,
        });
    }
    let local_sample = gumbel_argmax_in(group_logits, key, row, global_offset)?;
    Ok(GroupSummary {
        group_id,
        log_mass,
        local_sample,
    })
}

fn group_ranges(v: usize, group_size: usize) -> impl Iterator<Item = (usize, std::ops::Range<usize>)> {
    (0..v.div_ceil(group_size)).map(move |k| (k, k * group_size..((k + 1) * group_size).min(v)))
}

/// Group sampling with all groups summarized independently (conceptually in
/// parallel), then one fresh Gumbel-argmax over the group log-masses.
/// Zero-mass groups never enter the outer argmax.
pub fn parallel_group_sample<T: Scalar>(
    logits: &LogitsRow<T>,
    spec: &TransformSpec<T>,
    key: RngKey,
    row: usize,
    group_size: usize,
) -> Result<SampleResult<T>> {
    if group_size == 0 {
        return Err(Error::InvalidParameter("group size must be at least 1".into()));
    }
    let transformed = apply_transform(logits, spec)?;
    let values = transformed.values();

    let mut summaries = Vec::with_capacity(values.len().div_ceil(group_size));
    for (k, range) in group_ranges(values.len(), group_size) {
        summaries.push(group_summary(&values[range.clone()], key, row, k, range.start)?);
    }

    let mut best = T::neg_infinity();
    let mut winner: Option<&GroupSummary<T>> = None;
    for s in &summaries {
        if s.log_mass == T::neg_infinity() {
            continue;
        }
        let score =
            s.log_mass + gumbel_from_outer::<T>(key, row, s.group_id);
        if winner.is_none() || score > best {
            best = score;
            winner = Some(s);
        }
    }
    // apply_transform guarantees at least one finite logit, hence one
    // nonzero-mass group.
    let winner = winner.expect("at least one group has mass");
    let local = winner.local_sample.expect("finite mass implies a sample");
    let masses: Vec<T> = summaries.iter().map(|s| s.log_mass).collect();
    Ok(SampleResult {
        index: winner.group_id * group_size + local,
        log_normalizer: Some(logsumexp(&masses)),
    })
}

fn gumbel_from_outer<T: Scalar>(key: RngKey, row: usize, ordinal: usize) -> T {
    let u = derive_uniform(key, StreamIndex::outer_group(row, ordinal));
    crate::rng::gumbel_from_uniform(u)
}

/// Fold one nonzero-mass group into the running state. An empty state adopts
/// the group unconditionally; otherwise the group replaces the current sample
/// with probability `exp(log_mass - merged_log_mass)`.
pub fn online_merge<T: Scalar>(
    state: OnlineState<T>,
    summary: &GroupSummary<T>,
    global_offset: usize,
    u: UniformOpen01,
) -> OnlineState<T> {
    if summary.log_mass == T::neg_infinity() {
        return state; // zero-mass group adds nothing
    }
    let incoming = summary
        .local_sample
        .map(|z| global_offset + z)
        .expect("finite mass implies a sample");
    if state.current_sample.is_none() {
        return OnlineState {
            running_log_mass: summary.log_mass,
            current_sample: Some(incoming),
        };
    }
    let merged = logsumexp(&[state.running_log_mass, summary.log_mass]);
    let p_replace = (summary.log_mass - merged).exp();
    let replace = from_f64::<T>(u.value()) < p_replace;
    OnlineState {
        running_log_mass: merged,
        current_sample: if replace { Some(incoming) } else { state.current_sample },
    }
}

/// Streaming group sampling with O(group) working memory: only the running
/// state and a single group's transformed logits are live at any point.
/// The log-normalizer in the result equals `logsumexp` of the whole row.
pub fn online_group_sample<T: Scalar>(
    logits: &LogitsRow<T>,
    spec: &TransformSpec<T>,
    key: RngKey,
    row: usize,
    group_size: usize,
) -> Result<SampleResult<T>> {
    online_group_sample_with_stats(logits, spec, key, row, group_size).map(|(r, _)| r)
}

/// Instrumented variant reporting the peak working set.
pub fn online_group_sample_with_stats<T: Scalar>(
    logits: &LogitsRow<T>,
    spec: &TransformSpec<T>,
    key: RngKey,
    row: usize,
    group_size: usize,
) -> Result<(SampleResult<T>, OnlineMemoryStats)> {
    if group_size == 0 {
        return Err(Error::InvalidParameter("group size must be at least 1".into()));
    }
    let v = logits.len();
    spec.validate_for(v)?;

    let capacity = group_size.min(v.max(1));
    let mut group_buf: Vec<T> = Vec::with_capacity(capacity);
    let mut state = OnlineState::empty();
    let mut peak = 0usize;

    for (k, range) in group_ranges(v, group_size) {
        group_buf.clear();
        for i in range.clone() {
            let y = spec.apply(logits.values()[i], i);
            if y.is_nan() || y == T::infinity() {
                return Err(Error::InvalidLogit(format!("transform produced {y} at index {i}")));
            }
            group_buf.push(y);
        }
        peak = peak.max(group_buf.len());

        let log_mass = logsumexp(&group_buf);
        if log_mass == T::neg_infinity() {
            continue; // skipped entirely; no counters consumed
        }

        if state.current_sample.is_none() {
            // First nonzero-mass group seeds the state; its merge-Bernoulli
            // counter position is skipped, not reused.
            let local = gumbel_argmax_in(&group_buf, key, row, range.start)?
                .expect("finite mass implies a sample");
            state = OnlineState {
                running_log_mass: log_mass,
                current_sample: Some(range.start + local),
            };
            continue;
        }

        let merged = logsumexp(&[state.running_log_mass, log_mass]);
        let u = derive_uniform(key, StreamIndex::merge_bernoulli(row, k));
        if from_f64::<T>(u.value()) < (log_mass - merged).exp() {
            // Only the winning group's per-token noise is ever evaluated.
            let local = gumbel_argmax_in(&group_buf, key, row, range.start)?
                .expect("finite mass implies a sample");
            state.current_sample = Some(range.start + local);
        }
        state.running_log_mass = merged;
    }

    match state.current_sample {
        Some(index) => Ok((
            SampleResult {
                index,
                log_normalizer: Some(state.running_log_mass),
            },
            OnlineMemoryStats {
                peak_group_scalars: peak,
                state_scalars: 2,
            },
        )),
        None => Err(Error::UndefinedDistribution(
            "row has no finite logit after transform".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::exact_probabilities;

    const KEY: RngKey = RngKey(0x6E0C_0DE5_0000_0004);
    const NEG_INF: f64 = f64::NEG_INFINITY;

    fn row(values: &[f64]) -> LogitsRow<f64> {
        LogitsRow::new(values.to_vec()).unwrap()
    }

    #[test]
    fn summary_log_mass_and_zero_mass_groups() {
        let s = group_summary(&[0.0, 0.0], KEY, 0, 0, 0).unwrap();
        assert!((s.log_mass - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(s.local_sample.is_some());

        let s = group_summary(&[NEG_INF, NEG_INF], KEY, 0, 1, 2).unwrap();
        assert_eq!(s.log_mass, NEG_INF);
        assert_eq!(s.local_sample, None);
    }

    #[test]
    fn summary_sample_frequencies_follow_group_softmax() {
        // Group [ln 1, ln 3]: local probabilities [0.25, 0.75].
        let group = [1f64.ln(), 3f64.ln()];
        let n = 5000usize;
        let mut counts = [0u64; 2];
        for trial in 0..n {
            let s = group_summary(&group, RngKey(trial as u64), 0, 0, 0).unwrap();
            counts[s.local_sample.unwrap()] += 1;
        }
        let report = crate::statcheck::chi_squared_gof(&counts, &[0.25, 0.75], 0.01).unwrap();
        assert!(report.pass, "{report:?}");
    }

    #[test]
    fn merge_probability_reference_points() {
        // Equal masses: replacement probability one half.
        let state = OnlineState {
            running_log_mass: 1.3,
            current_sample: Some(0),
        };
        let s = GroupSummary {
            group_id: 1,
            log_mass: 1.3,
            local_sample: Some(2),
        };
        let merged = online_merge(state, &s, 10, UniformOpen01::new(0.4).unwrap());
        assert_eq!(merged.current_sample, Some(12)); // u = 0.4 < 0.5 replaces
        assert!((merged.running_log_mass - (1.3 + std::f64::consts::LN_2)).abs() < 1e-14);

        // L_run = 0, L_k = ln 3: replacement probability 3/4.
        let state = OnlineState {
            running_log_mass: 0.0,
            current_sample: Some(5),
        };
        let s = GroupSummary {
            group_id: 2,
            log_mass: 3f64.ln(),
            local_sample: Some(0),
        };
        let merged_mass = logsumexp(&[0.0, 3f64.ln()]);
        let p = (3f64.ln() - merged_mass).exp();
        assert!((p - 0.75).abs() < 1e-14);
        let kept = online_merge(state, &s, 20, UniformOpen01::new(0.76).unwrap());
        assert_eq!(kept.current_sample, Some(5));
        let replaced = online_merge(state, &s, 20, UniformOpen01::new(0.74).unwrap());
        assert_eq!(replaced.current_sample, Some(20));
    }

    #[test]
    fn merge_with_negligible_mass_keeps_current_sample() {
        let state = OnlineState {
            running_log_mass: 0.0,
            current_sample: Some(1),
        };
        let s = GroupSummary {
            group_id: 3,
            log_mass: -20.0,
            local_sample: Some(0),
        };
        // Direct evaluation: p = e^-20 / (1 + e^-20).
        let p_expected = (-20f64).exp() / (1.0 + (-20f64).exp());
        let merged_mass: f64 = logsumexp(&[0.0, -20.0]);
        let p = (-20.0f64 - merged_mass).exp();
        assert!((p - p_expected).abs() < 1e-22);
        let out = online_merge(state, &s, 30, UniformOpen01::new(0.5).unwrap());
        assert_eq!(out.current_sample, Some(1));
        assert!((out.running_log_mass - merged_mass).abs() < 1e-15);
    }

    #[test]
    fn merge_initializes_empty_state_unconditionally() {
        let s = GroupSummary {
            group_id: 0,
            log_mass: -3.0,
            local_sample: Some(1),
        };
        // Even u near 1 cannot reject the first group.
        let out = online_merge(OnlineState::empty(), &s, 4, UniformOpen01::new(0.999).unwrap());
        assert_eq!(out.current_sample, Some(5));
        assert_eq!(out.running_log_mass, -3.0);
    }

    #[test]
    fn online_single_group_returns_its_sample() {
        let r = row(&[NEG_INF, NEG_INF, 0.4, 1.1]);
        let spec = TransformSpec::identity();
        let (got, _) = online_group_sample_with_stats(&r, &spec, KEY, 0, 2).unwrap();
        // Only group 1 has mass; its sample must be one of indices 2, 3.
        assert!(got.index == 2 || got.index == 3);
    }

    #[test]
    fn online_log_normalizer_matches_row_logsumexp() {
        let r = row(&[0.1, -2.0, 3.0, 0.7, NEG_INF, 1.9, -0.3]);
        let spec = TransformSpec::new(0.7).unwrap().with_banned([2]);
        let expected = logsumexp(apply_transform(&r, &spec).unwrap().values());
        for g in [1usize, 2, 3, 7, 100] {
            let got = online_group_sample(&r, &spec, KEY, 0, g).unwrap();
            let lz = got.log_normalizer.unwrap();
            assert!(
                ((lz - expected) / expected.abs().max(1.0)).abs() < 1e-10,
                "g={g}: {lz} vs {expected}"
            );
        }
    }

    #[test]
    fn online_working_set_is_one_group() {
        let r = row(&(0..128).map(|i| (i as f64) * 0.01).collect::<Vec<_>>());
        let spec = TransformSpec::identity();
        for g in [1usize, 8, 32] {
            let (_, stats) = online_group_sample_with_stats(&r, &spec, KEY, 0, g).unwrap();
            assert_eq!(stats.peak_group_scalars, g);
            assert_eq!(stats.state_scalars, 2);
        }
    }

    #[test]
    fn grouped_frequencies_match_exact_probabilities() {
        // Row [ln 1, ln 2, ln 3, ln 4] has probabilities [0.1, 0.2, 0.3, 0.4].
        let r = row(&[1f64.ln(), 2f64.ln(), 3f64.ln(), 4f64.ln()]);
        let spec = TransformSpec::identity();
        let probs = [0.1, 0.2, 0.3, 0.4];
        let n = 10_000usize;

        let mut parallel_counts = [0u64; 4];
        let mut online_counts = [0u64; 4];
        for trial in 0..n {
            let p = parallel_group_sample(&r, &spec, KEY, trial, 2).unwrap();
            parallel_counts[p.index] += 1;
            let o = online_group_sample(&r, &spec, KEY, trial, 2).unwrap();
            online_counts[o.index] += 1;
        }
        let p_report = crate::statcheck::chi_squared_gof(&parallel_counts, &probs, 0.01).unwrap();
        assert!(p_report.pass, "parallel: {p_report:?}");
        let o_report = crate::statcheck::chi_squared_gof(&online_counts, &probs, 0.01).unwrap();
        assert!(o_report.pass, "online: {o_report:?}");
    }

    #[test]
    fn degenerate_groupings_match_plain_gumbel_max() {
        // g = V is one group; g = 1 makes the outer argmax the row argmax.
        let r = row(&[0.2, 1.4, -0.5, 0.9, 0.0]);
        let spec = TransformSpec::identity();
        let probs: Vec<f64> = exact_probabilities(&apply_transform(&r, &spec).unwrap()).unwrap();
        let n = 5000usize;
        for g in [5usize, 1] {
            let mut counts = vec![0u64; 5];
            for trial in 0..n {
                let s = parallel_group_sample(&r, &spec, KEY, trial, g).unwrap();
                counts[s.index] += 1;
            }
            let report = crate::statcheck::chi_squared_gof(&counts, &probs, 0.01).unwrap();
            assert!(report.pass, "g={g}: {report:?}");
        }
    }

    #[test]
    fn group_mass_additivity() {
        let r = row(&[0.3, -1.0, 2.2, NEG_INF, 0.9, -0.2, 1.5]);
        let spec = TransformSpec::identity();
        let transformed = apply_transform(&r, &spec).unwrap();
        let full = logsumexp(transformed.values());
        for g in [1usize, 2, 3, 7] {
            let masses: Vec<f64> = group_ranges(r.len(), g)
                .map(|(k, range)| {
                    group_summary(&transformed.values()[range.clone()], KEY, 0, k, range.start)
                        .unwrap()
                        .log_mass
                })
                .collect();
            let combined = logsumexp(&masses);
            assert!(((combined - full) / full.abs().max(1.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn all_masked_row_is_rejected() {
        let r = row(&[NEG_INF, NEG_INF]);
        let spec = TransformSpec::identity();
        assert!(matches!(
            parallel_group_sample(&r, &spec, KEY, 0, 1),
            Err(Error::UndefinedDistribution(_))
        ));
        assert!(matches!(
            online_group_sample(&r, &spec, KEY, 0, 1),
            Err(Error::UndefinedDistribution(_))
        ));
    }
}
