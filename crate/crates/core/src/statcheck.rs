//! Statistical verification machinery.
//!
//! Chi-squared goodness-of-fit against exact probabilities, a pathwise
//! equivalence harness comparing the fused sampler to a materialized-row
//! oracle, and a Monte-Carlo check that group maxima follow a shifted
//! standard Gumbel law. Thresholds come from the regularized incomplete
//! gamma function (series plus continued fraction), not tables, so any
//! post-merge degrees of freedom work.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fused::{fused_matmul_sample, fused_matmul_sample_at, TilingConfig};
use crate::matrix::{HiddenStates, LmHeadWeights};
use crate::rng::{gumbel_at, RngKey, StreamIndex};
use crate::samplers::{
    apply_transform, exact_probabilities, materialized_sample, streaming_gumbel_max, LogitsRow,
    SampleResult, TransformSpec,
};
use crate::scalar::{to_f64, Scalar};

pub mod gamma {
    //! Log-gamma, the regularized lower incomplete gamma function, and the
    //! chi-squared quantile built on them.

    /// Lanczos approximation (g = 7, 9 coefficients), accurate to ~1e-13 for
    /// positive arguments.
    pub fn ln_gamma(x: f64) -> f64 {
        // Published coefficient set, kept at full printed precision.
        #[allow(clippy::excessive_precision)]
        const COEFFS: [f64; 9] = [
            0.999_999_999_999_809_93,
            676.520_368_121_885_1,
            -1_259.139_216_722_402_8,
            771.323_428_777_653_13,
            -176.615_029_162_140_59,
            12.507_343_278_686_905,
            -0.138_571_095_265_720_12,
            9.984_369_578_019_571_6e-6,
            1.505_632_735_149_311_6e-7,
        ];
        if x < 0.5 {
            // Reflection for small arguments.
            let pi = std::f64::consts::PI;
            return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
        }
        let x = x - 1.0;
        let mut acc = COEFFS[0];
        for (i, &c) in COEFFS.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        let t = x + 7.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }

    /// Regularized lower incomplete gamma `P(a, x)`: series expansion for
    /// `x < a + 1`, continued fraction (modified Lentz) otherwise.
    pub fn gamma_p(a: f64, x: f64) -> f64 {
        assert!(a > 0.0 && x >= 0.0, "gamma_p domain: a={a}, x={x}");
        if x == 0.0 {
            return 0.0;
        }
        let log_prefactor = a * x.ln() - x - ln_gamma(a);
        if x < a + 1.0 {
            // Series: P(a,x) = x^a e^-x / Gamma(a) * sum x^n / (a)_(n+1).
            let mut term = 1.0 / a;
            let mut sum = term;
            let mut n = 1.0;
            while term.abs() > sum.abs() * 1e-16 {
                term *= x / (a + n);
                sum += term;
                n += 1.0;
                if n > 10_000.0 {
                    break;
                }
            }
            (log_prefactor.exp() * sum).min(1.0)
        } else {
            // Continued fraction for Q(a,x); P = 1 - Q.
            const TINY: f64 = 1e-300;
            let mut b = x + 1.0 - a;
            let mut c = 1.0 / TINY;
            let mut d = 1.0 / b;
            let mut h = d;
            let mut i = 1.0;
            loop {
                let an = -i * (i - a);
                b += 2.0;
                d = an * d + b;
                if d.abs() < TINY {
                    d = TINY;
                }
                c = b + an / c;
                if c.abs() < TINY {
                    c = TINY;
                }
                d = 1.0 / d;
                let delta = d * c;
                h *= delta;
                if (delta - 1.0).abs() < 1e-16 || i > 10_000.0 {
                    break;
                }
                i += 1.0;
            }
            (1.0 - log_prefactor.exp() * h).clamp(0.0, 1.0)
        }
    }

    /// CDF of the chi-squared distribution with `dof` degrees of freedom.
    pub fn chi2_cdf(x: f64, dof: usize) -> f64 {
        assert!(dof > 0);
        if x <= 0.0 {
            return 0.0;
        }
        gamma_p(dof as f64 / 2.0, x / 2.0)
    }

    /// Quantile of the chi-squared distribution by bisection on the CDF;
    /// monotonicity makes this robust for any degrees of freedom.
    pub fn chi2_quantile(p: f64, dof: usize) -> f64 {
        assert!((0.0..1.0).contains(&p), "quantile needs p in [0,1), got {p}");
        assert!(dof > 0);
        if p == 0.0 {
            return 0.0;
        }
        let mut hi = dof as f64 + 10.0;
        while chi2_cdf(hi, dof) < p {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if chi2_cdf(mid, dof) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[cfg(test)]
    mod tests {
        use super::*;

        #[test]
        fn ln_gamma_reference_values() {
            // Gamma(n) = (n-1)! and Gamma(1/2) = sqrt(pi).
            assert!((ln_gamma(1.0)).abs() < 1e-12);
            assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
            assert!((ln_gamma(0.5) - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-12);
        }

        #[test]
        fn gamma_p_complements() {
            // dof=2 has closed form: P(1, x/2) = 1 - e^{-x/2}.
            for x in [0.1, 1.0, 3.0, 10.0] {
                let want = 1.0 - (-x / 2.0f64).exp();
                assert!((chi2_cdf(x, 2) - want).abs() < 1e-12, "x={x}");
            }
        }

        #[test]
        fn quantiles_match_standard_tables() {
            // (dof, p, value) from standard chi-squared tables.
            let cases = [
                (1, 0.95, 3.841),
                (2, 0.95, 5.991),
                (5, 0.99, 15.086),
                (7, 0.99, 18.475),
                (10, 0.95, 18.307),
                (127, 0.99, 166.987),
            ];
            for (dof, p, want) in cases {
                let got = chi2_quantile(p, dof);
                assert!((got - want).abs() < 2e-3, "dof={dof} p={p}: got {got}, want {want}");
            }
        }

        #[test]
        fn quantile_inverts_cdf() {
            for dof in [1usize, 3, 8, 50] {
                for p in [0.5, 0.9, 0.99, 0.999] {
                    let x = chi2_quantile(p, dof);
                    assert!((chi2_cdf(x, dof) - p).abs() < 1e-10);
                }
            }
        }
    }
}

/// Outcome of one goodness-of-fit test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofReport {
    pub statistic: f64,
    /// Degrees of freedom after merging: merged bins minus one.
    pub dof: usize,
    /// Acceptance threshold: the chi-squared quantile at `1 - alpha`.
    pub threshold: f64,
    pub alpha: f64,
    pub pass: bool,
    /// Bin count after folding low-expectation bins together.
    pub merged_bins: usize,
    pub samples: u64,
    /// Observations that landed on zero-probability categories. Any such hit
    /// fails the check regardless of the statistic.
    pub support_violations: u64,
}

/// Pearson chi-squared goodness-of-fit. Adjacent bins are folded together
/// until each merged bin expects at least five observations, the standard
/// validity rule for the asymptotic distribution.
///
/// ```
/// use gemmsample::statcheck::chi_squared_gof;
///
/// let report = chi_squared_gof(&[30, 70], &[0.5, 0.5], 0.01).unwrap();
/// assert_eq!(report.statistic, 16.0);
/// assert!(!report.pass); // far beyond the dof-1 threshold of 6.635
/// ```
pub fn chi_squared_gof(counts: &[u64], probs: &[f64], alpha: f64) -> Result<GofReport> {
    if counts.len() != probs.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} counts vs {} probabilities",
            counts.len(),
            probs.len()
        )));
    }
    if counts.is_empty() {
        return Err(Error::InvalidParameter("empty histogram".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha {alpha} outside (0,1)")));
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::InvalidParameter("no samples".into()));
    }
    let prob_total: f64 = probs.iter().sum();
    if probs.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p)) || (prob_total - 1.0).abs() > 1e-4 {
        return Err(Error::InvalidParameter(format!(
            "probabilities must be a distribution (sum {prob_total})"
        )));
    }

    // Merge left to right: close a bin once it expects >= 5; fold any
    // remainder into the last closed bin.
    let nf = n as f64;
    let mut merged: Vec<(f64, f64)> = Vec::new(); // (observed, expected)
    let mut acc_obs = 0.0;
    let mut acc_exp = 0.0;
    for (&c, &p) in counts.iter().zip(probs) {
        acc_obs += c as f64;
        acc_exp += p / prob_total * nf;
        if acc_exp >= 5.0 {
            merged.push((acc_obs, acc_exp));
            acc_obs = 0.0;
            acc_exp = 0.0;
        }
    }
    if acc_exp > 0.0 || acc_obs > 0.0 {
        if let Some(last) = merged.last_mut() {
            last.0 += acc_obs;
            last.1 += acc_exp;
        } else {
            merged.push((acc_obs, acc_exp));
        }
    }

    let merged_bins = merged.len();
    let statistic: f64 = merged
        .iter()
        .filter(|(_, e)| *e > 0.0)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let dof = merged_bins.saturating_sub(1);
    let threshold = if dof == 0 {
        0.0 // single-bin histogram always fits itself
    } else {
        gamma::chi2_quantile(1.0 - alpha, dof)
    };
    Ok(GofReport {
        statistic,
        dof,
        threshold,
        alpha,
        pass: statistic <= threshold,
        merged_bins,
        samples: n,
        support_violations: 0,
    })
}

/// A sampler that can draw one category for a given row index. Row indices
/// address independent counter-based streams, so distinct rows under one key
/// are independent trials.
pub trait RowSampler<T: Scalar>: Sync {
    fn name(&self) -> &'static str;

    fn sample_row(
        &self,
        logits: &LogitsRow<T>,
        spec: &TransformSpec<T>,
        key: RngKey,
        row: usize,
    ) -> Result<SampleResult<T>>;

    /// Draw `n` samples at row indices `0..n`. The default parallelizes over
    /// rows; batch-oriented samplers override it with one batched run.
    fn sample_rows(
        &self,
        logits: &LogitsRow<T>,
        spec: &TransformSpec<T>,
        key: RngKey,
        n: usize,
    ) -> Result<Vec<usize>> {
        (0..n)
            .into_par_iter()
            .map(|row| self.sample_row(logits, spec, key, row).map(|s| s.index))
            .collect()
    }
}

/// Materialized softmax/prefix-sum baseline.
pub struct BaselineSampler;

impl<T: Scalar> RowSampler<T> for BaselineSampler {
    fn name(&self) -> &'static str {
        "baseline"
    }

    fn sample_row(
        &self,
        logits: &LogitsRow<T>,
        spec: &TransformSpec<T>,
        key: RngKey,
        row: usize,
    ) -> Result<SampleResult<T>> {
        materialized_sample(logits, spec, key, row)
    }
}

/// Single-pass streaming Gumbel-argmax.
pub struct StreamingSampler;

impl<T: Scalar> RowSampler<T> for StreamingSampler {
    fn name(&self) -> &'static str {
        "streaming"
    }

    fn sample_row(
        &self,
        logits: &LogitsRow<T>,
        spec: &TransformSpec<T>,
        key: RngKey,
        row: usize,
    ) -> Result<SampleResult<T>> {
        streaming_gumbel_max(logits, spec, key, row)
    }
}

/// Fused tiled sampler driven through a `V x 1` weight embedding of the row.
pub struct FusedSampler {
    pub tiling: TilingConfig,
}

fn row_as_workload<T: Scalar>(
    logits: &LogitsRow<T>,
    rows: usize,
) -> Result<(HiddenStates<T>, LmHeadWeights<T>)> {
    // With D = 1 and unit hidden states, H W^T reproduces the row bitwise.
    let h = HiddenStates::from_vec(rows, 1, vec![T::one(); rows])?;
    let w = LmHeadWeights::from_vec(logits.len(), 1, logits.values().to_vec())?;
    Ok((h, w))
}

impl<T: Scalar> RowSampler<T> for FusedSampler {
    fn name(&self) -> &'static str {
        "fused"
    }

    fn sample_row(
        &self,
        logits: &LogitsRow<T>,
        spec: &TransformSpec<T>,
        key: RngKey,
        row: usize,
    ) -> Result<SampleResult<T>> {
        let (h, w) = row_as_workload(logits, 1)?;
        let (samples, _) = fused_matmul_sample_at(&h, &w, spec, key, &self.tiling, 0, row)?;
        Ok(samples[0])
    }

    fn sample_rows(
        &self,
        logits: &LogitsRow<T>,
        spec: &TransformSpec<T>,
        key: RngKey,
        n: usize,
    ) -> Result<Vec<usize>> {
        let (h, w) = row_as_workload(logits, n)?;
        let (samples, _) = fused_matmul_sample(&h, &w, spec, key, &self.tiling)?;
        Ok(samples.into_iter().map(|s| s.index).collect())
    }
}

/// Group sampler with all groups summarized independently.
pub struct ParallelGroupSampler {
    pub group_size: usize,
}

impl<T: Scalar> RowSampler<T> for ParallelGroupSampler {
    fn name(&self) -> &'static str {
        "grouped-parallel"
    }

    fn sample_row(
        &self,
        logits: &LogitsRow<T>,
        spec: &TransformSpec<T>,
        key: RngKey,
        row: usize,
    ) -> Result<SampleResult<T>> {
        crate::grouped::parallel_group_sample(logits, spec, key, row, self.group_size)
    }
}

/// Streaming group sampler with O(group) working memory.
pub struct OnlineGroupSampler {
    pub group_size: usize,
}

impl<T: Scalar> RowSampler<T> for OnlineGroupSampler {
    fn name(&self) -> &'static str {
        "grouped-online"
    }

    fn sample_row(
        &self,
        logits: &LogitsRow<T>,
        spec: &TransformSpec<T>,
        key: RngKey,
        row: usize,
    ) -> Result<SampleResult<T>> {
        crate::grouped::online_group_sample(logits, spec, key, row, self.group_size)
    }
}

/// Sharded sampler over the in-process transport.
pub struct DistributedSampler {
    pub world_size: usize,
}

impl<T: Scalar> RowSampler<T> for DistributedSampler {
    fn name(&self) -> &'static str {
        "distributed"
    }

    fn sample_row(
        &self,
        logits: &LogitsRow<T>,
        spec: &TransformSpec<T>,
        key: RngKey,
        row: usize,
    ) -> Result<SampleResult<T>> {
        // Same per-rank math as the threaded run, without the transport.
        let (_, w) = row_as_workload(logits, 1)?;
        let hidden = [T::one()];
        let layout = crate::distributed::ShardLayout::new(logits.len(), self.world_size)?;
        let mut messages = Vec::with_capacity(self.world_size);
        for rank in 0..self.world_size {
            let shard = layout.shard(rank);
            let w_shard = crate::distributed::WeightShard::new(&w, &shard)?;
            messages.push(crate::distributed::rank_local_summary(
                &shard, &w_shard, &hidden, spec, key, row,
            )?);
        }
        crate::distributed::coordinator_select(&messages, key, row, &layout)
    }

    fn sample_rows(
        &self,
        logits: &LogitsRow<T>,
        spec: &TransformSpec<T>,
        key: RngKey,
        n: usize,
    ) -> Result<Vec<usize>> {
        let (h, w) = row_as_workload(logits, n)?;
        let (samples, _) =
            crate::distributed::run_distributed_sample(&h, &w, spec, key, self.world_size)?;
        Ok(samples.into_iter().map(|s| s.index).collect())
    }
}

/// Draw `n` samples and test them against the exact probabilities of the
/// transformed row. Observing any banned or zero-mass category fails the
/// check outright, independent of the statistic.
pub fn empirical_check<T: Scalar>(
    sampler: &dyn RowSampler<T>,
    logits: &LogitsRow<T>,
    spec: &TransformSpec<T>,
    n: u64,
    alpha: f64,
    key: RngKey,
) -> Result<GofReport> {
    if n < 1000 {
        return Err(Error::InvalidParameter(format!(
            "empirical check needs at least 1000 samples, got {n}"
        )));
    }
    let transformed = apply_transform(logits, spec)?;
    let probs: Vec<f64> = exact_probabilities(&transformed)?
        .into_iter()
        .map(to_f64)
        .collect();
    let indices = sampler.sample_rows(logits, spec, key, n as usize)?;
    let mut counts = vec![0u64; logits.len()];
    for i in indices {
        if i >= counts.len() {
            return Err(Error::InvalidParameter(format!(
                "sampler returned out-of-range index {i}"
            )));
        }
        counts[i] += 1;
    }
    let support_violations: u64 = counts
        .iter()
        .zip(&probs)
        .filter(|(_, &p)| p == 0.0)
        .map(|(&c, _)| c)
        .sum();
    let mut report = chi_squared_gof(&counts, &probs, alpha)?;
    report.support_violations = support_violations;
    if support_violations > 0 {
        report.pass = false;
    }
    Ok(report)
}

/// A check plus its optional retry under an independent key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetriedCheck {
    pub first: GofReport,
    pub retry: Option<GofReport>,
    pub pass: bool,
}

/// Double-failure rule: a statistical test failing at rate `alpha` is rerun
/// once under an independent key and only a second failure counts. Support
/// violations are deterministic bugs and are never retried.
pub fn empirical_check_with_retry<T: Scalar>(
    sampler: &dyn RowSampler<T>,
    logits: &LogitsRow<T>,
    spec: &TransformSpec<T>,
    n: u64,
    alpha: f64,
    key: RngKey,
    retry_key: RngKey,
) -> Result<RetriedCheck> {
    let first = empirical_check(sampler, logits, spec, n, alpha, key)?;
    if first.pass || first.support_violations > 0 {
        let pass = first.pass;
        return Ok(RetriedCheck {
            first,
            retry: None,
            pass,
        });
    }
    let retry = empirical_check(sampler, logits, spec, n, alpha, retry_key)?;
    let pass = retry.pass;
    Ok(RetriedCheck {
        first,
        retry: Some(retry),
        pass,
    })
}

/// First index disagreement between the fused sampler and the oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwiseDivergence {
    pub row: usize,
    pub tiling: TilingConfig,
    pub fused_index: usize,
    pub oracle_index: usize,
    pub fused_score: f64,
    pub oracle_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathwiseReport {
    pub rows: usize,
    pub tilings_checked: usize,
    pub pass: bool,
    pub divergence: Option<PathwiseDivergence>,
}

/// Materialize raw logits rows with a plain ascending dot product. This is
/// the oracle's own code path; it happens to agree bitwise with the blocked
/// kernel because both accumulate in ascending inner order.
fn materialize_logits<T: Scalar>(h: &HiddenStates<T>, w: &LmHeadWeights<T>) -> Result<Vec<LogitsRow<T>>> {
    if h.dim() != w.dim() {
        return Err(Error::ShapeMismatch(format!(
            "hidden dim {} does not match weight dim {}",
            h.dim(),
            w.dim()
        )));
    }
    let mut rows = Vec::with_capacity(h.batch());
    for b in 0..h.batch() {
        let hb = h.row(b);
        let mut values = Vec::with_capacity(w.vocab());
        for v in 0..w.vocab() {
            let mut acc = T::zero();
            for (&x, &y) in hb.iter().zip(w.row(v)) {
                acc += x * y;
            }
            values.push(acc);
        }
        rows.push(LogitsRow::new(values)?);
    }
    Ok(rows)
}

/// Check that the fused sampler returns the oracle's index for every row and
/// every tiling. Returns the first divergence with both perturbed scores.
pub fn pathwise_equivalence_check<T: Scalar>(
    h: &HiddenStates<T>,
    w: &LmHeadWeights<T>,
    spec: &TransformSpec<T>,
    key: RngKey,
    tilings: &[TilingConfig],
) -> Result<PathwiseReport> {
    pathwise_equivalence_check_with(
        |h, w, spec, key, cfg| fused_matmul_sample(h, w, spec, key, cfg).map(|(s, _)| s),
        h,
        w,
        spec,
        key,
        tilings,
    )
}

/// Harness form taking the sampler under test as a closure, so tests can
/// inject a deliberately corrupted implementation and watch it get caught.
pub fn pathwise_equivalence_check_with<T, F>(
    sampler: F,
    h: &HiddenStates<T>,
    w: &LmHeadWeights<T>,
    spec: &TransformSpec<T>,
    key: RngKey,
    tilings: &[TilingConfig],
) -> Result<PathwiseReport>
where
    T: Scalar,
    F: Fn(
        &HiddenStates<T>,
        &LmHeadWeights<T>,
        &TransformSpec<T>,
        RngKey,
        &TilingConfig,
    ) -> Result<Vec<SampleResult<T>>>,
{
    if tilings.is_empty() {
        return Err(Error::InvalidParameter("need at least one tiling".into()));
    }
    let raw_rows = materialize_logits(h, w)?;
    let mut oracle = Vec::with_capacity(h.batch());
    for (row, raw) in raw_rows.iter().enumerate() {
        oracle.push(streaming_gumbel_max(raw, spec, key, row)?.index);
    }

    let perturbed = |row: usize, index: usize| -> Result<f64> {
        let y = spec.apply(raw_rows[row].values()[index], index);
        if y == T::neg_infinity() {
            return Ok(f64::NEG_INFINITY);
        }
        let g = gumbel_at::<T>(key, StreamIndex::gumbel(row, index))?;
        Ok(to_f64(y + g))
    };

    for cfg in tilings {
        let samples = sampler(h, w, spec, key, cfg)?;
        for (row, (got, &want)) in samples.iter().zip(&oracle).enumerate() {
            if got.index != want {
                return Ok(PathwiseReport {
                    rows: h.batch(),
                    tilings_checked: tilings.len(),
                    pass: false,
                    divergence: Some(PathwiseDivergence {
                        row,
                        tiling: *cfg,
                        fused_index: got.index,
                        oracle_index: want,
                        fused_score: perturbed(row, got.index)?,
                        oracle_score: perturbed(row, want)?,
                    }),
                });
            }
        }
    }
    Ok(PathwiseReport {
        rows: h.batch(),
        tilings_checked: tilings.len(),
        pass: true,
        divergence: None,
    })
}

/// Monte-Carlo verification that the max of a group's perturbed logits is a
/// standard Gumbel shifted by the group log-mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxStabilityReport {
    pub trials: u64,
    pub log_mass: f64,
    pub expected_mean: f64,
    pub empirical_mean: f64,
    /// Three standard errors of the mean estimator.
    pub mean_tolerance: f64,
    pub expected_variance: f64,
    pub empirical_variance: f64,
    pub variance_tolerance: f64,
    pub pass: bool,
}

/// Euler-Mascheroni constant: the standard Gumbel mean.
pub const EULER_MASCHERONI: f64 = 0.577_215_664_901_532_9;

pub fn max_stability_check<T: Scalar>(
    group_logits: &[T],
    key: RngKey,
    trials: u64,
) -> Result<MaxStabilityReport> {
    if trials < 10_000 {
        return Err(Error::InvalidParameter(format!(
            "max-stability check needs at least 10^4 trials, got {trials}"
        )));
    }
    let log_mass = to_f64(crate::samplers::logsumexp(group_logits));
    if log_mass == f64::NEG_INFINITY {
        return Err(Error::UndefinedDistribution(
            "group has no finite logit".into(),
        ));
    }

    let maxima: Vec<f64> = (0..trials as usize)
        .into_par_iter()
        .map(|trial| -> Result<f64> {
            let mut best = f64::NEG_INFINITY;
            for (i, &y) in group_logits.iter().enumerate() {
                if y == T::neg_infinity() {
                    continue;
                }
                let g = gumbel_at::<T>(key, StreamIndex::gumbel(trial, i))?;
                best = best.max(to_f64(y + g));
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?;

    let n = trials as f64;
    let mean = maxima.iter().sum::<f64>() / n;
    let variance = maxima.iter().map(|m| (m - mean) * (m - mean)).sum::<f64>() / (n - 1.0);

    let sigma2 = std::f64::consts::PI.powi(2) / 6.0;
    let expected_mean = log_mass + EULER_MASCHERONI;
    let mean_tolerance = 3.0 * sigma2.sqrt() / n.sqrt();
    // 0.05 at 1e5 trials, scaling with the estimator's 1/sqrt(N) noise.
    let variance_tolerance = 0.05 * (1e5 / n).sqrt();
    let pass = (mean - expected_mean).abs() <= mean_tolerance
        && (variance - sigma2).abs() <= variance_tolerance;
    Ok(MaxStabilityReport {
        trials,
        log_mass,
        expected_mean,
        empirical_mean: mean,
        mean_tolerance,
        expected_variance: sigma2,
        empirical_variance: variance,
        variance_tolerance,
        pass,
    })
}

pub mod fixtures {
    //! Shared fixture set: vocabulary sizes {2, 8, 128}, four logit shapes,
    //! each with an identity transform and a shaped one (temperature 0.7,
    //! small periodic bias, every fourth index banned).

    use super::*;
    use crate::scalar::from_f64;

    #[derive(Debug, Clone)]
    pub struct Fixture<T> {
        pub name: String,
        pub logits: LogitsRow<T>,
        pub transform: TransformSpec<T>,
    }

    pub const VOCAB_SIZES: [usize; 3] = [2, 8, 128];
    pub const PATTERNS: [&str; 4] = ["uniform", "ramp", "one-dominant", "half-masked"];

    /// Deterministic logits for a named pattern.
    pub fn pattern_logits<T: Scalar>(pattern: &str, v: usize) -> Result<LogitsRow<T>> {
        let values: Vec<T> = match pattern {
            "uniform" => vec![T::zero(); v],
            "ramp" => (0..v)
                .map(|i| from_f64(-1.0 + 2.0 * i as f64 / (v.max(2) - 1) as f64))
                .collect(),
            "one-dominant" => (0..v)
                .map(|i| if i == v / 2 { from_f64(4.0) } else { T::zero() })
                .collect(),
            "half-masked" => (0..v)
                .map(|i| {
                    if i < v / 2 {
                        T::neg_infinity()
                    } else {
                        from_f64(4.0 * (i - v / 2) as f64 / v as f64)
                    }
                })
                .collect(),
            other => {
                return Err(Error::InvalidParameter(format!(
                    "unknown logit pattern '{other}'"
                )))
            }
        };
        LogitsRow::new(values)
    }

    /// Temperature 0.7, small periodic bias, every fourth index banned
    /// (~25% of the vocabulary).
    pub fn shaped_transform<T: Scalar>(v: usize) -> TransformSpec<T> {
        let bias: Vec<T> = (0..v).map(|i| from_f64((i % 7) as f64 * 0.1 - 0.3)).collect();
        TransformSpec::new(from_f64(0.7))
            .expect("positive temperature")
            .with_bias(bias)
            .expect("finite bias")
            .with_banned((0..v).filter(|i| i % 4 == 0))
    }

    /// The full fixture matrix. Every fixture keeps at least one unbanned
    /// finite logit by construction.
    pub fn standard<T: Scalar>() -> Vec<Fixture<T>> {
        let mut out = Vec::new();
        for &v in &VOCAB_SIZES {
            for pattern in PATTERNS {
                let logits = pattern_logits::<T>(pattern, v).expect("known pattern");
                out.push(Fixture {
                    name: format!("{pattern}-v{v}-identity"),
                    logits: logits.clone(),
                    transform: TransformSpec::identity(),
                });
                out.push(Fixture {
                    name: format!("{pattern}-v{v}-shaped"),
                    logits,
                    transform: shaped_transform::<T>(v),
                });
            }
        }
        out
    }

}
