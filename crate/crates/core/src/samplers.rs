//! Ground-truth samplers and the numeric primitives they share.
//!
//! Logit rows live in `(R ∪ {-inf})^V`; negative infinity encodes a forbidden
//! category and needs no special casing because `exp(-inf) = 0`. Two exact
//! samplers are provided: the materialized softmax/prefix-sum baseline and a
//! single-pass streaming Gumbel-argmax. Both draw from the counter-based
//! streams in [`crate::rng`], so equal keys give reproducible samples.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::rng::{derive_uniform, gumbel_at, RngKey, StreamIndex};
use crate::scalar::{from_f64, Scalar};

/// One row of (possibly transformed) logits.
///
/// Entries are finite or negative infinity; NaN and positive infinity are
/// rejected at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitsRow<T> {
    values: Vec<T>,
}

impl<T: Scalar> LogitsRow<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        for (i, v) in values.iter().enumerate() {
            if v.is_nan() || *v == T::infinity() {
                return Err(Error::InvalidLogit(format!("entry {i} is {v}")));
            }
        }
        Ok(LogitsRow { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }
}

/// Deterministic logits transform: temperature scaling, additive bias, and a
/// banned-index mask, applied in that order.
#[derive(Debug, Clone)]
pub struct TransformSpec<T> {
    temperature: T,
    bias: Option<Vec<T>>,
    banned: Option<HashSet<usize>>,
}

impl<T: Scalar> TransformSpec<T> {
    /// Temperature 1, no bias, no mask.
    pub fn identity() -> Self {
        TransformSpec {
            temperature: T::one(),
            bias: None,
            banned: None,
        }
    }

    pub fn new(temperature: T) -> Result<Self> {
        if temperature <= T::zero() || !temperature.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "temperature must be a positive finite value, got {temperature}"
            )));
        }
        Ok(TransformSpec {
            temperature,
            bias: None,
            banned: None,
        })
    }

    pub fn with_bias(mut self, bias: Vec<T>) -> Result<Self> {
        if let Some((i, v)) = bias.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "bias entry {i} is {v}; bias must be finite"
            )));
        }
        self.bias = Some(bias);
        Ok(self)
    }

    pub fn with_banned(mut self, banned: impl IntoIterator<Item = usize>) -> Self {
        self.banned = Some(banned.into_iter().collect());
        self
    }

    pub fn temperature(&self) -> T {
        self.temperature
    }

    pub fn bias(&self) -> Option<&[T]> {
        self.bias.as_deref()
    }

    pub fn banned(&self) -> Option<&HashSet<usize>> {
        self.banned.as_ref()
    }

    /// Checks that bias and mask cover a row of width `v` exactly.
    pub fn validate_for(&self, v: usize) -> Result<()> {
        if let Some(bias) = &self.bias {
            if bias.len() != v {
                return Err(Error::ShapeMismatch(format!(
                    "bias length {} does not match row width {v}",
                    bias.len()
                )));
            }
        }
        if let Some(banned) = &self.banned {
            if let Some(&bad) = banned.iter().find(|&&i| i >= v) {
                return Err(Error::InvalidParameter(format!(
                    "banned index {bad} outside row of width {v}"
                )));
            }
        }
        Ok(())
    }

    /// Weaker check used by shard-local runs: bias must cover global indices
    /// up to `end`. Banned indices are global and may lie outside the shard.
    pub fn validate_covering(&self, end: usize) -> Result<()> {
        if let Some(bias) = &self.bias {
            if bias.len() < end {
                return Err(Error::ShapeMismatch(format!(
                    "bias length {} does not cover index range up to {end}",
                    bias.len()
                )));
            }
        }
        Ok(())
    }

    /// Transform a single logit at its global index: `l / tau + bias`, or
    /// negative infinity when the index is banned.
    #[inline]
    pub fn apply(&self, logit: T, index: usize) -> T {
        if let Some(banned) = &self.banned {
            if banned.contains(&index) {
                return T::neg_infinity();
            }
        }
        let mut y = logit / self.temperature;
        if let Some(bias) = &self.bias {
            y += bias[index];
        }
        y
    }
}

/// Outcome of drawing one category.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleResult<T> {
    /// Global index of the sampled category; always addresses a finite-logit,
    /// non-banned entry.
    pub index: usize,
    /// `logsumexp` of the transformed row, when the sampler computes it.
    pub log_normalizer: Option<T>,
}

/// `log Σ exp(v_i)` with max-shifting. Empty or all-(-inf) input yields -inf.
///
/// ```
/// use gemmsample::samplers::logsumexp;
///
/// let lse = logsumexp(&[1000.0_f64, 1000.0]);
/// assert!((lse - (1000.0 + std::f64::consts::LN_2)).abs() < 1e-10);
/// ```
pub fn logsumexp<T: Scalar>(values: &[T]) -> T {
    let max = values
        .iter()
        .fold(T::neg_infinity(), |acc, &v| if v > acc { v } else { acc });
    if max == T::neg_infinity() {
        return T::neg_infinity();
    }
    let mut sum = T::zero();
    for &v in values {
        sum += (v - max).exp();
    }
    max + sum.ln()
}

/// Exact category probabilities `p_i = exp(l_i) / Σ exp(l_j)`.
pub fn exact_probabilities<T: Scalar>(row: &LogitsRow<T>) -> Result<Vec<T>> {
    let lse = logsumexp(row.values());
    if lse == T::neg_infinity() {
        return Err(Error::UndefinedDistribution(
            "row has no finite logit".into(),
        ));
    }
    Ok(row.values().iter().map(|&v| (v - lse).exp()).collect())
}

/// Apply a transform to a whole row: temperature, then bias, then mask.
pub fn apply_transform<T: Scalar>(row: &LogitsRow<T>, spec: &TransformSpec<T>) -> Result<LogitsRow<T>> {
    spec.validate_for(row.len())?;
    let mut any_finite = false;
    let mut out = Vec::with_capacity(row.len());
    for (i, &v) in row.values().iter().enumerate() {
        let y = spec.apply(v, i);
        if y.is_nan() || y == T::infinity() {
            return Err(Error::InvalidLogit(format!(
                "transform produced {y} at index {i}"
            )));
        }
        any_finite |= y.is_finite();
        out.push(y);
    }
    if !any_finite {
        return Err(Error::UndefinedDistribution(
            "transform left no finite logit".into(),
        ));
    }
    Ok(LogitsRow { values: out })
}

/// Linear prefix-sum search: smallest index whose cumulative probability
/// reaches `u`. Zero-probability entries cannot be returned since they never
/// move the prefix sum past `u`; if rounding left the total slightly below
/// `u`, the last positive-probability category is returned.
pub(crate) fn sample_from_probs<T: Scalar>(probs: &[T], u: T) -> usize {
    let mut cumulative = T::zero();
    let mut last_positive = 0usize;
    for (i, &p) in probs.iter().enumerate() {
        if p > T::zero() {
            last_positive = i;
            cumulative += p;
            if cumulative >= u {
                return i;
            }
        }
    }
    last_positive
}

/// Materialized baseline: softmax, prefix sum, and a single uniform draw per
/// row (stream position `(row, 0)` in the baseline domain).
pub fn materialized_sample<T: Scalar>(
    logits: &LogitsRow<T>,
    spec: &TransformSpec<T>,
    key: RngKey,
    row: usize,
) -> Result<SampleResult<T>> {
    let transformed = apply_transform(logits, spec)?;
    let max = transformed
        .values()
        .iter()
        .fold(T::neg_infinity(), |acc, &v| if v > acc { v } else { acc });
    let mut z = T::zero();
    let mut probs = Vec::with_capacity(transformed.len());
    for &v in transformed.values() {
        let e = (v - max).exp();
        probs.push(e);
        z += e;
    }
    for p in &mut probs {
        *p = *p / z;
    }
    let u = derive_uniform(key, StreamIndex::baseline(row, 0));
    let index = sample_from_probs(&probs, from_f64::<T>(u.value()));
    Ok(SampleResult {
        index,
        log_normalizer: Some(max + z.ln()),
    })
}

/// Streaming Gumbel-argmax: one pass keeping only the best perturbed score
/// and its index. Ties break toward the smaller index; -inf entries never
/// win and consume no randomness (their draw is positional, not sequential).
pub fn streaming_gumbel_max<T: Scalar>(
    logits: &LogitsRow<T>,
    spec: &TransformSpec<T>,
    key: RngKey,
    row: usize,
) -> Result<SampleResult<T>> {
    spec.validate_for(logits.len())?;
    let mut best = T::neg_infinity();
    let mut best_index: Option<usize> = None;
    for (i, &raw) in logits.values().iter().enumerate() {
        let y = spec.apply(raw, i);
        if y == T::neg_infinity() {
            continue;
        }
        if y.is_nan() || y == T::infinity() {
            return Err(Error::InvalidLogit(format!(
                "transform produced {y} at index {i}"
            )));
        }
        let score = y + gumbel_at::<T>(key, StreamIndex::gumbel(row, i))?;
        if best_index.is_none() || score > best {
            best = score;
            best_index = Some(i);
        }
    }
    match best_index {
        Some(index) => Ok(SampleResult {
            index,
            log_normalizer: None,
        }),
        None => Err(Error::UndefinedDistribution(
            "row has no finite logit after transform".into(),
        )),
    }
}
