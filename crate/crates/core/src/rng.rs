//! Deterministic counter-based random streams.
//!
//! Every random draw in the pipeline is a pure function of a 64-bit key and a
//! logical stream position `(row, pos, domain)`. The generator is
//! Philox4x32-10 (Salmon et al., "Parallel Random Numbers: As Easy as 1, 2, 3",
//! 2011), so values never depend on evaluation order, tiling, or thread
//! scheduling. That positional determinism is what makes the fused and
//! reference samplers pathwise comparable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{from_f64, Scalar};

const PHILOX_M4X32_0: u32 = 0xD251_1F53;
const PHILOX_M4X32_1: u32 = 0xCD9E_8D57;
const PHILOX_W32_0: u32 = 0x9E37_79B9;
const PHILOX_W32_1: u32 = 0xBB67_AE85;

/// Seed for a family of random streams. Equal keys produce identical streams
/// across runs and platforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngKey(pub u64);

impl RngKey {
    pub fn new(seed: u64) -> Self {
        RngKey(seed)
    }

    #[inline]
    fn split(self) -> [u32; 2] {
        [(self.0 & 0xFFFF_FFFF) as u32, (self.0 >> 32) as u32]
    }
}

/// Purpose tag separating otherwise-identical stream positions. Distinct
/// domains never collide for the same `(row, pos)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Domain {
    /// Per-token Gumbel perturbation, addressed by global vocabulary index.
    GumbelPerTok,
    /// Bernoulli draw deciding a streaming merge, addressed by group ordinal.
    MergeBernoulli,
    /// Fresh Gumbel for selecting a group or shard, addressed by its ordinal.
    OuterGroup,
    /// Single uniform consumed by the materialized prefix-sum baseline.
    BaselineUniform,
}

impl Domain {
    #[inline]
    fn tag(self) -> u32 {
        match self {
            Domain::GumbelPerTok => 0,
            Domain::MergeBernoulli => 1,
            Domain::OuterGroup => 2,
            Domain::BaselineUniform => 3,
        }
    }
}

/// Logical address of one random draw: `(key, row, pos, domain)` identifies
/// it uniquely.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamIndex {
    /// Batch row the draw belongs to (0-based).
    pub row: u32,
    /// Position within the row: vocabulary index, group ordinal, or rank,
    /// depending on the domain.
    pub pos: u64,
    pub domain: Domain,
}

impl StreamIndex {
    pub fn new(row: usize, pos: u64, domain: Domain) -> Self {
        StreamIndex {
            row: u32::try_from(row).expect("row index exceeds u32 range"),
            pos,
            domain,
        }
    }

    /// Per-token Gumbel stream at a global vocabulary position.
    pub fn gumbel(row: usize, pos: usize) -> Self {
        Self::new(row, pos as u64, Domain::GumbelPerTok)
    }

    /// Merge-decision stream for the streaming group sampler.
    pub fn merge_bernoulli(row: usize, group: usize) -> Self {
        Self::new(row, group as u64, Domain::MergeBernoulli)
    }

    /// Outer group/shard selection stream.
    pub fn outer_group(row: usize, ordinal: usize) -> Self {
        Self::new(row, ordinal as u64, Domain::OuterGroup)
    }

    /// Baseline sampler's single uniform per row.
    pub fn baseline(row: usize, pos: usize) -> Self {
        Self::new(row, pos as u64, Domain::BaselineUniform)
    }

    /// 128-bit Philox counter. `(domain, row, pos)` are packed into disjoint
    /// words, so distinct stream indices always map to distinct counters.
    #[inline]
    fn counter(self) -> [u32; 4] {
        [
            (self.pos & 0xFFFF_FFFF) as u32,
            (self.pos >> 32) as u32,
            self.row,
            self.domain.tag(),
        ]
    }
}

/// A uniform variate guaranteed to lie strictly inside (0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformOpen01(f64);

impl UniformOpen01 {
    /// Validates the open-interval invariant.
    pub fn new(value: f64) -> Result<Self> {
        if value > 0.0 && value < 1.0 {
            Ok(UniformOpen01(value))
        } else {
            Err(Error::InvalidParameter(format!(
                "uniform variate {value} outside open interval (0, 1)"
            )))
        }
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

#[inline]
fn philox_round(ctr: [u32; 4], key: [u32; 2]) -> [u32; 4] {
    let prod0 = u64::from(ctr[0]).wrapping_mul(u64::from(PHILOX_M4X32_0));
    let prod1 = u64::from(ctr[2]).wrapping_mul(u64::from(PHILOX_M4X32_1));
    [
        ((prod1 >> 32) as u32) ^ ctr[1] ^ key[0],
        prod1 as u32,
        ((prod0 >> 32) as u32) ^ ctr[3] ^ key[1],
        prod0 as u32,
    ]
}

/// Philox4x32 with the standard 10 rounds.
pub fn philox4x32(key: RngKey, counter: [u32; 4]) -> [u32; 4] {
    let mut c = counter;
    let mut k = key.split();
    for _ in 0..10 {
        c = philox_round(c, k);
        k[0] = k[0].wrapping_add(PHILOX_W32_0);
        k[1] = k[1].wrapping_add(PHILOX_W32_1);
    }
    c
}

/// Map a raw 32-bit generator word to the open interval via
/// `u = (r + 1) / (2^32 + 1)`, which cannot produce 0 or 1.
#[inline]
pub fn open01_from_raw(r: u32) -> UniformOpen01 {
    const DENOM: f64 = 4_294_967_297.0; // 2^32 + 1, exactly representable
    UniformOpen01((f64::from(r) + 1.0) / DENOM)
}

/// Deterministic uniform draw for a stream position.
pub fn derive_uniform(key: RngKey, idx: StreamIndex) -> UniformOpen01 {
    let words = philox4x32(key, idx.counter());
    open01_from_raw(words[0])
}

/// Standard Gumbel variate `g = -ln(-ln u)`. Finite for every value the
/// generator can produce, since `u` is strictly inside (0, 1).
pub fn gumbel_from_uniform<T: Scalar>(u: UniformOpen01) -> T {
    let inner = -ln(u.value());
    from_f64(-ln(inner))
}

/// Gumbel perturbation at a per-token stream position. The value depends only
/// on `(key, idx)`, never on tiling or evaluation order.
pub fn gumbel_at<T: Scalar>(key: RngKey, idx: StreamIndex) -> Result<T> {
    if idx.domain != Domain::GumbelPerTok {
        return Err(Error::DomainMismatch {
            expected: Domain::GumbelPerTok,
            found: idx.domain,
        });
    }
    Ok(gumbel_from_uniform(derive_uniform(key, idx)))
}

#[cfg(not(feature = "fast-math"))]
#[inline]
fn ln(x: f64) -> f64 {
    x.ln()
}

/// Polynomial log used when the `fast-math` feature is enabled. Splits the
/// argument into exponent and mantissa and evaluates an atanh series on the
/// mantissa; absolute error stays below ~1e-8, which distorts the sampled
/// distribution slightly. Not used by the verification suites.
#[cfg(feature = "fast-math")]
#[inline]
fn ln(x: f64) -> f64 {
    const LN_2: f64 = core::f64::consts::LN_2;
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7FF) as i64 - 1023;
    let mantissa = f64::from_bits((bits & 0x000F_FFFF_FFFF_FFFF) | 0x3FF0_0000_0000_0000);
    let t = (mantissa - 1.0) / (mantissa + 1.0);
    let t2 = t * t;
    let series = t
        * (2.0
            + t2 * (2.0 / 3.0
                + t2 * (2.0 / 5.0
                    + t2 * (2.0 / 7.0
                        + t2 * (2.0 / 9.0 + t2 * (2.0 / 11.0 + t2 * (2.0 / 13.0)))))));
    exp as f64 * LN_2 + series
}
