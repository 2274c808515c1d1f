//! Analytic cost model for the LM-head decode regime.
//!
//! Arithmetic intensity of the materialized and fused pipelines, the traffic
//! fraction the logits round-trip adds on top of the mandatory weight read,
//! and roofline attainable-performance points for a small device table.
//! Units are decimal: TB/s = 1e12 bytes/s, TFLOP/s = 1e12 FLOP/s.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Workload description: batch `B`, vocabulary `V`, model dimension `D`, and
/// the storage width of one matrix element (2 bytes for the BF16 default).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostInputs {
    pub batch: u64,
    pub vocab: u64,
    pub dim: u64,
    pub bytes_per_element: u64,
}

impl CostInputs {
    pub fn new(batch: u64, vocab: u64, dim: u64) -> Result<Self> {
        if batch == 0 || vocab == 0 || dim == 0 {
            return Err(Error::InvalidParameter(format!(
                "cost inputs must be positive, got B={batch} V={vocab} D={dim}"
            )));
        }
        Ok(CostInputs {
            batch,
            vocab,
            dim,
            bytes_per_element: 2,
        })
    }

    pub fn with_bytes_per_element(mut self, bytes_per_element: u64) -> Result<Self> {
        if bytes_per_element == 0 {
            return Err(Error::InvalidParameter("bytes per element must be positive".into()));
        }
        self.bytes_per_element = bytes_per_element;
        Ok(self)
    }
}

/// One device row of the roofline table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpuSpec {
    pub name: String,
    pub hbm_bandwidth_tbps: f64,
    pub peak_compute_tflops: f64,
}

impl GpuSpec {
    /// Peak compute over bandwidth: the ridge point of the roofline.
    pub fn ops_byte_ratio(&self) -> f64 {
        self.peak_compute_tflops / self.hbm_bandwidth_tbps
    }
}

/// Arithmetic intensity of the materialized pipeline, counting the mandatory
/// weight and activation reads plus one logits write and one reread:
/// `BVD / (VD + BD + 2BV)` FLOP/byte.
pub fn intensity_materialized(c: &CostInputs) -> f64 {
    intensity_materialized_with_passes(c, 1.0)
}

/// Materialized intensity with a multiplier on the logits round-trip term.
/// Real samplers make more than one pass over the materialized logits;
/// `passes = 1` is the optimistic lower bound on their traffic.
pub fn intensity_materialized_with_passes(c: &CostInputs, passes: f64) -> f64 {
    debug_assert!(passes >= 1.0);
    let (b, v, d) = (c.batch as f64, c.vocab as f64, c.dim as f64);
    b * v * d / (v * d + b * d + 2.0 * b * v * passes)
}

/// Arithmetic intensity with sampling fused into the GEMM epilogue, which
/// removes the logits write and reread: `BV / (V + B)` FLOP/byte. Strictly
/// above the materialized intensity for every positive workload.
pub fn intensity_fused(c: &CostInputs) -> f64 {
    let (b, v) = (c.batch as f64, c.vocab as f64);
    b * v / (v + b)
}

/// Extra traffic a materialized baseline adds relative to the mandatory
/// weight read: `4BV / 2VD = 2B / D`, dimensionless.
pub fn extra_traffic_fraction(batch: u64, dim: u64) -> f64 {
    debug_assert!(batch > 0 && dim > 0);
    2.0 * batch as f64 / dim as f64
}

/// Minimal avoided logits round-trip: `4BV` bytes (BF16 write plus reread),
/// and the time it takes at the given bandwidth.
pub fn logits_roundtrip(batch: u64, vocab: u64, bandwidth_tbps: f64) -> Result<(u64, f64)> {
    if batch == 0 || vocab == 0 {
        return Err(Error::InvalidParameter(format!(
            "round-trip requires positive B and V, got B={batch} V={vocab}"
        )));
    }
    if bandwidth_tbps <= 0.0 || bandwidth_tbps.is_nan() {
        return Err(Error::InvalidParameter(format!(
            "bandwidth must be positive, got {bandwidth_tbps}"
        )));
    }
    let bytes = 4 * batch * vocab;
    let seconds = bytes as f64 / (bandwidth_tbps * 1e12);
    Ok((bytes, seconds))
}

/// Roofline attainable performance at a given arithmetic intensity:
/// `min(peak, bandwidth * intensity)` TFLOP/s.
pub fn roofline_point(gpu: &GpuSpec, intensity: f64) -> f64 {
    debug_assert!(intensity > 0.0);
    gpu.peak_compute_tflops.min(gpu.hbm_bandwidth_tbps * intensity)
}

/// Built-in device table, also shipped as `data/gpu_specs.json`.
pub fn builtin_gpu_specs() -> &'static [GpuSpec] {
    static SPECS: OnceLock<Vec<GpuSpec>> = OnceLock::new();
    SPECS.get_or_init(|| {
        load_gpu_specs(include_str!("../data/gpu_specs.json")).expect("embedded table parses")
    })
}

/// Parse a user-supplied device table (same schema as the built-in one).
pub fn load_gpu_specs(json: &str) -> Result<Vec<GpuSpec>> {
    let specs: Vec<GpuSpec> = serde_json::from_str(json)
        .map_err(|e| Error::InvalidParameter(format!("gpu spec table: {e}")))?;
    for g in &specs {
        let positive = |x: f64| x > 0.0;
        if !positive(g.hbm_bandwidth_tbps) || !positive(g.peak_compute_tflops) {
            return Err(Error::InvalidParameter(format!(
                "gpu {} must have positive bandwidth and peak compute",
                g.name
            )));
        }
    }
    Ok(specs)
}

/// One emitted row of the cost table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub batch: u64,
    pub intensity_materialized: f64,
    pub intensity_fused: f64,
    pub extra_traffic_fraction: f64,
    pub roundtrip_bytes: u64,
    pub roundtrip_seconds: f64,
    /// Attainable TFLOP/s per device at the fused intensity.
    pub attainable_tflops: Vec<(String, f64)>,
}

/// Cost table over a batch sweep at fixed `(V, D)`. Round-trip time is
/// reported at each device's own bandwidth via the first device when present,
/// otherwise at `reference_bandwidth_tbps`.
pub fn cost_table(
    vocab: u64,
    dim: u64,
    batches: &[u64],
    gpus: &[GpuSpec],
    reference_bandwidth_tbps: f64,
) -> Result<Vec<CostRow>> {
    let mut rows = Vec::with_capacity(batches.len());
    for &batch in batches {
        let c = CostInputs::new(batch, vocab, dim)?;
        let fused = intensity_fused(&c);
        let (bytes, seconds) = logits_roundtrip(batch, vocab, reference_bandwidth_tbps)?;
        rows.push(CostRow {
            batch,
            intensity_materialized: intensity_materialized(&c),
            intensity_fused: fused,
            extra_traffic_fraction: extra_traffic_fraction(batch, dim),
            roundtrip_bytes: bytes,
            roundtrip_seconds: seconds,
            attainable_tflops: gpus
                .iter()
                .map(|g| (g.name.clone(), roofline_point(g, fused)))
                .collect(),
        });
    }
    Ok(rows)
}
