pub mod bench;
pub mod costmodel;
pub mod distsim;
pub mod sample;
pub mod verify;

use anyhow::Result;
use serde::Serialize;

use gemmsample::distributed::{run_distributed_sample, TransportStats};
use gemmsample::fused::{
    blocked_matmul_tile, fused_matmul_sample, materialized_matmul_sample, TrafficLedger,
};
use gemmsample::grouped::{online_group_sample, parallel_group_sample};
use gemmsample::matrix::{HiddenStates, LmHeadWeights};
use gemmsample::rng::RngKey;
use gemmsample::samplers::{streaming_gumbel_max, LogitsRow, SampleResult, TransformSpec};

use crate::workload::{SamplerKind, WorkloadConfig};

/// Result of one sampler invocation over a workload.
pub struct RunOutcome {
    pub samples: Vec<SampleResult<f64>>,
    pub ledger: Option<TrafficLedger>,
    pub transport: Option<TransportStats>,
}

/// Materialize raw logits rows for the row-at-a-time samplers.
pub fn materialize_rows(
    h: &HiddenStates<f64>,
    w: &LmHeadWeights<f64>,
) -> Result<Vec<LogitsRow<f64>>> {
    let full = blocked_matmul_tile(h.matrix(), 0..h.batch(), w.matrix(), 0..w.vocab(), 64)?;
    (0..h.batch())
        .map(|b| Ok(LogitsRow::new(full.row(b).to_vec())?))
        .collect()
}

/// Run the configured sampler once over `(H, W)`.
pub fn run_once(
    cfg: &WorkloadConfig,
    spec: &TransformSpec<f64>,
    h: &HiddenStates<f64>,
    w: &LmHeadWeights<f64>,
) -> Result<RunOutcome> {
    let key = RngKey(cfg.seed);
    let outcome = match cfg.sampler {
        SamplerKind::Fused => {
            let (samples, ledger) = fused_matmul_sample(h, w, spec, key, &cfg.tiling)?;
            RunOutcome {
                samples,
                ledger: Some(ledger),
                transport: None,
            }
        }
        SamplerKind::Baseline => {
            let (samples, ledger) = materialized_matmul_sample(h, w, spec, key, &cfg.tiling)?;
            RunOutcome {
                samples,
                ledger: Some(ledger),
                transport: None,
            }
        }
        SamplerKind::Streaming => {
            let rows = materialize_rows(h, w)?;
            let samples = rows
                .iter()
                .enumerate()
                .map(|(b, row)| Ok(streaming_gumbel_max(row, spec, key, b)?))
                .collect::<Result<_>>()?;
            RunOutcome {
                samples,
                ledger: None,
                transport: None,
            }
        }
        SamplerKind::GroupedParallel => {
            let rows = materialize_rows(h, w)?;
            let samples = rows
                .iter()
                .enumerate()
                .map(|(b, row)| Ok(parallel_group_sample(row, spec, key, b, cfg.group_size)?))
                .collect::<Result<_>>()?;
            RunOutcome {
                samples,
                ledger: None,
                transport: None,
            }
        }
        SamplerKind::GroupedOnline => {
            let rows = materialize_rows(h, w)?;
            let samples = rows
                .iter()
                .enumerate()
                .map(|(b, row)| Ok(online_group_sample(row, spec, key, b, cfg.group_size)?))
                .collect::<Result<_>>()?;
            RunOutcome {
                samples,
                ledger: None,
                transport: None,
            }
        }
        SamplerKind::Distributed => {
            let (samples, transport) = run_distributed_sample(h, w, spec, key, cfg.world_size)?;
            RunOutcome {
                samples,
                ledger: None,
                transport: Some(transport),
            }
        }
    };
    Ok(outcome)
}

/// JSON-friendly view of one drawn sample.
#[derive(Debug, Serialize)]
pub struct SampleRecord {
    pub row: usize,
    pub index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub log_normalizer: Option<f64>,
}

pub fn sample_records(samples: &[SampleResult<f64>]) -> Vec<SampleRecord> {
    samples
        .iter()
        .enumerate()
        .map(|(row, s)| SampleRecord {
            row,
            index: s.index,
            log_normalizer: s.log_normalizer,
        })
        .collect()
}
