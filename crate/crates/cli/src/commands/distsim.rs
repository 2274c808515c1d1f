use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use serde_json::json;

use gemmsample::distributed::{
    naive_gather_bytes_per_row, run_distributed_sample_traced, SUMMARY_PAYLOAD_BYTES,
};
use gemmsample::matrix::{HiddenStates, LmHeadWeights};
use gemmsample::rng::RngKey;
use gemmsample::samplers::TransformSpec;
use gemmsample::statcheck::{empirical_check_with_retry, DistributedSampler};

use crate::output::{emit, Rendered};
use crate::workload::LogitPattern;
use crate::OutputArgs;

#[allow(clippy::too_many_arguments)]
pub fn run(
    v: usize,
    n: usize,
    rows: usize,
    alpha: f64,
    seed: u64,
    pattern: LogitPattern,
    trace_path: Option<PathBuf>,
    out: &OutputArgs,
) -> anyhow::Result<ExitCode> {
    if matches!(pattern, LogitPattern::Gaussian) {
        anyhow::bail!("distsim needs a closed-form pattern (uniform, ramp, one-dominant, half-masked)");
    }
    let cfg = crate::workload::WorkloadConfig {
        b: rows,
        v,
        d: 1,
        seed,
        logit_pattern: pattern,
        ..Default::default()
    };
    let logits = crate::workload::pattern_row(&cfg)?.expect("closed-form pattern");
    let spec = TransformSpec::identity();
    let key = RngKey(seed);

    // One traced run for the transport ledger.
    let h = HiddenStates::from_vec(rows, 1, vec![1.0; rows])?;
    let w = LmHeadWeights::from_vec(v, 1, logits.values().to_vec())?;
    let (_, stats, trace) = run_distributed_sample_traced(&h, &w, &spec, key, n)?;
    if let Some(path) = &trace_path {
        let mut file = std::fs::File::create(path)
            .with_context(|| format!("creating {}", path.display()))?;
        for record in &trace {
            writeln!(file, "{}", serde_json::to_string(record)?)?;
        }
    }

    // Exactness with the double-failure rule.
    let gof = empirical_check_with_retry(
        &DistributedSampler { world_size: n },
        &logits,
        &spec,
        rows as u64,
        alpha,
        key,
        RngKey(seed ^ 0xFFFF_FFFF),
    )?;

    let summary_per_row = stats.summary_bytes / rows as u64;
    let naive = naive_gather_bytes_per_row(v, 2);
    let ratio = naive as f64 / (n as u64 * SUMMARY_PAYLOAD_BYTES) as f64;

    let human = format!(
        "distsim V={v} n={n} rows={rows} pattern={pattern:?}\n\
         exactness: {} (statistic {:.3} vs threshold {:.3}, dof {}{})\n\
         transport: {} messages, {} B summaries ({summary_per_row} B/row = n x {SUMMARY_PAYLOAD_BYTES}), {} B broadcasts\n\
         naive full-logits gather: {naive} B/row ({ratio:.0}x the summary traffic)\n",
        if gof.pass { "PASS" } else { "FAIL" },
        gof.first.statistic,
        gof.first.threshold,
        gof.first.dof,
        if gof.retry.is_some() { ", retried" } else { "" },
        stats.messages_sent,
        stats.summary_bytes,
        stats.broadcast_bytes,
    );

    let json = json!({
        "v": v,
        "n": n,
        "rows": rows,
        "pattern": pattern,
        "gof": gof,
        "transport": stats,
        "summary_bytes_per_row": summary_per_row,
        "naive_gather_bytes_per_row": naive,
        "gather_to_summary_ratio": ratio,
    });

    let csv = format!(
        "v,n,rows,pass,statistic,threshold,summary_bytes_per_row,naive_gather_bytes_per_row\n{v},{n},{rows},{},{},{},{summary_per_row},{naive}\n",
        gof.pass, gof.first.statistic, gof.first.threshold
    );

    emit(&Rendered { human, json, csv }, out.format, out.output.as_ref())?;
    Ok(if gof.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
