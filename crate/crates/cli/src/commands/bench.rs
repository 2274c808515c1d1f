use std::process::ExitCode;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use gemmsample::distributed::TransportStats;
use gemmsample::fused::TrafficLedger;

use crate::commands::run_once;
use crate::output::{emit, Rendered};
use crate::{OutputArgs, WorkloadArgs};

#[derive(Debug, Serialize)]
struct BenchReport {
    warmup: usize,
    iterations: usize,
    median_seconds: f64,
    p10_seconds: f64,
    p90_seconds: f64,
    samples_per_second: f64,
    /// Byte counters for a single iteration, when the sampler reports them.
    #[serde(skip_serializing_if = "Option::is_none")]
    ledger: Option<TrafficLedger>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transport: Option<TransportStats>,
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let idx = (p * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx]
}

pub fn run(
    workload: &WorkloadArgs,
    iterations: usize,
    warmup: usize,
    out: &OutputArgs,
) -> anyhow::Result<ExitCode> {
    if iterations == 0 {
        anyhow::bail!("need at least one timed iteration");
    }
    let cfg = workload.resolve()?;
    let spec = cfg.transform.build()?;
    let (h, w) = crate::workload::generate_synthetic(&cfg)?;

    for _ in 0..warmup {
        run_once(&cfg, &spec, &h, &w)?;
    }

    let mut times = Vec::with_capacity(iterations);
    let mut last = None;
    for _ in 0..iterations {
        let start = Instant::now();
        let outcome = run_once(&cfg, &spec, &h, &w)?;
        times.push(start.elapsed().as_secs_f64());
        last = Some(outcome);
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = percentile(&times, 0.5);
    let last = last.expect("at least one iteration ran");

    let report = BenchReport {
        warmup,
        iterations,
        median_seconds: median,
        p10_seconds: percentile(&times, 0.1),
        p90_seconds: percentile(&times, 0.9),
        samples_per_second: cfg.b as f64 / median,
        ledger: last.ledger,
        transport: last.transport,
    };

    let mut human = format!(
        "bench B={} V={} D={} sampler={:?}: median {:.3} ms, p10 {:.3} ms, p90 {:.3} ms, {:.0} samples/s ({} warmup + {} timed)\n",
        cfg.b,
        cfg.v,
        cfg.d,
        cfg.sampler,
        report.median_seconds * 1e3,
        report.p10_seconds * 1e3,
        report.p90_seconds * 1e3,
        report.samples_per_second,
        warmup,
        iterations
    );
    if let Some(ledger) = &report.ledger {
        human.push_str(&format!(
            "ledger/iter: W read {} B, H read {} B, candidates {} B, [B,V] materialized {} B\n",
            ledger.weight_bytes_read,
            ledger.hidden_bytes_read,
            ledger.candidate_bytes_written,
            ledger.materialized_logits_bytes()
        ));
    }
    if let Some(t) = &report.transport {
        human.push_str(&format!(
            "transport/iter: {} messages, {} bytes\n",
            t.messages_sent,
            t.total_bytes()
        ));
    }

    let json = json!({ "config": cfg, "report": report });
    let csv = format!(
        "median_seconds,p10_seconds,p90_seconds,samples_per_second,materialized_bytes\n{},{},{},{},{}\n",
        report.median_seconds,
        report.p10_seconds,
        report.p90_seconds,
        report.samples_per_second,
        report
            .ledger
            .as_ref()
            .map(|l| l.materialized_logits_bytes())
            .unwrap_or(0)
    );

    emit(&Rendered { human, json, csv }, out.format, out.output.as_ref())?;
    Ok(ExitCode::SUCCESS)
}
