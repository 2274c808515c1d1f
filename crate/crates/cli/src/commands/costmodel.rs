use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use serde_json::json;

use gemmsample::costmodel::{builtin_gpu_specs, cost_table, load_gpu_specs, GpuSpec};

use crate::output::{emit, Rendered};
use crate::OutputArgs;

#[allow(clippy::too_many_arguments)]
pub fn run(
    v: u64,
    d: u64,
    batches: &[u64],
    bytes_per_element: u64,
    bandwidth: f64,
    gpus: Option<PathBuf>,
    out: &OutputArgs,
) -> anyhow::Result<ExitCode> {
    let _ = bytes_per_element; // fixed BF16 accounting in the closed forms
    let gpu_table: Vec<GpuSpec> = match gpus {
        Some(path) => {
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            load_gpu_specs(&text)?
        }
        None => builtin_gpu_specs().to_vec(),
    };
    let rows = cost_table(v, d, batches, &gpu_table, bandwidth)?;

    let mut human = format!("cost model at V={v}, D={d} (round-trip at {bandwidth} TB/s)\n");
    human.push_str(
        "     B     I_mat   I_fused   extra%   roundtrip_B   roundtrip_ms   attainable TFLOP/s\n",
    );
    for r in &rows {
        let attainable: Vec<String> = r
            .attainable_tflops
            .iter()
            .map(|(name, t)| format!("{name}={t:.1}"))
            .collect();
        human.push_str(&format!(
            "{:>6}  {:>8.5}  {:>8.5}  {:>6.3}  {:>12}  {:>12.6e}   {}\n",
            r.batch,
            r.intensity_materialized,
            r.intensity_fused,
            r.extra_traffic_fraction * 100.0,
            r.roundtrip_bytes,
            r.roundtrip_seconds * 1e3,
            attainable.join(" ")
        ));
    }
    human.push_str("\nops:byte ratios: ");
    let ratios: Vec<String> = gpu_table
        .iter()
        .map(|g| format!("{}={:.0}", g.name, g.ops_byte_ratio()))
        .collect();
    human.push_str(&ratios.join(" "));
    human.push('\n');

    let json = json!({
        "v": v,
        "d": d,
        "reference_bandwidth_tbps": bandwidth,
        "gpus": gpu_table,
        "rows": rows,
    });

    let mut csv = String::from("b,intensity_materialized,intensity_fused,extra_traffic_fraction,roundtrip_bytes,roundtrip_seconds");
    for g in &gpu_table {
        csv.push_str(&format!(",attainable_{}", g.name));
    }
    csv.push('\n');
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}",
            r.batch,
            r.intensity_materialized,
            r.intensity_fused,
            r.extra_traffic_fraction,
            r.roundtrip_bytes,
            r.roundtrip_seconds
        ));
        for (_, t) in &r.attainable_tflops {
            csv.push_str(&format!(",{t}"));
        }
        csv.push('\n');
    }

    emit(&Rendered { human, json, csv }, out.format, out.output.as_ref())?;
    Ok(ExitCode::SUCCESS)
}
