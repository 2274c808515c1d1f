use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use serde_json::json;

use crate::commands::{run_once, sample_records};
use crate::output::{csv_field, emit, Rendered};
use crate::weights;
use crate::{OutputArgs, WorkloadArgs};

pub fn run(
    workload: &WorkloadArgs,
    save_weights: Option<PathBuf>,
    load_weights: Option<PathBuf>,
    out: &OutputArgs,
) -> anyhow::Result<ExitCode> {
    let mut cfg = workload.resolve()?;
    let spec = cfg.transform.build()?;

    let (h, w) = match &load_weights {
        Some(path) => {
            let w = weights::load(path)?;
            cfg.v = w.vocab();
            cfg.d = w.dim();
            let h = gemmsample::synth::hidden_states::<f64>(cfg.seed, cfg.b, cfg.d);
            (h, w)
        }
        None => crate::workload::generate_synthetic(&cfg)?,
    };
    if let Some(path) = &save_weights {
        weights::save(path, &w).context("saving weights")?;
    }

    let outcome = run_once(&cfg, &spec, &h, &w)?;
    let records = sample_records(&outcome.samples);

    let mut human = format!(
        "workload B={} V={} D={} seed={} pattern={:?} sampler={:?}\n",
        cfg.b, cfg.v, cfg.d, cfg.seed, cfg.logit_pattern, cfg.sampler
    );
    for r in &records {
        match r.log_normalizer {
            Some(lz) => human.push_str(&format!("row {:>4}  index {:>8}  logZ {lz:.6}\n", r.row, r.index)),
            None => human.push_str(&format!("row {:>4}  index {:>8}\n", r.row, r.index)),
        }
    }
    if let Some(ledger) = &outcome.ledger {
        human.push_str(&format!(
            "ledger: W read {} B, H read {} B, candidates {} B, [B,V] write {} B, [B,V] read {} B\n",
            ledger.weight_bytes_read,
            ledger.hidden_bytes_read,
            ledger.candidate_bytes_written,
            ledger.logits_bytes_written,
            ledger.logits_bytes_read
        ));
    }
    if let Some(t) = &outcome.transport {
        human.push_str(&format!(
            "transport: {} messages, {} summary B, {} broadcast B\n",
            t.messages_sent, t.summary_bytes, t.broadcast_bytes
        ));
    }

    let json = json!({
        "config": cfg,
        "samples": records,
        "ledger": outcome.ledger,
        "transport": outcome.transport,
    });

    let mut csv = String::from("row,index,log_normalizer\n");
    for r in &records {
        let lz = r.log_normalizer.map(|x| x.to_string()).unwrap_or_default();
        csv.push_str(&format!("{},{},{}\n", r.row, r.index, csv_field(&lz)));
    }

    emit(&Rendered { human, json, csv }, out.format, out.output.as_ref())?;
    Ok(ExitCode::SUCCESS)
}
