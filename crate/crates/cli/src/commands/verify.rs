use std::process::ExitCode;

use serde::Serialize;
use serde_json::json;

use gemmsample::costmodel;
use gemmsample::distributed::{
    naive_gather_bytes_per_row, run_distributed_sample, SUMMARY_PAYLOAD_BYTES,
};
use gemmsample::fused::{fused_matmul_sample, materialized_matmul_sample, TilingConfig};
use gemmsample::grouped::online_group_sample;
use gemmsample::rng::{philox4x32, RngKey};
use gemmsample::samplers::{apply_transform, logsumexp, TransformSpec};
use gemmsample::statcheck::fixtures::{standard, Fixture};
use gemmsample::statcheck::{
    empirical_check_with_retry, max_stability_check, pathwise_equivalence_check, BaselineSampler,
    DistributedSampler, FusedSampler, OnlineGroupSampler, ParallelGroupSampler, RowSampler,
    StreamingSampler,
};
use gemmsample::synth;

use crate::output::{csv_field, emit, Rendered};
use crate::OutputArgs;

#[derive(Debug, Serialize)]
struct CheckRecord {
    suite: &'static str,
    check: String,
    pass: bool,
    detail: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    report: Option<serde_json::Value>,
}

fn word(seed: u64, stream: u32, i: u64) -> u32 {
    philox4x32(
        RngKey(seed),
        [(i & 0xFFFF_FFFF) as u32, (i >> 32) as u32, stream, 0xCAFE],
    )[0]
}

fn exactness_suite(samples: u64, alpha: f64, seed: u64, records: &mut Vec<CheckRecord>) {
    let fixtures: Vec<Fixture<f64>> = standard();
    let key = RngKey(seed);
    let retry_key = RngKey(seed ^ 0xFFFF_FFFF_FFFF_FFFF);
    for fixture in &fixtures {
        let v = fixture.logits.len();
        let group_size = (v / 4).max(1);
        let samplers: Vec<(String, Box<dyn RowSampler<f64>>)> = vec![
            ("baseline".into(), Box::new(BaselineSampler)),
            ("streaming".into(), Box::new(StreamingSampler)),
            (
                "fused".into(),
                Box::new(FusedSampler {
                    tiling: TilingConfig::default(),
                }),
            ),
            (
                format!("grouped-parallel(g={group_size})"),
                Box::new(ParallelGroupSampler { group_size }),
            ),
            (
                format!("grouped-online(g={group_size})"),
                Box::new(OnlineGroupSampler { group_size }),
            ),
            ("distributed(n=2)".into(), Box::new(DistributedSampler { world_size: 2 })),
            ("distributed(n=4)".into(), Box::new(DistributedSampler { world_size: 4 })),
            ("distributed(n=8)".into(), Box::new(DistributedSampler { world_size: 8 })),
        ];
        for (name, sampler) in &samplers {
            let record = match empirical_check_with_retry(
                sampler.as_ref(),
                &fixture.logits,
                &fixture.transform,
                samples,
                alpha,
                key,
                retry_key,
            ) {
                Ok(outcome) => CheckRecord {
                    suite: "exactness",
                    check: format!("{name} on {}", fixture.name),
                    pass: outcome.pass,
                    detail: format!(
                        "statistic {:.3} vs threshold {:.3} (dof {}){}",
                        outcome.first.statistic,
                        outcome.first.threshold,
                        outcome.first.dof,
                        if outcome.retry.is_some() { ", retried" } else { "" }
                    ),
                    report: serde_json::to_value(&outcome).ok(),
                },
                Err(e) => CheckRecord {
                    suite: "exactness",
                    check: format!("{name} on {}", fixture.name),
                    pass: false,
                    detail: format!("error: {e}"),
                    report: None,
                },
            };
            records.push(record);
        }
    }
}

fn pathwise_suite(seed: u64, records: &mut Vec<CheckRecord>) {
    let configs = 100usize;
    let mut divergences = 0usize;
    let mut detail = String::new();
    for c in 0..configs {
        let i = c as u64;
        let b = 1 + (word(seed, 1, i) % 8) as usize;
        let v = 1 + (word(seed, 2, i) % 4096) as usize;
        let d = 1 + (word(seed, 3, i) % 256) as usize;
        let h = synth::hidden_states::<f64>(seed ^ (1000 + i), b, d);
        let w = synth::lm_head_weights::<f64>(seed ^ (2000 + i), v, d);
        let spec = match word(seed, 4, i) % 3 {
            0 => TransformSpec::identity(),
            1 => TransformSpec::new(0.7).unwrap(),
            _ if v >= 2 => {
                TransformSpec::new(1.25).unwrap().with_banned((0..v - 1).filter(|j| j % 5 == 0))
            }
            _ => TransformSpec::new(1.25).unwrap(),
        };
        let mut tilings = vec![
            TilingConfig::new(1, 1, 1).unwrap(),
            TilingConfig::new(v, b, d).unwrap(),
        ];
        for t in 0..8u64 {
            tilings.push(
                TilingConfig::new(
                    1 + (word(seed, 5, i * 8 + t) as usize) % v,
                    1 + (word(seed, 6, i * 8 + t) as usize) % b,
                    1 + (word(seed, 7, i * 8 + t) as usize) % d,
                )
                .unwrap(),
            );
        }
        match pathwise_equivalence_check(&h, &w, &spec, RngKey(seed ^ (3000 + i)), &tilings) {
            Ok(report) if report.pass => {}
            Ok(report) => {
                divergences += 1;
                detail = format!("config {c} (B={b} V={v} D={d}): {:?}", report.divergence);
            }
            Err(e) => {
                divergences += 1;
                detail = format!("config {c}: error {e}");
            }
        }
    }
    records.push(CheckRecord {
        suite: "pathwise",
        check: format!("{configs} random configs x 10 tilings"),
        pass: divergences == 0,
        detail: if divergences == 0 {
            "zero divergences".into()
        } else {
            format!("{divergences} diverging configs; first: {detail}")
        },
        report: None,
    });
}

fn maxstability_suite(seed: u64, records: &mut Vec<CheckRecord>) {
    for (gi, size) in [1usize, 3, 7, 23, 64].into_iter().enumerate() {
        let logits: Vec<f64> = (0..size)
            .map(|j| (f64::from(word(seed, 10 + gi as u32, j as u64)) / f64::from(u32::MAX) - 0.5) * 4.0)
            .collect();
        let record = match max_stability_check(&logits, RngKey(seed ^ (4000 + gi as u64)), 100_000)
        {
            Ok(report) => CheckRecord {
                suite: "maxstability",
                check: format!("group size {size}"),
                pass: report.pass,
                detail: format!(
                    "mean {:.4} vs {:.4} +/- {:.4}; var {:.4} vs {:.4} +/- {:.4}",
                    report.empirical_mean,
                    report.expected_mean,
                    report.mean_tolerance,
                    report.empirical_variance,
                    report.expected_variance,
                    report.variance_tolerance
                ),
                report: serde_json::to_value(&report).ok(),
            },
            Err(e) => CheckRecord {
                suite: "maxstability",
                check: format!("group size {size}"),
                pass: false,
                detail: format!("error: {e}"),
                report: None,
            },
        };
        records.push(record);
    }
}

fn lognorm_suite(seed: u64, records: &mut Vec<CheckRecord>) {
    let fixtures: Vec<Fixture<f64>> = standard();
    let key = RngKey(seed);
    let mut checks = 0usize;
    let mut worst: f64 = 0.0;
    let mut failures = 0usize;
    for fixture in &fixtures {
        let v = fixture.logits.len();
        let expected = logsumexp(
            apply_transform(&fixture.logits, &fixture.transform)
                .expect("fixtures are well-formed")
                .values(),
        );
        for group_size in [1usize, 3, (v / 4).max(1), v] {
            match online_group_sample(&fixture.logits, &fixture.transform, key, 0, group_size) {
                Ok(result) => {
                    let got = result.log_normalizer.expect("online reports logZ");
                    let rel = (got - expected).abs() / expected.abs().max(1.0);
                    worst = worst.max(rel);
                    if rel > 1e-10 {
                        failures += 1;
                    }
                    checks += 1;
                }
                Err(_) => failures += 1,
            }
        }
    }
    records.push(CheckRecord {
        suite: "lognorm",
        check: format!("online logZ vs row logsumexp, {checks} cases"),
        pass: failures == 0,
        detail: format!("worst relative error {worst:.2e} (budget 1e-10)"),
        report: None,
    });
}

fn costmodel_suite(records: &mut Vec<CheckRecord>) {
    let f1 = costmodel::extra_traffic_fraction(1, 4096) * 100.0;
    let f64_ = costmodel::extra_traffic_fraction(64, 4096) * 100.0;
    let f128 = costmodel::extra_traffic_fraction(128, 4096) * 100.0;
    let fractions_ok = (f1 - 0.049).abs() < 5e-4 && f64_ == 3.125 && f128 == 6.25;

    let (bytes, seconds) = costmodel::logits_roundtrip(1, 151_936, 8.0).expect("valid inputs");
    let roundtrip_ok = bytes == 607_744 && (seconds * 1e3 - 7.6e-5).abs() < 5e-7;

    let expected = [295.0, 206.0, 281.0, 281.0];
    let ratios_ok = costmodel::builtin_gpu_specs()
        .iter()
        .zip(expected)
        .all(|(g, want)| (g.ops_byte_ratio() - want).abs() <= 1.0);

    records.push(CheckRecord {
        suite: "costmodel",
        check: "closed-form regression".into(),
        pass: fractions_ok && roundtrip_ok && ratios_ok,
        detail: format!(
            "fractions {f1:.3}%/{f64_}%/{f128}%, round-trip {bytes} B {:.3e} ms, ratios ok={ratios_ok}",
            seconds * 1e3
        ),
        report: None,
    });
}

fn ledger_suite(seed: u64, records: &mut Vec<CheckRecord>) {
    let (b, v, d) = (4usize, 64usize, 16usize);
    let h = synth::hidden_states::<f64>(seed ^ 71, b, d);
    let w = synth::lm_head_weights::<f64>(seed ^ 72, v, d);
    let spec = TransformSpec::new(0.7).expect("positive temperature");
    let cfg = TilingConfig::new(16, 2, 8).expect("valid tiling");
    let key = RngKey(seed);

    let fused = fused_matmul_sample(&h, &w, &spec, key, &cfg).map(|(_, l)| l);
    let base = materialized_matmul_sample(&h, &w, &spec, key, &cfg).map(|(_, l)| l);
    let (pass, detail) = match (fused, base) {
        (Ok(f), Ok(m)) => {
            let bv = (b * v) as u64 * m.bytes_per_element;
            let ok = f.materialized_logits_bytes() == 0
                && m.logits_bytes_written >= 2 * bv
                && m.logits_bytes_read >= 2 * bv;
            (
                ok,
                format!(
                    "fused [B,V] bytes {}; baseline write {} read {} (floor {})",
                    f.materialized_logits_bytes(),
                    m.logits_bytes_written,
                    m.logits_bytes_read,
                    2 * bv
                ),
            )
        }
        (f, m) => (false, format!("errors: {f:?} {m:?}")),
    };
    records.push(CheckRecord {
        suite: "ledger",
        check: "no-materialization".into(),
        pass,
        detail,
        report: None,
    });
}

fn comm_suite(seed: u64, records: &mut Vec<CheckRecord>) {
    let spec = TransformSpec::identity();
    let rows = 2usize;
    let n = 4usize;
    let mut per_row = Vec::new();
    let mut ok = true;
    for v in [512usize, 8192, 151_936] {
        let h = synth::hidden_states::<f64>(seed ^ 61, rows, 4);
        let w = synth::lm_head_weights::<f64>(seed ^ 62, v, 4);
        match run_distributed_sample(&h, &w, &spec, RngKey(seed), n) {
            Ok((_, stats)) => per_row.push(stats.summary_bytes / rows as u64),
            Err(_) => ok = false,
        }
    }
    ok &= per_row.iter().all(|&b| b == n as u64 * SUMMARY_PAYLOAD_BYTES);
    let ratio = naive_gather_bytes_per_row(151_936, 2) as f64 / (8 * SUMMARY_PAYLOAD_BYTES) as f64;
    ok &= ratio >= 1000.0;
    records.push(CheckRecord {
        suite: "comm",
        check: "transport scaling".into(),
        pass: ok,
        detail: format!(
            "per-row summary bytes {per_row:?} across V; naive gather ratio {ratio:.0}x at V=151936 n=8"
        ),
        report: None,
    });
}

pub fn run(
    suite: &str,
    samples: u64,
    alpha: f64,
    seed: u64,
    out: &OutputArgs,
) -> anyhow::Result<ExitCode> {
    let mut records = Vec::new();
    let run_all = suite == "all";
    let mut known = false;
    if run_all || suite == "exactness" {
        known = true;
        exactness_suite(samples, alpha, seed, &mut records);
    }
    if run_all || suite == "pathwise" {
        known = true;
        pathwise_suite(seed, &mut records);
    }
    if run_all || suite == "maxstability" {
        known = true;
        maxstability_suite(seed, &mut records);
    }
    if run_all || suite == "lognorm" {
        known = true;
        lognorm_suite(seed, &mut records);
    }
    if run_all || suite == "costmodel" {
        known = true;
        costmodel_suite(&mut records);
    }
    if run_all || suite == "ledger" {
        known = true;
        ledger_suite(seed, &mut records);
    }
    if run_all || suite == "comm" {
        known = true;
        comm_suite(seed, &mut records);
    }
    if !known {
        anyhow::bail!(
            "unknown suite '{suite}' (expected exactness, pathwise, maxstability, lognorm, costmodel, ledger, comm, or all)"
        );
    }

    let failed: Vec<&CheckRecord> = records.iter().filter(|r| !r.pass).collect();
    let mut human = String::new();
    for r in &records {
        human.push_str(&format!(
            "[{}] {:12} {:60} {}\n",
            if r.pass { "PASS" } else { "FAIL" },
            r.suite,
            r.check,
            r.detail
        ));
    }
    human.push_str(&format!(
        "\n{} checks, {} failed\n",
        records.len(),
        failed.len()
    ));

    let json = json!({
        "suite": suite,
        "samples": samples,
        "alpha": alpha,
        "seed": seed,
        "checks": records,
        "failures": failed.len(),
    });

    let mut csv = String::from("suite,check,pass,detail\n");
    for r in &records {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.suite,
            csv_field(&r.check),
            r.pass,
            csv_field(&r.detail)
        ));
    }

    let any_failed = !failed.is_empty();
    emit(&Rendered { human, json, csv }, out.format, out.output.as_ref())?;
    Ok(if any_failed {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    })
}
