//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line. Run with `cargo test --test acceptance -- --nocapture`
//! to see the lines; failures carry the same context in their panic message.

use std::time::Instant;

use gemmsample::costmodel;
use gemmsample::distributed::{
    naive_gather_bytes_per_row, run_distributed_sample, SUMMARY_PAYLOAD_BYTES,
};
use gemmsample::fused::{fused_matmul_sample, materialized_matmul_sample, TilingConfig};
use gemmsample::grouped::online_group_sample;
use gemmsample::matrix::{ElementPrecision, HiddenStates, LmHeadWeights};
use gemmsample::rng::{philox4x32, RngKey};
use gemmsample::samplers::{apply_transform, logsumexp, TransformSpec};
use gemmsample::statcheck::fixtures::{standard, Fixture};
use gemmsample::statcheck::{
    empirical_check_with_retry, max_stability_check, pathwise_equivalence_check, BaselineSampler,
    DistributedSampler, FusedSampler, OnlineGroupSampler, ParallelGroupSampler, RowSampler,
    StreamingSampler,
};
use gemmsample::synth;

const KEY: RngKey = RngKey(0xACCE_07ED_0000_0001);
const RETRY_KEY: RngKey = RngKey(0xACCE_07ED_0000_0002);
const SAMPLES: u64 = 5000;
const ALPHA: f64 = 0.01;

fn verdict(criterion: &str, pass: bool, detail: &str) {
    println!(
        "acceptance {criterion}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "acceptance {criterion} failed: {detail}");
}

/// Uniform draws for test-local randomness, independent of sampling streams.
fn test_word(stream: u32, i: u64) -> u32 {
    philox4x32(
        RngKey(0x7E57_5EED),
        [(i & 0xFFFF_FFFF) as u32, (i >> 32) as u32, stream, 0xCAFE],
    )[0]
}

#[test]
fn acceptance_1_exactness_suite() {
    let start = Instant::now();
    let fixtures: Vec<Fixture<f64>> = standard();
    let mut checks = 0usize;
    let mut failures = Vec::new();

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
            let outcome = empirical_check_with_retry(
                sampler.as_ref(),
                &fixture.logits,
                &fixture.transform,
                SAMPLES,
                ALPHA,
                KEY,
                RETRY_KEY,
            )
            .unwrap_or_else(|e| panic!("{name} on {}: {e}", fixture.name));
            checks += 1;
            if !outcome.pass {
                failures.push(format!("{name} on {}: {outcome:?}", fixture.name));
            }
        }
    }

    let elapsed = start.elapsed().as_secs_f64();
    let pass = failures.is_empty() && elapsed < 120.0;
    verdict(
        "1 exactness-suite",
        pass,
        &format!(
            "{checks} sampler/fixture checks, N={SAMPLES}, alpha={ALPHA}, {elapsed:.1}s{}{}",
            if failures.is_empty() { "" } else { "; failures: " },
            failures.join(" | ")
        ),
    );
}

#[test]
fn acceptance_2_pathwise_equivalence() {
    let configs = 100usize;
    let mut tilings_total = 0usize;
    for c in 0..configs {
        let i = c as u64;
        let b = 1 + (test_word(1, i) % 8) as usize;
        let v = 1 + (test_word(2, i) % 4096) as usize;
        let d = 1 + (test_word(3, i) % 256) as usize;
        let h = synth::hidden_states::<f64>(1000 + i, b, d);
        let w = synth::lm_head_weights::<f64>(2000 + i, v, d);

        let spec = match test_word(4, i) % 3 {
            0 => TransformSpec::identity(),
            1 => TransformSpec::new(0.7).unwrap(),
            _ => {
                let spec = TransformSpec::new(1.25).unwrap();
                if v >= 2 {
                    // Ban a sparse subset, always keeping the last index live.
                    spec.with_banned((0..v - 1).filter(|j| j % 5 == 0))
                } else {
                    spec
                }
            }
        };

        let mut tilings = vec![
            TilingConfig::new(1, 1, 1).unwrap(),
            TilingConfig::new(v, b, d).unwrap(),
        ];
        for t in 0..8u64 {
            tilings.push(
                TilingConfig::new(
                    1 + (test_word(5, i * 8 + t) as usize) % v,
                    1 + (test_word(6, i * 8 + t) as usize) % b,
                    1 + (test_word(7, i * 8 + t) as usize) % d,
                )
                .unwrap(),
            );
        }
        tilings_total += tilings.len();

        let report = pathwise_equivalence_check(&h, &w, &spec, RngKey(3000 + i), &tilings)
            .unwrap_or_else(|e| panic!("config {c} (B={b} V={v} D={d}): {e}"));
        assert!(
            report.pass,
            "config {c} (B={b} V={v} D={d}) diverged: {:?}",
            report.divergence
        );
    }
    verdict(
        "2 pathwise-equivalence",
        true,
        &format!("{configs} random configs, {tilings_total} tilings, zero divergences"),
    );
}

#[test]
fn acceptance_3_cost_model_regression() {
    // Incremental traffic fractions at D = 4096, quoted to two significant
    // figures for B = 1 and exactly for B = 64 and B = 128.
    let f1 = costmodel::extra_traffic_fraction(1, 4096) * 100.0;
    assert!((f1 - 0.049).abs() < 5e-4, "B=1 fraction {f1}%");
    let f64_ = costmodel::extra_traffic_fraction(64, 4096) * 100.0;
    assert_eq!(f64_, 3.125, "B=64 fraction");
    let f128 = costmodel::extra_traffic_fraction(128, 4096) * 100.0;
    assert_eq!(f128, 6.25, "B=128 fraction");

    let (bytes, seconds) = costmodel::logits_roundtrip(1, 151_936, 8.0).unwrap();
    assert_eq!(bytes, 607_744);
    let ms = seconds * 1e3;
    assert!((ms - 7.6e-5).abs() < 5e-7, "round-trip {ms} ms");

    let expected = [("H100", 295.0), ("H200", 206.0), ("B200", 281.0), ("B300", 281.0)];
    for (gpu, (name, want)) in costmodel::builtin_gpu_specs().iter().zip(expected) {
        assert_eq!(gpu.name, name);
        let got = gpu.ops_byte_ratio();
        assert!((got - want).abs() <= 1.0, "{name}: ops:byte {got} vs {want}");
    }
    verdict(
        "3 cost-model-regression",
        true,
        "fractions 0.049%/3.125%/6.25%, round-trip 607744 B at 7.6e-5 ms, ops:byte 295/206/281/281",
    );
}

#[test]
fn acceptance_4_max_stability() {
    let trials = 100_000u64;
    let group_sizes = [1usize, 3, 7, 23, 64];
    let mut details = Vec::new();
    for (gi, &size) in group_sizes.iter().enumerate() {
        let logits: Vec<f64> = (0..size)
            .map(|j| {
                let w = test_word(10 + gi as u32, j as u64);
                (f64::from(w) / f64::from(u32::MAX) - 0.5) * 4.0
            })
            .collect();
        let report = max_stability_check(&logits, RngKey(4000 + gi as u64), trials).unwrap();
        assert!(
            report.pass,
            "group {gi} (size {size}): mean {} vs {} +/- {}, var {} vs {} +/- {}",
            report.empirical_mean,
            report.expected_mean,
            report.mean_tolerance,
            report.empirical_variance,
            report.expected_variance,
            report.variance_tolerance
        );
        details.push(format!(
            "size {size}: mean err {:.4}, var err {:.4}",
            (report.empirical_mean - report.expected_mean).abs(),
            (report.empirical_variance - report.expected_variance).abs()
        ));
    }
    verdict(
        "4 max-stability",
        true,
        &format!("5 groups x {trials} trials; {}", details.join("; ")),
    );
}

#[test]
fn acceptance_5_online_log_normalizer() {
    let fixtures: Vec<Fixture<f64>> = standard();
    let mut checks = 0usize;
    for fixture in &fixtures {
        let v = fixture.logits.len();
        let expected = logsumexp(
            apply_transform(&fixture.logits, &fixture.transform)
                .unwrap()
                .values(),
        );
        for group_size in [1usize, 3, (v / 4).max(1), v] {
            for row in 0..4usize {
                let got = online_group_sample(&fixture.logits, &fixture.transform, KEY, row, group_size)
                    .unwrap_or_else(|e| panic!("{} g={group_size}: {e}", fixture.name))
                    .log_normalizer
                    .expect("online sampler reports the log-normalizer");
                let rel = (got - expected).abs() / expected.abs().max(1.0);
                assert!(
                    rel <= 1e-10,
                    "{} g={group_size} row={row}: {got} vs {expected} (rel {rel:.2e})",
                    fixture.name
                );
                checks += 1;
            }
        }
    }
    verdict(
        "5 online-log-normalizer",
        true,
        &format!("{checks} comparisons within 1e-10 relative"),
    );
}

#[test]
fn acceptance_6_communication_scaling() {
    let spec = TransformSpec::identity();
    let rows = 2usize;
    let n = 4usize;
    let mut per_row = Vec::new();
    for v in [512usize, 8192, 151_936] {
        let h = synth::hidden_states::<f64>(61, rows, 4);
        let w = synth::lm_head_weights::<f64>(62, v, 4);
        let (_, stats) = run_distributed_sample(&h, &w, &spec, KEY, n).unwrap();
        assert_eq!(stats.summary_bytes % rows as u64, 0);
        per_row.push(stats.summary_bytes / rows as u64);
    }
    assert!(
        per_row.iter().all(|&b| b == n as u64 * SUMMARY_PAYLOAD_BYTES),
        "summary bytes per row {per_row:?} != n * {SUMMARY_PAYLOAD_BYTES}"
    );

    // Full-logits gather at BF16 widths vs constant-size summaries, n = 8.
    let naive = naive_gather_bytes_per_row(151_936, 2);
    let fused_dist = 8 * SUMMARY_PAYLOAD_BYTES;
    let ratio = naive as f64 / fused_dist as f64;
    assert!(ratio >= 1000.0, "gather ratio {ratio}");
    verdict(
        "6 communication-scaling",
        true,
        &format!(
            "per-row bytes {} for V in {{512, 8192, 151936}}; naive gather ratio {ratio:.0}x",
            per_row[0]
        ),
    );
}

#[test]
fn acceptance_7_no_materialization_ledger() {
    let (b, v, d) = (4usize, 64usize, 16usize);
    let h = synth::hidden_states::<f64>(71, b, d);
    let w = synth::lm_head_weights::<f64>(72, v, d);
    let spec = TransformSpec::new(0.7).unwrap();
    let cfg = TilingConfig::new(16, 2, 8).unwrap();

    let (_, fused_ledger) = fused_matmul_sample(&h, &w, &spec, KEY, &cfg).unwrap();
    assert_eq!(fused_ledger.materialized_logits_bytes(), 0);

    let (_, base_ledger) = materialized_matmul_sample(&h, &w, &spec, KEY, &cfg).unwrap();
    let bv = (b * v) as u64 * base_ledger.bytes_per_element;
    assert!(
        base_ledger.logits_bytes_written >= 2 * bv,
        "baseline writes {} < {}",
        base_ledger.logits_bytes_written,
        2 * bv
    );
    assert!(
        base_ledger.logits_bytes_read >= 2 * bv,
        "baseline reads {} < {}",
        base_ledger.logits_bytes_read,
        2 * bv
    );
    verdict(
        "7 no-materialization-ledger",
        true,
        &format!(
            "fused [B,V] bytes 0; baseline write {} and read {} both >= {}",
            base_ledger.logits_bytes_written,
            base_ledger.logits_bytes_read,
            2 * bv
        ),
    );
}

#[test]
fn acceptance_8_scope_statement_and_weight_pass_smoke() {
    // Measured GPU results (kernel speedups, bandwidth-utilization plots,
    // serving-latency reductions) are hardware benchmarks outside this
    // desk-scale build. This suite replaces them with criteria 1-7 plus the
    // ledger check below.
    println!(
        "acceptance 8: GPU timing results are hardware measurements and are NOT reproduced here; \
         they are replaced by the property and oracle checks in criteria 1-7."
    );

    let (b, v, d) = (4usize, 1024usize, 64usize);
    let h = synth::hidden_states::<f64>(81, b, d);
    let w = synth::lm_head_weights::<f64>(82, v, d);
    let cfg = TilingConfig::new(128, 2, 16).unwrap();
    let (_, ledger) = fused_matmul_sample(&h, &w, &TransformSpec::identity(), KEY, &cfg).unwrap();

    // One pass over W per batch tile: bytes = V * D * width * ceil(B / batch_tile).
    let revisits = b.div_ceil(cfg.batch_tile) as u64;
    let expected = (v * d) as u64 * ledger.bytes_per_element * revisits;
    assert_eq!(ledger.weight_bytes_read, expected);

    // Reduced-precision accounting follows the storage tag.
    let w16 = LmHeadWeights::new(w.matrix().clone(), ElementPrecision::Reduced16).unwrap();
    let (_, ledger16) =
        fused_matmul_sample(&h, &w16, &TransformSpec::identity(), KEY, &cfg).unwrap();
    assert_eq!(ledger16.weight_bytes_read, (v * d) as u64 * 2 * revisits);

    verdict(
        "8 scope-statement-and-weight-pass",
        true,
        &format!(
            "fused W reads = V*D*bytes x {revisits} batch tiles ({} bytes); GPU timings not reproduced",
            ledger.weight_bytes_read
        ),
    );
}

/// The acceptance workload embeds each fixture row as a `V x 1` LM head; this
/// guard pins the embedding itself so criterion 1 exercises what it claims.
#[test]
fn fixture_embedding_reproduces_logits_bitwise() {
    let fixtures: Vec<Fixture<f64>> = standard();
    for fixture in fixtures.iter().take(4) {
        let v = fixture.logits.len();
        let h = HiddenStates::from_vec(1, 1, vec![1.0]).unwrap();
        let w = LmHeadWeights::from_vec(v, 1, fixture.logits.values().to_vec()).unwrap();
        let acc = gemmsample::fused::blocked_matmul_tile(h.matrix(), 0..1, w.matrix(), 0..v, 1)
            .unwrap();
        for i in 0..v {
            let got = acc.get(0, i);
            let want = fixture.logits.values()[i];
            assert!(got == want || (got.is_infinite() && want.is_infinite() && got < 0.0));
        }
    }
}
