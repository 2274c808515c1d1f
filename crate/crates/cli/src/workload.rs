//! Workload configuration and deterministic synthetic data.

use anyhow::{bail, Context};
use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use gemmsample::fused::TilingConfig;
use gemmsample::matrix::{ElementPrecision, HiddenStates, LmHeadWeights, Matrix};
use gemmsample::samplers::{LogitsRow, TransformSpec};
use gemmsample::statcheck::fixtures;
use gemmsample::synth;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum LogitPattern {
    Uniform,
    Gaussian,
    Ramp,
    OneDominant,
    HalfMasked,
}

impl LogitPattern {
    fn fixture_name(self) -> Option<&'static str> {
        match self {
            LogitPattern::Uniform => Some("uniform"),
            LogitPattern::Ramp => Some("ramp"),
            LogitPattern::OneDominant => Some("one-dominant"),
            LogitPattern::HalfMasked => Some("half-masked"),
            LogitPattern::Gaussian => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SamplerKind {
    Baseline,
    Streaming,
    Fused,
    GroupedParallel,
    GroupedOnline,
    Distributed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Decode-centric shape: V = 151936, D = 4096.
    Qwen3Small,
    /// Larger head: V = 131072, D = 8192.
    Large,
}

/// Deterministic transform description, JSON-friendly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformConfig {
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bias: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub banned: Option<Vec<usize>>,
}

impl Default for TransformConfig {
    fn default() -> Self {
        TransformConfig {
            temperature: 1.0,
            bias: None,
            banned: None,
        }
    }
}

impl TransformConfig {
    pub fn build(&self) -> anyhow::Result<TransformSpec<f64>> {
        let mut spec = TransformSpec::new(self.temperature).context("temperature")?;
        if let Some(bias) = &self.bias {
            spec = spec.with_bias(bias.clone()).context("bias")?;
        }
        if let Some(banned) = &self.banned {
            spec = spec.with_banned(banned.iter().copied());
        }
        Ok(spec)
    }
}

/// Full workload description; the config-file schema documented in the
/// README. Flags override individual fields.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadConfig {
    pub b: usize,
    pub v: usize,
    pub d: usize,
    pub seed: u64,
    pub logit_pattern: LogitPattern,
    pub transform: TransformConfig,
    pub sampler: SamplerKind,
    pub tiling: TilingConfig,
    pub group_size: usize,
    pub world_size: usize,
}

impl Default for WorkloadConfig {
    fn default() -> Self {
        WorkloadConfig {
            b: 4,
            v: 1024,
            d: 64,
            seed: 0,
            logit_pattern: LogitPattern::Gaussian,
            transform: TransformConfig::default(),
            sampler: SamplerKind::Fused,
            tiling: TilingConfig::default(),
            group_size: 64,
            world_size: 4,
        }
    }
}

impl WorkloadConfig {
    pub fn apply_preset(&mut self, preset: Preset) {
        match preset {
            Preset::Qwen3Small => {
                self.v = 151_936;
                self.d = 4096;
            }
            Preset::Large => {
                self.v = 131_072;
                self.d = 8192;
            }
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if self.b == 0 || self.v == 0 || self.d == 0 {
            bail!("B, V, and D must all be at least 1");
        }
        if self.group_size == 0 {
            bail!("group size must be at least 1");
        }
        if self.world_size == 0 {
            bail!("world size must be at least 1");
        }
        self.tiling.validate()?;
        Ok(())
    }
}

/// Deterministic `(H, W)` for a workload. Gaussian patterns draw both
/// matrices from the seed with `1/sqrt(D)` weight scaling; the shaped
/// patterns embed their logits row in the first weight column against a unit
/// first hidden coordinate, so every row's logits equal the pattern exactly.
pub fn generate_synthetic(
    cfg: &WorkloadConfig,
) -> anyhow::Result<(HiddenStates<f64>, LmHeadWeights<f64>)> {
    cfg.validate()?;
    match cfg.logit_pattern.fixture_name() {
        None => Ok((
            synth::hidden_states(cfg.seed, cfg.b, cfg.d),
            synth::lm_head_weights(cfg.seed, cfg.v, cfg.d),
        )),
        Some(pattern) => {
            let logits = fixtures::pattern_logits::<f64>(pattern, cfg.v)?;
            let mut h = Matrix::zeros(cfg.b, cfg.d);
            for b in 0..cfg.b {
                h.set(b, 0, 1.0);
            }
            let mut w = Matrix::zeros(cfg.v, cfg.d);
            for (i, &value) in logits.values().iter().enumerate() {
                w.set(i, 0, value);
            }
            Ok((HiddenStates::new(h)?, LmHeadWeights::new(w, ElementPrecision::Full)?))
        }
    }
}

/// The logits row a shaped pattern produces, for checks against exact
/// probabilities. Gaussian workloads have no closed-form row.
pub fn pattern_row(cfg: &WorkloadConfig) -> anyhow::Result<Option<LogitsRow<f64>>> {
    Ok(match cfg.logit_pattern.fixture_name() {
        Some(pattern) => Some(fixtures::pattern_logits::<f64>(pattern, cfg.v)?),
        None => None,
    })
}
