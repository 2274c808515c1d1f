//! Command-line driver for the fused sampling library.

mod commands;
mod output;
mod weights;
mod workload;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use output::Format;
use workload::{LogitPattern, Preset, SamplerKind};

#[derive(Debug, Parser)]
#[command(
    name = "gemmsample",
    about = "Exact categorical sampling fused into a tiled matmul epilogue",
    version
)]
struct Cli {
    /// Worker threads for tiled and statistical runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value = "human")]
    format: Format,

    /// Write the formatted result to a file instead of stdout.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WorkloadArgs {
    /// JSON config file; explicit flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Workload preset (sets V and D).
    #[arg(long, value_enum)]
    preset: Option<Preset>,

    #[arg(short = 'b', long, alias = "B")]
    b: Option<usize>,

    #[arg(short = 'v', long, alias = "V")]
    v: Option<usize>,

    #[arg(short = 'd', long, alias = "D")]
    d: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    #[arg(long, value_enum)]
    pattern: Option<LogitPattern>,

    #[arg(long, value_enum)]
    sampler: Option<SamplerKind>,

    #[arg(long)]
    temperature: Option<f64>,

    /// Comma-separated banned vocabulary indices.
    #[arg(long, value_delimiter = ',')]
    ban: Option<Vec<usize>>,

    #[arg(long)]
    group_size: Option<usize>,

    #[arg(long)]
    world_size: Option<usize>,

    #[arg(long)]
    vocab_tile: Option<usize>,

    #[arg(long)]
    batch_tile: Option<usize>,

    #[arg(long)]
    k_tile: Option<usize>,
}

impl WorkloadArgs {
    fn resolve(&self) -> anyhow::Result<workload::WorkloadConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| anyhow::anyhow!("reading {}: {e}", path.display()))?;
                serde_json::from_str(&text)
                    .map_err(|e| anyhow::anyhow!("parsing {}: {e}", path.display()))?
            }
            None => workload::WorkloadConfig::default(),
        };
        if let Some(preset) = self.preset {
            cfg.apply_preset(preset);
        }
        if let Some(b) = self.b {
            cfg.b = b;
        }
        if let Some(v) = self.v {
            cfg.v = v;
        }
        if let Some(d) = self.d {
            cfg.d = d;
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(pattern) = self.pattern {
            cfg.logit_pattern = pattern;
        }
        if let Some(sampler) = self.sampler {
            cfg.sampler = sampler;
        }
        if let Some(t) = self.temperature {
            cfg.transform.temperature = t;
        }
        if let Some(ban) = &self.ban {
            cfg.transform.banned = Some(ban.clone());
        }
        if let Some(g) = self.group_size {
            cfg.group_size = g;
        }
        if let Some(n) = self.world_size {
            cfg.world_size = n;
        }
        if let Some(vt) = self.vocab_tile {
            cfg.tiling.vocab_tile = vt;
        }
        if let Some(bt) = self.batch_tile {
            cfg.tiling.batch_tile = bt;
        }
        if let Some(kt) = self.k_tile {
            cfg.tiling.k_tile = kt;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a workload and draw one sample per batch row.
    Sample {
        #[command(flatten)]
        workload: WorkloadArgs,

        /// Persist the generated weights (binary, or CSV by extension).
        #[arg(long)]
        save_weights: Option<PathBuf>,

        /// Load weights instead of generating them (V and D come from the file).
        #[arg(long)]
        load_weights: Option<PathBuf>,

        #[command(flatten)]
        out: OutputArgs,
    },

    /// Run verification suites; exits 1 if any check fails.
    Verify {
        /// exactness | pathwise | maxstability | lognorm | costmodel | ledger | comm | all
        #[arg(long, default_value = "all")]
        suite: String,

        #[arg(long, default_value_t = 5000)]
        samples: u64,

        #[arg(long, default_value_t = 0.01)]
        alpha: f64,

        #[arg(long, default_value_t = 0xACCE07ED00000001)]
        seed: u64,

        #[command(flatten)]
        out: OutputArgs,
    },

    /// Time a sampler over a workload and report wall times plus the ledger.
    Bench {
        #[command(flatten)]
        workload: WorkloadArgs,

        #[arg(long, default_value_t = 100)]
        iterations: usize,

        #[arg(long, default_value_t = 25)]
        warmup: usize,

        #[command(flatten)]
        out: OutputArgs,
    },

    /// Emit the analytic cost table and roofline points.
    Costmodel {
        #[arg(long, alias = "V", default_value_t = 151_936)]
        v: u64,

        #[arg(long, alias = "D", default_value_t = 4096)]
        d: u64,

        /// Comma-separated batch sizes.
        #[arg(long, alias = "B", value_delimiter = ',', default_value = "1,2,4,8,16,32,64,128,256")]
        b: Vec<u64>,

        #[arg(long, default_value_t = 2)]
        bytes_per_element: u64,

        /// Reference bandwidth (TB/s) for round-trip times.
        #[arg(long, default_value_t = 8.0)]
        bandwidth: f64,

        /// JSON file extending or replacing the built-in device table.
        #[arg(long)]
        gpus: Option<PathBuf>,

        #[command(flatten)]
        out: OutputArgs,
    },

    /// Distributed sharding simulation: exactness check plus transport report.
    Distsim {
        #[arg(short = 'v', long, alias = "V", default_value_t = 512)]
        v: usize,

        /// World size (number of vocabulary shards).
        #[arg(short = 'n', long, default_value_t = 4)]
        n: usize,

        /// Sampled rows (statistical trials).
        #[arg(long, default_value_t = 5000)]
        rows: usize,

        #[arg(long, default_value_t = 0.01)]
        alpha: f64,

        #[arg(long, default_value_t = 0xD157_0000_0000_0001)]
        seed: u64,

        #[arg(long, value_enum, default_value = "ramp")]
        pattern: LogitPattern,

        /// Write the transport trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,

        #[command(flatten)]
        out: OutputArgs,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            eprintln!("error: configuring {threads} threads: {e}");
            return ExitCode::FAILURE;
        }
    }

    let result = match cli.command {
        Command::Sample {
            workload,
            save_weights,
            load_weights,
            out,
        } => commands::sample::run(&workload, save_weights, load_weights, &out),
        Command::Verify {
            suite,
            samples,
            alpha,
            seed,
            out,
        } => commands::verify::run(&suite, samples, alpha, seed, &out),
        Command::Bench {
            workload,
            iterations,
            warmup,
            out,
        } => commands::bench::run(&workload, iterations, warmup, &out),
        Command::Costmodel {
            v,
            d,
            b,
            bytes_per_element,
            bandwidth,
            gpus,
            out,
        } => commands::costmodel::run(v, d, &b, bytes_per_element, bandwidth, gpus, &out),
        Command::Distsim {
            v,
            n,
            rows,
            alpha,
            seed,
            pattern,
            trace,
            out,
        } => commands::distsim::run(v, n, rows, alpha, seed, pattern, trace, &out),
    };

    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
