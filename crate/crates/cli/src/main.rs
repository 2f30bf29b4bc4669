//! `vqvid`: build the synthetic corpus, train the tokenizer and generator,
//! sample videos from captions, score them and count attention pairs.
//!
//! Exit codes: 0 success, 1 invalid configuration or input, 2 runtime
//! failure.

mod commands;
mod settings;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use vqvid::config::KvReader;

use commands::{EvalArgs, SplitArg};
use settings::{Preset, Settings};

/// A problem with flags, configuration or inputs; exits with code 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

#[derive(Parser)]
#[command(name = "vqvid", version, about = "Text-to-video generation over discrete visual tokens")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Key/value settings file (`key = value` per line).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base defaults before the config file is applied.
    #[arg(long, global = true, default_value = "desk")]
    preset: String,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides one setting, e.g. `--set train.vq_steps=500`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct SamplingFlags {
    /// greedy or top-k.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    n_candidates: Option<usize>,
    /// toy or http.
    #[arg(long)]
    oracle: Option<String>,
    #[arg(long)]
    oracle_url: Option<String>,
}

impl SamplingFlags {
    fn overrides(&self, o: &mut BTreeMap<String, String>) {
        put(o, "sample.strategy", &self.strategy);
        put(o, "sample.k", &self.k);
        put(o, "sample.temperature", &self.temperature);
        put(o, "sample.candidates", &self.n_candidates);
        put(o, "oracle.kind", &self.oracle);
        put(o, "oracle.url", &self.oracle_url);
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render the moving-digit corpus and its manifest.
    BuildData {
        /// Also store each video's token grid using this VQ-VAE.
        #[arg(long)]
        vqvae_ckpt: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train the frame tokenizer on the training split.
    TrainVqvae {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Train the caption-to-token generator.
    TrainGen {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        vqvae_ckpt: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Generate a video for one caption.
    Generate {
        #[arg(long)]
        text: String,
        #[arg(long)]
        vqvae_ckpt: PathBuf,
        #[arg(long)]
        gen_ckpt: PathBuf,
        #[command(flatten)]
        sampling: SamplingFlags,
    },
    /// Generate for every caption of a split and score the results.
    Eval {
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        vqvae_ckpt: PathBuf,
        #[arg(long)]
        gen_ckpt: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        #[arg(long)]
        limit: Option<usize>,
        /// Pairwise human judgments (JSON lines) to aggregate as well.
        #[arg(long)]
        judgments: Option<PathBuf>,
        #[command(flatten)]
        sampling: SamplingFlags,
    },
    /// Attended-pair counts of sparse versus dense attention.
    BenchAttention {
        /// Comma-separated frame counts.
        #[arg(long)]
        frames: Option<String>,
        #[arg(long)]
        heights: Option<String>,
        #[arg(long)]
        widths: Option<String>,
        #[arg(long)]
        text_len: Option<usize>,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

fn put<T: ToString>(o: &mut BTreeMap<String, String>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        o.insert(key.into(), v.to_string());
    }
}

fn apply_layer(settings: &mut Settings, entries: BTreeMap<String, String>) -> anyhow::Result<()> {
    let mut r = KvReader::new(entries);
    settings.apply(&mut r)?;
    r.finish()?;
    Ok(())
}

fn resolve(cli: &Cli) -> anyhow::Result<Settings> {
    let c = &cli.common;
    let mut settings = Settings::preset(c.preset.parse::<Preset>()?);
    if let Some(path) = &c.config {
        let text = fs::read_to_string(path).map_err(|e| Usage(format!("--config {}: {e}", path.display())))?;
        apply_layer(&mut settings, vqvid::config::parse_kv(&text)?)?;
    }
    let mut sets = BTreeMap::new();
    for item in &c.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Usage(format!("--set expects KEY=VALUE, got `{item}`")))?;
        sets.insert(k.trim().to_string(), v.trim().to_string());
    }
    apply_layer(&mut settings, sets)?;

    let mut flags = BTreeMap::new();
    put(&mut flags, "seed", &c.seed);
    match &cli.command {
        Command::BuildData { count, .. } => put(&mut flags, "data.count", count),
        Command::TrainVqvae { steps, .. } => put(&mut flags, "train.vq_steps", steps),
        Command::TrainGen { steps, .. } => put(&mut flags, "train.gen_steps", steps),
        Command::Generate { sampling, .. } | Command::Eval { sampling, .. } => sampling.overrides(&mut flags),
        Command::BenchAttention { frames, heights, widths, text_len, .. } => {
            put(&mut flags, "bench.frames", frames);
            put(&mut flags, "bench.heights", heights);
            put(&mut flags, "bench.widths", widths);
            put(&mut flags, "bench.text_len", text_len);
        }
    }
    apply_layer(&mut settings, flags)?;
    Ok(settings)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let settings = resolve(cli)?;
    let out = cli.common.out_dir.as_deref();
    match &cli.command {
        Command::BuildData { vqvae_ckpt, .. } => commands::build_data(&settings, out, vqvae_ckpt.as_deref()),
        Command::TrainVqvae { data_dir, .. } => commands::train_vq(&settings, out, data_dir),
        Command::TrainGen { data_dir, vqvae_ckpt, .. } => commands::train_gen(&settings, out, data_dir, vqvae_ckpt),
        Command::Generate { text, vqvae_ckpt, gen_ckpt, .. } => commands::generate(&settings, out, text, vqvae_ckpt, gen_ckpt),
        Command::Eval { data_dir, vqvae_ckpt, gen_ckpt, split, limit, judgments, .. } => commands::eval(
            &settings,
            out,
            EvalArgs {
                data_dir,
                vqvae_ckpt,
                gen_ckpt,
                split: *split,
                limit: *limit,
                judgments: judgments.as_deref(),
            },
        ),
        Command::BenchAttention { json, .. } => commands::bench_attention(&settings, out, *json),
    }
}

/// 1 for bad configuration or input, 2 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<Usage>() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<vqvid::Error>() {
            return match e {
                vqvid::Error::Config { .. } | vqvid::Error::Validation(_) | vqvid::Error::Tokenizer(_) => 1,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
