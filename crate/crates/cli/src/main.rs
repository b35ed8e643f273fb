use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod config;
mod stages;
mod workdir;

use config::{parse_precision, read_config_file, ConfigError, PipelineConfig};
use stages::Ctx;

/// Lyrics alignment, data filtration and singing synthesis pipeline.
#[derive(Parser, Debug)]
#[command(name = "cantor", version)]
struct Cli {
    /// Configuration file (`key = value` lines, `include PATH`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root directory for every artifact.
    #[arg(long, global = true, default_value = "work")]
    workdir: PathBuf,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// `single` or `double`.
    #[arg(long, global = true)]
    precision: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic singing corpus with ground truth.
    GenCorpus {
        /// Extra configuration applied on top of `--config`.
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Corpus directory (default: `corpus.dir` under the workdir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Loudness normalisation, spectrograms, pitch and silence compression.
    Preprocess,
    /// Song-level aligner training with the length curriculum.
    TrainAlign,
    /// Sentence-level fine-tuning of the aligner.
    FineTuneAlign,
    /// Song-level alignment and cutting into sentences.
    Segment,
    /// Sentence-level alignment and phoneme durations.
    ExtractDuration,
    /// Drop sentences whose normalized reward is below the threshold.
    Filter,
    /// Corpus statistics.
    Stats,
    /// Train the singing model on the kept sentences.
    TrainSing,
    /// Synthesize the kept sentences, or a demo recording with `--demo`.
    Synth {
        #[arg(long, requires_all = ["lyrics", "out"])]
        demo: Option<PathBuf>,
        #[arg(long)]
        lyrics: Option<String>,
        /// Timbre reference recording for `--demo`.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Alignment and pitch metrics against the ground truth.
    Eval,
}

fn build_config(cli: &Cli) -> Result<PipelineConfig, ConfigError> {
    let mut pairs = BTreeMap::new();
    if let Some(p) = &cli.config {
        read_config_file(p, &mut pairs)?;
    }
    if let Command::GenCorpus { spec: Some(p), .. } = &cli.command {
        read_config_file(p, &mut pairs)?;
    }
    let mut cfg = PipelineConfig::new(cli.workdir.clone());
    cfg.apply(&pairs)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Some(p) = &cli.precision {
        cfg.precision = parse_precision(p)?;
    }
    if let Command::GenCorpus { out: Some(out), .. } = &cli.command {
        let abs = std::env::current_dir().map(|d| d.join(out)).unwrap_or_else(|_| out.clone());
        cfg.corpus.dir = abs;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli, ctx: &Ctx) -> anyhow::Result<()> {
    match &cli.command {
        Command::GenCorpus { .. } => stages::gen_corpus(ctx),
        Command::Preprocess => stages::preprocess_stage(ctx),
        Command::TrainAlign => stages::train_align(ctx),
        Command::FineTuneAlign => stages::fine_tune_align(ctx),
        Command::Segment => stages::segment(ctx),
        Command::ExtractDuration => stages::extract_duration(ctx),
        Command::Filter => stages::filter(ctx),
        Command::Stats => stages::stats(ctx),
        Command::TrainSing => stages::train_sing(ctx),
        Command::Synth { demo: Some(demo), lyrics, reference, out } => stages::synth_demo(
            ctx,
            demo,
            lyrics.as_deref().unwrap_or_default(),
            reference.as_deref(),
            out.as_deref().expect("clap enforces --out"),
        ),
        Command::Synth { .. } => stages::synth(ctx),
        Command::Eval => stages::eval(ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let cfg = match build_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("cantor: configuration error: {e}");
            return ExitCode::from(2);
        }
    };
    if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global() {
        log::warn!("thread pool already initialised: {e}");
    }
    let ctx = Ctx::new(cfg);
    match run(&cli, &ctx) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cantor: {e:#}");
            ExitCode::from(1)
        }
    }
}
