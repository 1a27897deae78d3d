//! Command-line entry points. Exit codes: 0 success, 1 processing error,
//! 2 usage or configuration error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use avsm_core::data::ToyCorpusConfig;
use clap::{Args, Parser, Subcommand};

use crate::config::{load_run_config, RunConfig};
use crate::enhance::enhance_file;
use crate::error::{Error, Result};
use crate::eval::{evaluate_manifest, EvalSource};
use crate::manifest::generate_toy_corpus;
use crate::train::train;

#[derive(Debug, Parser)]
#[command(name = "avsm", version, about = "Audio-visual speech enhancement with time-frequency Mamba blocks")]
pub struct Cli {
    /// Worker threads for scene-parallel work.
    #[arg(long, global = true, env = "AVSM_THREADS")]
    pub threads: Option<usize>,
    /// Print the default run configuration as JSON and exit.
    #[arg(long)]
    pub print_config: bool,
    #[command(subcommand)]
    pub command: Option<Command>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic toy corpus with its manifest.
    Mix(MixArgs),
    /// Train on the scenes of a manifest.
    Train(TrainArgs),
    /// Enhance one WAV file.
    Enhance(EnhanceArgs),
    /// Score a manifest with a checkpoint or the unprocessed input.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[arg(long)]
    pub spec_count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Scene length in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Continue from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EnhanceArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Visual embeddings of the target speaker.
    #[arg(long)]
    pub vemb: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, conflicts_with = "passthrough", required_unless_present = "passthrough")]
    pub checkpoint: Option<PathBuf>,
    /// Score the noisy input unchanged.
    #[arg(long)]
    pub passthrough: bool,
    #[arg(long)]
    pub manifest: PathBuf,
    /// JSON report path; a text table is written beside it.
    #[arg(long)]
    pub report: PathBuf,
}

fn ensure_writable_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .and_then(|_| {
            let probe = dir.join(".avsm-write-probe");
            std::fs::write(&probe, b"")?;
            std::fs::remove_file(probe)
        })
        .map_err(|e| Error::Usage(format!("output directory {} is not writable: {e}", dir.display())))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Usage(format!("{what} {} does not exist", path.display())))
    }
}

pub fn cmd_mix(a: &MixArgs) -> Result<()> {
    ensure_writable_dir(&a.out)?;
    let mut cfg = ToyCorpusConfig::default();
    if let Some(d) = a.duration {
        cfg.duration_s = d;
    }
    cfg.validate().map_err(|e| Error::Usage(e.to_string()))?;
    let m = generate_toy_corpus(a.spec_count, a.seed, &a.out, &cfg)?;
    println!("wrote {} scenes to {}", m.scenes.len(), a.out.display());
    Ok(())
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = load_run_config(&a.config)?;
    if !cfg.paths.manifest.is_file() {
        return Err(Error::Config(format!("paths.manifest: {} does not exist", cfg.paths.manifest.display())));
    }
    if let Some(r) = &a.resume {
        require_file(r, "checkpoint")?;
    }
    for d in [&cfg.paths.checkpoint_dir, &cfg.paths.report_dir] {
        ensure_writable_dir(d)?;
    }
    let summary = train(&cfg, a.resume.as_deref(), |r| {
        println!(
            "step {:>6}  loss {:.5}  {} SI-SDR {:.2} dB ({:+.2} dB)",
            r.step, r.loss.total, r.held_scene, r.si_sdr_db, r.si_sdr_improvement_db
        )
    })?;
    println!("finished at step {}; checkpoint {}", summary.steps, summary.checkpoint.display());
    Ok(())
}

pub fn cmd_enhance(a: &EnhanceArgs) -> Result<()> {
    require_file(&a.checkpoint, "checkpoint")?;
    require_file(&a.input, "input")?;
    if let Some(v) = &a.vemb {
        require_file(v, "embedding file")?;
    }
    enhance_file(&a.checkpoint, &a.input, a.vemb.as_deref(), &a.out)?;
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    require_file(&a.manifest, "manifest")?;
    let source = match &a.checkpoint {
        Some(c) => {
            require_file(c, "checkpoint")?;
            EvalSource::Checkpoint(c.clone())
        }
        None => EvalSource::Passthrough,
    };
    let report = evaluate_manifest(&a.manifest, &source, &a.report)?;
    print!("{}", report.to_table());
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(format!("cannot set thread count: {e}")))?;
    }
    if cli.print_config {
        print!("{}", RunConfig::default().to_json_pretty());
        return Ok(());
    }
    match &cli.command {
        Some(Command::Mix(a)) => cmd_mix(a),
        Some(Command::Train(a)) => cmd_train(a),
        Some(Command::Enhance(a)) => cmd_enhance(a),
        Some(Command::Eval(a)) => cmd_eval(a),
        None => Err(Error::Usage("a subcommand is required (mix, train, enhance, eval)".into())),
    }
}

/// Parses `args` and runs the command, returning the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
