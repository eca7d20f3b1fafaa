//! `hta`: mask dumps, training, retrieval evaluation and clip curation.

mod commands;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hta_core::Error;

#[derive(Parser, Debug)]
#[command(
    name = "hta",
    version,
    about = "Hierarchical temporal attention toolkit"
)]
pub struct Cli {
    /// Seed for every random draw; identical argv and seed give identical outputs.
    /// Overrides any `seed` in a config file; 0 when neither is given.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Where to write the reproducibility manifest. Defaults to the command's
    /// output location; commands writing only to stdout log it instead.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Attention mask utilities.
    Mask {
        #[command(subcommand)]
        action: MaskAction,
    },
    /// Train both towers with the dual-text contrastive objective.
    Train(TrainArgs),
    /// Retrieval metrics from paired embedding files.
    Eval(EvalArgs),
    /// Build multi-scale clips from transcripts.
    Curate(CurateArgs),
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Subcommand, Debug)]
pub enum MaskAction {
    /// Write an attention mask as CSV ("0"/"-inf") or PGM.
    Dump(MaskDumpArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Family {
    Slt,
    /// The full stacked GST mask.
    Gst,
    GstPatch,
    GstMst,
    GstCls,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum MaskFormat {
    Csv,
    Pgm,
}

#[derive(Args, Debug)]
pub struct MaskDumpArgs {
    /// `T,N,U,V,r`
    #[arg(long)]
    pub layout: String,
    #[arg(long, value_enum)]
    pub family: Family,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: MaskFormat,
    /// Let patch rows attend the [CLS] column.
    #[arg(long)]
    pub patch_attends_cls: bool,
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Flat key=value file of training and model settings.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory (clips.bin, subtitles.jsonl, captions.jsonl).
    #[arg(long, conflicts_with = "synthetic")]
    pub data: Option<PathBuf>,
    /// Train on this many generated pairs instead of a dataset.
    #[arg(long)]
    pub synthetic: Option<usize>,
    /// Checkpoint directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub base_lr: Option<f64>,
    #[arg(long)]
    pub final_lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum DirectionArg {
    T2v,
    V2t,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub video_emb: PathBuf,
    #[arg(long)]
    pub text_emb: PathBuf,
    /// Re-score with dual softmax before ranking.
    #[arg(long)]
    pub dsl: bool,
    #[arg(long, default_value_t = hta_core::retrieval::DEFAULT_DSL_ALPHA)]
    pub alpha: f64,
    #[arg(long, value_enum, default_value = "t2v")]
    pub direction: DirectionArg,
    /// Report file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CurateArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "13,30,60")]
    pub scales: String,
    #[arg(long, default_value_t = 0.1)]
    pub fps: f64,
    /// `fallback` or the URL of a summarization endpoint.
    #[arg(long, default_value = "fallback")]
    pub summarizer: String,
    #[arg(long, default_value_t = hta_core::datapipe::DEFAULT_WORD_CAP)]
    pub word_cap: usize,
    #[arg(long, default_value_t = 4)]
    pub max_concurrency: usize,
}

fn exit_code(err: &Error) -> u8 {
    if err.is_environmental() {
        2
    } else {
        1
    }
}

pub fn run<I, T>(argv: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let argv: Vec<String> = argv
        .iter()
        .map(|a| a.to_string_lossy().into_owned())
        .collect();
    match commands::dispatch(&cli, &argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    ExitCode::from(run(std::env::args_os()))
}
