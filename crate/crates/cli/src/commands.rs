use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use hta_core::alignment::{
    embed_batch, parse_kv, synthetic_pairs, trace_csv, train, AlignmentBatch, ModelConfig,
    ModelParams, TrainConfig,
};
use hta_core::datapipe::{curate_dir, CurateOptions, ScaleTargets, SummarizerSpec};
use hta_core::masks::{
    gst_cls_mask, gst_mst_mask_with, gst_patch_mask_with, gst_stacked_mask_with, slt_mask,
    MaskOptions, MstSelfDirection, TokenLayout,
};
use hta_core::numerics::{io, Tensor};
use hta_core::retrieval::{evaluate_embeddings, Direction, RetrievalReport};
use hta_core::{selftest, Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::manifest::Manifest;
use crate::{
    Cli, Command, CurateArgs, DirectionArg, EvalArgs, Family, MaskAction, MaskDumpArgs, MaskFormat,
    TrainArgs,
};

pub fn dispatch(cli: &Cli, argv: &[String]) -> Result<u8> {
    match &cli.command {
        Command::Mask {
            action: MaskAction::Dump(args),
        } => mask_dump(cli, argv, args),
        Command::Train(args) => run_train(cli, argv, args),
        Command::Eval(args) => run_eval(cli, argv, args),
        Command::Curate(args) => run_curate(cli, argv, args),
        Command::Selftest => run_selftest(cli, argv),
    }
}

/// Prefixes I/O failures with the path involved.
fn at_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(
            io.kind(),
            format!("{}: {io}", path.display()),
        )),
        other => other,
    })
}

fn manifest_path(cli: &Cli, default: Option<PathBuf>) -> Option<PathBuf> {
    cli.manifest.clone().or(default)
}

/// `<file>.manifest.json` next to an output file.
fn beside(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn mask_dump(cli: &Cli, argv: &[String], args: &MaskDumpArgs) -> Result<u8> {
    let layout: TokenLayout = args.layout.parse()?;
    let opts = MaskOptions {
        patch_attends_cls: args.patch_attends_cls,
        ..Default::default()
    };
    let mask = match args.family {
        Family::Slt => slt_mask(&layout)?,
        Family::Gst => gst_stacked_mask_with(&layout, &opts)?,
        Family::GstPatch => gst_patch_mask_with(&layout, &opts)?,
        Family::GstMst => gst_mst_mask_with(&layout, &opts)?,
        Family::GstCls => gst_cls_mask(&layout)?,
    };
    let text = match args.format {
        MaskFormat::Csv => mask.to_csv(),
        MaskFormat::Pgm => mask.to_pgm(),
    };
    write_output(args.out.as_deref(), &text)?;
    let config = format!(
        "layout={}\nfamily={:?}\nformat={:?}\npatch_attends_cls={}\n",
        args.layout, args.family, args.format, args.patch_attends_cls
    );
    Manifest::new("mask dump", argv, cli.seed.unwrap_or(0), config)
        .emit(manifest_path(cli, args.out.as_deref().map(beside)).as_deref())?;
    Ok(0)
}

/// Training and model settings after defaults, config file and flags.
#[derive(Debug, Clone, PartialEq, Serialize)]
struct RunConfig {
    train: TrainConfig,
    model: ModelConfig,
    noise: f64,
}

impl RunConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if self.train.set(key, value)? {
            return Ok(());
        }
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        let video = &mut self.model.video;
        match key {
            "layout" => video.layout = value.parse()?,
            "layers" => video.layers = num(key, value)?,
            "heads" => video.heads = num(key, value)?,
            "embed_dim" => {
                video.embed_dim = num(key, value)?;
                self.model.text.embed_dim = video.embed_dim;
            }
            "mlp_ratio" => video.mlp_ratio = num(key, value)?,
            "patch_size" => video.patch_size = num(key, value)?,
            "patch_attends_cls" => video.mask_options.patch_attends_cls = num(key, value)?,
            "mst_self" => {
                video.mask_options.mst_self = match value {
                    "finer_or_equal" => MstSelfDirection::FinerOrEqual,
                    "coarser_or_equal" => MstSelfDirection::CoarserOrEqual,
                    _ => return Err(Error::Config(format!("mst_self: unknown value {value:?}"))),
                }
            }
            "vocab_size" => self.model.text.vocab_size = num(key, value)?,
            "context_length" => self.model.text.context_length = num(key, value)?,
            "text_width" => self.model.text.width = num(key, value)?,
            "noise" => self.noise = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    fn to_kv(&self) -> String {
        let v = &self.model.video;
        let l = &v.layout;
        let mst_self = match v.mask_options.mst_self {
            MstSelfDirection::FinerOrEqual => "finer_or_equal",
            MstSelfDirection::CoarserOrEqual => "coarser_or_equal",
        };
        format!(
            "{}layout={},{},{},{},{},{}\nlayers={}\nheads={}\nembed_dim={}\nmlp_ratio={}\n\
             patch_size={}\npatch_attends_cls={}\nmst_self={mst_self}\nvocab_size={}\n\
             context_length={}\ntext_width={}\nnoise={}\n",
            self.train.to_kv(),
            l.frames,
            l.patches_per_frame,
            l.levels,
            l.tokens_per_level,
            l.temporal_scale,
            l.width,
            v.layers,
            v.heads,
            v.embed_dim,
            v.mlp_ratio,
            v.patch_size,
            v.mask_options.patch_attends_cls,
            self.model.text.vocab_size,
            self.model.text.context_length,
            self.model.text.width,
            self.noise,
        )
    }
}

/// Precedence, lowest first: built-in defaults, config file, flags.
fn resolve_train_config(cli: &Cli, args: &TrainArgs) -> Result<RunConfig> {
    let mut rc = RunConfig {
        train: TrainConfig::default(),
        model: ModelConfig::toy(),
        noise: 0.1,
    };
    if let Some(path) = &args.config {
        let text = at_path(path, fs::read_to_string(path).map_err(Error::from))?;
        for (k, v) in parse_kv(&text)? {
            rc.set(&k, &v)?;
        }
    }
    if let Some(s) = cli.seed {
        rc.train.seed = s;
    }
    if let Some(s) = args.steps {
        rc.train.steps = s;
    }
    if let Some(lr) = args.base_lr {
        rc.train.base_lr = lr;
    }
    if let Some(lr) = args.final_lr {
        rc.train.final_lr = lr;
    }
    if let Some(b) = args.batch_size {
        rc.train.batch_size = b;
    }
    rc.train.validate()?;
    rc.model.validate()?;
    Ok(rc)
}

fn read_token_lists(path: &Path) -> Result<Vec<Vec<usize>>> {
    at_path(path, hta_core::datapipe::read_jsonl(path))
}

/// `clips.bin` (one `T×H×W×3` tensor per pair), `subtitles.jsonl` and
/// `captions.jsonl` (one JSON array of token ids per line).
fn load_dataset(dir: &Path) -> Result<AlignmentBatch> {
    let clips_path = dir.join("clips.bin");
    let clips = at_path(&clips_path, io::load_all(&clips_path))?;
    let subtitles = read_token_lists(&dir.join("subtitles.jsonl"))?;
    let captions = read_token_lists(&dir.join("captions.jsonl"))?;
    AlignmentBatch::new(clips, subtitles, captions)
}

#[derive(Serialize)]
struct CheckpointInfo<'a> {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    model: &'a ModelConfig,
    train: &'a TrainConfig,
    final_tau: f64,
}

#[derive(Serialize)]
struct TrainReport {
    subtitle_t2v: RetrievalReport,
    caption_t2v: RetrievalReport,
}

fn run_train(cli: &Cli, argv: &[String], args: &TrainArgs) -> Result<u8> {
    let rc = resolve_train_config(cli, args)?;
    let seed = rc.train.seed;
    let data = match &args.data {
        Some(dir) => load_dataset(dir)?,
        None => synthetic_pairs(
            args.synthetic.unwrap_or(64),
            &rc.model,
            rc.noise,
            seed.wrapping_add(1),
        )?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ModelParams::init(&rc.model, rc.train.initial_tau, &mut rng)?;
    let trace = train(&data, &mut params, &rc.model, &rc.train)?;

    let out = &args.out;
    fs::create_dir_all(out)?;
    let named = params.named();
    io::save_all(
        out.join("params.bin"),
        &named.iter().map(|(_, t)| t.clone()).collect::<Vec<_>>(),
    )?;
    let info = CheckpointInfo {
        names: named.iter().map(|(n, _)| n.clone()).collect(),
        shapes: named.iter().map(|(_, t)| t.shape().to_vec()).collect(),
        model: &rc.model,
        train: &rc.train,
        final_tau: params.tau(),
    };
    fs::write(
        out.join("checkpoint.json"),
        serde_json::to_string_pretty(&info)?,
    )?;
    fs::write(out.join("trace.csv"), trace_csv(&trace))?;

    let (v, s, c) = embed_batch(&data, &params, &rc.model)?;
    io::save(out.join("video_emb.bin"), &v)?;
    io::save(out.join("subtitle_emb.bin"), &s)?;
    io::save(out.join("caption_emb.bin"), &c)?;
    let report = TrainReport {
        subtitle_t2v: evaluate_embeddings(&v, &s, Direction::TextToVideo, None)?,
        caption_t2v: evaluate_embeddings(&v, &c, Direction::TextToVideo, None)?,
    };
    fs::write(
        out.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    if let Some(last) = trace.last() {
        println!(
            "trained {} steps on {} pairs: loss {:.6}, tau {:.6}, subtitle t2v R@1 {:.2}",
            trace.len(),
            data.len(),
            last.loss,
            params.tau(),
            report.subtitle_t2v.r1
        );
    }
    Manifest::new("train", argv, seed, rc.to_kv())
        .emit(manifest_path(cli, Some(out.join("manifest.json"))).as_deref())?;
    Ok(0)
}

fn load_embeddings(path: &Path) -> Result<Tensor> {
    let t = at_path(path, io::load(path))?;
    if t.rank() != 2 {
        return Err(Error::Format(format!(
            "{}: expected a rank-2 embedding matrix, found shape {:?}",
            path.display(),
            t.shape()
        )));
    }
    for i in 0..t.rows() {
        let norm = t.row(i).iter().map(|x| x * x).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > 1e-4 {
            return Err(Error::Contract(format!(
                "{}: row {i} has norm {norm}, expected unit norm",
                path.display()
            )));
        }
    }
    Ok(t)
}

fn run_eval(cli: &Cli, argv: &[String], args: &EvalArgs) -> Result<u8> {
    let video = load_embeddings(&args.video_emb)?;
    let text = load_embeddings(&args.text_emb)?;
    let direction = match args.direction {
        DirectionArg::T2v => Direction::TextToVideo,
        DirectionArg::V2t => Direction::VideoToText,
    };
    let report = evaluate_embeddings(&video, &text, direction, args.dsl.then_some(args.alpha))?;
    write_output(
        args.out.as_deref(),
        &(serde_json::to_string_pretty(&report)? + "\n"),
    )?;
    let config = format!(
        "video_emb={}\ntext_emb={}\ndsl={}\nalpha={}\ndirection={:?}\n",
        args.video_emb.display(),
        args.text_emb.display(),
        args.dsl,
        args.alpha,
        args.direction
    );
    Manifest::new("eval", argv, cli.seed.unwrap_or(0), config)
        .emit(manifest_path(cli, args.out.as_deref().map(beside)).as_deref())?;
    Ok(0)
}

fn run_curate(cli: &Cli, argv: &[String], args: &CurateArgs) -> Result<u8> {
    let targets: ScaleTargets = args.scales.parse()?;
    if args.fps.is_nan() || args.fps <= 0.0 {
        return Err(Error::Config(format!(
            "fps must be positive, got {}",
            args.fps
        )));
    }
    if args.word_cap == 0 {
        return Err(Error::Config("word cap must be positive".into()));
    }
    let summarizer = SummarizerSpec {
        word_cap: args.word_cap,
        max_concurrency: args.max_concurrency,
        ..SummarizerSpec::parse(&args.summarizer)?
    };
    let options = CurateOptions {
        targets,
        fps: args.fps,
        summarizer,
    };
    let summary = curate_dir(&args.input, &args.out, &options)?;
    for row in &summary.stats {
        println!(
            "{:>6}: {} clips, mean {:.1} s, {:.2} sentences",
            row.scale.to_string(),
            row.count,
            row.mean_duration,
            row.mean_sentences
        );
    }
    let config = format!(
        "in={}\nscales={}\nfps={}\nsummarizer={}\nword_cap={}\nmax_concurrency={}\n",
        args.input.display(),
        args.scales,
        args.fps,
        args.summarizer,
        args.word_cap,
        args.max_concurrency
    );
    Manifest::new("curate", argv, cli.seed.unwrap_or(0), config)
        .emit(manifest_path(cli, Some(args.out.join("manifest.json"))).as_deref())?;
    Ok(0)
}

fn run_selftest(cli: &Cli, argv: &[String]) -> Result<u8> {
    let checks = selftest::run();
    let mut failed = 0;
    for c in &checks {
        match &c.outcome {
            Ok(()) => println!("PASS {}", c.name),
            Err(e) => {
                failed += 1;
                println!("FAIL {}: {e}", c.name);
            }
        }
    }
    Manifest::new("selftest", argv, cli.seed.unwrap_or(0), String::new())
        .emit(manifest_path(cli, None).as_deref())?;
    Ok(if failed == 0 { 0 } else { 1 })
}
