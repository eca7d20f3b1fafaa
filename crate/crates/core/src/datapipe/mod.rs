//! Clip curation: sentence segmentation, multi-scale clips aligned to
//! sentence boundaries, caption frame schedules and text summaries.

mod clips;
mod segment;
mod summarize;

pub use clips::{
    caption_frames, extract_clips, join_paragraph, pack, ClipRecord, Scale, ScaleTargets,
};
pub use segment::{segment, validate_sentences, TranscriptSentence, Word};
pub use summarize::{
    prompt, summarize, summarize_or_fallback, summarize_records, truncate_words, word_count,
    SummarizerKind, SummarizerSpec, CREDENTIAL_ENV, DEFAULT_WORD_CAP,
};

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-scale averages over a set of clips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleStats {
    pub scale: Scale,
    pub count: usize,
    pub mean_duration: f64,
    pub mean_sentences: f64,
    pub mean_subtitle_words: f64,
    pub mean_summarized_subtitle_words: f64,
    pub mean_caption_words: f64,
    pub mean_summarized_caption_words: f64,
}

/// One row per scale present in `clips`, in scale order.
pub fn stats(clips: &[ClipRecord]) -> Result<Vec<ScaleStats>> {
    if clips.is_empty() {
        return Err(Error::contract("no clips to summarize"));
    }
    let mut groups: BTreeMap<Scale, Vec<&ClipRecord>> = BTreeMap::new();
    for c in clips {
        groups.entry(c.scale).or_default().push(c);
    }
    Ok(groups
        .into_iter()
        .map(|(scale, group)| {
            let n = group.len() as f64;
            let mean = |f: &dyn Fn(&ClipRecord) -> f64| group.iter().map(|c| f(c)).sum::<f64>() / n;
            ScaleStats {
                scale,
                count: group.len(),
                mean_duration: mean(&|c| c.duration()),
                mean_sentences: mean(&|c| c.sentence_count() as f64),
                mean_subtitle_words: mean(&|c| word_count(&c.subtitle) as f64),
                mean_summarized_subtitle_words: mean(&|c| {
                    word_count(&c.summarized_subtitle) as f64
                }),
                mean_caption_words: mean(&|c| word_count(&c.caption) as f64),
                mean_summarized_caption_words: mean(&|c| word_count(&c.summarized_caption) as f64),
            }
        })
        .collect())
}

/// A transcript line: either timed words or pre-segmented sentences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Transcript {
    Words {
        video_id: String,
        words: Vec<Word>,
    },
    Sentences {
        video_id: String,
        sentences: Vec<TranscriptSentence>,
    },
}

impl Transcript {
    pub fn video_id(&self) -> &str {
        match self {
            Transcript::Words { video_id, .. } | Transcript::Sentences { video_id, .. } => video_id,
        }
    }

    pub fn sentences(&self) -> Result<Vec<TranscriptSentence>> {
        match self {
            Transcript::Words { words, .. } => segment(words),
            Transcript::Sentences { sentences, .. } => {
                validate_sentences(sentences)?;
                Ok(sentences.clone())
            }
        }
    }
}

/// One generated frame caption from the sidecar file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameCaption {
    pub video_id: String,
    pub t: f64,
    pub caption: String,
}

/// Name of the optional caption sidecar inside a curation input directory.
pub const CAPTION_SIDECAR: &str = "captions.jsonl";

pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut file, item)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

/// Sets each clip's frame schedule and caption text. A frame takes the
/// sidecar caption of the same video whose timestamp is nearest, within
/// half a frame period.
pub fn attach_captions(
    clips: &mut [ClipRecord],
    captions: &[FrameCaption],
    fps: f64,
) -> Result<()> {
    let mut by_video: BTreeMap<&str, Vec<&FrameCaption>> = BTreeMap::new();
    for c in captions {
        by_video.entry(c.video_id.as_str()).or_default().push(c);
    }
    let tolerance = 0.5 / fps;
    for clip in clips.iter_mut() {
        clip.frames = caption_frames(clip.t0, clip.t1, fps)?;
        let Some(pool) = by_video.get(clip.video_id.as_str()) else {
            continue;
        };
        let mut texts = Vec::new();
        for &t in &clip.frames {
            let best = pool
                .iter()
                .map(|c| ((c.t - t).abs(), c))
                .filter(|(d, _)| *d <= tolerance)
                .min_by(|a, b| a.0.total_cmp(&b.0));
            if let Some((_, c)) = best {
                texts.push(c.caption.as_str());
            }
        }
        clip.caption = join_paragraph(&texts);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurateOptions {
    pub targets: ScaleTargets,
    pub fps: f64,
    pub summarizer: SummarizerSpec,
}

impl Default for CurateOptions {
    fn default() -> Self {
        CurateOptions {
            targets: ScaleTargets::default(),
            fps: 0.1,
            summarizer: SummarizerSpec::default(),
        }
    }
}

/// Transcript files (`*.jsonl` except the caption sidecar) in name order.
fn transcript_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension().is_some_and(|e| e == "jsonl")
                && p.file_name().is_some_and(|n| n != CAPTION_SIDECAR)
        })
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurateSummary {
    pub videos: usize,
    pub clips: usize,
    pub stats: Vec<ScaleStats>,
}

/// Runs the whole pipeline over `input` and writes `clips.jsonl` and
/// `stats.json` into `output`.
pub fn curate_dir(input: &Path, output: &Path, options: &CurateOptions) -> Result<CurateSummary> {
    let mut transcripts = Vec::new();
    for file in transcript_files(input)? {
        transcripts.extend(read_jsonl::<Transcript>(&file)?);
    }
    if transcripts.is_empty() {
        return Err(Error::config(format!(
            "no transcripts found in {}",
            input.display()
        )));
    }
    let sidecar = input.join(CAPTION_SIDECAR);
    let captions: Vec<FrameCaption> = if sidecar.exists() {
        read_jsonl(&sidecar)?
    } else {
        Vec::new()
    };

    let mut clips = Vec::new();
    for t in &transcripts {
        let sentences = t.sentences()?;
        if sentences.is_empty() {
            continue;
        }
        clips.extend(extract_clips(t.video_id(), &sentences, &options.targets));
    }
    attach_captions(&mut clips, &captions, options.fps)?;
    summarize_records(&mut clips, &options.summarizer)?;
    let table = stats(&clips)?;

    fs::create_dir_all(output)?;
    write_jsonl(&output.join("clips.jsonl"), &clips)?;
    let summary = CurateSummary {
        videos: transcripts.len(),
        clips: clips.len(),
        stats: table,
    };
    fs::write(
        output.join("stats.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    Ok(summary)
}

/// Back-to-back sentences with exponentially distributed durations.
pub fn synthetic_corpus(n: usize, mean_duration: f64, seed: u64) -> Vec<TranscriptSentence> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let exp = Exp::new(1.0 / mean_duration).expect("positive mean");
    let mut t = 0.0;
    (0..n)
        .map(|i| {
            let d = exp.sample(&mut rng).max(1e-3);
            let words = 1 + (d * 2.5) as usize;
            let text = (0..words)
                .map(|w| {
                    if w + 1 == words {
                        format!("w{i}_{w}.")
                    } else {
                        format!("w{i}_{w}")
                    }
                })
                .collect::<Vec<_>>()
                .join(" ");
            let s = TranscriptSentence {
                text,
                t0: t,
                t1: t + d,
            };
            t += d;
            s
        })
        .collect()
}
