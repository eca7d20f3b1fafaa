use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::segment::TranscriptSentence;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Short,
    Medium,
    Long,
}

impl Scale {
    pub const ALL: [Scale; 3] = [Scale::Short, Scale::Medium, Scale::Long];

    /// Short clips keep their raw texts.
    pub fn is_summarized(self) -> bool {
        self != Scale::Short
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Short => "short",
            Scale::Medium => "medium",
            Scale::Long => "long",
        })
    }
}

/// Target mean duration per scale, in seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleTargets(pub [f64; 3]);

impl Default for ScaleTargets {
    fn default() -> Self {
        ScaleTargets([13.0, 30.0, 60.0])
    }
}

impl ScaleTargets {
    pub fn iter(&self) -> impl Iterator<Item = (Scale, f64)> + '_ {
        Scale::ALL.into_iter().zip(self.0)
    }
}

impl FromStr for ScaleTargets {
    type Err = Error;

    /// Three ascending positive durations, e.g. `13,30,60`.
    fn from_str(s: &str) -> Result<Self> {
        let values = s
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::config(format!("cannot parse scales {s:?}")))?;
        let &[a, b, c] = values.as_slice() else {
            return Err(Error::config("exactly three scale targets are required"));
        };
        if !(a > 0.0 && a < b && b < c && c.is_finite()) {
            return Err(Error::config(
                "scale targets must be positive and ascending",
            ));
        }
        Ok(ScaleTargets([a, b, c]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    pub video_id: String,
    /// Inclusive sentence index range.
    pub sentences: [usize; 2],
    pub t0: f64,
    pub t1: f64,
    pub scale: Scale,
    pub subtitle: String,
    pub caption: String,
    pub summarized_subtitle: String,
    pub summarized_caption: String,
    /// Caption frame schedule.
    #[serde(default)]
    pub frames: Vec<f64>,
}

impl ClipRecord {
    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn sentence_count(&self) -> usize {
        self.sentences[1] - self.sentences[0] + 1
    }
}

/// Packs consecutive sentences into clips near `target` seconds.
///
/// A clip grows until adding the next sentence would reach the target; that
/// sentence is included when doing so lands closer to the target than
/// stopping before it. A trailing clip shorter than half the target joins
/// the previous one. Returns inclusive index ranges covering every sentence
/// exactly once.
pub fn pack(sentences: &[TranscriptSentence], target: f64) -> Vec<[usize; 2]> {
    let mut out: Vec<[usize; 2]> = Vec::new();
    let mut start = 0;
    let mut k = 0;
    while k < sentences.len() {
        let with = sentences[k].t1 - sentences[start].t0;
        if with >= target {
            let without = if k > start {
                sentences[k - 1].t1 - sentences[start].t0
            } else {
                f64::NEG_INFINITY
            };
            if target - without < with - target {
                out.push([start, k - 1]);
                start = k;
                continue;
            }
            out.push([start, k]);
            start = k + 1;
        }
        k += 1;
    }
    if start < sentences.len() {
        let span = sentences[sentences.len() - 1].t1 - sentences[start].t0;
        match out.last_mut() {
            Some(last) if span < target / 2.0 => last[1] = sentences.len() - 1,
            _ => out.push([start, sentences.len() - 1]),
        }
    }
    out
}

fn join_text(sentences: &[TranscriptSentence]) -> String {
    sentences
        .iter()
        .map(|s| s.text.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// One independent packing pass per scale. Captions and summaries start
/// empty and raw respectively; see [`attach_captions`](super::attach_captions)
/// and [`summarize_records`](super::summarize_records).
pub fn extract_clips(
    video_id: &str,
    sentences: &[TranscriptSentence],
    targets: &ScaleTargets,
) -> Vec<ClipRecord> {
    let mut out = Vec::new();
    for (scale, target) in targets.iter() {
        for [a, b] in pack(sentences, target) {
            let subtitle = join_text(&sentences[a..=b]);
            out.push(ClipRecord {
                video_id: video_id.to_string(),
                sentences: [a, b],
                t0: sentences[a].t0,
                t1: sentences[b].t1,
                scale,
                summarized_subtitle: subtitle.clone(),
                subtitle,
                caption: String::new(),
                summarized_caption: String::new(),
                frames: Vec::new(),
            });
        }
    }
    out
}

/// Frame timestamps `t0 + k/fps` inside the closed clip interval; always at
/// least the start.
pub fn caption_frames(t0: f64, t1: f64, fps: f64) -> Result<Vec<f64>> {
    if !(fps > 0.0) || !fps.is_finite() {
        return Err(Error::contract(format!("fps must be positive, got {fps}")));
    }
    let duration = (t1 - t0).max(0.0);
    let count = ((duration * fps + 1e-9).floor() as usize) + 1;
    Ok((0..count).map(|k| t0 + k as f64 / fps).collect())
}

/// Joins several descriptions into one paragraph query.
pub fn join_paragraph<S: AsRef<str>>(texts: &[S]) -> String {
    texts
        .iter()
        .map(|t| t.as_ref().trim())
        .filter(|t| !t.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}
