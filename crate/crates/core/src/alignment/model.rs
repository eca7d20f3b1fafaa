use rand::Rng;
use serde::{Deserialize, Serialize};

use super::loss::trace_info_nce;
use crate::error::{Error, Result};
use crate::numerics::{Gradients, Tape, Tensor, Var};
use crate::towers::{
    trace_text, trace_video, TextTowerConfig, TextTowerParams, VideoMasks, VideoTowerConfig,
    VideoTowerParams,
};

/// B clips with their subtitle and caption token sequences, paired by index.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentBatch {
    clips: Vec<Tensor>,
    subtitles: Vec<Vec<usize>>,
    captions: Vec<Vec<usize>>,
}

impl AlignmentBatch {
    pub fn new(
        clips: Vec<Tensor>,
        subtitles: Vec<Vec<usize>>,
        captions: Vec<Vec<usize>>,
    ) -> Result<Self> {
        if clips.is_empty() {
            return Err(Error::contract("alignment batch is empty"));
        }
        if subtitles.len() != clips.len() || captions.len() != clips.len() {
            return Err(Error::contract(format!(
                "batch lists differ in length: {} clips, {} subtitles, {} captions",
                clips.len(),
                subtitles.len(),
                captions.len()
            )));
        }
        Ok(AlignmentBatch {
            clips,
            subtitles,
            captions,
        })
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn clips(&self) -> &[Tensor] {
        &self.clips
    }

    pub fn subtitles(&self) -> &[Vec<usize>] {
        &self.subtitles
    }

    pub fn captions(&self) -> &[Vec<usize>] {
        &self.captions
    }

    /// The sub-batch at the given positions, in that order.
    pub fn select(&self, index: &[usize]) -> Result<AlignmentBatch> {
        AlignmentBatch::new(
            index.iter().map(|&i| self.clips[i].clone()).collect(),
            index.iter().map(|&i| self.subtitles[i].clone()).collect(),
            index.iter().map(|&i| self.captions[i].clone()).collect(),
        )
    }
}

/// Shapes of both towers.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub video: VideoTowerConfig,
    pub text: TextTowerConfig,
}

impl ModelConfig {
    /// Two-layer d=8 video tower on the toy layout with an 8-wide text
    /// tower sized for [`synthetic_pairs`](super::synthetic_pairs).
    pub fn toy() -> Self {
        ModelConfig {
            video: VideoTowerConfig::tiny(),
            text: TextTowerConfig {
                vocab_size: super::synthetic_vocab(),
                context_length: 16,
                width: 8,
                embed_dim: 8,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.video.validate()?;
        self.text.validate()?;
        if self.video.embed_dim != self.text.embed_dim {
            return Err(Error::config(format!(
                "video embed_dim {} differs from text embed_dim {}",
                self.video.embed_dim, self.text.embed_dim
            )));
        }
        Ok(())
    }
}

/// Every trainable tensor: both towers plus the log-temperature (`[1]`).
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T = Tensor> {
    pub video: VideoTowerParams<T>,
    pub text: TextTowerParams<T>,
    pub log_tau: T,
}

impl ModelParams<Tensor> {
    pub fn init<R: Rng + ?Sized>(
        config: &ModelConfig,
        initial_tau: f64,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        if !(initial_tau > 0.0) || !initial_tau.is_finite() {
            return Err(Error::config(format!(
                "initial tau must be positive, got {initial_tau}"
            )));
        }
        Ok(ModelParams {
            video: VideoTowerParams::init(&config.video, rng)?,
            text: TextTowerParams::init(&config.text, rng)?,
            log_tau: Tensor::new(vec![1], vec![initial_tau.ln()])?,
        })
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.data()[0].exp()
    }

    /// Named tensors in checkpoint order.
    pub fn named(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.map(&mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    /// Overwrites every tensor from `values`, which must follow [`named`](Self::named) order.
    pub fn assign(&mut self, values: &[Tensor]) -> Result<()> {
        let expected = self.named().len();
        if values.len() != expected {
            return Err(Error::Format(format!(
                "expected {expected} tensors, found {}",
                values.len()
            )));
        }
        let mut it = values.iter();
        let mut failure = None;
        self.visit_mut(&mut |name, t| {
            let v = it.next().expect("length checked");
            if v.shape() != t.shape() {
                failure.get_or_insert_with(|| {
                    Error::Format(format!(
                        "{name}: expected shape {:?}, found {:?}",
                        t.shape(),
                        v.shape()
                    ))
                });
            } else {
                *t = v.clone();
            }
        });
        failure.map_or(Ok(()), Err)
    }
}

impl<T> ModelParams<T> {
    pub fn map<U>(&self, f: &mut dyn FnMut(&str, &T) -> U) -> ModelParams<U> {
        ModelParams {
            video: self.video.map("video", f),
            text: self.text.map("text", f),
            log_tau: f("log_tau", &self.log_tau),
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut T)) {
        self.video.visit_mut("video", f);
        self.text.visit_mut("text", f);
        f("log_tau", &mut self.log_tau);
    }
}

/// Batch embeddings and the recorded loss.
#[derive(Clone, Copy, Debug)]
pub struct LossGraph {
    pub total: Var,
    pub video: Var,
    pub subtitle: Var,
    pub caption: Var,
}

/// Records `info_nce(v, s, τ) + info_nce(v, c, τ)` for a batch.
pub fn trace_total_loss(
    tape: &mut Tape,
    batch: &AlignmentBatch,
    params: &ModelParams<Var>,
    config: &ModelConfig,
    masks: &VideoMasks,
) -> Result<LossGraph> {
    let mut v_rows = Vec::with_capacity(batch.len());
    for clip in batch.clips() {
        v_rows.push(trace_video(tape, clip, &params.video, &config.video, masks)?.embedding);
    }
    let text_rows = |tape: &mut Tape, seqs: &[Vec<usize>]| -> Result<Var> {
        let mut rows = Vec::with_capacity(seqs.len());
        for ids in seqs {
            rows.push(trace_text(tape, ids, &params.text, &config.text)?);
        }
        tape.concat_rows(&rows)
    };
    let video = tape.concat_rows(&v_rows)?;
    let subtitle = text_rows(tape, batch.subtitles())?;
    let caption = text_rows(tape, batch.captions())?;

    let neg_log_tau = tape.scale(params.log_tau, -1.0);
    let inv_tau = tape.exp(neg_log_tau);
    let l_vs = trace_info_nce(tape, video, subtitle, inv_tau)?;
    let l_vc = trace_info_nce(tape, video, caption, inv_tau)?;
    let total = tape.add(l_vs, l_vc)?;
    Ok(LossGraph {
        total,
        video,
        subtitle,
        caption,
    })
}

/// Total loss with the given parameters, no gradients.
pub fn total_loss(
    batch: &AlignmentBatch,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<f64> {
    let masks = VideoMasks::new(&config.video)?;
    let mut tape = Tape::new();
    let bound = params.map(&mut |_, t| tape.constant(t.clone()));
    let graph = trace_total_loss(&mut tape, batch, &bound, config, &masks)?;
    Ok(tape.value(graph.total).data()[0])
}

/// Total loss and its gradient for every parameter, in the same tree shape.
pub fn loss_and_grads(
    batch: &AlignmentBatch,
    params: &ModelParams,
    config: &ModelConfig,
    masks: &VideoMasks,
) -> Result<(f64, ModelParams)> {
    let mut tape = Tape::new();
    let bound = params.map(&mut |_, t| tape.leaf(t.clone()));
    let graph = trace_total_loss(&mut tape, batch, &bound, config, masks)?;
    let loss = tape.value(graph.total).data()[0];
    let grads: Gradients = tape.backward(graph.total)?;
    let mut pairs = Vec::new();
    bound.map(&mut |_, v| pairs.push(*v));
    let mut it = pairs.into_iter();
    let out = params.map(&mut |_, t| grads.get_or_zeros(it.next().expect("same tree"), t));
    Ok((loss, out))
}

/// Unit-norm embeddings `B × D` for a batch: (video, subtitle, caption).
pub fn embed_batch(
    batch: &AlignmentBatch,
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<(Tensor, Tensor, Tensor)> {
    let masks = VideoMasks::new(&config.video)?;
    let mut tape = Tape::new();
    let bound = params.map(&mut |_, t| tape.constant(t.clone()));
    let g = trace_total_loss(&mut tape, batch, &bound, config, &masks)?;
    Ok((
        tape.value(g.video).clone(),
        tape.value(g.subtitle).clone(),
        tape.value(g.caption).clone(),
    ))
}
