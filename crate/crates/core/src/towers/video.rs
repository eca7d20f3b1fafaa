//! Video encoder with hierarchical temporal attention.
//!
//! Each layer runs spatially-local temporal attention over the patch
//! tokens, then masked global attention over the whole sequence, then an
//! MLP. The `trace_*` functions record onto a [`Tape`]; the plain functions
//! evaluate with constant parameters.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::attention::{mmsa, AttentionParams};
use super::{bind_const, join, randn};
use crate::error::{Error, Result};
use crate::masks::{gst_stacked_mask_with, slt_mask, MaskOptions, TokenLayout};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoTowerConfig {
    pub layout: TokenLayout,
    /// L
    pub layers: usize,
    pub heads: usize,
    /// D
    pub embed_dim: usize,
    pub mlp_ratio: usize,
    /// P
    pub patch_size: usize,
    #[serde(default)]
    pub mask_options: MaskOptions,
}

impl Default for VideoTowerConfig {
    fn default() -> Self {
        VideoTowerConfig {
            layout: TokenLayout::toy(64),
            layers: 4,
            heads: 4,
            embed_dim: 32,
            mlp_ratio: 4,
            patch_size: 4,
            mask_options: MaskOptions::default(),
        }
    }
}

impl VideoTowerConfig {
    /// d=8, two heads, two layers on the toy layout; small enough for
    /// element-wise finite differences.
    pub fn tiny() -> Self {
        VideoTowerConfig {
            layout: TokenLayout::toy(8),
            layers: 2,
            heads: 2,
            embed_dim: 8,
            ..Default::default()
        }
    }

    pub fn width(&self) -> usize {
        self.layout.width
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn mlp_width(&self) -> usize {
        self.mlp_ratio * self.width()
    }

    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        if self.heads == 0 || !self.width().is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "width {} is not divisible by {} heads",
                self.width(),
                self.heads
            )));
        }
        if self.layers == 0 || self.embed_dim == 0 || self.mlp_ratio == 0 || self.patch_size == 0 {
            return Err(Error::config(
                "layers, embed_dim, mlp_ratio and patch_size must be positive",
            ));
        }
        Ok(())
    }

    /// Side length of square frames that yield exactly N patches, if any.
    pub fn square_frame_side(&self) -> Option<usize> {
        let n = self.layout.patches_per_frame;
        let side = (n as f64).sqrt().round() as usize;
        (side * side == n).then_some(side * self.patch_size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T = Tensor> {
    pub slt_ln_gain: T,
    pub slt_ln_bias: T,
    pub slt: AttentionParams<T>,
    pub gst_ln_gain: T,
    pub gst_ln_bias: T,
    pub gst: AttentionParams<T>,
    pub mlp_ln_gain: T,
    pub mlp_ln_bias: T,
    pub mlp_w1: T,
    pub mlp_b1: T,
    pub mlp_w2: T,
    pub mlp_b2: T,
}

impl LayerParams<Tensor> {
    pub fn init<R: Rng + ?Sized>(config: &VideoTowerConfig, rng: &mut R) -> Self {
        let (d, h) = (config.width(), config.mlp_width());
        LayerParams {
            slt_ln_gain: Tensor::filled(&[d], 1.0),
            slt_ln_bias: Tensor::zeros(&[d]),
            slt: AttentionParams::init(d, true, rng),
            gst_ln_gain: Tensor::filled(&[d], 1.0),
            gst_ln_bias: Tensor::zeros(&[d]),
            gst: AttentionParams::init(d, false, rng),
            mlp_ln_gain: Tensor::filled(&[d], 1.0),
            mlp_ln_bias: Tensor::zeros(&[d]),
            mlp_w1: randn(rng, &[d, h]),
            mlp_b1: Tensor::zeros(&[h]),
            mlp_w2: randn(rng, &[h, d]),
            mlp_b2: Tensor::zeros(&[d]),
        }
    }
}

impl<T> LayerParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> LayerParams<U> {
        LayerParams {
            slt_ln_gain: f(&join(prefix, "slt_ln_gain"), &self.slt_ln_gain),
            slt_ln_bias: f(&join(prefix, "slt_ln_bias"), &self.slt_ln_bias),
            slt: self.slt.map(&join(prefix, "slt"), f),
            gst_ln_gain: f(&join(prefix, "gst_ln_gain"), &self.gst_ln_gain),
            gst_ln_bias: f(&join(prefix, "gst_ln_bias"), &self.gst_ln_bias),
            gst: self.gst.map(&join(prefix, "gst"), f),
            mlp_ln_gain: f(&join(prefix, "mlp_ln_gain"), &self.mlp_ln_gain),
            mlp_ln_bias: f(&join(prefix, "mlp_ln_bias"), &self.mlp_ln_bias),
            mlp_w1: f(&join(prefix, "mlp_w1"), &self.mlp_w1),
            mlp_b1: f(&join(prefix, "mlp_b1"), &self.mlp_b1),
            mlp_w2: f(&join(prefix, "mlp_w2"), &self.mlp_w2),
            mlp_b2: f(&join(prefix, "mlp_b2"), &self.mlp_b2),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        f(&join(prefix, "slt_ln_gain"), &mut self.slt_ln_gain);
        f(&join(prefix, "slt_ln_bias"), &mut self.slt_ln_bias);
        self.slt.visit_mut(&join(prefix, "slt"), f);
        f(&join(prefix, "gst_ln_gain"), &mut self.gst_ln_gain);
        f(&join(prefix, "gst_ln_bias"), &mut self.gst_ln_bias);
        self.gst.visit_mut(&join(prefix, "gst"), f);
        f(&join(prefix, "mlp_ln_gain"), &mut self.mlp_ln_gain);
        f(&join(prefix, "mlp_ln_bias"), &mut self.mlp_ln_bias);
        f(&join(prefix, "mlp_w1"), &mut self.mlp_w1);
        f(&join(prefix, "mlp_b1"), &mut self.mlp_b1);
        f(&join(prefix, "mlp_w2"), &mut self.mlp_w2);
        f(&join(prefix, "mlp_b2"), &mut self.mlp_b2);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoTowerParams<T = Tensor> {
    /// `P²·3 × d`
    pub patch_w: T,
    pub patch_b: T,
    /// `N × d`
    pub spatial_pos: T,
    /// `T × d`
    pub temporal_pos: T,
    /// `1 × d`
    pub cls: T,
    /// `U·V × d`; absent when U = 0. These slots get no position embedding.
    pub mst: Option<T>,
    pub layers: Vec<LayerParams<T>>,
    /// `d × D`
    pub proj: T,
}

impl VideoTowerParams<Tensor> {
    /// Scaled-normal initialisation. The SlT output projection and the
    /// temporal position table start at zero, so a freshly initialised
    /// tower treats every frame like an independent image.
    pub fn init<R: Rng + ?Sized>(config: &VideoTowerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layout = &config.layout;
        let d = config.width();
        Ok(VideoTowerParams {
            patch_w: randn(rng, &[config.patch_dim(), d]),
            patch_b: Tensor::zeros(&[d]),
            spatial_pos: randn(rng, &[layout.patches_per_frame, d]),
            temporal_pos: Tensor::zeros(&[layout.frames, d]),
            cls: randn(rng, &[1, d]),
            mst: (layout.levels > 0).then(|| randn(rng, &[layout.mst_count(), d])),
            layers: (0..config.layers)
                .map(|_| LayerParams::init(config, rng))
                .collect(),
            proj: randn(rng, &[d, config.embed_dim]),
        })
    }
}

impl<T> VideoTowerParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> VideoTowerParams<U> {
        VideoTowerParams {
            patch_w: f(&join(prefix, "patch_w"), &self.patch_w),
            patch_b: f(&join(prefix, "patch_b"), &self.patch_b),
            spatial_pos: f(&join(prefix, "spatial_pos"), &self.spatial_pos),
            temporal_pos: f(&join(prefix, "temporal_pos"), &self.temporal_pos),
            cls: f(&join(prefix, "cls"), &self.cls),
            mst: self.mst.as_ref().map(|m| f(&join(prefix, "mst"), m)),
            layers: self
                .layers
                .iter()
                .enumerate()
                .map(|(i, l)| l.map(&join(prefix, &format!("layers.{i}")), f))
                .collect(),
            proj: f(&join(prefix, "proj"), &self.proj),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        f(&join(prefix, "patch_w"), &mut self.patch_w);
        f(&join(prefix, "patch_b"), &mut self.patch_b);
        f(&join(prefix, "spatial_pos"), &mut self.spatial_pos);
        f(&join(prefix, "temporal_pos"), &mut self.temporal_pos);
        f(&join(prefix, "cls"), &mut self.cls);
        if let Some(m) = &mut self.mst {
            f(&join(prefix, "mst"), m);
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("layers.{i}")), f);
        }
        f(&join(prefix, "proj"), &mut self.proj);
    }
}

/// Both attention masks of a layout, built once and shared by every layer.
#[derive(Clone, Debug)]
pub struct VideoMasks {
    pub slt: Arc<Tensor>,
    pub gst: Arc<Tensor>,
}

impl VideoMasks {
    pub fn new(config: &VideoTowerConfig) -> Result<Self> {
        Ok(VideoMasks {
            slt: Arc::new(slt_mask(&config.layout)?.entries().clone()),
            gst: Arc::new(
                gst_stacked_mask_with(&config.layout, &config.mask_options)?
                    .entries()
                    .clone(),
            ),
        })
    }
}

/// Output of one attention block together with its per-head weights.
#[derive(Clone, Debug)]
pub struct BlockOutput {
    pub out: Var,
    pub weights: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct VideoForward {
    /// `1 × D`, unit norm.
    pub embedding: Var,
    /// Z⁰, `S × d`.
    pub tokens: Var,
    /// `(SlT, GST)` per layer.
    pub layers: Vec<(BlockOutput, BlockOutput)>,
}

/// Splits a `T×H×W×3` clip into `T·N` flattened `P×P×3` patches, frame-major,
/// patches row-major within a frame.
pub fn patchify(clip: &Tensor, config: &VideoTowerConfig) -> Result<Tensor> {
    let layout = &config.layout;
    let p = config.patch_size;
    let &[t, h, w, c] = clip.shape() else {
        return Err(Error::config(format!(
            "clip must be T×H×W×3, got {:?}",
            clip.shape()
        )));
    };
    if c != 3 || t != layout.frames {
        return Err(Error::config(format!(
            "clip shape {:?} does not match {} RGB frames",
            clip.shape(),
            layout.frames
        )));
    }
    if h % p != 0 || w % p != 0 {
        return Err(Error::config(format!(
            "frame {h}×{w} is not divisible by patch size {p}"
        )));
    }
    let (ph, pw) = (h / p, w / p);
    if ph * pw != layout.patches_per_frame {
        return Err(Error::config(format!(
            "frame {h}×{w} with patch size {p} gives {} patches, layout expects {}",
            ph * pw,
            layout.patches_per_frame
        )));
    }
    let src = clip.data();
    let mut out = Vec::with_capacity(clip.numel());
    for frame in 0..t {
        for py in 0..ph {
            for px in 0..pw {
                for y in 0..p {
                    let row = ((frame * h + py * p + y) * w + px * p) * 3;
                    out.extend_from_slice(&src[row..row + p * 3]);
                }
            }
        }
    }
    Tensor::new(vec![t * ph * pw, p * p * 3], out)
}

pub fn trace_embed_frames(
    tape: &mut Tape,
    clip: &Tensor,
    params: &VideoTowerParams<Var>,
    config: &VideoTowerConfig,
) -> Result<Var> {
    let layout = &config.layout;
    let patches = tape.constant(patchify(clip, config)?);
    let x = tape.matmul(patches, params.patch_w)?;
    let x = tape.add_row(x, params.patch_b)?;
    let n = layout.patches_per_frame;
    let spatial_idx: Vec<usize> = (0..layout.patch_count()).map(|i| i % n).collect();
    let temporal_idx: Vec<usize> = (0..layout.patch_count()).map(|i| i / n).collect();
    let sp = tape.gather_rows(params.spatial_pos, &spatial_idx)?;
    let tp = tape.gather_rows(params.temporal_pos, &temporal_idx)?;
    let x = tape.add(x, sp)?;
    tape.add(x, tp)
}

fn check_sequence(tape: &Tape, z: Var, config: &VideoTowerConfig) -> Result<()> {
    let expected = [config.layout.seq_len(), config.width()];
    if tape.value(z).shape() != expected {
        return Err(Error::Dimension {
            op: "video block",
            lhs: tape.value(z).shape().to_vec(),
            rhs: expected.to_vec(),
        });
    }
    Ok(())
}

/// Spatially-local temporal attention over the patch rows; `[CLS]` and
/// `[MST]` rows pass through untouched.
pub fn trace_slt_block(
    tape: &mut Tape,
    z: Var,
    layer: &LayerParams<Var>,
    config: &VideoTowerConfig,
    masks: &VideoMasks,
) -> Result<BlockOutput> {
    check_sequence(tape, z, config)?;
    let (first, s) = (config.layout.first_patch(), config.layout.seq_len());
    let prefix = tape.slice_rows(z, 0, first)?;
    let patches = tape.slice_rows(z, first, s)?;
    let h = tape.layer_norm(patches, layer.slt_ln_gain, layer.slt_ln_bias)?;
    let (attn, weights) = mmsa(tape, h, &layer.slt, &masks.slt, config.heads)?;
    let patches = tape.add(attn, patches)?;
    let out = tape.concat_rows(&[prefix, patches])?;
    Ok(BlockOutput { out, weights })
}

/// Global spatio-temporal attention with residual, then the MLP with
/// residual.
pub fn trace_gst_block(
    tape: &mut Tape,
    z: Var,
    layer: &LayerParams<Var>,
    config: &VideoTowerConfig,
    masks: &VideoMasks,
) -> Result<BlockOutput> {
    check_sequence(tape, z, config)?;
    let h = tape.layer_norm(z, layer.gst_ln_gain, layer.gst_ln_bias)?;
    let (attn, weights) = mmsa(tape, h, &layer.gst, &masks.gst, config.heads)?;
    let z = tape.add(attn, z)?;
    let h = tape.layer_norm(z, layer.mlp_ln_gain, layer.mlp_ln_bias)?;
    let h = tape.matmul(h, layer.mlp_w1)?;
    let h = tape.add_row(h, layer.mlp_b1)?;
    let h = tape.gelu(h);
    let h = tape.matmul(h, layer.mlp_w2)?;
    let h = tape.add_row(h, layer.mlp_b2)?;
    let out = tape.add(h, z)?;
    Ok(BlockOutput { out, weights })
}

pub fn trace_video(
    tape: &mut Tape,
    clip: &Tensor,
    params: &VideoTowerParams<Var>,
    config: &VideoTowerConfig,
    masks: &VideoMasks,
) -> Result<VideoForward> {
    let patches = trace_embed_frames(tape, clip, params, config)?;
    let mut parts = vec![params.cls];
    parts.extend(params.mst);
    parts.push(patches);
    let tokens = tape.concat_rows(&parts)?;

    let mut z = tokens;
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let slt = trace_slt_block(tape, z, layer, config, masks)?;
        let gst = trace_gst_block(tape, slt.out, layer, config, masks)?;
        z = gst.out;
        layers.push((slt, gst));
    }
    let cls = tape.slice_rows(z, 0, 1)?;
    let e = tape.matmul(cls, params.proj)?;
    let embedding = tape.l2_normalize_rows(e);
    Ok(VideoForward {
        embedding,
        tokens,
        layers,
    })
}

/// Patch tokens `T·N × d`: projected patches plus spatial and temporal
/// position embeddings.
pub fn embed_frames(
    clip: &Tensor,
    params: &VideoTowerParams,
    config: &VideoTowerConfig,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = params.map("", &mut bind_const(&mut tape));
    let out = trace_embed_frames(&mut tape, clip, &p, config)?;
    Ok(tape.value(out).clone())
}

pub fn slt_block(z: &Tensor, layer: &LayerParams, config: &VideoTowerConfig) -> Result<Tensor> {
    run_block(z, layer, config, trace_slt_block)
}

pub fn gst_block(z: &Tensor, layer: &LayerParams, config: &VideoTowerConfig) -> Result<Tensor> {
    run_block(z, layer, config, trace_gst_block)
}

type BlockFn =
    fn(&mut Tape, Var, &LayerParams<Var>, &VideoTowerConfig, &VideoMasks) -> Result<BlockOutput>;

fn run_block(
    z: &Tensor,
    layer: &LayerParams,
    config: &VideoTowerConfig,
    block: BlockFn,
) -> Result<Tensor> {
    let masks = VideoMasks::new(config)?;
    let mut tape = Tape::new();
    let zv = tape.constant(z.clone());
    let lp = layer.map("", &mut bind_const(&mut tape));
    let out = block(&mut tape, zv, &lp, config, &masks)?;
    Ok(tape.value(out.out).clone())
}

/// Unit-norm video embedding of length D.
pub fn encode_video(
    clip: &Tensor,
    params: &VideoTowerParams,
    config: &VideoTowerConfig,
) -> Result<Tensor> {
    let masks = VideoMasks::new(config)?;
    let mut tape = Tape::new();
    let p = params.map("", &mut bind_const(&mut tape));
    let fwd = trace_video(&mut tape, clip, &p, config, &masks)?;
    tape.value(fwd.embedding)
        .clone()
        .reshape(&[config.embed_dim])
}
