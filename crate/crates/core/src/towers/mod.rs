//! Video and text towers.
//!
//! Parameter structs are generic over their leaf type: `Tensor` for stored
//! weights, [`Var`](crate::numerics::Var) once bound to a tape. The
//! `map` methods walk parameters in a fixed order with dotted names; that
//! order is also the checkpoint and optimizer order.

mod attention;
mod text;
mod video;

pub use attention::{mmsa, AttentionParams};
pub use text::{encode_text, trace_text, TextTowerConfig, TextTowerParams};
pub use video::{
    embed_frames, encode_video, gst_block, patchify, slt_block, trace_embed_frames,
    trace_gst_block, trace_slt_block, trace_video, BlockOutput, LayerParams, VideoForward,
    VideoMasks, VideoTowerConfig, VideoTowerParams,
};

use rand::Rng;

use crate::numerics::{Tape, Tensor, Var};

/// Standard deviation of every randomly initialised weight.
pub const INIT_STD: f64 = 0.02;

pub(crate) fn randn<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    Tensor::randn(shape, INIT_STD, rng)
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Binds every tensor as a constant (no gradients recorded).
pub(crate) fn bind_const(tape: &mut Tape) -> impl FnMut(&str, &Tensor) -> Var + '_ {
    move |_, t| tape.constant(t.clone())
}
