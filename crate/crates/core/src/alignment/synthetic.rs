//! Paired synthetic data sharing a low-dimensional latent.
//!
//! Each pair draws `z ~ N(0, I_k)`. The clip is a fixed random linear image
//! of `z` plus pixel noise. The subtitle encodes `z` as one token per latent
//! coordinate (coordinate index times bucket count plus the bucket of `z_j`);
//! the caption does the same on a noisy copy of `z`, in a disjoint block of
//! the vocabulary.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::{AlignmentBatch, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const LATENT_DIM: usize = 8;
pub const BUCKETS: usize = 8;

/// Vocabulary needed by [`synthetic_pairs`].
pub const fn synthetic_vocab() -> usize {
    2 * LATENT_DIM * BUCKETS
}

fn bucket(x: f64) -> usize {
    ((x + 2.0) / 0.5).floor().clamp(0.0, (BUCKETS - 1) as f64) as usize
}

pub fn synthetic_pairs(
    n: usize,
    config: &ModelConfig,
    noise: f64,
    seed: u64,
) -> Result<AlignmentBatch> {
    let side = config.video.square_frame_side().ok_or_else(|| {
        Error::config("synthetic clips need a square number of patches per frame")
    })?;
    if config.text.vocab_size < synthetic_vocab() || config.text.context_length < LATENT_DIM {
        return Err(Error::config(format!(
            "synthetic text needs vocab_size >= {} and context_length >= {LATENT_DIM}",
            synthetic_vocab()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = [config.video.layout.frames, side, side, 3];
    let basis: Vec<Tensor> = (0..LATENT_DIM)
        .map(|_| Tensor::randn(&shape, 1.0, &mut rng))
        .collect();
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };

    let (mut clips, mut subtitles, mut captions) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..n {
        let z: Vec<f64> = (0..LATENT_DIM).map(|_| gauss()).collect();
        let mut clip = Tensor::zeros(&shape);
        for (zj, b) in z.iter().zip(&basis) {
            for (c, x) in clip.data_mut().iter_mut().zip(b.data()) {
                *c += zj * x;
            }
        }
        clip.data_mut()
            .iter_mut()
            .for_each(|c| *c += noise * gauss());
        clips.push(clip);
        subtitles.push(
            z.iter()
                .enumerate()
                .map(|(j, &x)| j * BUCKETS + bucket(x))
                .collect(),
        );
        captions.push(
            z.iter()
                .enumerate()
                .map(|(j, &x)| LATENT_DIM * BUCKETS + j * BUCKETS + bucket(x + noise * gauss()))
                .collect(),
        );
    }
    AlignmentBatch::new(clips, subtitles, captions)
}
