use std::sync::Arc;

use rand::Rng;

use super::{join, randn};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// Query/key/value/output projections of one masked multi-head attention.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams<T = Tensor> {
    pub wq: T,
    pub bq: T,
    pub wk: T,
    pub bk: T,
    pub wv: T,
    pub bv: T,
    pub wo: T,
    pub bo: T,
}

impl AttentionParams<Tensor> {
    pub fn init<R: Rng + ?Sized>(width: usize, zero_output: bool, rng: &mut R) -> Self {
        let wo = if zero_output {
            Tensor::zeros(&[width, width])
        } else {
            randn(rng, &[width, width])
        };
        AttentionParams {
            wq: randn(rng, &[width, width]),
            bq: Tensor::zeros(&[width]),
            wk: randn(rng, &[width, width]),
            bk: Tensor::zeros(&[width]),
            wv: randn(rng, &[width, width]),
            bv: Tensor::zeros(&[width]),
            wo,
            bo: Tensor::zeros(&[width]),
        }
    }
}

impl<T> AttentionParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> AttentionParams<U> {
        AttentionParams {
            wq: f(&join(prefix, "wq"), &self.wq),
            bq: f(&join(prefix, "bq"), &self.bq),
            wk: f(&join(prefix, "wk"), &self.wk),
            bk: f(&join(prefix, "bk"), &self.bk),
            wv: f(&join(prefix, "wv"), &self.wv),
            bv: f(&join(prefix, "bv"), &self.bv),
            wo: f(&join(prefix, "wo"), &self.wo),
            bo: f(&join(prefix, "bo"), &self.bo),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        f(&join(prefix, "wq"), &mut self.wq);
        f(&join(prefix, "bq"), &mut self.bq);
        f(&join(prefix, "wk"), &mut self.wk);
        f(&join(prefix, "bk"), &mut self.bk);
        f(&join(prefix, "wv"), &mut self.wv);
        f(&join(prefix, "bv"), &mut self.bv);
        f(&join(prefix, "wo"), &mut self.wo);
        f(&join(prefix, "bo"), &mut self.bo);
    }
}

/// `softmax(Q Kᵀ / √d_head + M) V`, per head, heads concatenated and
/// projected. The same mask is shared by every head.
///
/// Returns the output and each head's attention weights.
pub fn mmsa(
    tape: &mut Tape,
    x: Var,
    p: &AttentionParams<Var>,
    mask: &Arc<Tensor>,
    heads: usize,
) -> Result<(Var, Vec<Var>)> {
    let width = tape.value(x).last_dim();
    if heads == 0 || !width.is_multiple_of(heads) {
        return Err(Error::config(format!(
            "width {width} is not divisible by {heads} heads"
        )));
    }
    let head_dim = width / heads;
    let scale = 1.0 / (head_dim as f64).sqrt();

    let q = tape.matmul(x, p.wq)?;
    let q = tape.add_row(q, p.bq)?;
    let k = tape.matmul(x, p.wk)?;
    let k = tape.add_row(k, p.bk)?;
    let v = tape.matmul(x, p.wv)?;
    let v = tape.add_row(v, p.bv)?;

    let mut outputs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * head_dim, (h + 1) * head_dim);
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, lo, hi)?,
                tape.slice_cols(k, lo, hi)?,
                tape.slice_cols(v, lo, hi)?,
            )
        };
        let kt = tape.transpose(kh)?;
        let logits = tape.matmul(qh, kt)?;
        let logits = tape.scale(logits, scale);
        let attn = tape.masked_softmax(logits, mask)?;
        outputs.push(tape.matmul(attn, vh)?);
        weights.push(attn);
    }
    let joined = if heads == 1 {
        outputs[0]
    } else {
        tape.concat_cols(&outputs)?
    };
    let out = tape.matmul(joined, p.wo)?;
    let out = tape.add_row(out, p.bo)?;
    Ok((out, weights))
}
