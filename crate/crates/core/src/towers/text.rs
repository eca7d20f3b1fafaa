//! Stand-in text encoder: token plus position embeddings, mean-pooled and
//! projected. Word order only enters through the (summed) position table,
//! so permuting tokens does not change the output.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{bind_const, join, randn};
use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextTowerConfig {
    pub vocab_size: usize,
    pub context_length: usize,
    pub width: usize,
    /// D
    pub embed_dim: usize,
}

impl Default for TextTowerConfig {
    fn default() -> Self {
        TextTowerConfig {
            vocab_size: 256,
            context_length: 77,
            width: 64,
            embed_dim: 32,
        }
    }
}

impl TextTowerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0
            || self.context_length == 0
            || self.width == 0
            || self.embed_dim == 0
        {
            return Err(Error::config("text tower extents must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextTowerParams<T = Tensor> {
    pub token_emb: T,
    pub pos_emb: T,
    pub proj: T,
}

impl TextTowerParams<Tensor> {
    pub fn init<R: Rng + ?Sized>(config: &TextTowerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(TextTowerParams {
            token_emb: randn(rng, &[config.vocab_size, config.width]),
            pos_emb: randn(rng, &[config.context_length, config.width]),
            proj: randn(rng, &[config.width, config.embed_dim]),
        })
    }
}

impl<T> TextTowerParams<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(&str, &T) -> U) -> TextTowerParams<U> {
        TextTowerParams {
            token_emb: f(&join(prefix, "token_emb"), &self.token_emb),
            pos_emb: f(&join(prefix, "pos_emb"), &self.pos_emb),
            proj: f(&join(prefix, "proj"), &self.proj),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut T)) {
        f(&join(prefix, "token_emb"), &mut self.token_emb);
        f(&join(prefix, "pos_emb"), &mut self.pos_emb);
        f(&join(prefix, "proj"), &mut self.proj);
    }
}

fn check_tokens(ids: &[usize], config: &TextTowerConfig) -> Result<()> {
    if ids.is_empty() {
        return Err(Error::Input {
            index: 0,
            reason: "empty token sequence".into(),
        });
    }
    if ids.len() > config.context_length {
        return Err(Error::Input {
            index: config.context_length,
            reason: format!(
                "{} tokens exceed the context length of {}",
                ids.len(),
                config.context_length
            ),
        });
    }
    if let Some(pos) = ids.iter().position(|&t| t >= config.vocab_size) {
        return Err(Error::Input {
            index: pos,
            reason: format!(
                "token id {} outside vocabulary of {}",
                ids[pos], config.vocab_size
            ),
        });
    }
    Ok(())
}

/// Records the text tower; returns a unit-norm `1 × D` row.
pub fn trace_text(
    tape: &mut Tape,
    ids: &[usize],
    params: &TextTowerParams<Var>,
    config: &TextTowerConfig,
) -> Result<Var> {
    check_tokens(ids, config)?;
    let tok = tape.gather_rows(params.token_emb, ids)?;
    let positions: Vec<usize> = (0..ids.len()).collect();
    let pos = tape.gather_rows(params.pos_emb, &positions)?;
    let x = tape.add(tok, pos)?;
    let pooled = tape.mean_rows(x)?;
    let e = tape.matmul(pooled, params.proj)?;
    Ok(tape.l2_normalize_rows(e))
}

pub fn encode_text(
    ids: &[usize],
    params: &TextTowerParams,
    config: &TextTowerConfig,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let p = params.map("", &mut bind_const(&mut tape));
    let out = trace_text(&mut tape, ids, &p, config)?;
    tape.value(out).clone().reshape(&[config.embed_dim])
}
