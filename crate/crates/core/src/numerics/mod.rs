//! Dense tensors, the row-wise kernels shared by the towers, and a
//! tape-based reverse-mode differentiation engine.
//!
//! Everything on the training path is computed in `f64`. The binary tensor
//! format in [`io`] stores `f32` payloads; precision is only lost on disk.

pub mod gradcheck;
pub mod io;
mod tape;
mod tensor;

pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::error::{Error, Result};

/// Finite stand-in for −∞ in additive masks. Anything at or below it is
/// treated as a forbidden position by [`masked_softmax`].
pub const MASKED: f64 = f64::MIN;

/// Variance epsilon used by [`layer_norm`].
pub const LN_EPS: f64 = 1e-5;

#[inline]
pub fn is_masked(bias: f64) -> bool {
    bias <= MASKED
}

/// Row-wise softmax of `logits + mask`.
///
/// Positions where the mask is −∞ (or the [`MASKED`] sentinel) come out as
/// exactly `0.0`. The row maximum is taken over attendable positions only.
pub fn masked_softmax(logits: &Tensor, mask: &Tensor) -> Result<Tensor> {
    if logits.shape() != mask.shape() {
        return Err(Error::Dimension {
            op: "masked_softmax",
            lhs: logits.shape().to_vec(),
            rhs: mask.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(logits.shape());
    for i in 0..logits.rows() {
        softmax_row(logits.row(i), Some(mask.row(i)), out.row_mut(i))
            .ok_or(Error::InvalidMask { row: i })?;
    }
    Ok(out)
}

/// Writes the (optionally masked) softmax of `logits` into `out`.
/// Returns `None` when every position is masked.
pub(crate) fn softmax_row(logits: &[f64], mask: Option<&[f64]>, out: &mut [f64]) -> Option<()> {
    let bias = |j: usize| mask.map_or(0.0, |m| m[j]);
    let mut max = f64::NEG_INFINITY;
    for (j, &x) in logits.iter().enumerate() {
        let b = bias(j);
        if !is_masked(b) {
            max = max.max(x + b);
        }
    }
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mut total = 0.0;
    for (j, &x) in logits.iter().enumerate() {
        let b = bias(j);
        out[j] = if is_masked(b) {
            0.0
        } else {
            (x + b - max).exp()
        };
        total += out[j];
    }
    out.iter_mut().for_each(|v| *v /= total);
    Some(())
}

/// Layer normalization over the last axis followed by the affine map
/// `gain ⊙ x̂ + bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    layer_norm_eps(x, gain, bias, LN_EPS)
}

pub fn layer_norm_eps(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    let d = x.last_dim();
    if gain.numel() != d || bias.numel() != d {
        return Err(Error::Dimension {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gain.shape().to_vec(),
        });
    }
    let mut out = Tensor::zeros(x.shape());
    for i in 0..x.rows() {
        let (xhat, _) = normalize_row(x.row(i), eps);
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = xhat[j] * gain.data()[j] + bias.data()[j];
        }
    }
    Ok(out)
}

/// Returns `(x̂, 1/σ)` for one row.
pub(crate) fn normalize_row(row: &[f64], eps: f64) -> (Vec<f64>, f64) {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    (row.iter().map(|v| (v - mean) * inv_std).collect(), inv_std)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn softmax_uniform() {
        let out = masked_softmax(&Tensor::zeros(&[1, 4]), &Tensor::zeros(&[1, 4])).unwrap();
        assert_eq!(out.data(), &[0.25; 4]);
    }

    #[test]
    fn softmax_masked_middle() {
        let mask = t(&[&[0.0, f64::NEG_INFINITY, 0.0]]);
        let out = masked_softmax(&Tensor::zeros(&[1, 3]), &mask).unwrap();
        assert_eq!(out.data(), &[0.5, 0.0, 0.5]);
        let sentinel = t(&[&[0.0, MASKED, 0.0]]);
        let out = masked_softmax(&Tensor::zeros(&[1, 3]), &sentinel).unwrap();
        assert_eq!(out.data(), &[0.5, 0.0, 0.5]);
    }

    #[test]
    fn softmax_large_logits_do_not_overflow() {
        let out = masked_softmax(&t(&[&[1000.0, 999.0]]), &Tensor::zeros(&[1, 2])).unwrap();
        let e = std::f64::consts::E;
        assert!((out.data()[0] - e / (1.0 + e)).abs() < 1e-15);
        assert!((out.data()[1] - 1.0 / (1.0 + e)).abs() < 1e-15);
        assert!((out.data()[0] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn fully_masked_row_is_an_error() {
        let mask = t(&[&[0.0, 0.0], &[f64::NEG_INFINITY, MASKED]]);
        let err = masked_softmax(&Tensor::zeros(&[2, 2]), &mask).unwrap_err();
        assert!(matches!(err, Error::InvalidMask { row: 1 }));
    }

    #[test]
    fn layer_norm_cases() {
        let ones = Tensor::filled(&[3], 1.0);
        let zeros = Tensor::zeros(&[3]);
        let out = layer_norm(&Tensor::filled(&[1, 3], 4.2), &ones, &zeros).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));

        let out = layer_norm_eps(
            &t(&[&[1.0, 3.0]]),
            &Tensor::filled(&[2], 1.0),
            &Tensor::zeros(&[2]),
            0.0,
        )
        .unwrap();
        assert_eq!(out.data(), &[-1.0, 1.0]);

        let bias = Tensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let out = layer_norm(&t(&[&[1.0, 7.0, -3.0], &[0.1, 0.2, 0.3]]), &zeros, &bias).unwrap();
        assert_eq!(out.row(0), bias.data());
        assert_eq!(out.row(1), bias.data());
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one_and_respect_mask(
            vals in prop::collection::vec(-50.0f64..50.0, 12),
            allowed in prop::collection::vec(any::<bool>(), 12),
        ) {
            let logits = Tensor::new(vec![3, 4], vals).unwrap();
            let mut mask = Tensor::zeros(&[3, 4]);
            for (k, &a) in allowed.iter().enumerate() {
                // keep column 0 open so no row is fully masked
                if !a && k % 4 != 0 {
                    mask.data_mut()[k] = f64::NEG_INFINITY;
                }
            }
            let out = masked_softmax(&logits, &mask).unwrap();
            for i in 0..3 {
                let s: f64 = out.row(i).iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
                for j in 0..4 {
                    if mask.at(i, j) == f64::NEG_INFINITY {
                        prop_assert_eq!(out.at(i, j), 0.0);
                    }
                }
            }
        }
    }
}
