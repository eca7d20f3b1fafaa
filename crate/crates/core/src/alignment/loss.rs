//! Symmetric info-NCE over in-batch negatives.

use crate::error::{Error, Result};
use crate::numerics::{Tape, Tensor, Var};

/// `(1/B) Σᵢ [−log softmaxⱼ(vᵢ·tⱼ/τ)ᵢ − log softmaxⱼ(tᵢ·vⱼ/τ)ᵢ]`.
///
/// Rows of `v` and `t` are paired by index and expected to be unit norm.
pub fn info_nce(v: &Tensor, t: &Tensor, tau: f64) -> Result<f64> {
    check_pair(v, t, tau)?;
    let mut tape = Tape::new();
    let vv = tape.constant(v.clone());
    let tv = tape.constant(t.clone());
    let inv_tau = tape.constant(Tensor::scalar(1.0 / tau));
    let loss = trace_info_nce(&mut tape, vv, tv, inv_tau)?;
    Ok(tape.value(loss).data()[0])
}

fn check_pair(v: &Tensor, t: &Tensor, tau: f64) -> Result<()> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::contract(format!(
            "temperature must be positive, got {tau}"
        )));
    }
    if v.rank() != 2 || v.shape() != t.shape() {
        return Err(Error::Dimension {
            op: "info_nce",
            lhs: v.shape().to_vec(),
            rhs: t.shape().to_vec(),
        });
    }
    Ok(())
}

/// Records info-NCE with a differentiable inverse temperature (a scalar).
pub fn trace_info_nce(tape: &mut Tape, v: Var, t: Var, inv_tau: Var) -> Result<Var> {
    let tt = tape.transpose(t)?;
    let sims = tape.matmul(v, tt)?;
    let logits = tape.scale_by(sims, inv_tau)?;
    let v2t = tape.diag_cross_entropy(logits)?;
    let logits_t = tape.transpose(logits)?;
    let t2v = tape.diag_cross_entropy(logits_t)?;
    tape.add(v2t, t2v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_pair_has_zero_loss() {
        let v = Tensor::from_rows(&[vec![0.6, 0.8]]).unwrap();
        let t = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        assert_eq!(info_nce(&v, &t, 0.07).unwrap(), 0.0);
    }

    #[test]
    fn orthogonal_match_closed_form() {
        let e = Tensor::identity(2);
        let loss = info_nce(&e, &e, 1.0).unwrap();
        let expected = 2.0 * (1.0 + (-1.0f64).exp()).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.626523).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_temperature_and_shapes() {
        let e = Tensor::identity(2);
        assert!(matches!(info_nce(&e, &e, 0.0), Err(Error::Contract(_))));
        assert!(info_nce(&e, &e, -1.0).is_err());
        assert!(info_nce(&e, &Tensor::identity(3), 1.0).is_err());
    }

    fn unit_rows(vals: &[f64], b: usize, d: usize) -> Tensor {
        Tensor::new(vec![b, d], vals.to_vec())
            .unwrap()
            .l2_normalize_rows()
    }

    proptest! {
        #[test]
        fn joint_row_permutation_leaves_loss_unchanged(
            vals in prop::collection::vec(-1.0f64..1.0, 2 * 4 * 3),
            tau in 0.05f64..2.0,
        ) {
            let v = unit_rows(&vals[..12], 4, 3);
            let t = unit_rows(&vals[12..], 4, 3);
            let perm = [2usize, 0, 3, 1];
            let pv = Tensor::from_rows(&perm.iter().map(|&i| v.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
            let pt = Tensor::from_rows(&perm.iter().map(|&i| t.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
            let a = info_nce(&v, &t, tau).unwrap();
            let b = info_nce(&pv, &pt, tau).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
            prop_assert!(a > 0.0);
        }

        #[test]
        fn joint_rotation_leaves_loss_unchanged(
            vals in prop::collection::vec(-1.0f64..1.0, 2 * 3 * 2),
            angle in 0.0f64..std::f64::consts::TAU,
        ) {
            let v = unit_rows(&vals[..6], 3, 2);
            let t = unit_rows(&vals[6..], 3, 2);
            let (s, c) = angle.sin_cos();
            let rot = Tensor::from_rows(&[vec![c, s], vec![-s, c]]).unwrap();
            let a = info_nce(&v, &t, 0.3).unwrap();
            let b = info_nce(&v.matmul(&rot).unwrap(), &t.matmul(&rot).unwrap(), 0.3).unwrap();
            prop_assert!((a - b).abs() < 1e-10);
        }
    }
}
