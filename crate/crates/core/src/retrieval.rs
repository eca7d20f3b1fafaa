//! Similarity scoring, dual-softmax re-scoring and recall metrics.
//!
//! Rows are queries and columns candidates; the ground truth of query `i`
//! is candidate `i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Default sharpening of unit-norm similarities before dual softmax.
pub const DEFAULT_DSL_ALPHA: f64 = 100.0;

/// Dot products of every query with every candidate, `Q × C`.
pub fn similarity(queries: &Tensor, candidates: &Tensor) -> Result<Tensor> {
    if queries.rank() != 2 || candidates.rank() != 2 || queries.last_dim() != candidates.last_dim()
    {
        return Err(Error::Dimension {
            op: "similarity",
            lhs: queries.shape().to_vec(),
            rhs: candidates.shape().to_vec(),
        });
    }
    queries.matmul(&candidates.transpose()?)
}

fn check_square(s: &Tensor, op: &'static str) -> Result<usize> {
    match s.shape() {
        &[r, c] if r == c => Ok(r),
        shape => Err(Error::Dimension {
            op,
            lhs: shape.to_vec(),
            rhs: vec![],
        }),
    }
}

/// `row_softmax(αS) ⊙ col_softmax(αS)`.
pub fn dual_softmax(s: &Tensor, alpha: f64) -> Result<Tensor> {
    let n = check_square(s, "dual_softmax")?;
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::contract(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let scaled = s.map(|x| alpha * x);
    let softmax_rows = |t: &Tensor| {
        let mut out = t.clone();
        for i in 0..n {
            let row = out.row_mut(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|x| *x = (*x - max).exp());
            // Summing in sorted order makes the result independent of the
            // candidate order, so permuted inputs give bitwise-permuted outputs.
            let mut sorted = row.to_vec();
            sorted.sort_by(f64::total_cmp);
            let sum: f64 = sorted.iter().sum();
            row.iter_mut().for_each(|x| *x /= sum);
        }
        out
    };
    let by_row = softmax_rows(&scaled);
    let by_col = softmax_rows(&scaled.transpose()?).transpose()?;
    let data = by_row
        .data()
        .iter()
        .zip(by_col.data())
        .map(|(a, b)| a * b)
        .collect();
    Tensor::new(vec![n, n], data)
}

/// Margin above which dual softmax cannot change any ground-truth rank of
/// an `n × n` matrix whose diagonal beats every other entry of its row and
/// of its column by at least that margin.
///
/// With `x = e^{αm}` the diagonal's row factor is at least `x` times any
/// rival's, and its column factor is at least `1 / (1 + (n−1)/x)`; the
/// product wins once `x² − x − (n−1) > 0`.
pub fn dsl_safe_margin(n: usize, alpha: f64) -> f64 {
    let n = n.max(1) as f64;
    ((1.0 + (4.0 * n - 3.0).sqrt()) / 2.0).ln() / alpha
}

/// Rank of each query's ground truth: one plus the number of other
/// candidates scoring at least as high (ties count against the ground truth).
pub fn ranks(s: &Tensor) -> Result<Vec<usize>> {
    let n = check_square(s, "ranks")?;
    Ok((0..n)
        .map(|i| {
            let row = s.row(i);
            1 + (0..n).filter(|&j| j != i && row[j] >= row[i]).count()
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    #[serde(rename = "R@1")]
    pub r1: f64,
    #[serde(rename = "R@5")]
    pub r5: f64,
    #[serde(rename = "R@10")]
    pub r10: f64,
    #[serde(rename = "Avg")]
    pub avg: f64,
    #[serde(rename = "MdR")]
    pub mdr: f64,
    #[serde(rename = "MnR")]
    pub mnr: f64,
}

impl RetrievalReport {
    /// Metrics from ground-truth ranks. Recalls are percentages; the median
    /// takes the lower middle value for an even count.
    pub fn from_ranks(ranks: &[usize]) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::contract("no queries to evaluate"));
        }
        let q = ranks.len() as f64;
        let recall = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / q;
        let (r1, r5, r10) = (recall(1), recall(5), recall(10));
        let mut sorted = ranks.to_vec();
        sorted.sort_unstable();
        Ok(RetrievalReport {
            r1,
            r5,
            r10,
            avg: (r1 + r5 + r10) / 3.0,
            mdr: sorted[(sorted.len() - 1) / 2] as f64,
            mnr: ranks.iter().sum::<usize>() as f64 / q,
        })
    }
}

pub fn evaluate(s: &Tensor) -> Result<RetrievalReport> {
    if !s.is_finite() {
        return Err(Error::contract("similarity matrix has non-finite entries"));
    }
    RetrievalReport::from_ranks(&ranks(s)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    TextToVideo,
    VideoToText,
}

impl std::str::FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t2v" => Ok(Direction::TextToVideo),
            "v2t" => Ok(Direction::VideoToText),
            other => Err(Error::config(format!(
                "unknown direction {other:?}; use t2v or v2t"
            ))),
        }
    }
}

/// Full evaluation from paired embeddings, optionally re-scored by dual softmax.
pub fn evaluate_embeddings(
    video: &Tensor,
    text: &Tensor,
    direction: Direction,
    dsl_alpha: Option<f64>,
) -> Result<RetrievalReport> {
    let mut s = match direction {
        Direction::TextToVideo => similarity(text, video)?,
        Direction::VideoToText => similarity(video, text)?,
    };
    if let Some(alpha) = dsl_alpha {
        s = dual_softmax(&s, alpha)?;
    }
    evaluate(&s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hand_similarity() {
        let v = Tensor::identity(2);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let t = Tensor::from_rows(&[vec![h, h], vec![0.0, 1.0]]).unwrap();
        let s = similarity(&v, &t).unwrap();
        let expected = [h, 0.0, h, 1.0];
        for (a, b) in s.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(similarity(&v, &Tensor::identity(3)).is_err());
    }

    #[test]
    fn identity_is_perfect() {
        let r = evaluate(&Tensor::identity(3)).unwrap();
        assert_eq!((r.r1, r.mdr, r.mnr), (100.0, 1.0, 1.0));
    }

    #[test]
    fn rank_fixture() {
        let r = RetrievalReport::from_ranks(&[1, 2, 6]).unwrap();
        assert!((r.r1 - 33.333333).abs() < 1e-4);
        assert!((r.r5 - 66.666667).abs() < 1e-4);
        assert_eq!(r.r10, 100.0);
        assert_eq!(r.mdr, 2.0);
        assert_eq!(r.mnr, 3.0);
        assert_eq!(RetrievalReport::from_ranks(&[4, 1, 3, 2]).unwrap().mdr, 2.0);
    }

    #[test]
    fn ties_count_against_ground_truth() {
        let s = Tensor::filled(&[3, 3], 0.5);
        assert_eq!(ranks(&s).unwrap(), vec![3, 3, 3]);
    }

    #[test]
    fn dual_softmax_basics() {
        let one = dual_softmax(&Tensor::filled(&[1, 1], 0.3), 100.0).unwrap();
        assert!((one.data()[0] - 1.0).abs() < 1e-15);
        assert!(dual_softmax(&Tensor::identity(2), 0.0).is_err());
        assert!(dual_softmax(&Tensor::zeros(&[2, 3]), 1.0).is_err());
        assert!(evaluate(&Tensor::zeros(&[2, 3])).is_err());
    }

    /// Query 0 scores candidates 0 and 1 nearly equally but candidate 1 is
    /// claimed much more strongly by query 1, so column competition moves
    /// query 0 onto its ground truth.
    #[test]
    fn column_competition_reranks() {
        let s = Tensor::from_rows(&[
            vec![0.50, 0.51, 0.10],
            vec![0.10, 0.90, 0.20],
            vec![0.20, 0.30, 0.80],
        ])
        .unwrap();
        assert_eq!(ranks(&s).unwrap(), vec![2, 1, 1]);
        let d = dual_softmax(&s, 10.0).unwrap();
        assert_eq!(ranks(&d).unwrap(), vec![1, 1, 1]);
    }

    #[test]
    fn safe_margin_values() {
        assert_eq!(dsl_safe_margin(1, 1.0), 0.0);
        let x = (10.0 * dsl_safe_margin(4, 10.0)).exp();
        assert!((x * x - x - 3.0).abs() < 1e-12);
    }

    #[test]
    fn directions_transpose() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = Tensor::randn(&[5, 4], 1.0, &mut rng).l2_normalize_rows();
        let t = Tensor::randn(&[5, 4], 1.0, &mut rng).l2_normalize_rows();
        let t2v = evaluate_embeddings(&v, &t, Direction::TextToVideo, None).unwrap();
        let v2t = evaluate_embeddings(&v, &t, Direction::VideoToText, None).unwrap();
        assert_eq!(t2v, evaluate(&similarity(&t, &v).unwrap()).unwrap());
        assert_eq!(
            v2t,
            evaluate(&similarity(&t, &v).unwrap().transpose().unwrap()).unwrap()
        );
        assert!("x2y".parse::<Direction>().is_err());
    }

    #[test]
    fn report_json_has_metric_fields() {
        let json = serde_json::to_value(evaluate(&Tensor::identity(2)).unwrap()).unwrap();
        for key in ["R@1", "R@5", "R@10", "Avg", "MdR", "MnR"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }

    proptest! {
        #[test]
        fn recall_ordering_and_average(vals in prop::collection::vec(-1.0f64..1.0, 144)) {
            let s = Tensor::new(vec![12, 12], vals).unwrap();
            let r = evaluate(&s).unwrap();
            prop_assert!(r.r1 <= r.r5 && r.r5 <= r.r10 && r.r10 <= 100.0);
            prop_assert_eq!(r.avg, (r.r1 + r.r5 + r.r10) / 3.0);
            prop_assert!(r.mdr >= 1.0 && r.mnr >= 1.0);
        }

        #[test]
        fn monotone_transform_invariance(vals in prop::collection::vec(-1.0f64..1.0, 49)) {
            let s = Tensor::new(vec![7, 7], vals).unwrap();
            let t = s.map(|x| (3.0 * x).exp() + x.powi(3));
            prop_assert_eq!(evaluate(&s).unwrap(), evaluate(&t).unwrap());
        }

        #[test]
        fn dual_softmax_in_unit_interval(vals in prop::collection::vec(-1.0f64..1.0, 25)) {
            let s = Tensor::new(vec![5, 5], vals).unwrap();
            let d = dual_softmax(&s, 5.0).unwrap();
            prop_assert!(d.data().iter().all(|&x| x > 0.0 && x < 1.0));
        }
    }
}
