//! Fast invariant checks, run by `hta selftest`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alignment::info_nce;
use crate::datapipe::{extract_clips, synthetic_corpus, ScaleTargets};
use crate::masks::{gst_stacked_mask, slt_mask, TokenLayout};
use crate::numerics::{masked_softmax, Tensor};
use crate::retrieval::{dual_softmax, evaluate, RetrievalReport};
use crate::towers::{slt_block, VideoTowerConfig, VideoTowerParams};

#[derive(Clone, Debug)]
pub struct Check {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn masks_match_predicates() -> Result<(), String> {
    let layout = TokenLayout::toy(8);
    let slt = slt_mask(&layout).map_err(|e| e.to_string())?;
    let n = layout.patch_count();
    ensure(slt.rows() == n && slt.cols() == n, "SlT mask is not TN×TN")?;
    for i in 0..n {
        for j in 0..n {
            let open = i.abs_diff(j).is_multiple_of(layout.patches_per_frame);
            ensure(slt.is_open(i, j) == open, format!("SlT entry ({i},{j})"))?;
        }
    }
    let s = layout.seq_len();
    let gst = gst_stacked_mask(&layout).map_err(|e| e.to_string())?;
    ensure(
        gst.rows() == s && gst.cols() == s,
        "stacked mask is not S×S",
    )?;
    ensure(
        (0..s).all(|j| gst.is_open(0, j)),
        "[CLS] row must be fully open",
    )?;
    ensure(
        (1..s).all(|i| !gst.is_open(i, 0)),
        "[CLS] column must be closed below row 0",
    )
}

fn softmax_rows() -> Result<(), String> {
    let layout = TokenLayout::toy(8);
    let mask = gst_stacked_mask(&layout)
        .map_err(|e| e.to_string())?
        .to_tensor();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let logits = Tensor::randn(mask.shape(), 3.0, &mut rng);
    let p = masked_softmax(&logits, &mask).map_err(|e| e.to_string())?;
    for i in 0..p.rows() {
        let sum: f64 = p.row(i).iter().sum();
        ensure((sum - 1.0).abs() <= 1e-12, format!("row {i} sums to {sum}"))?;
        for (j, &m) in mask.row(i).iter().enumerate() {
            ensure(
                !crate::numerics::is_masked(m) || p.at(i, j) == 0.0,
                format!("({i},{j}) leaks"),
            )?;
        }
    }
    Ok(())
}

fn zero_init_identity() -> Result<(), String> {
    let config = VideoTowerConfig::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let params = VideoTowerParams::init(&config, &mut rng).map_err(|e| e.to_string())?;
    let z = Tensor::randn(&[config.layout.seq_len(), config.width()], 1.0, &mut rng);
    let out = slt_block(&z, &params.layers[0], &config).map_err(|e| e.to_string())?;
    ensure(out == z, "slt_block changed its input at initialisation")
}

fn closed_form_loss() -> Result<(), String> {
    let e = Tensor::identity(2);
    let loss = info_nce(&e, &e, 1.0).map_err(|e| e.to_string())?;
    let expected = 2.0 * (1.0 + (-1.0f64).exp()).ln();
    ensure(
        (loss - expected).abs() <= 1e-9,
        format!("info_nce = {loss}, expected {expected}"),
    )
}

fn metrics() -> Result<(), String> {
    let r = RetrievalReport::from_ranks(&[1, 2, 6]).map_err(|e| e.to_string())?;
    ensure(r.mdr == 2.0 && r.mnr == 3.0, "rank fixture")?;
    let id = evaluate(&Tensor::identity(4)).map_err(|e| e.to_string())?;
    let dsl = evaluate(&dual_softmax(&Tensor::identity(4), 100.0).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    ensure(id.r1 == 100.0 && dsl.r1 == 100.0, "identity retrieval")
}

fn clip_coverage() -> Result<(), String> {
    let corpus = synthetic_corpus(300, 6.0, 3);
    let clips = extract_clips("v", &corpus, &ScaleTargets::default());
    for scale in crate::datapipe::Scale::ALL {
        let mut next = 0;
        for c in clips.iter().filter(|c| c.scale == scale) {
            ensure(
                c.sentences[0] == next,
                format!("{scale} clips leave a gap at {next}"),
            )?;
            next = c.sentences[1] + 1;
        }
        ensure(
            next == corpus.len(),
            format!("{scale} clips do not cover the transcript"),
        )?;
    }
    Ok(())
}

type CheckFn = fn() -> Result<(), String>;

pub fn run() -> Vec<Check> {
    let checks: [(&'static str, CheckFn); 6] = [
        ("mask predicates", masks_match_predicates),
        ("masked softmax rows", softmax_rows),
        ("zero-init SlT identity", zero_init_identity),
        ("closed-form info-NCE", closed_form_loss),
        ("retrieval metrics", metrics),
        ("clip coverage", clip_coverage),
    ];
    checks
        .into_iter()
        .map(|(name, f)| Check { name, outcome: f() })
        .collect()
}
