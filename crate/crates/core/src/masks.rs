//! Token layout and the additive attention masks of hierarchical temporal
//! attention.
//!
//! Sequence order is `[CLS]`, then the `U·V` `[MST]` tokens grouped by
//! hierarchy level (level 0 first), then the `T·N` patch tokens in
//! frame-major order. The spatially-local temporal (SlT) mask acts on patch
//! tokens only; the global spatio-temporal (GST) mask covers the whole
//! sequence and is the vertical stack of the `[CLS]`, `[MST]` and patch
//! row blocks.
//!
//! Constructors fill masks block by block. They are pure functions of the
//! layout.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{is_masked, Tensor, MASKED};

/// Geometry of the token sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLayout {
    /// T
    pub frames: usize,
    /// N
    pub patches_per_frame: usize,
    /// U
    pub levels: usize,
    /// V
    pub tokens_per_level: usize,
    /// r
    pub temporal_scale: usize,
    /// d
    pub width: usize,
}

impl TokenLayout {
    pub fn new(
        frames: usize,
        patches_per_frame: usize,
        levels: usize,
        tokens_per_level: usize,
        temporal_scale: usize,
        width: usize,
    ) -> Result<Self> {
        let layout = TokenLayout {
            frames,
            patches_per_frame,
            levels,
            tokens_per_level,
            temporal_scale,
            width,
        };
        layout.validate()?;
        Ok(layout)
    }

    /// Four frames of four patches with two single-token levels:
    /// N=4, T=4, U=2, V=1, r=2.
    pub fn toy(width: usize) -> Self {
        TokenLayout {
            frames: 4,
            patches_per_frame: 4,
            levels: 2,
            tokens_per_level: 1,
            temporal_scale: 2,
            width,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.patches_per_frame == 0 || self.tokens_per_level == 0 {
            return Err(Error::config("T, N and V must be at least 1"));
        }
        if self.width == 0 {
            return Err(Error::config("token width d must be at least 1"));
        }
        if self.temporal_scale < 2 {
            return Err(Error::config("temporal scale r must be at least 2"));
        }
        Ok(())
    }

    pub fn mst_count(&self) -> usize {
        self.levels * self.tokens_per_level
    }

    pub fn patch_count(&self) -> usize {
        self.frames * self.patches_per_frame
    }

    /// `S = 1 + U·V + T·N`.
    pub fn seq_len(&self) -> usize {
        1 + self.mst_count() + self.patch_count()
    }

    /// Index of the first patch token in the full sequence.
    pub fn first_patch(&self) -> usize {
        1 + self.mst_count()
    }

    pub fn mst_index(&self, level: usize, slot: usize) -> usize {
        1 + level * self.tokens_per_level + slot
    }

    pub fn patch_index(&self, frame: usize, patch: usize) -> usize {
        self.first_patch() + frame * self.patches_per_frame + patch
    }

    /// Frame stride `r^u` of hierarchy level `u`, saturating on overflow.
    pub fn level_stride(&self, level: usize) -> usize {
        let exp = u32::try_from(level).unwrap_or(u32::MAX);
        self.temporal_scale.saturating_pow(exp)
    }
}

impl FromStr for TokenLayout {
    type Err = Error;

    /// Parses `T,N,U,V,r` with an optional trailing `,d` (default 64).
    fn from_str(s: &str) -> Result<Self> {
        let parts = s
            .split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::config(format!("bad layout component {p:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        match parts[..] {
            [t, n, u, v, r] => TokenLayout::new(t, n, u, v, r, 64),
            [t, n, u, v, r, d] => TokenLayout::new(t, n, u, v, r, d),
            _ => Err(Error::config(format!(
                "layout must be T,N,U,V,r[,d], got {s:?}"
            ))),
        }
    }
}

/// Which `[MST]` levels a level-`u` token may attend to.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MstSelfDirection {
    /// Levels `≤ u`, i.e. `⌊i/V⌋ ≥ ⌊j/V⌋`.
    #[default]
    FinerOrEqual,
    /// Levels `≥ u`.
    CoarserOrEqual,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskOptions {
    pub mst_self: MstSelfDirection,
    /// Open the `[CLS]` column for patch rows, as the literal `[0, M̃ᴳ]`
    /// block reads. Off by default: patch and `[MST]` tokens never attend
    /// to `[CLS]`.
    pub patch_attends_cls: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskFamily {
    Slt,
    GstPatch,
    GstMst,
    GstCls,
    GstStacked,
}

/// Dense `{0, −∞}` attention bias. `−∞` is stored as [`MASKED`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdditiveMask {
    family: MaskFamily,
    entries: Tensor,
}

impl AdditiveMask {
    /// Builds a mask from an open-position matrix; fails if any row is
    /// fully closed.
    fn from_open(family: MaskFamily, rows: usize, cols: usize, open: &[bool]) -> Result<Self> {
        for i in 0..rows {
            if !open[i * cols..(i + 1) * cols].iter().any(|&o| o) {
                return Err(Error::InvalidMask { row: i });
            }
        }
        let data = open.iter().map(|&o| if o { 0.0 } else { MASKED }).collect();
        Ok(AdditiveMask {
            family,
            entries: Tensor::new(vec![rows, cols], data)?,
        })
    }

    pub fn family(&self) -> MaskFamily {
        self.family
    }

    pub fn rows(&self) -> usize {
        self.entries.shape()[0]
    }

    pub fn cols(&self) -> usize {
        self.entries.shape()[1]
    }

    /// Bias matrix with the finite sentinel standing in for −∞.
    pub fn entries(&self) -> &Tensor {
        &self.entries
    }

    pub fn is_open(&self, i: usize, j: usize) -> bool {
        !is_masked(self.entries.at(i, j))
    }

    /// `0.0` or `f64::NEG_INFINITY`.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        if self.is_open(i, j) {
            0.0
        } else {
            f64::NEG_INFINITY
        }
    }

    /// Bias matrix with true −∞ entries.
    pub fn to_tensor(&self) -> Tensor {
        self.entries
            .map(|v| if is_masked(v) { f64::NEG_INFINITY } else { 0.0 })
    }

    pub fn row_open_count(&self, i: usize) -> usize {
        (0..self.cols()).filter(|&j| self.is_open(i, j)).count()
    }

    pub fn open_pattern(&self) -> Vec<Vec<bool>> {
        (0..self.rows())
            .map(|i| (0..self.cols()).map(|j| self.is_open(i, j)).collect())
            .collect()
    }

    /// Comma-separated `0` / `-inf`, one line per row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.rows() {
            let line: Vec<&str> = (0..self.cols())
                .map(|j| if self.is_open(i, j) { "0" } else { "-inf" })
                .collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    /// Plain (P2) greymap: open positions white, masked black.
    pub fn to_pgm(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "P2\n{} {}\n255", self.cols(), self.rows());
        for i in 0..self.rows() {
            let line: Vec<&str> = (0..self.cols())
                .map(|j| if self.is_open(i, j) { "255" } else { "0" })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Patch-to-patch mask: each patch attends to the patch at the same
/// spatial position in every frame (including itself).
pub fn slt_mask(layout: &TokenLayout) -> Result<AdditiveMask> {
    layout.validate()?;
    let n = layout.patches_per_frame;
    let tn = layout.patch_count();
    let mut open = vec![false; tn * tn];
    for i in 0..tn {
        for t in 0..layout.frames {
            open[i * tn + t * n + i % n] = true;
        }
    }
    AdditiveMask::from_open(MaskFamily::Slt, tn, tn, &open)
}

pub fn gst_patch_mask(layout: &TokenLayout) -> Result<AdditiveMask> {
    gst_patch_mask_with(layout, &MaskOptions::default())
}

/// Patch rows of the global mask: same-frame patches plus every `[MST]`.
pub fn gst_patch_mask_with(layout: &TokenLayout, opts: &MaskOptions) -> Result<AdditiveMask> {
    layout.validate()?;
    let (n, tn, s) = (
        layout.patches_per_frame,
        layout.patch_count(),
        layout.seq_len(),
    );
    let first = layout.first_patch();
    let mut open = vec![false; tn * s];
    for i in 0..tn {
        let row = &mut open[i * s..(i + 1) * s];
        row[0] = opts.patch_attends_cls;
        row[1..first].iter_mut().for_each(|o| *o = true);
        let frame_start = first + (i / n) * n;
        row[frame_start..frame_start + n]
            .iter_mut()
            .for_each(|o| *o = true);
    }
    AdditiveMask::from_open(MaskFamily::GstPatch, tn, s, &open)
}

pub fn gst_mst_mask(layout: &TokenLayout) -> Result<AdditiveMask> {
    gst_mst_mask_with(layout, &MaskOptions::default())
}

/// `[MST]` rows of the global mask. A level-`u` token attends to the
/// `[MST]` tokens of the permitted levels and to every patch of frames
/// `0, r^u, 2·r^u, …`; never to `[CLS]`.
pub fn gst_mst_mask_with(layout: &TokenLayout, opts: &MaskOptions) -> Result<AdditiveMask> {
    layout.validate()?;
    if layout.levels == 0 {
        return Err(Error::config("layout has no [MST] tokens (U = 0)"));
    }
    let (v, n, s) = (
        layout.tokens_per_level,
        layout.patches_per_frame,
        layout.seq_len(),
    );
    let uv = layout.mst_count();
    let mut open = vec![false; uv * s];
    for level in 0..layout.levels {
        let visible_levels = match opts.mst_self {
            MstSelfDirection::FinerOrEqual => 0..level + 1,
            MstSelfDirection::CoarserOrEqual => level..layout.levels,
        };
        let stride = layout.level_stride(level);
        for slot in 0..v {
            let i = level * v + slot;
            let row = &mut open[i * s..(i + 1) * s];
            for other in visible_levels.clone() {
                let start = layout.mst_index(other, 0);
                row[start..start + v].iter_mut().for_each(|o| *o = true);
            }
            for frame in (0..layout.frames).step_by(stride.max(1)) {
                let start = layout.patch_index(frame, 0);
                row[start..start + n].iter_mut().for_each(|o| *o = true);
            }
        }
    }
    AdditiveMask::from_open(MaskFamily::GstMst, uv, s, &open)
}

/// `[CLS]` row: attends to every token.
pub fn gst_cls_mask(layout: &TokenLayout) -> Result<AdditiveMask> {
    layout.validate()?;
    let s = layout.seq_len();
    AdditiveMask::from_open(MaskFamily::GstCls, 1, s, &vec![true; s])
}

pub fn gst_stacked_mask(layout: &TokenLayout) -> Result<AdditiveMask> {
    gst_stacked_mask_with(layout, &MaskOptions::default())
}

/// `[M_cls; M_mst; M_patch]`, a square `S×S` mask.
pub fn gst_stacked_mask_with(layout: &TokenLayout, opts: &MaskOptions) -> Result<AdditiveMask> {
    let cls = gst_cls_mask(layout)?;
    let mst = (layout.levels > 0)
        .then(|| gst_mst_mask_with(layout, opts))
        .transpose()?;
    let patch = gst_patch_mask_with(layout, opts)?;
    let s = layout.seq_len();
    let mut data = Vec::with_capacity(s * s);
    data.extend_from_slice(cls.entries.data());
    if let Some(m) = &mst {
        data.extend_from_slice(m.entries.data());
    }
    data.extend_from_slice(patch.entries.data());
    Ok(AdditiveMask {
        family: MaskFamily::GstStacked,
        entries: Tensor::new(vec![s, s], data)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layout(t: usize, n: usize, u: usize, v: usize, r: usize) -> TokenLayout {
        TokenLayout::new(t, n, u, v, r, 8).unwrap()
    }

    #[test]
    fn layout_validation() {
        assert!(TokenLayout::new(0, 4, 2, 1, 2, 8).is_err());
        assert!(TokenLayout::new(4, 4, 2, 1, 1, 8).is_err());
        assert!(TokenLayout::new(4, 4, 0, 1, 2, 8).is_ok());
        let l: TokenLayout = "4,4,2,1,2".parse().unwrap();
        assert_eq!(l, TokenLayout::toy(64));
        assert_eq!(l.seq_len(), 19);
        assert_eq!(l.patch_index(1, 2), 1 + 2 + 4 + 2);
        assert!("4,4,2".parse::<TokenLayout>().is_err());
    }

    #[test]
    fn slt_first_row_for_toy_layout() {
        let m = slt_mask(&layout(4, 4, 2, 1, 2)).unwrap();
        let open: Vec<usize> = (0..16).filter(|&j| m.is_open(0, j)).collect();
        assert_eq!(open, vec![0, 4, 8, 12]);
        for i in 0..16 {
            assert!(m.is_open(i, i));
            assert_eq!(m.row_open_count(i), 4);
        }
    }

    #[test]
    fn slt_rows_have_t_zeros() {
        for n in [1, 4, 9] {
            for t in [2, 4, 8] {
                let m = slt_mask(&layout(t, n, 1, 1, 2)).unwrap();
                assert!((0..t * n).all(|i| m.row_open_count(i) == t));
            }
        }
    }

    #[test]
    fn patch_rows_default_and_literal_block() {
        let l = layout(4, 4, 2, 1, 2);
        let m = gst_patch_mask(&l).unwrap();
        assert!(!m.is_open(0, 0));
        assert_eq!(m.row_open_count(0), 2 + 4);
        let lit = gst_patch_mask_with(
            &l,
            &MaskOptions {
                patch_attends_cls: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(lit.is_open(0, 0));
        assert_eq!(lit.row_open_count(0), 7);
        assert!((0..16).all(|i| lit.row_open_count(i) == 1 + 2 + 4));
    }

    #[test]
    fn single_patch_frames_give_identity_patch_block() {
        let l = layout(5, 1, 1, 1, 2);
        let m = gst_patch_mask(&l).unwrap();
        let first = l.first_patch();
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(m.is_open(i, first + j), i == j);
            }
        }
    }

    #[test]
    fn mst_level_one_uses_stride_two() {
        let l = layout(4, 4, 2, 1, 2);
        let m = gst_mst_mask(&l).unwrap();
        assert!(!m.is_open(1, 0));
        assert!(m.is_open(1, 1) && m.is_open(1, 2));
        let frames: Vec<usize> = (0..4)
            .filter(|&f| m.is_open(1, l.patch_index(f, 0)))
            .collect();
        assert_eq!(frames, vec![0, 2]);
        // level 0 attends every frame but not the coarser level
        assert!(!m.is_open(0, 2));
        assert_eq!(m.row_open_count(0), 1 + 16);
    }

    #[test]
    fn mst_zero_count_formula() {
        for u in 1..=3 {
            for v in [1, 2, 4] {
                for r in [2, 3] {
                    let l = layout(7, 3, u, v, r);
                    let m = gst_mst_mask(&l).unwrap();
                    for i in 0..u * v {
                        let level = i / v;
                        let stride = r.pow(level as u32);
                        let expected = v * (level + 1) + 3 * 7usize.div_ceil(stride);
                        assert_eq!(m.row_open_count(i), expected);
                    }
                }
            }
        }
    }

    #[test]
    fn coarser_direction_flips_self_block() {
        let l = layout(4, 4, 3, 1, 2);
        let opts = MaskOptions {
            mst_self: MstSelfDirection::CoarserOrEqual,
            ..Default::default()
        };
        let m = gst_mst_mask_with(&l, &opts).unwrap();
        assert!(m.is_open(0, 1) && m.is_open(0, 2) && m.is_open(0, 3));
        assert!(!m.is_open(2, 1) && !m.is_open(2, 2) && m.is_open(2, 3));
    }

    #[test]
    fn stride_beyond_clip_keeps_frame_zero() {
        let l = layout(2, 2, 3, 1, 3);
        let m = gst_mst_mask(&l).unwrap();
        // level 2 stride 9 > T=2
        assert!(m.is_open(2, l.patch_index(0, 0)));
        assert!(!m.is_open(2, l.patch_index(1, 0)));
    }

    #[test]
    fn cls_row_and_stacking() {
        let l = TokenLayout::new(12, 49, 3, 4, 2, 8).unwrap();
        let cls = gst_cls_mask(&l).unwrap();
        assert_eq!(cls.cols(), 601);
        assert_eq!(cls.row_open_count(0), 601);
        let stacked = gst_stacked_mask(&layout(4, 4, 2, 1, 2)).unwrap();
        assert_eq!((stacked.rows(), stacked.cols()), (19, 19));
        assert_eq!(stacked.row_open_count(0), 19);
        assert_eq!(stacked.family(), MaskFamily::GstStacked);
    }

    #[test]
    fn no_mst_levels() {
        let l = layout(3, 2, 0, 1, 2);
        let m = gst_stacked_mask(&l).unwrap();
        assert_eq!(m.rows(), 1 + 6);
        assert!(gst_mst_mask(&l).is_err());
        // patch rows: same-frame patches only
        for i in 0..6 {
            let row = 1 + i;
            let open: Vec<usize> = (0..7).filter(|&j| m.is_open(row, j)).collect();
            let f = i / 2;
            assert_eq!(open, vec![1 + 2 * f, 2 + 2 * f]);
        }
    }

    #[test]
    fn dumps() {
        let m = slt_mask(&layout(2, 2, 0, 1, 2)).unwrap();
        assert_eq!(
            m.to_csv(),
            "0,-inf,0,-inf\n-inf,0,-inf,0\n0,-inf,0,-inf\n-inf,0,-inf,0\n"
        );
        assert!(m.to_pgm().starts_with("P2\n4 4\n255\n255 0 255 0\n"));
        assert_eq!(m.value(0, 1), f64::NEG_INFINITY);
        assert_eq!(m.to_tensor().at(0, 0), 0.0);
    }
}
