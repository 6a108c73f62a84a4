//! Decomposition of the global `[F, H, W]` grid into non-overlapping
//! subspaces, and the half-window cyclic shift that connects them.
//!
//! A [`SubspaceSpec`] gives the window extent `[s_f, s_h, s_w]` along frames,
//! rows, and columns. [`split`] cuts a video into `N` token blocks of
//! `n = s_f * s_h * s_w` tokens each; [`merge`] is its exact inverse.
//! [`shift`] rolls the whole grid cyclically by half a window so that
//! consecutive attention blocks see staggered partitions, which is what lets
//! per-window consistency propagate across the full grid.

use ndarray::{Array2, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Fnv64;
use crate::scalar::Scalar;
use crate::tensor::LatentVideo;

/// Window extent in frames, rows, and columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubspaceSpec {
    pub s_f: usize,
    pub s_h: usize,
    pub s_w: usize,
}

impl SubspaceSpec {
    pub fn new(s_f: usize, s_h: usize, s_w: usize) -> Result<Self> {
        if s_f == 0 || s_h == 0 || s_w == 0 {
            return Err(Error::Config(format!(
                "subspace extents must all be >= 1, got [{s_f}, {s_h}, {s_w}]"
            )));
        }
        Ok(SubspaceSpec { s_f, s_h, s_w })
    }

    /// Tokens per subspace, `n = s_f * s_h * s_w`.
    pub fn window_volume(&self) -> usize {
        self.s_f * self.s_h * self.s_w
    }

    /// Half-window roll amounts `(floor(s_f/2), floor(s_h/2), floor(s_w/2))`.
    pub fn shift_amounts(&self) -> (usize, usize, usize) {
        (self.s_f / 2, self.s_h / 2, self.s_w / 2)
    }

    /// Check that the spec tiles a `[F, H, W]` grid exactly.
    pub fn check_divides(&self, frames: usize, height: usize, width: usize) -> Result<()> {
        if !frames.is_multiple_of(self.s_f) {
            return Err(Error::NotDivisible {
                what: "frames",
                value: frames,
                divisor: self.s_f,
            });
        }
        if !height.is_multiple_of(self.s_h) {
            return Err(Error::NotDivisible {
                what: "height",
                value: height,
                divisor: self.s_h,
            });
        }
        if !width.is_multiple_of(self.s_w) {
            return Err(Error::NotDivisible {
                what: "width",
                value: width,
                divisor: self.s_w,
            });
        }
        Ok(())
    }
}

impl std::fmt::Display for SubspaceSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{}, {}, {}]", self.s_f, self.s_h, self.s_w)
    }
}

/// Record of how a video was split: grid dims, the spec, and the window
/// layout. Carries a checksum so blocks cannot be merged against the wrong
/// partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubspacePartition {
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    spec: SubspaceSpec,
    checksum: u64,
}

impl SubspacePartition {
    fn new(frames: usize, height: usize, width: usize, channels: usize, spec: SubspaceSpec) -> Self {
        let mut h = Fnv64::new();
        h.write_bytes(b"subspace-partition");
        for v in [frames, height, width, channels, spec.s_f, spec.s_h, spec.s_w] {
            h.write_usize(v);
        }
        SubspacePartition {
            frames,
            height,
            width,
            channels,
            spec,
            checksum: h.finish(),
        }
    }

    /// Number of subspaces `N = (F/s_f) * (H/s_h) * (W/s_w)`.
    pub fn block_count(&self) -> usize {
        (self.frames / self.spec.s_f)
            * (self.height / self.spec.s_h)
            * (self.width / self.spec.s_w)
    }

    pub fn spec(&self) -> SubspaceSpec {
        self.spec
    }

    pub fn grid(&self) -> (usize, usize, usize, usize) {
        (self.frames, self.height, self.width, self.channels)
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }

    /// Ordered `(f, h, w)` positions of block `index`, row-major within the
    /// window.
    pub fn block_positions(&self, index: usize) -> Vec<(usize, usize, usize)> {
        let wins_h = self.height / self.spec.s_h;
        let wins_w = self.width / self.spec.s_w;
        let wf = index / (wins_h * wins_w);
        let wh = (index / wins_w) % wins_h;
        let ww = index % wins_w;
        let mut out = Vec::with_capacity(self.spec.window_volume());
        for df in 0..self.spec.s_f {
            for dh in 0..self.spec.s_h {
                for dw in 0..self.spec.s_w {
                    out.push((
                        wf * self.spec.s_f + df,
                        wh * self.spec.s_h + dh,
                        ww * self.spec.s_w + dw,
                    ));
                }
            }
        }
        out
    }
}

/// One subspace worth of tokens, `[n, C]`, tagged with its origin so merges
/// are provenance-checked.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBlock<T: Scalar> {
    subspace: usize,
    partition_checksum: u64,
    tokens: Array2<T>,
}

impl<T: Scalar> TokenBlock<T> {
    pub fn subspace_index(&self) -> usize {
        self.subspace
    }

    pub fn tokens(&self) -> &Array2<T> {
        &self.tokens
    }

    /// Replace the token payload (e.g. with an attention output), keeping the
    /// provenance tag. The new tokens must have the same shape.
    pub fn with_tokens(&self, tokens: Array2<T>) -> Result<TokenBlock<T>> {
        if tokens.dim() != self.tokens.dim() {
            return Err(Error::ShapeMismatch {
                context: "token block",
                expected: vec![self.tokens.dim().0, self.tokens.dim().1],
                got: tokens.shape().to_vec(),
            });
        }
        Ok(TokenBlock {
            subspace: self.subspace,
            partition_checksum: self.partition_checksum,
            tokens,
        })
    }
}

/// Cut a video into its subspace token blocks.
///
/// Blocks are ordered by window index (frame-major), and tokens within each
/// block are ordered `(f, h, w)` row-major. Fails if the spec does not divide
/// the grid; see [`pad_to_multiple`] for the opt-in padding path.
pub fn split<T: Scalar>(
    x: &LatentVideo<T>,
    spec: SubspaceSpec,
) -> Result<(Vec<TokenBlock<T>>, SubspacePartition)> {
    let (f, h, w, c) = x.shape();
    spec.check_divides(f, h, w)?;
    let partition = SubspacePartition::new(f, h, w, c, spec);
    let n = spec.window_volume();
    let data = x.data();
    let mut blocks = Vec::with_capacity(partition.block_count());
    for index in 0..partition.block_count() {
        let mut tokens = Array2::zeros((n, c));
        for (row, (pf, ph, pw)) in partition.block_positions(index).into_iter().enumerate() {
            for ci in 0..c {
                tokens[(row, ci)] = data[(pf, ph, pw, ci)];
            }
        }
        blocks.push(TokenBlock {
            subspace: index,
            partition_checksum: partition.checksum,
            tokens,
        });
    }
    Ok((blocks, partition))
}

/// Reassemble a video from its token blocks. Exact inverse of [`split`].
///
/// Blocks must arrive in partition order with matching provenance tags;
/// permuted or foreign blocks are rejected.
pub fn merge<T: Scalar>(
    blocks: &[TokenBlock<T>],
    partition: &SubspacePartition,
) -> Result<LatentVideo<T>> {
    if blocks.len() != partition.block_count() {
        return Err(Error::PartitionMismatch(format!(
            "expected {} blocks, got {}",
            partition.block_count(),
            blocks.len()
        )));
    }
    let (f, h, w, c) = partition.grid();
    let n = partition.spec().window_volume();
    let mut data = Array4::zeros((f, h, w, c));
    for (i, block) in blocks.iter().enumerate() {
        if block.partition_checksum != partition.checksum {
            return Err(Error::ChecksumMismatch {
                context: "merge: block from a different partition",
                expected: partition.checksum,
                got: block.partition_checksum,
            });
        }
        if block.subspace != i {
            return Err(Error::PartitionMismatch(format!(
                "block for subspace {} found at position {i}",
                block.subspace
            )));
        }
        if block.tokens.dim() != (n, c) {
            return Err(Error::ShapeMismatch {
                context: "merge",
                expected: vec![n, c],
                got: block.tokens.shape().to_vec(),
            });
        }
        for (row, (pf, ph, pw)) in partition.block_positions(i).into_iter().enumerate() {
            for ci in 0..c {
                data[(pf, ph, pw, ci)] = block.tokens[(row, ci)];
            }
        }
    }
    LatentVideo::new(data)
}

fn roll<T: Scalar>(x: &LatentVideo<T>, df: usize, dh: usize, dw: usize) -> LatentVideo<T> {
    let (f, h, w, c) = x.shape();
    let (df, dh, dw) = (df % f, dh % h, dw % w);
    let src = x.data();
    let mut data = Array4::zeros((f, h, w, c));
    for fi in 0..f {
        for hi in 0..h {
            for wi in 0..w {
                let tf = (fi + df) % f;
                let th = (hi + dh) % h;
                let tw = (wi + dw) % w;
                for ci in 0..c {
                    data[(tf, th, tw, ci)] = src[(fi, hi, wi, ci)];
                }
            }
        }
    }
    LatentVideo::from_array_unchecked(data)
}

/// Cyclic half-window roll: content at `(f, h, w)` moves to
/// `(f + s_f/2, h + s_h/2, w + s_w/2)` modulo the grid.
pub fn shift<T: Scalar>(x: &LatentVideo<T>, spec: SubspaceSpec) -> LatentVideo<T> {
    let (df, dh, dw) = spec.shift_amounts();
    roll(x, df, dh, dw)
}

/// Exact inverse of [`shift`].
pub fn unshift<T: Scalar>(x: &LatentVideo<T>, spec: SubspaceSpec) -> LatentVideo<T> {
    let (f, h, w, _) = x.shape();
    let (df, dh, dw) = spec.shift_amounts();
    roll(x, f - df % f, h - dh % h, w - dw % w)
}

/// Index of the window containing `(f, h, w)` under the regular or shifted
/// partition of an `[F, H, W]` grid.
///
/// Under the shifted partition a position is classified by where the half-
/// window roll moves it, which is how content lands in the staggered windows.
pub fn subspace_of(
    position: (usize, usize, usize),
    grid: (usize, usize, usize),
    spec: SubspaceSpec,
    shifted: bool,
) -> Result<usize> {
    let (f, h, w) = position;
    let (frames, height, width) = grid;
    if f >= frames || h >= height || w >= width {
        return Err(Error::OutOfBounds {
            context: "subspace_of",
            position: vec![f as i64, h as i64, w as i64],
            bounds: vec![frames, height, width],
        });
    }
    spec.check_divides(frames, height, width)?;
    let (mut f, mut h, mut w) = (f, h, w);
    if shifted {
        let (df, dh, dw) = spec.shift_amounts();
        f = (f + df) % frames;
        h = (h + dh) % height;
        w = (w + dw) % width;
    }
    let wins_h = height / spec.s_h;
    let wins_w = width / spec.s_w;
    Ok((f / spec.s_f) * wins_h * wins_w + (h / spec.s_h) * wins_w + w / spec.s_w)
}

/// Pad a video up to the next multiple of each window extent by replicating
/// its trailing frame/row/column. Returns the padded video and the original
/// dims for [`crop_to`].
pub fn pad_to_multiple<T: Scalar>(
    x: &LatentVideo<T>,
    spec: SubspaceSpec,
) -> (LatentVideo<T>, (usize, usize, usize)) {
    let (f, h, w, c) = x.shape();
    let up = |v: usize, s: usize| v.div_ceil(s) * s;
    let (pf, ph, pw) = (up(f, spec.s_f), up(h, spec.s_h), up(w, spec.s_w));
    if (pf, ph, pw) == (f, h, w) {
        return (x.clone(), (f, h, w));
    }
    let src = x.data();
    let mut data = Array4::zeros((pf, ph, pw, c));
    for fi in 0..pf {
        for hi in 0..ph {
            for wi in 0..pw {
                let sf = fi.min(f - 1);
                let sh = hi.min(h - 1);
                let sw = wi.min(w - 1);
                for ci in 0..c {
                    data[(fi, hi, wi, ci)] = src[(sf, sh, sw, ci)];
                }
            }
        }
    }
    (LatentVideo::from_array_unchecked(data), (f, h, w))
}

/// Crop a (padded) video back to `dims`.
pub fn crop_to<T: Scalar>(
    x: &LatentVideo<T>,
    dims: (usize, usize, usize),
) -> Result<LatentVideo<T>> {
    let (f, h, w) = dims;
    let (xf, xh, xw, c) = x.shape();
    if f > xf || h > xh || w > xw {
        return Err(Error::ShapeMismatch {
            context: "crop_to",
            expected: vec![f, h, w],
            got: vec![xf, xh, xw],
        });
    }
    let data = x
        .data()
        .slice(ndarray::s![0..f, 0..h, 0..w, 0..c])
        .to_owned();
    LatentVideo::new(data)
}
