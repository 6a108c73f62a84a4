//! Dense motion-flow fields between frames: lookup, nearest-cell rounding,
//! composition along a frame chain, and resolution changes.
//!
//! A [`FlowField`] stores per-cell displacements `(dx, dy)` between a source
//! and a target frame. A [`FlowSet`] holds the adjacent-pair fields (forward
//! and backward) for a whole clip; flows between arbitrary frames come from
//! [`FlowSet::between`], which composes the adjacent chain. The set also
//! tracks the cyclic half-window shift so that flow coordinates stay coherent
//! with a shifted feature grid.

mod io;
mod synth;

pub use io::{load_flow, save_flow};
pub use synth::{synth_flow_between, synth_flow_from_poses};

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::subspace::SubspaceSpec;

/// Round to the nearest integer cell, ties away from zero.
pub fn nearest(v: f64) -> Result<i64> {
    if !v.is_finite() {
        return Err(Error::NonFinite {
            context: "nearest",
        });
    }
    Ok(v.round() as i64)
}

pub(crate) fn clamp_cell(v: i64, extent: usize) -> usize {
    v.clamp(0, extent as i64 - 1) as usize
}

/// Dense displacement field from frame `src` to frame `dst`.
///
/// Displacements are stored `[H, W, 2]` with channel 0 holding `dx` (columns)
/// and channel 1 holding `dy` (rows), in grid cells at the field's own
/// resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    src: usize,
    dst: usize,
    disp: Array3<f32>,
}

impl FlowField {
    pub fn new(src: usize, dst: usize, disp: Array3<f32>) -> Result<Self> {
        let (_, _, two) = disp.dim();
        if two != 2 {
            return Err(Error::ShapeMismatch {
                context: "flow field",
                expected: vec![disp.dim().0, disp.dim().1, 2],
                got: disp.shape().to_vec(),
            });
        }
        if disp.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "flow field",
            });
        }
        Ok(FlowField { src, dst, disp })
    }

    pub fn zero(src: usize, dst: usize, height: usize, width: usize) -> Self {
        FlowField {
            src,
            dst,
            disp: Array3::zeros((height, width, 2)),
        }
    }

    /// `(source frame, target frame)` this field maps between.
    pub fn pair(&self) -> (usize, usize) {
        (self.src, self.dst)
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.disp.dim().0, self.disp.dim().1)
    }

    pub fn disp(&self) -> &Array3<f32> {
        &self.disp
    }

    /// Displacement vector `(dx, dy)` at cell `(x, y)`.
    pub fn at(&self, x: usize, y: usize) -> Result<(f64, f64)> {
        let (h, w) = self.resolution();
        if x >= w || y >= h {
            return Err(Error::OutOfBounds {
                context: "flow field",
                position: vec![x as i64, y as i64],
                bounds: vec![w, h],
            });
        }
        Ok((self.disp[(y, x, 0)] as f64, self.disp[(y, x, 1)] as f64))
    }

    fn relabel(mut self, src: usize, dst: usize) -> Self {
        self.src = src;
        self.dst = dst;
        self
    }

    fn rolled(&self, dy: usize, dx: usize) -> FlowField {
        let (h, w) = self.resolution();
        let (dy, dx) = (dy % h, dx % w);
        let mut disp = Array3::zeros((h, w, 2));
        for y in 0..h {
            for x in 0..w {
                for c in 0..2 {
                    disp[((y + dy) % h, (x + dx) % w, c)] = self.disp[(y, x, c)];
                }
            }
        }
        FlowField {
            src: self.src,
            dst: self.dst,
            disp,
        }
    }
}

/// Where the content of cell `(x, y)` lands in the target frame:
/// `(x + dx, y + dy)` in real coordinates.
pub fn flow_lookup(field: &FlowField, x: usize, y: usize) -> Result<(f64, f64)> {
    let (dx, dy) = field.at(x, y)?;
    Ok((x as f64 + dx, y as f64 + dy))
}

/// Chain two fields: the result maps `first`'s source frame to `second`'s
/// target frame.
///
/// At each cell the first displacement is followed, the landing position is
/// rounded to the nearest cell and clamped to the grid, and the second
/// field's displacement there is added.
pub fn compose(first: &FlowField, second: &FlowField) -> Result<FlowField> {
    if first.dst != second.src {
        return Err(Error::FlowPairMismatch {
            first: first.pair(),
            second: second.pair(),
        });
    }
    if first.resolution() != second.resolution() {
        let (h, w) = first.resolution();
        return Err(Error::ShapeMismatch {
            context: "compose",
            expected: vec![h, w],
            got: vec![second.resolution().0, second.resolution().1],
        });
    }
    let (h, w) = first.resolution();
    let mut disp = Array3::zeros((h, w, 2));
    for y in 0..h {
        for x in 0..w {
            let (x1, y1) = flow_lookup(first, x, y)?;
            let cx = clamp_cell(nearest(x1)?, w);
            let cy = clamp_cell(nearest(y1)?, h);
            let (dx2, dy2) = second.at(cx, cy)?;
            disp[(y, x, 0)] = self_sum(first.disp[(y, x, 0)], dx2);
            disp[(y, x, 1)] = self_sum(first.disp[(y, x, 1)], dy2);
        }
    }
    Ok(FlowField {
        src: first.src,
        dst: second.dst,
        disp,
    })
}

// Sum in f64 so integer-valued f32 flows compose without rounding drift.
fn self_sum(a: f32, b: f64) -> f32 {
    (a as f64 + b) as f32
}

/// Reduce resolution by an integer factor: each coarse cell takes the mean of
/// its `k`-by-`k` source block, and displacements are re-expressed in coarse
/// cells by dividing by `k`.
pub fn downsample(field: &FlowField, k: usize) -> Result<FlowField> {
    if k == 0 {
        return Err(Error::Config("downsample factor must be >= 1".into()));
    }
    let (h, w) = field.resolution();
    if h % k != 0 {
        return Err(Error::NotDivisible {
            what: "flow height",
            value: h,
            divisor: k,
        });
    }
    if w % k != 0 {
        return Err(Error::NotDivisible {
            what: "flow width",
            value: w,
            divisor: k,
        });
    }
    let mut disp = Array3::zeros((h / k, w / k, 2));
    let norm = (k * k * k) as f64;
    for y in 0..h / k {
        for x in 0..w / k {
            for c in 0..2 {
                let mut total = 0.0f64;
                for by in 0..k {
                    for bx in 0..k {
                        total += field.disp[(y * k + by, x * k + bx, c)] as f64;
                    }
                }
                disp[(y, x, c)] = (total / norm) as f32;
            }
        }
    }
    Ok(FlowField {
        src: field.src,
        dst: field.dst,
        disp,
    })
}

/// Adjacent-pair flows for a clip, with the bookkeeping needed to answer
/// "flow from frame a to frame b" after the grid has been cyclically shifted.
///
/// Fields are stored under the clip's original frame labels. A cyclic shift
/// does not change the fields' content (relative motion is unaffected by a
/// global roll); it only relabels frames and rolls each grid spatially. The
/// set records those offsets and translates queries back to original labels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSet {
    height: usize,
    width: usize,
    forward: Vec<FlowField>,
    backward: Vec<FlowField>,
    temporal_offset: usize,
    spatial_offset: (usize, usize),
}

impl FlowSet {
    /// Build from adjacent-pair fields. `forward[k]` must map `k -> k+1` and
    /// `backward[k]` must map `k+1 -> k`, all at one resolution.
    pub fn from_pairs(
        height: usize,
        width: usize,
        forward: Vec<FlowField>,
        backward: Vec<FlowField>,
    ) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Config(format!(
                "flow set resolution must be at least 1x1, got {height}x{width}"
            )));
        }
        if forward.len() != backward.len() {
            return Err(Error::Config(format!(
                "flow set needs matching chains, got {} forward and {} backward fields",
                forward.len(),
                backward.len()
            )));
        }
        for (k, field) in forward.iter().enumerate() {
            if field.pair() != (k, k + 1) {
                return Err(Error::FlowPairMismatch {
                    first: (k, k + 1),
                    second: field.pair(),
                });
            }
        }
        for (k, field) in backward.iter().enumerate() {
            if field.pair() != (k + 1, k) {
                return Err(Error::FlowPairMismatch {
                    first: (k + 1, k),
                    second: field.pair(),
                });
            }
        }
        for field in forward.iter().chain(backward.iter()) {
            if field.resolution() != (height, width) {
                return Err(Error::ShapeMismatch {
                    context: "flow set",
                    expected: vec![height, width],
                    got: vec![field.resolution().0, field.resolution().1],
                });
            }
        }
        Ok(FlowSet {
            height,
            width,
            forward,
            backward,
            temporal_offset: 0,
            spatial_offset: (0, 0),
        })
    }

    /// All-zero flows for a static clip.
    pub fn zero(frames: usize, height: usize, width: usize) -> Result<Self> {
        if frames == 0 {
            return Err(Error::Config("flow set needs at least one frame".into()));
        }
        let forward = (0..frames - 1)
            .map(|k| FlowField::zero(k, k + 1, height, width))
            .collect();
        let backward = (0..frames - 1)
            .map(|k| FlowField::zero(k + 1, k, height, width))
            .collect();
        FlowSet::from_pairs(height, width, forward, backward)
    }

    pub fn frames(&self) -> usize {
        self.forward.len() + 1
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Stored field `k -> k+1` in original frame labels.
    pub fn forward(&self, k: usize) -> Result<&FlowField> {
        self.forward.get(k).ok_or(Error::OutOfBounds {
            context: "forward flow",
            position: vec![k as i64],
            bounds: vec![self.forward.len()],
        })
    }

    /// Stored field `k+1 -> k` in original frame labels.
    pub fn backward(&self, k: usize) -> Result<&FlowField> {
        self.backward.get(k).ok_or(Error::OutOfBounds {
            context: "backward flow",
            position: vec![k as i64],
            bounds: vec![self.backward.len()],
        })
    }

    /// True when the set has been shifted and not yet unshifted.
    pub fn is_shifted(&self) -> bool {
        self.temporal_offset != 0 || self.spatial_offset != (0, 0)
    }

    /// Flow between two frames in the clip's *current* labeling, composed
    /// from the adjacent chain.
    ///
    /// The chain always runs monotonically through original labels, so a
    /// window that straddles the cyclic wrap after a shift composes the long
    /// way round rather than inventing a seam field that does not exist.
    pub fn between(&self, cur_a: usize, cur_b: usize) -> Result<FlowField> {
        let frames = self.frames();
        if cur_a >= frames || cur_b >= frames {
            return Err(Error::OutOfBounds {
                context: "flow between",
                position: vec![cur_a as i64, cur_b as i64],
                bounds: vec![frames, frames],
            });
        }
        let orig_a = (cur_a + frames - self.temporal_offset) % frames;
        let orig_b = (cur_b + frames - self.temporal_offset) % frames;
        if orig_a == orig_b {
            return Ok(FlowField::zero(cur_a, cur_b, self.height, self.width));
        }
        let mut acc = if orig_a < orig_b {
            let mut acc = self.forward[orig_a].clone();
            for k in orig_a + 1..orig_b {
                acc = compose(&acc, &self.forward[k])?;
            }
            acc
        } else {
            let mut acc = self.backward[orig_a - 1].clone();
            for k in (orig_b..orig_a - 1).rev() {
                acc = compose(&acc, &self.backward[k])?;
            }
            acc
        };
        acc = acc.relabel(cur_a, cur_b);
        Ok(acc)
    }

    fn with_offsets(
        &self,
        temporal: usize,
        spatial: (usize, usize),
        roll_y: usize,
        roll_x: usize,
    ) -> FlowSet {
        FlowSet {
            height: self.height,
            width: self.width,
            forward: self.forward.iter().map(|f| f.rolled(roll_y, roll_x)).collect(),
            backward: self
                .backward
                .iter()
                .map(|f| f.rolled(roll_y, roll_x))
                .collect(),
            temporal_offset: temporal,
            spatial_offset: spatial,
        }
    }
}

/// Re-index a flow set for a grid that was rolled by half a window:
/// each field rolls spatially by `(s_h/2, s_w/2)` and frame labels advance
/// by `s_f/2` cyclically.
pub fn shift_flows(flows: &FlowSet, spec: SubspaceSpec) -> FlowSet {
    let frames = flows.frames();
    let (df, dh, dw) = spec.shift_amounts();
    let (dh, dw) = (dh % flows.height, dw % flows.width);
    let temporal = (flows.temporal_offset + df) % frames;
    let spatial = (
        (flows.spatial_offset.0 + dh) % flows.height,
        (flows.spatial_offset.1 + dw) % flows.width,
    );
    flows.with_offsets(temporal, spatial, dh, dw)
}

/// Exact inverse of [`shift_flows`].
pub fn unshift_flows(flows: &FlowSet, spec: SubspaceSpec) -> FlowSet {
    let frames = flows.frames();
    let (df, dh, dw) = spec.shift_amounts();
    let (dh, dw) = (dh % flows.height, dw % flows.width);
    let temporal = (flows.temporal_offset + frames - df % frames) % frames;
    let spatial = (
        (flows.spatial_offset.0 + flows.height - dh) % flows.height,
        (flows.spatial_offset.1 + flows.width - dw) % flows.width,
    );
    flows.with_offsets(temporal, spatial, flows.height - dh, flows.width - dw)
}
