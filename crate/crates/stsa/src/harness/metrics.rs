//! Consistency measurements over latent videos.
//!
//! The core quantity is along-flow variation: how much a cell's features
//! change when tracked one frame forward along the motion flow. A perfectly
//! flow-consistent video scores zero; content that ignores its flow scores
//! high. Naive temporal variation (no tracking) is the zero-flow special
//! case and serves as the reference point.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::attention::{cost_model, AttentionMode, CostDims, CostReport};
use crate::error::{Error, Result};
use crate::flow::{clamp_cell, nearest, FlowSet};
use crate::scalar::Scalar;
use crate::subspace::SubspaceSpec;
use crate::tensor::LatentVideo;

fn check_coverage<T: Scalar>(x: &LatentVideo<T>, flows: &FlowSet) -> Result<()> {
    if flows.is_shifted() {
        return Err(Error::Config(
            "variation metrics need flows in original frame order, not shifted".into(),
        ));
    }
    let (f, h, w, _) = x.shape();
    if flows.frames() != f || flows.resolution() != (h, w) {
        return Err(Error::ShapeMismatch {
            context: "variation flows",
            expected: vec![f, h, w],
            got: vec![flows.frames(), flows.resolution().0, flows.resolution().1],
        });
    }
    Ok(())
}

/// Squared feature distance between a cell and its flow correspondent in
/// the next frame, via nearest-neighbor lookup, summed over channels.
fn pair_sq<T: Scalar>(
    x: &LatentVideo<T>,
    flows: &FlowSet,
    k: usize,
    y: usize,
    col: usize,
) -> Result<f64> {
    let (_, h, w, c) = x.shape();
    let (dx, dy) = flows.forward(k)?.at(col, y)?;
    let tx = clamp_cell(nearest(col as f64 + dx)?, w);
    let ty = clamp_cell(nearest(y as f64 + dy)?, h);
    let mut sq = 0.0;
    for ch in 0..c {
        let d = x.data()[(k + 1, ty, tx, ch)].to_f64() - x.data()[(k, y, col, ch)].to_f64();
        sq += d * d;
    }
    Ok(sq)
}

/// Mean over frame pairs and cells of the squared along-flow difference.
pub fn along_flow_variation<T: Scalar>(x: &LatentVideo<T>, flows: &FlowSet) -> Result<f64> {
    check_coverage(x, flows)?;
    let (f, h, w, _) = x.shape();
    if f < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for k in 0..f - 1 {
        for y in 0..h {
            for col in 0..w {
                total += pair_sq(x, flows, k, y, col)?;
            }
        }
    }
    Ok(total / ((f - 1) * h * w) as f64)
}

/// [`along_flow_variation`] restricted to cells where the source frame's
/// mask is true. The masks are per frame, `[H, W]` each.
pub fn along_flow_variation_masked<T: Scalar>(
    x: &LatentVideo<T>,
    flows: &FlowSet,
    masks: &[Array2<bool>],
) -> Result<f64> {
    check_coverage(x, flows)?;
    let (f, h, w, _) = x.shape();
    if masks.len() != f {
        return Err(Error::ShapeMismatch {
            context: "variation masks",
            expected: vec![f],
            got: vec![masks.len()],
        });
    }
    for m in masks {
        if m.dim() != (h, w) {
            return Err(Error::ShapeMismatch {
                context: "variation masks",
                expected: vec![h, w],
                got: vec![m.dim().0, m.dim().1],
            });
        }
    }
    if f < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (k, mask) in masks.iter().enumerate().take(f - 1) {
        for y in 0..h {
            for col in 0..w {
                if mask[(y, col)] {
                    total += pair_sq(x, flows, k, y, col)?;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::Config("variation mask selects no cells".into()));
    }
    Ok(total / count as f64)
}

/// Mean squared per-cell change between consecutive frames, no tracking.
pub fn temporal_variation<T: Scalar>(x: &LatentVideo<T>) -> f64 {
    let (f, h, w, c) = x.shape();
    if f < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for k in 0..f - 1 {
        for y in 0..h {
            for col in 0..w {
                for ch in 0..c {
                    let d = x.data()[(k + 1, y, col, ch)].to_f64()
                        - x.data()[(k, y, col, ch)].to_f64();
                    total += d * d;
                }
            }
        }
    }
    total / ((f - 1) * h * w) as f64
}

/// Provenance of one measurement run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub seed: u64,
    pub precision: String,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub subspace: SubspaceSpec,
    pub shifted: bool,
}

/// Consistency metrics plus the cost picture for one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub meta: RunMeta,
    /// Mean squared feature change tracked along the flow.
    pub along_flow_variation: f64,
    /// Mean squared feature change at fixed cells.
    pub temporal_variation: f64,
    /// Predicted multiply-accumulate totals per attention mode.
    pub costs: Vec<CostReport>,
}

impl ConsistencyReport {
    /// Both metrics must be finite and non-negative.
    pub fn new(
        meta: RunMeta,
        along_flow: f64,
        temporal: f64,
        costs: Vec<CostReport>,
    ) -> Result<Self> {
        for (name, v) in [("along-flow", along_flow), ("temporal", temporal)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!(
                    "{name} variation must be finite and non-negative, got {v}"
                )));
            }
        }
        Ok(ConsistencyReport {
            meta,
            along_flow_variation: along_flow,
            temporal_variation: temporal,
            costs,
        })
    }
}

/// Measure a video against its flows and attach cost predictions for the
/// subspace, temporal, and full attention modes at matching dimensions.
pub fn consistency_report<T: Scalar>(
    x: &LatentVideo<T>,
    flows: &FlowSet,
    spec: SubspaceSpec,
    d_model: usize,
    seed: u64,
    shifted: bool,
) -> Result<ConsistencyReport> {
    let (f, h, w, c) = x.shape();
    let dims = CostDims {
        frames: f,
        height: h,
        width: w,
        channels: c,
        d_model,
    };
    let costs = vec![
        cost_model(AttentionMode::Subspace, dims, Some(spec))?,
        cost_model(AttentionMode::Temporal, dims, None)?,
        cost_model(AttentionMode::Full, dims, None)?,
    ];
    let meta = RunMeta {
        seed,
        precision: T::PRECISION.to_string(),
        frames: f,
        height: h,
        width: w,
        channels: c,
        subspace: spec,
        shifted,
    };
    ConsistencyReport::new(
        meta,
        along_flow_variation(x, flows)?,
        temporal_variation(x),
        costs,
    )
}
