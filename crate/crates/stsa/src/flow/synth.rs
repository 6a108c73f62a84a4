//! Keypoint-driven flow synthesis: dense fields from sparse pose tracks.
//!
//! Each cell's displacement is a Gaussian-weighted average of the visible
//! keypoints' frame-to-frame displacements, with the bandwidth controlling
//! how far a keypoint's motion reaches. This stands in for a learned flow
//! estimator and, unlike one, comes with exact ground truth.

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::flow::{FlowField, FlowSet};
use crate::tensor::PoseSequence;

/// Synthesize the dense flow from frame `src` to frame `dst`.
///
/// Only keypoints visible in both frames contribute. Weights are computed
/// with the largest exponent factored out, so cells far from every keypoint
/// still get a well-defined average instead of an underflowed 0/0.
pub fn synth_flow_between(
    poses: &PoseSequence,
    src: usize,
    dst: usize,
    height: usize,
    width: usize,
    sigma: f64,
) -> Result<FlowField> {
    if sigma <= 0.0 || !sigma.is_finite() {
        return Err(Error::Config(format!(
            "flow synthesis bandwidth must be positive and finite, got {sigma}"
        )));
    }
    let frames = poses.frames();
    if src >= frames || dst >= frames {
        return Err(Error::OutOfBounds {
            context: "synth_flow_between",
            position: vec![src as i64, dst as i64],
            bounds: vec![frames, frames],
        });
    }
    // (anchor position in src, displacement to dst) per shared keypoint.
    let mut anchors: Vec<((f64, f64), (f64, f64))> = Vec::new();
    for k in 0..poses.keypoint_count() {
        if poses.is_visible(src, k) && poses.is_visible(dst, k) {
            let (ax, ay) = poses.keypoint(src, k);
            let (bx, by) = poses.keypoint(dst, k);
            anchors.push(((ax, ay), (bx - ax, by - ay)));
        }
    }
    if anchors.is_empty() {
        return Err(Error::NoVisibleKeypoints { src, dst });
    }
    let inv_two_sigma_sq = 1.0 / (2.0 * sigma * sigma);
    let mut disp = Array3::zeros((height, width, 2));
    for y in 0..height {
        for x in 0..width {
            let exponents: Vec<f64> = anchors
                .iter()
                .map(|((ax, ay), _)| {
                    let dx = x as f64 - ax;
                    let dy = y as f64 - ay;
                    -(dx * dx + dy * dy) * inv_two_sigma_sq
                })
                .collect();
            let peak = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut weight_sum = 0.0;
            let mut dx_sum = 0.0;
            let mut dy_sum = 0.0;
            for (e, (_, (dx, dy))) in exponents.iter().zip(&anchors) {
                let w = (e - peak).exp();
                weight_sum += w;
                dx_sum += w * dx;
                dy_sum += w * dy;
            }
            disp[(y, x, 0)] = (dx_sum / weight_sum) as f32;
            disp[(y, x, 1)] = (dy_sum / weight_sum) as f32;
        }
    }
    FlowField::new(src, dst, disp)
}

/// Synthesize the full adjacent-pair flow set for a pose sequence.
///
/// Fails on any adjacent pair with no shared visible keypoint; silent zero
/// flow would hide a broken track.
pub fn synth_flow_from_poses(
    poses: &PoseSequence,
    height: usize,
    width: usize,
    sigma: f64,
) -> Result<FlowSet> {
    let frames = poses.frames();
    if frames == 0 {
        return Err(Error::Config("pose sequence has no frames".into()));
    }
    let mut forward = Vec::with_capacity(frames.saturating_sub(1));
    let mut backward = Vec::with_capacity(frames.saturating_sub(1));
    for k in 0..frames.saturating_sub(1) {
        forward.push(synth_flow_between(poses, k, k + 1, height, width, sigma)?);
        backward.push(synth_flow_between(poses, k + 1, k, height, width, sigma)?);
    }
    FlowSet::from_pairs(height, width, forward, backward)
}
