//! Cost and consistency sweep across candidate subspace sizes.
//!
//! For each size that tiles the scene, the sweep records the closed-form
//! attention cost and runs one seeded block forward to measure how
//! flow-consistent its output is. Sizes that do not divide the grid are
//! skipped with a reason instead of failing the whole sweep.

use serde::{Deserialize, Serialize};

use crate::attention::{
    cost_model, stsa_block, AttentionMode, AttentionParams, CostDims, StsaOptions,
};
use crate::error::Result;
use crate::flow::FlowSet;
use crate::harness::metrics::along_flow_variation;
use crate::rng::derive_seed;
use crate::subspace::SubspaceSpec;
use crate::tensor::LatentVideo;

/// The three default candidate sizes, ordered by window volume.
pub fn default_sweep_sizes() -> Vec<SubspaceSpec> {
    [(4, 2, 2), (4, 4, 4), (8, 4, 4)]
        .into_iter()
        .map(|(f, h, w)| SubspaceSpec::new(f, h, w).expect("static sizes"))
        .collect()
}

/// One accepted sweep entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepRow {
    pub spec: SubspaceSpec,
    /// Tokens per window, `s_f * s_h * s_w`.
    pub window_volume: usize,
    /// Q/K/V/output projection multiply-accumulates.
    pub projection_macs: u64,
    /// Score plus value multiply-accumulates, the part that grows with
    /// window volume.
    pub attention_macs: u64,
    pub total_macs: u64,
    /// Largest token buffer one attention call holds.
    pub peak_tokens: usize,
    /// Along-flow variation of the block output under this size.
    pub along_flow_variation: f64,
}

/// Sweep outcome: accepted rows in input order plus skipped sizes with the
/// reason each was dropped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<SkippedSize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkippedSize {
    pub spec: SubspaceSpec,
    pub reason: String,
}

/// Evaluate each candidate size on one scene.
///
/// Every row uses identically seeded attention parameters, so the variation
/// column differs only through the partition geometry. Non-dividing sizes
/// land in `skipped`.
pub fn sweep_subspace_sizes(
    video: &LatentVideo<f64>,
    flows: &FlowSet,
    sizes: &[SubspaceSpec],
    d_model: usize,
    heads: usize,
    seed: u64,
) -> Result<SweepTable> {
    let (f, h, w, c) = video.shape();
    let dims = CostDims {
        frames: f,
        height: h,
        width: w,
        channels: c,
        d_model,
    };
    let params = AttentionParams::<f64>::seeded(c, d_model, heads, derive_seed(seed, "sweep"))?;
    let mut table = SweepTable::default();
    for &spec in sizes {
        if let Err(e) = spec.check_divides(f, h, w) {
            table.skipped.push(SkippedSize {
                spec,
                reason: e.to_string(),
            });
            continue;
        }
        let cost = cost_model(AttentionMode::Subspace, dims, Some(spec))?;
        let y = stsa_block(video, flows, spec, &params, StsaOptions::default())?;
        table.rows.push(SweepRow {
            spec,
            window_volume: spec.window_volume(),
            projection_macs: cost.predicted.projection,
            attention_macs: cost.predicted.score + cost.predicted.value,
            total_macs: cost.predicted.total_macs(),
            peak_tokens: cost.predicted.peak_tokens,
            along_flow_variation: along_flow_variation(&y, flows)?,
        });
    }
    Ok(table)
}
