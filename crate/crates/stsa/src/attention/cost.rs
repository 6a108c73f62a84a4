//! Closed-form cost accounting for every attention variant.
//!
//! [`cost_model`] predicts the exact multiply-accumulate counts an
//! instrumented run records in its [`MacTally`], so the two can be compared
//! with `==` rather than a tolerance. Only matrix-multiply MACs are counted;
//! softmax exponentials, rescaling, and data movement are not.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::attention::MacTally;
use crate::error::{Error, Result};
use crate::subspace::SubspaceSpec;

/// Which frames supply keys and values in cross-frame attention.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CrossFrameMode {
    /// Every frame attends to frame 0.
    First,
    /// Every frame attends to frame `F / 2`.
    Middle,
    /// Frame `k` attends to frame `k - 1`; frame 0 attends to itself.
    Previous,
    /// Every frame attends to all frames.
    All,
}

/// Attention variant selector shared by the cost model and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    Subspace,
    Temporal,
    CrossFrame(CrossFrameMode),
    Full,
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            AttentionMode::Subspace => "subspace",
            AttentionMode::Temporal => "temporal",
            AttentionMode::CrossFrame(CrossFrameMode::First) => "crossframe-first",
            AttentionMode::CrossFrame(CrossFrameMode::Middle) => "crossframe-middle",
            AttentionMode::CrossFrame(CrossFrameMode::Previous) => "crossframe-previous",
            AttentionMode::CrossFrame(CrossFrameMode::All) => "crossframe-all",
            AttentionMode::Full => "full",
        };
        f.write_str(s)
    }
}

impl FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "subspace" => AttentionMode::Subspace,
            "temporal" => AttentionMode::Temporal,
            "crossframe-first" => AttentionMode::CrossFrame(CrossFrameMode::First),
            "crossframe-middle" => AttentionMode::CrossFrame(CrossFrameMode::Middle),
            "crossframe-previous" => AttentionMode::CrossFrame(CrossFrameMode::Previous),
            "crossframe-all" => AttentionMode::CrossFrame(CrossFrameMode::All),
            "full" => AttentionMode::Full,
            other => {
                return Err(Error::Config(format!(
                    "unknown attention mode '{other}' (expected subspace, temporal, \
                     crossframe-first, crossframe-middle, crossframe-previous, \
                     crossframe-all, or full)"
                )))
            }
        })
    }
}

impl Serialize for AttentionMode {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> serde::Deserialize<'de> for AttentionMode {
    fn deserialize<D: serde::Deserializer<'de>>(
        deserializer: D,
    ) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Problem dimensions the cost model is evaluated at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct CostDims {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub d_model: usize,
}

impl CostDims {
    pub fn tokens(&self) -> usize {
        self.frames * self.height * self.width
    }
}

/// Predicted cost of one attention pass in a given mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct CostReport {
    pub mode: AttentionMode,
    pub dims: CostDims,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spec: Option<SubspaceSpec>,
    /// Closed-form counts, field-for-field comparable with a measured tally.
    pub predicted: MacTally,
}

impl CostReport {
    pub fn total_macs(&self) -> u64 {
        self.predicted.total_macs()
    }

    /// True when a measured tally matches the prediction exactly.
    pub fn matches(&self, measured: &MacTally) -> bool {
        self.predicted == *measured
    }
}

fn mul(parts: &[usize]) -> u64 {
    parts.iter().map(|&p| p as u64).product()
}

/// Exact multiply-accumulate counts for one pass of the chosen attention
/// variant. `spec` is required for (and only for) subspace mode.
pub fn cost_model(
    mode: AttentionMode,
    dims: CostDims,
    spec: Option<SubspaceSpec>,
) -> Result<CostReport> {
    let CostDims {
        frames: f,
        height: h,
        width: w,
        channels: c,
        d_model: d,
    } = dims;
    if f == 0 || h == 0 || w == 0 || c == 0 || d == 0 {
        return Err(Error::Config(
            "cost model dimensions must all be at least 1".into(),
        ));
    }
    if !matches!(mode, AttentionMode::Subspace) && spec.is_some() {
        return Err(Error::Config(
            "subspace size is only meaningful in subspace mode".into(),
        ));
    }
    let tokens = dims.tokens();
    let hw = h * w;
    // Q, K, V in; one projection out. Cross-frame modes override this to
    // account for key/value caching.
    let all_projections = 4 * mul(&[tokens, c, d]);
    let predicted = match mode {
        AttentionMode::Subspace => {
            let spec = spec.ok_or_else(|| {
                Error::Config("subspace mode needs a subspace size".into())
            })?;
            spec.check_divides(f, h, w)?;
            let n = spec.window_volume();
            let blocks = tokens / n;
            MacTally {
                projection: all_projections,
                score: mul(&[blocks, n, n, d]),
                value: mul(&[blocks, n, n, d]),
                peak_tokens: n,
            }
        }
        AttentionMode::Temporal => MacTally {
            projection: all_projections,
            score: mul(&[hw, f, f, d]),
            value: mul(&[hw, f, f, d]),
            peak_tokens: f,
        },
        AttentionMode::Full => MacTally {
            projection: all_projections,
            score: mul(&[tokens, tokens, d]),
            value: mul(&[tokens, tokens, d]),
            peak_tokens: tokens,
        },
        AttentionMode::CrossFrame(cf) => {
            // Union of designated frames over all queries (projected once
            // each), and key/value frames per query.
            let (union_frames, kv_frames) = match cf {
                CrossFrameMode::First | CrossFrameMode::Middle => (1, 1),
                CrossFrameMode::Previous => (if f == 1 { 1 } else { f - 1 }, 1),
                CrossFrameMode::All => (f, f),
            };
            MacTally {
                projection: 2 * mul(&[tokens, c, d]) + 2 * mul(&[union_frames, hw, c, d]),
                score: mul(&[f, hw, kv_frames, hw, d]),
                value: mul(&[f, hw, kv_frames, hw, d]),
                peak_tokens: kv_frames * hw,
            }
        }
    };
    Ok(CostReport {
        mode,
        dims,
        spec,
        predicted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{
        crossframe_attention_counted, full_attention_counted, subspace_attention_counted,
        temporal_attention_counted, AttentionParams,
    };
    use crate::subspace::split;
    use crate::tensor::independent_noise;

    fn dims(f: usize, h: usize, w: usize, c: usize, d: usize) -> CostDims {
        CostDims {
            frames: f,
            height: h,
            width: w,
            channels: c,
            d_model: d,
        }
    }

    #[test]
    fn headline_ratio_subspace_over_full_is_one_sixty_fourth() {
        let dims = dims(16, 16, 16, 64, 64);
        let spec = SubspaceSpec::new(4, 4, 4).unwrap();
        let sub = cost_model(AttentionMode::Subspace, dims, Some(spec)).unwrap();
        let full = cost_model(AttentionMode::Full, dims, None).unwrap();
        assert_eq!(full.predicted.score % sub.predicted.score, 0);
        assert_eq!(full.predicted.score / sub.predicted.score, 64);
        assert_eq!(full.predicted.value / sub.predicted.value, 64);
        // Projection work is identical; only attention shrinks.
        assert_eq!(full.predicted.projection, sub.predicted.projection);
    }

    #[test]
    fn whole_space_subspace_equals_full() {
        let d = dims(4, 6, 6, 8, 16);
        let spec = SubspaceSpec::new(4, 6, 6).unwrap();
        let sub = cost_model(AttentionMode::Subspace, d, Some(spec)).unwrap();
        let full = cost_model(AttentionMode::Full, d, None).unwrap();
        assert_eq!(sub.predicted, full.predicted);
    }

    #[test]
    fn temporal_score_formula() {
        let d = dims(6, 5, 7, 3, 12);
        let report = cost_model(AttentionMode::Temporal, d, None).unwrap();
        assert_eq!(report.predicted.score, (5 * 7 * 6 * 6 * 12) as u64);
        assert_eq!(report.predicted.peak_tokens, 6);
    }

    #[test]
    fn subspace_mode_requires_spec_and_divisibility() {
        let d = dims(4, 4, 4, 2, 4);
        assert!(cost_model(AttentionMode::Subspace, d, None).is_err());
        let bad = SubspaceSpec::new(3, 4, 4).unwrap();
        assert!(cost_model(AttentionMode::Subspace, d, Some(bad)).is_err());
        assert!(cost_model(AttentionMode::Full, d, Some(bad)).is_err());
    }

    #[test]
    fn mode_strings_round_trip() {
        for s in [
            "subspace",
            "temporal",
            "crossframe-first",
            "crossframe-middle",
            "crossframe-previous",
            "crossframe-all",
            "full",
        ] {
            let mode: AttentionMode = s.parse().unwrap();
            assert_eq!(mode.to_string(), s);
        }
        assert!("sideways".parse::<AttentionMode>().is_err());
    }

    #[test]
    fn instrumented_subspace_run_matches_prediction() {
        let x = independent_noise::<f64>(4, 4, 4, 3, 1).unwrap();
        let spec = SubspaceSpec::new(2, 2, 2).unwrap();
        let params = AttentionParams::<f64>::seeded(3, 6, 2, 2).unwrap();
        let mut tally = MacTally::default();
        let (blocks, _) = split(&x, spec).unwrap();
        for b in &blocks {
            subspace_attention_counted(b.tokens(), &params, &mut tally).unwrap();
        }
        let report = cost_model(
            AttentionMode::Subspace,
            dims(4, 4, 4, 3, 6),
            Some(spec),
        )
        .unwrap();
        assert!(report.matches(&tally), "{tally:?} vs {:?}", report.predicted);
    }

    #[test]
    fn instrumented_temporal_run_matches_prediction() {
        let x = independent_noise::<f64>(5, 3, 4, 2, 3).unwrap();
        let params = AttentionParams::<f64>::seeded(2, 4, 1, 4).unwrap();
        let mut tally = MacTally::default();
        temporal_attention_counted(&x, &params, &mut tally).unwrap();
        let report = cost_model(AttentionMode::Temporal, dims(5, 3, 4, 2, 4), None).unwrap();
        assert!(report.matches(&tally), "{tally:?} vs {:?}", report.predicted);
    }

    #[test]
    fn instrumented_full_run_matches_prediction() {
        let x = independent_noise::<f64>(3, 3, 3, 2, 5).unwrap();
        let params = AttentionParams::<f64>::seeded(2, 4, 2, 6).unwrap();
        let mut tally = MacTally::default();
        full_attention_counted(&x, &params, 4096, &mut tally).unwrap();
        let report = cost_model(AttentionMode::Full, dims(3, 3, 3, 2, 4), None).unwrap();
        assert!(report.matches(&tally), "{tally:?} vs {:?}", report.predicted);
    }

    #[test]
    fn instrumented_crossframe_runs_match_predictions() {
        let x = independent_noise::<f64>(4, 3, 3, 2, 7).unwrap();
        let params = AttentionParams::<f64>::seeded(2, 4, 1, 8).unwrap();
        for cf in [
            CrossFrameMode::First,
            CrossFrameMode::Middle,
            CrossFrameMode::Previous,
            CrossFrameMode::All,
        ] {
            let mut tally = MacTally::default();
            crossframe_attention_counted(&x, cf, &params, &mut tally).unwrap();
            let report =
                cost_model(AttentionMode::CrossFrame(cf), dims(4, 3, 3, 2, 4), None).unwrap();
            assert!(
                report.matches(&tally),
                "{cf:?}: {tally:?} vs {:?}",
                report.predicted
            );
        }
    }

    #[test]
    fn single_frame_crossframe_costs() {
        let x = independent_noise::<f64>(1, 4, 4, 2, 9).unwrap();
        let params = AttentionParams::<f64>::seeded(2, 4, 1, 10).unwrap();
        for cf in [CrossFrameMode::Previous, CrossFrameMode::All] {
            let mut tally = MacTally::default();
            crossframe_attention_counted(&x, cf, &params, &mut tally).unwrap();
            let report =
                cost_model(AttentionMode::CrossFrame(cf), dims(1, 4, 4, 2, 4), None).unwrap();
            assert!(report.matches(&tally), "{cf:?}");
        }
    }

    #[test]
    fn report_serializes_with_mode_string() {
        let d = dims(2, 2, 2, 2, 2);
        let report = cost_model(
            AttentionMode::CrossFrame(CrossFrameMode::Previous),
            d,
            None,
        )
        .unwrap();
        let json = serde_json::to_value(report).unwrap();
        assert_eq!(json["mode"], "crossframe-previous");
        assert!(json["predicted"]["projection"].as_u64().is_some());
        assert!(json.get("spec").is_none());
    }

    #[test]
    fn spec_outside_subspace_mode_rejected() {
        let d = dims(4, 4, 4, 2, 4);
        let spec = SubspaceSpec::new(2, 2, 2).unwrap();
        assert!(cost_model(AttentionMode::Full, d, Some(spec)).is_err());
    }
}
