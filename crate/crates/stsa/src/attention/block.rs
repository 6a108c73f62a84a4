//! The assembled block: align content along motion flow, cut the grid into
//! subspaces, attend within each one, and undo the rearrangements.
//!
//! Forward pipeline: optionally half-window-shift the video and its flows,
//! compute alignment maps, align, split, run per-subspace attention with an
//! optional residual add, merge, restore, and unshift. Every rearrangement
//! is a permutation, so the backward pass runs the inverse permutations on
//! the gradient and the attention backward inside.

use crate::align::{align, compute_alignment, restore, AlignedVideo};
use crate::attention::{
    attention_backward, subspace_attention_counted, AttentionParams, MacTally, ParamGrads,
};
use crate::error::{Error, Result};
use crate::flow::{shift_flows, FlowSet};
use crate::scalar::{Precision, Scalar};
use crate::subspace::{merge, shift, split, unshift, SubspaceSpec};
use crate::tensor::LatentVideo;

/// Block behavior toggles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StsaOptions {
    /// Roll the grid by half a window first, so consecutive blocks see
    /// staggered partitions.
    pub shifted: bool,
    /// Add each subspace's input tokens back onto its attention output.
    pub residual: bool,
}

impl Default for StsaOptions {
    fn default() -> Self {
        StsaOptions {
            shifted: false,
            residual: true,
        }
    }
}

fn check_block_inputs<T: Scalar>(
    x: &LatentVideo<T>,
    flows: &FlowSet,
    spec: SubspaceSpec,
    params: &AttentionParams<T>,
) -> Result<()> {
    let (f, h, w, c) = x.shape();
    spec.check_divides(f, h, w)?;
    if flows.frames() != f || flows.resolution() != (h, w) {
        return Err(Error::ShapeMismatch {
            context: "block flows",
            expected: vec![f, h, w],
            got: vec![flows.frames(), flows.resolution().0, flows.resolution().1],
        });
    }
    if params.channels() != c {
        return Err(Error::ShapeMismatch {
            context: "block params",
            expected: vec![c, params.d_model()],
            got: vec![params.channels(), params.d_model()],
        });
    }
    Ok(())
}

/// One spatial-temporal subspace-attention block.
pub fn stsa_block<T: Scalar>(
    x: &LatentVideo<T>,
    flows: &FlowSet,
    spec: SubspaceSpec,
    params: &AttentionParams<T>,
    options: StsaOptions,
) -> Result<LatentVideo<T>> {
    let mut tally = MacTally::default();
    stsa_block_counted(x, flows, spec, params, options, &mut tally)
}

/// [`stsa_block`] that also records per-subspace attention costs.
pub fn stsa_block_counted<T: Scalar>(
    x: &LatentVideo<T>,
    flows: &FlowSet,
    spec: SubspaceSpec,
    params: &AttentionParams<T>,
    options: StsaOptions,
    tally: &mut MacTally,
) -> Result<LatentVideo<T>> {
    check_block_inputs(x, flows, spec, params)?;
    let (f, h, w, _) = x.shape();
    let (x_work, flows_work) = if options.shifted {
        (shift(x, spec), shift_flows(flows, spec))
    } else {
        (x.clone(), flows.clone())
    };
    let maps = compute_alignment(&flows_work, (f, h, w), spec.s_f)?;
    let aligned = align(&x_work, &maps)?;
    let (blocks, partition) = split(aligned.video(), spec)?;
    let mut attended = Vec::with_capacity(blocks.len());
    for block in &blocks {
        let mut y = subspace_attention_counted(block.tokens(), params, tally)?;
        if options.residual {
            y += block.tokens();
        }
        attended.push(block.with_tokens(y)?);
    }
    let merged = merge(&attended, &partition)?;
    let restored = restore(
        &AlignedVideo::from_parts(merged, aligned.maps_checksum()),
        &maps,
    )?;
    Ok(if options.shifted {
        unshift(&restored, spec)
    } else {
        restored
    })
}

/// Gradients of [`stsa_block`] with respect to the input video and the
/// attention parameters, given the upstream gradient of the output.
///
/// Parameter gradients are accumulated over subspaces in ascending block
/// order, so repeated runs are bitwise identical. Double precision only.
pub fn stsa_block_backward<T: Scalar>(
    x: &LatentVideo<T>,
    flows: &FlowSet,
    spec: SubspaceSpec,
    params: &AttentionParams<T>,
    options: StsaOptions,
    upstream: &LatentVideo<T>,
) -> Result<(LatentVideo<T>, ParamGrads<T>)> {
    if T::PRECISION != Precision::Double {
        return Err(Error::PrecisionGuard {
            op: "stsa_block_backward",
        });
    }
    check_block_inputs(x, flows, spec, params)?;
    if upstream.shape() != x.shape() {
        let (f, h, w, c) = x.shape();
        let (uf, uh, uw, uc) = upstream.shape();
        return Err(Error::ShapeMismatch {
            context: "upstream gradient",
            expected: vec![f, h, w, c],
            got: vec![uf, uh, uw, uc],
        });
    }
    let (f, h, w, _) = x.shape();

    // Recompute the forward rearrangements and per-subspace inputs.
    let (x_work, flows_work) = if options.shifted {
        (shift(x, spec), shift_flows(flows, spec))
    } else {
        (x.clone(), flows.clone())
    };
    let maps = compute_alignment(&flows_work, (f, h, w), spec.s_f)?;
    let aligned = align(&x_work, &maps)?;
    let checksum = aligned.maps_checksum();
    let (blocks, partition) = split(aligned.video(), spec)?;

    // Walk the pipeline backward. The adjoint of a permutation is its
    // inverse, so restore's adjoint applies align and vice versa.
    let g = if options.shifted {
        shift(upstream, spec)
    } else {
        upstream.clone()
    };
    let g_merged = align(&g, &maps)?.into_video();
    let (g_blocks, g_partition) = split(&g_merged, spec)?;
    if g_partition != partition {
        return Err(Error::PartitionMismatch(
            "gradient and input partitions diverged".into(),
        ));
    }
    let mut param_grads = ParamGrads::zeros(params.channels(), params.d_model());
    let mut grad_blocks = Vec::with_capacity(blocks.len());
    for (block, g_block) in blocks.iter().zip(&g_blocks) {
        let grads = attention_backward(block.tokens(), params, g_block.tokens())?;
        param_grads.accumulate(&grads.params);
        let mut grad_tokens = grads.tokens;
        if options.residual {
            grad_tokens += g_block.tokens();
        }
        grad_blocks.push(block.with_tokens(grad_tokens)?);
    }
    let grad_aligned = merge(&grad_blocks, &partition)?;
    let grad_shifted = restore(&AlignedVideo::from_parts(grad_aligned, checksum), &maps)?;
    let grad_x = if options.shifted {
        unshift(&grad_shifted, spec)
    } else {
        grad_shifted
    };
    Ok((grad_x, param_grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::test_util::passthrough_params;
    use crate::attention::subspace_attention;
    use crate::rng::rng_from_seed;
    use crate::tensor::independent_noise;
    use ndarray::Array3;
    use rand::Rng;

    fn random_flows(frames: usize, h: usize, w: usize, seed: u64) -> FlowSet {
        let mut rng = rng_from_seed(seed);
        let mut field = |src: usize, dst: usize| {
            let mut disp = Array3::zeros((h, w, 2));
            for v in disp.iter_mut() {
                *v = rng.random_range(-2.0f64..2.0) as f32;
            }
            crate::flow::FlowField::new(src, dst, disp).unwrap()
        };
        let forward = (0..frames - 1).map(|k| field(k, k + 1)).collect();
        let backward = (0..frames - 1).map(|k| field(k + 1, k)).collect();
        FlowSet::from_pairs(h, w, forward, backward).unwrap()
    }

    #[test]
    fn zero_flows_passthrough_params_give_input_plus_subspace_mean() {
        let x = independent_noise::<f64>(4, 4, 4, 3, 1).unwrap();
        let spec = SubspaceSpec::new(2, 2, 2).unwrap();
        let flows = FlowSet::zero(4, 4, 4).unwrap();
        let params = passthrough_params::<f64>(3);
        let y = stsa_block(&x, &flows, spec, &params, StsaOptions::default()).unwrap();
        // Oracle: per subspace and channel, mean over the window's cells.
        let (blocks, partition) = split(&x, spec).unwrap();
        for (i, block) in blocks.iter().enumerate() {
            let n = block.tokens().dim().0;
            for ch in 0..3 {
                let mean = block.tokens().column(ch).sum() / n as f64;
                for (row, (pf, ph, pw)) in
                    partition.block_positions(i).into_iter().enumerate()
                {
                    let want = x.data()[(pf, ph, pw, ch)] + mean;
                    let got = y.data()[(pf, ph, pw, ch)];
                    assert!(
                        (got - want).abs() <= 1e-12,
                        "block {i} row {row} ch {ch}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_flows_block_equals_plain_windowed_attention() {
        let x = independent_noise::<f64>(4, 4, 4, 2, 2).unwrap();
        let spec = SubspaceSpec::new(2, 2, 2).unwrap();
        let flows = FlowSet::zero(4, 4, 4).unwrap();
        let params = AttentionParams::<f64>::seeded(2, 4, 2, 3).unwrap();
        let y = stsa_block(&x, &flows, spec, &params, StsaOptions::default()).unwrap();
        let (blocks, partition) = split(&x, spec).unwrap();
        let attended: Vec<_> = blocks
            .iter()
            .map(|b| {
                let z = subspace_attention(b.tokens(), &params).unwrap() + b.tokens();
                b.with_tokens(z).unwrap()
            })
            .collect();
        let want = merge(&attended, &partition).unwrap();
        assert_eq!(y, want);
    }

    #[test]
    fn block_equals_manual_stage_composition() {
        let x = independent_noise::<f64>(4, 6, 6, 3, 4).unwrap();
        let spec = SubspaceSpec::new(4, 3, 3).unwrap();
        let flows = random_flows(4, 6, 6, 5);
        let params = AttentionParams::<f64>::seeded(3, 6, 2, 6).unwrap();
        let options = StsaOptions::default();
        let y = stsa_block(&x, &flows, spec, &params, options).unwrap();

        let maps = compute_alignment(&flows, (4, 6, 6), 4).unwrap();
        let aligned = align(&x, &maps).unwrap();
        let (blocks, partition) = split(aligned.video(), spec).unwrap();
        let attended: Vec<_> = blocks
            .iter()
            .map(|b| {
                let z = subspace_attention(b.tokens(), &params).unwrap() + b.tokens();
                b.with_tokens(z).unwrap()
            })
            .collect();
        let merged = merge(&attended, &partition).unwrap();
        let want = restore(
            &AlignedVideo::from_parts(merged, aligned.maps_checksum()),
            &maps,
        )
        .unwrap();
        assert_eq!(y, want);
    }

    #[test]
    fn shifted_block_equals_manual_shift_sandwich() {
        let x = independent_noise::<f64>(4, 6, 6, 2, 7).unwrap();
        let spec = SubspaceSpec::new(2, 3, 3).unwrap();
        let flows = random_flows(4, 6, 6, 8);
        let params = AttentionParams::<f64>::seeded(2, 4, 1, 9).unwrap();
        let y = stsa_block(
            &x,
            &flows,
            spec,
            &params,
            StsaOptions {
                shifted: true,
                residual: true,
            },
        )
        .unwrap();
        let inner = stsa_block(
            &shift(&x, spec),
            &shift_flows(&flows, spec),
            spec,
            &params,
            StsaOptions::default(),
        )
        .unwrap();
        assert_eq!(y, unshift(&inner, spec));
    }

    #[test]
    fn residual_toggle_changes_output_by_exactly_x_under_zero_flows() {
        // With zero flows align is the identity, so the residual arm adds
        // the raw input back cell for cell.
        let x = independent_noise::<f64>(2, 4, 4, 2, 10).unwrap();
        let spec = SubspaceSpec::new(2, 4, 4).unwrap();
        let flows = FlowSet::zero(2, 4, 4).unwrap();
        let params = AttentionParams::<f64>::seeded(2, 4, 1, 11).unwrap();
        let with = stsa_block(
            &x,
            &flows,
            spec,
            &params,
            StsaOptions {
                shifted: false,
                residual: true,
            },
        )
        .unwrap();
        let without = stsa_block(
            &x,
            &flows,
            spec,
            &params,
            StsaOptions {
                shifted: false,
                residual: false,
            },
        )
        .unwrap();
        for (w, (wo, xi)) in with
            .data()
            .iter()
            .zip(without.data().iter().zip(x.data().iter()))
        {
            assert!((w - (wo + xi)).abs() <= 1e-12);
        }
    }

    #[test]
    fn output_shape_matches_input_and_is_deterministic() {
        let x = independent_noise::<f64>(8, 8, 8, 3, 12).unwrap();
        let spec = SubspaceSpec::new(4, 4, 4).unwrap();
        let flows = random_flows(8, 8, 8, 13);
        let params = AttentionParams::<f64>::seeded(3, 6, 2, 14).unwrap();
        for shifted in [false, true] {
            let options = StsaOptions {
                shifted,
                residual: true,
            };
            let a = stsa_block(&x, &flows, spec, &params, options).unwrap();
            let b = stsa_block(&x, &flows, spec, &params, options).unwrap();
            assert_eq!(a.shape(), x.shape());
            assert_eq!(a, b);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let (f, h, w, c) = (2, 4, 4, 2);
        let x = independent_noise::<f64>(f, h, w, c, 15).unwrap();
        let spec = SubspaceSpec::new(2, 2, 2).unwrap();
        let flows = random_flows(f, h, w, 16);
        let params = AttentionParams::<f64>::seeded(c, 4, 2, 17).unwrap();
        let options = StsaOptions {
            shifted: true,
            residual: true,
        };
        let probe = independent_noise::<f64>(f, h, w, c, 18).unwrap();
        let loss = |xv: &LatentVideo<f64>, pv: &AttentionParams<f64>| -> f64 {
            let y = stsa_block(xv, &flows, spec, pv, options).unwrap();
            y.data()
                .iter()
                .zip(probe.data().iter())
                .map(|(a, b)| a * b)
                .sum()
        };
        let (grad_x, grad_p) = stsa_block_backward(&x, &flows, spec, &params, options, &probe).unwrap();
        let step = 1e-5;
        let mut worst = 0.0f64;
        for f_i in 0..f {
            for y_i in 0..h {
                for x_i in 0..w {
                    for c_i in 0..c {
                        let base = x.data()[(f_i, y_i, x_i, c_i)];
                        let bump = |v: f64| {
                            let mut d = x.data().clone();
                            d[(f_i, y_i, x_i, c_i)] = v;
                            loss(&LatentVideo::new(d).unwrap(), &params)
                        };
                        let numeric = (bump(base + step) - bump(base - step)) / (2.0 * step);
                        let analytic = grad_x.data()[(f_i, y_i, x_i, c_i)];
                        let rel = (analytic - numeric).abs()
                            / analytic.abs().max(numeric.abs()).max(1e-3);
                        worst = worst.max(rel);
                    }
                }
            }
        }
        // Spot-check parameter gradients on one matrix.
        for i in 0..c {
            for j in 0..4 {
                let base = params.w_q()[(i, j)];
                let bump = |v: f64| {
                    let mut wq = params.w_q().clone();
                    wq[(i, j)] = v;
                    let p = AttentionParams::new(
                        wq,
                        params.w_k().clone(),
                        params.w_v().clone(),
                        params.w_o().clone(),
                        2,
                    )
                    .unwrap();
                    loss(&x, &p)
                };
                let numeric = (bump(base + step) - bump(base - step)) / (2.0 * step);
                let analytic = grad_p.w_q[(i, j)];
                let rel =
                    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
                worst = worst.max(rel);
            }
        }
        assert!(worst <= 1e-4, "max rel err {worst}");
    }

    #[test]
    fn backward_refuses_single_precision() {
        let x = independent_noise::<f32>(2, 2, 2, 2, 19).unwrap();
        let spec = SubspaceSpec::new(2, 2, 2).unwrap();
        let flows = FlowSet::zero(2, 2, 2).unwrap();
        let params = AttentionParams::<f32>::seeded(2, 2, 1, 20).unwrap();
        let upstream = independent_noise::<f32>(2, 2, 2, 2, 21).unwrap();
        assert!(matches!(
            stsa_block_backward(&x, &flows, spec, &params, StsaOptions::default(), &upstream),
            Err(Error::PrecisionGuard { .. })
        ));
    }

    #[test]
    fn block_validates_flow_coverage() {
        let x = independent_noise::<f64>(4, 4, 4, 2, 22).unwrap();
        let spec = SubspaceSpec::new(2, 2, 2).unwrap();
        let flows = FlowSet::zero(3, 4, 4).unwrap();
        let params = AttentionParams::<f64>::seeded(2, 4, 1, 23).unwrap();
        assert!(matches!(
            stsa_block(&x, &flows, spec, &params, StsaOptions::default()),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
