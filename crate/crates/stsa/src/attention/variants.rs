//! Whole-video attention variants used as baselines and oracles: per-frame
//! cross-frame attention, per-position temporal attention, and dense
//! attention over every token (optionally masked).

use ndarray::{s, Array2};

use crate::attention::{
    attend, attend_with_kv, check_finite, project_kv, AttentionParams, CrossFrameMode, MacTally,
    ProjectedKv,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::subspace::{subspace_of, SubspaceSpec};
use crate::tensor::LatentVideo;

/// Default refusal threshold for dense attention; quadratic buffers above
/// this are almost certainly a mistake.
pub const DEFAULT_TOKEN_CAP: usize = 4096;

/// One frame's cells as a token matrix `[H*W, C]`, rows in `(h, w)`
/// row-major order.
fn frame_tokens<T: Scalar>(x: &LatentVideo<T>, f: usize) -> Array2<T> {
    let (_, h, w, c) = x.shape();
    let mut out = Array2::zeros((h * w, c));
    let data = x.data();
    for y in 0..h {
        for xw in 0..w {
            for ch in 0..c {
                out[(y * w + xw, ch)] = data[(f, y, xw, ch)];
            }
        }
    }
    out
}

/// The whole video as a token matrix `[F*H*W, C]`, rows in `(f, h, w)`
/// row-major order.
fn video_tokens<T: Scalar>(x: &LatentVideo<T>) -> Array2<T> {
    let (f, h, w, c) = x.shape();
    x.data()
        .to_owned()
        .into_shape_with_order((f * h * w, c))
        .expect("video data is contiguous row-major")
}

fn tokens_to_video<T: Scalar>(
    tokens: Array2<T>,
    shape: (usize, usize, usize, usize),
) -> Result<LatentVideo<T>> {
    let (f, h, w, c) = shape;
    let data = tokens
        .into_shape_with_order((f, h, w, c))
        .map_err(|e| Error::Format(format!("token layout: {e}")))?;
    LatentVideo::new(data)
}

/// Key/value frames each query frame attends to.
fn designated_frames(mode: CrossFrameMode, k: usize, frames: usize) -> Vec<usize> {
    match mode {
        CrossFrameMode::First => vec![0],
        CrossFrameMode::Middle => vec![frames / 2],
        CrossFrameMode::Previous => vec![k.saturating_sub(1)],
        CrossFrameMode::All => (0..frames).collect(),
    }
}

/// Every frame's cells attend to the key/value cells of its designated
/// frame(s): the first frame, the middle frame, the previous frame, or all
/// frames, depending on `mode`.
pub fn crossframe_attention<T: Scalar>(
    x: &LatentVideo<T>,
    mode: CrossFrameMode,
    params: &AttentionParams<T>,
) -> Result<LatentVideo<T>> {
    let mut tally = MacTally::default();
    crossframe_attention_counted(x, mode, params, &mut tally)
}

/// [`crossframe_attention`] that also records multiply-accumulate counts.
///
/// Key/value projections are computed once per designated frame and reused,
/// so the recorded projection cost reflects the union of designated frames,
/// not the sum over queries.
pub fn crossframe_attention_counted<T: Scalar>(
    x: &LatentVideo<T>,
    mode: CrossFrameMode,
    params: &AttentionParams<T>,
    tally: &mut MacTally,
) -> Result<LatentVideo<T>> {
    let (frames, h, w, c) = x.shape();
    let mut cache: Vec<Option<ProjectedKv<T>>> = (0..frames).map(|_| None).collect();
    let mut out = Array2::zeros((frames * h * w, c));
    let mut stacked: Option<(Vec<usize>, ProjectedKv<T>)> = None;
    for k in 0..frames {
        let designated = designated_frames(mode, k, frames);
        for &f in &designated {
            if cache[f].is_none() {
                cache[f] = Some(project_kv(&frame_tokens(x, f), params, tally)?);
            }
        }
        let reusable = matches!(&stacked, Some((d, _)) if *d == designated);
        if !reusable {
            let parts: Vec<&ProjectedKv<T>> = designated
                .iter()
                .map(|&f| cache[f].as_ref().expect("designated frame projected above"))
                .collect();
            stacked = Some((designated.clone(), ProjectedKv::stack(&parts)));
        }
        let kv = &stacked.as_ref().unwrap().1;
        let q = frame_tokens(x, k);
        check_finite(&q)?;
        let y = attend_with_kv(&q, kv, params, None, tally)?;
        out.slice_mut(s![k * h * w..(k + 1) * h * w, ..]).assign(&y);
    }
    tokens_to_video(out, (frames, h, w, c))
}

/// For every spatial position, attention over that position's tokens across
/// all frames.
pub fn temporal_attention<T: Scalar>(
    x: &LatentVideo<T>,
    params: &AttentionParams<T>,
) -> Result<LatentVideo<T>> {
    let mut tally = MacTally::default();
    temporal_attention_counted(x, params, &mut tally)
}

/// [`temporal_attention`] that also records multiply-accumulate counts.
pub fn temporal_attention_counted<T: Scalar>(
    x: &LatentVideo<T>,
    params: &AttentionParams<T>,
    tally: &mut MacTally,
) -> Result<LatentVideo<T>> {
    let (frames, h, w, c) = x.shape();
    let data = x.data();
    let mut out = ndarray::Array4::zeros((frames, h, w, c));
    for y in 0..h {
        for xw in 0..w {
            let mut tokens = Array2::zeros((frames, c));
            for f in 0..frames {
                for ch in 0..c {
                    tokens[(f, ch)] = data[(f, y, xw, ch)];
                }
            }
            check_finite(&tokens)?;
            let attended = attend(&tokens, &tokens, params, None, tally)?;
            for f in 0..frames {
                for ch in 0..c {
                    out[(f, y, xw, ch)] = attended[(f, ch)];
                }
            }
        }
    }
    LatentVideo::new(out)
}

fn check_cap(tokens: usize, cap: usize) -> Result<()> {
    if tokens > cap {
        return Err(Error::TokenCapExceeded { tokens, cap });
    }
    Ok(())
}

/// Dense attention over all `F*H*W` tokens jointly. Refuses token counts
/// above `token_cap`.
pub fn full_attention<T: Scalar>(
    x: &LatentVideo<T>,
    params: &AttentionParams<T>,
    token_cap: usize,
) -> Result<LatentVideo<T>> {
    let mut tally = MacTally::default();
    full_attention_counted(x, params, token_cap, &mut tally)
}

/// [`full_attention`] that also records multiply-accumulate counts.
pub fn full_attention_counted<T: Scalar>(
    x: &LatentVideo<T>,
    params: &AttentionParams<T>,
    token_cap: usize,
    tally: &mut MacTally,
) -> Result<LatentVideo<T>> {
    let (f, h, w, c) = x.shape();
    check_cap(f * h * w, token_cap)?;
    let tokens = video_tokens(x);
    let y = attend(&tokens, &tokens, params, None, tally)?;
    tokens_to_video(y, (f, h, w, c))
}

/// Dense attention with a visibility mask over token pairs; `mask[(i, j)]`
/// decides whether token `i` may attend to token `j`. Tokens are in
/// `(f, h, w)` row-major order. This is the oracle the windowed variants are
/// tested against.
pub fn full_attention_masked<T: Scalar>(
    x: &LatentVideo<T>,
    params: &AttentionParams<T>,
    mask: &Array2<bool>,
    token_cap: usize,
) -> Result<LatentVideo<T>> {
    let (f, h, w, c) = x.shape();
    let n = f * h * w;
    check_cap(n, token_cap)?;
    if mask.dim() != (n, n) {
        return Err(Error::ShapeMismatch {
            context: "attention mask",
            expected: vec![n, n],
            got: mask.shape().to_vec(),
        });
    }
    let tokens = video_tokens(x);
    let mut tally = MacTally::default();
    let y = attend(&tokens, &tokens, params, Some(&mask.view()), &mut tally)?;
    tokens_to_video(y, (f, h, w, c))
}

/// Pair-visibility mask where tokens see exactly the members of their own
/// subspace (under the plain or shifted partition).
pub fn subspace_mask(
    frames: usize,
    height: usize,
    width: usize,
    spec: SubspaceSpec,
    shifted: bool,
) -> Result<Array2<bool>> {
    let n = frames * height * width;
    let grid = (frames, height, width);
    let mut membership = Vec::with_capacity(n);
    for f in 0..frames {
        for y in 0..height {
            for x in 0..width {
                membership.push(subspace_of((f, y, x), grid, spec, shifted)?);
            }
        }
    }
    let mut mask = Array2::from_elem((n, n), false);
    for i in 0..n {
        for j in 0..n {
            mask[(i, j)] = membership[i] == membership[j];
        }
    }
    Ok(mask)
}

/// Pair-visibility mask where tokens see exactly the tokens at their own
/// spatial position in every frame.
pub fn temporal_mask(frames: usize, height: usize, width: usize) -> Array2<bool> {
    let n = frames * height * width;
    let hw = height * width;
    let mut mask = Array2::from_elem((n, n), false);
    for i in 0..n {
        for j in 0..n {
            mask[(i, j)] = i % hw == j % hw;
        }
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::test_util::passthrough_params;
    use crate::subspace::{merge, split};
    use crate::tensor::independent_noise;

    fn rel_err(a: &LatentVideo<f64>, b: &LatentVideo<f64>) -> f64 {
        a.data()
            .iter()
            .zip(b.data().iter())
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-30))
            .fold(0.0, f64::max)
    }

    #[test]
    fn single_frame_crossframe_modes_coincide() {
        let x = independent_noise::<f64>(1, 4, 4, 3, 1).unwrap();
        let params = AttentionParams::<f64>::seeded(3, 6, 2, 2).unwrap();
        let full = full_attention(&x, &params, DEFAULT_TOKEN_CAP).unwrap();
        for mode in [
            CrossFrameMode::First,
            CrossFrameMode::Middle,
            CrossFrameMode::Previous,
            CrossFrameMode::All,
        ] {
            let y = crossframe_attention(&x, mode, &params).unwrap();
            assert!(rel_err(&y, &full) <= 1e-12, "mode {mode:?}");
        }
    }

    #[test]
    fn previous_mode_frame_zero_attends_to_itself() {
        let x = independent_noise::<f64>(3, 3, 3, 2, 3).unwrap();
        let params = AttentionParams::<f64>::seeded(2, 4, 1, 4).unwrap();
        let y = crossframe_attention(&x, CrossFrameMode::Previous, &params).unwrap();
        // Frame 0 must equal plain self-attention over frame 0 alone.
        let single = {
            let frame = LatentVideo::new(
                x.data().slice(s![0..1, .., .., ..]).to_owned(),
            )
            .unwrap();
            full_attention(&frame, &params, DEFAULT_TOKEN_CAP).unwrap()
        };
        let got = x_frame_block(&y, 0);
        let want = x_frame_block(&single, 0);
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0));
        }
    }

    fn x_frame_block(x: &LatentVideo<f64>, f: usize) -> Array2<f64> {
        frame_tokens(x, f)
    }

    #[test]
    fn crossframe_all_equals_dense_attention() {
        let x = independent_noise::<f64>(4, 3, 3, 3, 5).unwrap();
        let params = AttentionParams::<f64>::seeded(3, 6, 2, 6).unwrap();
        let a = crossframe_attention(&x, CrossFrameMode::All, &params).unwrap();
        let b = full_attention(&x, &params, DEFAULT_TOKEN_CAP).unwrap();
        assert!(rel_err(&a, &b) <= 1e-12);
    }

    #[test]
    fn temporal_equals_subspace_with_temporal_spec() {
        let x = independent_noise::<f64>(4, 3, 5, 2, 7).unwrap();
        let params = AttentionParams::<f64>::seeded(2, 4, 2, 8).unwrap();
        let a = temporal_attention(&x, &params).unwrap();
        let spec = SubspaceSpec::new(4, 1, 1).unwrap();
        let (blocks, partition) = split(&x, spec).unwrap();
        let attended: Vec<_> = blocks
            .iter()
            .map(|b| {
                b.with_tokens(crate::attention::subspace_attention(b.tokens(), &params).unwrap())
                    .unwrap()
            })
            .collect();
        let b = merge(&attended, &partition).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn temporal_matches_masked_dense_oracle() {
        let x = independent_noise::<f64>(3, 2, 4, 3, 9).unwrap();
        let params = AttentionParams::<f64>::seeded(3, 6, 1, 10).unwrap();
        let a = temporal_attention(&x, &params).unwrap();
        let mask = temporal_mask(3, 2, 4);
        let b = full_attention_masked(&x, &params, &mask, DEFAULT_TOKEN_CAP).unwrap();
        assert!(rel_err(&a, &b) <= 1e-10);
    }

    #[test]
    fn single_token_video_reduces_to_value_path() {
        let x = independent_noise::<f64>(1, 1, 1, 4, 11).unwrap();
        let params = AttentionParams::<f64>::seeded(4, 4, 1, 12).unwrap();
        let y = full_attention(&x, &params, DEFAULT_TOKEN_CAP).unwrap();
        let tokens = video_tokens(&x);
        let direct = tokens.dot(params.w_v()).dot(params.w_o());
        for (a, b) in y.data().iter().zip(direct.iter()) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()).max(1.0));
        }
    }

    #[test]
    fn token_cap_guards_dense_attention() {
        let x = independent_noise::<f64>(2, 4, 4, 2, 13).unwrap();
        let params = AttentionParams::<f64>::seeded(2, 4, 1, 14).unwrap();
        assert!(matches!(
            full_attention(&x, &params, 31),
            Err(Error::TokenCapExceeded { tokens: 32, cap: 31 })
        ));
        assert!(full_attention(&x, &params, 32).is_ok());
    }

    #[test]
    fn permutation_equivariance_of_dense_attention() {
        // Swap two frames of the input; dense attention must swap the same
        // frames of the output and change nothing else.
        let x = independent_noise::<f64>(3, 3, 3, 2, 15).unwrap();
        let params = AttentionParams::<f64>::seeded(2, 6, 2, 16).unwrap();
        let y = full_attention(&x, &params, DEFAULT_TOKEN_CAP).unwrap();
        let mut swapped = x.data().clone();
        let f0 = x.data().slice(s![0, .., .., ..]).to_owned();
        let f2 = x.data().slice(s![2, .., .., ..]).to_owned();
        swapped.slice_mut(s![0, .., .., ..]).assign(&f2);
        swapped.slice_mut(s![2, .., .., ..]).assign(&f0);
        let xs = LatentVideo::new(swapped).unwrap();
        let ys = full_attention(&xs, &params, DEFAULT_TOKEN_CAP).unwrap();
        let max_err = y
            .data()
            .slice(s![0, .., .., ..])
            .iter()
            .zip(ys.data().slice(s![2, .., .., ..]).iter())
            .chain(
                y.data()
                    .slice(s![2, .., .., ..])
                    .iter()
                    .zip(ys.data().slice(s![0, .., .., ..]).iter()),
            )
            .chain(
                y.data()
                    .slice(s![1, .., .., ..])
                    .iter()
                    .zip(ys.data().slice(s![1, .., .., ..]).iter()),
            )
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-30))
            .fold(0.0, f64::max);
        assert!(max_err <= 1e-12, "max rel err {max_err}");
    }

    #[test]
    fn masked_dense_rejects_empty_rows_and_bad_shapes() {
        let x = independent_noise::<f64>(1, 2, 2, 2, 17).unwrap();
        let params = AttentionParams::<f64>::seeded(2, 4, 1, 18).unwrap();
        let empty_row = Array2::from_elem((4, 4), false);
        assert!(full_attention_masked(&x, &params, &empty_row, 64).is_err());
        let wrong = Array2::from_elem((3, 3), true);
        assert!(full_attention_masked(&x, &params, &wrong, 64).is_err());
    }

    #[test]
    fn subspace_mask_matches_partition_structure() {
        let spec = SubspaceSpec::new(2, 2, 2).unwrap();
        let mask = subspace_mask(4, 4, 4, spec, false).unwrap();
        // Mask is symmetric with reflexive diagonal, and each row has
        // exactly n = 8 visible entries.
        for i in 0..64 {
            assert!(mask[(i, i)]);
            assert_eq!(mask.row(i).iter().filter(|v| **v).count(), 8);
            for j in 0..64 {
                assert_eq!(mask[(i, j)], mask[(j, i)]);
            }
        }
    }

    #[test]
    fn uniform_masked_attention_averages_within_subspace() {
        // Passthrough params turn attention into a within-subspace mean;
        // verify through the masked dense path.
        let x = independent_noise::<f64>(2, 2, 2, 3, 19).unwrap();
        let spec = SubspaceSpec::new(2, 2, 2).unwrap();
        let params = passthrough_params::<f64>(3);
        let y =
            full_attention_masked(&x, &params, &subspace_mask(2, 2, 2, spec, false).unwrap(), 64)
                .unwrap();
        for ch in 0..3 {
            let mean = x
                .data()
                .slice(s![.., .., .., ch])
                .iter()
                .sum::<f64>()
                / 8.0;
            for v in y.data().slice(s![.., .., .., ch]).iter() {
                assert!((v - mean).abs() <= 1e-12);
            }
        }
    }
}
