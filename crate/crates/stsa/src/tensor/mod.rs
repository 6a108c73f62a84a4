//! Dense latent-video tensors and the utilities shared by every block:
//! forward noising, shared Gaussian initialization, and frame positional
//! embeddings.
//!
//! A [`LatentVideo`] is a `[F, H, W, C]` row-major tensor of finite scalars:
//! `F` frames, `H` rows, `W` columns, `C` channels. All operations are pure;
//! nothing in this crate mutates a tensor after construction.

pub mod io;

use ndarray::{Array2, Array3, Array4, ArrayView3, Axis};

use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, standard_normal};
use crate::scalar::Scalar;

/// Dense `[F, H, W, C]` feature tensor the attention blocks operate on.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentVideo<T: Scalar> {
    data: Array4<T>,
}

impl<T: Scalar> LatentVideo<T> {
    /// Wrap an array, validating that every extent is >= 1 and every entry is
    /// finite.
    pub fn new(data: Array4<T>) -> Result<Self> {
        let shape = data.shape();
        if shape.contains(&0) {
            return Err(Error::Config(format!(
                "latent video dims must all be >= 1, got {shape:?}"
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "latent video",
            });
        }
        Ok(LatentVideo { data })
    }

    /// All-zeros video.
    pub fn zeros(frames: usize, height: usize, width: usize, channels: usize) -> Result<Self> {
        if frames == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(Error::Config(format!(
                "latent video dims must all be >= 1, got [{frames}, {height}, {width}, {channels}]"
            )));
        }
        Ok(LatentVideo {
            data: Array4::zeros((frames, height, width, channels)),
        })
    }

    /// `(frames, height, width, channels)`.
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        let d = self.data.dim();
        (d.0, d.1, d.2, d.3)
    }

    pub fn frames(&self) -> usize {
        self.data.dim().0
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn channels(&self) -> usize {
        self.data.dim().3
    }

    pub fn data(&self) -> &Array4<T> {
        &self.data
    }

    pub fn into_inner(self) -> Array4<T> {
        self.data
    }

    /// View of one frame as `[H, W, C]`.
    pub fn frame(&self, f: usize) -> ArrayView3<'_, T> {
        self.data.index_axis(Axis(0), f)
    }

    /// Cast to another precision (exact for f32 -> f64, rounds for f64 -> f32).
    pub fn cast<U: Scalar>(&self) -> LatentVideo<U> {
        LatentVideo {
            data: self.data.mapv(|v| U::from_f64(v.to_f64())),
        }
    }

    /// Construct from unchecked data; callers guarantee finiteness.
    pub(crate) fn from_array_unchecked(data: Array4<T>) -> Self {
        debug_assert!(data.iter().all(|v| v.is_finite()));
        LatentVideo { data }
    }
}

/// Variance schedule for the forward noising process.
///
/// Holds the per-step variances `beta_t`, each strictly inside `(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Config("noise schedule must have >= 1 step".into()));
        }
        for (t, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!(
                    "beta_{t} = {b} outside the open interval (0, 1)"
                )));
            }
        }
        Ok(NoiseSchedule { betas })
    }

    /// Linearly spaced schedule from `start` to `end` over `steps` steps.
    pub fn linear(steps: usize, start: f64, end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Config("noise schedule must have >= 1 step".into()));
        }
        let betas = (0..steps)
            .map(|t| {
                if steps == 1 {
                    start
                } else {
                    start + (end - start) * t as f64 / (steps - 1) as f64
                }
            })
            .collect();
        NoiseSchedule::new(betas)
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }
}

/// Keypoint tracks driving flow synthesis: `[F, K, 2]` pixel coordinates
/// (x, y) plus per-keypoint visibility.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    keypoints: Array3<f64>,
    visible: Array2<bool>,
}

impl PoseSequence {
    pub fn new(keypoints: Array3<f64>, visible: Array2<bool>) -> Result<Self> {
        let (f, k, two) = keypoints.dim();
        if two != 2 {
            return Err(Error::ShapeMismatch {
                context: "pose keypoints",
                expected: vec![f, k, 2],
                got: keypoints.shape().to_vec(),
            });
        }
        if visible.dim() != (f, k) {
            return Err(Error::ShapeMismatch {
                context: "pose visibility",
                expected: vec![f, k],
                got: visible.shape().to_vec(),
            });
        }
        if keypoints.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "pose keypoints",
            });
        }
        Ok(PoseSequence { keypoints, visible })
    }

    pub fn frames(&self) -> usize {
        self.keypoints.dim().0
    }

    pub fn keypoint_count(&self) -> usize {
        self.keypoints.dim().1
    }

    /// (x, y) of keypoint `k` in frame `f`.
    pub fn keypoint(&self, f: usize, k: usize) -> (f64, f64) {
        (self.keypoints[(f, k, 0)], self.keypoints[(f, k, 1)])
    }

    pub fn is_visible(&self, f: usize, k: usize) -> bool {
        self.visible[(f, k)]
    }

    pub fn keypoints(&self) -> &Array3<f64> {
        &self.keypoints
    }

    pub fn visible(&self) -> &Array2<bool> {
        &self.visible
    }

    /// Check that every visible keypoint lies inside `[0, width) x [0, height)`.
    pub fn validate_bounds(&self, height: usize, width: usize) -> Result<()> {
        let (f_count, k_count) = self.visible.dim();
        for f in 0..f_count {
            for k in 0..k_count {
                if !self.visible[(f, k)] {
                    continue;
                }
                let (x, y) = self.keypoint(f, k);
                if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 {
                    return Err(Error::OutOfBounds {
                        context: "visible keypoint",
                        position: vec![x as i64, y as i64],
                        bounds: vec![width, height],
                    });
                }
            }
        }
        Ok(())
    }
}

/// One step of the forward noising process:
/// `sqrt(1 - beta_t) * z_prev + sqrt(beta_t) * noise`, elementwise.
///
/// `beta_t` may take the endpoint values 0 and 1 so tests can pin the identity
/// and pure-noise cases exactly.
pub fn forward_noise_step<T: Scalar>(
    z_prev: &LatentVideo<T>,
    beta_t: f64,
    noise: &LatentVideo<T>,
) -> Result<LatentVideo<T>> {
    if z_prev.shape() != noise.shape() {
        let (f, h, w, c) = z_prev.shape();
        return Err(Error::ShapeMismatch {
            context: "forward_noise_step",
            expected: vec![f, h, w, c],
            got: noise.data().shape().to_vec(),
        });
    }
    if !(0.0..=1.0).contains(&beta_t) {
        return Err(Error::Config(format!(
            "beta_t = {beta_t} outside [0, 1]"
        )));
    }
    let keep = T::from_f64((1.0 - beta_t).sqrt());
    let add = T::from_f64(beta_t.sqrt());
    let data = z_prev.data() * keep + noise.data() * add;
    Ok(LatentVideo::from_array_unchecked(data))
}

/// Standard-normal video in which every frame is bit-identical.
///
/// One `[H, W, C]` slab is drawn from the seeded generator and replicated
/// across all frames, so any two frame slices compare equal bit-for-bit.
pub fn shared_noise_init<T: Scalar>(
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    seed: u64,
) -> Result<LatentVideo<T>> {
    if frames == 0 || height == 0 || width == 0 || channels == 0 {
        return Err(Error::Config(format!(
            "dims must all be >= 1, got [{frames}, {height}, {width}, {channels}]"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let slab = Array3::from_shape_simple_fn((height, width, channels), || {
        standard_normal::<T>(&mut rng)
    });
    let mut data = Array4::zeros((frames, height, width, channels));
    for f in 0..frames {
        data.index_axis_mut(Axis(0), f).assign(&slab);
    }
    Ok(LatentVideo::from_array_unchecked(data))
}

/// Fresh (per-frame independent) standard-normal video.
pub fn independent_noise<T: Scalar>(
    frames: usize,
    height: usize,
    width: usize,
    channels: usize,
    seed: u64,
) -> Result<LatentVideo<T>> {
    if frames == 0 || height == 0 || width == 0 || channels == 0 {
        return Err(Error::Config(format!(
            "dims must all be >= 1, got [{frames}, {height}, {width}, {channels}]"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let data = Array4::from_shape_simple_fn((frames, height, width, channels), || {
        standard_normal::<T>(&mut rng)
    });
    Ok(LatentVideo::from_array_unchecked(data))
}

/// Sinusoidal frame positional embedding, `[F, C]`.
///
/// Entry `(f, 2i)` is `sin(f / 10000^(2i/C))` and `(f, 2i+1)` is
/// `cos(f / 10000^(2i/C))`. `C` must be even.
pub fn frame_positional_embedding<T: Scalar>(frames: usize, channels: usize) -> Result<Array2<T>> {
    if channels == 0 || !channels.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "embedding channels must be even and >= 2, got {channels}"
        )));
    }
    if frames == 0 {
        return Err(Error::Config("frames must be >= 1".into()));
    }
    let mut emb = Array2::zeros((frames, channels));
    for f in 0..frames {
        for i in 0..channels / 2 {
            let freq = (f as f64) / 10000f64.powf(2.0 * i as f64 / channels as f64);
            emb[(f, 2 * i)] = T::from_f64(freq.sin());
            emb[(f, 2 * i + 1)] = T::from_f64(freq.cos());
        }
    }
    Ok(emb)
}

/// Broadcast a `[F, C]` frame embedding over the spatial grid and add it.
pub fn add_frame_embedding<T: Scalar>(
    x: &LatentVideo<T>,
    embedding: &Array2<T>,
) -> Result<LatentVideo<T>> {
    let (f, h, w, c) = x.shape();
    if embedding.dim() != (f, c) {
        return Err(Error::ShapeMismatch {
            context: "frame embedding",
            expected: vec![f, c],
            got: embedding.shape().to_vec(),
        });
    }
    let mut data = x.data().clone();
    for fi in 0..f {
        for hi in 0..h {
            for wi in 0..w {
                for ci in 0..c {
                    data[(fi, hi, wi, ci)] += embedding[(fi, ci)];
                }
            }
        }
    }
    LatentVideo::new(data)
}
