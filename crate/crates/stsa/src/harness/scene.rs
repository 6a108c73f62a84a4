//! Synthetic moving-object scenes with exact ground-truth motion flow.
//!
//! A scene is a static random background plus rigid objects that translate
//! by an integer velocity each frame. Because motion is integer and rigid,
//! the true displacement field is known exactly: on object cells it points
//! at the cell holding the same patch content one frame later, elsewhere it
//! is zero. Keypoints sit at object centers, standing in for pose tracks.

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{FlowField, FlowSet};
use crate::rng::{derive_seed, rng_from_seed, standard_normal};
use crate::tensor::{LatentVideo, PoseSequence};

/// Footprint of a scene object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectShape {
    /// Full `size x size` patch.
    Square,
    /// Disk inscribed in the `size x size` patch.
    Blob,
}

/// One rigidly translating object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneObject {
    pub shape: ObjectShape,
    /// Patch side length in cells.
    pub size: usize,
    /// Top-left corner of the patch at frame 0, `(x, y)`.
    pub start: (i64, i64),
    /// Cells moved per frame, `(vx, vy)`.
    pub velocity: (i64, i64),
    /// Allow the trajectory to wrap around the grid toroidally. Without
    /// this, leaving the grid is an error.
    pub wrap: bool,
}

/// Full description of a synthetic scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Painted in order; later objects occlude earlier ones.
    pub objects: Vec<SceneObject>,
    /// Seed for the static background texture.
    pub background_seed: u64,
}

impl SceneSpec {
    fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Config(
                "scene dimensions must all be at least 1".into(),
            ));
        }
        for (i, obj) in self.objects.iter().enumerate() {
            if obj.size == 0 {
                return Err(Error::Config(format!("object {i} has size 0")));
            }
            if obj.size > self.height || obj.size > self.width {
                return Err(Error::Config(format!(
                    "object {i} size {} exceeds the {}x{} grid",
                    obj.size, self.height, self.width
                )));
            }
        }
        Ok(())
    }
}

/// Default scene: two wrapping objects drifting over a 16^3 grid with 8
/// channels, small enough for dense-attention oracles.
pub fn default_scene() -> SceneSpec {
    SceneSpec {
        frames: 16,
        height: 16,
        width: 16,
        channels: 8,
        objects: vec![
            SceneObject {
                shape: ObjectShape::Square,
                size: 4,
                start: (2, 3),
                velocity: (1, 0),
                wrap: true,
            },
            SceneObject {
                shape: ObjectShape::Blob,
                size: 5,
                start: (9, 8),
                velocity: (0, 1),
                wrap: true,
            },
        ],
        background_seed: 7,
    }
}

/// Scene in which every cell moves: a grid-filling texture panning at the
/// given speed with wraparound. Used to compare flow-aligned and unaligned
/// attention under fast coherent motion; at any speed at or above the
/// spatial window size, content fully leaves its window each frame.
pub fn high_velocity_scene(speed: i64) -> SceneSpec {
    SceneSpec {
        frames: 8,
        height: 8,
        width: 8,
        channels: 4,
        objects: vec![SceneObject {
            shape: ObjectShape::Square,
            size: 8,
            start: (0, 0),
            velocity: (speed, 0),
            wrap: true,
        }],
        background_seed: 11,
    }
}

/// Patch-local offsets covered by an object's footprint, row-major.
fn patch_offsets(shape: ObjectShape, size: usize) -> Vec<(usize, usize)> {
    let mut cells = Vec::new();
    let c = (size as f64 - 1.0) / 2.0;
    let r2 = (size as f64 / 2.0).powi(2);
    for dy in 0..size {
        for dx in 0..size {
            let keep = match shape {
                ObjectShape::Square => true,
                ObjectShape::Blob => {
                    (dy as f64 - c).powi(2) + (dx as f64 - c).powi(2) <= r2
                }
            };
            if keep {
                cells.push((dy, dx));
            }
        }
    }
    cells
}

/// Grid cell of one patch offset at one frame, or an error if the
/// trajectory leaves a non-wrapping grid.
fn place(
    obj: &SceneObject,
    frame: usize,
    dy: usize,
    dx: usize,
    height: usize,
    width: usize,
) -> Result<(usize, usize)> {
    let gx = obj.start.0 + frame as i64 * obj.velocity.0 + dx as i64;
    let gy = obj.start.1 + frame as i64 * obj.velocity.1 + dy as i64;
    if obj.wrap {
        return Ok((
            gy.rem_euclid(height as i64) as usize,
            gx.rem_euclid(width as i64) as usize,
        ));
    }
    if gx < 0 || gx >= width as i64 || gy < 0 || gy >= height as i64 {
        return Err(Error::OutOfBounds {
            context: "scene object trajectory",
            position: vec![frame as i64, gy, gx],
            bounds: vec![height, width],
        });
    }
    Ok((gy as usize, gx as usize))
}

/// Per-frame boolean masks of cells covered by any object.
pub fn object_masks(spec: &SceneSpec) -> Result<Vec<Array2<bool>>> {
    spec.validate()?;
    let mut masks = Vec::with_capacity(spec.frames);
    for k in 0..spec.frames {
        let mut mask = Array2::from_elem((spec.height, spec.width), false);
        for obj in &spec.objects {
            for &(dy, dx) in &patch_offsets(obj.shape, obj.size) {
                let (row, col) = place(obj, k, dy, dx, spec.height, spec.width)?;
                mask[(row, col)] = true;
            }
        }
        masks.push(mask);
    }
    Ok(masks)
}

/// Render a scene: the latent video, center keypoints per object, and the
/// exact ground-truth flow set.
///
/// Flow displacements land exactly on the integer cell holding the same
/// patch content in the neighboring frame, including across wrap seams, so
/// nearest-neighbor lookup along them is lossless.
pub fn gen_scene(spec: &SceneSpec, seed: u64) -> Result<(LatentVideo<f64>, PoseSequence, FlowSet)> {
    spec.validate()?;
    let (f, h, w, c) = (spec.frames, spec.height, spec.width, spec.channels);

    // Static background, repeated every frame.
    let mut bg_rng = rng_from_seed(spec.background_seed);
    let background =
        Array3::from_shape_simple_fn((h, w, c), || 0.3 * standard_normal::<f64>(&mut bg_rng));

    // Per-object patch textures, constant across frames (rigid motion).
    let patches: Vec<Array3<f64>> = spec
        .objects
        .iter()
        .enumerate()
        .map(|(i, obj)| {
            let mut rng = rng_from_seed(derive_seed(seed, &format!("object-{i}")));
            Array3::from_shape_simple_fn((obj.size, obj.size, c), || {
                1.5 + 0.5 * standard_normal::<f64>(&mut rng)
            })
        })
        .collect();

    let mut data = Array4::zeros((f, h, w, c));
    for k in 0..f {
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    data[(k, y, x, ch)] = background[(y, x, ch)];
                }
            }
        }
        for (obj, patch) in spec.objects.iter().zip(&patches) {
            for &(dy, dx) in &patch_offsets(obj.shape, obj.size) {
                let (row, col) = place(obj, k, dy, dx, h, w)?;
                for ch in 0..c {
                    data[(k, row, col, ch)] = patch[(dy, dx, ch)];
                }
            }
        }
    }
    let video = LatentVideo::new(data)?;

    // Keypoints: one per object, at the patch center. Wrapping folds the
    // center back onto the grid so visibility never lapses.
    let kp_count = spec.objects.len().max(1);
    let mut keypoints = Array3::zeros((f, kp_count, 2));
    let mut visible = Array2::from_elem((f, kp_count), false);
    for k in 0..f {
        for (i, obj) in spec.objects.iter().enumerate() {
            let half = (obj.size as f64 - 1.0) / 2.0;
            let mut cx = obj.start.0 as f64 + k as i64 as f64 * obj.velocity.0 as f64 + half;
            let mut cy = obj.start.1 as f64 + k as i64 as f64 * obj.velocity.1 as f64 + half;
            if obj.wrap {
                cx = cx.rem_euclid(w as f64);
                cy = cy.rem_euclid(h as f64);
            }
            keypoints[(k, i, 0)] = cx;
            keypoints[(k, i, 1)] = cy;
            visible[(k, i)] = true;
        }
        if spec.objects.is_empty() {
            keypoints[(k, 0, 0)] = (w as f64 - 1.0) / 2.0;
            keypoints[(k, 0, 1)] = (h as f64 - 1.0) / 2.0;
            visible[(k, 0)] = true;
        }
    }
    let poses = PoseSequence::new(keypoints, visible)?;
    poses.validate_bounds(h, w)?;

    // Ground-truth flows: per ordered frame pair, each object cell points
    // at where its patch offset sits in the other frame; later objects win.
    let hop = |from: usize, to: usize| -> Result<FlowField> {
        let mut disp = Array3::<f32>::zeros((h, w, 2));
        for obj in &spec.objects {
            for &(dy, dx) in &patch_offsets(obj.shape, obj.size) {
                let (row, col) = place(obj, from, dy, dx, h, w)?;
                let (trow, tcol) = place(obj, to, dy, dx, h, w)?;
                disp[(row, col, 0)] = (tcol as i64 - col as i64) as f32;
                disp[(row, col, 1)] = (trow as i64 - row as i64) as f32;
            }
        }
        FlowField::new(from, to, disp)
    };
    let mut forward = Vec::with_capacity(f.saturating_sub(1));
    let mut backward = Vec::with_capacity(f.saturating_sub(1));
    for k in 0..f.saturating_sub(1) {
        forward.push(hop(k, k + 1)?);
        backward.push(hop(k + 1, k)?);
    }
    let flows = FlowSet::from_pairs(h, w, forward, backward)?;
    Ok((video, poses, flows))
}
