//! Motion-guided align and restore: move each cell toward where its content
//! sits in the window's reference frame, as an exactly invertible
//! permutation.
//!
//! For every temporal window the central frame is the reference. Each other
//! frame's cells get a target position by following the composed flow to the
//! reference, rounding to the nearest cell, and clamping to the grid. Since
//! several cells can round to one target, targets are claimed in ascending
//! order of realized displacement; everyone else keeps or is reassigned a
//! free cell, so the realized map is a permutation and
//! [`restore`]`(`[`align`]`(x)) == x` holds bit-exactly.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::{flow_lookup, nearest, FlowSet};
use crate::rng::Fnv64;
use crate::scalar::Scalar;
use crate::tensor::LatentVideo;

pub use crate::flow::{shift_flows, unshift_flows};

/// Reference frame of the inclusive window `[b, e]`: the central frame
/// `floor((b + e) / 2)`.
pub fn reference_frame(b: usize, e: usize) -> Result<usize> {
    if b > e {
        return Err(Error::Config(format!(
            "window begin {b} exceeds end {e}"
        )));
    }
    Ok((b + e) / 2)
}

/// One realized cell relocation within a frame; coordinates are `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellMove {
    pub src: (usize, usize),
    pub tgt: (usize, usize),
}

/// The realized permutation for one temporal window: per frame, the list of
/// cells that move (identity entries are not stored).
///
/// Within every frame the stored sources are pairwise distinct, the targets
/// are pairwise distinct, and the two sets are equal, which is what makes
/// the map exactly invertible. The reference frame's list is always empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AlignmentMap {
    begin: usize,
    end: usize,
    reference: usize,
    height: usize,
    width: usize,
    moves: Vec<Vec<CellMove>>,
    checksum: u64,
}

impl AlignmentMap {
    fn new(
        begin: usize,
        end: usize,
        reference: usize,
        height: usize,
        width: usize,
        mut moves: Vec<Vec<CellMove>>,
    ) -> Self {
        for frame_moves in &mut moves {
            frame_moves.sort_by_key(|m| m.src);
        }
        let mut h = Fnv64::new();
        h.write_bytes(b"alignment-map");
        for v in [begin, end, reference, height, width] {
            h.write_usize(v);
        }
        for frame_moves in &moves {
            h.write_usize(frame_moves.len());
            for m in frame_moves {
                h.write_usize(m.src.0);
                h.write_usize(m.src.1);
                h.write_usize(m.tgt.0);
                h.write_usize(m.tgt.1);
            }
        }
        AlignmentMap {
            begin,
            end,
            reference,
            height,
            width,
            moves,
            checksum: h.finish(),
        }
    }

    /// First frame of the window, inclusive.
    pub fn begin(&self) -> usize {
        self.begin
    }

    /// Last frame of the window, inclusive.
    pub fn end(&self) -> usize {
        self.end
    }

    pub fn reference(&self) -> usize {
        self.reference
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Moves for absolute frame `k`, sorted by source cell.
    pub fn moves(&self, k: usize) -> Result<&[CellMove]> {
        if k < self.begin || k > self.end {
            return Err(Error::OutOfBounds {
                context: "alignment map frame",
                position: vec![k as i64],
                bounds: vec![self.begin, self.end],
            });
        }
        Ok(&self.moves[k - self.begin])
    }

    /// True when no frame in the window moves any cell.
    pub fn is_identity(&self) -> bool {
        self.moves.iter().all(|m| m.is_empty())
    }

    pub fn checksum(&self) -> u64 {
        self.checksum
    }
}

/// Combined checksum over a window list, as stored in [`AlignedVideo`].
pub fn alignment_checksum(maps: &[AlignmentMap]) -> u64 {
    let mut h = Fnv64::new();
    h.write_bytes(b"alignment-set");
    h.write_usize(maps.len());
    for m in maps {
        h.write_u64(m.checksum);
    }
    h.finish()
}

/// Pre-resolution targets for frame `k` aligned toward frame `r`:
/// `(row, col)` per cell after rounding and clamping, before collision
/// handling.
pub(crate) fn raw_targets(
    flows: &FlowSet,
    k: usize,
    r: usize,
    height: usize,
    width: usize,
) -> Result<Vec<(usize, usize)>> {
    let field = flows.between(k, r)?;
    let mut targets = Vec::with_capacity(height * width);
    for y in 0..height {
        for x in 0..width {
            let (xr, yr) = flow_lookup(&field, x, y)?;
            let tx = nearest(xr)?.clamp(0, width as i64 - 1) as usize;
            let ty = nearest(yr)?.clamp(0, height as i64 - 1) as usize;
            targets.push((ty, tx));
        }
    }
    Ok(targets)
}

/// Claim candidate: squared displacement magnitude, source cell, target cell.
type Claim = (u64, (usize, usize), (usize, usize));

/// Resolve one frame's targets into a permutation, stored as its non-identity
/// moves.
fn resolve_frame(
    flows: &FlowSet,
    k: usize,
    r: usize,
    height: usize,
    width: usize,
) -> Result<Vec<CellMove>> {
    let targets = raw_targets(flows, k, r, height, width)?;
    let idx = |y: usize, x: usize| y * width + x;

    // Cells that want to move claim their targets in ascending order of
    // realized displacement, ties broken by row-major source order.
    let mut movers: Vec<Claim> = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let tgt = targets[idx(y, x)];
            if tgt != (y, x) {
                let dy = tgt.0 as i64 - y as i64;
                let dx = tgt.1 as i64 - x as i64;
                movers.push(((dy * dy + dx * dx) as u64, (y, x), tgt));
            }
        }
    }
    movers.sort_by_key(|&(mag, src, _)| (mag, src));

    let mut claimed = vec![false; height * width];
    let mut winner_src = vec![false; height * width];
    let mut moves: Vec<CellMove> = Vec::new();
    for &(_, src, tgt) in &movers {
        if !claimed[idx(tgt.0, tgt.1)] {
            claimed[idx(tgt.0, tgt.1)] = true;
            winner_src[idx(src.0, src.1)] = true;
            moves.push(CellMove { src, tgt });
        }
    }

    // Everyone else keeps their home when it is still free; cells whose home
    // was claimed move into the remaining free cells in row-major order.
    let mut stays = vec![false; height * width];
    let mut displaced: Vec<(usize, usize)> = Vec::new();
    for y in 0..height {
        for x in 0..width {
            if winner_src[idx(y, x)] {
                continue;
            }
            if !claimed[idx(y, x)] {
                stays[idx(y, x)] = true;
            } else {
                displaced.push((y, x));
            }
        }
    }
    let mut holes = Vec::with_capacity(displaced.len());
    for y in 0..height {
        for x in 0..width {
            if !claimed[idx(y, x)] && !stays[idx(y, x)] {
                holes.push((y, x));
            }
        }
    }
    debug_assert_eq!(holes.len(), displaced.len());
    for (src, tgt) in displaced.into_iter().zip(holes) {
        moves.push(CellMove { src, tgt });
    }
    Ok(moves)
}

/// Compute one [`AlignmentMap`] per temporal window of length `s_f`.
///
/// `grid` is `(frames, height, width)` of the video the maps will be applied
/// to; the flow set must cover exactly that grid.
pub fn compute_alignment(
    flows: &FlowSet,
    grid: (usize, usize, usize),
    s_f: usize,
) -> Result<Vec<AlignmentMap>> {
    let (frames, height, width) = grid;
    if s_f == 0 {
        return Err(Error::Config("temporal window length must be >= 1".into()));
    }
    if frames % s_f != 0 {
        return Err(Error::NotDivisible {
            what: "frames",
            value: frames,
            divisor: s_f,
        });
    }
    if flows.frames() != frames || flows.resolution() != (height, width) {
        return Err(Error::ShapeMismatch {
            context: "alignment flows",
            expected: vec![frames, height, width],
            got: vec![flows.frames(), flows.resolution().0, flows.resolution().1],
        });
    }
    let mut maps = Vec::with_capacity(frames / s_f);
    for b in (0..frames).step_by(s_f) {
        let e = b + s_f - 1;
        let r = reference_frame(b, e)?;
        let mut moves = Vec::with_capacity(s_f);
        for k in b..=e {
            if k == r {
                moves.push(Vec::new());
            } else {
                moves.push(resolve_frame(flows, k, r, height, width)?);
            }
        }
        maps.push(AlignmentMap::new(b, e, r, height, width, moves));
    }
    Ok(maps)
}

/// A video whose cells have been rearranged by [`align`], tagged with the
/// checksum of the maps that produced it so a mismatched [`restore`] is
/// caught instead of silently scrambling content.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedVideo<T: Scalar> {
    video: LatentVideo<T>,
    maps_checksum: u64,
}

impl<T: Scalar> AlignedVideo<T> {
    /// Re-tag a transformed video (same grid, same alignment) with an
    /// existing checksum. Used when aligned content is processed
    /// shape-preservingly before being restored.
    pub fn from_parts(video: LatentVideo<T>, maps_checksum: u64) -> Self {
        AlignedVideo {
            video,
            maps_checksum,
        }
    }

    pub fn video(&self) -> &LatentVideo<T> {
        &self.video
    }

    pub fn into_video(self) -> LatentVideo<T> {
        self.video
    }

    pub fn maps_checksum(&self) -> u64 {
        self.maps_checksum
    }
}

fn validate_maps<T: Scalar>(x: &LatentVideo<T>, maps: &[AlignmentMap]) -> Result<()> {
    let (frames, height, width, _) = x.shape();
    if maps.is_empty() {
        return Err(Error::PartitionMismatch(
            "no alignment maps provided".into(),
        ));
    }
    let mut next = 0;
    for map in maps {
        if map.begin != next {
            return Err(Error::PartitionMismatch(format!(
                "alignment windows must tile the clip; expected a window starting at {next}, got {}",
                map.begin
            )));
        }
        if map.end < map.begin {
            return Err(Error::PartitionMismatch(format!(
                "window [{}, {}] is inverted",
                map.begin, map.end
            )));
        }
        if (map.height, map.width) != (height, width) {
            return Err(Error::ShapeMismatch {
                context: "alignment map grid",
                expected: vec![height, width],
                got: vec![map.height, map.width],
            });
        }
        next = map.end + 1;
    }
    if next != frames {
        return Err(Error::PartitionMismatch(format!(
            "alignment windows cover {next} frames, video has {frames}"
        )));
    }
    Ok(())
}

/// Apply alignment maps: each listed cell's content moves `src -> tgt`
/// within its frame; unlisted cells keep their content.
pub fn align<T: Scalar>(x: &LatentVideo<T>, maps: &[AlignmentMap]) -> Result<AlignedVideo<T>> {
    validate_maps(x, maps)?;
    let channels = x.channels();
    let src_data = x.data();
    let mut out = src_data.clone();
    for map in maps {
        for (offset, frame_moves) in map.moves.iter().enumerate() {
            let k = map.begin + offset;
            for m in frame_moves {
                for c in 0..channels {
                    out[(k, m.tgt.0, m.tgt.1, c)] = src_data[(k, m.src.0, m.src.1, c)];
                }
            }
        }
    }
    Ok(AlignedVideo {
        video: LatentVideo::from_array_unchecked(out),
        maps_checksum: alignment_checksum(maps),
    })
}

/// Invert [`align`]: each listed cell's content moves back `tgt -> src`.
/// Rejects maps other than the ones the video was aligned with.
pub fn restore<T: Scalar>(aligned: &AlignedVideo<T>, maps: &[AlignmentMap]) -> Result<LatentVideo<T>> {
    let provided = alignment_checksum(maps);
    if provided != aligned.maps_checksum {
        return Err(Error::ChecksumMismatch {
            context: "restore: maps do not match the aligned video",
            expected: aligned.maps_checksum,
            got: provided,
        });
    }
    validate_maps(&aligned.video, maps)?;
    let channels = aligned.video.channels();
    let src_data = aligned.video.data();
    let mut out = src_data.clone();
    for map in maps {
        for (offset, frame_moves) in map.moves.iter().enumerate() {
            let k = map.begin + offset;
            for m in frame_moves {
                for c in 0..channels {
                    out[(k, m.src.0, m.src.1, c)] = src_data[(k, m.tgt.0, m.tgt.1, c)];
                }
            }
        }
    }
    Ok(LatentVideo::from_array_unchecked(out))
}

#[derive(Serialize)]
struct DumpMove {
    frame: usize,
    /// `[row, col]` of the source cell.
    src: [usize; 2],
    /// `[row, col]` of the target cell.
    tgt: [usize; 2],
}

#[derive(Serialize)]
struct DumpWindow {
    begin: usize,
    end: usize,
    reference: usize,
    grid: [usize; 2],
    checksum: String,
    moves: Vec<DumpMove>,
}

#[derive(Serialize)]
struct Dump {
    cell_order: &'static str,
    windows: Vec<DumpWindow>,
}

/// Serialize maps as JSON for inspection: one window object per temporal
/// window with its `(frame, src, tgt)` move triples in deterministic order.
pub fn dump_alignment(maps: &[AlignmentMap]) -> Result<String> {
    let windows = maps
        .iter()
        .map(|m| DumpWindow {
            begin: m.begin,
            end: m.end,
            reference: m.reference,
            grid: [m.height, m.width],
            checksum: format!("{:#018x}", m.checksum),
            moves: m
                .moves
                .iter()
                .enumerate()
                .flat_map(|(offset, frame_moves)| {
                    let frame = m.begin + offset;
                    frame_moves.iter().map(move |mv| DumpMove {
                        frame,
                        src: [mv.src.0, mv.src.1],
                        tgt: [mv.tgt.0, mv.tgt.1],
                    })
                })
                .collect(),
        })
        .collect();
    let dump = Dump {
        cell_order: "row_col",
        windows,
    };
    Ok(serde_json::to_string_pretty(&dump)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::FlowField;
    use crate::rng::rng_from_seed;
    use crate::tensor::independent_noise;
    use ndarray::Array3;
    use rand::Rng;

    fn constant_chain(frames: usize, h: usize, w: usize, dx: f32, dy: f32) -> FlowSet {
        let field = |src: usize, dst: usize, sx: f32, sy: f32| {
            let mut disp = Array3::zeros((h, w, 2));
            disp.slice_mut(ndarray::s![.., .., 0]).fill(sx);
            disp.slice_mut(ndarray::s![.., .., 1]).fill(sy);
            FlowField::new(src, dst, disp).unwrap()
        };
        let forward = (0..frames - 1).map(|k| field(k, k + 1, dx, dy)).collect();
        let backward = (0..frames - 1)
            .map(|k| field(k + 1, k, -dx, -dy))
            .collect();
        FlowSet::from_pairs(h, w, forward, backward).unwrap()
    }

    fn random_chain(frames: usize, h: usize, w: usize, seed: u64) -> FlowSet {
        let mut rng = rng_from_seed(seed);
        let mut field = |src: usize, dst: usize| {
            let mut disp = Array3::zeros((h, w, 2));
            for v in disp.iter_mut() {
                *v = rng.random_range(-2.5f64..2.5) as f32;
            }
            FlowField::new(src, dst, disp).unwrap()
        };
        let forward = (0..frames - 1).map(|k| field(k, k + 1)).collect();
        let backward = (0..frames - 1).map(|k| field(k + 1, k)).collect();
        FlowSet::from_pairs(h, w, forward, backward).unwrap()
    }

    #[test]
    fn reference_frame_values() {
        assert_eq!(reference_frame(0, 3).unwrap(), 1);
        assert_eq!(reference_frame(0, 0).unwrap(), 0);
        assert_eq!(reference_frame(4, 7).unwrap(), 5);
        assert!(reference_frame(3, 2).is_err());
    }

    #[test]
    fn zero_flows_give_identity_maps() {
        let flows = FlowSet::zero(8, 6, 6).unwrap();
        let maps = compute_alignment(&flows, (8, 6, 6), 4).unwrap();
        assert_eq!(maps.len(), 2);
        assert!(maps.iter().all(|m| m.is_identity()));
        let x = independent_noise::<f64>(8, 6, 6, 3, 1).unwrap();
        let aligned = align(&x, &maps).unwrap();
        assert_eq!(aligned.video(), &x);
    }

    #[test]
    fn constant_flow_targets_match_hand_composed_chain() {
        // +1 in x per adjacent pair, window [0, 3], reference 1: frame 0
        // moves +1, frame 2 moves -1, frame 3 moves -2 (interior cells;
        // edges clamp).
        let flows = constant_chain(4, 6, 6, 1.0, 0.0);
        let r = reference_frame(0, 3).unwrap();
        assert_eq!(r, 1);
        let expect_dx = [1i64, 0, -1, -2];
        for (k, &dx) in expect_dx.iter().enumerate() {
            let targets = raw_targets(&flows, k, r, 6, 6).unwrap();
            for y in 0..6 {
                for x in 0..6 {
                    let want_x = (x as i64 + dx).clamp(0, 5) as usize;
                    assert_eq!(targets[y * 6 + x], (y, want_x), "k={k} cell=({y},{x})");
                }
            }
        }
    }

    #[test]
    fn reference_frame_map_is_always_identity() {
        let flows = random_chain(4, 6, 6, 2);
        let maps = compute_alignment(&flows, (4, 6, 6), 4).unwrap();
        assert!(maps[0].moves(1).unwrap().is_empty());
    }

    #[test]
    fn collision_smaller_displacement_wins_row_major_ties() {
        // One row, four cells. Cells 1 and 3 both target cell 2 with equal
        // magnitude; row-major order lets cell 1 win. Cell 2 is static but
        // its home is taken, so it relocates to the free cell 1.
        let mut disp = Array3::zeros((1, 4, 2));
        disp[(0, 1, 0)] = 1.0;
        disp[(0, 3, 0)] = -1.0;
        let backward = vec![FlowField::new(1, 0, disp).unwrap()];
        let forward = vec![FlowField::zero(0, 1, 1, 4)];
        let flows = FlowSet::from_pairs(1, 4, forward, backward).unwrap();
        let maps = compute_alignment(&flows, (2, 1, 4), 2).unwrap();
        // Window [0, 1], reference 0, so only frame 1 moves.
        let moves = maps[0].moves(1).unwrap();
        assert_eq!(
            moves,
            &[
                CellMove {
                    src: (0, 1),
                    tgt: (0, 2)
                },
                CellMove {
                    src: (0, 2),
                    tgt: (0, 1)
                },
            ]
        );
    }

    #[test]
    fn clamped_pileup_resolves_to_a_permutation() {
        // Every cell pushed far right clamps onto the last column; the
        // nearest mover wins it and everyone else settles into free cells.
        let mut disp = Array3::zeros((1, 3, 2));
        disp.slice_mut(ndarray::s![.., .., 0]).fill(10.0);
        let backward = vec![FlowField::new(1, 0, disp).unwrap()];
        let forward = vec![FlowField::zero(0, 1, 1, 3)];
        let flows = FlowSet::from_pairs(1, 3, forward, backward).unwrap();
        let maps = compute_alignment(&flows, (2, 1, 3), 2).unwrap();
        let moves = maps[0].moves(1).unwrap();
        assert_eq!(
            moves,
            &[
                CellMove {
                    src: (0, 1),
                    tgt: (0, 2)
                },
                CellMove {
                    src: (0, 2),
                    tgt: (0, 1)
                },
            ]
        );
    }

    #[test]
    fn moves_form_a_permutation_on_random_flows() {
        for seed in 0..20 {
            let flows = random_chain(4, 7, 9, 100 + seed);
            let maps = compute_alignment(&flows, (4, 7, 9), 4).unwrap();
            for map in &maps {
                for k in map.begin()..=map.end() {
                    let moves = map.moves(k).unwrap();
                    let srcs: std::collections::BTreeSet<_> =
                        moves.iter().map(|m| m.src).collect();
                    let tgts: std::collections::BTreeSet<_> =
                        moves.iter().map(|m| m.tgt).collect();
                    assert_eq!(srcs.len(), moves.len(), "duplicate source");
                    assert_eq!(tgts.len(), moves.len(), "duplicate target");
                    assert_eq!(srcs, tgts, "moved set must map onto itself");
                }
            }
        }
    }

    #[test]
    fn align_restore_round_trips_bit_exactly() {
        for seed in 0..20 {
            let flows = random_chain(8, 6, 6, 200 + seed);
            let maps = compute_alignment(&flows, (8, 6, 6), 4).unwrap();
            let x = independent_noise::<f64>(8, 6, 6, 3, 300 + seed).unwrap();
            let aligned = align(&x, &maps).unwrap();
            let back = restore(&aligned, &maps).unwrap();
            assert_eq!(back, x);
        }
    }

    #[test]
    fn align_never_touches_reference_frames() {
        let flows = random_chain(8, 6, 6, 17);
        let maps = compute_alignment(&flows, (8, 6, 6), 4).unwrap();
        let x = independent_noise::<f64>(8, 6, 6, 2, 18).unwrap();
        let aligned = align(&x, &maps).unwrap();
        for map in &maps {
            let r = map.reference();
            assert_eq!(
                aligned.video().data().index_axis(ndarray::Axis(0), r),
                x.data().index_axis(ndarray::Axis(0), r)
            );
        }
    }

    #[test]
    fn recomputing_maps_is_deterministic() {
        let flows = random_chain(4, 8, 8, 5);
        let a = compute_alignment(&flows, (4, 8, 8), 4).unwrap();
        let b = compute_alignment(&flows, (4, 8, 8), 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(alignment_checksum(&a), alignment_checksum(&b));
    }

    #[test]
    fn restore_rejects_wrong_maps() {
        let flows = random_chain(4, 6, 6, 6);
        let maps = compute_alignment(&flows, (4, 6, 6), 4).unwrap();
        let other_flows = random_chain(4, 6, 6, 7);
        let other = compute_alignment(&other_flows, (4, 6, 6), 4).unwrap();
        let x = independent_noise::<f64>(4, 6, 6, 2, 8).unwrap();
        let aligned = align(&x, &maps).unwrap();
        assert!(matches!(
            restore(&aligned, &other),
            Err(Error::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn align_rejects_grid_mismatch() {
        let flows = random_chain(4, 6, 6, 9);
        let maps = compute_alignment(&flows, (4, 6, 6), 4).unwrap();
        let x = independent_noise::<f64>(4, 8, 8, 2, 10).unwrap();
        assert!(align(&x, &maps).is_err());
        let x = independent_noise::<f64>(8, 6, 6, 2, 11).unwrap();
        assert!(align(&x, &maps).is_err());
    }

    #[test]
    fn compute_alignment_validates_inputs() {
        let flows = FlowSet::zero(4, 6, 6).unwrap();
        assert!(matches!(
            compute_alignment(&flows, (6, 6, 6), 3),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            compute_alignment(&flows, (4, 6, 6), 3),
            Err(Error::NotDivisible { .. })
        ));
        assert!(compute_alignment(&flows, (4, 6, 6), 0).is_err());
    }

    #[test]
    fn dump_is_valid_deterministic_json() {
        let flows = constant_chain(4, 4, 4, 1.0, 0.0);
        let maps = compute_alignment(&flows, (4, 4, 4), 4).unwrap();
        let a = dump_alignment(&maps).unwrap();
        let b = dump_alignment(&maps).unwrap();
        assert_eq!(a, b);
        let parsed: serde_json::Value = serde_json::from_str(&a).unwrap();
        assert_eq!(parsed["cell_order"], "row_col");
        let windows = parsed["windows"].as_array().unwrap();
        assert_eq!(windows.len(), 1);
        assert_eq!(windows[0]["reference"], 1);
        assert!(!windows[0]["moves"].as_array().unwrap().is_empty());
        // Reference frame contributes no moves.
        for m in windows[0]["moves"].as_array().unwrap() {
            assert_ne!(m["frame"], 1);
        }
    }
}
