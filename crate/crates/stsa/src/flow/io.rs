//! Binary flow container: magic `MFL1`, a version tag, the clip geometry,
//! then for each adjacent frame pair the forward field followed by the
//! backward field as little-endian `f32` grids in row-major order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::flow::{FlowField, FlowSet};

const MAGIC: [u8; 4] = *b"MFL1";
const VERSION: u32 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("flow file truncated".into()))?;
    Ok(u32::from_le_bytes(buf))
}

fn write_grid(w: &mut impl Write, field: &FlowField) -> Result<()> {
    for v in field.disp().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_grid(
    r: &mut impl Read,
    src: usize,
    dst: usize,
    height: usize,
    width: usize,
) -> Result<FlowField> {
    let mut payload = vec![0u8; height * width * 2 * 4];
    r.read_exact(&mut payload)
        .map_err(|_| Error::Format("flow file truncated".into()))?;
    let values: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let disp = Array3::from_shape_vec((height, width, 2), values)
        .map_err(|e| Error::Format(format!("flow grid layout: {e}")))?;
    FlowField::new(src, dst, disp)
}

/// Write a flow set in the MFL1 format.
///
/// Shifted sets are refused: the format stores original-label adjacent pairs
/// only, so callers must unshift first.
pub fn save_flow(path: impl AsRef<Path>, flows: &FlowSet) -> Result<()> {
    if flows.is_shifted() {
        return Err(Error::Config(
            "cannot save a shifted flow set; unshift it first".into(),
        ));
    }
    let file = File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&MAGIC)?;
    write_u32(&mut w, VERSION)?;
    write_u32(&mut w, flows.frames() as u32)?;
    let (height, width) = flows.resolution();
    write_u32(&mut w, height as u32)?;
    write_u32(&mut w, width as u32)?;
    for k in 0..flows.frames() - 1 {
        write_grid(&mut w, flows.forward(k)?)?;
        write_grid(&mut w, flows.backward(k)?)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a flow set in the MFL1 format, rejecting trailing bytes.
pub fn load_flow(path: impl AsRef<Path>) -> Result<FlowSet> {
    let file = File::open(path)?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Format("flow file truncated".into()))?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected {MAGIC:?}"
        )));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            found: version,
            supported: VERSION,
        });
    }
    let frames = read_u32(&mut r)? as usize;
    let height = read_u32(&mut r)? as usize;
    let width = read_u32(&mut r)? as usize;
    if frames == 0 {
        return Err(Error::Format("flow file declares zero frames".into()));
    }
    let mut forward = Vec::with_capacity(frames - 1);
    let mut backward = Vec::with_capacity(frames - 1);
    for k in 0..frames - 1 {
        forward.push(read_grid(&mut r, k, k + 1, height, width)?);
        backward.push(read_grid(&mut r, k + 1, k, height, width)?);
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after flow payload".into()));
    }
    FlowSet::from_pairs(height, width, forward, backward)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::shift_flows;
    use crate::rng::rng_from_seed;
    use crate::subspace::SubspaceSpec;
    use rand::Rng;

    fn random_set(frames: usize, h: usize, w: usize, seed: u64) -> FlowSet {
        let mut rng = rng_from_seed(seed);
        let mut field = |src: usize, dst: usize| {
            let mut disp = Array3::zeros((h, w, 2));
            for v in disp.iter_mut() {
                *v = rng.random_range(-3.0f64..3.0) as f32;
            }
            FlowField::new(src, dst, disp).unwrap()
        };
        let forward = (0..frames - 1).map(|k| field(k, k + 1)).collect();
        let backward = (0..frames - 1).map(|k| field(k + 1, k)).collect();
        FlowSet::from_pairs(h, w, forward, backward).unwrap()
    }

    #[test]
    fn round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flows.mfl");
        let set = random_set(5, 6, 7, 3);
        save_flow(&path, &set).unwrap();
        let back = load_flow(&path).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn single_frame_set_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("one.mfl");
        let set = FlowSet::zero(1, 4, 4).unwrap();
        save_flow(&path, &set).unwrap();
        assert_eq!(load_flow(&path).unwrap(), set);
    }

    #[test]
    fn truncated_file_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flows.mfl");
        save_flow(&path, &random_set(3, 4, 4, 5)).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(matches!(load_flow(&path), Err(Error::Format(_))));
    }

    #[test]
    fn bad_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flows.mfl");
        save_flow(&path, &random_set(2, 4, 4, 6)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_flow(&path), Err(Error::Format(_))));
    }

    #[test]
    fn unsupported_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flows.mfl");
        save_flow(&path, &random_set(2, 4, 4, 7)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 9;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_flow(&path),
            Err(Error::UnsupportedVersion {
                found: 9,
                supported: 1
            })
        ));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flows.mfl");
        save_flow(&path, &random_set(2, 4, 4, 8)).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.push(0);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_flow(&path), Err(Error::Format(_))));
    }

    #[test]
    fn shifted_set_save_refused() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flows.mfl");
        let set = random_set(4, 8, 8, 9);
        let shifted = shift_flows(&set, SubspaceSpec::new(4, 4, 4).unwrap());
        assert!(matches!(save_flow(&path, &shifted), Err(Error::Config(_))));
    }
}
