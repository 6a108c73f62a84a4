//! Tensor and pose serialization.
//!
//! # LVT1 binary tensor format
//!
//! ```text
//! magic   4 bytes  "LVT1"
//! rank    u32 LE
//! dims    rank x u32 LE
//! dtype   u8       1 = single (f32), 2 = double (f64)
//! payload dims product x 4 or 8 bytes, row-major, little-endian
//! ```
//!
//! A file may hold several records back to back; attention parameter files
//! store four matrices (`W_q`, `W_k`, `W_v`, `W_o`) this way.
//!
//! # Pose JSON
//!
//! `{"frames":[{"keypoints":[[x,y],...],"visible":[true,...]}]}`

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, Array3, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{Precision, Scalar};
use crate::tensor::{LatentVideo, PoseSequence};

const LVT_MAGIC: &[u8; 4] = b"LVT1";
const MAX_RANK: u32 = 8;

/// A tensor of either precision, as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum DynTensor {
    F32(ArrayD<f32>),
    F64(ArrayD<f64>),
}

impl DynTensor {
    pub fn precision(&self) -> Precision {
        match self {
            DynTensor::F32(_) => Precision::Single,
            DynTensor::F64(_) => Precision::Double,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            DynTensor::F32(a) => a.shape(),
            DynTensor::F64(a) => a.shape(),
        }
    }

    /// Convert to the requested element type, casting if necessary.
    pub fn cast_into<T: Scalar>(self) -> ArrayD<T> {
        match self {
            DynTensor::F32(a) => a.mapv(|v| T::from_f64(f64::from(v))),
            DynTensor::F64(a) => a.mapv(T::from_f64),
        }
    }

    pub fn from_array<T: Scalar, D: ndarray::Dimension>(a: ndarray::Array<T, D>) -> Self {
        let dyn_arr = a.into_dyn();
        match T::PRECISION {
            Precision::Single => DynTensor::F32(dyn_arr.mapv(|v| v.to_f64() as f32)),
            Precision::Double => DynTensor::F64(dyn_arr.mapv(|v| v.to_f64())),
        }
    }
}

/// Write one LVT1 record.
pub fn write_record<W: Write>(w: &mut W, tensor: &DynTensor) -> Result<()> {
    w.write_all(LVT_MAGIC)?;
    let shape = tensor.shape();
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&[tensor.precision().dtype_tag()])?;
    match tensor {
        DynTensor::F32(a) => {
            for &v in a.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        DynTensor::F64(a) => {
            for &v in a.iter() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

fn read_exact_or_format<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated LVT1 file while reading {what}: {e}")))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact_or_format(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

/// Read one LVT1 record from the stream, leaving the reader positioned after it.
pub fn read_record<R: Read>(r: &mut R) -> Result<DynTensor> {
    let mut magic = [0u8; 4];
    read_exact_or_format(r, &mut magic, "magic")?;
    if &magic != LVT_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected \"LVT1\""
        )));
    }
    read_record_body(r)
}

/// Write a single-record LVT1 file.
pub fn save_tensor<P: AsRef<Path>>(path: P, tensor: &DynTensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_record(&mut w, tensor)?;
    w.flush()?;
    Ok(())
}

/// Read a single-record LVT1 file; trailing bytes are an error.
pub fn load_tensor<P: AsRef<Path>>(path: P) -> Result<DynTensor> {
    let mut r = BufReader::new(File::open(path)?);
    let tensor = read_record(&mut r)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format(
            "trailing bytes after single-tensor record".into(),
        ));
    }
    Ok(tensor)
}

/// Read every record in a multi-record LVT1 file.
pub fn load_records<P: AsRef<Path>>(path: P) -> Result<Vec<DynTensor>> {
    let mut r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    loop {
        let mut probe = [0u8; 1];
        let n = r.read(&mut probe)?;
        if n == 0 {
            break;
        }
        let rest = read_record_after_first_byte(&mut r, probe[0])?;
        out.push(rest);
    }
    if out.is_empty() {
        return Err(Error::Format("empty LVT1 file".into()));
    }
    Ok(out)
}

fn read_record_after_first_byte<R: Read>(r: &mut R, first: u8) -> Result<DynTensor> {
    // The probe byte already consumed the first magic byte.
    let mut rest_magic = [0u8; 3];
    read_exact_or_format(r, &mut rest_magic, "magic")?;
    let magic = [first, rest_magic[0], rest_magic[1], rest_magic[2]];
    if &magic != LVT_MAGIC {
        return Err(Error::Format(format!(
            "bad magic {magic:?}, expected \"LVT1\""
        )));
    }
    read_record_body(r)
}

fn read_record_body<R: Read>(r: &mut R) -> Result<DynTensor> {
    // Same as read_record minus the magic check.
    let rank = read_u32(r, "rank")?;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("unreasonable rank {rank}")));
    }
    let mut dims = Vec::with_capacity(rank as usize);
    for i in 0..rank {
        let d = read_u32(r, "dims")?;
        if d == 0 {
            return Err(Error::Format(format!("dimension {i} is zero")));
        }
        dims.push(d as usize);
    }
    let mut tag = [0u8; 1];
    read_exact_or_format(r, &mut tag, "dtype")?;
    let precision = Precision::from_dtype_tag(tag[0])
        .ok_or_else(|| Error::Format(format!("unknown dtype tag {}", tag[0])))?;
    let count: usize = dims.iter().product();
    let elem = match precision {
        Precision::Single => 4,
        Precision::Double => 8,
    };
    let mut payload = vec![0u8; count * elem];
    read_exact_or_format(r, &mut payload, "payload")?;
    match precision {
        Precision::Single => {
            let values: Vec<f32> = payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            Ok(DynTensor::F32(
                ArrayD::from_shape_vec(IxDyn(&dims), values)
                    .map_err(|e| Error::Format(e.to_string()))?,
            ))
        }
        Precision::Double => {
            let values: Vec<f64> = payload
                .chunks_exact(8)
                .map(|c| {
                    f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]])
                })
                .collect();
            Ok(DynTensor::F64(
                ArrayD::from_shape_vec(IxDyn(&dims), values)
                    .map_err(|e| Error::Format(e.to_string()))?,
            ))
        }
    }
}

/// Save a latent video as a rank-4 LVT1 file.
pub fn save_video<T: Scalar, P: AsRef<Path>>(path: P, video: &LatentVideo<T>) -> Result<()> {
    save_tensor(path, &DynTensor::from_array(video.data().clone()))
}

/// Load a rank-4 LVT1 file as a latent video, casting to `T`.
pub fn load_video<T: Scalar, P: AsRef<Path>>(path: P) -> Result<LatentVideo<T>> {
    let dyn_tensor = load_tensor(path)?;
    let shape = dyn_tensor.shape().to_vec();
    if shape.len() != 4 {
        return Err(Error::ShapeMismatch {
            context: "latent video file",
            expected: vec![4],
            got: vec![shape.len()],
        });
    }
    let arr = dyn_tensor.cast_into::<T>();
    let fixed = arr
        .into_dimensionality::<ndarray::Ix4>()
        .map_err(|e| Error::Format(e.to_string()))?;
    LatentVideo::new(fixed)
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseFrameJson {
    keypoints: Vec<[f64; 2]>,
    visible: Vec<bool>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PoseFileJson {
    frames: Vec<PoseFrameJson>,
}

/// Serialize a pose sequence to the JSON schema above.
pub fn pose_to_json(pose: &PoseSequence) -> Result<String> {
    let frames = (0..pose.frames())
        .map(|f| PoseFrameJson {
            keypoints: (0..pose.keypoint_count())
                .map(|k| {
                    let (x, y) = pose.keypoint(f, k);
                    [x, y]
                })
                .collect(),
            visible: (0..pose.keypoint_count())
                .map(|k| pose.is_visible(f, k))
                .collect(),
        })
        .collect();
    Ok(serde_json::to_string_pretty(&PoseFileJson { frames })?)
}

/// Parse the pose JSON schema.
pub fn pose_from_json(text: &str) -> Result<PoseSequence> {
    let parsed: PoseFileJson = serde_json::from_str(text)?;
    let f = parsed.frames.len();
    if f == 0 {
        return Err(Error::Format("pose file has no frames".into()));
    }
    let k = parsed.frames[0].keypoints.len();
    for (i, frame) in parsed.frames.iter().enumerate() {
        if frame.keypoints.len() != k || frame.visible.len() != k {
            return Err(Error::Format(format!(
                "frame {i} has inconsistent keypoint count"
            )));
        }
    }
    let mut kp = Array3::zeros((f, k, 2));
    let mut vis = Array2::from_elem((f, k), false);
    for (fi, frame) in parsed.frames.iter().enumerate() {
        for (ki, point) in frame.keypoints.iter().enumerate() {
            kp[(fi, ki, 0)] = point[0];
            kp[(fi, ki, 1)] = point[1];
            vis[(fi, ki)] = frame.visible[ki];
        }
    }
    PoseSequence::new(kp, vis)
}

pub fn save_pose<P: AsRef<Path>>(path: P, pose: &PoseSequence) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(pose_to_json(pose)?.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_pose<P: AsRef<Path>>(path: P) -> Result<PoseSequence> {
    let mut text = String::new();
    BufReader::new(File::open(path)?).read_to_string(&mut text)?;
    pose_from_json(&text)
}
