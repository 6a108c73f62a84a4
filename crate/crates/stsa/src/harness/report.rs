//! Result emission: sweep tables as JSON and CSV, plus an optional PGM
//! frame dump for eyeballing generated scenes.
//!
//! Field order is fixed by the struct definitions and floats print in
//! shortest round-trip form, so two runs with the same inputs emit
//! byte-identical files and diff cleanly.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::harness::sweep::SweepTable;
use crate::scalar::Scalar;
use crate::tensor::LatentVideo;

/// Column order of the sweep CSV, also used as its header line.
pub const SWEEP_CSV_HEADER: &str =
    "s_f,s_h,s_w,window_volume,projection_macs,attention_macs,total_macs,peak_tokens,along_flow_variation";

/// Render a sweep table as CSV, one row per accepted size. Skipped sizes
/// carry no numbers and stay out of the CSV; they remain in the JSON.
pub fn sweep_to_csv(table: &SweepTable) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for row in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            row.spec.s_f,
            row.spec.s_h,
            row.spec.s_w,
            row.window_volume,
            row.projection_macs,
            row.attention_macs,
            row.total_macs,
            row.peak_tokens,
            row.along_flow_variation,
        ));
    }
    out
}

/// Write `sweep.json` and `sweep.csv` into `dir`, creating it if needed.
/// Returns the two paths in that order.
pub fn emit_sweep(table: &SweepTable, dir: impl AsRef<Path>) -> Result<(PathBuf, PathBuf)> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let json_path = dir.join("sweep.json");
    let csv_path = dir.join("sweep.csv");
    let mut json = serde_json::to_string_pretty(table)?;
    json.push('\n');
    fs::write(&json_path, json)?;
    fs::write(&csv_path, sweep_to_csv(table))?;
    Ok((json_path, csv_path))
}

/// Parse a previously emitted sweep table, rejecting unknown fields.
pub fn load_sweep(path: impl AsRef<Path>) -> Result<SweepTable> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Dump channel 0 of every frame as binary PGM images `frame_000.pgm`,
/// `frame_001.pgm`, ... with one global intensity scale across the video.
pub fn dump_pgm_frames<T: Scalar>(
    video: &LatentVideo<T>,
    dir: impl AsRef<Path>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let (f, h, w, _) = video.shape();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for k in 0..f {
        for y in 0..h {
            for x in 0..w {
                let v = video.data()[(k, y, x, 0)].to_f64();
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
    }
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut paths = Vec::with_capacity(f);
    for k in 0..f {
        let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
        for y in 0..h {
            for x in 0..w {
                let v = video.data()[(k, y, x, 0)].to_f64();
                bytes.push(((v - lo) / span * 255.0).round() as u8);
            }
        }
        let path = dir.join(format!("frame_{k:03}.pgm"));
        fs::write(&path, bytes)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::scene::{default_scene, gen_scene};
    use crate::harness::sweep::{default_sweep_sizes, sweep_subspace_sizes};

    fn sample_table() -> SweepTable {
        let (video, _, flows) = gen_scene(&default_scene(), 1).unwrap();
        sweep_subspace_sizes(&video, &flows, &default_sweep_sizes(), 8, 2, 1).unwrap()
    }

    #[test]
    fn emitted_files_round_trip_and_match_row_counts() {
        let tmp = tempfile::tempdir().unwrap();
        let table = sample_table();
        let (json_path, csv_path) = emit_sweep(&table, tmp.path()).unwrap();
        let back = load_sweep(&json_path).unwrap();
        assert_eq!(table, back);
        let csv = fs::read_to_string(&csv_path).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], SWEEP_CSV_HEADER);
        assert_eq!(lines.len(), 1 + table.rows.len());
        // Every data line has exactly the header's column count.
        let cols = SWEEP_CSV_HEADER.split(',').count();
        for line in &lines[1..] {
            assert_eq!(line.split(',').count(), cols);
        }
    }

    #[test]
    fn empty_table_emits_valid_header_only_files() {
        let tmp = tempfile::tempdir().unwrap();
        let table = SweepTable::default();
        let (json_path, csv_path) = emit_sweep(&table, tmp.path()).unwrap();
        assert_eq!(load_sweep(&json_path).unwrap(), table);
        let csv = fs::read_to_string(&csv_path).unwrap();
        assert_eq!(csv, format!("{SWEEP_CSV_HEADER}\n"));
    }

    #[test]
    fn emission_is_byte_identical_across_runs() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let table = sample_table();
        let (ja, ca) = emit_sweep(&table, a.path()).unwrap();
        let (jb, cb) = emit_sweep(&table, b.path()).unwrap();
        assert_eq!(fs::read(ja).unwrap(), fs::read(jb).unwrap());
        assert_eq!(fs::read(ca).unwrap(), fs::read(cb).unwrap());
    }

    #[test]
    fn unknown_fields_are_rejected_at_load() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("bad.json");
        fs::write(&path, r#"{"rows": [], "skipped": [], "surprise": 1}"#).unwrap();
        assert!(load_sweep(&path).is_err());
    }

    #[test]
    fn pgm_dump_writes_one_valid_image_per_frame() {
        let spec = default_scene();
        let (video, _, _) = gen_scene(&spec, 2).unwrap();
        let tmp = tempfile::tempdir().unwrap();
        let paths = dump_pgm_frames(&video, tmp.path()).unwrap();
        assert_eq!(paths.len(), spec.frames);
        let first = fs::read(&paths[0]).unwrap();
        let header = format!("P5\n{} {}\n255\n", spec.width, spec.height);
        assert!(first.starts_with(header.as_bytes()));
        assert_eq!(first.len(), header.len() + spec.height * spec.width);
    }
}
