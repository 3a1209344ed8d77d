//! The MVOL volume format: a JSON text header next to a raw little-endian
//! f32 payload.
//!
//! `<name>.mvol.json` holds dims, spacing and the relative payload name;
//! `<name>.raw` holds `nx*ny*nz` f32 values, x-fastest, then y, then z.
//! Round trips are bit-exact. Masks reuse the format with payload values
//! restricted to 0.0 / 1.0.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use voxseg_core::{Mask, Volume};

use crate::error::{PipelineError, Result};

pub const MVOL_SUFFIX: &str = ".mvol.json";
const DTYPE: &str = "f32le";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    dims: [usize; 3],
    spacing_mm: [f64; 3],
    dtype: String,
    data_file: String,
}

fn raw_path_for(header_path: &Path, data_file: &str) -> PathBuf {
    header_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(data_file)
}

/// Read a header+raw pair.
pub fn read_volume(path: &Path) -> Result<Volume> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let header: Header = serde_json::from_str(&text)
        .map_err(|e| PipelineError::format(path, format!("bad header: {e}")))?;
    if header.dtype != DTYPE {
        return Err(PipelineError::format(
            path,
            format!("unsupported dtype '{}', expected '{DTYPE}'", header.dtype),
        ));
    }
    let raw_path = raw_path_for(path, &header.data_file);
    let bytes = fs::read(&raw_path).map_err(|e| PipelineError::io(&raw_path, e))?;
    let expected = header.dims[0] * header.dims[1] * header.dims[2] * 4;
    if bytes.len() != expected {
        return Err(PipelineError::format(
            &raw_path,
            format!(
                "payload holds {} bytes, header dims {:?} require {expected}",
                bytes.len(),
                header.dims
            ),
        ));
    }
    let data: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Volume::new(header.dims, header.spacing_mm, data)?)
}

/// Write a header+raw pair; `path` must end in `.mvol.json`.
pub fn write_volume(v: &Volume, path: &Path) -> Result<()> {
    let name = path
        .file_name()
        .and_then(|n| n.to_str())
        .filter(|n| n.ends_with(MVOL_SUFFIX))
        .ok_or_else(|| {
            PipelineError::format(path, format!("volume path must end in {MVOL_SUFFIX}"))
        })?;
    let stem = name.trim_end_matches(MVOL_SUFFIX);
    let data_file = format!("{stem}.raw");
    let header = Header {
        dims: v.dims(),
        spacing_mm: v.spacing_mm(),
        dtype: DTYPE.to_string(),
        data_file: data_file.clone(),
    };
    let header_text = serde_json::to_string_pretty(&header)
        .map_err(|e| PipelineError::format(path, e.to_string()))?;
    fs::write(path, header_text).map_err(|e| PipelineError::io(path, e))?;
    let raw_path = raw_path_for(path, &data_file);
    let mut bytes = Vec::with_capacity(v.voxel_count() * 4);
    for &x in v.data() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(&raw_path, bytes).map_err(|e| PipelineError::io(&raw_path, e))?;
    Ok(())
}

/// Read a mask stored as an MVOL volume of exact 0.0/1.0 values.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let v = read_volume(path)?;
    Ok(Mask::from_volume(&v)?)
}

pub fn write_mask(m: &Mask, path: &Path) -> Result<()> {
    write_volume(&m.to_volume(), path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    fn vol(dims: [usize; 3], f: impl Fn(usize) -> f32) -> Volume {
        let n = dims[0] * dims[1] * dims[2];
        Volume::new(dims, [1.0, 1.0, 2.5], (0..n).map(f).collect()).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempdir().unwrap();
        let v = vol([4, 4, 4], |i| (i as f32).sin() * 1.5);
        let path = dir.path().join("case.mvol.json");
        write_volume(&v, &path).unwrap();
        let back = read_volume(&path).unwrap();
        assert_eq!(v, back);
        // bytes too, including negative zero
        let vz = vol([2, 1, 1], |i| if i == 0 { -0.0 } else { 1.0 });
        let pz = dir.path().join("z.mvol.json");
        write_volume(&vz, &pz).unwrap();
        let rz = read_volume(&pz).unwrap();
        assert_eq!(rz.data()[0].to_bits(), (-0.0f32).to_bits());
    }

    #[test]
    fn single_voxel_payload_is_four_bytes() {
        let dir = tempdir().unwrap();
        let v = vol([1, 1, 1], |_| 0.0);
        let path = dir.path().join("one.mvol.json");
        write_volume(&v, &path).unwrap();
        let raw = std::fs::read(dir.path().join("one.raw")).unwrap();
        assert_eq!(raw.len(), 4);
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = read_volume(Path::new("/nonexistent/case.mvol.json")).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn length_mismatch_is_detected() {
        let dir = tempdir().unwrap();
        let v = vol([2, 2, 2], |i| i as f32);
        let path = dir.path().join("case.mvol.json");
        write_volume(&v, &path).unwrap();
        // truncate the payload to 7 values
        std::fs::write(dir.path().join("case.raw"), vec![0u8; 28]).unwrap();
        let err = read_volume(&path).unwrap_err();
        assert!(matches!(err, PipelineError::Format { .. }), "{err}");
    }

    #[test]
    fn invalid_spacing_is_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.mvol.json");
        let header = r#"{"dims":[1,1,1],"spacing_mm":[1.0,1.0,-2.5],"dtype":"f32le","data_file":"bad.raw"}"#;
        std::fs::write(&path, header).unwrap();
        std::fs::write(dir.path().join("bad.raw"), vec![0u8; 4]).unwrap();
        let err = read_volume(&path).unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn non_finite_values_are_rejected_on_both_sides() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("nan.mvol.json");
        let header = r#"{"dims":[1,1,1],"spacing_mm":[1.0,1.0,1.0],"dtype":"f32le","data_file":"nan.raw"}"#;
        std::fs::write(&path, header).unwrap();
        std::fs::write(dir.path().join("nan.raw"), f32::NAN.to_le_bytes()).unwrap();
        assert!(read_volume(&path).is_err());
        // writing a NaN is impossible because Volume construction rejects it
        assert!(Volume::new([1, 1, 1], [1.0; 3], vec![f32::NAN]).is_err());
    }

    #[test]
    fn unknown_header_fields_are_rejected() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("extra.mvol.json");
        let header = r#"{"dims":[1,1,1],"spacing_mm":[1,1,1],"dtype":"f32le","data_file":"extra.raw","oops":1}"#;
        std::fs::write(&path, header).unwrap();
        assert!(read_volume(&path).is_err());
    }

    #[test]
    fn mask_round_trip_and_strictness() {
        let dir = tempdir().unwrap();
        let m = Mask::new([2, 2, 1], [1.0, 1.0, 2.5], vec![1, 0, 0, 1]).unwrap();
        let path = dir.path().join("mask.mvol.json");
        write_mask(&m, &path).unwrap();
        assert_eq!(read_mask(&path).unwrap(), m);

        let v = vol([2, 2, 1], |i| i as f32 * 0.5);
        let vp = dir.path().join("notmask.mvol.json");
        write_volume(&v, &vp).unwrap();
        assert!(read_mask(&vp).is_err());
    }
}
