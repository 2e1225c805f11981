//! Volume readers: NIfTI (`.nii`, `.nii.gz`) and a small raw format.
//!
//! Raw layout, little-endian:
//!
//! ```text
//! magic "HFCV" | u32 version (1) | u32 d0 | u32 d1 | u32 d2
//! | u8 dtype (1 = u8, 2 = i16, 3 = f32) | f32 s0 | f32 s1 | f32 s2
//! | d0*d1*d2 elements, C order (last axis fastest)
//! ```
//!
//! Image and label maps live in separate files.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use ndarray::{Array3, Ix3};
use nifti::{IntoNdArray, NiftiObject, ReaderOptions};

use super::VolumeRecord;
use crate::checkpoint::write_atomic;
use crate::error::{CoreError, Result};

const MAGIC: &[u8; 4] = b"HFCV";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 12 + 1 + 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawDType {
    U8,
    I16,
    F32,
}

impl RawDType {
    fn code(self) -> u8 {
        match self {
            RawDType::U8 => 1,
            RawDType::I16 => 2,
            RawDType::F32 => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(RawDType::U8),
            2 => Some(RawDType::I16),
            3 => Some(RawDType::F32),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            RawDType::U8 => 1,
            RawDType::I16 => 2,
            RawDType::F32 => 4,
        }
    }
}

/// Writes one array in the raw format. Values must be representable in `dtype`.
pub fn write_raw(path: &Path, dims: [usize; 3], spacing: [f32; 3], dtype: RawDType, values: &[f32]) -> Result<()> {
    let n: usize = dims.iter().product();
    if values.len() != n {
        return Err(CoreError::Data(format!(
            "{}: {} values for dims {dims:?}",
            path.display(),
            values.len()
        )));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + n * dtype.size());
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION).expect("vec write");
    for d in dims {
        out.write_u32::<LittleEndian>(d as u32).expect("vec write");
    }
    out.push(dtype.code());
    for s in spacing {
        out.write_f32::<LittleEndian>(s).expect("vec write");
    }
    for &v in values {
        match dtype {
            RawDType::U8 => {
                if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
                    return Err(CoreError::Data(format!("{}: {v} does not fit u8", path.display())));
                }
                out.push(v as u8);
            }
            RawDType::I16 => {
                if v.fract() != 0.0 || !(-32768.0..=32767.0).contains(&v) {
                    return Err(CoreError::Data(format!("{}: {v} does not fit i16", path.display())));
                }
                out.write_i16::<LittleEndian>(v as i16).expect("vec write");
            }
            RawDType::F32 => out.write_f32::<LittleEndian>(v).expect("vec write"),
        }
    }
    write_atomic(path, &out)
}

/// Reads a raw array: `(dims, spacing, dtype, values)`.
pub fn read_raw(path: &Path) -> Result<([usize; 3], [f32; 3], RawDType, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let bad = |m: String| CoreError::format(path, m);
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(bad("not a raw volume (bad magic or short header)".into()));
    }
    let mut cur = Cursor::new(&bytes[4..HEADER_LEN]);
    let version = cur.read_u32::<LittleEndian>().expect("header length checked");
    if version != VERSION {
        return Err(bad(format!("unsupported raw volume version {version}")));
    }
    let mut dims = [0usize; 3];
    for d in &mut dims {
        *d = cur.read_u32::<LittleEndian>().expect("header length checked") as usize;
    }
    let code = cur.read_u8().expect("header length checked");
    let dtype = RawDType::from_code(code).ok_or_else(|| bad(format!("unknown dtype code {code}")))?;
    let mut spacing = [0f32; 3];
    for s in &mut spacing {
        *s = cur.read_f32::<LittleEndian>().expect("header length checked");
    }
    let n: usize = dims.iter().product();
    let body = &bytes[HEADER_LEN..];
    if body.len() != n * dtype.size() {
        return Err(bad(format!(
            "header dims {}x{}x{} ({} bytes per voxel) need {} body bytes, file has {}",
            dims[0],
            dims[1],
            dims[2],
            dtype.size(),
            n * dtype.size(),
            body.len()
        )));
    }
    let mut values = Vec::with_capacity(n);
    let mut cur = Cursor::new(body);
    for _ in 0..n {
        let v = match dtype {
            RawDType::U8 => cur.read_u8().map(f32::from),
            RawDType::I16 => cur.read_i16::<LittleEndian>().map(f32::from),
            RawDType::F32 => cur.read_f32::<LittleEndian>(),
        }
        .expect("body length checked");
        values.push(v);
    }
    Ok((dims, spacing, dtype, values))
}

fn is_nifti(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    name.ends_with(".nii") || name.ends_with(".nii.gz")
}

fn read_nifti(path: &Path) -> Result<([usize; 3], [f32; 3], Vec<f32>)> {
    let obj = ReaderOptions::new()
        .read_file(path)
        .map_err(|e| CoreError::format(path, format!("NIfTI: {e}")))?;
    let hdr = obj.header();
    let spacing = [hdr.pixdim[1], hdr.pixdim[2], hdr.pixdim[3]];
    let arr = obj
        .into_volume()
        .into_ndarray::<f32>()
        .map_err(|e| CoreError::format(path, format!("NIfTI data: {e}")))?;
    let shape = arr.shape().to_vec();
    let arr = match shape.as_slice() {
        [_, _, _] => arr,
        [a, b, c, 1] => arr.into_shape_with_order(vec![*a, *b, *c]).map_err(|e| CoreError::format(path, e.to_string()))?,
        _ => return Err(CoreError::format(path, format!("expected a 3D volume, got dims {shape:?}"))),
    };
    let arr = arr
        .into_dimensionality::<Ix3>()
        .map_err(|e| CoreError::format(path, e.to_string()))?;
    let (d0, d1, d2) = arr.dim();
    Ok(([d0, d1, d2], spacing, arr.iter().copied().collect()))
}

/// Writes a 3D array as NIfTI (`.nii` or `.nii.gz`, chosen by extension).
pub fn write_nifti(path: &Path, dims: [usize; 3], values: &[f32]) -> Result<()> {
    let arr = Array3::from_shape_vec((dims[0], dims[1], dims[2]), values.to_vec())
        .map_err(|e| CoreError::Data(e.to_string()))?;
    nifti::writer::WriterOptions::new(path)
        .write_nifti(&arr)
        .map_err(|e| CoreError::format(path, format!("NIfTI write: {e}")))
}

fn read_any(path: &Path) -> Result<([usize; 3], [f32; 3], Vec<f32>)> {
    if is_nifti(path) {
        read_nifti(path)
    } else {
        let (dims, spacing, _, values) = read_raw(path)?;
        Ok((dims, spacing, values))
    }
}

/// Loads an image and its label map (NIfTI or raw, picked per file by
/// extension). Labels must be integers in `{0, 1, 2}`.
pub fn load_volume(image: &Path, label: &Path) -> Result<VolumeRecord> {
    let (dims, spacing, voxels) = read_any(image)?;
    let (ldims, _, lvals) = read_any(label)?;
    if dims != ldims {
        return Err(CoreError::Data(format!(
            "image {} has dims {dims:?} but label {} has {ldims:?}",
            image.display(),
            label.display()
        )));
    }
    let mut labels = Vec::with_capacity(lvals.len());
    for v in lvals {
        if v.fract() != 0.0 || !(0.0..=2.0).contains(&v) {
            return Err(CoreError::format(label, format!("label value {v} outside {{0, 1, 2}}")));
        }
        labels.push(v as u8);
    }
    let subject_id = subject_from_path(image);
    let rec = VolumeRecord {
        dims,
        voxels,
        labels,
        spacing,
        subject_id,
    };
    rec.validate()?;
    Ok(rec)
}

/// File name without `.nii.gz`, `.nii` or any other final extension.
pub(crate) fn subject_from_path(path: &Path) -> String {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("subject");
    let stem = name
        .strip_suffix(".nii.gz")
        .or_else(|| name.strip_suffix(".nii"))
        .unwrap_or_else(|| name.rsplit_once('.').map(|(s, _)| s).unwrap_or(name));
    stem.to_string()
}
