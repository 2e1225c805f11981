//! Sample container, little-endian:
//!
//! ```text
//! magic "HFCS" | u32 version (1) | u32 count
//! per sample: u16 id_len | subject id | u32 slice | u8 is_noise
//!             | u32 height | u32 width | h*w f32 image | h*w u8 mask
//! ```

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::SegmentationSample;
use crate::checkpoint::write_atomic;
use crate::error::{CoreError, Result};

const MAGIC: &[u8; 4] = b"HFCS";
const VERSION: u32 = 1;

pub fn write_samples(path: &Path, samples: &[SegmentationSample]) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u32::<LittleEndian>(VERSION).expect("vec write");
    out.write_u32::<LittleEndian>(samples.len() as u32).expect("vec write");
    for s in samples {
        s.validate()?;
        out.write_u16::<LittleEndian>(s.subject_id.len() as u16).expect("vec write");
        out.extend_from_slice(s.subject_id.as_bytes());
        out.write_u32::<LittleEndian>(s.slice_index as u32).expect("vec write");
        out.push(s.is_noise as u8);
        out.write_u32::<LittleEndian>(s.height as u32).expect("vec write");
        out.write_u32::<LittleEndian>(s.width as u32).expect("vec write");
        for &v in &s.image {
            out.write_f32::<LittleEndian>(v).expect("vec write");
        }
        out.extend_from_slice(&s.mask);
    }
    write_atomic(path, &out)
}

pub fn read_samples(path: &Path) -> Result<Vec<SegmentationSample>> {
    let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let bad = |m: &str| CoreError::format(path, m);
    let mut cur = Cursor::new(bytes.as_slice());
    let mut magic = [0u8; 4];
    cur.read_exact(&mut magic).map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("not a sample file (bad magic)"));
    }
    let version = cur.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))?;
    if version != VERSION {
        return Err(bad("unsupported sample file version"));
    }
    let count = cur.read_u32::<LittleEndian>().map_err(|_| bad("truncated header"))? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let rec = (|| -> std::io::Result<SegmentationSample> {
            let len = cur.read_u16::<LittleEndian>()? as usize;
            let mut id = vec![0u8; len];
            cur.read_exact(&mut id)?;
            let slice_index = cur.read_u32::<LittleEndian>()? as usize;
            let is_noise = cur.read_u8()? != 0;
            let height = cur.read_u32::<LittleEndian>()? as usize;
            let width = cur.read_u32::<LittleEndian>()? as usize;
            let mut image = vec![0f32; height * width];
            cur.read_f32_into::<LittleEndian>(&mut image)?;
            let mut mask = vec![0u8; height * width];
            cur.read_exact(&mut mask)?;
            Ok(SegmentationSample {
                height,
                width,
                image,
                mask,
                subject_id: String::from_utf8_lossy(&id).into_owned(),
                slice_index,
                is_noise,
            })
        })()
        .map_err(|_| bad("truncated sample record"))?;
        rec.validate()?;
        out.push(rec);
    }
    if cur.position() as usize != bytes.len() {
        return Err(bad("trailing bytes after last sample"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::synth_dataset;

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.bin");
        let mut s = synth_dataset(3, 16, 0);
        s[1].is_noise = true;
        write_samples(&p, &s).unwrap();
        assert_eq!(read_samples(&p).unwrap(), s);
    }
}
