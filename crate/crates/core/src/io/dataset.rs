//! Binary CSI dataset file.
//!
//! Layout (all little-endian):
//! `"CSID"` | version u32 | dims u32×4 (planes, n_t, n_c, count) |
//! scale f64 | payload f32, sample-major row-major.

use super::{IoError, Result};
use crate::channel::NormalizedDataset;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"CSID";
pub const VERSION: u32 = 1;

pub fn export_dataset(ds: &NormalizedDataset, path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    for dim in [2u32, ds.n_t as u32, ds.n_c as u32, ds.tensors.len() as u32] {
        f.write_all(&dim.to_le_bytes())?;
    }
    f.write_all(&ds.scale.to_le_bytes())?;
    for t in &ds.tensors {
        for &v in t {
            f.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

/// Read a dataset file. The format carries no split lists; the result has
/// every sample in `train` and an empty `test` split.
pub fn import_dataset(path: &Path) -> Result<NormalizedDataset> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut f, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(IoError::Magic { expected: MAGIC, found: magic });
    }
    let version = read_u32(&mut f, "version")?;
    if version != VERSION {
        return Err(IoError::Version { expected: VERSION, found: version });
    }
    let planes = read_u32(&mut f, "planes")? as usize;
    let n_t = read_u32(&mut f, "n_t")? as usize;
    let n_c = read_u32(&mut f, "n_c")? as usize;
    let count = read_u32(&mut f, "count")? as usize;
    if planes != 2 {
        return Err(IoError::BadField(format!("expected 2 planes, found {planes}")));
    }
    let sample_len = planes
        .checked_mul(n_t)
        .and_then(|v| v.checked_mul(n_c))
        .ok_or(IoError::DimOverflow)?;
    let total = sample_len.checked_mul(count).ok_or(IoError::DimOverflow)?;
    total.checked_mul(4).ok_or(IoError::DimOverflow)?;

    let mut scale_bytes = [0u8; 8];
    read_exact(&mut f, &mut scale_bytes, "scale")?;
    let scale = f64::from_le_bytes(scale_bytes);
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(IoError::BadField(format!("scale {scale} must be positive and finite")));
    }

    let mut payload = vec![0u8; total * 4];
    read_exact(&mut f, &mut payload, "payload")?;
    // trailing garbage means the header lied about the element count
    let mut probe = [0u8; 1];
    if f.read(&mut probe)? != 0 {
        return Err(IoError::BadField("payload longer than header declares".into()));
    }

    let mut tensors = Vec::with_capacity(count);
    for s in 0..count {
        let mut t = Vec::with_capacity(sample_len);
        for i in 0..sample_len {
            let off = (s * sample_len + i) * 4;
            let v = f32::from_le_bytes(payload[off..off + 4].try_into().expect("4 bytes"));
            t.push(v as f64);
        }
        tensors.push(t);
    }
    Ok(NormalizedDataset { n_t, n_c, tensors, scale, train: (0..count).collect(), test: Vec::new() })
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|_| IoError::Truncated { what, needed: buf.len() })
}

fn read_u32(r: &mut impl Read, what: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset() -> NormalizedDataset {
        NormalizedDataset {
            n_t: 2,
            n_c: 3,
            tensors: vec![
                (0..12).map(|i| i as f64 / 12.0).collect(),
                (0..12).map(|i| -(i as f64) / 24.0).collect(),
            ],
            scale: 3.5,
            train: vec![0],
            test: vec![1],
        }
    }

    #[test]
    fn round_trip_is_exact_at_single_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csid");
        let ds = toy_dataset();
        export_dataset(&ds, &path).unwrap();
        let back = import_dataset(&path).unwrap();
        assert_eq!(back.n_t, 2);
        assert_eq!(back.n_c, 3);
        assert_eq!(back.scale, 3.5);
        for (a, b) in ds.tensors.iter().zip(&back.tensors) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x as f32, *y as f32);
            }
        }
        // exporting the reimport reproduces the file bitwise
        let path2 = dir.path().join("d2.csid");
        export_dataset(&back, &path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn bad_magic_is_a_structured_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csid");
        std::fs::write(&path, b"NOPE----------------------------").unwrap();
        assert!(matches!(import_dataset(&path), Err(IoError::Magic { .. })));
    }

    #[test]
    fn truncated_payload_is_detected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csid");
        export_dataset(&toy_dataset(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 5]).unwrap();
        assert!(matches!(import_dataset(&path), Err(IoError::Truncated { .. })));
    }

    #[test]
    fn header_count_must_match_payload_length() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csid");
        export_dataset(&toy_dataset(), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.extend_from_slice(&[0u8; 4]);
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(import_dataset(&path), Err(IoError::BadField(_))));
    }
}
