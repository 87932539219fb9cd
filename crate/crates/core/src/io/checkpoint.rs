//! Model checkpoints.
//!
//! Layout (little-endian):
//! `"GGCK"` | version u32 | kind u8 | entry count u32 | per entry:
//! name_len u16 + utf8 | trainable u8 | ndim u8 | dims u32×ndim |
//! payload f32. Loading restores every value at single precision and
//! verifies the kind tag against the caller's expectation.

use super::{IoError, Result};
use crate::nn::ParamVector;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"GGCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Generator,
    Discriminator,
    Encoder,
    Decoder,
}

impl ModelKind {
    pub fn tag(&self) -> u8 {
        match self {
            ModelKind::Generator => 0,
            ModelKind::Discriminator => 1,
            ModelKind::Encoder => 2,
            ModelKind::Decoder => 3,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Generator => "generator",
            ModelKind::Discriminator => "discriminator",
            ModelKind::Encoder => "encoder",
            ModelKind::Decoder => "decoder",
        }
    }

    fn from_tag(tag: u8) -> Result<ModelKind> {
        match tag {
            0 => Ok(ModelKind::Generator),
            1 => Ok(ModelKind::Discriminator),
            2 => Ok(ModelKind::Encoder),
            3 => Ok(ModelKind::Decoder),
            other => Err(IoError::BadField(format!("unknown model kind tag {other}"))),
        }
    }
}

pub fn save_checkpoint(path: &Path, kind: ModelKind, params: &ParamVector) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(&MAGIC)?;
    f.write_all(&VERSION.to_le_bytes())?;
    f.write_all(&[kind.tag()])?;
    f.write_all(&(params.entries().len() as u32).to_le_bytes())?;
    for e in params.entries() {
        let name = e.name.as_bytes();
        if name.len() > u16::MAX as usize {
            return Err(IoError::BadField(format!("entry name too long: {}", e.name)));
        }
        f.write_all(&(name.len() as u16).to_le_bytes())?;
        f.write_all(name)?;
        f.write_all(&[e.trainable as u8])?;
        if e.shape.len() > u8::MAX as usize {
            return Err(IoError::BadField("too many dimensions".into()));
        }
        f.write_all(&[e.shape.len() as u8])?;
        for d in &e.shape {
            f.write_all(&(*d as u32).to_le_bytes())?;
        }
        for &v in &e.values {
            f.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path, expected: ModelKind) -> Result<ParamVector> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut f, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(IoError::Magic { expected: MAGIC, found: magic });
    }
    let mut vy = [0u8; 4];
    read_exact(&mut f, &mut vy, "version")?;
    let version = u32::from_le_bytes(vy);
    if version != VERSION {
        return Err(IoError::Version { expected: VERSION, found: version });
    }
    let mut tag = [0u8; 1];
    read_exact(&mut f, &mut tag, "kind")?;
    let kind = ModelKind::from_tag(tag[0])?;
    if kind != expected {
        return Err(IoError::KindMismatch { expected: expected.name(), found: kind.name() });
    }
    let mut cnt = [0u8; 4];
    read_exact(&mut f, &mut cnt, "entry count")?;
    let count = u32::from_le_bytes(cnt) as usize;

    let mut params = ParamVector::new();
    for _ in 0..count {
        let mut nl = [0u8; 2];
        read_exact(&mut f, &mut nl, "name length")?;
        let mut name = vec![0u8; u16::from_le_bytes(nl) as usize];
        read_exact(&mut f, &mut name, "name")?;
        let name = String::from_utf8(name).map_err(|_| IoError::BadField("entry name not utf-8".into()))?;
        let mut tr = [0u8; 1];
        read_exact(&mut f, &mut tr, "trainable flag")?;
        let mut nd = [0u8; 1];
        read_exact(&mut f, &mut nd, "ndim")?;
        let mut shape = Vec::with_capacity(nd[0] as usize);
        let mut n = 1usize;
        for _ in 0..nd[0] {
            let mut db = [0u8; 4];
            read_exact(&mut f, &mut db, "dim")?;
            let d = u32::from_le_bytes(db) as usize;
            n = n.checked_mul(d).ok_or(IoError::DimOverflow)?;
            shape.push(d);
        }
        let mut payload = vec![0u8; n.checked_mul(4).ok_or(IoError::DimOverflow)?];
        read_exact(&mut f, &mut payload, "payload")?;
        let values: Vec<f64> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        params.push(name, shape, values, tr[0] != 0);
    }
    Ok(params)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|_| IoError::Truncated { what, needed: buf.len() })
}
