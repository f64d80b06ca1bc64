//! `.tds` binary dataset files.
//!
//! Layout (little-endian):
//!
//! ```text
//! "TDS1" | u32 dim | u8 flags | u64 count | f32 scale | f32 offset
//! count × u64 ids | count × i64 timestamps
//! count × dim × (f32 | u8) payload        (flags bit 0 set: u8)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::dataset::{Payload, TimestampedDataset};
use crate::{Error, Result};

pub const TDS_MAGIC: &[u8; 4] = b"TDS1";
const FLAG_U8: u8 = 1;

pub fn write_tds(path: impl AsRef<Path>, ds: &TimestampedDataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_to(&mut w, ds).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_to(w: &mut impl Write, ds: &TimestampedDataset) -> std::io::Result<()> {
    let (flags, scale, offset) = match ds.payload() {
        Payload::F32(_) => (0u8, 1.0f32, 0.0f32),
        Payload::U8 { scale, offset, .. } => (FLAG_U8, *scale, *offset),
    };
    w.write_all(TDS_MAGIC)?;
    w.write_all(&(ds.dim() as u32).to_le_bytes())?;
    w.write_all(&[flags])?;
    w.write_all(&(ds.len() as u64).to_le_bytes())?;
    w.write_all(&scale.to_le_bytes())?;
    w.write_all(&offset.to_le_bytes())?;
    for id in ds.ids() {
        w.write_all(&id.to_le_bytes())?;
    }
    for ts in ds.timestamps() {
        w.write_all(&ts.to_le_bytes())?;
    }
    match ds.payload() {
        Payload::F32(v) => {
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Payload::U8 { codes, .. } => w.write_all(codes)?,
    }
    Ok(())
}

pub fn read_tds(path: impl AsRef<Path>) -> Result<TimestampedDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    read_from(&mut r, path)
}

fn read_exact<const N: usize>(r: &mut impl Read, path: &Path) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            Error::format(path, "truncated file")
        } else {
            Error::io(path, e)
        }
    })?;
    Ok(buf)
}

fn read_vec(r: &mut impl Read, path: &Path, len: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    let got = r
        .take(len as u64)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    if got != len {
        return Err(Error::format(path, "truncated file"));
    }
    Ok(buf)
}

pub fn read_from(r: &mut impl Read, path: &Path) -> Result<TimestampedDataset> {
    let magic = read_exact::<4>(r, path)?;
    if &magic != TDS_MAGIC {
        return Err(Error::format(path, "bad magic, expected TDS1"));
    }
    let dim = u32::from_le_bytes(read_exact(r, path)?) as usize;
    let [flags] = read_exact::<1>(r, path)?;
    let count = u64::from_le_bytes(read_exact(r, path)?) as usize;
    let scale = f32::from_le_bytes(read_exact(r, path)?);
    let offset = f32::from_le_bytes(read_exact(r, path)?);
    if flags & !FLAG_U8 != 0 {
        return Err(Error::format(path, format!("unknown flags {flags:#x}")));
    }

    let ids = read_vec(r, path, count * 8)?
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let timestamps = read_vec(r, path, count * 8)?
        .chunks_exact(8)
        .map(|c| i64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let payload = if flags & FLAG_U8 != 0 {
        Payload::U8 {
            codes: read_vec(r, path, count * dim)?,
            scale,
            offset,
        }
    } else {
        Payload::F32(
            read_vec(r, path, count * dim * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    };
    TimestampedDataset::with_payload(dim, payload, timestamps, ids)
        .map_err(|e| Error::format(path, e.to_string()))
}
