//! PEMB embedding files: magic `PEMB`, version `u16 = 1`, record count
//! `u64`, then per record region id `u64`, center coordinates `2 × f64`,
//! dimension `u32` and a `f32` payload. Little-endian throughout.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::FusedEmbedding;
use crate::error::{Error, Result};

pub const PEMB_MAGIC: &[u8; 4] = b"PEMB";
pub const PEMB_VERSION: u16 = 1;

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format { format: "PEMB", reason: reason.into() }
}

pub fn write_pemb<W: Write>(mut w: W, records: &[FusedEmbedding]) -> Result<()> {
    w.write_all(PEMB_MAGIC)?;
    w.write_all(&PEMB_VERSION.to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for rec in records {
        w.write_all(&rec.region_id.to_le_bytes())?;
        w.write_all(&rec.center.0.to_le_bytes())?;
        w.write_all(&rec.center.1.to_le_bytes())?;
        let dim = u32::try_from(rec.z.len()).map_err(|_| format_err("dimension exceeds u32"))?;
        w.write_all(&dim.to_le_bytes())?;
        for &v in &rec.z {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| format_err(format!("truncated: {e}")))?;
    Ok(b)
}

pub fn read_pemb<R: Read>(mut r: R) -> Result<Vec<FusedEmbedding>> {
    if &take::<4, _>(&mut r)? != PEMB_MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = u16::from_le_bytes(take(&mut r)?);
    if version != PEMB_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let count = u64::from_le_bytes(take(&mut r)?);
    let mut out = Vec::with_capacity(count.min(1 << 20) as usize);
    for _ in 0..count {
        let region_id = u64::from_le_bytes(take(&mut r)?);
        let x = f64::from_le_bytes(take(&mut r)?);
        let y = f64::from_le_bytes(take(&mut r)?);
        let dim = u32::from_le_bytes(take(&mut r)?) as usize;
        let mut raw = vec![0u8; dim * 4];
        r.read_exact(&mut raw).map_err(|e| format_err(format!("truncated payload: {e}")))?;
        let z = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        out.push(FusedEmbedding { region_id, center: (x, y), z });
    }
    Ok(out)
}

pub fn save_pemb(path: impl AsRef<Path>, records: &[FusedEmbedding]) -> Result<()> {
    write_pemb(BufWriter::new(File::create(path)?), records)
}

pub fn load_pemb(path: impl AsRef<Path>) -> Result<Vec<FusedEmbedding>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    read_pemb(BufReader::new(f))
}
