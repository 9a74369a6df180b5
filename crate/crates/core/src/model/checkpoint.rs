//! PMDL checkpoints: magic `PMDL`, version `u16 = 1`, a `u32` length
//! followed by a JSON header, then a `u64` value count and the `f32`
//! payload. Little-endian throughout. The payload holds the network
//! parameters followed by the attention head parameters when present.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::Mlp;
use super::spec::ModelSpec;
use super::train::{Normalizer, TrainedModel};
use crate::error::{Error, Result};
use crate::geoembed::{AttentionHead, LocationEncoderSpec};

pub const PMDL_MAGIC: &[u8; 4] = b"PMDL";
pub const PMDL_VERSION: u16 = 1;

/// A trained member with its optional fusion head.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TrainedModel,
    pub attention: Option<AttentionHead>,
    pub encoder: Option<LocationEncoderSpec>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    normalizer: Normalizer,
    loss_history: Vec<f64>,
    mlp_params: usize,
    attention_dim: Option<usize>,
    encoder: Option<LocationEncoderSpec>,
}

fn format_err(reason: impl Into<String>) -> Error {
    Error::Format { format: "PMDL", reason: reason.into() }
}

pub fn write_checkpoint<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<()> {
    let header = Header {
        spec: ckpt.model.spec().clone(),
        normalizer: ckpt.model.normalizer.clone(),
        loss_history: ckpt.model.loss_history.clone(),
        mlp_params: ckpt.model.mlp.num_params(),
        attention_dim: ckpt.attention.as_ref().map(|a| a.dim()),
        encoder: ckpt.encoder.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    let len = u32::try_from(json.len()).map_err(|_| format_err("header too large"))?;
    w.write_all(PMDL_MAGIC)?;
    w.write_all(&PMDL_VERSION.to_le_bytes())?;
    w.write_all(&len.to_le_bytes())?;
    w.write_all(&json)?;
    let attn: &[f64] = ckpt.attention.as_ref().map_or(&[], |a| a.params());
    let count = (ckpt.model.mlp.num_params() + attn.len()) as u64;
    w.write_all(&count.to_le_bytes())?;
    for &v in ckpt.model.mlp.params().iter().chain(attn) {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

fn take<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| format_err(format!("truncated: {e}")))?;
    Ok(b)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    if &take::<4, _>(&mut r)? != PMDL_MAGIC {
        return Err(format_err("bad magic"));
    }
    let version = u16::from_le_bytes(take(&mut r)?);
    if version != PMDL_VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    let len = u32::from_le_bytes(take(&mut r)?) as usize;
    let mut json = vec![0u8; len];
    r.read_exact(&mut json).map_err(|e| format_err(format!("truncated header: {e}")))?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| format_err(format!("header: {e}")))?;
    header.spec.validate()?;
    let count = u64::from_le_bytes(take(&mut r)?) as usize;
    let attn_len = header.attention_dim.map_or(0, |d| d * d + 2 * d + 1);
    if count != header.mlp_params + attn_len {
        return Err(format_err(format!("payload holds {count} values, header implies {}", header.mlp_params + attn_len)));
    }
    let mut raw = vec![0u8; count * 4];
    r.read_exact(&mut raw).map_err(|e| format_err(format!("truncated payload: {e}")))?;
    let mut values: Vec<f64> =
        raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64).collect();
    let attn_params = values.split_off(header.mlp_params);
    let mlp = Mlp::from_params(&header.spec, values)?;
    let attention = match header.attention_dim {
        Some(d) => Some(AttentionHead::from_params(d, attn_params)?),
        None => None,
    };
    Ok(Checkpoint {
        model: TrainedModel { mlp, normalizer: header.normalizer, loss_history: header.loss_history },
        attention,
        encoder: header.encoder,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), ckpt)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let spec = ModelSpec { bands: 2, context_radius: 1, hidden: vec![5, 3], dropout_rate: 0.2 };
        let mlp = Mlp::new(&spec, 11).unwrap();
        let model = TrainedModel {
            mlp,
            normalizer: Normalizer { mean: vec![0.1, 0.2], std: vec![1.0, 2.0] },
            loss_history: vec![0.5, 0.25],
        };
        Checkpoint { model, attention: Some(AttentionHead::random(3 + 12, 2)), encoder: Some(LocationEncoderSpec { scales: 2, ..Default::default() }) }
    }

    #[test]
    fn round_trip_at_f32_precision() {
        let ckpt = sample();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &ckpt).unwrap();
        assert_eq!(&buf[..4], b"PMDL");
        assert_eq!(u16::from_le_bytes([buf[4], buf[5]]), 1);
        let back = read_checkpoint(&buf[..]).unwrap();
        assert_eq!(back.model.spec(), ckpt.model.spec());
        assert_eq!(back.model.normalizer, ckpt.model.normalizer);
        assert_eq!(back.encoder, ckpt.encoder);
        for (a, b) in back.model.mlp.params().iter().zip(ckpt.model.mlp.params()) {
            assert_eq!(*a, *b as f32 as f64);
        }
        let (a, b) = (back.attention.unwrap(), ckpt.attention.unwrap());
        assert_eq!(a.dim(), b.dim());
        for (x, y) in a.params().iter().zip(b.params()) {
            assert_eq!(*x, *y as f32 as f64);
        }
        // A second write of the reloaded checkpoint is byte-identical.
        let mut again = Vec::new();
        write_checkpoint(&mut again, &read_checkpoint(&buf[..]).unwrap()).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn rejects_corruption() {
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &sample()).unwrap();
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&bad[..]).is_err());
        assert!(read_checkpoint(&buf[..buf.len() - 3]).is_err());
        assert!(matches!(load_checkpoint("/nonexistent/model.pmdl"), Err(Error::MissingFile(_))));
    }
}
