//! Versioned little-endian binary model file.
//!
//! Layout:
//!
//! ```text
//! magic        4 bytes   "SVTN"
//! version      u32
//! config       u32 × 7   input_channels, seq_len, d_model, n_heads,
//!                        n_layers, d_ff, feature_dim
//!              u64       seed
//! param_count  u64
//! weights      f32 × param_count
//! ```
//!
//! Weights follow [`EncoderParams::visit`] order: `input.weight`,
//! `input.bias`, `position`, then per block `ln1.{gamma,beta}`,
//! `{query,key,value,attn_out}.{weight,bias}`, `ln2.{gamma,beta}`,
//! `ff_in.{weight,bias}`, `ff_out.{weight,bias}`, then
//! `final_norm.{gamma,beta}`, `feature_head.{weight,bias}`,
//! `logit_head.{weight,bias}`. Dense weights are row-major `out × in`.

use std::io::{Read, Write};

use super::{EncoderConfig, EncoderError, EncoderModel, EncoderParams};

pub const MAGIC: &[u8; 4] = b"SVTN";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_model<W: Write>(mut w: W, model: &EncoderModel) -> Result<(), EncoderError> {
    let c = &model.config;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for v in [
        c.input_channels,
        c.seq_len,
        c.d_model,
        c.n_heads,
        c.n_layers,
        c.d_ff,
        c.feature_dim,
    ] {
        let v = u32::try_from(v).map_err(|_| EncoderError::Format(format!("dimension {v} exceeds u32")))?;
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&c.seed.to_le_bytes())?;
    let flat = model.params.flatten();
    w.write_all(&(flat.len() as u64).to_le_bytes())?;
    for x in flat {
        w.write_all(&(x as f32).to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, EncoderError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, EncoderError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_model<R: Read>(mut r: R) -> Result<EncoderModel, EncoderError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(EncoderError::Format("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(EncoderError::Format(format!("unsupported version {version}")));
    }
    let mut dims = [0usize; 7];
    for d in dims.iter_mut() {
        *d = read_u32(&mut r)? as usize;
    }
    let config = EncoderConfig {
        input_channels: dims[0],
        seq_len: dims[1],
        d_model: dims[2],
        n_heads: dims[3],
        n_layers: dims[4],
        d_ff: dims[5],
        feature_dim: dims[6],
        seed: read_u64(&mut r)?,
    };
    config.validate()?;
    let mut params = EncoderParams::zeros(&config);
    let count = read_u64(&mut r)? as usize;
    if count != params.num_params() {
        return Err(EncoderError::Format(format!(
            "parameter count {count} does not match config ({})",
            params.num_params()
        )));
    }
    let mut flat = Vec::with_capacity(count);
    let mut b = [0u8; 4];
    for _ in 0..count {
        r.read_exact(&mut b)?;
        flat.push(f32::from_le_bytes(b) as f64);
    }
    params.assign(&flat);
    if !params.is_finite() {
        return Err(EncoderError::Format("non-finite weight".into()));
    }
    Ok(EncoderModel { config, params })
}
