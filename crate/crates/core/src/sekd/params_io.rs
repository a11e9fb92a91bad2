//! Flat tensor file for scorer parameters.
//!
//! Layout, all little-endian:
//!
//! ```text
//! bytes 0..8   magic "SEKDPRM1"
//! bytes 8..12  u32 header length N
//! bytes 12..12+N  JSON header {scalar, meta, tensors, has_projector, config}
//! then         scorer parameters as f64 little-endian, in layout order
//! then         projector rows as f64 little-endian, when present
//! ```
//!
//! The JSON header names every tensor and its shape in flat-buffer order,
//! and echoes the configuration that produced the parameters.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scorer::{Projector, ScorerMeta, ScorerParams};
use super::SekdError;
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"SEKDPRM1";

#[derive(Debug, Serialize, Deserialize)]
struct FileHeader {
    scalar: String,
    meta: ScorerMeta,
    tensors: Vec<(String, Vec<usize>)>,
    has_projector: bool,
    config: serde_json::Value,
}

pub fn save_params<T: Scalar, W: Write>(
    mut w: W,
    params: &ScorerParams<T>,
    projector: Option<&Projector<T>>,
    config: &serde_json::Value,
) -> Result<(), SekdError> {
    let mut tensors = params.meta.tensors();
    if let Some(p) = projector {
        tensors.push(("projector.w".into(), vec![p.dim, p.dim]));
    }
    let header = FileHeader {
        scalar: "f64".into(),
        meta: params.meta.clone(),
        tensors,
        has_projector: projector.is_some(),
        config: config.clone(),
    };
    let header_json =
        serde_json::to_vec(&header).map_err(|e| SekdError::ParamsIo(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(header_json.len() as u32).to_le_bytes())?;
    w.write_all(&header_json)?;
    for v in &params.data {
        w.write_all(&v.to_f64().unwrap_or(f64::NAN).to_le_bytes())?;
    }
    if let Some(p) = projector {
        for v in &p.data {
            w.write_all(&v.to_f64().unwrap_or(f64::NAN).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn save_params_to_path<T: Scalar>(
    path: &Path,
    params: &ScorerParams<T>,
    projector: Option<&Projector<T>>,
    config: &serde_json::Value,
) -> Result<(), SekdError> {
    let file = std::fs::File::create(path)?;
    save_params(std::io::BufWriter::new(file), params, projector, config)
}

pub fn load_params<R: Read>(
    mut r: R,
) -> Result<(ScorerParams<f64>, Option<Projector<f64>>, serde_json::Value), SekdError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(SekdError::ParamsIo("bad magic".into()));
    }
    let mut len_bytes = [0u8; 4];
    r.read_exact(&mut len_bytes)?;
    let header_len = u32::from_le_bytes(len_bytes) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: FileHeader =
        serde_json::from_slice(&header_bytes).map_err(|e| SekdError::ParamsIo(e.to_string()))?;
    if header.scalar != "f64" {
        return Err(SekdError::ParamsIo(format!(
            "unsupported scalar `{}`",
            header.scalar
        )));
    }

    let mut read_f64s = |n: usize| -> Result<Vec<f64>, SekdError> {
        let mut buf = vec![0u8; n * 8];
        r.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect())
    };
    let data = read_f64s(header.meta.total_params())?;
    let params = ScorerParams::from_parts(header.meta.clone(), data);
    let projector = if header.has_projector {
        let dim = header.meta.hidden_dim;
        Some(Projector {
            dim,
            data: read_f64s(dim * dim)?,
        })
    } else {
        None
    };
    Ok((params, projector, header.config))
}

pub fn load_params_from_path(
    path: &Path,
) -> Result<(ScorerParams<f64>, Option<Projector<f64>>, serde_json::Value), SekdError> {
    let file = std::fs::File::open(path)?;
    load_params(std::io::BufReader::new(file))
}
