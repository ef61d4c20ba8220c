//! Checkpoint format: a magic header, a JSON block carrying the model
//! configuration (band spec included) and the tensor index, then raw
//! little-endian 32-bit float data in index order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Layout, ModelConfig, ModelParams};

const MAGIC: &[u8; 8] = b"BSPCKPT1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    /// Optimizer step count at save time; lets training resume exactly.
    step: u64,
    tensors: Vec<TensorEntry>,
}

pub fn save(path: &Path, params: &ModelParams, step: u64) -> Result<()> {
    let header = Header {
        config: params.config.clone(),
        step,
        tensors: params
            .layout
            .metas
            .iter()
            .map(|m| TensorEntry { name: m.name.clone(), shape: m.shape.clone() })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)?;
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(MAGIC)?;
    file.write_all(&(header_json.len() as u64).to_le_bytes())?;
    file.write_all(&header_json)?;
    for &v in params.data() {
        file.write_all(&(v as f32).to_le_bytes())?;
    }
    file.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ModelParams, u64)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 8];
    file.read_exact(&mut magic)
        .map_err(|_| Error::Parse { offset: 0, msg: "checkpoint too short".into() })?;
    if &magic != MAGIC {
        return Err(Error::Parse { offset: 0, msg: "not a checkpoint file (bad magic)".into() });
    }
    let mut len_bytes = [0u8; 8];
    file.read_exact(&mut len_bytes)
        .map_err(|_| Error::Parse { offset: 8, msg: "truncated header length".into() })?;
    let header_len = u64::from_le_bytes(len_bytes) as usize;
    let mut header_json = vec![0u8; header_len];
    file.read_exact(&mut header_json)
        .map_err(|_| Error::Parse { offset: 16, msg: "truncated header".into() })?;
    let header: Header = serde_json::from_slice(&header_json)?;

    // The layout rebuilt from the config must agree with the stored index.
    let layout = Layout::build(&header.config)?;
    if layout.metas.len() != header.tensors.len() {
        return Err(Error::Config(format!(
            "checkpoint lists {} tensors, config implies {}",
            header.tensors.len(),
            layout.metas.len()
        )));
    }
    for (meta, entry) in layout.metas.iter().zip(&header.tensors) {
        if meta.name != entry.name || meta.shape != entry.shape {
            return Err(Error::Config(format!(
                "checkpoint tensor {:?} {:?} does not match layout {:?} {:?}",
                entry.name, entry.shape, meta.name, meta.shape
            )));
        }
    }

    let data_offset = 16 + header_len;
    let mut raw = Vec::new();
    file.read_to_end(&mut raw)?;
    if raw.len() != 4 * layout.total_len {
        return Err(Error::Parse {
            offset: data_offset,
            msg: format!(
                "tensor data holds {} bytes, expected {}",
                raw.len(),
                4 * layout.total_len
            ),
        });
    }
    let data: Vec<f64> = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    Ok((ModelParams::from_raw(header.config, data)?, header.step))
}
