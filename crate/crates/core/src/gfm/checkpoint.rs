//! Checkpoint format: `GFM1` | u64 header length | JSON header | f32 blocks.
//!
//! The header carries `{layers, dim, seed, blocks: [{name, len}]}`; block data
//! follows in the same order, little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GfmError, GfmParams, Result};
use crate::numerics::ParamBlocks;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GFM1";

#[derive(Serialize, Deserialize)]
struct BlockEntry {
    name: String,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    layers: usize,
    dim: usize,
    seed: u64,
    blocks: Vec<BlockEntry>,
}

pub fn write_checkpoint(params: &GfmParams<f32>, w: &mut impl Write) -> Result<()> {
    let header = Header {
        layers: params.layers,
        dim: params.dim,
        seed: params.seed,
        blocks: params
            .block_names()
            .into_iter()
            .zip(params.blocks())
            .map(|(name, b)| BlockEntry { name, len: b.len() })
            .collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| GfmError::Format(e.to_string()))?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for b in params.blocks() {
        for x in b {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<GfmParams<f32>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(GfmError::Format("bad magic".into()));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    if len > 1 << 30 {
        return Err(GfmError::Format(format!("header length {len} is implausible")));
    }
    let mut json = vec![0u8; len];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| GfmError::Format(e.to_string()))?;
    let mut params = GfmParams::<f32>::new(header.layers, header.dim, header.seed)?;
    let names = params.block_names();
    if names.len() != header.blocks.len() {
        return Err(GfmError::Format(format!(
            "{} blocks in header, layout needs {}",
            header.blocks.len(),
            names.len()
        )));
    }
    for ((name, entry), block) in names.iter().zip(&header.blocks).zip(params.blocks_mut()) {
        if *name != entry.name || block.len() != entry.len {
            return Err(GfmError::Format(format!("block {} does not match layout ({name})", entry.name)));
        }
        let mut buf = vec![0u8; 4 * block.len()];
        r.read_exact(&mut buf)?;
        for (x, c) in block.iter_mut().zip(buf.chunks_exact(4)) {
            *x = f32::from_le_bytes(c.try_into().expect("4-byte chunk"));
        }
    }
    Ok(params)
}

pub fn save_checkpoint(params: &GfmParams<f32>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(params, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<GfmParams<f32>> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

/// Loads a checkpoint and rejects it unless it has exactly `layers` layers of width `dim`.
pub fn load_checkpoint_expecting(path: &Path, layers: usize, dim: usize) -> Result<GfmParams<f32>> {
    let params = load_checkpoint(path)?;
    if params.layers != layers || params.dim != dim {
        return Err(GfmError::CheckpointMismatch {
            layers,
            dim,
            got_layers: params.layers,
            got_dim: params.dim,
        });
    }
    Ok(params)
}
