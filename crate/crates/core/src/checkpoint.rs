//! Model checkpoints: binary save/load with exact f64 round-trip.
//!
//! Layout: an 8-byte magic, a format version, a length-prefixed JSON header
//! (configuration, epochs completed, loss history), then raw little-endian
//! f64 blobs in a fixed order: per chain member its parameter buffers, its
//! normalization running statistics, and its optimizer moments. Loading
//! rebuilds the model from the header configuration and overwrites every
//! buffer, so a reloaded model trains and simulates bit-identically to the
//! original.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rcnn::{EpochLoss, RCNNConfig, RCNNModel};

const MAGIC: &[u8; 8] = b"RCNMODEL";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: RCNNConfig,
    trained_epochs: usize,
    loss_log: Vec<EpochLoss>,
}

fn ck_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

fn write_f64s<W: Write>(w: &mut W, buf: &[f64]) -> std::io::Result<()> {
    w.write_u64::<LittleEndian>(buf.len() as u64)?;
    for &v in buf {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_f64s_into<R: Read>(r: &mut R, path: &Path, name: &str, buf: &mut [f64]) -> Result<()> {
    let len = r
        .read_u64::<LittleEndian>()
        .map_err(|e| Error::io(path, e))? as usize;
    if len != buf.len() {
        return Err(ck_err(
            path,
            format!("buffer {name}: stored {len} values, model expects {}", buf.len()),
        ));
    }
    for v in buf.iter_mut() {
        *v = r.read_f64::<LittleEndian>().map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Write a model checkpoint to `path`.
pub fn save_model(path: &Path, model: &RCNNModel) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);

    w.write_all(MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(VERSION).map_err(io)?;
    let header = Header {
        config: model.config.clone(),
        trained_epochs: model.trained_epochs,
        loss_log: model.loss_log.clone(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| ck_err(path, format!("header encoding failed: {e}")))?;
    w.write_u64::<LittleEndian>(header_json.len() as u64)
        .map_err(io)?;
    w.write_all(&header_json).map_err(io)?;

    for (stack, opt) in model.chain.iter().zip(&model.optimizers) {
        for (_, buf) in stack.param_buffers() {
            write_f64s(&mut w, buf).map_err(io)?;
        }
        for (_, buf) in stack.state_buffers() {
            write_f64s(&mut w, buf).map_err(io)?;
        }
        for state in opt.states() {
            w.write_u64::<LittleEndian>(state.t).map_err(io)?;
            write_f64s(&mut w, &state.m).map_err(io)?;
            write_f64s(&mut w, &state.v).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Read a model checkpoint written by [`save_model`].
pub fn load_model(path: &Path) -> Result<RCNNModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(path, e);

    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(ck_err(path, "not a model checkpoint (bad magic)"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != VERSION {
        return Err(ck_err(path, format!("unsupported format version {version}")));
    }
    let header_len = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    if header_len > 64 << 20 {
        return Err(ck_err(path, format!("implausible header size {header_len}")));
    }
    let mut header_json = vec![0u8; header_len];
    r.read_exact(&mut header_json).map_err(io)?;
    let header: Header = serde_json::from_slice(&header_json)
        .map_err(|e| ck_err(path, format!("header decoding failed: {e}")))?;

    let mut model = RCNNModel::new(header.config)?;
    model.trained_epochs = header.trained_epochs;
    model.loss_log = header.loss_log;

    for i in 0..model.chain.len() {
        for (name, buf) in model.chain[i].param_buffers_mut() {
            read_f64s_into(&mut r, path, &name, buf)?;
        }
        for (name, buf) in model.chain[i].state_buffers_mut() {
            read_f64s_into(&mut r, path, &name, buf)?;
        }
        for (s, state) in model.optimizers[i].states_mut().iter_mut().enumerate() {
            state.t = r.read_u64::<LittleEndian>().map_err(io)?;
            read_f64s_into(&mut r, path, &format!("adam[{s}].m"), &mut state.m)?;
            read_f64s_into(&mut r, path, &format!("adam[{s}].v"), &mut state.v)?;
        }
    }
    let mut trailing = [0u8; 1];
    match r.read(&mut trailing).map_err(io)? {
        0 => Ok(model),
        _ => Err(ck_err(path, "trailing bytes after model data")),
    }
}
