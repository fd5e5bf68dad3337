//! Little-endian checkpoint:
//! `"FLHBCKPT" | version u32 | spec digest [32] | P u64 | P x f64
//!  | state length u64 | state f64s`.
//!
//! The trailing state block carries running normalization statistics,
//! which are not learnable but are needed for evaluation.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{ModelState, Network, ParamSet};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FLHBCKPT";
pub const VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(net: &Network, params: &ParamSet, state: &ModelState, mut w: W) -> Result<()> {
    if params.len() != net.param_count() || state.running.len() != net.state_len() {
        return Err(Error::Dimension("checkpoint does not match its network".into()));
    }
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;
    w.write_all(&net.spec().digest())?;
    w.write_u64::<LittleEndian>(params.len() as u64)?;
    for &v in &params.values {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.write_u64::<LittleEndian>(state.running.len() as u64)?;
    for &v in &state.running {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.flush()?;
    Ok(())
}

fn eof(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("checkpoint is truncated".into())
    } else {
        Error::Io(e)
    }
}

/// Reads only the spec digest, for picking which network a file belongs to.
pub fn peek_digest<R: Read>(mut r: R) -> Result<[u8; 32]> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(eof)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = r.read_u32::<LittleEndian>().map_err(eof)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let mut digest = [0u8; 32];
    r.read_exact(&mut digest).map_err(eof)?;
    Ok(digest)
}

pub fn read_checkpoint<R: Read>(net: &Network, mut r: R) -> Result<(ParamSet, ModelState)> {
    let digest = peek_digest(&mut r)?;
    if digest != net.spec().digest() {
        return Err(Error::Format("checkpoint was written for a different model spec".into()));
    }
    let p = r.read_u64::<LittleEndian>().map_err(eof)? as usize;
    if p != net.param_count() {
        return Err(Error::Format(format!(
            "checkpoint holds {p} parameters, network has {}",
            net.param_count()
        )));
    }
    let mut params = ParamSet::zeros(net.layout());
    r.read_f64_into::<LittleEndian>(&mut params.values).map_err(eof)?;
    let s = r.read_u64::<LittleEndian>().map_err(eof)? as usize;
    if s != net.state_len() {
        return Err(Error::Format(format!("checkpoint holds {s} state values, network has {}", net.state_len())));
    }
    let mut running = vec![0.0; s];
    r.read_f64_into::<LittleEndian>(&mut running).map_err(eof)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    if params.values.iter().chain(&running).any(|v| !v.is_finite()) {
        return Err(Error::Format("checkpoint contains non-finite values".into()));
    }
    Ok((params, ModelState { running }))
}

pub fn save(net: &Network, params: &ParamSet, state: &ModelState, path: &Path) -> Result<()> {
    write_checkpoint(net, params, state, BufWriter::new(File::create(path)?))
}

pub fn load(net: &Network, path: &Path) -> Result<(ParamSet, ModelState)> {
    read_checkpoint(net, BufReader::new(File::open(path)?))
}
