//! Binary checkpoint: header followed by little-endian f64 parameters,
//! layer by layer, weights (row-major) then bias.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use sha2::{Digest, Sha256};

use super::mlp::{Layer, ModelParams, Task};
use super::train::TrainConfig;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// First 8 bytes of the SHA-256 of the canonical training configuration.
pub fn config_hash(cfg: &TrainConfig) -> [u8; 8] {
    let digest = Sha256::digest(cfg.canonical().as_bytes());
    let mut out = [0u8; 8];
    out.copy_from_slice(&digest[..8]);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub config_hash: [u8; 8],
}

pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParams, hash: [u8; 8]) -> Result<()> {
    params.check_shapes()?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&[match params.task {
        Task::Classification => 0u8,
        Task::Localization => 1u8,
    }])?;
    w.write_all(&(params.sizes.len() as u32).to_le_bytes())?;
    for &s in &params.sizes {
        w.write_all(&(s as u64).to_le_bytes())?;
    }
    w.write_all(&params.seed.to_le_bytes())?;
    w.write_all(&hash)?;
    for l in &params.layers {
        for v in l.weights.iter().chain(l.bias.iter()) {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated checkpoint".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    (0..n).map(|_| Ok(f64::from_le_bytes(read_array(r)?))).collect()
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Checkpoint> {
    if &read_array::<4, _>(&mut r)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let task = match read_array::<1, _>(&mut r)?[0] {
        0 => Task::Classification,
        1 => Task::Localization,
        t => return Err(Error::Format(format!("unknown task tag {t}"))),
    };
    let n_sizes = u32::from_le_bytes(read_array(&mut r)?) as usize;
    if !(2..=64).contains(&n_sizes) {
        return Err(Error::Format(format!("implausible layer count {n_sizes}")));
    }
    let sizes = (0..n_sizes)
        .map(|_| Ok(u64::from_le_bytes(read_array(&mut r)?) as usize))
        .collect::<Result<Vec<_>>>()?;
    let seed = u64::from_le_bytes(read_array(&mut r)?);
    let config_hash = read_array::<8, _>(&mut r)?;
    let mut layers = Vec::with_capacity(n_sizes - 1);
    for pair in sizes.windows(2) {
        let (fi, fo) = (pair[0], pair[1]);
        let w = read_f64s(&mut r, fi * fo)?;
        let b = read_f64s(&mut r, fo)?;
        layers.push(Layer {
            weights: Array2::from_shape_vec((fi, fo), w)
                .map_err(|e| Error::Format(e.to_string()))?,
            bias: Array1::from(b),
        });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let params = ModelParams {
        task,
        sizes,
        layers,
        seed,
    };
    params
        .check_shapes()
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(Checkpoint {
        params,
        config_hash,
    })
}

pub fn save_checkpoint(path: &Path, params: &ModelParams, hash: [u8; 8]) -> Result<()> {
    write_checkpoint(BufWriter::new(File::create(path)?), params, hash)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    read_checkpoint(BufReader::new(File::open(path)?))
}
