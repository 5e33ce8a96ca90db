//! Versioned binary checkpoints: a fixed header embedding the [`ModelSpec`]
//! followed by the flat little-endian f64 parameter blob. Round trips are
//! bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::Error;
use crate::models::{build_model, Architecture, Model, ModelSpec};
use crate::Result;

const MAGIC: &[u8; 4] = b"HFCK";
const VERSION: u32 = 1;

fn arch_id(a: Architecture) -> u32 {
    match a {
        Architecture::AttentionMergeCnn => 0,
    }
}

fn arch_from_id(id: u32, path: &Path) -> Result<Architecture> {
    match id {
        0 => Ok(Architecture::AttentionMergeCnn),
        other => Err(Error::Format {
            format: "checkpoint",
            path: path.to_path_buf(),
            reason: format!("unknown architecture id {other}"),
        }),
    }
}

/// Writes the model's spec and parameters to `path`.
pub fn save_params(model: &Model, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&arch_id(model.spec.architecture).to_le_bytes())?;
    w.write_all(&(model.spec.base_width as u32).to_le_bytes())?;
    w.write_all(&(model.spec.blocks as u32).to_le_bytes())?;
    w.write_all(&[model.spec.attention as u8, 0, 0, 0])?;
    w.write_all(&model.spec.param_seed.to_le_bytes())?;
    let params = model.params_flat();
    w.write_all(&(params.len() as u64).to_le_bytes())?;
    for v in params {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint, rebuilding the model described by its embedded spec.
pub fn load_params(path: &Path) -> Result<Model> {
    let bad = |reason: String| Error::Format {
        format: "checkpoint",
        path: path.to_path_buf(),
        reason,
    };
    let mut r = BufReader::new(File::open(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let architecture = arch_from_id(u32::from_le_bytes(u32buf), path)?;
    r.read_exact(&mut u32buf)?;
    let base_width = u32::from_le_bytes(u32buf) as usize;
    r.read_exact(&mut u32buf)?;
    let blocks = u32::from_le_bytes(u32buf) as usize;
    let mut flags = [0u8; 4];
    r.read_exact(&mut flags)?;
    let attention = flags[0] != 0;
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)?;
    let param_seed = u64::from_le_bytes(u64buf);
    r.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf) as usize;

    let spec = ModelSpec {
        architecture,
        base_width,
        blocks,
        attention,
        param_seed,
    };
    let mut model = build_model(&spec)?;
    if count != model.param_count() {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint declares {count} parameters but spec {spec:?} needs {}",
            model.param_count()
        )));
    }
    let mut params = vec![0.0f64; count];
    let mut f64buf = [0u8; 8];
    for p in &mut params {
        r.read_exact(&mut f64buf).map_err(|_| bad("truncated parameter blob".into()))?;
        *p = f64::from_le_bytes(f64buf);
    }
    model.set_params_flat(&params)?;
    Ok(model)
}

/// Loads a checkpoint and rejects it unless its embedded spec matches
/// `expected` exactly.
pub fn load_params_expecting(path: &Path, expected: &ModelSpec) -> Result<Model> {
    let model = load_params(path)?;
    if model.spec != *expected {
        return Err(Error::CheckpointMismatch(format!(
            "checkpoint spec {:?} does not match expected {:?}",
            model.spec, expected
        )));
    }
    Ok(model)
}
