//! Native float container: `SHDR` magic, version, dims, then row-major
//! little-endian f32 payload. The canonical interchange format for HDR
//! images, masks and aligned tensors; round trips are bit-exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;

use crate::error::Error;
use crate::image::{HdrImage, HdrRole};
use crate::Result;

const MAGIC: &[u8; 4] = b"SHDR";
const VERSION: u32 = 1;

/// Writes any `(H, W, C)` array as f32.
pub fn write_array(path: &Path, data: &Array3<f64>) -> Result<()> {
    let (h, w, c) = data.dim();
    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(h as u32).to_le_bytes())?;
    out.write_all(&(w as u32).to_le_bytes())?;
    out.write_all(&(c as u32).to_le_bytes())?;
    for &v in data.iter() {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

/// Reads an `(H, W, C)` array written by [`write_array`].
pub fn read_array(path: &Path) -> Result<Array3<f64>> {
    let bad = |reason: String| Error::Format {
        format: "shdr",
        path: path.to_path_buf(),
        reason,
    };
    let mut r =
        BufReader::new(File::open(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| bad("truncated header".into()))?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:?}")));
    }
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    let version = u32::from_le_bytes(buf);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    r.read_exact(&mut buf)?;
    let h = u32::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf)?;
    let w = u32::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf)?;
    let c = u32::from_le_bytes(buf) as usize;
    if h == 0 || w == 0 || c == 0 || h.saturating_mul(w).saturating_mul(c) > (1 << 31) {
        return Err(bad(format!("implausible dims {h}x{w}x{c}")));
    }
    let mut values = Vec::with_capacity(h * w * c);
    for _ in 0..h * w * c {
        r.read_exact(&mut buf).map_err(|_| bad("truncated payload".into()))?;
        values.push(f32::from_le_bytes(buf) as f64);
    }
    Array3::from_shape_vec((h, w, c), values).map_err(|e| bad(e.to_string()))
}

/// Saves an HDR image in the native container.
pub fn save_hdr_native(path: &Path, hdr: &HdrImage) -> Result<()> {
    write_array(path, &hdr.pixels)
}

/// Loads an HDR image from the native container, assigning `role`.
pub fn load_hdr_native(path: &Path, role: HdrRole) -> Result<HdrImage> {
    HdrImage::new(read_array(path)?, role)
}
