//! Radiance RGBE (.hdr) reader and writer.
//!
//! Decoding follows the shared-exponent convention `value = (m/256)·2^(e-128)`
//! with `e = 0` meaning black. The reader handles flat scanlines plus both
//! run-length encodings (the old `(1,1,1)` repeat marker and the new
//! per-component scanline RLE). The writer emits flat scanlines: RGBE is an
//! import/export format here, the native container is the canonical one.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array3;

use crate::error::Error;
use crate::Result;

/// Decodes one RGBE quadruple.
#[inline]
pub fn decode_rgbe(r: u8, g: u8, b: u8, e: u8) -> [f64; 3] {
    if e == 0 {
        return [0.0, 0.0, 0.0];
    }
    let scale = (e as i32 - 128 - 8) as f64;
    let f = scale.exp2();
    [r as f64 * f, g as f64 * f, b as f64 * f]
}

/// Encodes a pixel into RGBE with round-to-nearest mantissas.
#[inline]
pub fn encode_rgbe(rgb: [f64; 3]) -> [u8; 4] {
    let max = rgb[0].max(rgb[1]).max(rgb[2]);
    if max.is_nan() || max <= 1e-32 {
        return [0, 0, 0, 0];
    }
    // Exponent such that max/2^exp lands in [0.5, 1).
    let exp = max.log2().floor() as i32 + 1;
    let scale = 256.0 * (-exp as f64).exp2();
    let quant = |v: f64| -> u8 { ((v * scale + 0.5).floor() as i64).clamp(0, 255) as u8 };
    let e = exp + 128;
    if !(1..=255).contains(&e) {
        // Out of representable range: darkest exponent for tiny values,
        // saturate for huge ones.
        return if e < 1 { [0, 0, 0, 0] } else { [255, 255, 255, 255] };
    }
    [quant(rgb[0]), quant(rgb[1]), quant(rgb[2]), e as u8]
}

/// Writes an `(H, W, 3)` radiance image as an uncompressed Radiance file.
pub fn write_rgbe(path: &Path, pixels: &Array3<f64>) -> Result<()> {
    let (h, w, c) = pixels.dim();
    if c != 3 {
        return Err(Error::InvalidInput(format!("RGBE writer expects 3 channels, got {c}")));
    }
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y {h} +X {w}\n")?;
    for y in 0..h {
        for x in 0..w {
            let px = encode_rgbe([pixels[[y, x, 0]], pixels[[y, x, 1]], pixels[[y, x, 2]]]);
            out.write_all(&px)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a Radiance file into an `(H, W, 3)` array.
pub fn read_rgbe(path: &Path) -> Result<Array3<f64>> {
    let bad = |reason: String| Error::Format {
        format: "rgbe",
        path: path.to_path_buf(),
        reason,
    };
    let file = File::open(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    let mut r = BufReader::new(file);

    let mut first = String::new();
    r.read_line(&mut first)?;
    if !first.starts_with("#?RADIANCE") && !first.starts_with("#?RGBE") {
        return Err(bad(format!("bad magic line {first:?}")));
    }
    // Header lines until the blank separator.
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(bad("unexpected end of header".into()));
        }
        if line.trim().is_empty() {
            break;
        }
    }
    let mut dims = String::new();
    r.read_line(&mut dims)?;
    let parts: Vec<&str> = dims.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "-Y" || parts[2] != "+X" {
        return Err(bad(format!("unsupported resolution line {dims:?}")));
    }
    let h: usize = parts[1].parse().map_err(|_| bad("bad height".into()))?;
    let w: usize = parts[3].parse().map_err(|_| bad("bad width".into()))?;
    if h == 0 || w == 0 {
        return Err(bad("empty image".into()));
    }

    let mut data = Vec::new();
    r.read_to_end(&mut data)?;
    let mut pos = 0usize;
    let mut out = Array3::zeros((h, w, 3));
    let mut row = vec![[0u8; 4]; w];

    for y in 0..h {
        read_scanline(&data, &mut pos, &mut row, w).map_err(&bad)?;
        for x in 0..w {
            let [rr, gg, bb, ee] = row[x];
            let v = decode_rgbe(rr, gg, bb, ee);
            out[[y, x, 0]] = v[0];
            out[[y, x, 1]] = v[1];
            out[[y, x, 2]] = v[2];
        }
    }
    Ok(out)
}

fn take(data: &[u8], pos: &mut usize, n: usize) -> std::result::Result<(), String> {
    if *pos + n > data.len() {
        return Err("truncated scanline data".into());
    }
    *pos += n;
    Ok(())
}

fn read_scanline(
    data: &[u8],
    pos: &mut usize,
    row: &mut [[u8; 4]],
    w: usize,
) -> std::result::Result<(), String> {
    if *pos + 4 > data.len() {
        return Err("truncated scanline header".into());
    }
    let head = [data[*pos], data[*pos + 1], data[*pos + 2], data[*pos + 3]];

    // New-style RLE: (2, 2, len_hi, len_lo) with per-component runs.
    if head[0] == 2 && head[1] == 2 && (head[2] & 0x80) == 0 {
        let len = ((head[2] as usize) << 8) | head[3] as usize;
        if len == w {
            *pos += 4;
            for comp in 0..4 {
                let mut x = 0usize;
                while x < w {
                    if *pos >= data.len() {
                        return Err("truncated RLE run".into());
                    }
                    let count = data[*pos];
                    *pos += 1;
                    if count > 128 {
                        // Run of a repeated byte.
                        let n = (count - 128) as usize;
                        if x + n > w {
                            return Err("RLE run overflows scanline".into());
                        }
                        let v = *data.get(*pos).ok_or("truncated RLE value")?;
                        *pos += 1;
                        for item in row.iter_mut().skip(x).take(n) {
                            item[comp] = v;
                        }
                        x += n;
                    } else {
                        let n = count as usize;
                        if n == 0 {
                            return Err("zero-length RLE run".into());
                        }
                        if x + n > w {
                            return Err("RLE literal overflows scanline".into());
                        }
                        take(data, pos, n)?;
                        for (k, item) in row.iter_mut().skip(x).take(n).enumerate() {
                            item[comp] = data[*pos - n + k];
                        }
                        x += n;
                    }
                }
            }
            return Ok(());
        }
    }

    // Flat pixels, possibly with old-style (1,1,1) repeat markers.
    let mut x = 0usize;
    let mut shift = 0u32;
    while x < w {
        if *pos + 4 > data.len() {
            return Err("truncated flat scanline".into());
        }
        let px = [data[*pos], data[*pos + 1], data[*pos + 2], data[*pos + 3]];
        *pos += 4;
        if px[0] == 1 && px[1] == 1 && px[2] == 1 {
            if x == 0 {
                return Err("repeat marker with no previous pixel".into());
            }
            let n = (px[3] as usize) << shift;
            if x + n > w {
                return Err("repeat run overflows scanline".into());
            }
            let prev = row[x - 1];
            for item in row.iter_mut().skip(x).take(n) {
                *item = prev;
            }
            x += n;
            shift += 8;
        } else {
            row[x] = px;
            x += 1;
            shift = 0;
        }
    }
    Ok(())
}
