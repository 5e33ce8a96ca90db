//! Scene-directory ingestion and export.
//!
//! Layout: `scene_xxx/{ldr_1,ldr_2,ldr_3}.png|tif`, an `exposures.txt` with
//! whitespace-separated exposure values, and optionally `gt.shdr` (native)
//! or `gt.hdr` (Radiance RGBE).

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use crate::data::{rgbe, shdr};
use crate::error::Error;
use crate::image::{ExposureImage, HdrImage, HdrRole};
use crate::Result;

/// A multi-exposure triplet ordered by increasing ev, with optional ground
/// truth for evaluation.
#[derive(Debug, Clone)]
pub struct Scene {
    pub id: String,
    pub frames: [ExposureImage; 3],
    pub gt: Option<HdrImage>,
}

impl Scene {
    pub fn spatial_shape(&self) -> (usize, usize) {
        let (h, w, _) = self.frames[0].shape();
        (h, w)
    }
}

const LDR_EXTENSIONS: [&str; 3] = ["png", "tif", "tiff"];

fn find_ldr(dir: &Path, index: usize) -> Result<PathBuf> {
    for ext in LDR_EXTENSIONS {
        let p = dir.join(format!("ldr_{index}.{ext}"));
        if p.exists() {
            return Ok(p);
        }
    }
    Err(Error::MissingFile(dir.join(format!("ldr_{index}.png"))))
}

fn load_ldr(path: &Path) -> Result<(Array3<f64>, u8)> {
    let img = image::open(path)?;
    let bit_depth = match img.color() {
        image::ColorType::L16 | image::ColorType::La16 | image::ColorType::Rgb16
        | image::ColorType::Rgba16 => 16,
        _ => 8,
    };
    // 8-bit samples scale exactly onto 16 bits (k·257/65535 = k/255).
    let rgb = img.to_rgb16();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut out = Array3::zeros((h, w, 3));
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            out[[y as usize, x as usize, c]] = px.0[c] as f64 / 65535.0;
        }
    }
    Ok((out, bit_depth))
}

fn parse_exposures(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.to_path_buf()))?;
    let mut evs = Vec::new();
    for token in text.split_whitespace() {
        // Tolerate U+2212 minus signs from copied tables.
        let cleaned = token.replace('\u{2212}', "-");
        let v: f64 = cleaned.parse().map_err(|_| Error::Format {
            format: "exposures",
            path: path.to_path_buf(),
            reason: format!("cannot parse {token:?} as a number"),
        })?;
        evs.push(v);
    }
    Ok(evs)
}

/// Loads a scene directory, normalizing frames to `[0,1]` and ordering them
/// by exposure value.
pub fn load_scene(dir: &Path) -> Result<Scene> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let evs = parse_exposures(&dir.join("exposures.txt"))?;
    if evs.len() != 3 {
        return Err(Error::Format {
            format: "exposures",
            path: dir.join("exposures.txt"),
            reason: format!("expected 3 exposure values, got {}", evs.len()),
        });
    }

    let mut frames = Vec::with_capacity(3);
    for i in 1..=3 {
        let path = find_ldr(dir, i)?;
        let (pixels, bit_depth) = load_ldr(&path)?;
        frames.push(ExposureImage::new(pixels, evs[i - 1], bit_depth)?);
    }
    frames.sort_by(|a, b| a.ev.partial_cmp(&b.ev).expect("finite evs"));
    if !(frames[0].ev < frames[1].ev && frames[1].ev < frames[2].ev) {
        return Err(Error::Format {
            format: "exposures",
            path: dir.join("exposures.txt"),
            reason: format!(
                "exposure values must be strictly increasing, got ({}, {}, {})",
                frames[0].ev, frames[1].ev, frames[2].ev
            ),
        });
    }
    let shape = frames[0].shape();
    for f in &frames[1..] {
        if f.shape() != shape {
            return Err(Error::ShapeMismatch {
                context: "load_scene",
                expected: shape,
                got: f.shape(),
            });
        }
    }

    let gt = {
        let native = dir.join("gt.shdr");
        let radiance = dir.join("gt.hdr");
        if native.exists() {
            Some(shdr::load_hdr_native(&native, HdrRole::GroundTruth)?)
        } else if radiance.exists() {
            let px = rgbe::read_rgbe(&radiance)?.mapv(|v| v.clamp(0.0, 1.0));
            Some(HdrImage::new(px, HdrRole::GroundTruth)?)
        } else {
            None
        }
    };

    let id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scene".into());
    Ok(Scene {
        id,
        frames: frames.try_into().expect("three frames"),
        gt,
    })
}

fn quantize_to_png(pixels: &Array3<f64>, bit_depth: u8, path: &Path) -> Result<()> {
    let (h, w, _) = pixels.dim();
    match bit_depth {
        8 => {
            let mut img = image::RgbImage::new(w as u32, h as u32);
            for (x, y, px) in img.enumerate_pixels_mut() {
                for c in 0..3 {
                    px.0[c] =
                        (pixels[[y as usize, x as usize, c]].clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
            img.save(path)?;
        }
        16 => {
            let mut img = image::ImageBuffer::<image::Rgb<u16>, Vec<u16>>::new(w as u32, h as u32);
            for (x, y, px) in img.enumerate_pixels_mut() {
                for c in 0..3 {
                    px.0[c] = (pixels[[y as usize, x as usize, c]].clamp(0.0, 1.0) * 65535.0)
                        .round() as u16;
                }
            }
            img.save(path)?;
        }
        other => {
            return Err(Error::InvalidInput(format!("unsupported bit depth {other}")));
        }
    }
    Ok(())
}

/// Writes a scene directory in the layout [`load_scene`] expects.
pub fn save_scene(dir: &Path, scene: &Scene) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut evs = String::new();
    for (i, frame) in scene.frames.iter().enumerate() {
        quantize_to_png(&frame.pixels, frame.bit_depth, &dir.join(format!("ldr_{}.png", i + 1)))?;
        evs.push_str(&format!("{}\n", frame.ev));
    }
    fs::write(dir.join("exposures.txt"), evs)?;
    if let Some(gt) = &scene.gt {
        shdr::save_hdr_native(&dir.join("gt.shdr"), gt)?;
    }
    Ok(())
}

/// Lists scene subdirectories (sorted by name) under a dataset root.
pub fn list_scene_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    if !root.is_dir() {
        return Err(Error::MissingFile(root.to_path_buf()));
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("exposures.txt").exists())
        .collect();
    dirs.sort();
    Ok(dirs)
}
