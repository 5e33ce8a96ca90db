use std::path::Path;

use hdrfuse::data::{load_scene, save_hdr_native};
use hdrfuse::models::load_params;
use hdrfuse::radiometry::tonemap;
use hdrfuse::training::infer;
use hdrfuse::{Error, PipelineConfig, Result};

fn write_preview(path: &Path, pixels: &ndarray::Array3<f64>, cfg: &PipelineConfig) -> Result<()> {
    let tm = tonemap(&pixels.mapv(|v| v.clamp(0.0, 1.0)), &cfg.radiometry)?;
    let (h, w, _) = tm.dim();
    let mut img = image::RgbImage::new(w as u32, h as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        for c in 0..3 {
            px.0[c] = (tm[[y as usize, x as usize, c]].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    img.save(path).map_err(Error::from)?;
    Ok(())
}

pub fn run(
    ckpt: &Path,
    data: Option<&Path>,
    scene: Option<&Path>,
    out: &Path,
    config: &Path,
) -> Result<()> {
    let cfg = PipelineConfig::load(config)?;
    let model = load_params(ckpt)?;

    let scene_dirs: Vec<std::path::PathBuf> = match (data, scene) {
        (Some(root), None) => hdrfuse::data::list_scene_dirs(root)?,
        (None, Some(dir)) => vec![dir.to_path_buf()],
        _ => {
            return Err(Error::InvalidConfig(
                "provide exactly one of --data or --scene".into(),
            ))
        }
    };
    if scene_dirs.is_empty() {
        return Err(Error::InvalidInput("no scenes to reconstruct".into()));
    }

    std::fs::create_dir_all(out)?;
    for dir in &scene_dirs {
        let scene = load_scene(dir)?;
        let prediction = infer(&model, &scene.frames, &cfg.radiometry)?;
        save_hdr_native(&out.join(format!("{}.shdr", scene.id)), &prediction)?;
        write_preview(&out.join(format!("{}.png", scene.id)), &prediction.pixels, &cfg)?;
    }
    println!("reconstructed {} scenes into {}", scene_dirs.len(), out.display());
    Ok(())
}
