use std::path::Path;

use hdrfuse::data::{list_scene_dirs, load_hdr_native, load_scene};
use hdrfuse::image::HdrRole;
use hdrfuse::metrics::{evaluate_pair, MetricReport};
use hdrfuse::{Error, PipelineConfig, Result};

pub fn run(data: &Path, pred: &Path, out: &Path, config: &Path, label: &str) -> Result<()> {
    let cfg = PipelineConfig::load(config)?;
    let scene_dirs = list_scene_dirs(data)?;
    if scene_dirs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no scene directories under {}",
            data.display()
        )));
    }

    let mut per_scene = Vec::new();
    for dir in &scene_dirs {
        let scene = load_scene(dir)?;
        let gt = scene.gt.as_ref().ok_or_else(|| {
            Error::InvalidInput(format!("scene {} has no ground truth", scene.id))
        })?;
        let pred_path = pred.join(format!("{}.shdr", scene.id));
        let prediction = load_hdr_native(&pred_path, HdrRole::Prediction)?;
        let values = evaluate_pair(&prediction.pixels, &gt.pixels, &cfg.radiometry)?;
        per_scene.push((scene.id.clone(), values));
    }

    let report = MetricReport::from_scenes(per_scene)?;
    std::fs::write(out, serde_json::to_string_pretty(&report).map_err(Error::from)?)?;

    println!(
        "{:<24} {:>14} {:>14} {:>9}",
        "method", "PSNR-u/SSIM-u", "PSNR-l/SSIM-l", "HDR-VDP-2"
    );
    println!("{}", report.table_row(label));
    println!("report: {}", out.display());
    Ok(())
}
