use std::path::Path;

use hdrfuse::data::list_scene_dirs;
use hdrfuse::models::save_params;
use hdrfuse::training::{train_reconstruction_phase, train_structure_phase};
use hdrfuse::{Error, PipelineConfig, Result};

use super::supervision::load_training_sample;

pub fn run(
    phase: &str,
    data: &Path,
    supervision: &Path,
    config: &Path,
    out: &Path,
    val_data: Option<&Path>,
    seed_override: Option<u64>,
) -> Result<()> {
    let cfg = PipelineConfig::load(config)?;
    let mut train_cfg = cfg.train_config();
    if let Some(seed) = seed_override {
        train_cfg.seed = seed;
    }

    let scene_dirs = list_scene_dirs(data)?;
    if scene_dirs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no scene directories under {}",
            data.display()
        )));
    }
    let mut samples = scene_dirs
        .iter()
        .map(|d| load_training_sample(d, supervision, &cfg))
        .collect::<Result<Vec<_>>>()?;

    let validation = val_data.map(super::load_dataset).transpose()?;

    let (model, mut report) = match phase {
        "structure" => {
            train_structure_phase(&samples, validation.as_deref(), &cfg.model, &train_cfg)?
        }
        "recon" => {
            if samples.iter().any(|s| s.y_stru.is_none()) {
                return Err(Error::InvalidInput(
                    "supervision directory lacks structure components; \
                     run build-supervision --with-structure first"
                        .into(),
                ));
            }
            train_reconstruction_phase(
                &mut samples,
                None,
                validation.as_deref(),
                &cfg.model,
                &train_cfg,
            )?
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown phase {other:?} (expected structure|recon)"
            )))
        }
    };

    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_params(&model, out)?;
    report.checkpoint = Some(out.to_path_buf());
    let report_path = out.with_extension("report.json");
    std::fs::write(&report_path, serde_json::to_string_pretty(&report).map_err(Error::from)?)?;

    println!(
        "{phase} phase: {} epochs, objective {:.5} -> {:.5}, wall {:.1}s",
        report.epochs,
        report.loss_curve.first().unwrap_or(&f64::NAN),
        report.loss_curve.last().unwrap_or(&f64::NAN),
        report.wall_time_seconds
    );
    if let Some(p) = report.final_psnr_u {
        println!("validation psnr-u: {p:.2} dB");
    }
    println!("checkpoint: {}", out.display());
    println!("report: {}", report_path.display());
    Ok(())
}
