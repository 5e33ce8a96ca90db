use std::path::Path;

use hdrfuse::data::{load_scene, read_array, write_array};
use hdrfuse::image::{HdrImage, HdrRole, Mask};
use hdrfuse::models::load_params;
use hdrfuse::supervision::{build_structure_component, mask_color};
use hdrfuse::training::prepare_sample;
use hdrfuse::{AlignedStack, Error, ExposureImage, FlowField, LinearImage, PipelineConfig, Result};

/// File names of the per-scene supervision artifacts.
pub const Y_COLOR: &str = "y_color.shdr";
pub const M_SP: &str = "m_sp.shdr";
pub const M_SE: &str = "m_se.shdr";
pub const ALIGNED_I1: &str = "aligned_i1.shdr";
pub const ALIGNED_H1: &str = "aligned_h1.shdr";
pub const ALIGNED_I3: &str = "aligned_i3.shdr";
pub const ALIGNED_H3: &str = "aligned_h3.shdr";
pub const FLOW_1: &str = "flow_1.shdr";
pub const FLOW_3: &str = "flow_3.shdr";
pub const Y_STRU: &str = "y_stru.shdr";
pub const M_COLOR: &str = "m_color.shdr";

fn write_mask_viz(path: &Path, mask: &ndarray::Array3<f64>) -> Result<()> {
    let (h, w, c) = mask.dim();
    let mut img = image::GrayImage::new(w as u32, h as u32);
    for (x, y, px) in img.enumerate_pixels_mut() {
        let mean: f64 =
            (0..c).map(|ch| mask[[y as usize, x as usize, ch]]).sum::<f64>() / c as f64;
        px.0[0] = (mean.clamp(0.0, 1.0) * 255.0).round() as u8;
    }
    img.save(path).map_err(Error::from)?;
    Ok(())
}

pub fn run(
    data: &Path,
    out: &Path,
    config: &Path,
    with_structure: Option<&Path>,
    viz: bool,
) -> Result<()> {
    let cfg = PipelineConfig::load(config)?;
    let structure_model = with_structure.map(load_params).transpose()?;
    let scene_dirs = hdrfuse::data::list_scene_dirs(data)?;
    if scene_dirs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no scene directories under {}",
            data.display()
        )));
    }

    for dir in &scene_dirs {
        let scene = load_scene(dir)?;
        let sample = prepare_sample(&scene, &cfg.flow, &cfg.radiometry, &cfg.thresholds)?;
        let scene_out = out.join(&scene.id);
        std::fs::create_dir_all(&scene_out)?;

        write_array(&scene_out.join(Y_COLOR), &sample.y_color.pixels)?;
        write_array(&scene_out.join(M_SP), &sample.m_sp.values)?;
        write_array(&scene_out.join(M_SE), &sample.m_se.values)?;
        write_array(&scene_out.join(ALIGNED_I1), &sample.aligned.i1.pixels)?;
        write_array(&scene_out.join(ALIGNED_H1), &sample.aligned.h1.pixels)?;
        write_array(&scene_out.join(ALIGNED_I3), &sample.aligned.i3.pixels)?;
        write_array(&scene_out.join(ALIGNED_H3), &sample.aligned.h3.pixels)?;
        write_array(&scene_out.join(FLOW_1), &sample.aligned.flow_to_1.vectors)?;
        write_array(&scene_out.join(FLOW_3), &sample.aligned.flow_to_3.vectors)?;

        if viz {
            write_mask_viz(&scene_out.join("m_sp.png"), &sample.m_sp.values)?;
            write_mask_viz(&scene_out.join("m_se.png"), &sample.m_se.values)?;
        }

        if let Some(model) = &structure_model {
            let y_stru = build_structure_component(model, &sample.aligned)?;
            let m_color = mask_color(&sample.y_color, &y_stru, &cfg.radiometry, &cfg.thresholds)?;
            write_array(&scene_out.join(Y_STRU), &y_stru.pixels)?;
            write_array(&scene_out.join(M_COLOR), &m_color.values)?;
            if viz {
                write_mask_viz(&scene_out.join("m_color.png"), &m_color.values)?;
            }
        }
    }
    println!(
        "built supervision for {} scenes in {}",
        scene_dirs.len(),
        out.display()
    );
    Ok(())
}

/// Reassembles a [`hdrfuse::TrainingSample`] from a scene directory and its
/// persisted supervision artifacts.
pub fn load_training_sample(
    scene_dir: &Path,
    supervision_root: &Path,
    cfg: &PipelineConfig,
) -> Result<hdrfuse::TrainingSample> {
    let scene = load_scene(scene_dir)?;
    let sup = supervision_root.join(&scene.id);
    if !sup.is_dir() {
        return Err(Error::MissingFile(sup));
    }
    let reference_ev = scene.frames[1].ev;
    let rad = &cfg.radiometry;

    let linear = [
        hdrfuse::radiometry::linearize(&scene.frames[0], reference_ev, rad)?,
        hdrfuse::radiometry::linearize(&scene.frames[1], reference_ev, rad)?,
        hdrfuse::radiometry::linearize(&scene.frames[2], reference_ev, rad)?,
    ];

    let clamp01 = |a: ndarray::Array3<f64>| a.mapv(|v| v.clamp(0.0, 1.0));
    let aligned = AlignedStack {
        h1: LinearImage::new(read_array(&sup.join(ALIGNED_H1))?.mapv(|v| v.max(0.0)), reference_ev)?,
        h2: linear[1].clone(),
        h3: LinearImage::new(read_array(&sup.join(ALIGNED_H3))?.mapv(|v| v.max(0.0)), reference_ev)?,
        i1: ExposureImage::new(clamp01(read_array(&sup.join(ALIGNED_I1))?), scene.frames[0].ev, scene.frames[0].bit_depth)?,
        i2: scene.frames[1].clone(),
        i3: ExposureImage::new(clamp01(read_array(&sup.join(ALIGNED_I3))?), scene.frames[2].ev, scene.frames[2].bit_depth)?,
        flow_to_1: FlowField { vectors: read_array(&sup.join(FLOW_1))? },
        flow_to_3: FlowField { vectors: read_array(&sup.join(FLOW_3))? },
    };

    let y_stru = {
        let p = sup.join(Y_STRU);
        if p.exists() {
            Some(HdrImage::new(clamp01(read_array(&p)?), HdrRole::StructureComponent)?)
        } else {
            None
        }
    };
    let m_color = {
        let p = sup.join(M_COLOR);
        if p.exists() {
            Some(Mask::new(clamp01(read_array(&p)?))?)
        } else {
            None
        }
    };

    Ok(hdrfuse::TrainingSample {
        id: scene.id.clone(),
        frames: scene.frames,
        linear,
        aligned,
        y_color: HdrImage::new(clamp01(read_array(&sup.join(Y_COLOR))?), HdrRole::ColorComponent)?,
        m_sp: Mask::new(clamp01(read_array(&sup.join(M_SP))?))?,
        m_se: Mask::new(clamp01(read_array(&sup.join(M_SE))?))?,
        y_stru,
        m_color,
    })
}
