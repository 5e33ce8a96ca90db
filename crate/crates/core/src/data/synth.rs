//! Synthetic-scene generator with exact ground truth.
//!
//! A seeded radiance field combines smooth gradients, a bright blob, a
//! highlight band, a deep-shadow band, a checkerboard patch and broadband
//! texture, so that saturation, near-black and well-textured regions all have
//! non-trivial support. Frames are rendered by exposing, gamma-encoding and
//! quantizing the field; motion is applied to frames 1 and 3 only, and the
//! true displacement fields are retained for oracle tests.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignment::FlowField;
use crate::data::scene::Scene;
use crate::error::Error;
use crate::filters;
use crate::image::{ExposureImage, HdrImage, HdrRole};
use crate::radiometry::RadiometryConfig;
use crate::Result;

/// Scene motion applied between the exposures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum MotionModel {
    /// Static scene.
    None,
    /// The whole field moves: frame 1 sees content shifted by `(dx, dy)`,
    /// frame 3 by `(-dx, -dy)`.
    GlobalShift { dx: i32, dy: i32 },
    /// A textured rectangle moves by `(dx, dy)` per frame step over a static
    /// background.
    MovingRect { dx: i32, dy: i32 },
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// Generator parameters. Displacements are capped at 10 px.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SyntheticSpec {
    /// Square image side in pixels.
    pub size: usize,
    pub evs: [f64; 3],
    pub motion: MotionModel,
    pub bit_depth: u8,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            size: 64,
            evs: [-2.0, 0.0, 2.0],
            motion: MotionModel::None,
            bit_depth: 8,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::InvalidConfig("synthetic size must be >= 16".into()));
        }
        if !(self.evs[0] < self.evs[1] && self.evs[1] < self.evs[2]) {
            return Err(Error::InvalidConfig("evs must be strictly increasing".into()));
        }
        let (dx, dy) = match self.motion {
            MotionModel::None => (0, 0),
            MotionModel::GlobalShift { dx, dy } | MotionModel::MovingRect { dx, dy } => (dx, dy),
        };
        if dx.abs() > 10 || dy.abs() > 10 {
            return Err(Error::InvalidConfig(format!(
                "displacement ({dx},{dy}) exceeds the 10 px desk-scale cap"
            )));
        }
        Ok(())
    }
}

/// A generated scene plus everything an oracle test needs: per-frame true
/// flow (from the reference to each neighbor) and the motion support.
#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub scene: Scene,
    pub flow_to_1: FlowField,
    pub flow_to_3: FlowField,
    /// Pixels whose content differs across frames (moving-rect model only).
    pub motion_region: Option<Array2<bool>>,
}

/// Sidecar describing the motion applied to an exported scene directory.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MotionSidecar {
    pub motion: MotionModel,
    /// Rectangle at the reference frame, for the moving-rect model.
    pub rect: Option<Rect>,
}

impl MotionSidecar {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|_| Error::MissingFile(path.to_path_buf()))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Union of the rect's positions across the three frames.
    pub fn motion_region(&self, h: usize, w: usize) -> Option<Array2<bool>> {
        let rect = self.rect?;
        let (dx, dy) = match self.motion {
            MotionModel::MovingRect { dx, dy } => (dx, dy),
            _ => return None,
        };
        Some(rect_motion_region(rect, (dx, dy), h, w))
    }
}

/// Pixels covered by `rect` in any of its three per-frame positions.
pub fn rect_motion_region(rect: Rect, d: (i32, i32), h: usize, w: usize) -> Array2<bool> {
    let mut region = Array2::from_elem((h, w), false);
    for step in [-1i32, 0, 1] {
        let ox = step * d.0;
        let oy = step * d.1;
        for y in 0..rect.h {
            for x in 0..rect.w {
                let py = rect.y as i32 + y as i32 + oy;
                let px = rect.x as i32 + x as i32 + ox;
                if py >= 0 && py < h as i32 && px >= 0 && px < w as i32 {
                    region[[py as usize, px as usize]] = true;
                }
            }
        }
    }
    region
}

/// Smooth seeded noise field in `[-1, 1]`.
fn smooth_noise(h: usize, w: usize, cell: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let gh = h / cell + 2;
    let gw = w / cell + 2;
    let grid = Array2::from_shape_fn((gh, gw), |_| rng.gen_range(-1.0..1.0));
    filters::resize_bilinear(&grid, h, w)
}

/// Builds the ground-truth radiance field in `[1e-4, 1]`.
fn radiance_field(size: usize, rng: &mut ChaCha8Rng) -> Array3<f64> {
    let h = size;
    let w = size;
    let tex = smooth_noise(h, w, 2, rng);
    let band_tex = smooth_noise(h, w, 3, rng);

    let blob_cx = rng.gen_range(0.3..0.7) * w as f64;
    let blob_cy = rng.gen_range(0.2..0.5) * h as f64;
    let blob_sigma = size as f64 / 6.0;

    // Per-scene mild color cast so channels are not identical.
    let gains = [
        1.0 + rng.gen_range(-0.06..0.06),
        1.0,
        1.0 + rng.gen_range(-0.06..0.06),
    ];

    let checker = Rect {
        x: w / 10,
        y: (2 * h) / 5,
        w: (2 * w) / 5,
        h: h / 4,
    };

    let mut field = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            // Smooth vertical gradient over about four stops, kept bright
            // enough that fusion leans on the non-reference frames.
            let fy = y as f64 / (h - 1) as f64;
            let mut v = (0.04f64.ln() * (1.0 - fy) + 0.6f64.ln() * fy).exp();

            // Bright blob reaching saturation of the long exposure.
            let r2 = (x as f64 - blob_cx).powi(2) + (y as f64 - blob_cy).powi(2);
            v = v.max(0.95 * (-r2 / (2.0 * blob_sigma * blob_sigma)).exp());

            // Checkerboard patch: strong mid-tone texture for flow and SSIM.
            if x >= checker.x
                && x < checker.x + checker.w
                && y >= checker.y
                && y < checker.y + checker.h
            {
                let cell = (x - checker.x) / 4 + (y - checker.y) / 4;
                v = if cell.is_multiple_of(2) { 0.07 } else { 0.22 };
            }

            // Broadband multiplicative texture.
            v *= 1.0 + 0.12 * tex[[y, x]];

            // Highlight band: saturates the long exposure.
            if y < h / 8 {
                v = 0.88 + 0.10 * band_tex[[y, x]];
            }
            // Deep-shadow band: near-black in the short exposure.
            if y >= (7 * h) / 8 {
                v = 2.0e-4 * (1.0 + 0.4 * band_tex[[y, x]]);
            }

            for c in 0..3 {
                field[[y, x, c]] = (v * gains[c]).clamp(1.0e-4, 1.0);
            }
        }
    }
    field
}

/// Translates content by `(dx, dy)` with replicated borders:
/// `out(p) = src(p - d)`.
fn translate(src: &Array3<f64>, dx: i32, dy: i32) -> Array3<f64> {
    let (h, w, c) = src.dim();
    Array3::from_shape_fn((h, w, c), |(y, x, ch)| {
        let sy = (y as i32 - dy).clamp(0, h as i32 - 1) as usize;
        let sx = (x as i32 - dx).clamp(0, w as i32 - 1) as usize;
        src[[sy, sx, ch]]
    })
}

/// Draws the moving rectangle's checker texture at `(ox, oy)`.
fn draw_rect(
    field: &mut Array3<f64>,
    rect: Rect,
    ox: i32,
    oy: i32,
    gains: [f64; 3],
    levels: (f64, f64),
) {
    let (h, w, _) = field.dim();
    for ry in 0..rect.h {
        for rx in 0..rect.w {
            let py = rect.y as i32 + ry as i32 + oy;
            let px = rect.x as i32 + rx as i32 + ox;
            if py < 0 || py >= h as i32 || px < 0 || px >= w as i32 {
                continue;
            }
            let v = if (rx / 3 + ry / 3) % 2 == 0 { levels.0 } else { levels.1 };
            for c in 0..3 {
                field[[py as usize, px as usize, c]] = (v * gains[c]).clamp(1.0e-4, 1.0);
            }
        }
    }
}

/// Renders one LDR frame: `quantize(clip((Y · t)^(1/γ)))` with
/// `t = 2^(ev - reference_ev)`.
pub fn render_frame(
    radiance: &Array3<f64>,
    ev: f64,
    reference_ev: f64,
    bit_depth: u8,
    cfg: &RadiometryConfig,
) -> Result<ExposureImage> {
    let t = (ev - reference_ev).exp2();
    let levels = ((1u32 << bit_depth as u32) - 1) as f64;
    let px = radiance.mapv(|v| {
        let encoded = (v * t).clamp(0.0, 1.0).powf(1.0 / cfg.gamma);
        (encoded * levels).round() / levels
    });
    ExposureImage::new(px, ev, bit_depth)
}

/// Generates a deterministic synthetic scene with exact ground truth.
pub fn synthesize_scene(spec: &SyntheticSpec, cfg: &RadiometryConfig) -> Result<SyntheticScene> {
    spec.validate()?;
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let size = spec.size;
    let base = radiance_field(size, &mut rng);

    let mut flow_to_1 = FlowField::zeros(size, size);
    let mut flow_to_3 = FlowField::zeros(size, size);
    let mut motion_region = None;
    let mut rect_used = None;

    let (state_1, state_2, state_3) = match spec.motion {
        MotionModel::None => (base.clone(), base.clone(), base),
        MotionModel::GlobalShift { dx, dy } => {
            flow_to_1.vectors.slice_mut(ndarray::s![.., .., 0]).fill(dx as f64);
            flow_to_1.vectors.slice_mut(ndarray::s![.., .., 1]).fill(dy as f64);
            flow_to_3.vectors.slice_mut(ndarray::s![.., .., 0]).fill(-dx as f64);
            flow_to_3.vectors.slice_mut(ndarray::s![.., .., 1]).fill(-dy as f64);
            (translate(&base, dx, dy), base.clone(), translate(&base, -dx, -dy))
        }
        MotionModel::MovingRect { dx, dy } => {
            let rw = rng.gen_range(size / 4..(2 * size) / 5);
            let rh = rng.gen_range(size / 4..(2 * size) / 5);
            let margin_x = (dx.unsigned_abs() as usize) + 2;
            let margin_y = (dy.unsigned_abs() as usize) + 2;
            let rect = Rect {
                x: rng.gen_range(margin_x..size - rw - margin_x),
                y: rng.gen_range(margin_y.max(size / 8)..(7 * size) / 8 - rh - margin_y),
                w: rw,
                h: rh,
            };
            let gains = [
                1.0 + rng.gen_range(-0.1..0.1),
                1.0,
                1.0 + rng.gen_range(-0.1..0.1),
            ];
            // Vary the rect's brightness regime so misalignment leaks through
            // different fusion weights across scenes.
            let levels = match rng.gen_range(0..3u8) {
                0 => (0.85, 0.35),
                1 => (0.12, 0.025),
                _ => (0.5, 0.12),
            };
            let mut s1 = base.clone();
            let mut s2 = base.clone();
            let mut s3 = base.clone();
            draw_rect(&mut s1, rect, -dx, -dy, gains, levels);
            draw_rect(&mut s2, rect, 0, 0, gains, levels);
            draw_rect(&mut s3, rect, dx, dy, gains, levels);

            // The rect content sits displaced by -d in frame 1 and +d in
            // frame 3, at the reference-rect support.
            for y in rect.y..rect.y + rect.h {
                for x in rect.x..rect.x + rect.w {
                    flow_to_1.vectors[[y, x, 0]] = -dx as f64;
                    flow_to_1.vectors[[y, x, 1]] = -dy as f64;
                    flow_to_3.vectors[[y, x, 0]] = dx as f64;
                    flow_to_3.vectors[[y, x, 1]] = dy as f64;
                }
            }
            motion_region = Some(rect_motion_region(rect, (dx, dy), size, size));
            rect_used = Some(rect);
            (s1, s2, s3)
        }
    };
    let _ = rect_used;

    let reference_ev = spec.evs[1];
    let frames = [
        render_frame(&state_1, spec.evs[0], reference_ev, spec.bit_depth, cfg)?,
        render_frame(&state_2, spec.evs[1], reference_ev, spec.bit_depth, cfg)?,
        render_frame(&state_3, spec.evs[2], reference_ev, spec.bit_depth, cfg)?,
    ];
    let gt = HdrImage::new(state_2, HdrRole::GroundTruth)?;

    Ok(SyntheticScene {
        scene: Scene {
            id: format!("synth_{:04}", spec.seed),
            frames,
            gt: Some(gt),
        },
        flow_to_1,
        flow_to_3,
        motion_region,
    })
}

/// The rect geometry used by [`synthesize_scene`] for a given spec, so the
/// CLI can persist it in the sidecar without re-deriving generator internals.
pub fn synthesize_with_sidecar(
    spec: &SyntheticSpec,
    cfg: &RadiometryConfig,
) -> Result<(SyntheticScene, MotionSidecar)> {
    let generated = synthesize_scene(spec, cfg)?;
    let rect = generated.motion_region.as_ref().map(|region| bounding_rect(region, spec));
    Ok((
        generated,
        MotionSidecar {
            motion: spec.motion,
            rect,
        },
    ))
}

fn bounding_rect(region: &Array2<bool>, spec: &SyntheticSpec) -> Rect {
    // Recover the reference-frame rect by shrinking the union region by the
    // displacement on each axis.
    let (h, w) = region.dim();
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0usize, 0usize);
    for y in 0..h {
        for x in 0..w {
            if region[[y, x]] {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x + 1);
                y1 = y1.max(y + 1);
            }
        }
    }
    let (dx, dy) = match spec.motion {
        MotionModel::MovingRect { dx, dy } => (dx.unsigned_abs() as usize, dy.unsigned_abs() as usize),
        _ => (0, 0),
    };
    Rect {
        x: x0 + dx,
        y: y0 + dy,
        w: (x1 - x0).saturating_sub(2 * dx),
        h: (y1 - y0).saturating_sub(2 * dy),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radiometry::{fuse_color, linearize, tonemap, RadiometryConfig};

    fn cfg() -> RadiometryConfig {
        RadiometryConfig::default()
    }

    #[test]
    fn same_seed_gives_identical_scenes() {
        let spec = SyntheticSpec { seed: 9, motion: MotionModel::MovingRect { dx: 3, dy: 1 }, ..SyntheticSpec::default() };
        let a = synthesize_scene(&spec, &cfg()).unwrap();
        let b = synthesize_scene(&spec, &cfg()).unwrap();
        for (fa, fb) in a.scene.frames.iter().zip(b.scene.frames.iter()) {
            assert_eq!(fa.pixels, fb.pixels);
        }
        assert_eq!(
            a.scene.gt.as_ref().unwrap().pixels,
            b.scene.gt.as_ref().unwrap().pixels
        );
    }

    #[test]
    fn exposure_ratios_follow_ev_set() {
        let spec = SyntheticSpec::default();
        assert_eq!((spec.evs[0] - spec.evs[1]).exp2(), 0.25);
        assert_eq!((spec.evs[1] - spec.evs[1]).exp2(), 1.0);
        assert_eq!((spec.evs[2] - spec.evs[1]).exp2(), 4.0);
    }

    #[test]
    fn linearized_frames_reproduce_clipped_radiance() {
        let spec = SyntheticSpec { seed: 4, ..SyntheticSpec::default() };
        let s = synthesize_scene(&spec, &cfg()).unwrap();
        let gt = &s.scene.gt.as_ref().unwrap().pixels;
        for frame in &s.scene.frames {
            let t = (frame.ev - s.scene.frames[1].ev).exp2();
            let lin = linearize(frame, s.scene.frames[1].ev, &cfg()).unwrap();
            // Quantization bound: |d(I^g)/t| <= g * (0.5/255) / t.
            let bound = cfg().gamma * (0.5 / 255.0) / t + 1e-9;
            let mut max_err = 0.0f64;
            for (idx, &v) in lin.pixels.indexed_iter() {
                let expect = gt[idx].min(1.0 / t);
                max_err = max_err.max((v - expect).abs());
            }
            assert!(max_err <= bound, "ev {}: max err {max_err} > {bound}", frame.ev);
        }
    }

    #[test]
    fn static_scene_fusion_reconstructs_ground_truth() {
        let spec = SyntheticSpec { seed: 11, ..SyntheticSpec::default() };
        let s = synthesize_scene(&spec, &cfg()).unwrap();
        let ref_ev = s.scene.frames[1].ev;
        let h1 = linearize(&s.scene.frames[0], ref_ev, &cfg()).unwrap();
        let h2 = linearize(&s.scene.frames[1], ref_ev, &cfg()).unwrap();
        let h3 = linearize(&s.scene.frames[2], ref_ev, &cfg()).unwrap();
        let fused = fuse_color(&h1, &h2, &h3, &s.scene.frames[1]).unwrap();

        let tm_fused = tonemap(&fused.pixels, &cfg()).unwrap();
        let tm_gt = tonemap(&s.scene.gt.as_ref().unwrap().pixels, &cfg()).unwrap();
        let mae = (&tm_fused - &tm_gt).mapv(f64::abs).mean().unwrap();
        assert!(mae <= 2.0 / 255.0, "tone-mapped MAE {mae} > 2/255");
    }

    #[test]
    fn saturated_and_near_black_fractions_have_support() {
        let spec = SyntheticSpec { seed: 2, ..SyntheticSpec::default() };
        let s = synthesize_scene(&spec, &cfg()).unwrap();
        let n = (spec.size * spec.size) as f64;

        // Long exposure saturates.
        let sat = s.scene.frames[2]
            .pixels
            .indexed_iter()
            .filter(|((_, _, c), &v)| *c == 0 && v >= 1.0)
            .count() as f64;
        assert!(sat / n >= 0.05, "saturated fraction {}", sat / n);

        // Short exposure goes near black.
        let dark = s.scene.frames[0]
            .pixels
            .indexed_iter()
            .filter(|((_, _, c), &v)| *c == 0 && v < 8.0 / 255.0)
            .count() as f64;
        assert!(dark / n >= 0.05, "near-black fraction {}", dark / n);
    }

    #[test]
    fn global_shift_translates_content_and_flow() {
        let spec = SyntheticSpec {
            seed: 3,
            motion: MotionModel::GlobalShift { dx: 3, dy: 0 },
            ..SyntheticSpec::default()
        };
        let s = synthesize_scene(&spec, &cfg()).unwrap();
        let stat = synthesize_scene(
            &SyntheticSpec { motion: MotionModel::None, ..spec },
            &cfg(),
        )
        .unwrap();
        // Interior pixels of frame 1 come from the static frame shifted by d.
        for y in 8..56 {
            for x in 8..56 {
                assert_eq!(
                    s.scene.frames[0].pixels[[y, x, 0]],
                    stat.scene.frames[0].pixels[[y, x - 3, 0]]
                );
            }
        }
        assert_eq!(s.flow_to_1.vectors[[10, 10, 0]], 3.0);
        assert_eq!(s.flow_to_3.vectors[[10, 10, 0]], -3.0);
        assert!(s.motion_region.is_none());
    }

    #[test]
    fn moving_rect_confines_motion_to_region() {
        let spec = SyntheticSpec {
            seed: 8,
            motion: MotionModel::MovingRect { dx: 4, dy: 2 },
            ..SyntheticSpec::default()
        };
        let s = synthesize_scene(&spec, &cfg()).unwrap();
        let region = s.motion_region.as_ref().unwrap();
        assert!(region.iter().any(|&v| v));

        // Outside the region all frames describe the same radiance.
        let f1 = &s.scene.frames[0];
        let f3 = &s.scene.frames[2];
        let lin1 = linearize(f1, 0.0, &cfg()).unwrap();
        let lin3 = linearize(f3, 0.0, &cfg()).unwrap();
        for y in 0..spec.size {
            for x in 0..spec.size {
                if region[[y, x]] {
                    continue;
                }
                let a = lin1.pixels[[y, x, 0]];
                let b = lin3.pixels[[y, x, 0]].min(0.25);
                // Both clip at the long exposure's ceiling before comparing.
                assert!(
                    (a.min(0.25) - b).abs() < 0.02,
                    "unexpected motion outside region at ({y},{x})"
                );
            }
        }
    }

    #[test]
    fn sidecar_round_trips_and_recovers_region() {
        let spec = SyntheticSpec {
            seed: 13,
            motion: MotionModel::MovingRect { dx: 3, dy: 1 },
            ..SyntheticSpec::default()
        };
        let (s, sidecar) = synthesize_with_sidecar(&spec, &cfg()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("motion.json");
        sidecar.save(&p).unwrap();
        let loaded = MotionSidecar::load(&p).unwrap();
        let region = loaded.motion_region(spec.size, spec.size).unwrap();
        assert_eq!(region, s.motion_region.unwrap());
    }
}
