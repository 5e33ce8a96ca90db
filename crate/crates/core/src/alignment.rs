//! Optical-flow pre-alignment of the non-reference exposures.
//!
//! Flow is estimated on exposure-compensated gamma-domain images (the moving
//! frame is compensated to the reference ev, and both sides are clipped to the
//! pair's common representable ceiling so saturated regions cannot masquerade
//! as motion). Both the linear images and the gamma-domain LDRs are warped
//! with the same field, keeping the per-frame tensors consistent.

use ndarray::{Array2, Array3};

use crate::error::Error;
use crate::filters;
use crate::image::{check_same_shape, dims, ExposureImage, LinearImage};
use crate::radiometry::{delinearize, linearize, RadiometryConfig};
use crate::Result;

/// Dense per-pixel displacement field, defined from the reference frame to
/// the source frame: `warp(src, flow)(p) = src(p + flow(p)) ≈ ref(p)`.
/// Channel 0 holds the x displacement, channel 1 the y displacement.
#[derive(Debug, Clone)]
pub struct FlowField {
    pub vectors: Array3<f64>,
}

impl FlowField {
    pub fn zeros(h: usize, w: usize) -> Self {
        Self { vectors: Array3::zeros((h, w, 2)) }
    }

    pub fn shape(&self) -> (usize, usize) {
        let d = self.vectors.dim();
        (d.0, d.1)
    }

    /// Mean endpoint error against another field.
    pub fn mean_endpoint_error(&self, other: &FlowField) -> f64 {
        let diff = &self.vectors - &other.vectors;
        let (h, w) = self.shape();
        let mut total = 0.0;
        for y in 0..h {
            for x in 0..w {
                let dx = diff[[y, x, 0]];
                let dy = diff[[y, x, 1]];
                total += (dx * dx + dy * dy).sqrt();
            }
        }
        total / (h * w) as f64
    }
}

/// Flow backend selector. Only the shipped pyramidal estimator is built in,
/// but the spec keeps the interface open for external backends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowAlgorithm {
    PyramidalLucasKanade,
}

/// Parameters for the dense coarse-to-fine Lucas–Kanade estimator.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct FlowEstimatorSpec {
    pub algorithm: FlowAlgorithm,
    /// Number of pyramid levels (>= 1); levels are capped so the coarsest
    /// image stays at least 8 px on each side.
    pub pyramid_levels: usize,
    /// Gauss–Newton iterations per level (>= 1).
    pub iterations_per_level: usize,
    /// Flow-field smoothing strength (Gaussian sigma in pixels, >= 0).
    pub smoothness: f64,
}

impl Default for FlowEstimatorSpec {
    fn default() -> Self {
        Self {
            algorithm: FlowAlgorithm::PyramidalLucasKanade,
            pyramid_levels: 4,
            iterations_per_level: 8,
            smoothness: 2.0,
        }
    }
}

impl FlowEstimatorSpec {
    pub fn validate(&self) -> Result<()> {
        if self.pyramid_levels < 1 {
            return Err(Error::InvalidConfig("pyramid_levels must be >= 1".into()));
        }
        if self.iterations_per_level < 1 {
            return Err(Error::InvalidConfig("iterations_per_level must be >= 1".into()));
        }
        if self.smoothness.is_nan() || self.smoothness < 0.0 {
            return Err(Error::InvalidConfig("smoothness must be >= 0".into()));
        }
        Ok(())
    }
}

/// Re-renders `src` at `target_ev` so brightness-mismatched frames can be
/// compared: `delinearize(linearize(src, src.ev), target_ev)`.
pub fn exposure_compensate(
    src: &ExposureImage,
    target_ev: f64,
    cfg: &RadiometryConfig,
) -> Result<ExposureImage> {
    let lin = linearize(src, src.ev, cfg)?;
    let mut out = delinearize(&lin, target_ev, cfg)?;
    out.bit_depth = src.bit_depth;
    Ok(out)
}

/// Backward-warps an image by a flow field using bilinear sampling with
/// border replication: `out(p) = src(p + flow(p))`.
pub fn warp(src: &Array3<f64>, flow: &FlowField) -> Result<Array3<f64>> {
    let (h, w, c) = dims(src);
    if flow.shape() != (h, w) {
        return Err(Error::ShapeMismatch {
            context: "warp",
            expected: (h, w, 2),
            got: (flow.shape().0, flow.shape().1, 2),
        });
    }
    let mut out = Array3::zeros((h, w, c));
    // Per-channel planes keep the bilinear kernel on contiguous rows.
    for ch in 0..c {
        let plane = src.index_axis(ndarray::Axis(2), ch).to_owned();
        for y in 0..h {
            for x in 0..w {
                let sx = x as f64 + flow.vectors[[y, x, 0]];
                let sy = y as f64 + flow.vectors[[y, x, 1]];
                out[[y, x, ch]] = filters::bilinear_sample(&plane, sx, sy);
            }
        }
    }
    Ok(out)
}

/// Estimates dense flow from `reference` to `source` with the configured
/// backend. Both frames must share brightness (exposure-compensate first).
pub fn estimate_flow(
    reference: &ExposureImage,
    source: &ExposureImage,
    spec: &FlowEstimatorSpec,
) -> Result<FlowField> {
    spec.validate()?;
    check_same_shape(&reference.pixels, &source.pixels, "estimate_flow")?;
    let ref_gray = to_gray(&reference.pixels);
    let src_gray = to_gray(&source.pixels);
    Ok(pyramidal_lk(&ref_gray, &src_gray, spec))
}

fn to_gray(px: &Array3<f64>) -> Array2<f64> {
    let (h, w, c) = dims(px);
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for ch in 0..c {
                s += px[[y, x, ch]];
            }
            out[[y, x]] = s / c as f64;
        }
    }
    out
}

const LK_WINDOW_RADIUS: usize = 3;
const LK_MIN_LEVEL_SIZE: usize = 8;
const LK_MAX_STEP: f64 = 1.0;

fn pyramidal_lk(reference: &Array2<f64>, source: &Array2<f64>, spec: &FlowEstimatorSpec) -> FlowField {
    let (h, w) = reference.dim();

    // Cap levels so the coarsest stays usable.
    let mut levels = 1usize;
    let mut min_dim = h.min(w);
    while levels < spec.pyramid_levels && min_dim / 2 >= LK_MIN_LEVEL_SIZE {
        levels += 1;
        min_dim /= 2;
    }

    let mut ref_pyr = vec![filters::gaussian_blur(reference, 0.75)];
    let mut src_pyr = vec![filters::gaussian_blur(source, 0.75)];
    for l in 1..levels {
        ref_pyr.push(filters::downsample2(&ref_pyr[l - 1]));
        src_pyr.push(filters::downsample2(&src_pyr[l - 1]));
    }

    let coarsest = src_pyr[levels - 1].dim();
    let mut fx = Array2::zeros(coarsest);
    let mut fy = Array2::zeros(coarsest);

    for l in (0..levels).rev() {
        let (lh, lw) = ref_pyr[l].dim();
        if fx.dim() != (lh, lw) {
            fx = filters::resize_bilinear(&fx, lh, lw).mapv(|v| v * 2.0);
            fy = filters::resize_bilinear(&fy, lh, lw).mapv(|v| v * 2.0);
        }
        lk_refine_level(&ref_pyr[l], &src_pyr[l], &mut fx, &mut fy, spec);
    }

    let max_mag = h.max(w) as f64;
    let mut vectors = Array3::zeros((h, w, 2));
    for y in 0..h {
        for x in 0..w {
            vectors[[y, x, 0]] = fx[[y, x]].clamp(-max_mag, max_mag);
            vectors[[y, x, 1]] = fy[[y, x]].clamp(-max_mag, max_mag);
        }
    }
    FlowField { vectors }
}

fn lk_refine_level(
    reference: &Array2<f64>,
    source: &Array2<f64>,
    fx: &mut Array2<f64>,
    fy: &mut Array2<f64>,
    spec: &FlowEstimatorSpec,
) {
    let (h, w) = reference.dim();
    let window_px = ((2 * LK_WINDOW_RADIUS + 1) * (2 * LK_WINDOW_RADIUS + 1)) as f64;
    // Structure-tensor floor below which a window counts as textureless.
    let eig_floor = 1e-5 * window_px;
    let ridge = 1e-4 * window_px;

    for _ in 0..spec.iterations_per_level {
        let mut warped = Array2::zeros((h, w));
        for y in 0..h {
            for x in 0..w {
                warped[[y, x]] =
                    filters::bilinear_sample(source, x as f64 + fx[[y, x]], y as f64 + fy[[y, x]]);
            }
        }
        let (gx, gy) = filters::gradients(&warped);
        let residual = &warped - reference;

        let sxx = filters::box_sum(&(&gx * &gx), LK_WINDOW_RADIUS);
        let sxy = filters::box_sum(&(&gx * &gy), LK_WINDOW_RADIUS);
        let syy = filters::box_sum(&(&gy * &gy), LK_WINDOW_RADIUS);
        let bx = filters::box_sum(&(&gx * &residual), LK_WINDOW_RADIUS);
        let by = filters::box_sum(&(&gy * &residual), LK_WINDOW_RADIUS);

        for y in 0..h {
            for x in 0..w {
                let a = sxx[[y, x]];
                let b = sxy[[y, x]];
                let c = syy[[y, x]];
                let trace = a + c;
                let delta = a - c;
                let lambda_min = 0.5 * (trace - (delta * delta + 4.0 * b * b).sqrt());
                if lambda_min < eig_floor {
                    continue;
                }
                let ar = a + ridge;
                let cr = c + ridge;
                let det = ar * cr - b * b;
                let dx = -(cr * bx[[y, x]] - b * by[[y, x]]) / det;
                let dy = -(-b * bx[[y, x]] + ar * by[[y, x]]) / det;
                fx[[y, x]] += dx.clamp(-LK_MAX_STEP, LK_MAX_STEP);
                fy[[y, x]] += dy.clamp(-LK_MAX_STEP, LK_MAX_STEP);
            }
        }

        if spec.smoothness > 0.0 {
            *fx = filters::gaussian_blur(fx, spec.smoothness);
            *fy = filters::gaussian_blur(fy, spec.smoothness);
        }
    }
}

/// Aligned tensors for one scene: non-reference frames warped onto frame 2
/// in both the linear and gamma domains, plus the flows that produced them.
#[derive(Debug, Clone)]
pub struct AlignedStack {
    pub h1: LinearImage,
    pub h2: LinearImage,
    pub h3: LinearImage,
    pub i1: ExposureImage,
    /// Reference frame, passed through untouched.
    pub i2: ExposureImage,
    pub i3: ExposureImage,
    pub flow_to_1: FlowField,
    pub flow_to_3: FlowField,
}

/// Exposure-compensates frames 1 and 3 against frame 2, estimates flow, and
/// warps both domains with the same field. Frame 2 is returned untouched.
///
/// The stack must be ordered by strictly increasing exposure.
pub fn align_stack(
    stack: &[ExposureImage; 3],
    spec: &FlowEstimatorSpec,
    cfg: &RadiometryConfig,
) -> Result<AlignedStack> {
    if !(stack[0].ev < stack[1].ev && stack[1].ev < stack[2].ev) {
        return Err(Error::InvalidInput(format!(
            "stack exposures must be strictly increasing, got ({}, {}, {})",
            stack[0].ev, stack[1].ev, stack[2].ev
        )));
    }
    let reference = &stack[1];
    let flow_to_1 = flow_against_reference(reference, &stack[0], spec, cfg)?;
    let flow_to_3 = flow_against_reference(reference, &stack[2], spec, cfg)?;

    let lin_1 = linearize(&stack[0], reference.ev, cfg)?;
    let lin_3 = linearize(&stack[2], reference.ev, cfg)?;
    let h2 = linearize(reference, reference.ev, cfg)?;

    let h1 = LinearImage::new(warp(&lin_1.pixels, &flow_to_1)?, reference.ev)?;
    let h3 = LinearImage::new(warp(&lin_3.pixels, &flow_to_3)?, reference.ev)?;
    let i1 = ExposureImage::new(warp(&stack[0].pixels, &flow_to_1)?, stack[0].ev, stack[0].bit_depth)?;
    let i3 = ExposureImage::new(warp(&stack[2].pixels, &flow_to_3)?, stack[2].ev, stack[2].bit_depth)?;

    Ok(AlignedStack {
        h1,
        h2,
        h3,
        i1,
        i2: reference.clone(),
        i3,
        flow_to_1,
        flow_to_3,
    })
}

/// Flow from the reference to one non-reference frame, on brightness-equalized
/// images. Both sides are clipped at the pair's common gamma-domain ceiling so
/// regions saturated in the longer exposure stay still.
fn flow_against_reference(
    reference: &ExposureImage,
    source: &ExposureImage,
    spec: &FlowEstimatorSpec,
    cfg: &RadiometryConfig,
) -> Result<FlowField> {
    let compensated = exposure_compensate(source, reference.ev, cfg)?;
    let t_src = (source.ev - reference.ev).exp2();
    let ceiling = (1.0f64.min(1.0 / t_src)).powf(1.0 / cfg.gamma);
    let clip = |img: &ExposureImage| -> Result<ExposureImage> {
        if ceiling >= 1.0 {
            return Ok(img.clone());
        }
        ExposureImage::new(img.pixels.mapv(|v| v.min(ceiling)), img.ev, img.bit_depth)
    };
    estimate_flow(&clip(reference)?, &clip(&compensated)?, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;
    use rand::{Rng, SeedableRng};

    fn textured_image(h: usize, w: usize, seed: u64) -> ExposureImage {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        // Smooth random texture: coarse noise bilinearly upsampled.
        let gh = h / 4 + 2;
        let gw = w / 4 + 2;
        let grid = Array2::from_shape_fn((gh, gw), |_| rng.gen_range(0.2..0.8));
        let fine = filters::resize_bilinear(&grid, h, w);
        let px = Array3::from_shape_fn((h, w, 3), |(y, x, c)| {
            (fine[[y, x]] + 0.05 * (c as f64 - 1.0) * fine[[y, x]]).clamp(0.0, 1.0)
        });
        ExposureImage::new(px, 0.0, 8).unwrap()
    }

    /// Moves image content by (dx, dy) with replicated borders, so the true
    /// flow from the original to the shifted frame is exactly (dx, dy).
    fn shift_image(img: &ExposureImage, dx: isize, dy: isize) -> ExposureImage {
        let (h, w, c) = img.shape();
        let px = Array3::from_shape_fn((h, w, c), |(y, x, ch)| {
            let sy = (y as isize - dy).clamp(0, h as isize - 1) as usize;
            let sx = (x as isize - dx).clamp(0, w as isize - 1) as usize;
            img.pixels[[sy, sx, ch]]
        });
        ExposureImage::new(px, img.ev, img.bit_depth).unwrap()
    }

    #[test]
    fn warp_zero_flow_is_identity() {
        let img = textured_image(16, 20, 1);
        let flow = FlowField::zeros(16, 20);
        let out = warp(&img.pixels, &flow).unwrap();
        assert_eq!(out, img.pixels);
    }

    #[test]
    fn warp_integer_flow_shifts_columns() {
        let img = textured_image(8, 8, 2);
        let mut flow = FlowField::zeros(8, 8);
        flow.vectors.slice_mut(ndarray::s![.., .., 0]).fill(1.0);
        let out = warp(&img.pixels, &flow).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                let sx = (x + 1).min(7);
                assert_eq!(out[[y, x, 0]], img.pixels[[y, sx, 0]], "pixel ({y},{x})");
            }
        }
    }

    #[test]
    fn warp_half_pixel_flow_averages_columns() {
        let px = Array3::from_shape_fn((2, 2, 3), |(_, x, _)| if x == 0 { 0.2 } else { 0.6 });
        let mut flow = FlowField::zeros(2, 2);
        flow.vectors.slice_mut(ndarray::s![.., .., 0]).fill(0.5);
        let out = warp(&px, &flow).unwrap();
        assert_abs_diff_eq!(out[[0, 0, 0]], 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(out[[0, 1, 0]], 0.6, epsilon = 1e-12);
    }

    #[test]
    fn warp_is_linear_in_source() {
        let a = textured_image(12, 12, 3);
        let b = textured_image(12, 12, 4);
        let mut flow = FlowField::zeros(12, 12);
        for y in 0..12 {
            for x in 0..12 {
                flow.vectors[[y, x, 0]] = ((x as f64) * 0.3).sin();
                flow.vectors[[y, x, 1]] = ((y as f64) * 0.2).cos() * 0.7;
            }
        }
        let combo = 0.3 * &a.pixels + 0.7 * &b.pixels;
        let warped_combo = warp(&combo, &flow).unwrap();
        let combo_warped =
            0.3 * &warp(&a.pixels, &flow).unwrap() + 0.7 * &warp(&b.pixels, &flow).unwrap();
        for (u, v) in warped_combo.iter().zip(combo_warped.iter()) {
            assert_abs_diff_eq!(u, v, epsilon = 1e-6);
        }
    }

    #[test]
    fn flow_on_identical_frames_is_near_zero() {
        let img = textured_image(32, 32, 5);
        let flow = estimate_flow(&img, &img, &FlowEstimatorSpec::default()).unwrap();
        let zero = FlowField::zeros(32, 32);
        assert!(flow.mean_endpoint_error(&zero) < 0.05);
    }

    #[test]
    fn flow_recovers_known_translation() {
        let img = textured_image(64, 64, 6);
        let shifted = shift_image(&img, 3, 0);
        // shifted(p) = img(p - d), so warp(shifted, flow)(p) = img(p) at flow = d.
        let flow = estimate_flow(&img, &shifted, &FlowEstimatorSpec::default()).unwrap();
        let mut expected = FlowField::zeros(64, 64);
        expected.vectors.slice_mut(ndarray::s![.., .., 0]).fill(3.0);
        let interior = interior_epe(&flow, &expected, 8);
        assert!(interior < 0.5, "interior EPE {interior} >= 0.5");
    }

    #[test]
    fn flow_with_exposure_compensation_matches_equal_brightness() {
        let cfg = RadiometryConfig::default();
        let img = textured_image(64, 64, 7);
        let shifted = shift_image(&img, 3, 0);

        let equal = estimate_flow(&img, &shifted, &FlowEstimatorSpec::default()).unwrap();

        // Re-render the shifted frame two stops darker, then compensate back.
        let lin = linearize(&shifted, shifted.ev, &cfg).unwrap();
        let darker = delinearize(&lin, -2.0, &cfg).unwrap();
        let recovered = exposure_compensate(&darker, 0.0, &cfg).unwrap();
        let compensated = estimate_flow(&img, &recovered, &FlowEstimatorSpec::default()).unwrap();

        let mut expected = FlowField::zeros(64, 64);
        expected.vectors.slice_mut(ndarray::s![.., .., 0]).fill(3.0);
        let epe_equal = interior_epe(&equal, &expected, 8);
        let epe_comp = interior_epe(&compensated, &expected, 8);
        assert!(
            epe_comp <= 2.0 * epe_equal + 1e-9,
            "compensated EPE {epe_comp} worse than 2x equal-brightness {epe_equal}"
        );
    }

    fn interior_epe(flow: &FlowField, expected: &FlowField, margin: usize) -> f64 {
        let (h, w) = flow.shape();
        let mut total = 0.0;
        let mut n = 0usize;
        for y in margin..h - margin {
            for x in margin..w - margin {
                let dx = flow.vectors[[y, x, 0]] - expected.vectors[[y, x, 0]];
                let dy = flow.vectors[[y, x, 1]] - expected.vectors[[y, x, 1]];
                total += (dx * dx + dy * dy).sqrt();
                n += 1;
            }
        }
        total / n as f64
    }

    #[test]
    fn exposure_compensate_saturates_bright_recovery() {
        let cfg = RadiometryConfig::default();
        let v = 0.25f64.powf(1.0 / 2.2);
        let px = Array3::from_elem((1, 1, 3), v);
        let src = ExposureImage::new(px, -2.0, 8).unwrap();
        let out = exposure_compensate(&src, 0.0, &cfg).unwrap();
        assert_abs_diff_eq!(out.pixels[[0, 0, 0]], 1.0, epsilon = 1e-9);
        assert_eq!(out.ev, 0.0);
    }

    #[test]
    fn exposure_compensate_identity_and_zero() {
        let cfg = RadiometryConfig::default();
        let img = textured_image(4, 4, 8);
        let same = exposure_compensate(&img, img.ev, &cfg).unwrap();
        for (a, b) in img.pixels.iter().zip(same.pixels.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-9);
        }
        let black = ExposureImage::new(Array3::zeros((4, 4, 3)), -2.0, 8).unwrap();
        let out = exposure_compensate(&black, 0.0, &cfg).unwrap();
        assert!(out.pixels.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn align_stack_rejects_unsorted_exposures() {
        let img = textured_image(16, 16, 9);
        let mut a = img.clone();
        a.ev = 2.0;
        let mut b = img.clone();
        b.ev = 0.0;
        let mut c = img.clone();
        c.ev = -2.0;
        let err = align_stack(
            &[a, b, c],
            &FlowEstimatorSpec::default(),
            &RadiometryConfig::default(),
        );
        assert!(err.is_err());
    }
}
