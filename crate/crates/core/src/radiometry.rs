//! Elementwise radiometric transforms: gamma linearization, μ-law tone
//! mapping, triangle blending weights, and weighted multi-exposure fusion.
//!
//! The linear HDR domain is anchored to the reference (medium) exposure:
//! `t_i = 2^(ev_i - reference_ev)`, so the reference frame linearizes to
//! `I^γ` and fused HDR values are clipped to `[0,1]`.

use ndarray::{Array3, Zip};

use crate::error::Error;
use crate::image::{check_same_shape, ExposureImage, HdrImage, HdrRole, LinearImage, WeightMap};
use crate::Result;

/// Gamma and μ-law parameters.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RadiometryConfig {
    /// Gamma correction exponent.
    pub gamma: f64,
    /// μ-law compression strength used by the tone mapper.
    pub mu: f64,
}

impl Default for RadiometryConfig {
    fn default() -> Self {
        Self { gamma: 2.2, mu: 5000.0 }
    }
}

impl RadiometryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.gamma <= 0.0 || !self.gamma.is_finite() {
            return Err(Error::InvalidConfig(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if self.mu <= 0.0 || !self.mu.is_finite() {
            return Err(Error::InvalidConfig(format!("mu must be > 0, got {}", self.mu)));
        }
        Ok(())
    }
}

/// Maps an LDR frame to the linear domain: `I^γ / t` with
/// `t = 2^(ev - reference_ev)`.
pub fn linearize(img: &ExposureImage, reference_ev: f64, cfg: &RadiometryConfig) -> Result<LinearImage> {
    cfg.validate()?;
    let t = (img.ev - reference_ev).exp2();
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "exposure ratio 2^({} - {reference_ev}) is not positive and finite",
            img.ev
        )));
    }
    let pixels = img.pixels.mapv(|p| p.powf(cfg.gamma) / t);
    LinearImage::new(pixels, reference_ev)
}

/// Renders a linear image back to an LDR frame at `target_ev`:
/// `clip(H·t, 0, 1)^(1/γ)` with `t = 2^(target_ev - reference_ev)`.
///
/// Inverse of [`linearize`] on pixels whose linear value satisfies `H·t <= 1`.
pub fn delinearize(h: &LinearImage, target_ev: f64, cfg: &RadiometryConfig) -> Result<ExposureImage> {
    cfg.validate()?;
    let t = (target_ev - h.reference_ev).exp2();
    let inv_gamma = 1.0 / cfg.gamma;
    let pixels = h.pixels.mapv(|v| (v * t).clamp(0.0, 1.0).powf(inv_gamma));
    ExposureImage::new(pixels, target_ev, 8)
}

/// μ-law tone mapping `log(1 + μx) / log(1 + μ)`, a strictly increasing map
/// of `[0,1]` onto itself. Rejects out-of-range pixels; callers clip first.
pub fn tonemap(pixels: &Array3<f64>, cfg: &RadiometryConfig) -> Result<Array3<f64>> {
    cfg.validate()?;
    crate::image::validate_range(pixels, 0.0, 1.0, "tonemap input")?;
    Ok(tonemap_unchecked(pixels, cfg))
}

/// As [`tonemap`] but without range validation; used on the training hot path
/// where inputs are clipped by construction.
pub(crate) fn tonemap_unchecked(pixels: &Array3<f64>, cfg: &RadiometryConfig) -> Array3<f64> {
    let norm = (1.0 + cfg.mu).ln();
    pixels.mapv(|v| (1.0 + cfg.mu * v).ln() / norm)
}

/// Scalar μ-law tone map.
#[inline]
pub fn tonemap_value(v: f64, cfg: &RadiometryConfig) -> f64 {
    (1.0 + cfg.mu * v).ln() / (1.0 + cfg.mu).ln()
}

/// Derivative of the scalar μ-law tone map.
#[inline]
pub(crate) fn tonemap_derivative(v: f64, cfg: &RadiometryConfig) -> f64 {
    cfg.mu / ((1.0 + cfg.mu * v) * (1.0 + cfg.mu).ln())
}

/// Triangle blending weights over the reference frame's brightness.
///
/// Piecewise linear with the breakpoint at 0.5:
/// `Λ1(z) = 1` for `z <= 0.5`, else `2(1-z)`; `Λ3(z) = 2z` for `z <= 0.5`,
/// else `1`; `Λ2(z) = 2z` for `z <= 0.5`, else `2(1-z)`.
pub fn triangle_weights(i2: &ExposureImage) -> (WeightMap, WeightMap, WeightMap) {
    let l1 = i2.pixels.mapv(lambda_1);
    let l2 = i2.pixels.mapv(lambda_2);
    let l3 = i2.pixels.mapv(lambda_3);
    (
        WeightMap { values: l1 },
        WeightMap { values: l2 },
        WeightMap { values: l3 },
    )
}

#[inline]
pub(crate) fn lambda_1(z: f64) -> f64 {
    if z <= 0.5 { 1.0 } else { 2.0 * (1.0 - z) }
}

#[inline]
pub(crate) fn lambda_2(z: f64) -> f64 {
    if z <= 0.5 { 2.0 * z } else { 2.0 * (1.0 - z) }
}

#[inline]
pub(crate) fn lambda_3(z: f64) -> f64 {
    if z <= 0.5 { 2.0 * z } else { 1.0 }
}

/// Pixel-level fusion weights derived from the triangle functions:
/// `A1 = 1 - Λ1(I2)`, `A2 = Λ2(I2)`, `A3 = 1 - Λ3(I2)`. They sum to one at
/// every pixel.
pub fn fusion_weights(i2: &ExposureImage) -> (WeightMap, WeightMap, WeightMap) {
    let (l1, l2, l3) = triangle_weights(i2);
    (
        WeightMap { values: l1.values.mapv(|v| 1.0 - v) },
        l2,
        WeightMap { values: l3.values.mapv(|v| 1.0 - v) },
    )
}

/// Weighted merge of three aligned linear exposures into the color component:
/// `(A1·H̃1 + A2·H2 + A3·H̃3) / (A1 + A2 + A3)`, clipped to `[0,1]`.
///
/// `h1` and `h3` must already be warped to the reference frame.
pub fn fuse_color(
    h1: &LinearImage,
    h2: &LinearImage,
    h3: &LinearImage,
    i2: &ExposureImage,
) -> Result<HdrImage> {
    check_same_shape(&h1.pixels, &h2.pixels, "fuse_color")?;
    check_same_shape(&h2.pixels, &h3.pixels, "fuse_color")?;
    check_same_shape(&h2.pixels, &i2.pixels, "fuse_color")?;

    let mut out = Array3::zeros(h2.pixels.dim());
    Zip::from(&mut out)
        .and(&h1.pixels)
        .and(&h2.pixels)
        .and(&h3.pixels)
        .and(&i2.pixels)
        .for_each(|o, &v1, &v2, &v3, &z| {
            let w1 = 1.0 - lambda_1(z);
            let w2 = lambda_2(z);
            let w3 = 1.0 - lambda_3(z);
            *o = ((w1 * v1 + w2 * v2 + w3 * v3) / (w1 + w2 + w3)).clamp(0.0, 1.0);
        });
    HdrImage::new(out, HdrRole::ColorComponent)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;

    fn ldr(values: &[f64], ev: f64) -> ExposureImage {
        let n = values.len();
        let px = Array3::from_shape_fn((1, n, 3), |(_, x, _)| values[x]);
        ExposureImage::new(px, ev, 8).unwrap()
    }

    #[test]
    fn linearize_fixed_points() {
        let cfg = RadiometryConfig::default();
        let img = ldr(&[0.0, 1.0], 0.0);
        let lin = linearize(&img, 0.0, &cfg).unwrap();
        assert_eq!(lin.pixels[[0, 0, 0]], 0.0);
        assert_eq!(lin.pixels[[0, 1, 0]], 1.0);
    }

    #[test]
    fn linearize_matches_scalar_oracle() {
        // Independent scalar evaluation of 0.5^2.2 / 4.
        let expected = 0.5f64.powf(2.2) / 4.0;
        let cfg = RadiometryConfig::default();
        let img = ldr(&[0.5], 2.0);
        let lin = linearize(&img, 0.0, &cfg).unwrap();
        assert_abs_diff_eq!(lin.pixels[[0, 0, 0]], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.054409, epsilon = 1e-6);
    }

    #[test]
    fn delinearize_fixed_points_and_oracle() {
        let cfg = RadiometryConfig::default();
        let lin = LinearImage::new(
            Array3::from_shape_vec((1, 2, 3), vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]).unwrap(),
            0.0,
        )
        .unwrap();
        let out = delinearize(&lin, 0.0, &cfg).unwrap();
        assert_eq!(out.pixels[[0, 0, 0]], 0.0);
        assert_eq!(out.pixels[[0, 1, 0]], 1.0);

        // h = 1 rendered at t = 0.25: scalar evaluation of 0.25^(1/2.2).
        let out = delinearize(&lin, -2.0, &cfg).unwrap();
        let expected = 0.25f64.powf(1.0 / 2.2);
        assert_abs_diff_eq!(out.pixels[[0, 1, 0]], expected, epsilon = 1e-12);
    }

    #[test]
    fn linearize_delinearize_round_trip_on_unclipped() {
        let cfg = RadiometryConfig::default();
        let img = ldr(&[0.1, 0.25, 0.5, 0.75, 0.9], -1.0);
        let lin = linearize(&img, 0.0, &cfg).unwrap();
        let back = delinearize(&lin, -1.0, &cfg).unwrap();
        for (a, b) in img.pixels.iter().zip(back.pixels.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn tonemap_endpoints_and_oracle() {
        let cfg = RadiometryConfig::default();
        let px = Array3::from_shape_vec((1, 3, 1), vec![0.0, 0.5, 1.0])
            .unwrap()
            .broadcast((1, 3, 3))
            .unwrap()
            .to_owned();
        let tm = tonemap(&px, &cfg).unwrap();
        assert_eq!(tm[[0, 0, 0]], 0.0);
        assert_eq!(tm[[0, 2, 0]], 1.0);
        // ln(2501)/ln(5001), evaluated independently.
        let expected = (2501.0f64).ln() / (5001.0f64).ln();
        assert_abs_diff_eq!(tm[[0, 1, 0]], expected, epsilon = 1e-12);
        assert_abs_diff_eq!(expected, 0.91864, epsilon = 1e-5);
    }

    #[test]
    fn tonemap_rejects_out_of_range() {
        let cfg = RadiometryConfig::default();
        let px = Array3::from_elem((1, 1, 3), 1.5);
        assert!(tonemap(&px, &cfg).is_err());
    }

    #[test]
    fn triangle_weight_shape() {
        let img = ldr(&[0.0, 0.25, 0.5, 1.0], 0.0);
        let (l1, l2, l3) = triangle_weights(&img);
        // Peak of Λ2 at mid-gray.
        assert_eq!(l2.values[[0, 2, 0]], 1.0);
        // Endpoints.
        assert_eq!(l2.values[[0, 0, 0]], 0.0);
        assert_eq!(l2.values[[0, 3, 0]], 0.0);
        assert_eq!(l1.values[[0, 0, 0]], 1.0);
        assert_eq!(l3.values[[0, 3, 0]], 1.0);
        // Linear interpolation at z = 0.25.
        assert_eq!(l2.values[[0, 1, 0]], 0.5);
        let (a1, a2, a3) = fusion_weights(&img);
        assert_eq!(a1.values[[0, 1, 0]], 0.0);
        assert_eq!(a2.values[[0, 1, 0]], 0.5);
        assert_eq!(a3.values[[0, 1, 0]], 0.5);
    }

    #[test]
    fn fuse_color_static_stack_is_identity() {
        // Static aligned stack: fusing equal values returns them unchanged.
        let cfg = RadiometryConfig::default();
        let i2 = ldr(&[0.0, 0.3, 0.5, 0.8, 1.0], 0.0);
        let h = linearize(&ldr(&[0.4, 0.4, 0.4, 0.4, 0.4], 0.0), 0.0, &cfg).unwrap();
        let fused = fuse_color(&h, &h, &h, &i2).unwrap();
        for &v in fused.pixels.iter() {
            assert_abs_diff_eq!(v, 0.4f64.powf(2.2), epsilon = 1e-12);
        }
    }

    #[test]
    fn fuse_color_saturated_reference_takes_short_exposure() {
        let i2 = ldr(&[1.0], 0.0);
        let h1 = LinearImage::new(Array3::from_elem((1, 1, 3), 0.9), 0.0).unwrap();
        let h2 = LinearImage::new(Array3::from_elem((1, 1, 3), 0.5), 0.0).unwrap();
        let h3 = LinearImage::new(Array3::from_elem((1, 1, 3), 0.1), 0.0).unwrap();
        let fused = fuse_color(&h1, &h2, &h3, &i2).unwrap();
        assert_eq!(fused.pixels[[0, 0, 0]], 0.9);

        let i2_dark = ldr(&[0.0], 0.0);
        let fused = fuse_color(&h1, &h2, &h3, &i2_dark).unwrap();
        assert_eq!(fused.pixels[[0, 0, 0]], 0.1);
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn tonemap_is_strictly_monotone(a in 0.0..1.0f64, b in 0.0..1.0f64) {
                prop_assume!(a < b);
                let cfg = RadiometryConfig::default();
                prop_assert!(tonemap_value(a, &cfg) < tonemap_value(b, &cfg));
            }

            #[test]
            fn fusion_weights_sum_to_one(z in 0.0..=1.0f64) {
                let (l1, l2, l3) = (lambda_1(z), lambda_2(z), lambda_3(z));
                let sum = (1.0 - l1) + l2 + (1.0 - l3);
                prop_assert!((sum - 1.0).abs() < 1e-12);
            }

            #[test]
            fn linearize_round_trips_unclipped_pixels(
                p in 0.01..0.99f64,
                ev in -3.0..3.0f64,
            ) {
                let cfg = RadiometryConfig::default();
                let img = ExposureImage::new(Array3::from_elem((1, 1, 3), p), ev, 8).unwrap();
                let lin = linearize(&img, 0.0, &cfg).unwrap();
                // Only pixels whose linear value stays below the clip point
                // are invertible.
                prop_assume!(lin.pixels[[0, 0, 0]] * (ev - 0.0).exp2() <= 1.0);
                let back = delinearize(&lin, ev, &cfg).unwrap();
                prop_assert!((back.pixels[[0, 0, 0]] - p).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn fuse_color_shape_mismatch_rejected() {
        let i2 = ldr(&[0.5], 0.0);
        let h = LinearImage::new(Array3::zeros((1, 1, 3)), 0.0).unwrap();
        let h_big = LinearImage::new(Array3::zeros((2, 2, 3)), 0.0).unwrap();
        assert!(matches!(
            fuse_color(&h, &h_big, &h, &i2),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
