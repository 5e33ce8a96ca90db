//! Quantitative evaluation: PSNR and SSIM in the linear (`-l`) and
//! tone-mapped (`-u`) domains.

use ndarray::{Array2, Array3};

use crate::error::Error;
use crate::filters;
use crate::image::check_same_shape;
use crate::radiometry::{tonemap_unchecked, RadiometryConfig};
use crate::Result;

/// Per-scene or aggregate metric values. PSNR is in dB with `+inf` as the
/// identical-image sentinel; SSIM is in `[-1, 1]`.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct MetricValues {
    pub psnr_l: f64,
    pub psnr_u: f64,
    pub ssim_l: f64,
    pub ssim_u: f64,
}

/// Evaluation report over a set of scenes.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct MetricReport {
    pub per_scene: Vec<(String, MetricValues)>,
    pub mean: MetricValues,
    /// Reserved: requires the external HDR-VDP-2 model, not computed here.
    pub hdr_vdp2: Option<f64>,
}

impl MetricReport {
    /// Aggregates per-scene values into a report with arithmetic means.
    pub fn from_scenes(per_scene: Vec<(String, MetricValues)>) -> Result<Self> {
        if per_scene.is_empty() {
            return Err(Error::InvalidInput("metric report needs at least one scene".into()));
        }
        let n = per_scene.len() as f64;
        let mut mean = MetricValues { psnr_l: 0.0, psnr_u: 0.0, ssim_l: 0.0, ssim_u: 0.0 };
        for (_, v) in &per_scene {
            mean.psnr_l += v.psnr_l / n;
            mean.psnr_u += v.psnr_u / n;
            mean.ssim_l += v.ssim_l / n;
            mean.ssim_u += v.ssim_u / n;
        }
        Ok(Self { per_scene, mean, hdr_vdp2: None })
    }

    /// One formatted table row in the style of the evaluation tables.
    pub fn table_row(&self, label: &str) -> String {
        format!(
            "{label:<24} {:>6.2} / {:.4}   {:>6.2} / {:.4}   {:>9}",
            self.mean.psnr_u, self.mean.ssim_u, self.mean.psnr_l, self.mean.ssim_l, "-"
        )
    }
}

/// `-10·log10(MSE)` over all channels; identical inputs give `+inf`.
pub fn psnr(a: &Array3<f64>, b: &Array3<f64>) -> Result<f64> {
    check_same_shape(a, b, "psnr")?;
    let mut mse = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let d = x - y;
        mse += d * d;
    }
    mse /= a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * mse.log10())
}

/// PSNR between the tone-mapped images (inputs are clipped to `[0,1]` first).
pub fn psnr_u(a: &Array3<f64>, b: &Array3<f64>, cfg: &RadiometryConfig) -> Result<f64> {
    check_same_shape(a, b, "psnr_u")?;
    let ta = tonemap_unchecked(&a.mapv(|v| v.clamp(0.0, 1.0)), cfg);
    let tb = tonemap_unchecked(&b.mapv(|v| v.clamp(0.0, 1.0)), cfg);
    psnr(&ta, &tb)
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn to_gray(px: &Array3<f64>) -> Array2<f64> {
    let (h, w, c) = px.dim();
    Array2::from_shape_fn((h, w), |(y, x)| {
        (0..c).map(|ch| px[[y, x, ch]]).sum::<f64>() / c as f64
    })
}

/// Gaussian-weighted windowed mean, evaluated on the valid interior only.
fn windowed_mean(img: &Array2<f64>, kernel: &[f64]) -> Array2<f64> {
    let r = kernel.len() / 2;
    let (h, w) = img.dim();
    assert!(h > 2 * r && w > 2 * r);
    // Separable: horizontal (valid in x), then vertical (valid in y).
    let mut tmp = Array2::zeros((h, w - 2 * r));
    for y in 0..h {
        for x in 0..w - 2 * r {
            let mut s = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                s += kv * img[[y, x + k]];
            }
            tmp[[y, x]] = s;
        }
    }
    let mut out = Array2::zeros((h - 2 * r, w - 2 * r));
    for y in 0..h - 2 * r {
        for x in 0..w - 2 * r {
            let mut s = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                s += kv * tmp[[y + k, x]];
            }
            out[[y, x]] = s;
        }
    }
    out
}

/// Mean structural similarity on channel-mean grayscale with an 11x11
/// Gaussian window (σ = 1.5) and the reference stabilizers, data range 1.
pub fn ssim(a: &Array3<f64>, b: &Array3<f64>) -> Result<f64> {
    check_same_shape(a, b, "ssim")?;
    let (h, w, _) = a.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}"
        )));
    }
    let ga = to_gray(a);
    let gb = to_gray(b);

    let mut kernel = filters::gaussian_kernel(SSIM_SIGMA);
    // Truncate/renormalize to the standard 11-tap window.
    if kernel.len() > SSIM_WINDOW {
        let trim = (kernel.len() - SSIM_WINDOW) / 2;
        kernel = kernel[trim..trim + SSIM_WINDOW].to_vec();
        let s: f64 = kernel.iter().sum();
        for v in &mut kernel {
            *v /= s;
        }
    }

    let mu_a = windowed_mean(&ga, &kernel);
    let mu_b = windowed_mean(&gb, &kernel);
    let e_aa = windowed_mean(&(&ga * &ga), &kernel);
    let e_bb = windowed_mean(&(&gb * &gb), &kernel);
    let e_ab = windowed_mean(&(&ga * &gb), &kernel);

    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);

    let mut total = 0.0;
    let n = mu_a.len() as f64;
    for (idx, &ma) in mu_a.indexed_iter() {
        let mb = mu_b[idx];
        let va = e_aa[idx] - ma * ma;
        let vb = e_bb[idx] - mb * mb;
        let cov = e_ab[idx] - ma * mb;
        let s = ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        total += s;
    }
    Ok(total / n)
}

/// SSIM between the tone-mapped images.
pub fn ssim_u(a: &Array3<f64>, b: &Array3<f64>, cfg: &RadiometryConfig) -> Result<f64> {
    let ta = tonemap_unchecked(&a.mapv(|v| v.clamp(0.0, 1.0)), cfg);
    let tb = tonemap_unchecked(&b.mapv(|v| v.clamp(0.0, 1.0)), cfg);
    ssim(&ta, &tb)
}

/// All four metrics for one prediction/reference pair.
pub fn evaluate_pair(
    prediction: &Array3<f64>,
    reference: &Array3<f64>,
    cfg: &RadiometryConfig,
) -> Result<MetricValues> {
    Ok(MetricValues {
        psnr_l: psnr(prediction, reference)?,
        psnr_u: psnr_u(prediction, reference, cfg)?,
        ssim_l: ssim(prediction, reference)?,
        ssim_u: ssim_u(prediction, reference, cfg)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_img(h: usize, w: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((h, w, 3), |_| rng.gen_range(0.0..1.0))
    }

    #[test]
    fn psnr_identical_is_infinite() {
        let a = rand_img(8, 8, 1);
        assert!(psnr(&a, &a).unwrap().is_infinite());
        assert!(psnr_u(&a, &a, &RadiometryConfig::default()).unwrap().is_infinite());
    }

    #[test]
    fn psnr_constant_offset_closed_form() {
        let a = Array3::from_elem((8, 8, 3), 0.4);
        let b = Array3::from_elem((8, 8, 3), 0.5);
        // MSE = 0.01 exactly.
        assert_abs_diff_eq!(psnr(&a, &b).unwrap(), 20.0, epsilon = 1e-9);
    }

    #[test]
    fn psnr_is_symmetric() {
        let a = rand_img(8, 8, 2);
        let b = rand_img(8, 8, 3);
        assert_abs_diff_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn psnr_matches_scalar_reimplementation() {
        let a = rand_img(8, 8, 4);
        let b = rand_img(8, 8, 5);
        let cfg = RadiometryConfig::default();

        let mut mse = 0.0;
        let mut mse_u = 0.0;
        for (&x, &y) in a.iter().zip(b.iter()) {
            mse += (x - y) * (x - y);
            let tx = (1.0 + cfg.mu * x).ln() / (1.0 + cfg.mu).ln();
            let ty = (1.0 + cfg.mu * y).ln() / (1.0 + cfg.mu).ln();
            mse_u += (tx - ty) * (tx - ty);
        }
        mse /= a.len() as f64;
        mse_u /= a.len() as f64;

        assert_abs_diff_eq!(psnr(&a, &b).unwrap(), -10.0 * mse.log10(), epsilon = 1e-9);
        assert_abs_diff_eq!(psnr_u(&a, &b, &cfg).unwrap(), -10.0 * mse_u.log10(), epsilon = 1e-9);
    }

    #[test]
    fn tonemapped_and_linear_psnr_differ_in_general() {
        let a = rand_img(8, 8, 6);
        let b = rand_img(8, 8, 7);
        let cfg = RadiometryConfig::default();
        let l = psnr(&a, &b).unwrap();
        let u = psnr_u(&a, &b, &cfg).unwrap();
        assert!((l - u).abs() > 0.1, "psnr_l {l} vs psnr_u {u}");
    }

    #[test]
    fn noise_monotonically_degrades_psnr_u() {
        let cfg = RadiometryConfig::default();
        let base = rand_img(16, 16, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let noise = Array3::from_shape_fn((16, 16, 3), |_| rng.gen_range(-1.0..1.0));
        let mut last = f64::INFINITY;
        for level in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let noisy = (&base + &noise.mapv(|v| v * level)).mapv(|v: f64| v.clamp(0.0, 1.0));
            let p = psnr_u(&noisy, &base, &cfg).unwrap();
            assert!(p < last, "noise {level} did not degrade psnr_u ({p} >= {last})");
            last = p;
        }
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = rand_img(16, 16, 10);
        assert_abs_diff_eq!(ssim(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn ssim_of_inverted_image_is_low() {
        let a = rand_img(32, 32, 11);
        let inv = a.mapv(|v| 1.0 - v);
        let s = ssim(&a, &inv).unwrap();
        assert!(s < 0.5, "ssim(a, 1-a) = {s}");
    }

    #[test]
    fn ssim_nearly_invariant_to_shared_offset() {
        // Adding the same constant to both inputs leaves contrast and
        // structure untouched; only the stabilized luminance term moves.
        let a = rand_img(32, 32, 12).mapv(|v| 0.1 + 0.6 * v);
        let b = a.mapv(|v| (v + 0.03 * (v - 0.4).sin()).clamp(0.0, 0.9));
        let base = ssim(&a, &b).unwrap();
        let shifted = ssim(&a.mapv(|v| v + 0.05), &b.mapv(|v| v + 0.05)).unwrap();
        assert!((base - shifted).abs() < 1e-3, "delta {}", (base - shifted).abs());
    }

    #[test]
    fn ssim_rejects_tiny_images() {
        let a = rand_img(8, 8, 13);
        assert!(ssim(&a, &a).is_err());
    }

    #[test]
    fn report_aggregates_means() {
        let v1 = MetricValues { psnr_l: 30.0, psnr_u: 40.0, ssim_l: 0.9, ssim_u: 0.8 };
        let v2 = MetricValues { psnr_l: 34.0, psnr_u: 42.0, ssim_l: 0.7, ssim_u: 1.0 };
        let rep = MetricReport::from_scenes(vec![("a".into(), v1), ("b".into(), v2)]).unwrap();
        assert_abs_diff_eq!(rep.mean.psnr_l, 32.0);
        assert_abs_diff_eq!(rep.mean.psnr_u, 41.0);
        assert_abs_diff_eq!(rep.mean.ssim_u, 0.9);
        assert!(rep.hdr_vdp2.is_none());
        assert!(rep.table_row("test").contains("41.00"));
    }
}
