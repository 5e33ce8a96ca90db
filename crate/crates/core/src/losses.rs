//! Differentiable training objectives.
//!
//! The three L1 terms compare tone-mapped images under a mask and are
//! normalized by total pixel count, so magnitudes stay comparable across
//! samples with different mask density. The structure-mapping term is a
//! perceptual loss over a frozen convolutional feature pyramid; with no
//! pretrained weights available the pyramid uses fixed-seed random filters,
//! which keeps the repository self-contained and the tests hermetic.

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::image::{check_same_shape, Mask};
use crate::models::{chw_to_hwc, hwc_to_chw};
use crate::nn::{self, Conv2d, Tensor};
use crate::radiometry::{tonemap_derivative, tonemap_value, RadiometryConfig};
use crate::Result;

/// Loss weights and perceptual tap selection.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the structure-preserving term in the structure objective.
    pub lambda_sp: f64,
    /// Weight of the structure-mapping term in the reconstruction objective.
    pub lambda_stru: f64,
    /// Which pyramid stages feed the perceptual loss (ids 1..=3).
    pub perceptual_layers: Vec<usize>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_sp: 4.0,
            lambda_stru: 1.0,
            perceptual_layers: vec![1, 2, 3],
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_sp < 0.0 || self.lambda_stru < 0.0 {
            return Err(Error::InvalidConfig("loss weights must be >= 0".into()));
        }
        if self.perceptual_layers.is_empty() {
            return Err(Error::InvalidConfig("perceptual layer set must be non-empty".into()));
        }
        if self.perceptual_layers.iter().any(|&l| l == 0 || l > 3) {
            return Err(Error::InvalidConfig("perceptual layer ids must be in 1..=3".into()));
        }
        Ok(())
    }
}

/// Masked tone-mapped L1: `mean |(T(ŷ) - T(target)) * m|` over all samples.
/// Returns the loss and, when `with_grad`, `d(loss)/d(ŷ)`.
fn masked_l1(
    y_hat: &Array3<f64>,
    target: &Array3<f64>,
    mask: &Array3<f64>,
    cfg: &RadiometryConfig,
    with_grad: bool,
    context: &'static str,
) -> Result<(f64, Option<Array3<f64>>)> {
    check_same_shape(y_hat, target, context)?;
    check_same_shape(y_hat, mask, context)?;
    let n = y_hat.len() as f64;
    let mut total = 0.0;
    let mut grad = with_grad.then(|| Array3::zeros(y_hat.dim()));

    for ((idx, &y), (&t, &m)) in y_hat
        .indexed_iter()
        .zip(target.iter().zip(mask.iter()))
    {
        let yc = y.clamp(0.0, 1.0);
        let tc = t.clamp(0.0, 1.0);
        let diff = tonemap_value(yc, cfg) - tonemap_value(tc, cfg);
        total += (diff * m).abs();
        if let Some(g) = grad.as_mut() {
            // d|d·m|/dŷ = sign(d)·m·T'(ŷ); zero outside the clip range.
            let pass = (0.0..=1.0).contains(&y);
            if pass && diff != 0.0 {
                g[idx] = diff.signum() * m * tonemap_derivative(yc, cfg) / n;
            }
        }
    }
    Ok((total / n, grad))
}

/// Structure-preserving loss against the linear reference frame.
pub fn loss_sp(
    y_hat: &Array3<f64>,
    h2: &Array3<f64>,
    m_sp: &Mask,
    cfg: &RadiometryConfig,
) -> Result<f64> {
    Ok(masked_l1(y_hat, h2, &m_sp.values, cfg, false, "loss_sp")?.0)
}

pub fn loss_sp_grad(
    y_hat: &Array3<f64>,
    h2: &Array3<f64>,
    m_sp: &Mask,
    cfg: &RadiometryConfig,
) -> Result<(f64, Array3<f64>)> {
    let (v, g) = masked_l1(y_hat, h2, &m_sp.values, cfg, true, "loss_sp")?;
    Ok((v, g.expect("grad requested")))
}

/// Structure-expansion loss against the color component.
pub fn loss_se(
    y_hat: &Array3<f64>,
    y_color: &Array3<f64>,
    m_se: &Mask,
    cfg: &RadiometryConfig,
) -> Result<f64> {
    Ok(masked_l1(y_hat, y_color, &m_se.values, cfg, false, "loss_se")?.0)
}

pub fn loss_se_grad(
    y_hat: &Array3<f64>,
    y_color: &Array3<f64>,
    m_se: &Mask,
    cfg: &RadiometryConfig,
) -> Result<(f64, Array3<f64>)> {
    let (v, g) = masked_l1(y_hat, y_color, &m_se.values, cfg, true, "loss_se")?;
    Ok((v, g.expect("grad requested")))
}

/// Color-mapping loss against the color component.
pub fn loss_color(
    y_hat: &Array3<f64>,
    y_color: &Array3<f64>,
    m_color: &Mask,
    cfg: &RadiometryConfig,
) -> Result<f64> {
    Ok(masked_l1(y_hat, y_color, &m_color.values, cfg, false, "loss_color")?.0)
}

pub fn loss_color_grad(
    y_hat: &Array3<f64>,
    y_color: &Array3<f64>,
    m_color: &Mask,
    cfg: &RadiometryConfig,
) -> Result<(f64, Array3<f64>)> {
    let (v, g) = masked_l1(y_hat, y_color, &m_color.values, cfg, true, "loss_color")?;
    Ok((v, g.expect("grad requested")))
}

const EXTRACTOR_SEED: u64 = 0x7d0f_347b;
const EXTRACTOR_WIDTHS: [usize; 3] = [8, 16, 16];

/// Frozen three-stage convolutional feature pyramid for the perceptual loss.
/// Stage taps are at full, half and quarter resolution.
#[derive(Debug)]
pub struct FeatureExtractor {
    convs: [Conv2d; 3],
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::seeded(EXTRACTOR_SEED)
    }
}

struct ExtractorCache {
    x: Tensor,
    z: [Tensor; 3],
    a: [Tensor; 3],
    p: [Tensor; 2],
}

impl FeatureExtractor {
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let convs = [
            Conv2d::seeded(EXTRACTOR_WIDTHS[0], 3, 3, 1, &mut rng),
            Conv2d::seeded(EXTRACTOR_WIDTHS[1], EXTRACTOR_WIDTHS[0], 3, 1, &mut rng),
            Conv2d::seeded(EXTRACTOR_WIDTHS[2], EXTRACTOR_WIDTHS[1], 3, 1, &mut rng),
        ];
        Self { convs }
    }

    fn forward_cached(&self, x: &Tensor) -> ExtractorCache {
        let z1 = self.convs[0].forward(x);
        let a1 = nn::relu(&z1);
        let p1 = nn::avg_pool2(&a1);
        let z2 = self.convs[1].forward(&p1);
        let a2 = nn::relu(&z2);
        let p2 = nn::avg_pool2(&a2);
        let z3 = self.convs[2].forward(&p2);
        let a3 = nn::relu(&z3);
        ExtractorCache {
            x: x.clone(),
            z: [z1, z2, z3],
            a: [a1, a2, a3],
            p: [p1, p2],
        }
    }

    /// Feature maps at the three taps for a `(3, H, W)` input.
    pub fn features(&self, x: &Tensor) -> Vec<Tensor> {
        let c = self.forward_cached(x);
        c.a.to_vec()
    }

    /// The three convolution stages, exposed so tests can re-derive the
    /// pyramid independently.
    pub fn stages(&self) -> &[Conv2d; 3] {
        &self.convs
    }

    /// FNV-1a hash over the parameter bits; used to assert the extractor
    /// stays frozen across training phases.
    pub fn params_hash(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        for conv in &self.convs {
            for &v in conv.weight.iter().chain(conv.bias.iter()) {
                for b in v.to_le_bytes() {
                    h ^= b as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

/// Perceptual structure-mapping loss: `Σ_k mean |φ_k(T(ŷ)) - φ_k(T(y_stru))|`
/// over the configured taps.
pub fn loss_stru(
    y_hat: &Array3<f64>,
    y_stru: &Array3<f64>,
    extractor: &FeatureExtractor,
    loss_cfg: &LossConfig,
    cfg: &RadiometryConfig,
) -> Result<f64> {
    Ok(loss_stru_impl(y_hat, y_stru, extractor, loss_cfg, cfg, false)?.0)
}

pub fn loss_stru_grad(
    y_hat: &Array3<f64>,
    y_stru: &Array3<f64>,
    extractor: &FeatureExtractor,
    loss_cfg: &LossConfig,
    cfg: &RadiometryConfig,
) -> Result<(f64, Array3<f64>)> {
    let (v, g) = loss_stru_impl(y_hat, y_stru, extractor, loss_cfg, cfg, true)?;
    Ok((v, g.expect("grad requested")))
}

fn loss_stru_impl(
    y_hat: &Array3<f64>,
    y_stru: &Array3<f64>,
    extractor: &FeatureExtractor,
    loss_cfg: &LossConfig,
    cfg: &RadiometryConfig,
    with_grad: bool,
) -> Result<(f64, Option<Array3<f64>>)> {
    check_same_shape(y_hat, y_stru, "loss_stru")?;
    if y_hat.dim().2 != 3 {
        return Err(Error::InvalidInput(format!(
            "loss_stru expects 3-channel images, got {}",
            y_hat.dim().2
        )));
    }
    loss_cfg.validate()?;

    let tm_hat = hwc_to_chw(y_hat).mapv(|v| tonemap_value(v.clamp(0.0, 1.0), cfg));
    let tm_ref = hwc_to_chw(y_stru).mapv(|v| tonemap_value(v.clamp(0.0, 1.0), cfg));

    let cache_hat = extractor.forward_cached(&tm_hat);
    let cache_ref = extractor.forward_cached(&tm_ref);

    let tap_weight = |k: usize| -> f64 {
        if loss_cfg.perceptual_layers.contains(&(k + 1)) { 1.0 } else { 0.0 }
    };

    let mut total = 0.0;
    let mut tap_grads: Vec<Option<Tensor>> = vec![None, None, None];
    for (k, tap_grad) in tap_grads.iter_mut().enumerate() {
        let wk = tap_weight(k);
        if wk == 0.0 {
            continue;
        }
        let a = &cache_hat.a[k];
        let b = &cache_ref.a[k];
        let n = a.len() as f64;
        let mut sum = 0.0;
        for (&av, &bv) in a.iter().zip(b.iter()) {
            sum += (av - bv).abs();
        }
        total += wk * sum / n;
        if with_grad {
            let mut g = Tensor::zeros(a.dim());
            for ((idx, &av), &bv) in a.indexed_iter().zip(b.iter()) {
                if av != bv {
                    g[idx] = wk * (av - bv).signum() / n;
                }
            }
            *tap_grad = Some(g);
        }
    }

    let grad = if with_grad {
        // Walk the pyramid backwards, merging tap gradients as they appear.
        let zero3 = Tensor::zeros(cache_hat.a[2].dim());
        let da3 = tap_grads[2].clone().unwrap_or(zero3);
        let dz3 = nn::relu_backward(&cache_hat.z[2], &da3);
        let (dp2, _) = extractor.convs[2].backward(&cache_hat.p[1], &dz3);

        let (_, h2s, w2s) = cache_hat.a[1].dim();
        let mut da2 = nn::avg_pool2_backward(h2s, w2s, &dp2);
        if let Some(g) = &tap_grads[1] {
            da2 += g;
        }
        let dz2 = nn::relu_backward(&cache_hat.z[1], &da2);
        let (dp1, _) = extractor.convs[1].backward(&cache_hat.p[0], &dz2);

        let (_, h1s, w1s) = cache_hat.a[0].dim();
        let mut da1 = nn::avg_pool2_backward(h1s, w1s, &dp1);
        if let Some(g) = &tap_grads[0] {
            da1 += g;
        }
        let dz1 = nn::relu_backward(&cache_hat.z[0], &da1);
        let (dx, _) = extractor.convs[0].backward(&cache_hat.x, &dz1);

        // Chain through the tone map and clip.
        let mut g_hwc = chw_to_hwc(&dx);
        for (gv, &yv) in g_hwc.iter_mut().zip(y_hat.iter()) {
            if (0.0..=1.0).contains(&yv) {
                *gv *= tonemap_derivative(yv.clamp(0.0, 1.0), cfg);
            } else {
                *gv = 0.0;
            }
        }
        Some(g_hwc)
    } else {
        None
    };

    Ok((total, grad))
}

/// Structure-phase objective: `L_se + λ_sp · L_sp`.
pub fn objective_structure(
    y_hat: &Array3<f64>,
    y_color: &Array3<f64>,
    h2: &Array3<f64>,
    m_se: &Mask,
    m_sp: &Mask,
    loss_cfg: &LossConfig,
    cfg: &RadiometryConfig,
) -> Result<f64> {
    let se = loss_se(y_hat, y_color, m_se, cfg)?;
    let sp = loss_sp(y_hat, h2, m_sp, cfg)?;
    Ok(se + loss_cfg.lambda_sp * sp)
}

pub fn objective_structure_grad(
    y_hat: &Array3<f64>,
    y_color: &Array3<f64>,
    h2: &Array3<f64>,
    m_se: &Mask,
    m_sp: &Mask,
    loss_cfg: &LossConfig,
    cfg: &RadiometryConfig,
) -> Result<(f64, Array3<f64>)> {
    let (se, g_se) = loss_se_grad(y_hat, y_color, m_se, cfg)?;
    let (sp, g_sp) = loss_sp_grad(y_hat, h2, m_sp, cfg)?;
    Ok((se + loss_cfg.lambda_sp * sp, g_se + g_sp.mapv(|v| v * loss_cfg.lambda_sp)))
}

/// Reconstruction-phase objective: `L_color + λ_stru · L_stru`.
pub fn objective_reconstruction(
    y_hat: &Array3<f64>,
    y_color: &Array3<f64>,
    y_stru: &Array3<f64>,
    m_color: &Mask,
    extractor: &FeatureExtractor,
    loss_cfg: &LossConfig,
    cfg: &RadiometryConfig,
) -> Result<f64> {
    let color = loss_color(y_hat, y_color, m_color, cfg)?;
    let stru = loss_stru(y_hat, y_stru, extractor, loss_cfg, cfg)?;
    Ok(color + loss_cfg.lambda_stru * stru)
}

pub fn objective_reconstruction_grad(
    y_hat: &Array3<f64>,
    y_color: &Array3<f64>,
    y_stru: &Array3<f64>,
    m_color: &Mask,
    extractor: &FeatureExtractor,
    loss_cfg: &LossConfig,
    cfg: &RadiometryConfig,
) -> Result<(f64, Array3<f64>)> {
    let (color, g_color) = loss_color_grad(y_hat, y_color, m_color, cfg)?;
    let (stru, g_stru) = loss_stru_grad(y_hat, y_stru, extractor, loss_cfg, cfg)?;
    Ok((
        color + loss_cfg.lambda_stru * stru,
        g_color + g_stru.mapv(|v| v * loss_cfg.lambda_stru),
    ))
}
