//! Construction of the two supervision signals and their masks.
//!
//! The color component is the flow-aligned weighted merge of the linearized
//! exposures. The structure component is the structure-focused network run on
//! aligned inputs after training. The masks gate the losses: `M_sp` weights
//! well-exposed reference pixels, `M_se` keeps only pixels where the color
//! component agrees with the reference, and `M_color` keeps pixels where the
//! two components agree.
//!
//! Binary masks aggregate across channels with AND: a pixel must be
//! consistent in all three channels to stay in supervision.

use ndarray::Array3;

use crate::alignment::{align_stack, AlignedStack, FlowEstimatorSpec};
use crate::error::Error;
use crate::image::{check_same_shape, ExposureImage, HdrImage, HdrRole, LinearImage, Mask};
use crate::models::{Model, NetworkInput};
use crate::radiometry::{fuse_color, lambda_2, tonemap_value, RadiometryConfig};
use crate::Result;

/// Agreement thresholds for the binary masks, in tone-mapped units.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ThresholdConfig {
    pub sigma_se: f64,
    pub sigma_color: f64,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            sigma_se: 5.0 / 255.0,
            sigma_color: 10.0 / 255.0,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_se > 0.0 && self.sigma_color > 0.0) {
            return Err(Error::InvalidConfig(
                "mask thresholds must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Aligns the stack and fuses it into the color component. The aligned
/// tensors are returned for reuse when generating the structure component.
pub fn build_color_component(
    stack: &[ExposureImage; 3],
    flow_spec: &FlowEstimatorSpec,
    cfg: &RadiometryConfig,
) -> Result<(HdrImage, AlignedStack)> {
    let aligned = align_stack(stack, flow_spec, cfg)?;
    let y_color = fuse_color(&aligned.h1, &aligned.h2, &aligned.h3, &aligned.i2)?;
    Ok((y_color, aligned))
}

/// Soft well-exposedness mask: `Λ2(I_2)`.
pub fn mask_sp(i2: &ExposureImage) -> Mask {
    Mask { values: i2.pixels.mapv(lambda_2) }
}

/// Binary agreement mask between the color component and the reference frame,
/// weighted by well-exposedness: pixel `p` survives iff
/// `|(T(Y_color) - T(H_2)) * Λ2(I_2)| < σ_se` in every channel.
pub fn mask_se(
    y_color: &HdrImage,
    h2: &LinearImage,
    i2: &ExposureImage,
    cfg: &RadiometryConfig,
    thresholds: &ThresholdConfig,
) -> Result<Mask> {
    thresholds.validate()?;
    check_same_shape(&y_color.pixels, &h2.pixels, "mask_se")?;
    check_same_shape(&y_color.pixels, &i2.pixels, "mask_se")?;
    binary_mask(thresholds.sigma_se, &y_color.pixels, |idx| {
        let d = tonemap_value(y_color.pixels[idx].clamp(0.0, 1.0), cfg)
            - tonemap_value(h2.pixels[idx].clamp(0.0, 1.0), cfg);
        (d * lambda_2(i2.pixels[idx])).abs()
    })
}

/// Binary agreement mask between the two components: pixel `p` survives iff
/// `|T(Y_color) - T(Y_stru)| < σ_color` in every channel.
pub fn mask_color(
    y_color: &HdrImage,
    y_stru: &HdrImage,
    cfg: &RadiometryConfig,
    thresholds: &ThresholdConfig,
) -> Result<Mask> {
    thresholds.validate()?;
    check_same_shape(&y_color.pixels, &y_stru.pixels, "mask_color")?;
    binary_mask(thresholds.sigma_color, &y_color.pixels, |idx| {
        (tonemap_value(y_color.pixels[idx].clamp(0.0, 1.0), cfg)
            - tonemap_value(y_stru.pixels[idx].clamp(0.0, 1.0), cfg))
        .abs()
    })
}

fn binary_mask(
    sigma: f64,
    shape_like: &Array3<f64>,
    score: impl Fn((usize, usize, usize)) -> f64,
) -> Result<Mask> {
    let (h, w, c) = shape_like.dim();
    let mut values = Array3::zeros((h, w, c));
    for y in 0..h {
        for x in 0..w {
            let keep = (0..c).all(|ch| score((y, x, ch)) < sigma);
            if keep {
                for ch in 0..c {
                    values[[y, x, ch]] = 1.0;
                }
            }
        }
    }
    Ok(Mask { values })
}

/// Runs the trained structure-focused network on aligned inputs.
pub fn build_structure_component(model: &Model, aligned: &AlignedStack) -> Result<HdrImage> {
    let input = NetworkInput::from_aligned(aligned)?;
    let mut out = model.forward(&input)?;
    out.role = HdrRole::StructureComponent;
    Ok(out)
}

/// Component-fusion baseline: `M_color·Y_color + (1-M_color)·Y_stru`.
pub fn fuse_components_baseline(
    y_color: &HdrImage,
    y_stru: &HdrImage,
    cfg: &RadiometryConfig,
    thresholds: &ThresholdConfig,
) -> Result<HdrImage> {
    let m = mask_color(y_color, y_stru, cfg, thresholds)?;
    let mut out = Array3::zeros(y_color.pixels.dim());
    ndarray::Zip::from(&mut out)
        .and(&y_color.pixels)
        .and(&y_stru.pixels)
        .and(&m.values)
        .for_each(|o, &c, &s, &mv| {
            *o = mv * c + (1.0 - mv) * s;
        });
    HdrImage::new(out, HdrRole::Prediction)
}
