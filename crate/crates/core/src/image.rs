//! Image containers shared across the pipeline.
//!
//! All pixel data is stored as `ndarray::Array3<f64>` in `(H, W, C)` layout.
//! The containers encode which radiometric domain the values live in:
//! gamma-domain LDR frames ([`ExposureImage`]), exposure-normalized linear
//! radiance ([`LinearImage`]), and the normalized `[0,1]` HDR domain
//! ([`HdrImage`]). [`WeightMap`] and [`Mask`] hold per-pixel scalars in `[0,1]`.

use ndarray::Array3;

use crate::error::Error;
use crate::Result;

/// Role of an HDR image within the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HdrRole {
    ColorComponent,
    StructureComponent,
    Prediction,
    GroundTruth,
}

/// An LDR frame in `[0,1]` together with its exposure value in stops.
#[derive(Debug, Clone)]
pub struct ExposureImage {
    pub pixels: Array3<f64>,
    /// Exposure value in stops; exposure-time ratios are `2^Δev`.
    pub ev: f64,
    /// Source quantization (8 or 16 bits).
    pub bit_depth: u8,
}

/// A linear-domain radiance map normalized to a reference exposure.
///
/// Values are non-negative and bounded by `1/t_min` for the stack, where
/// `t_i = 2^(ev_i - reference_ev)`.
#[derive(Debug, Clone)]
pub struct LinearImage {
    pub pixels: Array3<f64>,
    pub reference_ev: f64,
}

/// An HDR image in the pipeline's normalized linear domain `[0,1]`.
#[derive(Debug, Clone)]
pub struct HdrImage {
    pub pixels: Array3<f64>,
    pub role: HdrRole,
}

/// Per-pixel blending weights in `[0,1]`.
#[derive(Debug, Clone)]
pub struct WeightMap {
    pub values: Array3<f64>,
}

/// Per-pixel mask; binary (`{0,1}`) for consistency masks, soft (`[0,1]`)
/// for the well-exposedness mask.
#[derive(Debug, Clone)]
pub struct Mask {
    pub values: Array3<f64>,
}

impl ExposureImage {
    /// Builds an LDR frame, validating the container invariants.
    pub fn new(pixels: Array3<f64>, ev: f64, bit_depth: u8) -> Result<Self> {
        validate_dims(&pixels, "ExposureImage")?;
        if !ev.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite ev {ev}")));
        }
        if bit_depth != 8 && bit_depth != 16 {
            return Err(Error::InvalidInput(format!(
                "unsupported bit depth {bit_depth} (expected 8 or 16)"
            )));
        }
        validate_range(&pixels, 0.0, 1.0, "ExposureImage")?;
        Ok(Self { pixels, ev, bit_depth })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        dims(&self.pixels)
    }
}

impl LinearImage {
    pub fn new(pixels: Array3<f64>, reference_ev: f64) -> Result<Self> {
        validate_dims(&pixels, "LinearImage")?;
        for &v in pixels.iter() {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "LinearImage pixel {v} outside [0, inf)"
                )));
            }
        }
        Ok(Self { pixels, reference_ev })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        dims(&self.pixels)
    }
}

impl HdrImage {
    pub fn new(pixels: Array3<f64>, role: HdrRole) -> Result<Self> {
        validate_dims(&pixels, "HdrImage")?;
        validate_range(&pixels, 0.0, 1.0, "HdrImage")?;
        Ok(Self { pixels, role })
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        dims(&self.pixels)
    }
}

impl WeightMap {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        validate_dims(&values, "WeightMap")?;
        validate_range(&values, 0.0, 1.0, "WeightMap")?;
        Ok(Self { values })
    }
}

impl Mask {
    pub fn new(values: Array3<f64>) -> Result<Self> {
        validate_dims(&values, "Mask")?;
        validate_range(&values, 0.0, 1.0, "Mask")?;
        Ok(Self { values })
    }

    /// True when every value is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.values.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

pub(crate) fn dims(a: &Array3<f64>) -> (usize, usize, usize) {
    let d = a.dim();
    (d.0, d.1, d.2)
}

pub(crate) fn validate_dims(a: &Array3<f64>, what: &str) -> Result<()> {
    let (h, w, _c) = dims(a);
    if h == 0 || w == 0 {
        return Err(Error::InvalidInput(format!("{what} has empty spatial dims")));
    }
    Ok(())
}

pub(crate) fn validate_range(a: &Array3<f64>, lo: f64, hi: f64, what: &str) -> Result<()> {
    for &v in a.iter() {
        if !v.is_finite() || v < lo || v > hi {
            return Err(Error::InvalidInput(format!(
                "{what} pixel {v} outside [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}

/// Errors unless `a` and `b` have identical `(H, W, C)` dims.
pub(crate) fn check_same_shape(
    a: &Array3<f64>,
    b: &Array3<f64>,
    context: &'static str,
) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::ShapeMismatch {
            context,
            expected: dims(a),
            got: dims(b),
        });
    }
    Ok(())
}
