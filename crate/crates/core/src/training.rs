//! Two-phase training orchestration.
//!
//! Phase one trains the structure-focused network on original (unaligned)
//! stacks against the color component and the reference frame. Phase two
//! trains the reconstruction network against the color and structure
//! components. Supervision is precomputed at full resolution and cropped
//! jointly with the inputs; batch order is a pure function of the seed.

use std::time::Instant;

use ndarray::{s, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::alignment::{AlignedStack, FlowEstimatorSpec};
use crate::data::scene::Scene;
use crate::error::Error;
use crate::image::{ExposureImage, HdrImage, LinearImage, Mask};
use crate::losses::{
    objective_reconstruction_grad, objective_structure_grad, FeatureExtractor, LossConfig,
};
use crate::models::{build_model, chw_to_hwc, hwc_to_chw, Model, ModelSpec, NetworkInput};
use crate::radiometry::{linearize, RadiometryConfig};
use crate::supervision::{
    build_color_component, build_structure_component, mask_color, mask_se, mask_sp,
    ThresholdConfig,
};
use crate::Result;

/// Hyperparameters for one training phase.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub patch_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    /// Optimizer steps per epoch; 0 means one pass over the scene list.
    pub steps_per_epoch: usize,
    pub lr0: f64,
    pub lr_halving_period: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    /// Random dihedral flips of training patches; off by default.
    pub augment: bool,
    pub loss: LossConfig,
    pub thresholds: ThresholdConfig,
    pub radiometry: RadiometryConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            patch_size: 128,
            batch_size: 16,
            epochs: 150,
            steps_per_epoch: 0,
            lr0: 1e-4,
            lr_halving_period: 50,
            beta1: 0.9,
            beta2: 0.999,
            seed: 0,
            augment: false,
            loss: LossConfig::default(),
            thresholds: ThresholdConfig::default(),
            radiometry: RadiometryConfig::default(),
        }
    }
}

impl TrainConfig {
    /// Desk-scale configuration used by the toy pipeline and the test suite.
    pub fn desk_scale() -> Self {
        Self {
            patch_size: 64,
            batch_size: 4,
            epochs: 30,
            steps_per_epoch: 10,
            lr0: 1e-2,
            lr_halving_period: 10,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidConfig(
                "patch_size, batch_size and epochs must be positive".into(),
            ));
        }
        if self.lr_halving_period == 0 {
            return Err(Error::InvalidConfig("lr_halving_period must be positive".into()));
        }
        if self.lr0.is_nan() || self.lr0 <= 0.0 {
            return Err(Error::InvalidConfig("lr0 must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("adam betas must be in [0, 1)".into()));
        }
        self.loss.validate()?;
        self.thresholds.validate()?;
        self.radiometry.validate()
    }
}

/// Step-decayed learning rate: `lr0 · 0.5^floor(epoch / period)`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.lr0 * 0.5f64.powi((epoch / cfg.lr_halving_period) as i32)
}

/// Summary of one finished phase.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PhaseReport {
    pub phase: String,
    pub epochs: usize,
    /// Mean training objective per epoch; length equals `epochs`.
    pub loss_curve: Vec<f64>,
    /// Mean tone-mapped PSNR on the validation split, when one was given.
    pub final_psnr_u: Option<f64>,
    pub checkpoint: Option<std::path::PathBuf>,
    pub wall_time_seconds: f64,
    pub seed: u64,
}

/// One scene with its full-resolution supervision artifacts.
#[derive(Debug, Clone)]
pub struct TrainingSample {
    pub id: String,
    pub frames: [ExposureImage; 3],
    /// Originals linearized against the reference ev.
    pub linear: [LinearImage; 3],
    pub aligned: AlignedStack,
    pub y_color: HdrImage,
    pub m_sp: Mask,
    pub m_se: Mask,
    pub y_stru: Option<HdrImage>,
    pub m_color: Option<Mask>,
}

/// Builds the phase-one supervision (color component and masks) for a scene.
pub fn prepare_sample(
    scene: &Scene,
    flow_spec: &FlowEstimatorSpec,
    cfg: &RadiometryConfig,
    thresholds: &ThresholdConfig,
) -> Result<TrainingSample> {
    let (y_color, aligned) = build_color_component(&scene.frames, flow_spec, cfg)?;
    let reference_ev = scene.frames[1].ev;
    let linear = [
        linearize(&scene.frames[0], reference_ev, cfg)?,
        linearize(&scene.frames[1], reference_ev, cfg)?,
        linearize(&scene.frames[2], reference_ev, cfg)?,
    ];
    let m_sp = mask_sp(&scene.frames[1]);
    let m_se = mask_se(&y_color, &aligned.h2, &scene.frames[1], cfg, thresholds)?;
    Ok(TrainingSample {
        id: scene.id.clone(),
        frames: scene.frames.clone(),
        linear,
        aligned,
        y_color,
        m_sp,
        m_se,
        y_stru: None,
        m_color: None,
    })
}

/// Runs the trained structure network over every sample, storing `Y_stru`
/// and the component-agreement mask for phase two.
pub fn attach_structure_supervision(
    samples: &mut [TrainingSample],
    structure_model: &Model,
    cfg: &RadiometryConfig,
    thresholds: &ThresholdConfig,
) -> Result<()> {
    for s in samples.iter_mut() {
        let y_stru = build_structure_component(structure_model, &s.aligned)?;
        let m_color = mask_color(&s.y_color, &y_stru, cfg, thresholds)?;
        s.y_stru = Some(y_stru);
        s.m_color = Some(m_color);
    }
    Ok(())
}

fn crop(a: &Array3<f64>, y0: usize, x0: usize, size: usize) -> Array3<f64> {
    a.slice(s![y0..y0 + size, x0..x0 + size, ..]).to_owned()
}

/// Dihedral patch transform selected by three bits.
fn dihedral(a: &Array3<f64>, code: u8) -> Array3<f64> {
    let mut out = a.clone();
    if code & 1 != 0 {
        out = out.slice(s![.., ..;-1, ..]).to_owned();
    }
    if code & 2 != 0 {
        out = out.slice(s![..;-1, .., ..]).to_owned();
    }
    if code & 4 != 0 {
        out = out.permuted_axes([1, 0, 2]).as_standard_layout().to_owned();
    }
    out
}

/// Uniform top-left corner over the croppable region.
fn sample_corner(rng: &mut ChaCha8Rng, h: usize, w: usize, patch: usize) -> (usize, usize) {
    let y = if h > patch { rng.gen_range(0..=h - patch) } else { 0 };
    let x = if w > patch { rng.gen_range(0..=w - patch) } else { 0 };
    (y, x)
}

/// SplitMix64; derives per-epoch RNG streams from the master seed.
fn derive_seed(seed: u64, phase: u64, epoch: u64) -> u64 {
    let mut z = seed ^ phase.wrapping_mul(0x9E3779B97F4A7C15) ^ epoch.wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    eps: f64,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], t: 0, eps: 1e-8 }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, beta1: f64, beta2: f64) {
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * g;
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Which objective a phase optimizes.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Phase {
    Structure,
    Reconstruction,
}

struct PatchTargets {
    input: NetworkInput,
    y_color: Array3<f64>,
    h2: Array3<f64>,
    m_se: Mask,
    m_sp: Mask,
    y_stru: Option<Array3<f64>>,
    m_color: Option<Mask>,
}

fn cut_patch(
    sample: &TrainingSample,
    y0: usize,
    x0: usize,
    size: usize,
    code: u8,
    phase: Phase,
) -> Result<PatchTargets> {
    let tf = |a: &Array3<f64>| -> Array3<f64> { dihedral(&crop(a, y0, x0, size), code) };

    let input = NetworkInput::from_pairs([
        (&tf(&sample.frames[0].pixels), &tf(&sample.linear[0].pixels)),
        (&tf(&sample.frames[1].pixels), &tf(&sample.linear[1].pixels)),
        (&tf(&sample.frames[2].pixels), &tf(&sample.linear[2].pixels)),
    ])?;

    let (y_stru, m_color) = if phase == Phase::Reconstruction {
        let y_stru = sample.y_stru.as_ref().ok_or_else(|| {
            Error::InvalidInput(format!(
                "scene {} has no structure component; run the structure phase first",
                sample.id
            ))
        })?;
        let m_color = sample.m_color.as_ref().expect("m_color accompanies y_stru");
        (Some(tf(&y_stru.pixels)), Some(Mask { values: tf(&m_color.values) }))
    } else {
        (None, None)
    };

    Ok(PatchTargets {
        input,
        y_color: tf(&sample.y_color.pixels),
        h2: tf(&sample.aligned.h2.pixels),
        m_se: Mask { values: tf(&sample.m_se.values) },
        m_sp: Mask { values: tf(&sample.m_sp.values) },
        y_stru,
        m_color,
    })
}

fn run_phase(
    samples: &[TrainingSample],
    validation: Option<&[Scene]>,
    model_spec: &ModelSpec,
    cfg: &TrainConfig,
    phase: Phase,
) -> Result<(Model, PhaseReport)> {
    cfg.validate()?;
    model_spec.validate()?;
    if samples.is_empty() {
        return Err(Error::InvalidInput("training needs at least one scene".into()));
    }
    for s in samples {
        let (h, w, _) = s.frames[0].shape();
        if cfg.patch_size > h.min(w) {
            return Err(Error::InvalidConfig(format!(
                "patch size {} exceeds scene {} dims {h}x{w}",
                cfg.patch_size, s.id
            )));
        }
    }

    let start = Instant::now();
    let phase_id = match phase {
        Phase::Structure => 1u64,
        Phase::Reconstruction => 2u64,
    };
    let extractor = FeatureExtractor::default();
    let mut model = build_model(model_spec)?;
    let mut params = model.params_flat();
    let mut adam = Adam::new(params.len());

    let steps = if cfg.steps_per_epoch > 0 {
        cfg.steps_per_epoch
    } else {
        samples.len().div_ceil(cfg.batch_size)
    };

    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, phase_id, epoch as u64));
        let mut epoch_loss = 0.0;

        for _ in 0..steps {
            let mut grad_sum: Option<Vec<f64>> = None;
            let mut loss_sum = 0.0;
            for _ in 0..cfg.batch_size {
                let sample = &samples[rng.gen_range(0..samples.len())];
                let (h, w, _) = sample.frames[0].shape();
                let (y0, x0) = sample_corner(&mut rng, h, w, cfg.patch_size);
                let code = if cfg.augment { rng.gen_range(0..8u8) } else { 0 };
                let patch = cut_patch(sample, y0, x0, cfg.patch_size, code, phase)?;

                let cache = model.forward_cached(&patch.input);
                let y_hwc = chw_to_hwc(&cache.y);
                let (loss, grad_hwc) = match phase {
                    Phase::Structure => objective_structure_grad(
                        &y_hwc,
                        &patch.y_color,
                        &patch.h2,
                        &patch.m_se,
                        &patch.m_sp,
                        &cfg.loss,
                        &cfg.radiometry,
                    )?,
                    Phase::Reconstruction => objective_reconstruction_grad(
                        &y_hwc,
                        &patch.y_color,
                        patch.y_stru.as_ref().expect("validated above"),
                        patch.m_color.as_ref().expect("validated above"),
                        &extractor,
                        &cfg.loss,
                        &cfg.radiometry,
                    )?,
                };
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite objective at epoch {epoch}"
                    )));
                }
                loss_sum += loss;
                let grads = model.backward(&cache, &hwc_to_chw(&grad_hwc)).to_flat();
                match grad_sum.as_mut() {
                    None => grad_sum = Some(grads),
                    Some(acc) => {
                        for (a, g) in acc.iter_mut().zip(grads.iter()) {
                            *a += g;
                        }
                    }
                }
            }
            let mut grads = grad_sum.expect("non-empty batch");
            let scale = 1.0 / cfg.batch_size as f64;
            for g in &mut grads {
                *g *= scale;
            }
            adam.step(&mut params, &grads, lr, cfg.beta1, cfg.beta2);
            model.set_params_flat(&params)?;
            epoch_loss += loss_sum * scale;
        }
        loss_curve.push(epoch_loss / steps as f64);
    }

    let final_psnr_u = match validation {
        Some(scenes) if !scenes.is_empty() => {
            Some(validation_psnr_u(&model, scenes, &cfg.radiometry)?)
        }
        _ => None,
    };

    let report = PhaseReport {
        phase: match phase {
            Phase::Structure => "structure".into(),
            Phase::Reconstruction => "reconstruction".into(),
        },
        epochs: cfg.epochs,
        loss_curve,
        final_psnr_u,
        checkpoint: None,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        seed: cfg.seed,
    };
    Ok((model, report))
}

fn validation_psnr_u(model: &Model, scenes: &[Scene], cfg: &RadiometryConfig) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for scene in scenes {
        let Some(gt) = &scene.gt else { continue };
        let pred = infer(model, &scene.frames, cfg)?;
        total += crate::metrics::psnr_u(&pred.pixels, &gt.pixels, cfg)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidInput("validation scenes carry no ground truth".into()));
    }
    Ok(total / n as f64)
}

/// Trains the structure-focused network on original stacks under the color
/// component and reference-frame supervision.
pub fn train_structure_phase(
    samples: &[TrainingSample],
    validation: Option<&[Scene]>,
    model_spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<(Model, PhaseReport)> {
    run_phase(samples, validation, model_spec, cfg, Phase::Structure)
}

/// Trains the reconstruction network under the color and structure
/// components. `structure_model` fills in missing structure supervision and
/// is never updated.
pub fn train_reconstruction_phase(
    samples: &mut [TrainingSample],
    structure_model: Option<&Model>,
    validation: Option<&[Scene]>,
    model_spec: &ModelSpec,
    cfg: &TrainConfig,
) -> Result<(Model, PhaseReport)> {
    if samples.iter().any(|s| s.y_stru.is_none()) {
        match structure_model {
            Some(m) => {
                attach_structure_supervision(samples, m, &cfg.radiometry, &cfg.thresholds)?
            }
            None => {
                return Err(Error::InvalidInput(
                    "structure supervision missing and no structure model given".into(),
                ))
            }
        }
    }
    run_phase(samples, validation, model_spec, cfg, Phase::Reconstruction)
}

/// Test-time inference: a single forward pass on the raw stack, no flow.
pub fn infer(model: &Model, stack: &[ExposureImage; 3], cfg: &RadiometryConfig) -> Result<HdrImage> {
    let input = NetworkInput::from_stack(stack, cfg)?;
    model.forward(&input)
}
