//! Network interface shared by the structure-focused and reconstruction
//! networks, plus the shipped compact attention-guided merging CNN.
//!
//! Each frame is encoded by a shared two-layer feature extractor; the
//! non-reference features are gated by sigmoid attention maps computed
//! against the reference features; a trunk of dilated residual blocks merges
//! everything. The output sigmoid is anchored by a global residual at the
//! reference frame's linear values (in logit space), so the trunk predicts
//! corrections to the reference exposure rather than absolute radiance.

mod checkpoint;

pub use checkpoint::{load_params, load_params_expecting, save_params};

use ndarray::Array3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alignment::AlignedStack;
use crate::error::Error;
use crate::image::{ExposureImage, HdrImage, HdrRole};
use crate::nn::{self, Conv2d, Conv2dGrad, Tensor};
use crate::radiometry::{linearize, RadiometryConfig};
use crate::Result;

/// Architecture selector. One compact CNN ships; the id keeps checkpoints
/// self-describing so heavier backbones can slot in behind the same interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    AttentionMergeCnn,
}

/// Constructive description of a model; two specs with the same fields build
/// bit-identical networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub architecture: Architecture,
    pub base_width: usize,
    pub blocks: usize,
    pub attention: bool,
    pub param_seed: u64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            architecture: Architecture::AttentionMergeCnn,
            base_width: 8,
            blocks: 2,
            attention: true,
            param_seed: 0,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.base_width < 4 {
            return Err(Error::InvalidConfig(format!(
                "base_width must be >= 4, got {}",
                self.base_width
            )));
        }
        if self.blocks < 1 {
            return Err(Error::InvalidConfig(format!(
                "blocks must be >= 1, got {}",
                self.blocks
            )));
        }
        Ok(())
    }
}

/// Three per-frame tensors `X_i`, each `6 x H x W`: gamma-domain channels
/// first, linear channels second, all in `[0,1]`.
#[derive(Debug, Clone)]
pub struct NetworkInput {
    pub frames: [Tensor; 3],
}

impl NetworkInput {
    /// Builds inputs from gamma/linear image pairs in `(H, W, C)` layout.
    /// Linear values are clamped to `[0,1]` (the network's HDR domain).
    pub fn from_pairs(pairs: [(&Array3<f64>, &Array3<f64>); 3]) -> Result<Self> {
        let dim = pairs[0].0.dim();
        let mut frames = Vec::with_capacity(3);
        for (gamma, linear) in pairs {
            if gamma.dim() != dim || linear.dim() != dim {
                return Err(Error::ShapeMismatch {
                    context: "NetworkInput",
                    expected: (dim.0, dim.1, dim.2),
                    got: {
                        let d = if gamma.dim() != dim { gamma.dim() } else { linear.dim() };
                        (d.0, d.1, d.2)
                    },
                });
            }
            if dim.2 != 3 {
                return Err(Error::InvalidInput(format!(
                    "NetworkInput expects 3-channel images, got {}",
                    dim.2
                )));
            }
            let (h, w, _) = dim;
            let mut t = Array3::zeros((6, h, w));
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        t[[c, y, x]] = gamma[[y, x, c]].clamp(0.0, 1.0);
                        t[[c + 3, y, x]] = linear[[y, x, c]].clamp(0.0, 1.0);
                    }
                }
            }
            frames.push(t);
        }
        let frames: [Tensor; 3] = frames.try_into().expect("three frames");
        Ok(Self { frames })
    }

    /// Inputs from an original (unaligned) stack; linearization is anchored
    /// to the reference exposure.
    pub fn from_stack(stack: &[ExposureImage; 3], cfg: &RadiometryConfig) -> Result<Self> {
        let reference_ev = stack[1].ev;
        let h1 = linearize(&stack[0], reference_ev, cfg)?;
        let h2 = linearize(&stack[1], reference_ev, cfg)?;
        let h3 = linearize(&stack[2], reference_ev, cfg)?;
        Self::from_pairs([
            (&stack[0].pixels, &h1.pixels),
            (&stack[1].pixels, &h2.pixels),
            (&stack[2].pixels, &h3.pixels),
        ])
    }

    /// Inputs from flow-aligned tensors.
    pub fn from_aligned(aligned: &AlignedStack) -> Result<Self> {
        Self::from_pairs([
            (&aligned.i1.pixels, &aligned.h1.pixels),
            (&aligned.i2.pixels, &aligned.h2.pixels),
            (&aligned.i3.pixels, &aligned.h3.pixels),
        ])
    }

    pub fn spatial_shape(&self) -> (usize, usize) {
        let d = self.frames[0].dim();
        (d.1, d.2)
    }
}

#[derive(Debug)]
struct AttentionHead {
    reduce: Conv2d,
    project: Conv2d,
}

#[derive(Debug)]
struct ResBlock {
    c1: Conv2d,
    c2: Conv2d,
}

/// The shipped merging CNN. Fully convolutional with downsampling factor 1.
#[derive(Debug)]
pub struct Model {
    pub spec: ModelSpec,
    enc1: Conv2d,
    enc2: Conv2d,
    attention: Option<[AttentionHead; 2]>,
    merge_in: Conv2d,
    blocks: Vec<ResBlock>,
    fuse: Conv2d,
    out: Conv2d,
}

/// Builds a model with deterministic seeded parameters.
pub fn build_model(spec: &ModelSpec) -> Result<Model> {
    spec.validate()?;
    let w = spec.base_width;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.param_seed);
    let enc1 = Conv2d::seeded(w, 6, 3, 1, &mut rng);
    let enc2 = Conv2d::seeded(w, w, 3, 1, &mut rng);
    let attention = if spec.attention {
        let mk = |rng: &mut ChaCha8Rng| AttentionHead {
            reduce: Conv2d::seeded(w, 2 * w, 3, 1, rng),
            project: Conv2d::seeded(w, w, 3, 1, rng),
        };
        Some([mk(&mut rng), mk(&mut rng)])
    } else {
        None
    };
    let merge_in = Conv2d::seeded(w, 3 * w, 3, 1, &mut rng);
    let blocks = (0..spec.blocks)
        .map(|_| ResBlock {
            c1: Conv2d::seeded(w, w, 3, 2, &mut rng),
            c2: Conv2d::seeded(w, w, 3, 2, &mut rng),
        })
        .collect();
    let fuse = Conv2d::seeded(w, w, 3, 1, &mut rng);
    let out = Conv2d::seeded(3, w, 3, 1, &mut rng);
    Ok(Model {
        spec: *spec,
        enc1,
        enc2,
        attention,
        merge_in,
        blocks,
        fuse,
        out,
    })
}

struct EncCache {
    x: Tensor,
    z1: Tensor,
    a1: Tensor,
    z2: Tensor,
    f: Tensor,
}

struct AttCache {
    cat: Tensor,
    za: Tensor,
    aa: Tensor,
    att: Tensor,
}

struct BlockCache {
    m_in: Tensor,
    z1: Tensor,
    t1: Tensor,
    zsum: Tensor,
}

/// Intermediate activations retained for the backward pass.
pub struct ForwardCache {
    enc: Vec<EncCache>,
    att: Option<Vec<AttCache>>,
    cat_all: Tensor,
    z_m0: Tensor,
    blocks: Vec<BlockCache>,
    m_final: Tensor,
    z_fuse: Tensor,
    u: Tensor,
    /// Network output in `(3, H, W)` layout.
    pub y: Tensor,
}

/// Parameter gradients mirroring the model structure.
pub struct ModelGrad {
    enc1: Conv2dGrad,
    enc2: Conv2dGrad,
    attention: Option<Vec<(Conv2dGrad, Conv2dGrad)>>,
    merge_in: Conv2dGrad,
    blocks: Vec<(Conv2dGrad, Conv2dGrad)>,
    fuse: Conv2dGrad,
    out: Conv2dGrad,
}

impl ModelGrad {
    pub fn accumulate(&mut self, other: &ModelGrad) {
        self.enc1.accumulate(&other.enc1);
        self.enc2.accumulate(&other.enc2);
        if let (Some(a), Some(b)) = (self.attention.as_mut(), other.attention.as_ref()) {
            for (ga, gb) in a.iter_mut().zip(b.iter()) {
                ga.0.accumulate(&gb.0);
                ga.1.accumulate(&gb.1);
            }
        }
        self.merge_in.accumulate(&other.merge_in);
        for (ga, gb) in self.blocks.iter_mut().zip(other.blocks.iter()) {
            ga.0.accumulate(&gb.0);
            ga.1.accumulate(&gb.1);
        }
        self.fuse.accumulate(&other.fuse);
        self.out.accumulate(&other.out);
    }

    pub fn scale(&mut self, s: f64) {
        self.enc1.scale(s);
        self.enc2.scale(s);
        if let Some(a) = self.attention.as_mut() {
            for g in a.iter_mut() {
                g.0.scale(s);
                g.1.scale(s);
            }
        }
        self.merge_in.scale(s);
        for g in self.blocks.iter_mut() {
            g.0.scale(s);
            g.1.scale(s);
        }
        self.fuse.scale(s);
        self.out.scale(s);
    }

    /// Flattens gradients in the model's canonical parameter order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        let mut push = |g: &Conv2dGrad| {
            out.extend_from_slice(g.weight.as_slice().unwrap());
            out.extend_from_slice(g.bias.as_slice().unwrap());
        };
        push(&self.enc1);
        push(&self.enc2);
        if let Some(a) = &self.attention {
            for (ga, gb) in a {
                push(ga);
                push(gb);
            }
        }
        push(&self.merge_in);
        for (g1, g2) in &self.blocks {
            push(g1);
            push(g2);
        }
        push(&self.fuse);
        push(&self.out);
        out
    }
}

impl Model {
    fn layers(&self) -> Vec<&Conv2d> {
        let mut v = vec![&self.enc1, &self.enc2];
        if let Some(att) = &self.attention {
            for head in att {
                v.push(&head.reduce);
                v.push(&head.project);
            }
        }
        v.push(&self.merge_in);
        for b in &self.blocks {
            v.push(&b.c1);
            v.push(&b.c2);
        }
        v.push(&self.fuse);
        v.push(&self.out);
        v
    }

    fn layers_mut(&mut self) -> Vec<&mut Conv2d> {
        let mut v: Vec<&mut Conv2d> = vec![&mut self.enc1, &mut self.enc2];
        if let Some(att) = &mut self.attention {
            for head in att.iter_mut() {
                v.push(&mut head.reduce);
                v.push(&mut head.project);
            }
        }
        v.push(&mut self.merge_in);
        for b in &mut self.blocks {
            v.push(&mut b.c1);
            v.push(&mut b.c2);
        }
        v.push(&mut self.fuse);
        v.push(&mut self.out);
        v
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|l| l.param_count()).sum()
    }

    /// Canonical flattened parameter vector (checkpoints, optimizers).
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in self.layers() {
            out.extend_from_slice(l.weight.as_slice().unwrap());
            out.extend_from_slice(l.bias.as_slice().unwrap());
        }
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::CheckpointMismatch(format!(
                "parameter count {} does not match model's {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        for l in self.layers_mut() {
            let wlen = l.weight.len();
            l.weight
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(&flat[offset..offset + wlen]);
            offset += wlen;
            let blen = l.bias.len();
            l.bias
                .as_slice_mut()
                .unwrap()
                .copy_from_slice(&flat[offset..offset + blen]);
            offset += blen;
        }
        Ok(())
    }

    /// Raw forward pass on `(C,H,W)` tensors, keeping the activations needed
    /// for backprop.
    pub fn forward_cached(&self, input: &NetworkInput) -> ForwardCache {
        let run_enc = |x: &Tensor| {
            let z1 = self.enc1.forward(x);
            let a1 = nn::relu(&z1);
            let z2 = self.enc2.forward(&a1);
            let f = nn::relu(&z2);
            EncCache { x: x.clone(), z1, a1, z2, f }
        };
        let enc: Vec<EncCache> = input.frames.iter().map(run_enc).collect();

        let (gated, att_caches) = if let Some(heads) = &self.attention {
            let mut caches = Vec::with_capacity(2);
            let mut gated = Vec::with_capacity(2);
            for (head, idx) in heads.iter().zip([0usize, 2]) {
                let cat = nn::concat_channels(&[&enc[idx].f, &enc[1].f]);
                let za = head.reduce.forward(&cat);
                let aa = nn::relu(&za);
                let zb = head.project.forward(&aa);
                let att = nn::sigmoid(&zb);
                gated.push(&enc[idx].f * &att);
                caches.push(AttCache { cat, za, aa, att });
            }
            (gated, Some(caches))
        } else {
            (vec![enc[0].f.clone(), enc[2].f.clone()], None)
        };

        let cat_all = nn::concat_channels(&[&gated[0], &enc[1].f, &gated[1]]);
        let z_m0 = self.merge_in.forward(&cat_all);
        let mut m = nn::relu(&z_m0);

        let mut blocks = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let z1 = b.c1.forward(&m);
            let t1 = nn::relu(&z1);
            let t2 = b.c2.forward(&t1);
            let zsum = &m + &t2;
            let m_out = nn::relu(&zsum);
            blocks.push(BlockCache { m_in: m, z1, t1, zsum });
            m = m_out;
        }

        let z_fuse = self.fuse.forward(&m);
        let u = nn::relu(&z_fuse);
        let z_out = self.out.forward(&u);
        // Global residual: anchor output logits at the reference frame's
        // linear channels so dark and bright targets are reachable early.
        let anchor = input.frames[1]
            .slice(ndarray::s![3..6, .., ..])
            .mapv(|v| {
                let p = v.clamp(1e-4, 1.0 - 1e-4);
                (p / (1.0 - p)).ln()
            });
        let y = nn::sigmoid(&(&z_out + &anchor));

        ForwardCache {
            enc,
            att: att_caches,
            cat_all,
            z_m0,
            blocks,
            m_final: m,
            z_fuse,
            u,
            y,
        }
    }

    /// Backward pass for `d(loss)/d(output)`; returns parameter gradients.
    pub fn backward(&self, cache: &ForwardCache, grad_y: &Tensor) -> ModelGrad {
        let w = self.spec.base_width;

        let dz_out = nn::sigmoid_backward(&cache.y, grad_y);
        let (du, g_out) = self.out.backward(&cache.u, &dz_out);
        let dz_fuse = nn::relu_backward(&cache.z_fuse, &du);
        let (mut dm, g_fuse) = self.fuse.backward(&cache.m_final, &dz_fuse);

        let mut g_blocks_rev = Vec::with_capacity(self.blocks.len());
        for (b, c) in self.blocks.iter().zip(cache.blocks.iter()).rev() {
            let dzsum = nn::relu_backward(&c.zsum, &dm);
            let (dt1, g_c2) = b.c2.backward(&c.t1, &dzsum);
            let dz1 = nn::relu_backward(&c.z1, &dt1);
            let (dm_conv, g_c1) = b.c1.backward(&c.m_in, &dz1);
            dm = &dzsum + &dm_conv;
            g_blocks_rev.push((g_c1, g_c2));
        }
        g_blocks_rev.reverse();

        let dz_m0 = nn::relu_backward(&cache.z_m0, &dm);
        let (dcat, g_merge) = self.merge_in.backward(&cache.cat_all, &dz_m0);
        let parts = nn::split_channels(&dcat, &[w, w, w]);
        let (dg0, mut df_ref, dg2) = (parts[0].clone(), parts[1].clone(), parts[2].clone());

        let mut df = [dg0, Tensor::zeros(df_ref.dim()), dg2];
        let g_att = if let (Some(heads), Some(att)) = (&self.attention, &cache.att) {
            let mut grads = Vec::with_capacity(2);
            for (k, (head, c)) in heads.iter().zip(att.iter()).enumerate() {
                let idx = if k == 0 { 0 } else { 2 };
                let dgated = df[idx].clone();
                // gated = f * att
                let datt = &dgated * &cache.enc[idx].f;
                let df_direct = &dgated * &c.att;
                let dzb = nn::sigmoid_backward(&c.att, &datt);
                let (daa, g_project) = head.project.backward(&c.aa, &dzb);
                let dza = nn::relu_backward(&c.za, &daa);
                let (dcat_att, g_reduce) = head.reduce.backward(&c.cat, &dza);
                let att_parts = nn::split_channels(&dcat_att, &[w, w]);
                df[idx] = &df_direct + &att_parts[0];
                df_ref += &att_parts[1];
                grads.push((g_reduce, g_project));
            }
            Some(grads)
        } else {
            None
        };
        df[1] = df_ref;

        let mut g_enc1 = self.enc1.zeros_like();
        let mut g_enc2 = self.enc2.zeros_like();
        for (c, dfi) in cache.enc.iter().zip(df.iter()) {
            let dz2 = nn::relu_backward(&c.z2, dfi);
            let (da1, g2) = self.enc2.backward(&c.a1, &dz2);
            let dz1 = nn::relu_backward(&c.z1, &da1);
            let (_dx, g1) = self.enc1.backward(&c.x, &dz1);
            g_enc1.accumulate(&g1);
            g_enc2.accumulate(&g2);
        }

        ModelGrad {
            enc1: g_enc1,
            enc2: g_enc2,
            attention: g_att,
            merge_in: g_merge,
            blocks: g_blocks_rev,
            fuse: g_fuse,
            out: g_out,
        }
    }

    /// Inference: maps a [`NetworkInput`] to an HDR prediction in `[0,1]`.
    pub fn forward(&self, input: &NetworkInput) -> Result<HdrImage> {
        let cache = self.forward_cached(input);
        let (h, w) = input.spatial_shape();
        let mut out = Array3::zeros((h, w, 3));
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    out[[y, x, c]] = cache.y[[c, y, x]];
                }
            }
        }
        HdrImage::new(out, HdrRole::Prediction)
    }

    /// Forward pass exposing the attention maps for inspection; maps are
    /// empty when attention is disabled.
    pub fn forward_instrumented(&self, input: &NetworkInput) -> (HdrImage, Vec<Tensor>) {
        let cache = self.forward_cached(input);
        let maps = cache
            .att
            .as_ref()
            .map(|a| a.iter().map(|c| c.att.clone()).collect())
            .unwrap_or_default();
        let (h, w) = input.spatial_shape();
        let mut out = Array3::zeros((h, w, 3));
        for c in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    out[[y, x, c]] = cache.y[[c, y, x]];
                }
            }
        }
        (HdrImage::new(out, HdrRole::Prediction).expect("sigmoid output in range"), maps)
    }
}

/// Converts a `(H, W, C)` image to the network's `(C, H, W)` layout.
pub fn hwc_to_chw(img: &Array3<f64>) -> Tensor {
    let (h, w, c) = img.dim();
    Array3::from_shape_fn((c, h, w), |(ci, y, x)| img[[y, x, ci]])
}

/// Converts a `(C, H, W)` tensor back to `(H, W, C)` image layout.
pub fn chw_to_hwc(t: &Tensor) -> Array3<f64> {
    let (c, h, w) = t.dim();
    Array3::from_shape_fn((h, w, c), |(y, x, ci)| t[[ci, y, x]])
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;
    use rand::Rng;

    pub(crate) fn toy_input_for_checkpoint(h: usize, w: usize, seed: u64) -> NetworkInput {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mk = |rng: &mut ChaCha8Rng| {
            Array3::from_shape_fn((h, w, 3), |_| rng.gen_range(0.0..1.0))
        };
        let g1 = mk(&mut rng);
        let l1 = mk(&mut rng);
        let g2 = mk(&mut rng);
        let l2 = mk(&mut rng);
        let g3 = mk(&mut rng);
        let l3 = mk(&mut rng);
        NetworkInput::from_pairs([(&g1, &l1), (&g2, &l2), (&g3, &l3)]).unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn toy_input(h: usize, w: usize, seed: u64) -> NetworkInput {
        super::tests_support::toy_input_for_checkpoint(h, w, seed)
    }

    fn toy_spec() -> ModelSpec {
        ModelSpec {
            base_width: 4,
            blocks: 1,
            param_seed: 11,
            ..ModelSpec::default()
        }
    }

    #[test]
    fn same_seed_builds_identical_parameters() {
        let spec = toy_spec();
        let a = build_model(&spec).unwrap();
        let b = build_model(&spec).unwrap();
        assert_eq!(a.params_flat(), b.params_flat());
    }

    #[test]
    fn forward_shape_and_range() {
        let model = build_model(&ModelSpec { param_seed: 3, ..ModelSpec::default() }).unwrap();
        let input = toy_input(64, 64, 1);
        let out = model.forward(&input).unwrap();
        assert_eq!(out.shape(), (64, 64, 3));
        assert!(out.pixels.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn doubling_width_increases_param_count() {
        let narrow = build_model(&ModelSpec { base_width: 8, ..ModelSpec::default() }).unwrap();
        let wide = build_model(&ModelSpec { base_width: 16, ..ModelSpec::default() }).unwrap();
        assert!(wide.param_count() > narrow.param_count());
    }

    #[test]
    fn forward_is_deterministic() {
        let model = build_model(&toy_spec()).unwrap();
        let input = toy_input(16, 16, 2);
        let a = model.forward(&input).unwrap();
        let b = model.forward(&input).unwrap();
        assert_eq!(a.pixels, b.pixels);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(build_model(&ModelSpec { base_width: 2, ..ModelSpec::default() }).is_err());
        assert!(build_model(&ModelSpec { blocks: 0, ..ModelSpec::default() }).is_err());
    }

    #[test]
    fn attention_maps_are_in_unit_interval() {
        let model = build_model(&toy_spec()).unwrap();
        let input = toy_input(12, 12, 4);
        let (_, maps) = model.forward_instrumented(&input);
        assert_eq!(maps.len(), 2);
        for m in &maps {
            assert!(m.iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn translation_covariance_away_from_borders() {
        let model = build_model(&ModelSpec { param_seed: 9, ..ModelSpec::default() }).unwrap();
        let h = 96;
        let w = 96;
        let shift = 8usize;
        let base = toy_input(h, w, 5);
        let shifted_frames: Vec<Tensor> = base
            .frames
            .iter()
            .map(|f| {
                Array3::from_shape_fn(f.dim(), |(c, y, x)| {
                    let sy = (y as isize - shift as isize).clamp(0, h as isize - 1) as usize;
                    let sx = (x as isize - shift as isize).clamp(0, w as isize - 1) as usize;
                    f[[c, sy, sx]]
                })
            })
            .collect();
        let shifted = NetworkInput { frames: shifted_frames.try_into().unwrap() };

        let out_base = model.forward(&base).unwrap();
        let out_shifted = model.forward(&shifted).unwrap();

        // Receptive radius of the trunk plus the shift itself.
        let margin = 28;
        for y in margin..h - margin {
            for x in margin..w - margin {
                for c in 0..3 {
                    assert_abs_diff_eq!(
                        out_shifted.pixels[[y, x, c]],
                        out_base.pixels[[y - shift, x - shift, c]],
                        epsilon = 1e-4
                    );
                }
            }
        }
    }

    #[test]
    fn gradient_reaches_every_parameter() {
        let model = build_model(&toy_spec()).unwrap();
        let input = toy_input(12, 12, 6);
        let cache = model.forward_cached(&input);
        let grad_y = Tensor::from_elem(cache.y.dim(), 1.0);
        let grads = model.backward(&cache, &grad_y);
        let flat = grads.to_flat();
        assert_eq!(flat.len(), model.param_count());

        // Check per-tensor (not just globally): every weight and bias block
        // must receive some gradient signal.
        let mut offset = 0;
        for layer in model.layers() {
            let wlen = layer.weight.len();
            assert!(
                flat[offset..offset + wlen].iter().any(|&v| v != 0.0),
                "weight tensor starting at {offset} has all-zero gradient"
            );
            offset += wlen;
            let blen = layer.bias.len();
            assert!(
                flat[offset..offset + blen].iter().any(|&v| v != 0.0),
                "bias tensor starting at {offset} has all-zero gradient"
            );
            offset += blen;
        }
    }

    #[test]
    fn model_backward_matches_finite_differences() {
        let mut model = build_model(&ModelSpec {
            base_width: 4,
            blocks: 1,
            param_seed: 13,
            ..ModelSpec::default()
        })
        .unwrap();
        let input = toy_input(8, 8, 7);
        let mut probe_rng = ChaCha8Rng::seed_from_u64(99);
        let probe = Tensor::from_shape_fn((3, 8, 8), |_| probe_rng.gen_range(-1.0..1.0));

        let scalar = |m: &Model| -> f64 {
            let c = m.forward_cached(&input);
            c.y.iter().zip(probe.iter()).map(|(a, b)| a * b).sum()
        };

        let cache = model.forward_cached(&input);
        let grads = model.backward(&cache, &probe).to_flat();

        let params = model.params_flat();
        let n = params.len();
        let step = 1e-6;
        // Spot-check a spread of parameter indices.
        let mut check_rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..24 {
            let i = check_rng.gen_range(0..n);
            let mut p = params.clone();
            p[i] += step;
            model.set_params_flat(&p).unwrap();
            let up = scalar(&model);
            p[i] = params[i] - step;
            model.set_params_flat(&p).unwrap();
            let down = scalar(&model);
            let fd = (up - down) / (2.0 * step);
            let rel = (grads[i] - fd).abs() / grads[i].abs().max(fd.abs()).max(1e-8);
            assert!(
                rel < 1e-4,
                "param {i}: analytic {} vs fd {fd} (rel {rel})",
                grads[i]
            );
        }
        model.set_params_flat(&params).unwrap();
    }

    #[test]
    fn attention_off_changes_topology() {
        let with = build_model(&ModelSpec { attention: true, ..toy_spec() }).unwrap();
        let without = build_model(&ModelSpec { attention: false, ..toy_spec() }).unwrap();
        assert!(with.param_count() > without.param_count());
        let input = toy_input(8, 8, 8);
        let (_, maps) = without.forward_instrumented(&input);
        assert!(maps.is_empty());
    }
}
