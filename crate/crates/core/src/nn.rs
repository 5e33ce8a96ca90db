//! Minimal deterministic CPU kernels for the small convolutional networks
//! used by the pipeline: same-padded dilated 2-D convolution with explicit
//! backward passes, pointwise activations, pooling and channel plumbing.
//!
//! Tensors are `Array3<f64>` in `(C, H, W)` layout. Everything is sequential
//! and allocation order is fixed, so results are bit-reproducible for a given
//! seed.

use ndarray::{Array1, Array3, Array4};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Feature tensor in `(C, H, W)` layout.
pub type Tensor = Array3<f64>;

/// Same-padded 2-D convolution with square odd kernels and optional dilation.
#[derive(Debug, Clone)]
pub struct Conv2d {
    /// `(c_out, c_in, k, k)`
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
    pub dilation: usize,
}

/// Parameter gradients matching a [`Conv2d`].
#[derive(Debug, Clone)]
pub struct Conv2dGrad {
    pub weight: Array4<f64>,
    pub bias: Array1<f64>,
}

impl Conv2d {
    /// Kaiming-uniform init from a seeded stream; bias starts at zero.
    pub fn seeded(c_out: usize, c_in: usize, k: usize, dilation: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        assert!(dilation >= 1);
        let fan_in = (c_in * k * k) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let weight = Array4::from_shape_fn((c_out, c_in, k, k), |_| rng.gen_range(-bound..bound));
        Self {
            weight,
            bias: Array1::zeros(c_out),
            dilation,
        }
    }

    pub fn zeros_like(&self) -> Conv2dGrad {
        Conv2dGrad {
            weight: Array4::zeros(self.weight.dim()),
            bias: Array1::zeros(self.bias.len()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dim().0
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dim().1
    }

    /// Forward pass with zero padding; output has the input's spatial shape.
    ///
    /// Interior pixels (all taps in bounds) run a fully unrolled 3x3 path;
    /// borders fall back to the clamped generic loop.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (c_out, c_in, k, _) = self.weight.dim();
        let (xc, h, w) = x.dim();
        assert_eq!(xc, c_in, "input channel mismatch");
        let r = k / 2;
        let d = self.dilation;
        let m = r * d; // interior margin

        let xs = x.as_slice().expect("contiguous input");
        let ws = self.weight.as_slice().expect("contiguous weights");
        let mut out = vec![0.0f64; c_out * h * w];

        let use_fast = k == 3 && h > 2 * m && w > 2 * m;
        for co in 0..c_out {
            let out_plane = &mut out[co * h * w..(co + 1) * h * w];
            out_plane.fill(self.bias[co]);
            for ci in 0..c_in {
                let x_plane = &xs[ci * h * w..(ci + 1) * h * w];
                let wbase = ((co * c_in + ci) * k) * k;
                if use_fast {
                    let wv: [f64; 9] = std::array::from_fn(|i| ws[wbase + i]);
                    let len = w - 2 * m;
                    for y in m..h - m {
                        let up = &x_plane[(y - m) * w..(y - m) * w + w];
                        let mid = &x_plane[y * w..y * w + w];
                        let dn = &x_plane[(y + m) * w..(y + m) * w + w];
                        // Equal-length row views let the bounds checks fold.
                        let (u0, u1, u2) = (&up[..len], &up[m..m + len], &up[2 * m..2 * m + len]);
                        let (m0, m1, m2) = (&mid[..len], &mid[m..m + len], &mid[2 * m..2 * m + len]);
                        let (d0, d1, d2) = (&dn[..len], &dn[m..m + len], &dn[2 * m..2 * m + len]);
                        let dst = &mut out_plane[y * w + m..y * w + m + len];
                        for i in 0..len {
                            dst[i] += wv[0] * u0[i]
                                + wv[1] * u1[i]
                                + wv[2] * u2[i]
                                + wv[3] * m0[i]
                                + wv[4] * m1[i]
                                + wv[5] * m2[i]
                                + wv[6] * d0[i]
                                + wv[7] * d1[i]
                                + wv[8] * d2[i];
                        }
                    }
                    // Border rows and columns via the generic path.
                    for y in 0..h {
                        let interior_row = y >= m && y < h - m;
                        let xs_iter: Box<dyn Iterator<Item = usize>> = if interior_row {
                            Box::new((0..m).chain(w - m..w))
                        } else {
                            Box::new(0..w)
                        };
                        for xi in xs_iter {
                            let mut acc = 0.0;
                            for (t, &wt) in wv.iter().enumerate() {
                                let sy = y as isize + ((t / 3) as isize - 1) * d as isize;
                                let sx = xi as isize + ((t % 3) as isize - 1) * d as isize;
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    acc += wt * x_plane[sy as usize * w + sx as usize];
                                }
                            }
                            out_plane[y * w + xi] += acc;
                        }
                    }
                } else {
                    for y in 0..h {
                        for xi in 0..w {
                            let mut acc = 0.0;
                            for ky in 0..k {
                                let sy = y as isize + (ky as isize - r as isize) * d as isize;
                                if sy < 0 || sy >= h as isize {
                                    continue;
                                }
                                for kx in 0..k {
                                    let sx =
                                        xi as isize + (kx as isize - r as isize) * d as isize;
                                    if sx < 0 || sx >= w as isize {
                                        continue;
                                    }
                                    acc += ws[wbase + ky * k + kx]
                                        * x_plane[sy as usize * w + sx as usize];
                                }
                            }
                            out_plane[y * w + xi] += acc;
                        }
                    }
                }
            }
        }
        Array3::from_shape_vec((c_out, h, w), out).expect("shape")
    }

    /// Backward pass: gradients w.r.t. the input and the parameters.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> (Tensor, Conv2dGrad) {
        let (c_out, c_in, k, _) = self.weight.dim();
        let (_, h, w) = x.dim();
        assert_eq!(grad_out.dim(), (c_out, h, w), "grad_out shape mismatch");
        let r = k / 2;
        let d = self.dilation;
        let m = r * d;

        let xs = x.as_slice().expect("contiguous input");
        let gs = grad_out.as_slice().expect("contiguous grad");
        let ws = self.weight.as_slice().expect("contiguous weights");

        let mut dx = vec![0.0f64; c_in * h * w];
        let mut dw = vec![0.0f64; c_out * c_in * k * k];
        let mut db = vec![0.0f64; c_out];

        let taps = k * k;
        let off = |t: usize| -> (isize, isize) {
            (
                ((t / k) as isize - r as isize) * d as isize,
                ((t % k) as isize - r as isize) * d as isize,
            )
        };
        let use_fast = k == 3 && h > 2 * m && w > 2 * m;

        for co in 0..c_out {
            let g_plane = &gs[co * h * w..(co + 1) * h * w];
            db[co] += g_plane.iter().sum::<f64>();
            for ci in 0..c_in {
                let x_plane = &xs[ci * h * w..(ci + 1) * h * w];
                let dx_plane = &mut dx[ci * h * w..(ci + 1) * h * w];
                let wbase = (co * c_in + ci) * taps;

                if use_fast {
                    // Weight gradients: nine running dot products g·x(+o).
                    let mut acc = [0.0f64; 9];
                    let len = w - 2 * m;
                    for y in m..h - m {
                        let g_row = &g_plane[y * w + m..y * w + m + len];
                        let up = &x_plane[(y - m) * w..(y - m) * w + w];
                        let mid = &x_plane[y * w..y * w + w];
                        let dn = &x_plane[(y + m) * w..(y + m) * w + w];
                        let (u0, u1, u2) = (&up[..len], &up[m..m + len], &up[2 * m..2 * m + len]);
                        let (m0, m1, m2) = (&mid[..len], &mid[m..m + len], &mid[2 * m..2 * m + len]);
                        let (d0, d1, d2) = (&dn[..len], &dn[m..m + len], &dn[2 * m..2 * m + len]);
                        for i in 0..len {
                            let g = g_row[i];
                            acc[0] += g * u0[i];
                            acc[1] += g * u1[i];
                            acc[2] += g * u2[i];
                            acc[3] += g * m0[i];
                            acc[4] += g * m1[i];
                            acc[5] += g * m2[i];
                            acc[6] += g * d0[i];
                            acc[7] += g * d1[i];
                            acc[8] += g * d2[i];
                        }
                    }
                    // Border contributions to dw.
                    for y in 0..h {
                        let interior_row = y >= m && y < h - m;
                        let xs_iter: Box<dyn Iterator<Item = usize>> = if interior_row {
                            Box::new((0..m).chain(w - m..w))
                        } else {
                            Box::new(0..w)
                        };
                        for xi in xs_iter {
                            let g = g_plane[y * w + xi];
                            for (t, a) in acc.iter_mut().enumerate() {
                                let (oy, ox) = off(t);
                                let sy = y as isize + oy;
                                let sx = xi as isize + ox;
                                if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                    *a += g * x_plane[sy as usize * w + sx as usize];
                                }
                            }
                        }
                    }
                    for (t, a) in acc.iter().enumerate() {
                        dw[wbase + t] += a;
                    }

                    // Input gradients: correlation with the rotated kernel.
                    let wv: [f64; 9] = std::array::from_fn(|i| ws[wbase + i]);
                    let len = w - 2 * m;
                    for y in m..h - m {
                        let up = &g_plane[(y - m) * w..(y - m) * w + w];
                        let mid = &g_plane[y * w..y * w + w];
                        let dn = &g_plane[(y + m) * w..(y + m) * w + w];
                        let (u0, u1, u2) = (&up[..len], &up[m..m + len], &up[2 * m..2 * m + len]);
                        let (m0, m1, m2) = (&mid[..len], &mid[m..m + len], &mid[2 * m..2 * m + len]);
                        let (d0, d1, d2) = (&dn[..len], &dn[m..m + len], &dn[2 * m..2 * m + len]);
                        let dst = &mut dx_plane[y * w + m..y * w + m + len];
                        for i in 0..len {
                            // dx(p) = sum_t w_t * g(p - o_t): rotated kernel.
                            dst[i] += wv[8] * u0[i]
                                + wv[7] * u1[i]
                                + wv[6] * u2[i]
                                + wv[5] * m0[i]
                                + wv[4] * m1[i]
                                + wv[3] * m2[i]
                                + wv[2] * d0[i]
                                + wv[1] * d1[i]
                                + wv[0] * d2[i];
                        }
                    }
                    for y in 0..h {
                        let interior_row = y >= m && y < h - m;
                        let xs_iter: Box<dyn Iterator<Item = usize>> = if interior_row {
                            Box::new((0..m).chain(w - m..w))
                        } else {
                            Box::new(0..w)
                        };
                        for xi in xs_iter {
                            let mut a = 0.0;
                            for (t, &wt) in wv.iter().enumerate() {
                                let (oy, ox) = off(t);
                                let gy = y as isize - oy;
                                let gx = xi as isize - ox;
                                if gy >= 0 && gy < h as isize && gx >= 0 && gx < w as isize {
                                    a += wt * g_plane[gy as usize * w + gx as usize];
                                }
                            }
                            dx_plane[y * w + xi] += a;
                        }
                    }
                } else {
                    for t in 0..taps {
                        let (oy, ox) = off(t);
                        let wv = ws[wbase + t];
                        let mut wsum = 0.0;
                        for y in 0..h {
                            let sy = y as isize + oy;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for xi in 0..w {
                                let sx = xi as isize + ox;
                                if sx < 0 || sx >= w as isize {
                                    continue;
                                }
                                let g = g_plane[y * w + xi];
                                let xv = x_plane[sy as usize * w + sx as usize];
                                wsum += g * xv;
                                dx_plane[sy as usize * w + sx as usize] += wv * g;
                            }
                        }
                        dw[wbase + t] += wsum;
                    }
                }
            }
        }

        let dx = Array3::from_shape_vec((c_in, h, w), dx).expect("shape");
        let grad = Conv2dGrad {
            weight: Array4::from_shape_vec((c_out, c_in, k, k), dw).expect("shape"),
            bias: Array1::from_vec(db),
        };
        (dx, grad)
    }
}

impl Conv2dGrad {
    pub fn accumulate(&mut self, other: &Conv2dGrad) {
        self.weight += &other.weight;
        self.bias += &other.bias;
    }

    pub fn scale(&mut self, s: f64) {
        self.weight.mapv_inplace(|v| v * s);
        self.bias.mapv_inplace(|v| v * s);
    }
}

pub fn relu(x: &Tensor) -> Tensor {
    x.mapv(|v| v.max(0.0))
}

/// `grad * [x > 0]`, using the pre-activation input.
pub fn relu_backward(x: &Tensor, grad: &Tensor) -> Tensor {
    let mut out = grad.clone();
    out.zip_mut_with(x, |g, &xv| {
        if xv <= 0.0 {
            *g = 0.0;
        }
    });
    out
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.mapv(|v| 1.0 / (1.0 + (-v).exp()))
}

/// `grad * y * (1 - y)`, using the activation output.
pub fn sigmoid_backward(y: &Tensor, grad: &Tensor) -> Tensor {
    let mut out = grad.clone();
    out.zip_mut_with(y, |g, &yv| {
        *g *= yv * (1.0 - yv);
    });
    out
}

/// 2x2 average pooling, stride 2; trailing odd rows/cols replicate.
pub fn avg_pool2(x: &Tensor) -> Tensor {
    let (c, h, w) = x.dim();
    let oh = h.div_ceil(2);
    let ow = w.div_ceil(2);
    Array3::from_shape_fn((c, oh, ow), |(ci, y, xo)| {
        let y0 = 2 * y;
        let x0 = 2 * xo;
        let y1 = (y0 + 1).min(h - 1);
        let x1 = (x0 + 1).min(w - 1);
        0.25 * (x[[ci, y0, x0]] + x[[ci, y0, x1]] + x[[ci, y1, x0]] + x[[ci, y1, x1]])
    })
}

/// Backward of [`avg_pool2`] for an input of spatial shape `(h, w)`.
pub fn avg_pool2_backward(h: usize, w: usize, grad: &Tensor) -> Tensor {
    let (c, oh, ow) = grad.dim();
    let mut out = Array3::zeros((c, h, w));
    for ci in 0..c {
        for y in 0..oh {
            for xo in 0..ow {
                let g = 0.25 * grad[[ci, y, xo]];
                let y0 = 2 * y;
                let x0 = 2 * xo;
                let y1 = (y0 + 1).min(h - 1);
                let x1 = (x0 + 1).min(w - 1);
                out[[ci, y0, x0]] += g;
                out[[ci, y0, x1]] += g;
                out[[ci, y1, x0]] += g;
                out[[ci, y1, x1]] += g;
            }
        }
    }
    out
}

/// Concatenates tensors along the channel axis.
pub fn concat_channels(parts: &[&Tensor]) -> Tensor {
    let views: Vec<_> = parts.iter().map(|t| t.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).expect("channel concat")
}

/// Splits a tensor into channel blocks of the given sizes.
pub fn split_channels(x: &Tensor, sizes: &[usize]) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(sizes.len());
    let mut start = 0;
    for &s in sizes {
        out.push(x.slice(ndarray::s![start..start + s, .., ..]).to_owned());
        start += s;
    }
    assert_eq!(start, x.dim().0, "split sizes must cover all channels");
    out
}
