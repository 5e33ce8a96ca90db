//! Low-level raster helpers shared by the flow estimator, the warper and the
//! SSIM window machinery. All functions use border replication.

use ndarray::Array2;

/// Bilinear sample with replicated borders. `x` is the column coordinate,
/// `y` the row coordinate.
#[inline]
pub(crate) fn bilinear_sample(img: &Array2<f64>, x: f64, y: f64) -> f64 {
    let (h, w) = img.dim();
    let xc = x.clamp(0.0, (w - 1) as f64);
    let yc = y.clamp(0.0, (h - 1) as f64);
    let x0 = xc.floor() as usize;
    let y0 = yc.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let ax = xc - x0 as f64;
    let ay = yc - y0 as f64;

    let v00 = img[[y0, x0]];
    let v10 = img[[y0, x1]];
    let v01 = img[[y1, x0]];
    let v11 = img[[y1, x1]];
    (1.0 - ay) * ((1.0 - ax) * v00 + ax * v10) + ay * ((1.0 - ax) * v01 + ax * v11)
}

/// Central-difference gradients with replicated borders.
pub(crate) fn gradients(img: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = img.dim();
    let mut gx = Array2::zeros((h, w));
    let mut gy = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let xm = x.saturating_sub(1);
            let xp = (x + 1).min(w - 1);
            let ym = y.saturating_sub(1);
            let yp = (y + 1).min(h - 1);
            gx[[y, x]] = 0.5 * (img[[y, xp]] - img[[y, xm]]);
            gy[[y, x]] = 0.5 * (img[[yp, x]] - img[[ym, x]]);
        }
    }
    (gx, gy)
}

/// Windowed sum with a `(2r+1)` square box, replicated borders, computed
/// separably.
pub(crate) fn box_sum(img: &Array2<f64>, r: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    let mut tmp = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for k in -(r as isize)..=(r as isize) {
                let xx = (x as isize + k).clamp(0, w as isize - 1) as usize;
                s += img[[y, xx]];
            }
            tmp[[y, x]] = s;
        }
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for k in -(r as isize)..=(r as isize) {
                let yy = (y as isize + k).clamp(0, h as isize - 1) as usize;
                s += tmp[[yy, x]];
            }
            out[[y, x]] = s;
        }
    }
    out
}

/// Normalized 1-D Gaussian kernel truncated at `3σ` (radius at least 1).
pub(crate) fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as usize;
    let mut k: Vec<f64> = (-(r as isize)..=(r as isize))
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    for v in &mut k {
        *v /= s;
    }
    k
}

/// Separable Gaussian blur with replicated borders.
pub(crate) fn gaussian_blur(img: &Array2<f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return img.clone();
    }
    let k = gaussian_kernel(sigma);
    let r = k.len() / 2;
    let (h, w) = img.dim();
    let mut tmp = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let xx = (x as isize + i as isize - r as isize).clamp(0, w as isize - 1) as usize;
                s += kv * img[[y, xx]];
            }
            tmp[[y, x]] = s;
        }
    }
    let mut out = Array2::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut s = 0.0;
            for (i, &kv) in k.iter().enumerate() {
                let yy = (y as isize + i as isize - r as isize).clamp(0, h as isize - 1) as usize;
                s += kv * tmp[[yy, x]];
            }
            out[[y, x]] = s;
        }
    }
    out
}

/// 2x downsample by averaging 2x2 blocks (odd trailing rows/cols replicate).
pub(crate) fn downsample2(img: &Array2<f64>) -> Array2<f64> {
    let (h, w) = img.dim();
    let oh = h.div_ceil(2);
    let ow = w.div_ceil(2);
    let mut out = Array2::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            let y0 = 2 * y;
            let x0 = 2 * x;
            let y1 = (y0 + 1).min(h - 1);
            let x1 = (x0 + 1).min(w - 1);
            out[[y, x]] = 0.25 * (img[[y0, x0]] + img[[y0, x1]] + img[[y1, x0]] + img[[y1, x1]]);
        }
    }
    out
}

/// Bilinear resize to an explicit target shape.
pub(crate) fn resize_bilinear(img: &Array2<f64>, oh: usize, ow: usize) -> Array2<f64> {
    let (h, w) = img.dim();
    let sy = h as f64 / oh as f64;
    let sx = w as f64 / ow as f64;
    let mut out = Array2::zeros((oh, ow));
    for y in 0..oh {
        for x in 0..ow {
            let src_y = (y as f64 + 0.5) * sy - 0.5;
            let src_x = (x as f64 + 0.5) * sx - 0.5;
            out[[y, x]] = bilinear_sample(img, src_x, src_y);
        }
    }
    out
}
