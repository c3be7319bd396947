//! Structural similarity with an 11x11 Gaussian window (sigma 1.5), zero
//! padded to the input size, and its gradient with respect to the first
//! image. Shared by the D-SSIM loss and the SSIM metric.

use crate::error::{Error, Result};
use crate::image::Image;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const C1: f64 = 0.01 * 0.01;
pub const C2: f64 = 0.03 * 0.03;

fn kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let half = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Separable zero-padded "same" filtering of a single plane. The kernel is
/// symmetric, so this operator is its own adjoint.
fn blur(plane: &[f64], w: usize, h: usize, k: &[f64; WINDOW]) -> Vec<f64> {
    let r = (WINDOW / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += kv * plane[y * w + xx as usize];
                }
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = y as isize + i as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += kv * tmp[yy as usize * w + x];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

/// Mean SSIM over pixels and channels, and optionally `d mean / d a`.
pub fn ssim(a: &Image, b: &Image, with_grad: bool) -> Result<(f64, Option<Image>)> {
    a.check_same_shape(b)?;
    let (w, h, ch) = (a.width, a.height, a.channels);
    if w < WINDOW || h < WINDOW {
        return Err(Error::ImageTooSmall { width: w, height: h, window: WINDOW });
    }
    let k = kernel();
    let npix = w * h;
    let norm = 1.0 / (npix * ch) as f64;
    let mut total = 0.0;
    let mut grad = with_grad.then(|| Image::new(w, h, ch));
    for c in 0..ch {
        let x: Vec<f64> = (0..npix).map(|i| a.data[i * ch + c]).collect();
        let y: Vec<f64> = (0..npix).map(|i| b.data[i * ch + c]).collect();
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
        let mu_x = blur(&x, w, h, &k);
        let mu_y = blur(&y, w, h, &k);
        let e_xx = blur(&xx, w, h, &k);
        let e_yy = blur(&yy, w, h, &k);
        let e_xy = blur(&xy, w, h, &k);
        let mut d_mu = vec![0.0; npix];
        let mut d_exx = vec![0.0; npix];
        let mut d_exy = vec![0.0; npix];
        for i in 0..npix {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let a1 = 2.0 * mx * my + C1;
            let a2 = 2.0 * (e_xy[i] - mx * my) + C2;
            let b1 = mx * mx + my * my + C1;
            let b2 = (e_xx[i] - mx * mx) + (e_yy[i] - my * my) + C2;
            let s = a1 * a2 / (b1 * b2);
            total += s;
            if with_grad {
                d_mu[i] = norm * ((2.0 * my * a2 - 2.0 * my * a1) / (b1 * b2) - s * (2.0 * mx / b1 - 2.0 * mx / b2));
                d_exx[i] = norm * (-s / b2);
                d_exy[i] = norm * (2.0 * a1 / (b1 * b2));
            }
        }
        if let Some(g) = grad.as_mut() {
            let g_mu = blur(&d_mu, w, h, &k);
            let g_xx = blur(&d_exx, w, h, &k);
            let g_xy = blur(&d_exy, w, h, &k);
            for i in 0..npix {
                g.data[i * ch + c] = g_mu[i] + 2.0 * x[i] * g_xx[i] + y[i] * g_xy[i];
            }
        }
    }
    Ok((total * norm, grad))
}
