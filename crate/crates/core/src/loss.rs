//! Training objectives. Every term returns its value together with the
//! gradient with respect to the rendered image or the feature vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::knn::KnnTable;
use crate::ssim::ssim;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    /// D-SSIM share of the photometric term.
    pub lambda_dssim: f64,
    /// Weight of the feature-norm regularizer.
    pub lambda_norm: f64,
    /// Weight of the smoothness prior (single-channel bands only).
    pub lambda_smooth: f64,
    /// Weight of the neighbour cosine loss.
    pub lambda_cos: f64,
    /// Use `(1 - SSIM) / 2` instead of `1 - SSIM`.
    pub dssim_halved: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_dssim: 0.2, lambda_norm: 0.1, lambda_smooth: 0.0, lambda_cos: 0.0, dssim_halved: false }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.lambda_dssim)
            || self.lambda_norm < 0.0
            || self.lambda_smooth < 0.0
            || self.lambda_cos < 0.0
        {
            return Err(Error::Config(format!("invalid loss weights {self:?}")));
        }
        Ok(())
    }
}

/// Mean absolute error; subgradient `sign(pred - gt) / n`, zero at ties.
pub fn l1_loss(pred: &Image, gt: &Image) -> Result<(f64, Image)> {
    pred.check_same_shape(gt)?;
    let n = pred.data.len().max(1) as f64;
    let mut grad = Image::new(pred.width, pred.height, pred.channels);
    let mut sum = 0.0;
    for (i, (p, g)) in pred.data.iter().zip(&gt.data).enumerate() {
        let d = p - g;
        sum += d.abs();
        grad.data[i] = if d > 0.0 {
            1.0 / n
        } else if d < 0.0 {
            -1.0 / n
        } else {
            0.0
        };
    }
    Ok((sum / n, grad))
}

/// `1 - SSIM(pred, gt)`, channel-averaged.
pub fn dssim_loss(pred: &Image, gt: &Image) -> Result<(f64, Image)> {
    let (s, g) = ssim(pred, gt, true)?;
    let mut g = g.expect("gradient requested");
    g.data.iter_mut().for_each(|v| *v = -*v);
    Ok((1.0 - s, g))
}

/// `sum_i (||f_i|| - 1)^2` over all primitives. The gradient at `f = 0` is
/// taken as zero.
pub fn feature_norm_reg(features: &[f64], feature_dim: usize) -> (f64, Vec<f64>) {
    let mut grad = vec![0.0; features.len()];
    let mut total = 0.0;
    if feature_dim == 0 {
        return (0.0, grad);
    }
    for (f, g) in features.chunks(feature_dim).zip(grad.chunks_mut(feature_dim)) {
        let norm = f.iter().map(|v| v * v).sum::<f64>().sqrt();
        total += (norm - 1.0).powi(2);
        if norm > 0.0 {
            let s = 2.0 * (norm - 1.0) / norm;
            for (gv, fv) in g.iter_mut().zip(f) {
                *gv = s * fv;
            }
        }
    }
    (total, grad)
}

/// Mean absolute difference to the 4-neighbours that exist, normalized by
/// `4M`. Each unordered neighbour pair therefore counts twice.
pub fn smoothness_loss(pred: &Image) -> Result<(f64, Image)> {
    if pred.channels != 1 {
        return Err(Error::dims(format!("smoothness prior needs one channel, got {}", pred.channels)));
    }
    let (w, h) = (pred.width, pred.height);
    let m = (w * h).max(1) as f64;
    let scale = 1.0 / (4.0 * m);
    let mut grad = Image::new(w, h, 1);
    let mut total = 0.0;
    let mut pair = |i: usize, j: usize, grad: &mut Image| {
        let d = pred.data[j] - pred.data[i];
        total += 2.0 * d.abs();
        let s = if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        };
        grad.data[j] += 2.0 * s * scale;
        grad.data[i] -= 2.0 * s * scale;
    };
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                pair(i, i + 1, &mut grad);
            }
            if y + 1 < h {
                pair(i, i + w, &mut grad);
            }
        }
    }
    Ok((total * scale, grad))
}

/// Mean over centres of the mean over neighbours of `1 - cos(f_c, f_s)`.
/// Pairs involving a zero vector contribute 1 and no gradient.
pub fn cosine_knn_loss(features: &[f64], feature_dim: usize, knn: &KnnTable) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; features.len()];
    if feature_dim == 0 || features.is_empty() {
        return Ok((0.0, grad));
    }
    let s = features.len() / feature_dim;
    if knn.k == 0 {
        return Ok((0.0, grad));
    }
    if knn.len() != s {
        return Err(Error::dims(format!("knn table has {} rows for {} primitives", knn.len(), s)));
    }
    let norms: Vec<f64> =
        features.chunks(feature_dim).map(|f| f.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let w = 1.0 / (s as f64 * knn.k as f64);
    let mut total = 0.0;
    for c in 0..s {
        for &n in knn.neighbors(c) {
            if n >= s {
                return Err(Error::IndexOutOfRange { index: n, len: s });
            }
            let (nc, nn) = (norms[c], norms[n]);
            if nc == 0.0 || nn == 0.0 {
                total += 1.0;
                continue;
            }
            let fc = &features[c * feature_dim..(c + 1) * feature_dim];
            let fs = &features[n * feature_dim..(n + 1) * feature_dim];
            let dot: f64 = fc.iter().zip(fs).map(|(a, b)| a * b).sum();
            let cos = dot / (nc * nn);
            total += 1.0 - cos;
            for k in 0..feature_dim {
                grad[c * feature_dim + k] -= w * (fs[k] / (nc * nn) - cos * fc[k] / (nc * nc));
                grad[n * feature_dim + k] -= w * (fc[k] / (nc * nn) - cos * fs[k] / (nn * nn));
            }
        }
    }
    Ok((total * w, grad))
}

/// Value and gradients of the full objective for one rendered band image.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub value: f64,
    pub l1: f64,
    pub dssim: f64,
    pub norm_reg: f64,
    pub smooth: f64,
    pub cos: f64,
    pub d_image: Image,
    pub d_features: Vec<f64>,
}

/// `(1 - λ) L1 + λ D-SSIM + λ_norm Σ(‖f‖ - 1)²`, plus the optional smoothness
/// and cosine terms.
pub fn total_loss(
    render: &Image,
    gt: &Image,
    features: &[f64],
    feature_dim: usize,
    knn: Option<&KnnTable>,
    weights: &LossWeights,
) -> Result<LossOutput> {
    weights.validate()?;
    let lam = weights.lambda_dssim;
    let (l1, g1) = l1_loss(render, gt)?;
    let mut d_image = g1;
    d_image.data.iter_mut().for_each(|v| *v *= 1.0 - lam);
    let mut dssim = 0.0;
    if lam > 0.0 {
        let (mut v, g) = dssim_loss(render, gt)?;
        let mut s = lam;
        if weights.dssim_halved {
            v *= 0.5;
            s *= 0.5;
        }
        dssim = v;
        for (a, b) in d_image.data.iter_mut().zip(&g.data) {
            *a += s * b;
        }
    }
    let mut smooth = 0.0;
    if weights.lambda_smooth > 0.0 && render.channels == 1 {
        let (v, g) = smoothness_loss(render)?;
        smooth = v;
        for (a, b) in d_image.data.iter_mut().zip(&g.data) {
            *a += weights.lambda_smooth * b;
        }
    }
    let mut d_features = vec![0.0; features.len()];
    let mut norm_reg = 0.0;
    if weights.lambda_norm > 0.0 {
        let (v, g) = feature_norm_reg(features, feature_dim);
        norm_reg = v;
        for (a, b) in d_features.iter_mut().zip(&g) {
            *a += weights.lambda_norm * b;
        }
    }
    let mut cos = 0.0;
    if weights.lambda_cos > 0.0 {
        if let Some(table) = knn {
            let (v, g) = cosine_knn_loss(features, feature_dim, table)?;
            cos = v;
            for (a, b) in d_features.iter_mut().zip(&g) {
                *a += weights.lambda_cos * b;
            }
        }
    }
    let value = (1.0 - lam) * l1
        + lam * dssim
        + weights.lambda_norm * norm_reg
        + weights.lambda_smooth * smooth
        + weights.lambda_cos * cos;
    Ok(LossOutput { value, l1, dssim, norm_reg, smooth, cos, d_image, d_features })
}
