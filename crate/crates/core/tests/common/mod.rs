//! Oracles and scene builders shared by the integration tests.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use specsplat_core::color::sh::SH_COEFFS;
use specsplat_core::color::{ColorDecoder, ColorModel, DecoderShape};
use specsplat_core::knn::knn;
use specsplat_core::loss::{cosine_knn_loss, dssim_loss, feature_norm_reg, l1_loss, smoothness_loss};
use specsplat_core::raster::{
    rasterize_forward, render_backward, render_forward, BlendSettings, Camera, Projected2D,
};
use specsplat_core::scene::{BandDesc, GaussianCloud, Intrinsics, Pose, SpectralBandSet};
use nalgebra::DVector;
use specsplat_core::train::StepReport;
use specsplat_core::Image;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - n| / max(|n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / numeric.abs().max(floor)
}

pub fn central_diff(h: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

pub fn random_image(r: &mut ChaCha8Rng, w: usize, h: usize, c: usize) -> Image {
    Image::from_vec(w, h, c, (0..w * h * c).map(|_| r.random()).collect()).unwrap()
}

pub fn dot(a: &Image, b: &Image) -> f64 {
    a.data.iter().zip(&b.data).map(|(x, y)| x * y).sum()
}

/// Per-pixel blend over every primitive whose footprint box holds the
/// pixel, sorted by `(depth, index)` without any tiling.
pub fn reference_render(
    p: &Projected2D,
    colors: &[f64],
    opacities: &[f64],
    width: usize,
    height: usize,
    background: &[f64],
    s: BlendSettings,
) -> (Image, Vec<f64>, Vec<f64>) {
    let ch = background.len();
    let mut img = Image::new(width, height, ch);
    let mut final_t = vec![0.0; width * height];
    let mut alpha_t_sum = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let (px, py) = (x as f64, y as f64);
            let mut hits: Vec<usize> = (0..p.mean2d.len())
                .filter(|&g| {
                    p.visible[g]
                        && (px - p.mean2d[g][0]).abs() <= p.radius[g]
                        && (py - p.mean2d[g][1]).abs() <= p.radius[g]
                })
                .collect();
            hits.sort_by(|&a, &b| p.depth[a].partial_cmp(&p.depth[b]).unwrap().then(a.cmp(&b)));
            let mut t = 1.0;
            let mut acc = vec![0.0; ch];
            let mut at_sum = 0.0;
            for g in hits {
                let dx = p.mean2d[g][0] - px;
                let dy = p.mean2d[g][1] - py;
                let [a, b, c] = p.conic[g];
                let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
                if power > 0.0 {
                    continue;
                }
                let alpha = (opacities[g] * power.exp()).min(s.alpha_max);
                if alpha < s.alpha_min {
                    continue;
                }
                if t * (1.0 - alpha) < s.t_min {
                    break;
                }
                for k in 0..ch {
                    acc[k] += colors[g * ch + k] * alpha * t;
                }
                at_sum += alpha * t;
                t *= 1.0 - alpha;
            }
            for k in 0..ch {
                img.set(x, y, k, acc[k] + t * background[k]);
            }
            final_t[y * width + x] = t;
            alpha_t_sum[y * width + x] = at_sum;
        }
    }
    (img, final_t, alpha_t_sum)
}

/// Random projected splats of mixed sizes spread over several tiles.
pub fn random_projected(r: &mut ChaCha8Rng, n: usize, width: usize, height: usize) -> Projected2D {
    let mut p = Projected2D {
        mean2d: Vec::new(),
        conic: Vec::new(),
        cov2d: Vec::new(),
        depth: Vec::new(),
        radius: Vec::new(),
        visible: Vec::new(),
    };
    for i in 0..n {
        let sx: f64 = r.random_range(0.7..8.0);
        let sy: f64 = r.random_range(0.7..8.0);
        let rho: f64 = r.random_range(-0.8..0.8);
        let (ca, cb, cc) = (sx * sx, rho * sx * sy, sy * sy);
        let det = ca * cc - cb * cb;
        let mid = 0.5 * (ca + cc);
        let lmax = mid + (mid * mid - det).sqrt();
        p.mean2d.push([r.random_range(-4.0..width as f64 + 4.0), r.random_range(-4.0..height as f64 + 4.0)]);
        p.conic.push([cc / det, -cb / det, ca / det]);
        p.cov2d.push([ca, cb, cc]);
        // a few exact depth ties exercise the index tie-break
        p.depth.push(if i % 7 == 3 { 2.0 } else { r.random_range(0.5..10.0) });
        p.radius.push(3.0 * lmax.sqrt());
        p.visible.push(r.random::<f64>() > 0.05);
    }
    p
}

/// Max tiled-vs-reference difference and max telescoping residual
/// `|sum(alpha T) + T_final - 1|` for one random scene.
pub fn blend_oracle(seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let (w, h) = (r.random_range(20..48), r.random_range(20..48));
    let n = r.random_range(1..40);
    let p = random_projected(&mut r, n, w, h);
    let ch = if seed % 2 == 0 { 3 } else { 1 };
    let colors: Vec<f64> = (0..n * ch).map(|_| r.random()).collect();
    let opacities: Vec<f64> = (0..n).map(|_| r.random_range(0.0..1.0)).collect();
    let bg: Vec<f64> = (0..ch).map(|_| r.random()).collect();
    let s = BlendSettings::default();
    let (tiled, _) = rasterize_forward(&p, &colors, &opacities, w, h, &bg, s).unwrap();
    let (reference, _, _) = reference_render(&p, &colors, &opacities, w, h, &bg, s);
    let diff = tiled.data.iter().zip(&reference.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let s0 = BlendSettings::default().without_early_termination();
    let (_, aux) = rasterize_forward(&p, &colors, &opacities, w, h, &bg, s0).unwrap();
    let (_, ref_t, at) = reference_render(&p, &colors, &opacities, w, h, &bg, s0);
    let mut tele = 0.0f64;
    for i in 0..w * h {
        tele = tele.max((at[i] + aux.final_t[i] - 1.0).abs());
        tele = tele.max((aux.final_t[i] - ref_t[i]).abs());
    }
    (diff, tele)
}

/// Tiny single-band scene with DC-only SH colours so that colour does not
/// depend on view direction.
pub struct TinyScene {
    pub cloud: GaussianCloud,
    pub model: ColorModel,
    pub bands: SpectralBandSet,
    pub camera: Camera,
    pub weights: Image,
}

pub fn tiny_scene(seed: u64) -> TinyScene {
    let mut r = rng(seed);
    let bands = SpectralBandSet::new(vec![BandDesc::new("x", 1, None)]).unwrap();
    let n = r.random_range(1..=5);
    let mut cloud = GaussianCloud::empty(SH_COEFFS);
    for _ in 0..n {
        let pos = [r.random_range(-0.3..0.3), r.random_range(-0.3..0.3), r.random_range(2.5..4.0)];
        let mut q = [0.0; 4];
        q.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
        q[0] += 1.5;
        let ls = [r.random_range(1.5f64..2.5).ln(), r.random_range(1.5f64..2.5).ln(), r.random_range(0.3f64..1.0).ln()];
        let o: f64 = r.random_range(0.3..0.7);
        let mut f = vec![0.0; SH_COEFFS];
        f[0] = r.random_range(-1.0..1.0);
        cloud.push(pos, q, ls, (o / (1.0 - o)).ln(), &f);
    }
    let camera = Camera {
        intrinsics: Intrinsics { fx: 8.0, fy: 8.0, cx: 3.5, cy: 3.5, width: 8, height: 8 },
        pose: Pose::identity(),
    };
    let weights = random_image(&mut r, 8, 8, 1);
    TinyScene { cloud, model: ColorModel::PerBandSh, bands, camera, weights }
}

impl TinyScene {
    pub fn loss(&self, cloud: &GaussianCloud) -> f64 {
        let out = render_forward(cloud, &self.model, &self.bands, &self.camera, 0, &[0.0], BlendSettings::default())
            .unwrap();
        dot(&out.image, &self.weights)
    }
}

/// Largest relative error over position, log-scale, rotation, opacity and
/// colour gradients of a tiny scene, central differences with `h`.
pub fn raster_fd_check(seed: u64, h: f64) -> f64 {
    let sc = tiny_scene(seed);
    let out =
        render_forward(&sc.cloud, &sc.model, &sc.bands, &sc.camera, 0, &[0.0], BlendSettings::default()).unwrap();
    let g = render_backward(&sc.cloud, &sc.model, &sc.camera, &out, &sc.weights).unwrap();
    let mut worst = 0.0f64;
    let mut check = |analytic: f64, edit: &dyn Fn(&mut GaussianCloud, f64)| {
        let numeric = central_diff(h, |d| {
            let mut c = sc.cloud.clone();
            edit(&mut c, d);
            sc.loss(&c)
        });
        worst = worst.max(rel_err(analytic, numeric, 1e-6));
    };
    for i in 0..sc.cloud.len() {
        for k in 0..3 {
            check(g.d_positions[i][k], &|c, d| c.positions[i][k] += d);
            check(g.d_log_scales[i][k], &|c, d| c.log_scales[i][k] += d);
        }
        for k in 0..4 {
            check(g.d_rotations[i][k], &|c, d| c.rotations[i][k] += d);
        }
        check(g.d_opacity_logits[i], &|c, d| c.opacity_logits[i] += d);
        check(g.d_features[i * SH_COEFFS], &|c, d| c.features[i * SH_COEFFS] += d);
    }
    worst
}

/// Largest relative error of decoder feature and parameter gradients.
pub fn decoder_fd_check(seed: u64, hidden_layers: usize) -> f64 {
    let mut r = rng(seed);
    let shape = DecoderShape { feature_dim: 6, hidden_width: 9, hidden_layers, out_dim: 5 };
    let mut dec = ColorDecoder::init(shape, seed).unwrap();
    for p in dec.params_mut() {
        *p += r.random_range(-0.2..0.2);
    }
    let rows = 3;
    let feats: Vec<f64> = (0..rows * 6).map(|_| r.random_range(-1.5..1.5)).collect();
    let dirs: Vec<[f64; 2]> = (0..rows).map(|_| [r.random_range(0.0..3.1), r.random_range(-3.1..3.1)]).collect();
    let w: Vec<f64> = (0..rows * 5).map(|_| r.random_range(-1.0..1.0)).collect();
    let loss = |d: &ColorDecoder, f: &[f64]| -> f64 {
        d.forward(f, &dirs).unwrap().colors.iter().zip(&w).map(|(a, b)| a * b).sum()
    };
    let out = dec.forward(&feats, &dirs).unwrap();
    let (df, dtheta) = dec.backward(&out.cache, &w).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for i in 0..feats.len() {
        let n = central_diff(h, |d| {
            let mut f = feats.clone();
            f[i] += d;
            loss(&dec, &f)
        });
        worst = worst.max(rel_err(df[i], n, 1e-8));
    }
    for i in 0..dec.params().len() {
        let n = central_diff(h, |d| {
            let mut dd = dec.clone();
            dd.params_mut()[i] += d;
            loss(&dd, &feats)
        });
        worst = worst.max(rel_err(dtheta[i], n, 1e-8));
    }
    worst
}

/// Relative errors of each loss gradient on random inputs.
pub fn loss_fd_checks(seed: u64) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    // Distinct levels keep every |pred - gt| and neighbour difference at
    // least 1/256 from the kinks of the piecewise-linear losses.
    let mut levels: Vec<f64> = (0..512).map(|k| (k as f64 + 0.5) / 512.0).collect();
    levels.shuffle(&mut r);
    let pred = Image::from_vec(16, 16, 1, levels[..256].to_vec()).unwrap();
    let gt = Image::from_vec(16, 16, 1, levels[256..].to_vec()).unwrap();
    type ImgLoss = fn(&Image, &Image) -> specsplat_core::Result<(f64, Image)>;
    let image_losses: [(&str, ImgLoss, f64); 3] = [
        ("l1", l1_loss, 1e-4),
        ("dssim", dssim_loss, 1e-5),
        ("smoothness", |p, _| smoothness_loss(p), 1e-4),
    ];
    for (name, f, h) in image_losses {
        let (_, g) = f(&pred, &gt).unwrap();
        let mut worst = 0.0f64;
        for i in 0..pred.data.len() {
            let n = central_diff(h, |d| {
                let mut p = pred.clone();
                p.data[i] += d;
                f(&p, &gt).unwrap().0
            });
            worst = worst.max(rel_err(g.data[i], n, 1e-8));
        }
        out.push((name, worst));
    }
    let d = 4;
    let feats: Vec<f64> = (0..12 * d).map(|_| r.random_range(-1.0..1.0)).collect();
    let pts: Vec<[f64; 3]> = (0..12).map(|_| [r.random(), r.random(), r.random()]).collect();
    let table = knn(&pts, 4);
    type FeatLoss<'a> = Box<dyn Fn(&[f64]) -> (f64, Vec<f64>) + 'a>;
    let feature_losses: [(&str, FeatLoss); 2] = [
        ("feature-norm", Box::new(|f: &[f64]| feature_norm_reg(f, d))),
        ("cosine-knn", Box::new(|f: &[f64]| cosine_knn_loss(f, d, &table).unwrap())),
    ];
    for (name, f) in feature_losses {
        let (_, g) = f(&feats);
        let mut worst = 0.0f64;
        for i in 0..feats.len() {
            let n = central_diff(1e-6, |dd| {
                let mut x = feats.clone();
                x[i] += dd;
                f(&x).0
            });
            worst = worst.max(rel_err(g[i], n, 1e-8));
        }
        out.push((name, worst));
    }
    out
}

/// Literal transcriptions of the spectral metric formulas.
pub fn sam_oracle(r: &[f64], t: &[f64]) -> f64 {
    let a = DVector::from_column_slice(r);
    let b = DVector::from_column_slice(t);
    a.angle(&b)
}

pub fn scm_oracle(r: &[f64], t: &[f64]) -> f64 {
    let center = |v: &[f64]| {
        let v = DVector::from_column_slice(v);
        let m = v.mean();
        v.add_scalar(-m)
    };
    let (a, b) = (center(r), center(t));
    a.dot(&b) / (a.norm() * b.norm())
}

pub fn sid_oracle(r: &[f64], t: &[f64]) -> f64 {
    let sr: f64 = r.iter().sum();
    let st: f64 = t.iter().sum();
    let kl = |a: &[f64], sa: f64, b: &[f64], sb: f64| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x / sa) * ((x / sa).ln() - (y / sb).ln())).sum()
    };
    kl(r, sr, t, st) + kl(t, st, r, sr)
}

/// Recomputes every densification mask from the per-step log alone.
pub fn brute_force_masks(reports: &[StepReport], n_bands: usize, stop: u64, tau: f64) -> Vec<Vec<bool>> {
    let mut masks = Vec::new();
    let mut samples: Vec<Vec<Vec<f64>>> = Vec::new();
    for r in reports {
        if samples.len() != r.homodir.len() {
            assert!(samples.iter().all(|p| p.iter().all(Vec::is_empty)), "count changed mid-window");
            samples = vec![vec![Vec::new(); n_bands]; r.homodir.len()];
        }
        if r.iteration < stop {
            for (i, (h, &p)) in r.homodir.iter().zip(&r.participated).enumerate() {
                if p {
                    samples[i][r.band].push((h[0] * h[0] + h[1] * h[1]).sqrt());
                }
            }
        }
        if r.densified.is_some() {
            let mask = samples
                .iter()
                .map(|bands| {
                    bands
                        .iter()
                        .filter(|v| !v.is_empty())
                        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                        .fold(f64::NEG_INFINITY, f64::max)
                        > tau
                })
                .collect();
            masks.push(mask);
            samples = vec![vec![Vec::new(); n_bands]; r.primitives];
        }
    }
    masks
}

pub const BLOB_SIZE: usize = 64;

/// Smooth blob field sampled at arbitrary coordinates.
pub fn blob_field(x: f64, y: f64) -> f64 {
    const BLOBS: [(f64, f64, f64, f64); 6] = [
        (18.0, 20.0, 7.0, 0.55),
        (44.0, 16.0, 5.0, 0.35),
        (30.0, 42.0, 9.0, 0.45),
        (50.0, 48.0, 4.0, 0.30),
        (12.0, 50.0, 6.0, 0.25),
        (36.0, 28.0, 3.0, 0.20),
    ];
    let v: f64 = BLOBS
        .iter()
        .map(|&(cx, cy, s, a)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp())
        .sum();
    (0.1 + 0.004 * x + v).min(1.0)
}

/// `BLOB_SIZE` square image sampling the blob field at `map(x, y)`.
pub fn blob_image(map: impl Fn(f64, f64) -> (f64, f64)) -> Image {
    let mut img = Image::new(BLOB_SIZE, BLOB_SIZE, 1);
    for y in 0..BLOB_SIZE {
        for x in 0..BLOB_SIZE {
            let (u, v) = map(x as f64, y as f64);
            img.set(x, y, 0, blob_field(u, v));
        }
    }
    img
}
