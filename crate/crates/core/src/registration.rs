//! Histogram mutual information, rigid MI registration with Powell's
//! method, and Sobel gradient error maps.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::Image;

pub const DEFAULT_BINS: usize = 32;

fn bin(v: f64, bins: usize) -> usize {
    ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1)
}

fn check_bins(bins: usize) -> Result<()> {
    if bins < 2 {
        return Err(Error::Config(format!("need at least 2 histogram bins, got {bins}")));
    }
    Ok(())
}

/// Shannon entropy (nats) of the `bins`-bin histogram of `a` on `[0, 1]`.
pub fn entropy(a: &Image, bins: usize) -> Result<f64> {
    check_bins(bins)?;
    let mut h = vec![0usize; bins];
    for &v in &a.data {
        h[bin(v, bins)] += 1;
    }
    let n = a.data.len() as f64;
    Ok(h.iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum())
}

/// MI of paired samples; pairs with `None` are ignored.
fn mi_pairs(pairs: impl Iterator<Item = (f64, Option<f64>)>, bins: usize) -> f64 {
    let mut joint = vec![0usize; bins * bins];
    let mut n = 0usize;
    for (a, b) in pairs {
        if let Some(b) = b {
            joint[bin(a, bins) * bins + bin(b, bins)] += 1;
            n += 1;
        }
    }
    if n == 0 {
        return 0.0;
    }
    let mut pa = vec![0usize; bins];
    let mut pb = vec![0usize; bins];
    for i in 0..bins {
        for j in 0..bins {
            pa[i] += joint[i * bins + j];
            pb[j] += joint[i * bins + j];
        }
    }
    let nf = n as f64;
    let mut mi = 0.0;
    for i in 0..bins {
        for j in 0..bins {
            let c = joint[i * bins + j];
            if c > 0 {
                let p = c as f64 / nf;
                mi += p * (p / ((pa[i] as f64 / nf) * (pb[j] as f64 / nf))).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Histogram estimate of `I(A; B)` in nats.
pub fn mutual_information(a: &Image, b: &Image, bins: usize) -> Result<f64> {
    a.check_same_shape(b)?;
    check_bins(bins)?;
    Ok(mi_pairs(a.data.iter().zip(&b.data).map(|(&x, &y)| (x, Some(y))), bins))
}

/// Rigid transform `x -> R(phi) (x - c) + c + t` about the image centre `c`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rigid2 {
    pub tx: f64,
    pub ty: f64,
    pub angle: f64,
}

impl Rigid2 {
    pub const IDENTITY: Rigid2 = Rigid2 { tx: 0.0, ty: 0.0, angle: 0.0 };

    pub fn angle_degrees(&self) -> f64 {
        self.angle.to_degrees()
    }
}

fn bilinear(img: &Image, x: f64, y: f64) -> Option<f64> {
    let (w, h) = (img.width as f64, img.height as f64);
    if !(x >= 0.0 && y >= 0.0 && x <= w - 1.0 && y <= h - 1.0) {
        return None;
    }
    let x0 = (x.floor() as usize).min(img.width.saturating_sub(2));
    let y0 = (y.floor() as usize).min(img.height.saturating_sub(2));
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(img.width - 1);
    let y1 = (y0 + 1).min(img.height - 1);
    let g = |xx, yy| img.get(xx, yy, 0);
    Some(
        (1.0 - fy) * ((1.0 - fx) * g(x0, y0) + fx * g(x1, y0))
            + fy * ((1.0 - fx) * g(x0, y1) + fx * g(x1, y1)),
    )
}

/// `(T o B)(x) = B(T^-1 x)` by bilinear sampling; `None` outside `B`.
pub fn warp(b: &Image, t: Rigid2) -> Vec<Option<f64>> {
    let cx = (b.width as f64 - 1.0) / 2.0;
    let cy = (b.height as f64 - 1.0) / 2.0;
    let (s, c) = t.angle.sin_cos();
    let mut out = Vec::with_capacity(b.width * b.height);
    for y in 0..b.height {
        for x in 0..b.width {
            let dx = x as f64 - cx - t.tx;
            let dy = y as f64 - cy - t.ty;
            // R^T applied to the offset
            let sx = c * dx + s * dy + cx;
            let sy = -s * dx + c * dy + cy;
            out.push(bilinear(b, sx, sy));
        }
    }
    out
}

/// MI between `a` and the warped `b` over their overlap.
pub fn warped_mi(a: &Image, b: &Image, t: Rigid2, bins: usize) -> Result<f64> {
    a.check_same_shape(b)?;
    check_bins(bins)?;
    let w = warp(b, t);
    Ok(mi_pairs(a.data.iter().copied().zip(w), bins))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchBounds {
    /// Translation limit in pixels, both axes.
    pub max_shift: f64,
    /// Rotation limit in radians.
    pub max_angle: f64,
}

impl Default for SearchBounds {
    fn default() -> Self {
        SearchBounds { max_shift: 10.0, max_angle: 5f64.to_radians() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Registration {
    pub transform: Rigid2,
    pub mi: f64,
    pub identity_mi: f64,
    pub evaluations: usize,
}

const RESTARTS: usize = 3;
const SAMPLES: usize = 21;
const GOLDEN_TOL: f64 = 1e-4;
const MAX_SWEEPS: usize = 30;

struct Objective<'a> {
    a: &'a Image,
    b: &'a Image,
    bins: usize,
    bounds: SearchBounds,
    evals: usize,
}

impl Objective<'_> {
    /// Parameters in scaled units: pixels, pixels, and the angle as a
    /// fraction of the bound times the shift bound.
    fn to_rigid(&self, p: [f64; 3]) -> Rigid2 {
        let k = if self.bounds.max_shift > 0.0 { self.bounds.max_angle / self.bounds.max_shift } else { 0.0 };
        Rigid2 { tx: p[0], ty: p[1], angle: p[2] * k }
    }

    fn limit(&self) -> f64 {
        self.bounds.max_shift
    }

    fn eval(&mut self, p: [f64; 3]) -> f64 {
        self.evals += 1;
        let w = warp(self.b, self.to_rigid(p));
        -mi_pairs(self.a.data.iter().copied().zip(w), self.bins)
    }
}

fn add(p: [f64; 3], d: [f64; 3], s: f64) -> [f64; 3] {
    [p[0] + s * d[0], p[1] + s * d[1], p[2] + s * d[2]]
}

/// Feasible step range of `p + s d` inside the cube `[-l, l]^3`.
fn step_range(p: [f64; 3], d: [f64; 3], l: f64) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if d[k].abs() > 1e-12 {
            let a = (-l - p[k]) / d[k];
            let b = (l - p[k]) / d[k];
            lo = lo.max(a.min(b));
            hi = hi.min(a.max(b));
        }
    }
    (lo, hi)
}

/// Samples the feasible segment to bracket the best step, then refines it
/// by golden-section search. Returns `(step, value)`.
fn line_min(obj: &mut Objective<'_>, p: [f64; 3], d: [f64; 3], f0: f64) -> (f64, f64) {
    let (lo, hi) = step_range(p, d, obj.limit());
    if !(hi > lo) {
        return (0.0, f0);
    }
    let h = (hi - lo) / (SAMPLES - 1) as f64;
    let mut best = (0.0, f0);
    for i in 0..SAMPLES {
        let s = lo + h * i as f64;
        let f = obj.eval(add(p, d, s));
        if f < best.1 {
            best = (s, f);
        }
    }
    let (mut a, mut b) = ((best.0 - h).max(lo), (best.0 + h).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut e = a + g * (b - a);
    let mut fc = obj.eval(add(p, d, c));
    let mut fe = obj.eval(add(p, d, e));
    while (b - a).abs() > GOLDEN_TOL {
        if fc < fe {
            b = e;
            e = c;
            fe = fc;
            c = b - g * (b - a);
            fc = obj.eval(add(p, d, c));
        } else {
            a = c;
            c = e;
            fc = fe;
            e = a + g * (b - a);
            fe = obj.eval(add(p, d, e));
        }
    }
    for (s, f) in [(c, fc), (e, fe)] {
        if f < best.1 {
            best = (s, f);
        }
    }
    best
}

fn powell(obj: &mut Objective<'_>, start: [f64; 3]) -> ([f64; 3], f64) {
    let mut dirs = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    let mut p = start;
    let mut f = obj.eval(p);
    for _ in 0..MAX_SWEEPS {
        let p0 = p;
        let f0 = f;
        let mut biggest = (0usize, 0.0);
        for (k, d) in dirs.iter().enumerate() {
            let (s, fs) = line_min(obj, p, *d, f);
            if f - fs > biggest.1 {
                biggest = (k, f - fs);
            }
            p = add(p, *d, s);
            f = fs;
        }
        if f0 - f <= 1e-10 {
            break;
        }
        let nd = [p[0] - p0[0], p[1] - p0[1], p[2] - p0[2]];
        let norm = (nd[0] * nd[0] + nd[1] * nd[1] + nd[2] * nd[2]).sqrt();
        if norm > 1e-9 {
            let nd = [nd[0] / norm, nd[1] / norm, nd[2] / norm];
            let (s, fs) = line_min(obj, p, nd, f);
            p = add(p, nd, s);
            f = fs;
            dirs[biggest.0] = dirs[2];
            dirs[2] = nd;
        }
    }
    (p, f)
}

fn is_constant(img: &Image) -> bool {
    img.data.windows(2).all(|w| w[0] == w[1])
}

/// Finds the rigid transform maximising `I(A; T o B)` inside `bounds`.
/// Single-channel images. Never returns a transform worse than identity.
pub fn mi_register(a: &Image, b: &Image, bounds: SearchBounds, bins: usize, seed: u64) -> Result<Registration> {
    a.check_same_shape(b)?;
    check_bins(bins)?;
    if a.channels != 1 {
        return Err(Error::dims("registration needs single-channel images"));
    }
    if is_constant(a) || is_constant(b) {
        return Err(Error::NoSignal("constant image carries no information to register"));
    }
    if !(bounds.max_shift >= 0.0 && bounds.max_angle >= 0.0) {
        return Err(Error::Config("search bounds must be non-negative".into()));
    }
    let mut obj = Objective { a, b, bins, bounds, evals: 0 };
    let identity = obj.eval([0.0; 3]);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = obj.limit();
    let mut best = ([0.0; 3], identity);
    for r in 0..RESTARTS {
        let start = if r == 0 { [0.0; 3] } else { [0; 3].map(|_| rng.random_range(-0.2..=0.2) * l) };
        let (p, f) = powell(&mut obj, start);
        if f < best.1 {
            best = (p, f);
        }
    }
    Ok(Registration {
        transform: obj.to_rigid(best.0),
        mi: -best.1,
        identity_mi: -identity,
        evaluations: obj.evals,
    })
}

/// Sobel gradient magnitude with replicated borders.
pub fn sobel_magnitude(img: &Image) -> Result<Image> {
    if img.channels != 1 {
        return Err(Error::dims("sobel needs a single-channel image"));
    }
    let (w, h) = (img.width as isize, img.height as isize);
    let at = |x: isize, y: isize| img.get(x.clamp(0, w - 1) as usize, y.clamp(0, h - 1) as usize, 0);
    let mut out = Image::new(img.width, img.height, 1);
    for y in 0..h {
        for x in 0..w {
            let col = |dx: isize| at(x + dx, y - 1) + 2.0 * at(x + dx, y) + at(x + dx, y + 1);
            let row = |dy: isize| at(x - 1, y + dy) + 2.0 * at(x, y + dy) + at(x + 1, y + dy);
            let gx = col(1) - col(-1);
            let gy = row(1) - row(-1);
            out.set(x as usize, y as usize, 0, gx.hypot(gy));
        }
    }
    Ok(out)
}

/// `| |Sobel A| - |Sobel B| |` per pixel.
pub fn gradient_error_map(a: &Image, b: &Image) -> Result<Image> {
    a.check_same_shape(b)?;
    let ga = sobel_magnitude(a)?;
    let gb = sobel_magnitude(b)?;
    let mut out = ga.clone();
    for (o, v) in out.data.iter_mut().zip(&gb.data) {
        *o = (*o - v).abs();
    }
    Ok(out)
}
