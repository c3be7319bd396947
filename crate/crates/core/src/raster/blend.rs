//! Tile-binned front-to-back alpha compositing and its reverse pass.
//!
//! Primitives are depth-sorted once per view (ties by index) and binned into
//! 16x16 tiles by their square footprint. A primitive contributes to a pixel
//! only when the pixel lies inside that footprint square.

use rayon::prelude::*;

use super::project::Projected2D;
use crate::error::{Error, Result};
use crate::image::Image;

pub const TILE_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendSettings {
    /// Upper clamp on per-contributor alpha.
    pub alpha_max: f64,
    /// Contributors with alpha below this are skipped.
    pub alpha_min: f64,
    /// Blending stops before a contributor would push transmittance below
    /// this value. Zero disables early termination.
    pub t_min: f64,
}

impl Default for BlendSettings {
    fn default() -> Self {
        BlendSettings { alpha_max: 0.99, alpha_min: 1.0 / 255.0, t_min: 1e-4 }
    }
}

impl BlendSettings {
    pub fn without_early_termination(self) -> Self {
        BlendSettings { t_min: 0.0, ..self }
    }
}

/// Per-view bookkeeping shared between the forward and reverse passes.
#[derive(Debug, Clone)]
pub struct RenderAux {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub background: Vec<f64>,
    pub settings: BlendSettings,
    /// Visible primitives sorted front to back.
    pub order: Vec<usize>,
    /// Per tile, primitive indices in depth order.
    pub tile_lists: Vec<Vec<usize>>,
    /// Per pixel, transmittance left after the last contributor.
    pub final_t: Vec<f64>,
    /// Per pixel, how many entries of its tile list were walked.
    pub walked: Vec<usize>,
    /// Per primitive, number of pixels it was blended into (`m_i`).
    pub touched: Vec<u32>,
    n_primitives: usize,
}

impl RenderAux {
    pub fn participated(&self) -> Vec<bool> {
        self.touched.iter().map(|&m| m > 0).collect()
    }

    fn tiles_x(&self) -> usize {
        self.width.div_ceil(TILE_SIZE)
    }
}

/// One accepted contributor of a pixel.
struct Hit {
    slot: usize,
    alpha: f64,
    gauss: f64,
    clamped: bool,
    t_before: f64,
    dx: f64,
    dy: f64,
}

#[inline]
fn in_footprint(p: &Projected2D, g: usize, px: f64, py: f64) -> bool {
    let [mx, my] = p.mean2d[g];
    let r = p.radius[g];
    (px - mx).abs() <= r && (py - my).abs() <= r
}

/// Walks a pixel's tile list front to back, calling `visit` for every
/// accepted contributor. Returns `(final transmittance, entries walked)`.
fn walk_pixel(
    p: &Projected2D,
    opacities: &[f64],
    list: &[usize],
    limit: usize,
    px: f64,
    py: f64,
    s: &BlendSettings,
    mut visit: impl FnMut(Hit),
) -> (f64, usize) {
    let mut t = 1.0;
    for (slot, &g) in list.iter().enumerate().take(limit) {
        if !in_footprint(p, g, px, py) {
            continue;
        }
        let [mx, my] = p.mean2d[g];
        let (dx, dy) = (mx - px, my - py);
        let [a, b, c] = p.conic[g];
        let power = -0.5 * (a * dx * dx + c * dy * dy) - b * dx * dy;
        if power > 0.0 {
            continue;
        }
        let gauss = power.exp();
        let raw = opacities[g] * gauss;
        let clamped = raw > s.alpha_max;
        let alpha = if clamped { s.alpha_max } else { raw };
        if alpha < s.alpha_min {
            continue;
        }
        let next = t * (1.0 - alpha);
        if next < s.t_min {
            return (t, slot);
        }
        visit(Hit { slot, alpha, gauss, clamped, t_before: t, dx, dy });
        t = next;
    }
    (t, limit.min(list.len()))
}

fn tile_bounds(tile: usize, tiles_x: usize, width: usize, height: usize) -> (usize, usize, usize, usize) {
    let tx = tile % tiles_x;
    let ty = tile / tiles_x;
    let x0 = tx * TILE_SIZE;
    let y0 = ty * TILE_SIZE;
    (x0, y0, (x0 + TILE_SIZE).min(width), (y0 + TILE_SIZE).min(height))
}

/// Front-to-back composite of `colors` (`N x C`, one band) over `background`.
pub fn rasterize_forward(
    projected: &Projected2D,
    colors: &[f64],
    opacities: &[f64],
    width: usize,
    height: usize,
    background: &[f64],
    settings: BlendSettings,
) -> Result<(Image, RenderAux)> {
    let n = projected.len();
    let ch = background.len();
    if ch == 0 || colors.len() != n * ch {
        return Err(Error::dims(format!(
            "{} colour values for {} primitives with {} background channels",
            colors.len(),
            n,
            ch
        )));
    }
    if opacities.len() != n {
        return Err(Error::dims("opacity count differs from primitive count"));
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| projected.visible[i]).collect();
    order.sort_by(|&a, &b| projected.depth[a].total_cmp(&projected.depth[b]).then(a.cmp(&b)));

    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut tile_lists = vec![Vec::new(); tiles_x * tiles_y];
    for &g in &order {
        let [mx, my] = projected.mean2d[g];
        let r = projected.radius[g];
        let x0 = ((mx - r).ceil().max(0.0)) as usize;
        let y0 = ((my - r).ceil().max(0.0)) as usize;
        let x1 = (mx + r).floor().min((width - 1) as f64);
        let y1 = (my + r).floor().min((height - 1) as f64);
        if x1 < x0 as f64 || y1 < y0 as f64 {
            continue;
        }
        let (x1, y1) = (x1 as usize, y1 as usize);
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                tile_lists[ty * tiles_x + tx].push(g);
            }
        }
    }

    struct TileOut {
        pixels: Vec<(usize, usize, f64, usize)>,
        color: Vec<f64>,
        touched: Vec<(usize, u32)>,
    }
    let outs: Vec<TileOut> = tile_lists
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let (x0, y0, x1, y1) = tile_bounds(tile, tiles_x, width, height);
            let mut counts = vec![0u32; list.len()];
            let mut pixels = Vec::with_capacity((x1 - x0) * (y1 - y0));
            let mut color = Vec::with_capacity((x1 - x0) * (y1 - y0) * ch);
            let mut acc = vec![0.0; ch];
            for y in y0..y1 {
                for x in x0..x1 {
                    acc.iter_mut().for_each(|v| *v = 0.0);
                    let (t, walked) =
                        walk_pixel(projected, opacities, list, list.len(), x as f64, y as f64, &settings, |h| {
                            let g = list[h.slot];
                            let w = h.alpha * h.t_before;
                            for c in 0..ch {
                                acc[c] += colors[g * ch + c] * w;
                            }
                            counts[h.slot] += 1;
                        });
                    for c in 0..ch {
                        color.push(acc[c] + t * background[c]);
                    }
                    pixels.push((x, y, t, walked));
                }
            }
            let touched = counts.iter().enumerate().filter(|(_, &m)| m > 0).map(|(s, &m)| (list[s], m)).collect();
            TileOut { pixels, color, touched }
        })
        .collect();

    let mut image = Image::new(width, height, ch);
    let mut final_t = vec![1.0; width * height];
    let mut walked = vec![0; width * height];
    let mut touched = vec![0u32; n];
    for out in &outs {
        for (k, &(x, y, t, w)) in out.pixels.iter().enumerate() {
            let idx = y * width + x;
            final_t[idx] = t;
            walked[idx] = w;
            image.data[idx * ch..(idx + 1) * ch].copy_from_slice(&out.color[k * ch..(k + 1) * ch]);
        }
        for &(g, m) in &out.touched {
            touched[g] += m;
        }
    }
    let aux = RenderAux {
        width,
        height,
        channels: ch,
        background: background.to_vec(),
        settings,
        order,
        tile_lists,
        final_t,
        walked,
        touched,
        n_primitives: n,
    };
    Ok((image, aux))
}

/// Screen-space gradients from one composite.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrads {
    /// `N x C`.
    pub d_colors: Vec<f64>,
    /// With respect to activated opacity.
    pub d_opacity: Vec<f64>,
    pub d_conic: Vec<[f64; 3]>,
    pub d_mean2d: Vec<[f64; 2]>,
    /// Per-pixel absolute mean2d gradients summed componentwise.
    pub homodir: Vec<[f64; 2]>,
    pub touched: Vec<u32>,
}

/// Exact reverse of [`rasterize_forward`].
pub fn rasterize_backward(
    projected: &Projected2D,
    colors: &[f64],
    opacities: &[f64],
    aux: &RenderAux,
    d_image: &Image,
) -> Result<RasterGrads> {
    let n = projected.len();
    let ch = aux.channels;
    if aux.n_primitives != n || colors.len() != n * ch || opacities.len() != n {
        return Err(Error::StaleCache("render aux does not match the projected primitives".into()));
    }
    if d_image.width != aux.width || d_image.height != aux.height || d_image.channels != ch {
        return Err(Error::dims("image gradient shape differs from the render"));
    }
    let tiles_x = aux.tiles_x();
    let s = aux.settings;

    // per tile: gradient slots aligned with the tile list
    struct TileGrad {
        d_color: Vec<f64>,
        d_op: Vec<f64>,
        d_conic: Vec<[f64; 3]>,
        d_mean: Vec<[f64; 2]>,
        homodir: Vec<[f64; 2]>,
    }
    let per_tile: Vec<TileGrad> = aux
        .tile_lists
        .par_iter()
        .enumerate()
        .map(|(tile, list)| {
            let len = list.len();
            let mut tg = TileGrad {
                d_color: vec![0.0; len * ch],
                d_op: vec![0.0; len],
                d_conic: vec![[0.0; 3]; len],
                d_mean: vec![[0.0; 2]; len],
                homodir: vec![[0.0; 2]; len],
            };
            if len == 0 {
                return tg;
            }
            let (x0, y0, x1, y1) = tile_bounds(tile, tiles_x, aux.width, aux.height);
            let mut hits = Vec::new();
            let mut behind = vec![0.0; ch];
            for y in y0..y1 {
                for x in x0..x1 {
                    let idx = y * aux.width + x;
                    let g_pix = &d_image.data[idx * ch..(idx + 1) * ch];
                    if g_pix.iter().all(|&v| v == 0.0) {
                        continue;
                    }
                    hits.clear();
                    let (t_final, _) =
                        walk_pixel(projected, opacities, list, aux.walked[idx], x as f64, y as f64, &s, |h| hits.push(h));
                    for c in 0..ch {
                        behind[c] = t_final * aux.background[c];
                    }
                    for h in hits.iter().rev() {
                        let gid = list[h.slot];
                        let col = &colors[gid * ch..(gid + 1) * ch];
                        let w = h.alpha * h.t_before;
                        let mut d_alpha = 0.0;
                        for c in 0..ch {
                            tg.d_color[h.slot * ch + c] += w * g_pix[c];
                            d_alpha += g_pix[c] * (h.t_before * col[c] - behind[c] / (1.0 - h.alpha));
                        }
                        for c in 0..ch {
                            behind[c] += col[c] * w;
                        }
                        if h.clamped {
                            continue;
                        }
                        tg.d_op[h.slot] += d_alpha * h.gauss;
                        let d_power = d_alpha * h.alpha;
                        let [a, b, c] = projected.conic[gid];
                        let (dx, dy) = (h.dx, h.dy);
                        let dc = &mut tg.d_conic[h.slot];
                        dc[0] += -0.5 * dx * dx * d_power;
                        dc[1] += -dx * dy * d_power;
                        dc[2] += -0.5 * dy * dy * d_power;
                        let gx = -(a * dx + b * dy) * d_power;
                        let gy = -(b * dx + c * dy) * d_power;
                        tg.d_mean[h.slot][0] += gx;
                        tg.d_mean[h.slot][1] += gy;
                        tg.homodir[h.slot][0] += gx.abs();
                        tg.homodir[h.slot][1] += gy.abs();
                    }
                }
            }
            tg
        })
        .collect();

    let mut out = RasterGrads {
        d_colors: vec![0.0; n * ch],
        d_opacity: vec![0.0; n],
        d_conic: vec![[0.0; 3]; n],
        d_mean2d: vec![[0.0; 2]; n],
        homodir: vec![[0.0; 2]; n],
        touched: aux.touched.clone(),
    };
    for (list, tg) in aux.tile_lists.iter().zip(&per_tile) {
        for (slot, &g) in list.iter().enumerate() {
            for c in 0..ch {
                out.d_colors[g * ch + c] += tg.d_color[slot * ch + c];
            }
            out.d_opacity[g] += tg.d_op[slot];
            for k in 0..3 {
                out.d_conic[g][k] += tg.d_conic[slot][k];
            }
            for k in 0..2 {
                out.d_mean2d[g][k] += tg.d_mean[slot][k];
                out.homodir[g][k] += tg.homodir[slot][k];
            }
        }
    }
    Ok(out)
}
