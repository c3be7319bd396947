//! Shared MLP decoding per-primitive features plus view direction into all
//! spectral channels at once.
//!
//! Layout: `d+2 -> W` (ELU), `hidden_layers` times `W -> W` (ELU), `W -> B`
//! (logistic). Parameters live in one flat buffer, each layer stored as a
//! row-major `out x in` weight block followed by its bias.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::sigmoid;

/// Rows per reduction chunk in the backward pass. Fixed so that the gradient
/// summation order does not depend on the thread count.
const GRAD_CHUNK: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderShape {
    pub feature_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub out_dim: usize,
}

impl DecoderShape {
    pub fn input_dim(&self) -> usize {
        self.feature_dim + 2
    }

    /// `(fan_in, fan_out)` of every affine map.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let w = self.hidden_width;
        let mut dims = vec![(self.input_dim(), w)];
        dims.extend(std::iter::repeat_n((w, w), self.hidden_layers));
        dims.push((w, self.out_dim));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }

    fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 || self.hidden_width == 0 || self.out_dim == 0 {
            return Err(Error::Config(format!("decoder dimensions must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ColorDecoder {
    shape: DecoderShape,
    params: Vec<f64>,
    generation: u64,
}

/// Equality of shape and parameters; the cache generation is ignored.
impl PartialEq for ColorDecoder {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.params == other.params
    }
}

#[inline]
fn elu(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        z.exp_m1()
    }
}

#[inline]
fn elu_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        z.exp()
    }
}

impl ColorDecoder {
    /// Kaiming-uniform weights in `±sqrt(6 / fan_in)`, zero biases.
    pub fn init(shape: DecoderShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(shape.param_count());
        for (fan_in, fan_out) in shape.layer_dims() {
            let bound = (6.0 / fan_in as f64).sqrt();
            let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            params.extend((0..fan_in * fan_out).map(|_| u.sample(&mut rng)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(ColorDecoder { shape, params, generation: 0 })
    }

    pub fn from_params(shape: DecoderShape, params: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if params.len() != shape.param_count() {
            return Err(Error::dims(format!(
                "decoder expects {} parameters, got {}",
                shape.param_count(),
                params.len()
            )));
        }
        Ok(ColorDecoder { shape, params, generation: 0 })
    }

    pub fn shape(&self) -> DecoderShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access to Θ. Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.generation += 1;
        &mut self.params
    }

    /// `(weights, bias)` slices of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (off, fan_in, fan_out) = self.layer_offset(l);
        let w = &self.params[off..off + fan_in * fan_out];
        let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        (w, b)
    }

    fn layer_offset(&self, l: usize) -> (usize, usize, usize) {
        let dims = self.shape.layer_dims();
        let off = dims[..l].iter().map(|(i, o)| i * o + o).sum();
        (off, dims[l].0, dims[l].1)
    }

    /// Decodes `features` (`N x d`) with spherical directions `(theta, phi)`.
    pub fn forward(&self, features: &[f64], directions: &[[f64; 2]]) -> Result<DecodeOutput> {
        let d = self.shape.feature_dim;
        let n = directions.len();
        if features.len() != n * d {
            return Err(Error::dims(format!(
                "decoder got {} feature values for {} rows of width {}",
                features.len(),
                n,
                d
            )));
        }
        let dims = self.shape.layer_dims();
        let row_width: usize = self.shape.input_dim() + dims.iter().map(|(_, o)| o).sum::<usize>();
        let mut trace = vec![0.0; n * row_width];
        let b = self.shape.out_dim;
        let mut colors = vec![0.0; n * b];
        trace
            .par_chunks_mut(row_width.max(1))
            .zip(colors.par_chunks_mut(b))
            .enumerate()
            .for_each(|(r, (row, out))| {
                let in_dim = self.shape.input_dim();
                row[..d].copy_from_slice(&features[r * d..(r + 1) * d]);
                row[d] = directions[r][0];
                row[d + 1] = directions[r][1];
                let mut in_off = 0;
                let mut in_len = in_dim;
                let mut z_off = in_dim;
                let last = dims.len() - 1;
                let mut act = Vec::with_capacity(self.shape.hidden_width);
                for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
                    let (w, bias) = self.layer(l);
                    let (head, tail) = row.split_at_mut(z_off);
                    let prev = &head[in_off..in_off + in_len];
                    if l > 0 {
                        act.clear();
                        act.extend(prev.iter().map(|&z| elu(z)));
                    }
                    let input: &[f64] = if l == 0 { prev } else { &act };
                    let z = &mut tail[..fan_out];
                    for o in 0..fan_out {
                        let wr = &w[o * fan_in..(o + 1) * fan_in];
                        let mut acc = bias[o];
                        for (a, x) in wr.iter().zip(input) {
                            acc += a * x;
                        }
                        z[o] = acc;
                    }
                    if l == last {
                        for (o, v) in out.iter_mut().enumerate() {
                            *v = sigmoid(z[o]);
                        }
                    }
                    in_off = z_off;
                    in_len = fan_out;
                    z_off += fan_out;
                }
            });
        Ok(DecodeOutput {
            colors,
            cache: DecodeCache { rows: n, row_width, shape: self.shape, generation: self.generation, trace },
        })
    }

    /// Reverse pass. Returns `(dL/dfeatures, dL/dΘ)`; the gradient with
    /// respect to the direction inputs is dropped.
    pub fn backward(&self, cache: &DecodeCache, d_colors: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if cache.shape != self.shape || cache.generation != self.generation {
            return Err(Error::StaleCache("decoder parameters changed since the forward pass".into()));
        }
        let b = self.shape.out_dim;
        if d_colors.len() != cache.rows * b {
            return Err(Error::StaleCache(format!(
                "color gradient has {} values, cache holds {} rows of {}",
                d_colors.len(),
                cache.rows,
                b
            )));
        }
        let d = self.shape.feature_dim;
        let dims = self.shape.layer_dims();
        let in_dim = self.shape.input_dim();
        let n = cache.rows;
        let mut d_features = vec![0.0; n * d];
        let partials: Vec<Vec<f64>> = d_features
            .par_chunks_mut((GRAD_CHUNK * d).max(1))
            .enumerate()
            .map(|(chunk, dfeat_chunk)| {
                let mut d_theta = vec![0.0; self.params.len()];
                let max_w = dims.iter().map(|(i, o)| (*i).max(*o)).max().unwrap_or(0);
                let mut dz = vec![0.0; max_w];
                let mut da = vec![0.0; max_w];
                let r0 = chunk * GRAD_CHUNK;
                for (k, dfeat) in dfeat_chunk.chunks_mut(d).enumerate() {
                    let r = r0 + k;
                    let row = &cache.trace[r * cache.row_width..(r + 1) * cache.row_width];
                    // offsets of each layer's pre-activation block
                    let mut z_offs = Vec::with_capacity(dims.len());
                    let mut off = in_dim;
                    for &(_, o) in &dims {
                        z_offs.push(off);
                        off += o;
                    }
                    let last = dims.len() - 1;
                    let zl = &row[z_offs[last]..z_offs[last] + b];
                    for o in 0..b {
                        let y = sigmoid(zl[o]);
                        dz[o] = d_colors[r * b + o] * y * (1.0 - y);
                    }
                    for l in (0..dims.len()).rev() {
                        let (fan_in, fan_out) = dims[l];
                        let (w_off, _, _) = self.layer_offset(l);
                        let w = &self.params[w_off..w_off + fan_in * fan_out];
                        let input: Vec<f64> = if l == 0 {
                            row[..in_dim].to_vec()
                        } else {
                            row[z_offs[l - 1]..z_offs[l - 1] + fan_in].iter().map(|&z| elu(z)).collect()
                        };
                        for o in 0..fan_out {
                            let g = dz[o];
                            if g == 0.0 {
                                continue;
                            }
                            let gw = &mut d_theta[w_off + o * fan_in..w_off + (o + 1) * fan_in];
                            for (acc, x) in gw.iter_mut().zip(&input) {
                                *acc += g * x;
                            }
                            d_theta[w_off + fan_in * fan_out + o] += g;
                        }
                        for i in 0..fan_in {
                            let mut acc = 0.0;
                            for o in 0..fan_out {
                                acc += w[o * fan_in + i] * dz[o];
                            }
                            da[i] = acc;
                        }
                        if l == 0 {
                            dfeat.copy_from_slice(&da[..d]);
                        } else {
                            let zp = &row[z_offs[l - 1]..z_offs[l - 1] + fan_in];
                            for i in 0..fan_in {
                                dz[i] = da[i] * elu_grad(zp[i]);
                            }
                        }
                    }
                }
                d_theta
            })
            .collect();
        let mut d_theta = vec![0.0; self.params.len()];
        for p in &partials {
            for (acc, v) in d_theta.iter_mut().zip(p) {
                *acc += v;
            }
        }
        Ok((d_features, d_theta))
    }
}

/// Decoded colours (`N x B`) and the activations the reverse pass needs.
#[derive(Debug, Clone)]
pub struct DecodeOutput {
    pub colors: Vec<f64>,
    pub cache: DecodeCache,
}

#[derive(Debug, Clone)]
pub struct DecodeCache {
    rows: usize,
    row_width: usize,
    shape: DecoderShape,
    generation: u64,
    trace: Vec<f64>,
}

impl DecodeCache {
    pub fn rows(&self) -> usize {
        self.rows
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shape(l: usize) -> DecoderShape {
        DecoderShape { feature_dim: 8, hidden_width: 32, hidden_layers: l, out_dim: 7 }
    }

    #[test]
    fn layer_shapes_and_bounds() {
        let dec = ColorDecoder::init(shape(1), 3).unwrap();
        assert_eq!(dec.shape().layer_dims(), vec![(10, 32), (32, 32), (32, 7)]);
        let (w0, b0) = dec.layer(0);
        let bound = (6.0f64 / 10.0).sqrt();
        assert!((bound - 0.7746).abs() < 1e-4);
        assert!(w0.iter().all(|w| w.abs() <= bound));
        assert!(b0.iter().all(|&b| b == 0.0));
        assert_eq!(dec, ColorDecoder::init(shape(1), 3).unwrap());
        assert_ne!(dec, ColorDecoder::init(shape(1), 4).unwrap());
    }

    #[test]
    fn empty_batch() {
        let dec = ColorDecoder::init(shape(1), 0).unwrap();
        let out = dec.forward(&[], &[]).unwrap();
        assert!(out.colors.is_empty());
        let (df, dt) = dec.backward(&out.cache, &[]).unwrap();
        assert!(df.is_empty());
        assert!(dt.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn zero_params_give_half() {
        let s = shape(1);
        let dec = ColorDecoder::from_params(s, vec![0.0; s.param_count()]).unwrap();
        let out = dec.forward(&[0.3; 16], &[[0.1, 0.2], [1.0, -2.0]]).unwrap();
        assert!(out.colors.iter().all(|&c| c == 0.5));
    }

    #[test]
    fn rows_are_independent() {
        let dec = ColorDecoder::init(shape(1), 11).unwrap();
        let feats: Vec<f64> = (0..24).map(|i| (i as f64 * 0.37).sin()).collect();
        let dirs = [[0.3, 1.0], [1.2, -0.5], [2.0, 3.0]];
        let all = dec.forward(&feats, &dirs).unwrap().colors;
        let mut perm_feats = Vec::new();
        for r in [2, 0, 1] {
            perm_feats.extend_from_slice(&feats[r * 8..(r + 1) * 8]);
        }
        let perm = dec.forward(&perm_feats, &[dirs[2], dirs[0], dirs[1]]).unwrap().colors;
        assert_eq!(&perm[0..7], &all[14..21]);
        assert_eq!(&perm[7..14], &all[0..7]);
        let single = dec.forward(&feats[8..16], &dirs[1..2]).unwrap().colors;
        assert_eq!(&single[..], &all[7..14]);
        assert!(all.iter().all(|&c| c > 0.0 && c < 1.0));
    }

    #[test]
    fn dimension_mismatch() {
        let dec = ColorDecoder::init(shape(1), 0).unwrap();
        assert!(matches!(dec.forward(&[0.0; 7], &[[0.0, 0.0]]), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn stale_cache_detected() {
        let mut dec = ColorDecoder::init(shape(1), 0).unwrap();
        let out = dec.forward(&[0.1; 8], &[[0.0, 0.0]]).unwrap();
        assert!(matches!(dec.backward(&out.cache, &[0.0; 6]), Err(Error::StaleCache(_))));
        dec.params_mut()[0] += 1.0;
        assert!(matches!(dec.backward(&out.cache, &[0.0; 7]), Err(Error::StaleCache(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let dec = ColorDecoder::init(shape(1), 5).unwrap();
        let out = dec.forward(&[0.4; 16], &[[0.5, 0.5], [1.0, 2.0]]).unwrap();
        let (df, dt) = dec.backward(&out.cache, &[0.0; 14]).unwrap();
        assert!(df.iter().chain(&dt).all(|&g| g == 0.0));
    }

    #[test]
    fn dead_input_column_has_zero_gradient() {
        let s = shape(1);
        let mut dec = ColorDecoder::init(s, 5).unwrap();
        let j = 3;
        for o in 0..s.hidden_width {
            dec.params_mut()[o * s.input_dim() + j] = 0.0;
        }
        let out = dec.forward(&[0.4; 8], &[[0.5, 0.5]]).unwrap();
        let (df, _) = dec.backward(&out.cache, &[1.0; 7]).unwrap();
        assert_eq!(df[j], 0.0);
        assert!(df[0] != 0.0);
    }
}
