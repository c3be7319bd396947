//! Appearance models: the shared neural decoder and the per-band SH baseline.

mod decoder;
pub mod sh;

pub use decoder::{ColorDecoder, DecodeCache, DecodeOutput, DecoderShape};

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::scene::{ColorModelKind, GaussianCloud, SpectralBandSet};
use sh::{sh_basis, sh_eval_row, SH_COEFFS};

/// Spherical coordinates `(theta, phi)` of a direction: `theta = acos(z)` in
/// `[0, pi]`, `phi = atan2(y, x)` in `(-pi, pi]`.
pub fn direction_to_spherical(v: [f64; 3]) -> Result<[f64; 2]> {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::InvalidDirection);
    }
    let [x, y, z] = v.map(|c| c / n);
    Ok([z.clamp(-1.0, 1.0).acos(), y.atan2(x)])
}

fn view_direction(position: [f64; 3], camera_center: &Vector3<f64>) -> [f64; 3] {
    let d = Vector3::from(position) - camera_center;
    let n = d.norm();
    if n > 0.0 {
        (d / n).into()
    } else {
        [0.0, 0.0, 1.0]
    }
}

/// How per-primitive appearance turns into band colours.
#[derive(Debug, Clone, PartialEq)]
pub enum ColorModel {
    /// Features decoded by one shared MLP into every channel.
    Neural(ColorDecoder),
    /// Independent degree-3 SH per channel; coefficients are the cloud's
    /// feature rows.
    PerBandSh,
}

/// State needed to push colour gradients back into appearance parameters.
#[derive(Debug, Clone)]
pub enum ColorCache {
    Neural { cache: DecodeCache, channel_offset: usize, channels: usize },
    Sh { bases: Vec<[f64; SH_COEFFS]>, values: Vec<f64>, channel_offset: usize, channels: usize },
}

/// Appearance gradients for the primitives passed to [`ColorModel::colors`].
#[derive(Debug, Clone, Default)]
pub struct ColorGrads {
    /// `rows x feature_dim`, aligned with the `indices` given to `colors`.
    pub d_features: Vec<f64>,
    /// Decoder parameter gradient (empty for SH).
    pub d_decoder: Vec<f64>,
}

impl ColorModel {
    pub fn kind(&self, band_set: &SpectralBandSet, feature_dim: usize) -> ColorModelKind {
        match self {
            ColorModel::Neural(_) => ColorModelKind::Neural { feature_dim },
            ColorModel::PerBandSh => ColorModelKind::PerBandSh {
                degree: sh::SH_DEGREE,
                total_channels: band_set.total_channels(),
            },
        }
    }

    pub fn decoder(&self) -> Option<&ColorDecoder> {
        match self {
            ColorModel::Neural(d) => Some(d),
            ColorModel::PerBandSh => None,
        }
    }

    pub fn decoder_mut(&mut self) -> Option<&mut ColorDecoder> {
        match self {
            ColorModel::Neural(d) => Some(d),
            ColorModel::PerBandSh => None,
        }
    }

    /// Feature width this model expects on the cloud.
    pub fn expected_feature_dim(&self, band_set: &SpectralBandSet) -> usize {
        match self {
            ColorModel::Neural(d) => d.shape().feature_dim,
            ColorModel::PerBandSh => SH_COEFFS * band_set.total_channels(),
        }
    }

    pub fn check(&self, cloud: &GaussianCloud, band_set: &SpectralBandSet) -> Result<()> {
        let want = self.expected_feature_dim(band_set);
        if cloud.feature_dim != want {
            return Err(Error::dims(format!(
                "color model expects feature width {want}, cloud has {}",
                cloud.feature_dim
            )));
        }
        if let ColorModel::Neural(d) = self {
            if d.shape().out_dim != band_set.total_channels() {
                return Err(Error::dims(format!(
                    "decoder emits {} channels, band set has {}",
                    d.shape().out_dim,
                    band_set.total_channels()
                )));
            }
        }
        Ok(())
    }

    /// Colours of `band` for the primitives in `indices`, seen from
    /// `camera_center`. Returns `indices.len() x channels` values.
    pub fn colors(
        &self,
        cloud: &GaussianCloud,
        band_set: &SpectralBandSet,
        band: usize,
        indices: &[usize],
        camera_center: &Vector3<f64>,
    ) -> Result<(Vec<f64>, ColorCache)> {
        self.check(cloud, band_set)?;
        let channel_offset = band_set.channel_offset(band)?;
        let channels = band_set.band(band)?.channel_count;
        match self {
            ColorModel::Neural(dec) => {
                let d = cloud.feature_dim;
                let mut feats = Vec::with_capacity(indices.len() * d);
                let mut dirs = Vec::with_capacity(indices.len());
                for &i in indices {
                    feats.extend_from_slice(cloud.feature(i));
                    dirs.push(direction_to_spherical(view_direction(cloud.positions[i], camera_center))?);
                }
                let out = dec.forward(&feats, &dirs)?;
                let b = dec.shape().out_dim;
                let mut colors = Vec::with_capacity(indices.len() * channels);
                for r in 0..indices.len() {
                    colors.extend_from_slice(&out.colors[r * b + channel_offset..r * b + channel_offset + channels]);
                }
                Ok((colors, ColorCache::Neural { cache: out.cache, channel_offset, channels }))
            }
            ColorModel::PerBandSh => {
                let mut colors = vec![0.0; indices.len() * channels];
                let mut bases = Vec::with_capacity(indices.len());
                for (r, &i) in indices.iter().enumerate() {
                    let basis = sh_basis(view_direction(cloud.positions[i], camera_center));
                    sh_eval_row(cloud.feature(i), &basis, channel_offset, channels, &mut colors[r * channels..(r + 1) * channels]);
                    bases.push(basis);
                }
                Ok((colors.clone(), ColorCache::Sh { bases, values: colors, channel_offset, channels }))
            }
        }
    }

    /// Reverse of [`ColorModel::colors`] given `dL/dcolors`.
    pub fn backward(&self, feature_dim: usize, cache: &ColorCache, d_colors: &[f64]) -> Result<ColorGrads> {
        match (self, cache) {
            (ColorModel::Neural(dec), ColorCache::Neural { cache, channel_offset, channels }) => {
                let rows = cache.rows();
                if d_colors.len() != rows * channels {
                    return Err(Error::StaleCache("colour gradient length mismatch".into()));
                }
                let b = dec.shape().out_dim;
                let mut full = vec![0.0; rows * b];
                for r in 0..rows {
                    full[r * b + channel_offset..r * b + channel_offset + channels]
                        .copy_from_slice(&d_colors[r * channels..(r + 1) * channels]);
                }
                let (d_features, d_decoder) = dec.backward(cache, &full)?;
                Ok(ColorGrads { d_features, d_decoder })
            }
            (ColorModel::PerBandSh, ColorCache::Sh { bases, values, channel_offset, channels }) => {
                if d_colors.len() != bases.len() * channels {
                    return Err(Error::StaleCache("colour gradient length mismatch".into()));
                }
                let mut d_features = vec![0.0; bases.len() * feature_dim];
                for (r, basis) in bases.iter().enumerate() {
                    for c in 0..*channels {
                        if values[r * channels + c] <= 0.0 {
                            continue;
                        }
                        let g = d_colors[r * channels + c];
                        let off = r * feature_dim + (channel_offset + c) * SH_COEFFS;
                        for (k, bv) in basis.iter().enumerate() {
                            d_features[off + k] = g * bv;
                        }
                    }
                }
                Ok(ColorGrads { d_features, d_decoder: Vec::new() })
            }
            _ => Err(Error::StaleCache("colour cache does not match the colour model".into())),
        }
    }
}
