//! Seeded synthetic multi-band scenes rendered by the forward rasterizer.

use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{requantize16, save_checkpoint, write_dataset, Checkpoint, Dataset};
use crate::color::{ColorDecoder, ColorModel, DecoderShape};
use crate::error::Result;
use crate::model::SplatModel;
use crate::raster::Camera;
use crate::scene::{logit, CameraView, GaussianCloud, Intrinsics, Pose, SparsePoints, SpectralBandSet};
use crate::train::TrainConfig;

pub const TRUTH_FILE: &str = "ground_truth.ckpt";

const LATENT_DIM: usize = 8;
const TEXTURE_DIMS: usize = 2;
const HIDDEN: usize = 16;
const TEXTURE_UNITS: usize = 4;
const CAMERA_RADIUS: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub seed: u64,
    pub n_gaussians: usize,
    pub views_per_band: usize,
    pub band_set: SpectralBandSet,
    pub width: usize,
    pub height: usize,
    /// Give the NIR band primitive-level detail that no other band sees.
    pub nir_texture: bool,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 1,
            n_gaussians: 100,
            views_per_band: 16,
            band_set: SpectralBandSet::drone_rig(),
            width: 64,
            height: 64,
            nir_texture: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub dataset: Dataset,
    pub truth: Checkpoint,
}

impl SynthScene {
    /// Writes the dataset layout plus the ground-truth checkpoint.
    pub fn write(&self, root: &Path) -> Result<()> {
        write_dataset(&self.dataset, root)?;
        save_checkpoint(&self.truth, &root.join(TRUTH_FILE))
    }
}

/// Centre wavelengths of every channel; RGB channels get blue/green/red.
fn channel_wavelengths(bs: &SpectralBandSet) -> Vec<f64> {
    let mut out = Vec::with_capacity(bs.total_channels());
    for (j, b) in bs.bands().iter().enumerate() {
        if b.channel_count == 3 && b.wavelength_nm.is_none() {
            out.extend([470.0, 550.0, 640.0]);
        } else {
            let l = b.wavelength_nm.unwrap_or(450.0 + 100.0 * j as f64);
            out.extend(std::iter::repeat_n(l, b.channel_count));
        }
    }
    out
}

/// A pose that survives the quaternion text round trip unchanged.
fn storable_pose(p: &Pose) -> Result<Pose> {
    let mut pose = Pose::from_quat_translation(p.quaternion(), p.translation.into())?;
    for _ in 0..16 {
        let next = Pose::from_quat_translation(pose.quaternion(), pose.translation.into())?;
        if next.rotation == pose.rotation {
            break;
        }
        pose = next;
    }
    Ok(pose)
}

/// Decoder whose outputs are smooth functions of wavelength over shared
/// latent units, so neighbouring bands are correlated.
fn truth_decoder(bs: &SpectralBandSet, nir_texture: bool, rng: &mut ChaCha8Rng) -> Result<ColorDecoder> {
    let b = bs.total_channels();
    let shape = DecoderShape { feature_dim: LATENT_DIM, hidden_width: HIDDEN, hidden_layers: 0, out_dim: b };
    let inp = shape.input_dim();
    let mut params = Vec::with_capacity(shape.param_count());
    let n_in = Normal::new(0.0, 1.0 / (LATENT_DIM as f64).sqrt()).expect("valid normal");
    let shared_dims = LATENT_DIM - TEXTURE_DIMS;
    for h in 0..HIDDEN {
        let texture_unit = h >= HIDDEN - TEXTURE_UNITS;
        for j in 0..inp {
            let w = if j >= LATENT_DIM {
                0.0
            } else if nir_texture && (texture_unit != (j >= shared_dims)) {
                0.0
            } else {
                n_in.sample(rng)
            };
            params.push(w);
        }
    }
    params.extend(std::iter::repeat_n(0.0, HIDDEN));

    let lambdas = channel_wavelengths(bs);
    let centers = [450.0, 600.0, 750.0, 900.0];
    let n_out = Normal::new(0.0, 1.5 / (HIDDEN as f64).sqrt()).expect("valid normal");
    let p: Vec<f64> = (0..centers.len() * HIDDEN).map(|_| n_out.sample(rng)).collect();
    let texture: Vec<f64> = (0..TEXTURE_UNITS).map(|_| 2.0 * n_out.sample(rng)).collect();
    let nir_range = bs.find("nir").ok().map(|j| {
        let off = bs.channel_offset(j).expect("valid band");
        off..off + bs.bands()[j].channel_count
    });
    for (c, &l) in lambdas.iter().enumerate() {
        let g: Vec<f64> = centers.iter().map(|m| (-((l - m) / 150.0).powi(2)).exp()).collect();
        for h in 0..HIDDEN {
            let texture_unit = h >= HIDDEN - TEXTURE_UNITS;
            let w = if nir_texture && texture_unit {
                if nir_range.as_ref().is_some_and(|r| r.contains(&c)) {
                    texture[h - (HIDDEN - TEXTURE_UNITS)]
                } else {
                    0.0
                }
            } else {
                (0..centers.len()).map(|k| g[k] * p[k * HIDDEN + h]).sum()
            };
            params.push(w);
        }
    }
    params.extend(std::iter::repeat_n(0.0, b));
    ColorDecoder::from_params(shape, params)
}

fn truth_cloud(n: usize, rng: &mut ChaCha8Rng) -> GaussianCloud {
    let mut cloud = GaussianCloud::empty(LATENT_DIM);
    let mut feature = [0.0; LATENT_DIM];
    while cloud.len() < n {
        let p: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        if p.iter().map(|v| v * v).sum::<f64>() > 1.0 {
            continue;
        }
        let mut q = [0.0; 4];
        for v in q.iter_mut() {
            *v = StandardNormal.sample(rng);
        }
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        q.iter_mut().for_each(|v| *v /= norm);
        let ls = [0; 3].map(|_| rng.random_range(0.08f64..0.2).ln());
        let o = logit(rng.random_range(0.5..0.95));
        for f in feature.iter_mut() {
            *f = StandardNormal.sample(rng);
        }
        cloud.push(p, q, ls, o, &feature);
    }
    cloud
}

/// Rig position `k` of `n` on a band of the sphere around the origin.
fn rig_eye(k: usize, n: usize) -> Vector3<f64> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let z = 0.8 * (1.0 - 2.0 * (k as f64 + 0.5) / n as f64);
    let r = (1.0 - z * z).sqrt();
    let az = k as f64 * golden;
    CAMERA_RADIUS * Vector3::new(r * az.cos(), r * az.sin(), z)
}

/// Builds a scene, renders every band from a multi-camera rig and quantizes
/// the renders to 16 bits so that the in-memory images equal the files
/// written by [`SynthScene::write`].
pub fn make_synthetic_scene(params: &SynthParams) -> Result<SynthScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let bs = params.band_set.clone();
    let decoder = truth_decoder(&bs, params.nir_texture, &mut rng)?;
    let cloud = truth_cloud(params.n_gaussians, &mut rng);
    let model = SplatModel::new(bs.clone(), cloud, ColorModel::Neural(decoder))?;

    let up = Vector3::new(0.0, 0.0, 1.0);
    let nb = bs.len();
    let mut views = Vec::with_capacity(nb * params.views_per_band);
    for (j, band) in bs.bands().iter().enumerate() {
        let f = 1.4 * params.width as f64 * (1.0 + 0.02 * j as f64);
        let intrinsics = Intrinsics {
            fx: f,
            fy: f,
            cx: params.width as f64 / 2.0,
            cy: params.height as f64 / 2.0,
            width: params.width,
            height: params.height,
        };
        for k in 0..params.views_per_band {
            let eye = rig_eye(k, params.views_per_band);
            let base = Pose::look_at(eye, Vector3::zeros(), up);
            let right = base.rotation.row(0).transpose();
            let eye = eye + right * (0.05 * (j as f64 - (nb as f64 - 1.0) / 2.0));
            let look = Pose::look_at(eye, Vector3::zeros(), up);
            let pose = storable_pose(&look)?;
            let camera = Camera { intrinsics, pose };
            let img = requantize16(&model.render(&camera, j)?);
            views.push(CameraView {
                camera_id: j as u32 + 1,
                band_index: j,
                intrinsics,
                world_to_camera: pose,
                name: format!("{}_{k:03}.png", band.name),
                image: Some(Arc::new(img)),
            });
        }
    }
    let jitter = Normal::new(0.0, 0.01).expect("valid normal");
    let points = SparsePoints {
        positions: model.cloud.positions.iter().map(|p| p.map(|v| v + jitter.sample(&mut rng))).collect(),
        colors: None,
    };
    let truth = Checkpoint { model, iteration: 0, config: TrainConfig::default() };
    Ok(SynthScene { dataset: Dataset { band_set: bs, views, points }, truth })
}
