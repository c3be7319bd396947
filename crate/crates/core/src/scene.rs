//! Shared-geometry Gaussian scene, cameras and spectral band bookkeeping.

use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::knn::knn;

/// Activated opacity given to freshly initialized primitives.
pub const INIT_OPACITY: f64 = 0.1;
/// Standard deviation of the initial feature distribution.
pub const INIT_FEATURE_STD: f64 = 0.2;
/// Floats per primitive for position, rotation, scale and opacity.
pub const GEOMETRY_FLOATS: usize = 3 + 4 + 3 + 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandDesc {
    pub name: String,
    pub channel_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wavelength_nm: Option<f64>,
}

impl BandDesc {
    pub fn new(name: &str, channel_count: usize, wavelength_nm: Option<f64>) -> Self {
        BandDesc { name: name.to_string(), channel_count, wavelength_nm }
    }
}

/// Ordered set of spectral bands. The concatenated channel vector of all
/// bands has length [`SpectralBandSet::total_channels`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralBandSet {
    bands: Vec<BandDesc>,
}

impl SpectralBandSet {
    pub fn new(bands: Vec<BandDesc>) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::Config("band set is empty".into()));
        }
        for (i, b) in bands.iter().enumerate() {
            if b.channel_count == 0 {
                return Err(Error::Config(format!("band {} has zero channels", b.name)));
            }
            if bands[..i].iter().any(|o| o.name == b.name) {
                return Err(Error::Config(format!("duplicate band name {}", b.name)));
            }
        }
        Ok(SpectralBandSet { bands })
    }

    /// RGB plus the four narrow multi-spectral bands of a typical drone rig.
    pub fn drone_rig() -> Self {
        SpectralBandSet {
            bands: vec![
                BandDesc::new("RGB", 3, None),
                BandDesc::new("G", 1, Some(560.0)),
                BandDesc::new("R", 1, Some(650.0)),
                BandDesc::new("RE", 1, Some(730.0)),
                BandDesc::new("NIR", 1, Some(860.0)),
            ],
        }
    }

    pub fn bands(&self) -> &[BandDesc] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn band(&self, index: usize) -> Result<&BandDesc> {
        self.bands.get(index).ok_or(Error::BadBandIndex { index, count: self.bands.len() })
    }

    pub fn total_channels(&self) -> usize {
        self.bands.iter().map(|b| b.channel_count).sum()
    }

    /// Offset of the band's first channel in the concatenated channel vector.
    pub fn channel_offset(&self, index: usize) -> Result<usize> {
        self.band(index)?;
        Ok(self.bands[..index].iter().map(|b| b.channel_count).sum())
    }

    /// Band lookup by name, case-insensitive.
    pub fn find(&self, name: &str) -> Result<usize> {
        self.bands
            .iter()
            .position(|b| b.name.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::BandNotFound(name.to_string()))
    }

    pub fn is_rgb(&self, index: usize) -> bool {
        self.bands.get(index).is_some_and(|b| b.name.eq_ignore_ascii_case("rgb"))
    }

    /// Indices of the non-RGB bands, in set order.
    pub fn multispectral_indices(&self) -> Vec<usize> {
        (0..self.bands.len()).filter(|&i| !self.is_rgb(i)).collect()
    }
}

/// Structure-of-arrays Gaussian scene. Rotations are stored as `(w, x, y, z)`
/// and normalized at use; scales are stored as logarithms and opacities as
/// logits.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianCloud {
    pub positions: Vec<[f64; 3]>,
    pub rotations: Vec<[f64; 4]>,
    pub log_scales: Vec<[f64; 3]>,
    pub opacity_logits: Vec<f64>,
    pub features: Vec<f64>,
    pub feature_dim: usize,
}

impl GaussianCloud {
    pub fn empty(feature_dim: usize) -> Self {
        GaussianCloud {
            positions: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            features: Vec::new(),
            feature_dim,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, position: [f64; 3], rotation: [f64; 4], log_scale: [f64; 3], opacity_logit: f64, feature: &[f64]) {
        assert_eq!(feature.len(), self.feature_dim, "feature length");
        self.positions.push(position);
        self.rotations.push(rotation);
        self.log_scales.push(log_scale);
        self.opacity_logits.push(opacity_logit);
        self.features.extend_from_slice(feature);
    }

    pub fn check(&self) -> Result<()> {
        let s = self.len();
        if self.rotations.len() != s
            || self.log_scales.len() != s
            || self.opacity_logits.len() != s
            || self.features.len() != s * self.feature_dim
        {
            return Err(Error::dims("gaussian cloud arrays disagree on primitive count"));
        }
        Ok(())
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }

    pub fn scale(&self, i: usize) -> [f64; 3] {
        self.log_scales[i].map(f64::exp)
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.feature_dim..(i + 1) * self.feature_dim]
    }

    pub fn feature_mut(&mut self, i: usize) -> &mut [f64] {
        let d = self.feature_dim;
        &mut self.features[i * d..(i + 1) * d]
    }

    /// Rebuilds the cloud from `sources`: entry `i` of the result copies
    /// primitive `sources[i]` of `self`.
    pub fn gather(&self, sources: &[usize]) -> GaussianCloud {
        let mut out = GaussianCloud::empty(self.feature_dim);
        for &s in sources {
            out.push(self.positions[s], self.rotations[s], self.log_scales[s], self.opacity_logits[s], self.feature(s));
        }
        out
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Normalizes a `(w, x, y, z)` quaternion.
pub fn normalize_quat(q: [f64; 4]) -> Result<[f64; 4]> {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    if n == 0.0 || !n.is_finite() {
        return Err(Error::InvalidRotation);
    }
    Ok(q.map(|c| c / n))
}

/// Rotation matrix of a unit `(w, x, y, z)` quaternion.
pub fn unit_quat_to_matrix(q: [f64; 4]) -> Matrix3<f64> {
    let [w, x, y, z] = q;
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

pub fn quat_to_matrix(q: [f64; 4]) -> Result<Matrix3<f64>> {
    Ok(unit_quat_to_matrix(normalize_quat(q)?))
}

/// `R diag(s^2) R^T` with `s = exp(log_scale)`.
pub fn covariance_of(rotation: [f64; 4], log_scale: [f64; 3]) -> Result<Matrix3<f64>> {
    let r = quat_to_matrix(rotation)?;
    let s = Matrix3::from_diagonal(&Vector3::from(log_scale.map(|l| (2.0 * l).exp())));
    let cov = r * s * r.transpose();
    Ok((cov + cov.transpose()) * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Intrinsics {
    pub fn validate(&self) -> Result<()> {
        let ok = self.fx > 0.0
            && self.fy > 0.0
            && self.width > 0
            && self.height > 0
            && self.cx >= 0.0
            && self.cx < self.width as f64
            && self.cy >= 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid pinhole intrinsics {self:?}")))
        }
    }

    /// Intrinsics of the image box-downsampled by `factor`. Pixel `i'` of the
    /// smaller image is centred on original coordinate `f*i' + (f-1)/2`.
    pub fn downsampled(&self, factor: usize) -> Intrinsics {
        if factor <= 1 {
            return *self;
        }
        let f = factor as f64;
        let off = (f - 1.0) / 2.0;
        Intrinsics {
            fx: self.fx / f,
            fy: self.fy / f,
            cx: (self.cx - off) / f,
            cy: (self.cy - off) / f,
            width: (self.width / factor).max(1),
            height: (self.height / factor).max(1),
        }
    }
}

/// Rigid world-to-camera transform `x_cam = R x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn from_quat_translation(q: [f64; 4], t: [f64; 3]) -> Result<Self> {
        Ok(Pose { rotation: quat_to_matrix(q)?, translation: Vector3::from(t) })
    }

    /// Camera at `eye` looking at `target`, with image `y` pointing roughly
    /// along `-up` (OpenCV convention: x right, y down, z forward).
    pub fn look_at(eye: Vector3<f64>, target: Vector3<f64>, up: Vector3<f64>) -> Self {
        let z = (target - eye).normalize();
        let x = z.cross(&up).normalize();
        let y = z.cross(&x);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Pose { rotation, translation: -(rotation * eye) }
    }

    pub fn camera_center(&self) -> Vector3<f64> {
        -(self.rotation.transpose() * self.translation)
    }

    pub fn transform(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    /// Rotation as a `(w, x, y, z)` unit quaternion with `w >= 0`.
    pub fn quaternion(&self) -> [f64; 4] {
        let r = &self.rotation;
        let trace = r[(0, 0)] + r[(1, 1)] + r[(2, 2)];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            [0.25 * s, (r[(2, 1)] - r[(1, 2)]) / s, (r[(0, 2)] - r[(2, 0)]) / s, (r[(1, 0)] - r[(0, 1)]) / s]
        } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
            let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
            [(r[(2, 1)] - r[(1, 2)]) / s, 0.25 * s, (r[(0, 1)] + r[(1, 0)]) / s, (r[(0, 2)] + r[(2, 0)]) / s]
        } else if r[(1, 1)] > r[(2, 2)] {
            let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
            [(r[(0, 2)] - r[(2, 0)]) / s, (r[(0, 1)] + r[(1, 0)]) / s, 0.25 * s, (r[(1, 2)] + r[(2, 1)]) / s]
        } else {
            let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
            [(r[(1, 0)] - r[(0, 1)]) / s, (r[(0, 2)] + r[(2, 0)]) / s, (r[(1, 2)] + r[(2, 1)]) / s, 0.25 * s]
        };
        let q = normalize_quat(q).expect("rotation matrix yields a finite quaternion");
        if q[0] < 0.0 {
            q.map(|c| -c)
        } else {
            q
        }
    }

    pub fn validate(&self) -> Result<()> {
        let r = &self.rotation;
        let ortho = (r * r.transpose() - Matrix3::identity()).abs().max();
        if ortho > 1e-6 || (r.determinant() - 1.0).abs() > 1e-6 {
            return Err(Error::InvalidRotation);
        }
        Ok(())
    }
}

/// One registered image of one physical camera.
#[derive(Debug, Clone)]
pub struct CameraView {
    pub camera_id: u32,
    pub band_index: usize,
    pub intrinsics: Intrinsics,
    pub world_to_camera: Pose,
    pub name: String,
    pub image: Option<Arc<Image>>,
}

impl CameraView {
    pub fn camera_center(&self) -> Vector3<f64> {
        self.world_to_camera.camera_center()
    }
}

/// Sparse reconstruction points. Colours are carried through parsing but
/// never used for initialization.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparsePoints {
    pub positions: Vec<[f64; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
}

/// Creates one primitive per sparse point with isotropic scale equal to the
/// mean distance to its `knn_k` nearest neighbours.
pub fn init_from_points(points: &SparsePoints, feature_dim: usize, knn_k: usize, seed: u64) -> Result<GaussianCloud> {
    let p = points.positions.len();
    if knn_k == 0 || p < knn_k + 1 {
        return Err(Error::InsufficientPoints { needed: knn_k.max(1) + 1, got: p });
    }
    let table = knn(&points.positions, knn_k);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, INIT_FEATURE_STD).expect("valid normal");
    let opacity_logit = logit(INIT_OPACITY);
    let mut cloud = GaussianCloud::empty(feature_dim);
    let mut feature = vec![0.0; feature_dim];
    for i in 0..p {
        let d = table.neighbor_distances(i);
        let mean = d.iter().sum::<f64>() / d.len() as f64;
        let ls = mean.max(1e-7).ln();
        for f in feature.iter_mut() {
            *f = normal.sample(&mut rng);
        }
        cloud.push(points.positions[i], [1.0, 0.0, 0.0, 0.0], [ls; 3], opacity_logit, &feature);
    }
    Ok(cloud)
}

/// Per-primitive appearance model, for payload accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColorModelKind {
    Neural { feature_dim: usize },
    PerBandSh { degree: usize, total_channels: usize },
}

pub fn payload_floats_per_primitive(model: ColorModelKind) -> usize {
    match model {
        ColorModelKind::Neural { feature_dim } => GEOMETRY_FLOATS + feature_dim,
        ColorModelKind::PerBandSh { degree, total_channels } => {
            GEOMETRY_FLOATS + (degree + 1) * (degree + 1) * total_channels
        }
    }
}
