//! Differentiable rendering of one spectral band of a Gaussian scene.

mod blend;
mod project;

pub use blend::{rasterize_backward, rasterize_forward, BlendSettings, RasterGrads, RenderAux, TILE_SIZE};
pub use project::{project, project_backward, quat_backward, ProjectGrads, Projected2D, COV_DILATION, NEAR_PLANE};

use crate::color::{ColorCache, ColorModel};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::scene::{CameraView, GaussianCloud, Intrinsics, Pose, SpectralBandSet};

/// Everything the reverse pass needs from a forward render.
#[derive(Debug, Clone)]
pub struct RenderOutput {
    pub image: Image,
    pub projected: Projected2D,
    pub aux: RenderAux,
    pub visible: Vec<usize>,
    /// `N x C` band colours, zero rows for culled primitives.
    pub colors: Vec<f64>,
    pub opacities: Vec<f64>,
    color_cache: ColorCache,
    band: usize,
}

impl RenderOutput {
    pub fn band(&self) -> usize {
        self.band
    }
}

/// Gradients of a render with respect to every scene parameter.
#[derive(Debug, Clone)]
pub struct SceneGrads {
    pub d_positions: Vec<[f64; 3]>,
    pub d_log_scales: Vec<[f64; 3]>,
    pub d_rotations: Vec<[f64; 4]>,
    pub d_opacity_logits: Vec<f64>,
    /// `S x feature_dim`.
    pub d_features: Vec<f64>,
    /// Decoder parameters (empty for SH).
    pub d_decoder: Vec<f64>,
    /// Homodirectional view-space gradient in pixel units.
    pub homodir: Vec<[f64; 2]>,
    pub touched: Vec<u32>,
}

/// A camera for rendering: intrinsics plus world-to-camera pose.
#[derive(Debug, Clone, Copy)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

impl From<&CameraView> for Camera {
    fn from(v: &CameraView) -> Self {
        Camera { intrinsics: v.intrinsics, pose: v.world_to_camera }
    }
}

/// Project, decode the visible primitives, then composite.
pub fn render_forward(
    cloud: &GaussianCloud,
    model: &ColorModel,
    band_set: &SpectralBandSet,
    camera: &Camera,
    band: usize,
    background: &[f64],
    settings: BlendSettings,
) -> Result<RenderOutput> {
    cloud.check()?;
    let channels = band_set.band(band)?.channel_count;
    if background.len() != channels {
        return Err(Error::dims(format!(
            "background has {} channels, band has {}",
            background.len(),
            channels
        )));
    }
    let k = &camera.intrinsics;
    let projected = project(cloud, k, &camera.pose);
    let visible = projected.visible_indices();
    let center = camera.pose.camera_center();
    let (vis_colors, color_cache) = model.colors(cloud, band_set, band, &visible, &center)?;
    let mut colors = vec![0.0; cloud.len() * channels];
    for (r, &i) in visible.iter().enumerate() {
        colors[i * channels..(i + 1) * channels].copy_from_slice(&vis_colors[r * channels..(r + 1) * channels]);
    }
    let opacities: Vec<f64> = (0..cloud.len()).map(|i| cloud.opacity(i)).collect();
    let (image, aux) = rasterize_forward(&projected, &colors, &opacities, k.width, k.height, background, settings)?;
    Ok(RenderOutput { image, projected, aux, visible, colors, opacities, color_cache, band })
}

/// Reverse pass through composite, colour model and projection.
pub fn render_backward(
    cloud: &GaussianCloud,
    model: &ColorModel,
    camera: &Camera,
    out: &RenderOutput,
    d_image: &Image,
) -> Result<SceneGrads> {
    let rg = rasterize_backward(&out.projected, &out.colors, &out.opacities, &out.aux, d_image)?;
    let pg = project_backward(cloud, &camera.intrinsics, &camera.pose, &out.projected, &rg.d_mean2d, &rg.d_conic);
    let ch = out.aux.channels;
    let mut vis_dcol = Vec::with_capacity(out.visible.len() * ch);
    for &i in &out.visible {
        vis_dcol.extend_from_slice(&rg.d_colors[i * ch..(i + 1) * ch]);
    }
    let d = cloud.feature_dim;
    let cg = model.backward(d, &out.color_cache, &vis_dcol)?;
    let mut d_features = vec![0.0; cloud.len() * d];
    for (r, &i) in out.visible.iter().enumerate() {
        d_features[i * d..(i + 1) * d].copy_from_slice(&cg.d_features[r * d..(r + 1) * d]);
    }
    let d_opacity_logits = rg
        .d_opacity
        .iter()
        .zip(&out.opacities)
        .map(|(g, o)| g * o * (1.0 - o))
        .collect();
    Ok(SceneGrads {
        d_positions: pg.d_positions,
        d_log_scales: pg.d_log_scales,
        d_rotations: pg.d_rotations,
        d_opacity_logits,
        d_features,
        d_decoder: cg.d_decoder,
        homodir: rg.homodir,
        touched: rg.touched,
    })
}

/// Renders one band of `view` with default blending.
pub fn render_view(
    cloud: &GaussianCloud,
    model: &ColorModel,
    band_set: &SpectralBandSet,
    camera: &Camera,
    band: usize,
    background: &[f64],
) -> Result<Image> {
    Ok(render_forward(cloud, model, band_set, camera, band, background, BlendSettings::default())?.image)
}
