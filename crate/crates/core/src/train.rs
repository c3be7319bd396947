//! The optimisation loop: view sampling, warm-up, Adam updates,
//! coarse-to-fine resolution and band-aware densification.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::color::sh::SH_COEFFS;
use crate::color::{ColorDecoder, ColorModel, DecoderShape};
use crate::densify::{self, DensifyParams, DensifyState};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::io::Checkpoint;
use crate::knn::{knn, KnnTable};
use crate::loss::{total_loss, LossWeights};
use crate::metrics::{evaluate, EvalReport};
use crate::model::SplatModel;
use crate::optim::{AdamConfig, AdamState, CloudMoments};
use crate::raster::{render_backward, BlendSettings, Camera};
use crate::scene::{init_from_points, logit, CameraView, SparsePoints, SpectralBandSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColorModelChoice {
    Neural,
    Sh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Weighted categorical draw over all training images.
    Weighted,
    /// `rgb_sampling_weight` multispectral images, then one RGB image.
    Interleave,
}

/// Render at `1/factor` resolution while `iteration < until`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResolutionStage {
    pub until: u64,
    pub factor: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub seed: u64,
    pub color_model: ColorModelChoice,
    pub feature_dim: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    /// Neighbours used for the initial scale estimate.
    pub init_knn: usize,
    pub lr_feature: f64,
    pub lr_mlp: f64,
    pub lr_position_init: f64,
    pub lr_position_final: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub adam: AdamConfig,
    pub warmup_iters: u64,
    pub rgb_sampling_weight: f64,
    pub sampling: SamplingMode,
    pub densify_enabled: bool,
    pub densify_interval: u64,
    pub densify_start: u64,
    /// Defaults to 60% of `iterations`.
    pub densify_stop: Option<u64>,
    pub densify: DensifyParams,
    /// Every this many iterations inside the densification window; 0 disables.
    pub opacity_reset_interval: u64,
    pub resolution_schedule: Vec<ResolutionStage>,
    pub loss: LossWeights,
    /// Neighbours for the cosine feature loss.
    pub cos_knn: usize,
    /// Uniform background value for every band.
    pub background: f64,
    /// Held-out evaluation period; 0 evaluates only at the end.
    pub eval_interval: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 120_000,
            seed: 0,
            color_model: ColorModelChoice::Neural,
            feature_dim: 8,
            hidden_width: 32,
            hidden_layers: 1,
            init_knn: 3,
            lr_feature: 0.005,
            lr_mlp: 0.005,
            lr_position_init: 1.6e-4,
            lr_position_final: 1.6e-6,
            lr_opacity: 0.05,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            adam: AdamConfig::default(),
            warmup_iters: 500,
            rgb_sampling_weight: 4.0,
            sampling: SamplingMode::Weighted,
            densify_enabled: true,
            densify_interval: 300,
            densify_start: 500,
            densify_stop: None,
            densify: DensifyParams::default(),
            opacity_reset_interval: 3000,
            resolution_schedule: vec![ResolutionStage { until: 250, factor: 4 }, ResolutionStage { until: 500, factor: 2 }],
            loss: LossWeights::default(),
            cos_knn: 16,
            background: 0.0,
            eval_interval: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let rates = [
            self.lr_feature,
            self.lr_mlp,
            self.lr_position_init,
            self.lr_position_final,
            self.lr_opacity,
            self.lr_scale,
            self.lr_rotation,
        ];
        if rates.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.feature_dim == 0 || self.hidden_width == 0 {
            return Err(Error::Config("feature_dim and hidden_width must be positive".into()));
        }
        if !(self.rgb_sampling_weight > 0.0) {
            return Err(Error::Config("rgb_sampling_weight must be positive".into()));
        }
        if self.densify_interval == 0 {
            return Err(Error::Config("densify_interval must be positive".into()));
        }
        if self.resolution_schedule.iter().any(|s| s.factor == 0) {
            return Err(Error::Config("resolution factors must be positive".into()));
        }
        self.loss.validate()
    }

    pub fn densify_stop(&self) -> u64 {
        self.densify_stop.unwrap_or(self.iterations * 3 / 5)
    }

    /// Downsampling factor scheduled for `iteration`.
    pub fn resolution_factor(&self, iteration: u64) -> usize {
        self.resolution_schedule
            .iter()
            .find(|s| iteration < s.until)
            .map_or(1, |s| s.factor)
    }

    /// Exponentially decaying position learning rate (before extent scaling).
    pub fn position_lr(&self, iteration: u64) -> f64 {
        let t = if self.iterations == 0 { 0.0 } else { (iteration as f64 / self.iterations as f64).clamp(0.0, 1.0) };
        (self.lr_position_init.ln() * (1.0 - t) + self.lr_position_final.ln() * t).exp()
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Weighted categorical draw: RGB images weigh `rgb_weight`, others 1.
pub fn sample_view<R: Rng>(rng: &mut R, views: &[CameraView], band_set: &SpectralBandSet, rgb_weight: f64) -> Result<usize> {
    if views.is_empty() {
        return Err(Error::EmptyViews);
    }
    let weight = |v: &CameraView| if band_set.is_rgb(v.band_index) { rgb_weight } else { 1.0 };
    let total: f64 = views.iter().map(weight).sum();
    let mut u = rng.random::<f64>() * total;
    for (i, v) in views.iter().enumerate() {
        u -= weight(v);
        if u < 0.0 {
            return Ok(i);
        }
    }
    Ok(views.len() - 1)
}

/// Bookkeeping for one densification event.
#[derive(Debug, Clone, PartialEq)]
pub struct DensifyEvent {
    pub mask: Vec<bool>,
    pub before: usize,
    pub after_densify: usize,
    pub after_prune: usize,
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub iteration: u64,
    pub view: usize,
    pub band: usize,
    pub loss: f64,
    pub l1: f64,
    pub primitives: usize,
    pub resolution_factor: usize,
    /// Homodirectional gradients as accumulated for densification.
    pub homodir: Vec<[f64; 2]>,
    pub participated: Vec<bool>,
    pub densified: Option<DensifyEvent>,
    pub opacity_reset: bool,
}

impl StepReport {
    /// One `key=value` log line.
    pub fn log_line(&self) -> String {
        format!(
            "iter={} band={} view={} loss={:.8} l1={:.8} primitives={} res=1/{}{}{}",
            self.iteration,
            self.band,
            self.view,
            self.loss,
            self.l1,
            self.primitives,
            self.resolution_factor,
            self.densified
                .as_ref()
                .map_or(String::new(), |d| format!(" densify={}->{}->{}", d.before, d.after_densify, d.after_prune)),
            if self.opacity_reset { " opacity_reset=1" } else { "" },
        )
    }
}

fn split_seed(seed: u64, stream: u64) -> u64 {
    seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Radius of the bounding sphere of the camera centres, padded by 10%.
pub fn scene_extent(views: &[CameraView]) -> f64 {
    if views.is_empty() {
        return 1.0;
    }
    let centers: Vec<_> = views.iter().map(|v| v.camera_center()).collect();
    let mean = centers.iter().fold(nalgebra::Vector3::zeros(), |a, c| a + c) / centers.len() as f64;
    let r = centers.iter().map(|c| (c - mean).norm()).fold(0.0, f64::max);
    if r > 0.0 {
        1.1 * r
    } else {
        1.0
    }
}

/// Training state for one scene.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: SplatModel,
    pub iteration: u64,
    views: Vec<CameraView>,
    moments: CloudMoments,
    mlp: AdamState,
    sh_steps: Vec<u64>,
    densify: DensifyState,
    knn: Option<KnnTable>,
    extent: f64,
    sample_rng: ChaCha8Rng,
    densify_rng: ChaCha8Rng,
    interleave: u64,
}

impl Trainer {
    pub fn new(
        config: TrainConfig,
        band_set: SpectralBandSet,
        points: &SparsePoints,
        views: Vec<CameraView>,
    ) -> Result<Self> {
        config.validate()?;
        if views.is_empty() {
            return Err(Error::EmptyViews);
        }
        for v in &views {
            band_set.band(v.band_index)?;
            if v.image.is_none() {
                return Err(Error::Config(format!("training view {} has no image", v.name)));
            }
        }
        let (d, color) = match config.color_model {
            ColorModelChoice::Neural => {
                let shape = DecoderShape {
                    feature_dim: config.feature_dim,
                    hidden_width: config.hidden_width,
                    hidden_layers: config.hidden_layers,
                    out_dim: band_set.total_channels(),
                };
                (config.feature_dim, ColorModel::Neural(ColorDecoder::init(shape, split_seed(config.seed, 1))?))
            }
            ColorModelChoice::Sh => (SH_COEFFS * band_set.total_channels(), ColorModel::PerBandSh),
        };
        let mut cloud = init_from_points(points, d, config.init_knn, config.seed)?;
        if config.color_model == ColorModelChoice::Sh {
            cloud.features.iter_mut().for_each(|f| *f = 0.0);
        }
        let mut model = SplatModel::new(band_set, cloud, color)?;
        model.set_uniform_background(config.background);
        let moments = CloudMoments::new(&model.cloud);
        let mlp = AdamState::new(model.color.decoder().map_or(0, |d| d.params().len()), 1);
        let densify = DensifyState::new(model.cloud.len(), model.band_set.len());
        let sh_steps = vec![0; model.band_set.len()];
        let extent = scene_extent(&views);
        let mut t = Trainer {
            sample_rng: ChaCha8Rng::seed_from_u64(split_seed(config.seed, 2)),
            densify_rng: ChaCha8Rng::seed_from_u64(split_seed(config.seed, 3)),
            config,
            model,
            iteration: 0,
            views,
            moments,
            mlp,
            sh_steps,
            densify,
            knn: None,
            extent,
            interleave: 0,
        };
        t.rebuild_knn();
        Ok(t)
    }

    pub fn views(&self) -> &[CameraView] {
        &self.views
    }

    pub fn scene_extent(&self) -> f64 {
        self.extent
    }

    pub fn densify_state(&self) -> &DensifyState {
        &self.densify
    }

    pub fn moments(&self) -> &CloudMoments {
        &self.moments
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.iterations
    }

    fn rebuild_knn(&mut self) {
        self.knn = (self.config.loss.lambda_cos > 0.0 && self.model.cloud.len() > 1)
            .then(|| knn(&self.model.cloud.positions, self.config.cos_knn));
    }

    fn next_view(&mut self) -> Result<usize> {
        match self.config.sampling {
            SamplingMode::Weighted => {
                sample_view(&mut self.sample_rng, &self.views, &self.model.band_set, self.config.rgb_sampling_weight)
            }
            SamplingMode::Interleave => {
                let bs = &self.model.band_set;
                let period = self.config.rgb_sampling_weight.round().max(0.0) as u64 + 1;
                let want_rgb = self.interleave % period == period - 1;
                self.interleave += 1;
                let pool: Vec<usize> =
                    (0..self.views.len()).filter(|&i| bs.is_rgb(self.views[i].band_index) == want_rgb).collect();
                let pool = if pool.is_empty() { (0..self.views.len()).collect() } else { pool };
                Ok(pool[self.sample_rng.random_range(0..pool.len())])
            }
        }
    }

    /// Largest factor not above the scheduled one that keeps the image
    /// big enough for the SSIM window.
    fn effective_factor(&self, view: &CameraView, iteration: u64) -> usize {
        let mut f = self.config.resolution_factor(iteration);
        let k = &view.intrinsics;
        while f > 1 && (k.width / f < crate::ssim::WINDOW || k.height / f < crate::ssim::WINDOW) {
            f /= 2;
        }
        f.max(1)
    }

    /// One optimisation step on one sampled view.
    pub fn step(&mut self) -> Result<StepReport> {
        if self.is_done() {
            return Err(Error::Config("training already finished".into()));
        }
        let iter = self.iteration;
        let vi = self.next_view()?;
        let view = &self.views[vi];
        let band = view.band_index;
        let factor = self.effective_factor(view, iter);
        let full = view.image.as_ref().expect("checked at construction");
        let gt_small;
        let gt: &Image = if factor > 1 {
            gt_small = full.downsample(factor);
            &gt_small
        } else {
            full
        };
        let camera = Camera { intrinsics: view.intrinsics.downsampled(factor), pose: view.world_to_camera };
        let out = self.model.render_forward(&camera, band, BlendSettings::default())?;
        let mut weights = self.config.loss;
        if matches!(self.model.color, ColorModel::PerBandSh) {
            weights.lambda_norm = 0.0;
            weights.lambda_cos = 0.0;
        }
        let cloud = &self.model.cloud;
        let loss = total_loss(&out.image, gt, &cloud.features, cloud.feature_dim, self.knn.as_ref(), &weights)?;
        if !loss.value.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at iteration {iter}")));
        }
        let mut g = render_backward(cloud, &self.model.color, &camera, &out, &loss.d_image)?;
        for (a, b) in g.d_features.iter_mut().zip(&loss.d_features) {
            *a += b;
        }

        let cfg = self.config.adam;
        let cloud = &mut self.model.cloud;
        match &mut self.model.color {
            ColorModel::Neural(dec) => {
                self.moments.features.step(&mut cloud.features, &g.d_features, self.config.lr_feature, &cfg)?;
                self.mlp.step(dec.params_mut(), &g.d_decoder, self.config.lr_mlp, &cfg)?;
            }
            ColorModel::PerBandSh => {
                let off = self.model.band_set.channel_offset(band)?;
                let ch = self.model.band_set.band(band)?.channel_count;
                self.sh_steps[band] += 1;
                self.moments.features.step_columns(
                    &mut cloud.features,
                    &g.d_features,
                    self.config.lr_feature,
                    &cfg,
                    off * SH_COEFFS..(off + ch) * SH_COEFFS,
                    self.sh_steps[band],
                )?;
            }
        }
        if iter >= self.config.warmup_iters {
            let m = &mut self.moments;
            let lr_pos = self.config.position_lr(iter) * self.extent;
            m.positions.step(cloud.positions.as_flattened_mut(), g.d_positions.as_flattened(), lr_pos, &cfg)?;
            m.rotations.step(cloud.rotations.as_flattened_mut(), g.d_rotations.as_flattened(), self.config.lr_rotation, &cfg)?;
            m.log_scales.step(cloud.log_scales.as_flattened_mut(), g.d_log_scales.as_flattened(), self.config.lr_scale, &cfg)?;
            m.opacity_logits.step(&mut cloud.opacity_logits, &g.d_opacity_logits, self.config.lr_opacity, &cfg)?;
        }

        // homodirectional gradients in normalised device units
        let (hw, hh) = (camera.intrinsics.width as f64 / 2.0, camera.intrinsics.height as f64 / 2.0);
        let homodir: Vec<[f64; 2]> = g.homodir.iter().map(|h| [h[0] * hw, h[1] * hh]).collect();
        let participated = out.aux.participated();
        let stop = self.config.densify_stop();
        if self.config.densify_enabled && iter < stop {
            self.densify.accumulate(band, &homodir, &participated)?;
        }

        let done = iter + 1;
        let mut densified = None;
        if self.config.densify_enabled && done > self.config.densify_start && done <= stop && done % self.config.densify_interval == 0 {
            let cloud = &mut self.model.cloud;
            let before = cloud.len();
            let mask = self.densify.criterion(self.config.densify.tau_grad);
            densify::apply(cloud, &mut self.moments, &mask, self.extent, &self.config.densify, &mut self.densify_rng)?;
            let after_densify = cloud.len();
            densify::prune(
                cloud,
                &mut self.moments,
                self.config.densify.prune_opacity,
                self.config.densify.prune_world_fraction * self.extent,
            );
            let after_prune = cloud.len();
            self.densify.reset(after_prune);
            self.rebuild_knn();
            densified = Some(DensifyEvent { mask, before, after_densify, after_prune });
        }
        let ri = self.config.opacity_reset_interval;
        let opacity_reset = self.config.densify_enabled && ri > 0 && done <= stop && done % ri == 0;
        if opacity_reset {
            let cap = logit(0.01);
            self.model.cloud.opacity_logits.iter_mut().for_each(|o| *o = o.min(cap));
            self.moments.opacity_logits = AdamState::new(self.model.cloud.len(), 1);
        }

        self.iteration = done;
        Ok(StepReport {
            iteration: iter,
            view: vi,
            band,
            loss: loss.value,
            l1: loss.l1,
            primitives: self.model.cloud.len(),
            resolution_factor: factor,
            homodir,
            participated,
            densified,
            opacity_reset,
        })
    }

    /// Metadata-bearing snapshot of the current state.
    pub fn snapshot(&self) -> Checkpoint {
        Checkpoint { model: self.model.clone(), iteration: self.iteration, config: self.config.clone() }
    }
}

/// Progress notifications from [`train`].
#[derive(Debug)]
pub enum TrainEvent<'a> {
    Step(&'a StepReport),
    Eval { iteration: u64, report: &'a EvalReport },
}

/// Runs the full schedule. Held-out views are evaluated every
/// `eval_interval` iterations and once at the end when present.
pub fn train(
    config: TrainConfig,
    band_set: SpectralBandSet,
    points: &SparsePoints,
    train_views: Vec<CameraView>,
    eval_views: &[CameraView],
    mut on_event: impl FnMut(TrainEvent<'_>),
) -> Result<Checkpoint> {
    let mut t = Trainer::new(config, band_set, points, train_views)?;
    let every = t.config.eval_interval;
    while !t.is_done() {
        let r = t.step()?;
        on_event(TrainEvent::Step(&r));
        if every > 0 && t.iteration % every == 0 && !t.is_done() && !eval_views.is_empty() {
            let report = evaluate(&t.model, eval_views)?;
            on_event(TrainEvent::Eval { iteration: t.iteration, report: &report });
        }
    }
    if !eval_views.is_empty() {
        let report = evaluate(&t.model, eval_views)?;
        on_event(TrainEvent::Eval { iteration: t.iteration, report: &report });
    }
    Ok(t.snapshot())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{Intrinsics, Pose};
    use std::sync::Arc;

    fn views(bands: &[usize]) -> Vec<CameraView> {
        bands
            .iter()
            .enumerate()
            .map(|(i, &b)| CameraView {
                camera_id: i as u32,
                band_index: b,
                intrinsics: Intrinsics { fx: 10.0, fy: 10.0, cx: 8.0, cy: 8.0, width: 16, height: 16 },
                world_to_camera: Pose::identity(),
                name: format!("{i}"),
                image: None,
            })
            .collect()
    }

    #[test]
    fn weighted_sampling_frequency() {
        let bs = SpectralBandSet::drone_rig();
        let v = views(&[0, 1, 2, 3, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let hits = (0..n).filter(|_| sample_view(&mut rng, &v, &bs, 4.0).unwrap() == 0).count();
        let p = hits as f64 / n as f64;
        assert!((p - 0.5).abs() < 3.0 * (0.25f64 / n as f64).sqrt(), "{p}");
    }

    #[test]
    fn uniform_when_weight_one() {
        let bs = SpectralBandSet::drone_rig();
        let v = views(&[0, 1, 2, 3, 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut counts = [0usize; 5];
        let n = 50_000;
        for _ in 0..n {
            counts[sample_view(&mut rng, &v, &bs, 1.0).unwrap()] += 1;
        }
        // chi-square, 4 degrees of freedom, p = 0.01 critical value 13.28
        let e = n as f64 / 5.0;
        let chi: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        assert!(chi < 13.28, "{chi}");
    }

    #[test]
    fn empty_views_error() {
        let bs = SpectralBandSet::drone_rig();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_view(&mut rng, &[], &bs, 4.0), Err(Error::EmptyViews)));
    }

    #[test]
    fn schedule_and_lr() {
        let c = TrainConfig { iterations: 1000, ..TrainConfig::default() };
        assert_eq!(c.resolution_factor(0), 4);
        assert_eq!(c.resolution_factor(250), 2);
        assert_eq!(c.resolution_factor(500), 1);
        assert!((c.position_lr(0) - 1.6e-4).abs() < 1e-18);
        assert!((c.position_lr(1000) - 1.6e-6).abs() < 1e-18);
        assert_eq!(c.densify_stop(), 600);
    }

    #[test]
    fn config_toml_round_trip() {
        let c = TrainConfig { iterations: 77, densify_stop: Some(40), ..TrainConfig::default() };
        let s = c.to_toml().unwrap();
        assert_eq!(TrainConfig::from_toml(&s).unwrap(), c);
        assert_eq!(TrainConfig::from_toml("iterations = 5\nseed = 3").unwrap().seed, 3);
        assert!(TrainConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn zero_iterations_is_initialisation() {
        let bs = SpectralBandSet::new(vec![crate::scene::BandDesc::new("nir", 1, None)]).unwrap();
        let pts = SparsePoints {
            positions: vec![[0.0, 0.0, 3.0], [0.2, 0.0, 3.0], [0.0, 0.2, 3.0], [0.2, 0.2, 3.1]],
            colors: None,
        };
        let mut v = views(&[0]);
        v[0].image = Some(Arc::new(Image::new(16, 16, 1)));
        let cfg = TrainConfig { iterations: 0, ..TrainConfig::default() };
        let t = Trainer::new(cfg.clone(), bs.clone(), &pts, v.clone()).unwrap();
        let out = train(cfg, bs, &pts, v, &[], |_| {}).unwrap();
        assert_eq!(out.model, t.model);
        assert_eq!(out.iteration, 0);
    }
}
