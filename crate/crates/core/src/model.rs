//! A trained scene: band set, Gaussian cloud, colour model and backgrounds.

use crate::color::ColorModel;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::raster::{render_forward, BlendSettings, Camera, RenderOutput};
use crate::scene::{payload_floats_per_primitive, GaussianCloud, SpectralBandSet};

#[derive(Debug, Clone, PartialEq)]
pub struct SplatModel {
    pub band_set: SpectralBandSet,
    pub cloud: GaussianCloud,
    pub color: ColorModel,
    /// One background colour per band.
    pub backgrounds: Vec<Vec<f64>>,
}

impl SplatModel {
    /// Model with a black background in every band.
    pub fn new(band_set: SpectralBandSet, cloud: GaussianCloud, color: ColorModel) -> Result<Self> {
        let backgrounds = band_set.bands().iter().map(|b| vec![0.0; b.channel_count]).collect();
        let m = SplatModel { band_set, cloud, color, backgrounds };
        m.check()?;
        Ok(m)
    }

    pub fn check(&self) -> Result<()> {
        self.cloud.check()?;
        self.color.check(&self.cloud, &self.band_set)?;
        if self.backgrounds.len() != self.band_set.len() {
            return Err(Error::dims(format!(
                "{} backgrounds for {} bands",
                self.backgrounds.len(),
                self.band_set.len()
            )));
        }
        for (bg, b) in self.backgrounds.iter().zip(self.band_set.bands()) {
            if bg.len() != b.channel_count {
                return Err(Error::dims(format!("background of band {} has {} channels", b.name, bg.len())));
            }
        }
        Ok(())
    }

    pub fn background(&self, band: usize) -> Result<&[f64]> {
        self.backgrounds
            .get(band)
            .map(Vec::as_slice)
            .ok_or(Error::BadBandIndex { index: band, count: self.band_set.len() })
    }

    pub fn set_uniform_background(&mut self, value: f64) {
        for bg in &mut self.backgrounds {
            bg.iter_mut().for_each(|v| *v = value);
        }
    }

    pub fn render_forward(&self, camera: &Camera, band: usize, settings: BlendSettings) -> Result<RenderOutput> {
        let bg = self.background(band)?;
        render_forward(&self.cloud, &self.color, &self.band_set, camera, band, bg, settings)
    }

    pub fn render(&self, camera: &Camera, band: usize) -> Result<Image> {
        Ok(self.render_forward(camera, band, BlendSettings::default())?.image)
    }

    pub fn payload_floats_per_primitive(&self) -> usize {
        payload_floats_per_primitive(self.color.kind(&self.band_set, self.cloud.feature_dim))
    }

    /// Primitive payload plus shared decoder parameters.
    pub fn total_floats(&self) -> usize {
        let shared = self.color.decoder().map_or(0, |d| d.params().len());
        self.cloud.len() * self.payload_floats_per_primitive() + shared
    }
}
