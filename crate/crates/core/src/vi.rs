//! Vegetation indices rendered from one camera, and their colour maps.

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::SplatModel;
use crate::raster::Camera;
use crate::scene::SpectralBandSet;

/// Denominators below this leave the pixel undefined.
pub const MIN_DENOMINATOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VegIndex {
    /// `(NIR - R) / (NIR + R)`
    Ndvi,
    /// `(NIR - G) / (NIR + G)`
    Gndvi,
    /// `(1 + L)(NIR - R) / (NIR + R + L)`
    Savi { lsoil: f64 },
}

impl VegIndex {
    pub fn name(&self) -> &'static str {
        match self {
            VegIndex::Ndvi => "ndvi",
            VegIndex::Gndvi => "gndvi",
            VegIndex::Savi { .. } => "savi",
        }
    }

    /// Name candidates of the visible band this index pairs with NIR.
    fn visible_names(&self) -> &'static [&'static str] {
        match self {
            VegIndex::Ndvi | VegIndex::Savi { .. } => &["r", "red"],
            VegIndex::Gndvi => &["g", "green"],
        }
    }

    /// Index value, or `None` where the denominator vanishes.
    pub fn value(&self, nir: f64, vis: f64) -> Option<f64> {
        let (num, den) = match *self {
            VegIndex::Ndvi | VegIndex::Gndvi => (nir - vis, nir + vis),
            VegIndex::Savi { lsoil } => ((1.0 + lsoil) * (nir - vis), nir + vis + lsoil),
        };
        (den.abs() >= MIN_DENOMINATOR).then(|| num / den)
    }

    /// `(nir, visible)` band indices in `band_set`.
    pub fn bands(&self, band_set: &SpectralBandSet) -> Result<(usize, usize)> {
        let nir = band_set.find("nir")?;
        let vis = self
            .visible_names()
            .iter()
            .find_map(|n| band_set.find(n).ok())
            .ok_or_else(|| Error::BandNotFound(self.visible_names()[0].to_string()))?;
        for j in [nir, vis] {
            let b = band_set.band(j)?;
            if b.channel_count != 1 {
                return Err(Error::dims(format!("band {} must be single-channel", b.name)));
            }
        }
        Ok((nir, vis))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViImage {
    pub values: Image,
    /// `false` where the index is undefined (value stored as 0).
    pub valid: Vec<bool>,
}

/// Applies `index` pixelwise to two single-channel images.
pub fn vi_from_bands(index: VegIndex, nir: &Image, vis: &Image) -> Result<ViImage> {
    nir.check_same_shape(vis)?;
    if nir.channels != 1 {
        return Err(Error::dims("vegetation indices need single-channel images"));
    }
    let mut values = Image::new(nir.width, nir.height, 1);
    let mut valid = vec![false; nir.data.len()];
    for (i, (&n, &v)) in nir.data.iter().zip(&vis.data).enumerate() {
        if let Some(x) = index.value(n, v) {
            values.data[i] = x;
            valid[i] = true;
        }
    }
    Ok(ViImage { values, valid })
}

/// Renders NIR and the paired visible band through the same camera and
/// combines them.
pub fn render_vegetation_index(model: &SplatModel, camera: &Camera, index: VegIndex) -> Result<ViImage> {
    let (nir, vis) = index.bands(&model.band_set)?;
    let a = model.render(camera, nir)?;
    let b = model.render(camera, vis)?;
    vi_from_bands(index, &a, &b)
}

/// Colour classes with breakpoints at 0, 0.33 and 0.66.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViClass {
    Inanimate,
    Diseased,
    Moderate,
    Healthy,
}

pub const BREAKPOINTS: [f64; 3] = [0.0, 0.33, 0.66];

impl ViClass {
    /// Lower bounds inclusive; the top class includes 1.
    pub fn of(v: f64) -> ViClass {
        if v < BREAKPOINTS[0] {
            ViClass::Inanimate
        } else if v < BREAKPOINTS[1] {
            ViClass::Diseased
        } else if v < BREAKPOINTS[2] {
            ViClass::Moderate
        } else {
            ViClass::Healthy
        }
    }

    pub fn rgb(&self) -> [u8; 3] {
        match self {
            ViClass::Inanimate => [128, 128, 128],
            ViClass::Diseased => [215, 48, 39],
            ViClass::Moderate => [254, 224, 139],
            ViClass::Healthy => [26, 152, 80],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ColorizedVi {
    /// RGB in `[0, 1]`: the map on top, the scale bar strip below.
    pub image: Image,
    pub bar_height: usize,
    /// Valid pixels outside `[-1, 1]` that were clamped.
    pub clamped: usize,
}

fn put(img: &mut Image, x: usize, y: usize, rgb: [u8; 3]) {
    for (c, v) in rgb.iter().enumerate() {
        img.set(x, y, c, *v as f64 / 255.0);
    }
}

/// Paints each valid pixel with its class colour (invalid pixels black) and
/// appends a scale bar running from -1 on the left to 1 on the right.
pub fn colorize_vi(vi: &ViImage) -> ColorizedVi {
    let (w, h) = (vi.values.width, vi.values.height);
    let bar_height = (h / 10).max(4);
    let mut image = Image::new(w, h + bar_height, 3);
    let mut clamped = 0;
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if !vi.valid[i] {
                continue;
            }
            let v = vi.values.data[i];
            if !(-1.0..=1.0).contains(&v) {
                clamped += 1;
            }
            put(&mut image, x, y, ViClass::of(v.clamp(-1.0, 1.0)).rgb());
        }
    }
    for x in 0..w {
        let v = if w > 1 { -1.0 + 2.0 * x as f64 / (w - 1) as f64 } else { 0.0 };
        let rgb = ViClass::of(v).rgb();
        for y in h..h + bar_height {
            put(&mut image, x, y, rgb);
        }
    }
    ColorizedVi { image, bar_height, clamped }
}

/// Maps `[-1, 1]` linearly onto `[0, 1]` for 16-bit storage.
pub fn vi_to_unit(vi: &ViImage) -> Image {
    let mut out = vi.values.clone();
    out.data.iter_mut().for_each(|v| *v = ((*v + 1.0) / 2.0).clamp(0.0, 1.0));
    out
}
