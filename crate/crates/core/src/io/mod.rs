//! Datasets on disk, checkpoints and synthetic scenes.
//!
//! A dataset directory holds `sparse/{cameras,images,points3D}.txt`, a
//! `bands.toml` manifest and one `images_<band>/` folder per band.

mod checkpoint;
mod colmap;
mod images;
mod manifest;
mod synth;

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION, MAGIC,
};
pub use colmap::{parse_cameras, parse_images, parse_points, write_cameras, write_images, write_points, ImageEntry};
pub use images::{load_image, quantize16, quantize8, requantize16, save_image16, save_image8};
pub use manifest::{BandEntry, Manifest};
pub use synth::{make_synthetic_scene, SynthParams, SynthScene, TRUTH_FILE};

use crate::error::{Error, Result};
use crate::scene::{CameraView, Intrinsics, SparsePoints, SpectralBandSet};

pub const MANIFEST_FILE: &str = "bands.toml";

#[derive(Debug, Clone)]
pub struct Dataset {
    pub band_set: SpectralBandSet,
    /// Sorted by band, then file name.
    pub views: Vec<CameraView>,
    pub points: SparsePoints,
}

pub fn band_dir(band_name: &str) -> String {
    format!("images_{band_name}")
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads the layout under `root`, decoding every image.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let mut ds = load_layout(root)?;
    let bs = ds.band_set.clone();
    let loaded: Vec<_> = ds
        .views
        .par_iter()
        .map(|v| {
            let band = bs.band(v.band_index)?;
            let path = root.join(band_dir(&band.name)).join(&v.name);
            let img = load_image(&path, band.channel_count)?;
            if img.width != v.intrinsics.width || img.height != v.intrinsics.height {
                return Err(Error::Image {
                    path,
                    msg: format!(
                        "image is {}x{}, camera says {}x{}",
                        img.width, img.height, v.intrinsics.width, v.intrinsics.height
                    ),
                });
            }
            Ok(Arc::new(img))
        })
        .collect::<Result<_>>()?;
    for (v, img) in ds.views.iter_mut().zip(loaded) {
        v.image = Some(img);
    }
    Ok(ds)
}

/// Reads cameras, poses, points and the manifest without decoding images.
pub fn load_layout(root: &Path) -> Result<Dataset> {
    let manifest = Manifest::parse(&read_text(&root.join(MANIFEST_FILE))?)?;
    let band_set = manifest.band_set()?;
    let cam_band = manifest.camera_bands()?;
    let sparse = root.join("sparse");
    let cameras = parse_cameras(&read_text(&sparse.join("cameras.txt"))?)?;
    let entries = parse_images(&read_text(&sparse.join("images.txt"))?)?;
    let points = parse_points(&read_text(&sparse.join("points3D.txt"))?)?;
    let mut views = Vec::with_capacity(entries.len());
    for e in entries {
        let intrinsics = *cameras
            .get(&e.camera_id)
            .ok_or_else(|| Error::Manifest(format!("image {} uses unknown camera {}", e.name, e.camera_id)))?;
        let band_index = *cam_band
            .get(&e.camera_id)
            .ok_or_else(|| Error::Manifest(format!("camera {} is not mapped to a band", e.camera_id)))?;
        views.push(CameraView {
            camera_id: e.camera_id,
            band_index,
            intrinsics,
            world_to_camera: e.pose()?,
            name: e.name,
            image: None,
        });
    }
    views.sort_by(|a, b| (a.band_index, &a.name).cmp(&(b.band_index, &b.name)));
    Ok(Dataset { band_set, views, points })
}

/// Writes the layout and 16-bit images of every view that carries one.
pub fn write_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    let mut cameras: BTreeMap<u32, Intrinsics> = BTreeMap::new();
    let mut band_cams: Vec<Vec<u32>> = vec![Vec::new(); ds.band_set.len()];
    for v in &ds.views {
        if let Some(k) = cameras.insert(v.camera_id, v.intrinsics) {
            if k != v.intrinsics {
                return Err(Error::Manifest(format!("camera {} has conflicting intrinsics", v.camera_id)));
            }
        }
        let cams = &mut band_cams[v.band_index];
        if !cams.contains(&v.camera_id) {
            cams.push(v.camera_id);
        }
    }
    let manifest = Manifest {
        band: ds
            .band_set
            .bands()
            .iter()
            .zip(band_cams)
            .map(|(b, cameras)| BandEntry {
                name: b.name.clone(),
                channels: b.channel_count,
                wavelength_nm: b.wavelength_nm,
                cameras,
            })
            .collect(),
    };
    manifest.camera_bands()?;
    let entries: Vec<ImageEntry> = ds
        .views
        .iter()
        .enumerate()
        .map(|(i, v)| ImageEntry {
            image_id: i as u32 + 1,
            quaternion: v.world_to_camera.quaternion(),
            translation: v.world_to_camera.translation.into(),
            camera_id: v.camera_id,
            name: v.name.clone(),
        })
        .collect();
    write_text(&root.join(MANIFEST_FILE), &manifest.to_toml()?)?;
    let sparse = root.join("sparse");
    write_text(&sparse.join("cameras.txt"), &write_cameras(&cameras))?;
    write_text(&sparse.join("images.txt"), &write_images(&entries))?;
    write_text(&sparse.join("points3D.txt"), &write_points(&ds.points))?;
    for v in &ds.views {
        if let Some(img) = &v.image {
            let band = ds.band_set.band(v.band_index)?;
            save_image16(img, &root.join(band_dir(&band.name)).join(&v.name))?;
        }
    }
    Ok(())
}

/// Views whose band also exists in `target` under the same name and with
/// the same channel count, re-indexed into `target`. Other views are dropped.
pub fn views_in_band_set(
    views: &[CameraView],
    source: &SpectralBandSet,
    target: &SpectralBandSet,
) -> Result<Vec<CameraView>> {
    let mut out = Vec::new();
    for v in views {
        let band = source.band(v.band_index)?;
        let Ok(j) = target.find(&band.name) else { continue };
        if target.band(j)?.channel_count != band.channel_count {
            return Err(Error::Manifest(format!(
                "band {} has {} channels in the data but {} in the model",
                band.name,
                band.channel_count,
                target.band(j)?.channel_count
            )));
        }
        out.push(CameraView { band_index: j, ..v.clone() });
    }
    Ok(out)
}

impl Dataset {
    /// Restricts the dataset to the named bands, keeping their original order.
    pub fn select_bands(&self, names: &[String]) -> Result<Dataset> {
        let mut keep = Vec::with_capacity(names.len());
        for n in names {
            keep.push(self.band_set.find(n)?);
        }
        keep.sort_unstable();
        keep.dedup();
        let band_set = SpectralBandSet::new(keep.iter().map(|&j| self.band_set.bands()[j].clone()).collect())?;
        let views = views_in_band_set(&self.views, &self.band_set, &band_set)?;
        Ok(Dataset { band_set, views, points: self.points.clone() })
    }
}

/// Per band, in file-name order, images `0, every, 2*every, ...` are held out.
pub fn split_train_eval(views: &[CameraView], holdout_every: usize) -> (Vec<CameraView>, Vec<CameraView>) {
    let every = holdout_every.max(1);
    let mut order: Vec<usize> = (0..views.len()).collect();
    order.sort_by(|&a, &b| (views[a].band_index, &views[a].name, a).cmp(&(views[b].band_index, &views[b].name, b)));
    let mut seen: BTreeMap<usize, usize> = BTreeMap::new();
    let (mut train, mut eval) = (Vec::new(), Vec::new());
    for i in order {
        let k = seen.entry(views[i].band_index).or_insert(0);
        if *k % every == 0 {
            eval.push(views[i].clone());
        } else {
            train.push(views[i].clone());
        }
        *k += 1;
    }
    (train, eval)
}
