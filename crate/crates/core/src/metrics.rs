//! Image-quality and spectral-similarity metrics.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::model::SplatModel;
use crate::raster::Camera;
use crate::scene::CameraView;
use crate::ssim::ssim;

/// `10 log10(1 / MSE)`; identical images give `+inf`.
pub fn psnr(pred: &Image, gt: &Image) -> Result<f64> {
    pred.check_same_shape(gt)?;
    let n = pred.data.len().max(1) as f64;
    let mse = pred.data.iter().zip(&gt.data).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / n;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Mean SSIM, the complement of the D-SSIM loss.
pub fn ssim_metric(pred: &Image, gt: &Image) -> Result<f64> {
    Ok(ssim(pred, gt, false)?.0)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Spectral angle in radians.
pub fn sam(r: &[f64], t: &[f64]) -> Result<f64> {
    if r.len() != t.len() {
        return Err(Error::dims("spectra differ in length"));
    }
    let (nr, nt) = (norm(r), norm(t));
    if nr == 0.0 || nt == 0.0 {
        return Err(Error::UndefinedSpectrum("zero spectrum has no angle"));
    }
    let dot: f64 = r.iter().zip(t).map(|(a, b)| a * b).sum();
    Ok((dot / (nr * nt)).clamp(-1.0, 1.0).acos())
}

/// Pearson correlation of two spectra.
pub fn scm(r: &[f64], t: &[f64]) -> Result<f64> {
    if r.len() != t.len() || r.is_empty() {
        return Err(Error::dims("spectra differ in length"));
    }
    let n = r.len() as f64;
    let mr = r.iter().sum::<f64>() / n;
    let mt = t.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut vr = 0.0;
    let mut vt = 0.0;
    for (a, b) in r.iter().zip(t) {
        num += (a - mr) * (b - mt);
        vr += (a - mr).powi(2);
        vt += (b - mt).powi(2);
    }
    if vr == 0.0 || vt == 0.0 {
        return Err(Error::UndefinedSpectrum("constant spectrum has no correlation"));
    }
    Ok((num / (vr.sqrt() * vt.sqrt())).clamp(-1.0, 1.0))
}

/// Floor applied to normalized spectra before taking logarithms.
pub const SID_EPS: f64 = 1e-8;

/// Symmetric KL divergence of the two spectra read as distributions.
pub fn sid(r: &[f64], t: &[f64]) -> Result<f64> {
    if r.len() != t.len() {
        return Err(Error::dims("spectra differ in length"));
    }
    let sr: f64 = r.iter().sum();
    let st: f64 = t.iter().sum();
    if !(sr > 0.0) || !(st > 0.0) || r.iter().chain(t).any(|&v| v < 0.0) {
        return Err(Error::UndefinedSpectrum("spectral divergence needs non-negative spectra with positive sums"));
    }
    let mut d = 0.0;
    for (a, b) in r.iter().zip(t) {
        let p = (a / sr).max(SID_EPS);
        let q = (b / st).max(SID_EPS);
        d += (p - q) * (p / q).ln();
    }
    Ok(d.max(0.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandMetrics {
    pub name: String,
    pub images: usize,
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-pixel spectral similarity over the stacked non-RGB bands.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMetrics {
    pub groups: usize,
    pub pixels: usize,
    pub sam: f64,
    pub scm: f64,
    pub sid: f64,
    pub excluded_sam: usize,
    pub excluded_scm: usize,
    pub excluded_sid: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub bands: Vec<BandMetrics>,
    /// Mean over bands of the per-band PSNR / SSIM.
    pub all_psnr: f64,
    pub all_ssim: f64,
    pub spectral: Option<SpectralMetrics>,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

impl EvalReport {
    pub fn band(&self, name: &str) -> Option<&BandMetrics> {
        self.bands.iter().find(|b| b.name.eq_ignore_ascii_case(name))
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<8} {:>7} {:>10} {:>8}", "band", "images", "PSNR", "SSIM");
        for b in &self.bands {
            let _ = writeln!(s, "{:<8} {:>7} {:>10} {:>8.4}", b.name, b.images, fmt_db(b.psnr), b.ssim);
        }
        let _ = writeln!(s, "{:<8} {:>7} {:>10} {:>8.4}", "All", "", fmt_db(self.all_psnr), self.all_ssim);
        if let Some(sp) = &self.spectral {
            let _ = writeln!(s, "All-MS   SAM {:.5}  SCM {:.5}  SID {:.6}  ({} px, {} groups)", sp.sam, sp.scm, sp.sid, sp.pixels, sp.groups);
            let _ = writeln!(
                s,
                "excluded px: sam {} scm {} sid {}",
                sp.excluded_sam, sp.excluded_scm, sp.excluded_sid
            );
        }
        s
    }

    /// `key=value` lines, one metric per line.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        for b in &self.bands {
            let _ = writeln!(s, "psnr.{}={}", b.name, fmt_db(b.psnr));
            let _ = writeln!(s, "ssim.{}={:.6}", b.name, b.ssim);
            let _ = writeln!(s, "images.{}={}", b.name, b.images);
        }
        let _ = writeln!(s, "psnr.all={}", fmt_db(self.all_psnr));
        let _ = writeln!(s, "ssim.all={:.6}", self.all_ssim);
        if let Some(sp) = &self.spectral {
            let _ = writeln!(s, "sam.all_ms={:.8}", sp.sam);
            let _ = writeln!(s, "scm.all_ms={:.8}", sp.scm);
            let _ = writeln!(s, "sid.all_ms={:.8}", sp.sid);
            let _ = writeln!(s, "spectral.pixels={}", sp.pixels);
            let _ = writeln!(s, "spectral.excluded_sam={}", sp.excluded_sam);
            let _ = writeln!(s, "spectral.excluded_scm={}", sp.excluded_scm);
            let _ = writeln!(s, "spectral.excluded_sid={}", sp.excluded_sid);
        }
        s
    }
}

fn gt_image(view: &CameraView) -> Result<&Image> {
    view.image
        .as_deref()
        .ok_or_else(|| Error::Config(format!("evaluation view {} has no image", view.name)))
}

/// Renders every evaluation view in its own band and compares it with the
/// captured image. Spectral metrics stack the k-th evaluation image of each
/// non-RGB band into one per-pixel spectrum.
pub fn evaluate(model: &SplatModel, views: &[CameraView]) -> Result<EvalReport> {
    let bs = &model.band_set;
    let mut renders: Vec<Image> = Vec::with_capacity(views.len());
    for v in views {
        bs.band(v.band_index)?;
        let img = model.render(&Camera::from(v), v.band_index)?;
        renders.push(img);
    }
    let mut bands = Vec::new();
    for (j, b) in bs.bands().iter().enumerate() {
        let idx: Vec<usize> = (0..views.len()).filter(|&i| views[i].band_index == j).collect();
        if idx.is_empty() {
            continue;
        }
        let mut p = 0.0;
        let mut s = 0.0;
        for &i in &idx {
            let gt = gt_image(&views[i])?;
            p += psnr(&renders[i], gt)?;
            s += ssim_metric(&renders[i], gt)?;
        }
        let n = idx.len() as f64;
        bands.push(BandMetrics { name: b.name.clone(), images: idx.len(), psnr: p / n, ssim: s / n });
    }
    if bands.is_empty() {
        return Err(Error::EmptyViews);
    }
    let nb = bands.len() as f64;
    let all_psnr = bands.iter().map(|b| b.psnr).sum::<f64>() / nb;
    let all_ssim = bands.iter().map(|b| b.ssim).sum::<f64>() / nb;

    let ms = bs.multispectral_indices();
    let per_band: Vec<Vec<usize>> =
        ms.iter().map(|&j| (0..views.len()).filter(|&i| views[i].band_index == j).collect()).collect();
    let groups = per_band.iter().map(|v| v.len()).min().unwrap_or(0);
    let spectral = if ms.len() >= 2 && groups > 0 {
        let mut acc = SpectralMetrics {
            groups: 0,
            pixels: 0,
            sam: 0.0,
            scm: 0.0,
            sid: 0.0,
            excluded_sam: 0,
            excluded_scm: 0,
            excluded_sid: 0,
        };
        let (mut n_sam, mut n_scm, mut n_sid) = (0usize, 0usize, 0usize);
        for g in 0..groups {
            let members: Vec<usize> = per_band.iter().map(|v| v[g]).collect();
            let first = &renders[members[0]];
            let aligned = members.iter().all(|&i| {
                let r = &renders[i];
                r.width == first.width && r.height == first.height
            });
            if !aligned {
                continue;
            }
            acc.groups += 1;
            let gts: Vec<&Image> = members.iter().map(|&i| gt_image(&views[i])).collect::<Result<_>>()?;
            let chans: usize = members.iter().map(|&i| renders[i].channels).sum();
            let mut r = vec![0.0; chans];
            let mut t = vec![0.0; chans];
            for y in 0..first.height {
                for x in 0..first.width {
                    let mut k = 0;
                    for (m, &i) in members.iter().enumerate() {
                        for c in 0..renders[i].channels {
                            r[k] = gts[m].get(x, y, c);
                            t[k] = renders[i].get(x, y, c);
                            k += 1;
                        }
                    }
                    acc.pixels += 1;
                    match sam(&r, &t) {
                        Ok(v) => {
                            acc.sam += v;
                            n_sam += 1;
                        }
                        Err(_) => acc.excluded_sam += 1,
                    }
                    match scm(&r, &t) {
                        Ok(v) => {
                            acc.scm += v;
                            n_scm += 1;
                        }
                        Err(_) => acc.excluded_scm += 1,
                    }
                    match sid(&r, &t) {
                        Ok(v) => {
                            acc.sid += v;
                            n_sid += 1;
                        }
                        Err(_) => acc.excluded_sid += 1,
                    }
                }
            }
        }
        acc.sam /= n_sam.max(1) as f64;
        acc.scm /= n_scm.max(1) as f64;
        acc.sid /= n_sid.max(1) as f64;
        (acc.groups > 0).then_some(acc)
    } else {
        None
    };
    Ok(EvalReport { bands, all_psnr, all_ssim, spectral })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn psnr_examples() {
        let a = Image::filled(4, 4, &[0.5]);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = Image::filled(4, 4, &[0.6]);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let z = Image::filled(4, 4, &[0.0]);
        let o = Image::filled(4, 4, &[1.0]);
        assert!(psnr(&z, &o).unwrap().abs() < 1e-12);
    }

    #[test]
    fn ssim_examples() {
        let a = Image::from_vec(16, 16, 1, (0..256).map(|i| ((i * 7) % 16) as f64 / 15.0).collect()).unwrap();
        assert!((ssim_metric(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        let inv = Image::from_vec(16, 16, 1, a.data.iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim_metric(&inv, &a).unwrap() < 0.0);
        let b = Image::from_vec(16, 16, 1, a.data.iter().map(|v| 0.8 * v + 0.05).collect()).unwrap();
        let (dl, _) = crate::loss::dssim_loss(&b, &a).unwrap();
        assert!((ssim_metric(&b, &a).unwrap() - (1.0 - dl)).abs() < 1e-15);
    }

    #[test]
    fn sam_examples() {
        assert_eq!(sam(&[0.3, 0.5], &[0.3, 0.5]).unwrap(), 0.0);
        assert!((sam(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - FRAC_PI_2).abs() < 1e-15);
        assert!(sam(&[1.0, 1.0], &[2.0, 2.0]).unwrap().abs() < 1e-7);
        assert!(matches!(sam(&[0.0, 0.0], &[1.0, 0.0]), Err(Error::UndefinedSpectrum(_))));
    }

    #[test]
    fn scm_examples() {
        assert!((scm(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((scm(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((scm(&[1.0, 2.0, 3.0], &[5.5, 6.5, 7.5]).unwrap() - 1.0).abs() < 1e-15);
        assert!(scm(&[1.0, 1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn sid_examples() {
        assert_eq!(sid(&[0.2, 0.7], &[0.2, 0.7]).unwrap(), 0.0);
        assert!((sid(&[3.0, 1.0], &[1.0, 3.0]).unwrap() - 3f64.ln()).abs() < 1e-15);
        assert!(sid(&[0.1, 0.4, 0.2], &[0.5, 2.0, 1.0]).unwrap().abs() < 1e-15);
        assert!(sid(&[0.0, 0.0], &[1.0, 1.0]).is_err());
    }
}
