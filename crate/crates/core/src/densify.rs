//! Band-aware densification: per-band accumulation of homodirectional
//! view-space gradients, the max-over-bands average criterion, and the
//! split/clone/prune mechanics that act on it.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::CloudMoments;
use crate::scene::{quat_to_matrix, GaussianCloud};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyParams {
    pub tau_grad: f64,
    /// Split instead of clone above this fraction of the scene extent.
    pub percent_dense: f64,
    pub split_children: usize,
    pub split_scale_divisor: f64,
    pub prune_opacity: f64,
    /// Prune primitives whose largest scale exceeds this fraction of the
    /// scene extent.
    pub prune_world_fraction: f64,
}

impl Default for DensifyParams {
    fn default() -> Self {
        DensifyParams {
            tau_grad: 0.0008,
            percent_dense: 0.01,
            split_children: 2,
            split_scale_divisor: 1.6,
            prune_opacity: 0.005,
            prune_world_fraction: 0.1,
        }
    }
}

/// Per-primitive, per-band gradient norm sums and accumulation counts.
#[derive(Debug, Clone, PartialEq)]
pub struct DensifyState {
    n_bands: usize,
    pub grad_norm_sum: Vec<f64>,
    pub count: Vec<u32>,
}

impl DensifyState {
    pub fn new(primitives: usize, n_bands: usize) -> Self {
        DensifyState {
            n_bands,
            grad_norm_sum: vec![0.0; primitives * n_bands],
            count: vec![0; primitives * n_bands],
        }
    }

    pub fn len(&self) -> usize {
        if self.n_bands == 0 {
            0
        } else {
            self.count.len() / self.n_bands
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_bands(&self) -> usize {
        self.n_bands
    }

    /// Adds `||g_i||` to band `band` of every participating primitive.
    pub fn accumulate(&mut self, band: usize, homodir: &[[f64; 2]], participated: &[bool]) -> Result<()> {
        if band >= self.n_bands {
            return Err(Error::BadBandIndex { index: band, count: self.n_bands });
        }
        let s = self.len();
        if homodir.len() != s || participated.len() != s {
            return Err(Error::dims(format!(
                "densify state holds {s} primitives, got {} gradients and {} flags",
                homodir.len(),
                participated.len()
            )));
        }
        for i in 0..s {
            if participated[i] {
                let k = i * self.n_bands + band;
                self.grad_norm_sum[k] += homodir[i][0].hypot(homodir[i][1]);
                self.count[k] += 1;
            }
        }
        Ok(())
    }

    /// Average accumulated norm of primitive `i` in each band; `None` where
    /// the band never saw it.
    pub fn band_averages(&self, i: usize) -> Vec<Option<f64>> {
        (0..self.n_bands)
            .map(|j| {
                let k = i * self.n_bands + j;
                (self.count[k] > 0).then(|| self.grad_norm_sum[k] / self.count[k] as f64)
            })
            .collect()
    }

    /// Largest per-band average, or `None` for a primitive never rendered.
    pub fn max_average(&self, i: usize) -> Option<f64> {
        self.band_averages(i).into_iter().flatten().reduce(f64::max)
    }

    pub fn criterion(&self, tau_grad: f64) -> Vec<bool> {
        (0..self.len()).map(|i| self.max_average(i).is_some_and(|a| a > tau_grad)).collect()
    }

    pub fn reset(&mut self, primitives: usize) {
        *self = DensifyState::new(primitives, self.n_bands);
    }
}

/// Splits large masked primitives and clones small ones. Returns the source
/// row of every output primitive (`None` for newly created ones); the
/// moments are remapped accordingly.
pub fn apply<R: Rng>(
    cloud: &mut GaussianCloud,
    moments: &mut CloudMoments,
    mask: &[bool],
    scene_extent: f64,
    params: &DensifyParams,
    rng: &mut R,
) -> Result<Vec<Option<usize>>> {
    if mask.len() != cloud.len() {
        return Err(Error::dims(format!("mask has {} entries for {} primitives", mask.len(), cloud.len())));
    }
    let threshold = params.percent_dense * scene_extent;
    let mut keep = Vec::with_capacity(cloud.len());
    let mut clones = Vec::new();
    let mut splits = Vec::new();
    for (i, &m) in mask.iter().enumerate() {
        let max_scale = cloud.scale(i).into_iter().fold(f64::MIN, f64::max);
        if m && max_scale > threshold {
            splits.push(i);
        } else {
            keep.push(i);
            if m {
                clones.push(i);
            }
        }
    }
    if clones.is_empty() && splits.is_empty() {
        return Ok((0..cloud.len()).map(Some).collect());
    }
    let mut out = cloud.gather(&keep);
    let mut sources: Vec<Option<usize>> = keep.iter().map(|&i| Some(i)).collect();
    for &i in &clones {
        out.push(cloud.positions[i], cloud.rotations[i], cloud.log_scales[i], cloud.opacity_logits[i], cloud.feature(i));
        sources.push(None);
    }
    let shrink = params.split_scale_divisor.ln();
    for &i in &splits {
        let r = quat_to_matrix(cloud.rotations[i])?;
        let s = Vector3::from(cloud.scale(i));
        let mu = Vector3::from(cloud.positions[i]);
        let ls = cloud.log_scales[i].map(|l| l - shrink);
        for _ in 0..params.split_children {
            let n = Vector3::new(
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
                StandardNormal.sample(rng),
            );
            let p = mu + r * s.component_mul(&n);
            out.push(p.into(), cloud.rotations[i], ls, cloud.opacity_logits[i], cloud.feature(i));
            sources.push(None);
        }
    }
    *cloud = out;
    moments.remap(&sources);
    Ok(sources)
}

/// Removes near-transparent and oversized primitives.
pub fn prune(
    cloud: &mut GaussianCloud,
    moments: &mut CloudMoments,
    opacity_floor: f64,
    max_world_scale: f64,
) -> Vec<Option<usize>> {
    let keep: Vec<usize> = (0..cloud.len())
        .filter(|&i| {
            let big = cloud.scale(i).into_iter().any(|s| s > max_world_scale);
            cloud.opacity(i) >= opacity_floor && !big
        })
        .collect();
    let sources: Vec<Option<usize>> = keep.iter().map(|&i| Some(i)).collect();
    if keep.len() != cloud.len() {
        *cloud = cloud.gather(&keep);
        moments.remap(&sources);
    }
    sources
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::logit;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cloud_with(scales: &[f64], opacities: &[f64]) -> GaussianCloud {
        let mut c = GaussianCloud::empty(2);
        for (i, (&s, &o)) in scales.iter().zip(opacities).enumerate() {
            c.push([i as f64, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0], [s.ln(); 3], logit(o), &[i as f64, 1.0]);
        }
        c
    }

    #[test]
    fn accumulate_norms() {
        let mut st = DensifyState::new(2, 2);
        st.accumulate(0, &[[0.0003, 0.0004], [1.0, 1.0]], &[true, false]).unwrap();
        assert!((st.grad_norm_sum[0] - 0.0005).abs() < 1e-18);
        assert_eq!(st.count, vec![1, 0, 0, 0]);
        assert_eq!(st.grad_norm_sum[2], 0.0);
        assert!(st.accumulate(2, &[[0.0; 2]; 2], &[true; 2]).is_err());
    }

    #[test]
    fn additive_accumulation() {
        let a = 0.25;
        let mut st = DensifyState::new(1, 1);
        st.accumulate(0, &[[a, 0.0]], &[true]).unwrap();
        st.accumulate(0, &[[0.0, a]], &[true]).unwrap();
        assert_eq!(st.grad_norm_sum[0], 2.0 * a);
        assert_eq!(st.count[0], 2);
        assert_eq!(st.max_average(0), Some(a));
    }

    #[test]
    fn criterion_examples() {
        let mut st = DensifyState::new(3, 2);
        // primitive 0: band averages 0.0002 and 0.0009
        st.accumulate(0, &[[0.0002, 0.0], [0.0005, 0.0], [0.0; 2]], &[true, true, false]).unwrap();
        st.accumulate(1, &[[0.0009, 0.0], [0.0005, 0.0], [0.0; 2]], &[true, true, false]).unwrap();
        assert_eq!(st.criterion(0.0008), vec![true, false, false]);
    }

    #[test]
    fn apply_split_and_clone() {
        let extent = 10.0;
        let p = DensifyParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);

        let mut c = cloud_with(&[1.0, 0.01], &[0.5, 0.5]);
        let mut m = CloudMoments::new(&c);
        let src = apply(&mut c, &mut m, &[false, false], extent, &p, &mut rng).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(src, vec![Some(0), Some(1)]);

        // large one splits: parent replaced by two children
        let mut c = cloud_with(&[1.0, 0.01], &[0.5, 0.5]);
        let mut m = CloudMoments::new(&c);
        m.positions.m.iter_mut().for_each(|v| *v = 1.0);
        apply(&mut c, &mut m, &[true, false], extent, &p, &mut rng).unwrap();
        assert_eq!(c.len(), 3);
        assert!(m.matches(&c));
        assert_eq!(&m.positions.m[..3], &[1.0; 3]);
        assert_eq!(&m.positions.m[3..], &[0.0; 6]);
        assert!((c.scale(1)[0] - 1.0 / 1.6).abs() < 1e-12);
        assert_eq!(c.feature(2), &[0.0, 1.0]);

        // small one clones in place
        let mut c = cloud_with(&[1.0, 0.01], &[0.5, 0.5]);
        let mut m = CloudMoments::new(&c);
        apply(&mut c, &mut m, &[false, true], extent, &p, &mut rng).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.positions[2], c.positions[1]);
        assert_eq!(c.log_scales[2], c.log_scales[1]);
    }

    #[test]
    fn split_children_centred_on_parent() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let p = DensifyParams::default();
        let mut sum = Vector3::zeros();
        let trials = 4000;
        for _ in 0..trials {
            let mut c = cloud_with(&[0.5], &[0.5]);
            c.positions[0] = [1.0, -2.0, 3.0];
            let mut m = CloudMoments::new(&c);
            apply(&mut c, &mut m, &[true], 1.0, &p, &mut rng).unwrap();
            for q in &c.positions {
                sum += Vector3::from(*q);
            }
        }
        let mean = sum / (2 * trials) as f64;
        // each coordinate has std 0.5 / sqrt(8000)
        let tol = 4.0 * 0.5 / (2.0 * trials as f64).sqrt();
        assert!((mean - Vector3::new(1.0, -2.0, 3.0)).abs().max() < tol, "{mean:?}");
    }

    #[test]
    fn prune_examples() {
        let mut c = cloud_with(&[0.1, 0.1, 0.1], &[0.5, 0.5, 0.5]);
        let mut m = CloudMoments::new(&c);
        prune(&mut c, &mut m, 0.005, 1.0);
        assert_eq!(c.len(), 3);
        let mut c = cloud_with(&[0.1, 0.1, 0.1], &[0.5, 0.001, 0.5]);
        let mut m = CloudMoments::new(&c);
        prune(&mut c, &mut m, 0.005, 1.0);
        assert_eq!(c.len(), 2);
        assert_eq!(c.positions[1], [2.0, 0.0, 0.0]);
        assert!(m.matches(&c));
        let mut c = cloud_with(&[0.1, 5.0], &[0.5, 0.5]);
        let mut m = CloudMoments::new(&c);
        prune(&mut c, &mut m, 0.005, 1.0);
        assert_eq!(c.len(), 1);
        let mut c = GaussianCloud::empty(2);
        let mut m = CloudMoments::new(&c);
        prune(&mut c, &mut m, 0.005, 1.0);
        assert!(c.is_empty());
    }
}
