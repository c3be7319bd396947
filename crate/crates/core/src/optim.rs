//! Adam with bias correction, plus per-row moment bookkeeping that follows
//! the primitive set through densification and pruning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::GaussianCloud;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-15 }
    }
}

/// Moments for one parameter array laid out as rows of `width` values.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub width: usize,
}

#[inline]
fn update(p: &mut f64, g: f64, m: &mut f64, v: &mut f64, lr: f64, cfg: &AdamConfig, bc1: f64, bc2: f64) {
    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
    let m_hat = *m / bc1;
    let v_hat = *v / bc2;
    *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
}

impl AdamState {
    pub fn new(len: usize, width: usize) -> Self {
        AdamState { m: vec![0.0; len], v: vec![0.0; len], step: 0, width: width.max(1) }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn rows(&self) -> usize {
        self.m.len() / self.width
    }

    /// One bias-corrected Adam step over all of `params`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64, cfg: &AdamConfig) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::dims(format!(
                "adam: {} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        self.step += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.step as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            update(&mut params[i], grads[i], &mut self.m[i], &mut self.v[i], lr, cfg, bc1, bc2);
        }
        Ok(())
    }

    /// Adam step restricted to columns `cols` of every row, using the
    /// caller's step count `t` (>= 1) for bias correction. Other entries and
    /// their moments are left untouched.
    pub fn step_columns(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        lr: f64,
        cfg: &AdamConfig,
        cols: std::ops::Range<usize>,
        t: u64,
    ) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.m.len() || cols.end > self.width || t == 0 {
            return Err(Error::dims("adam: column update shape mismatch"));
        }
        let bc1 = 1.0 - cfg.beta1.powi(t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(t as i32);
        for r in 0..self.rows() {
            for c in cols.clone() {
                let i = r * self.width + c;
                update(&mut params[i], grads[i], &mut self.m[i], &mut self.v[i], lr, cfg, bc1, bc2);
            }
        }
        Ok(())
    }

    /// Row `i` of the result takes the moments of old row `sources[i]`, or
    /// zeros when `None`.
    pub fn remap(&mut self, sources: &[Option<usize>]) {
        let w = self.width;
        let mut m = vec![0.0; sources.len() * w];
        let mut v = vec![0.0; sources.len() * w];
        for (i, s) in sources.iter().enumerate() {
            if let Some(s) = *s {
                m[i * w..(i + 1) * w].copy_from_slice(&self.m[s * w..(s + 1) * w]);
                v[i * w..(i + 1) * w].copy_from_slice(&self.v[s * w..(s + 1) * w]);
            }
        }
        self.m = m;
        self.v = v;
    }
}

/// Moments for every per-primitive parameter group of a cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct CloudMoments {
    pub positions: AdamState,
    pub rotations: AdamState,
    pub log_scales: AdamState,
    pub opacity_logits: AdamState,
    pub features: AdamState,
}

impl CloudMoments {
    pub fn new(cloud: &GaussianCloud) -> Self {
        let s = cloud.len();
        CloudMoments {
            positions: AdamState::new(s * 3, 3),
            rotations: AdamState::new(s * 4, 4),
            log_scales: AdamState::new(s * 3, 3),
            opacity_logits: AdamState::new(s, 1),
            features: AdamState::new(s * cloud.feature_dim, cloud.feature_dim),
        }
    }

    pub fn rows(&self) -> usize {
        self.positions.rows()
    }

    pub fn remap(&mut self, sources: &[Option<usize>]) {
        self.positions.remap(sources);
        self.rotations.remap(sources);
        self.log_scales.remap(sources);
        self.opacity_logits.remap(sources);
        self.features.remap(sources);
    }

    /// True when every group has one row per primitive of `cloud`.
    pub fn matches(&self, cloud: &GaussianCloud) -> bool {
        let s = cloud.len();
        self.positions.rows() == s
            && self.rotations.rows() == s
            && self.log_scales.rows() == s
            && self.opacity_logits.rows() == s
            && self.features.len() == s * cloud.feature_dim
    }
}
