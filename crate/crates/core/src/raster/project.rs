//! Perspective projection of 3D Gaussians to screen-space ellipses, with
//! the first-order (EWA) covariance approximation and its exact reverse.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector3};
use rayon::prelude::*;

use crate::scene::{normalize_quat, unit_quat_to_matrix, GaussianCloud, Intrinsics, Pose};

/// Primitives closer than this to the image plane are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Screen-space dilation added to both diagonal entries of the 2D covariance.
pub const COV_DILATION: f64 = 0.3;
/// Footprint half-extent in standard deviations of the major axis.
pub const RADIUS_SIGMAS: f64 = 3.0;

/// Screen-space footprint of every primitive of a cloud for one camera.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected2D {
    pub mean2d: Vec<[f64; 2]>,
    /// Upper triangle `(a, b, c)` of the inverse 2D covariance `[[a, b], [b, c]]`.
    pub conic: Vec<[f64; 3]>,
    /// Upper triangle of the dilated 2D covariance.
    pub cov2d: Vec<[f64; 3]>,
    pub depth: Vec<f64>,
    pub radius: Vec<f64>,
    pub visible: Vec<bool>,
}

impl Projected2D {
    pub fn len(&self) -> usize {
        self.mean2d.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean2d.is_empty()
    }

    pub fn visible_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.visible[i]).collect()
    }
}

struct Local {
    r: Matrix3<f64>,
    s: Vector3<f64>,
    p: Vector3<f64>,
    t: Matrix2x3<f64>,
    sigma: Matrix3<f64>,
}

fn jacobian(k: &Intrinsics, p: &Vector3<f64>) -> Matrix2x3<f64> {
    let (x, y, z) = (p.x, p.y, p.z);
    let iz = 1.0 / z;
    Matrix2x3::new(k.fx * iz, 0.0, -k.fx * x * iz * iz, 0.0, k.fy * iz, -k.fy * y * iz * iz)
}

fn local(cloud: &GaussianCloud, i: usize, k: &Intrinsics, pose: &Pose) -> Option<Local> {
    let q = normalize_quat(cloud.rotations[i]).ok()?;
    let r = unit_quat_to_matrix(q);
    let s = Vector3::from(cloud.log_scales[i].map(f64::exp));
    let p = pose.transform(&Vector3::from(cloud.positions[i]));
    if !(p.z > NEAR_PLANE) {
        return None;
    }
    let m = r * Matrix3::from_diagonal(&s);
    let sigma = m * m.transpose();
    let t = jacobian(k, &p) * pose.rotation;
    Some(Local { r, s, p, t, sigma })
}

/// Projects every primitive. Culled primitives keep zeroed entries and
/// `visible = false`.
pub fn project(cloud: &GaussianCloud, k: &Intrinsics, pose: &Pose) -> Projected2D {
    let rows: Vec<Option<([f64; 2], [f64; 3], [f64; 3], f64, f64)>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let l = local(cloud, i, k, pose)?;
            let cov: Matrix2<f64> = l.t * l.sigma * l.t.transpose() + Matrix2::identity() * COV_DILATION;
            let (ca, cb, cc) = (cov[(0, 0)], 0.5 * (cov[(0, 1)] + cov[(1, 0)]), cov[(1, 1)]);
            let det = ca * cc - cb * cb;
            if !(det > 0.0) || !det.is_finite() {
                return None;
            }
            let conic = [cc / det, -cb / det, ca / det];
            let mid = 0.5 * (ca + cc);
            let lambda_max = mid + (mid * mid - det).max(0.0).sqrt();
            let radius = RADIUS_SIGMAS * lambda_max.sqrt();
            let mean = [k.fx * l.p.x / l.p.z + k.cx, k.fy * l.p.y / l.p.z + k.cy];
            let misses = mean[0] + radius < 0.0
                || mean[0] - radius > (k.width - 1) as f64
                || mean[1] + radius < 0.0
                || mean[1] - radius > (k.height - 1) as f64;
            if misses {
                return None;
            }
            Some((mean, conic, [ca, cb, cc], l.p.z, radius))
        })
        .collect();
    let n = rows.len();
    let mut out = Projected2D {
        mean2d: vec![[0.0; 2]; n],
        conic: vec![[0.0; 3]; n],
        cov2d: vec![[0.0; 3]; n],
        depth: vec![0.0; n],
        radius: vec![0.0; n],
        visible: vec![false; n],
    };
    for (i, row) in rows.into_iter().enumerate() {
        if let Some((m, c, cv, d, r)) = row {
            out.mean2d[i] = m;
            out.conic[i] = c;
            out.cov2d[i] = cv;
            out.depth[i] = d;
            out.radius[i] = r;
            out.visible[i] = true;
        }
    }
    out
}

/// Gradients of the projection inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectGrads {
    pub d_positions: Vec<[f64; 3]>,
    pub d_log_scales: Vec<[f64; 3]>,
    pub d_rotations: Vec<[f64; 4]>,
}

/// Pulls screen-space gradients back to position, log-scale and raw
/// quaternion of each visible primitive.
pub fn project_backward(
    cloud: &GaussianCloud,
    k: &Intrinsics,
    pose: &Pose,
    projected: &Projected2D,
    d_mean2d: &[[f64; 2]],
    d_conic: &[[f64; 3]],
) -> ProjectGrads {
    let rows: Vec<([f64; 3], [f64; 3], [f64; 4])> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            if !projected.visible[i] {
                return ([0.0; 3], [0.0; 3], [0.0; 4]);
            }
            let Some(l) = local(cloud, i, k, pose) else {
                return ([0.0; 3], [0.0; 3], [0.0; 4]);
            };
            let [p, q, r] = projected.cov2d[i];
            let det = p * r - q * q;
            let d2 = det * det;
            let [ga, gb, gc] = d_conic[i];
            // conic = (r, -q, p) / det
            let dp = ga * (-r * r / d2) + gb * (q * r / d2) + gc * (-q * q / d2);
            let dq = ga * (2.0 * q * r / d2) + gb * (-1.0 / det - 2.0 * q * q / d2) + gc * (2.0 * q * p / d2);
            let dr = ga * (-q * q / d2) + gb * (q * p / d2) + gc * (-p * p / d2);
            let g = Matrix2::new(dp, 0.5 * dq, 0.5 * dq, dr);
            let d_sigma: Matrix3<f64> = l.t.transpose() * g * l.t;
            let d_t: Matrix2x3<f64> = 2.0 * g * l.t * l.sigma;
            let d_j: Matrix2x3<f64> = d_t * pose.rotation.transpose();

            let (x, y, z) = (l.p.x, l.p.y, l.p.z);
            let (fx, fy) = (k.fx, k.fy);
            let iz = 1.0 / z;
            let iz2 = iz * iz;
            let iz3 = iz2 * iz;
            let [du, dv] = d_mean2d[i];
            let mut dpc = Vector3::new(
                du * fx * iz + d_j[(0, 2)] * (-fx * iz2),
                dv * fy * iz + d_j[(1, 2)] * (-fy * iz2),
                -du * fx * x * iz2 - dv * fy * y * iz2,
            );
            dpc.z += d_j[(0, 0)] * (-fx * iz2)
                + d_j[(0, 2)] * (2.0 * fx * x * iz3)
                + d_j[(1, 1)] * (-fy * iz2)
                + d_j[(1, 2)] * (2.0 * fy * y * iz3);
            let d_mu = pose.rotation.transpose() * dpc;

            let m = l.r * Matrix3::from_diagonal(&l.s);
            let d_m = 2.0 * d_sigma * m;
            let mut d_ls = [0.0; 3];
            let mut d_r = Matrix3::zeros();
            for kk in 0..3 {
                let mut ds = 0.0;
                for ii in 0..3 {
                    ds += l.r[(ii, kk)] * d_m[(ii, kk)];
                    d_r[(ii, kk)] = l.s[kk] * d_m[(ii, kk)];
                }
                d_ls[kk] = ds * l.s[kk];
            }
            let d_q = quat_backward(cloud.rotations[i], &d_r);
            (d_mu.into(), d_ls, d_q)
        })
        .collect();
    let mut out = ProjectGrads {
        d_positions: Vec::with_capacity(rows.len()),
        d_log_scales: Vec::with_capacity(rows.len()),
        d_rotations: Vec::with_capacity(rows.len()),
    };
    for (a, b, c) in rows {
        out.d_positions.push(a);
        out.d_log_scales.push(b);
        out.d_rotations.push(c);
    }
    out
}

/// Gradient with respect to the raw (unnormalized) quaternion, given the
/// gradient with respect to the rotation matrix it produces.
pub fn quat_backward(raw: [f64; 4], d_r: &Matrix3<f64>) -> [f64; 4] {
    let norm = raw.iter().map(|c| c * c).sum::<f64>().sqrt();
    let [w, x, y, z] = raw.map(|c| c / norm);
    let g = |r: usize, c: usize| d_r[(r, c)];
    let dw = 2.0 * (-z * g(0, 1) + y * g(0, 2) + z * g(1, 0) - x * g(1, 2) - y * g(2, 0) + x * g(2, 1));
    let dx = 2.0
        * (y * g(0, 1) + z * g(0, 2) + y * g(1, 0) - 2.0 * x * g(1, 1) - w * g(1, 2) + z * g(2, 0) + w * g(2, 1)
            - 2.0 * x * g(2, 2));
    let dy = 2.0
        * (-2.0 * y * g(0, 0) + x * g(0, 1) + w * g(0, 2) + x * g(1, 0) + z * g(1, 2) - w * g(2, 0) + z * g(2, 1)
            - 2.0 * y * g(2, 2));
    let dz = 2.0
        * (-2.0 * z * g(0, 0) - w * g(0, 1) + x * g(0, 2) + w * g(1, 0) - 2.0 * z * g(1, 1) + y * g(1, 2)
            + x * g(2, 0)
            + y * g(2, 1));
    let dn = [dw, dx, dy, dz];
    let qn = [w, x, y, z];
    let dot: f64 = dn.iter().zip(&qn).map(|(a, b)| a * b).sum();
    [0, 1, 2, 3].map(|i| (dn[i] - qn[i] * dot) / norm)
}
