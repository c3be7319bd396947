//! Per-band degree-3 real spherical harmonics, the baseline appearance model.
//!
//! Coefficients live in the cloud's feature rows: 16 per channel, channels in
//! band-set order, so a primitive carries `16 * B` values.

pub const SH_DEGREE: usize = 3;
pub const SH_COEFFS: usize = (SH_DEGREE + 1) * (SH_DEGREE + 1);

const C0: f64 = 0.282_094_791_773_878_14;
const C1: f64 = 0.488_602_511_902_919_9;
const C2: [f64; 5] = [
    1.092_548_430_592_079_2,
    -1.092_548_430_592_079_2,
    0.315_391_565_252_520_05,
    -1.092_548_430_592_079_2,
    0.546_274_215_296_039_6,
];
const C3: [f64; 7] = [
    -0.590_043_589_926_643_5,
    2.890_611_442_640_554,
    -0.457_045_799_464_465_8,
    0.373_176_332_590_115_4,
    -0.457_045_799_464_465_8,
    1.445_305_721_320_277,
    -0.590_043_589_926_643_5,
];

/// Real SH basis values for a unit direction.
pub fn sh_basis(dir: [f64; 3]) -> [f64; SH_COEFFS] {
    let [x, y, z] = dir;
    let (xx, yy, zz) = (x * x, y * y, z * z);
    let (xy, yz, xz) = (x * y, y * z, x * z);
    [
        C0,
        -C1 * y,
        C1 * z,
        -C1 * x,
        C2[0] * xy,
        C2[1] * yz,
        C2[2] * (2.0 * zz - xx - yy),
        C2[3] * xz,
        C2[4] * (xx - yy),
        C3[0] * y * (3.0 * xx - yy),
        C3[1] * xy * z,
        C3[2] * y * (4.0 * zz - xx - yy),
        C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy),
        C3[4] * x * (4.0 * zz - xx - yy),
        C3[5] * z * (xx - yy),
        C3[6] * x * (xx - 3.0 * yy),
    ]
}

/// Evaluates channels `[channel_offset, channel_offset + channels)` of one
/// primitive's coefficient row: `max(0, sum coeff * basis + 0.5)`.
pub fn sh_eval_row(coeffs: &[f64], basis: &[f64; SH_COEFFS], channel_offset: usize, channels: usize, out: &mut [f64]) {
    for c in 0..channels {
        let k = &coeffs[(channel_offset + c) * SH_COEFFS..(channel_offset + c + 1) * SH_COEFFS];
        let v: f64 = k.iter().zip(basis).map(|(a, b)| a * b).sum::<f64>() + 0.5;
        out[c] = v.max(0.0);
    }
}
