//! Synthetic degradations: additive white Gaussian noise and a JPEG
//! quantization simulator.

use std::f64::consts::PI;
use std::sync::OnceLock;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{ImageBuffer, Task};
use crate::error::{Error, Result};
use crate::func_param::jpeg_scale;

/// Standard JPEG luminance quantization table (quality 50), row-major.
pub const LUMINANCE_TABLE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Quality range accepted by [`jpeg_degrade`].
pub const JPEG_QUALITY_RANGE: (f64, f64) = (10.0, 80.0);

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub task: Task,
    pub parameter: f64,
}

impl DegradationSpec {
    pub fn new(task: Task, parameter: f64) -> Result<Self> {
        let ok = match task {
            Task::Denoise => parameter > 0.0 && parameter <= 75.0,
            Task::Deblock => (JPEG_QUALITY_RANGE.0..=JPEG_QUALITY_RANGE.1).contains(&parameter),
        };
        if !ok {
            let d = task.domain();
            return Err(Error::OutOfDomain {
                x: parameter,
                lo: d.lo,
                hi: d.hi,
            });
        }
        Ok(DegradationSpec { task, parameter })
    }
}

/// Adds `N(0, (sigma/255)^2)` to every sample of `data` in place.
pub fn add_awgn_slice(data: &mut [f32], sigma: f64, rng: &mut impl Rng) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!(
            "noise level {sigma} must be finite and non-negative"
        )));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let s = sigma / 255.0;
    for v in data {
        let n: f64 = rng.sample(StandardNormal);
        *v = (f64::from(*v) + s * n) as f32;
    }
    Ok(())
}

/// Noisy copy of `img`; values are not clamped.
pub fn add_awgn(img: &ImageBuffer, sigma: f64, rng: &mut impl Rng) -> Result<ImageBuffer> {
    let mut out = img.clone();
    add_awgn_slice(out.data_mut(), sigma, rng)?;
    Ok(out)
}

/// Quantization table scaled for `quality`:
/// `clamp(floor((Q * S + 50) / 100), 1, 255)` with `S = H(quality)`.
pub fn quant_table(quality: f64) -> Result<[f64; 64]> {
    let s = jpeg_scale(quality)?;
    let mut out = [0.0; 64];
    for (o, &q) in out.iter_mut().zip(&LUMINANCE_TABLE) {
        *o = ((f64::from(q) * s + 50.0) / 100.0)
            .floor()
            .clamp(1.0, 255.0);
    }
    Ok(out)
}

fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut c = [[0.0; 8]; 8];
        for (u, row) in c.iter_mut().enumerate() {
            let alpha = if u == 0 {
                (1.0f64 / 8.0).sqrt()
            } else {
                (2.0f64 / 8.0).sqrt()
            };
            for (x, v) in row.iter_mut().enumerate() {
                *v = alpha * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        c
    })
}

/// Orthonormal 2-D DCT-II of an 8×8 block: `C · B · Cᵀ`.
pub fn dct8(block: &[f64; 64]) -> [f64; 64] {
    let c = dct_basis();
    let mut tmp = [0.0; 64];
    for u in 0..8 {
        for x in 0..8 {
            tmp[u * 8 + x] = (0..8).map(|y| c[u][y] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            out[u * 8 + v] = (0..8).map(|x| tmp[u * 8 + x] * c[v][x]).sum();
        }
    }
    out
}

/// Inverse of [`dct8`]: `Cᵀ · F · C`.
pub fn idct8(coef: &[f64; 64]) -> [f64; 64] {
    let c = dct_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for v in 0..8 {
            tmp[y * 8 + v] = (0..8).map(|u| c[u][y] * coef[u * 8 + v]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| tmp[y * 8 + v] * c[v][x]).sum();
        }
    }
    out
}

/// Mirror index for padding: `... 2 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...`.
fn mirror(i: usize, n: usize) -> usize {
    let m = i % (2 * n);
    if m < n {
        m
    } else {
        2 * n - 1 - m
    }
}

/// Simulates baseline JPEG on a gray image: per 8×8 block level shift,
/// DCT, quantization by the scaled luminance table, and inverse. Images
/// whose sides are not multiples of 8 are mirror-padded, then cropped back.
pub fn jpeg_degrade(img: &ImageBuffer, quality: f64) -> Result<ImageBuffer> {
    let (lo, hi) = JPEG_QUALITY_RANGE;
    if !(lo..=hi).contains(&quality) {
        return Err(Error::OutOfDomain { x: quality, lo, hi });
    }
    if img.channels() != 1 {
        return Err(Error::Data("JPEG simulation expects a gray image".into()));
    }
    let q = quant_table(quality)?;
    let (h, w) = (img.height(), img.width());
    let (ph, pw) = (h.div_ceil(8) * 8, w.div_ceil(8) * 8);
    let src = img.data();
    let mut out = vec![0.0f32; h * w];
    for by in (0..ph).step_by(8) {
        for bx in (0..pw).step_by(8) {
            let mut block = [0.0; 64];
            for y in 0..8 {
                for x in 0..8 {
                    let v = src[mirror(by + y, h) * w + mirror(bx + x, w)];
                    block[y * 8 + x] = f64::from(v) * 255.0 - 128.0;
                }
            }
            let mut coef = dct8(&block);
            for (c, &qq) in coef.iter_mut().zip(&q) {
                *c = (*c / qq).round() * qq;
            }
            let rec = idct8(&coef);
            for y in 0..8.min(h.saturating_sub(by)) {
                for x in 0..8.min(w.saturating_sub(bx)) {
                    let v = ((rec[y * 8 + x] + 128.0) / 255.0).clamp(0.0, 1.0);
                    out[(by + y) * w + bx + x] = v as f32;
                }
            }
        }
    }
    ImageBuffer::new(w, h, 1, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Purpose};

    #[test]
    fn quality_50_keeps_table() {
        let q = quant_table(50.0).unwrap();
        for (a, &b) in q.iter().zip(&LUMINANCE_TABLE) {
            assert_eq!(*a, f64::from(b));
        }
    }

    #[test]
    fn quality_10_scales_by_five() {
        // S = 500: floor((16 * 500 + 50) / 100) = 80
        assert_eq!(quant_table(10.0).unwrap()[0], 80.0);
        // 121 * 5 = 605 clamps to 255
        assert_eq!(quant_table(10.0).unwrap()[6 * 8 + 5], 255.0);
    }

    #[test]
    fn dct_round_trip() {
        let mut rng = stream(1, Purpose::Test, 0, 0);
        let block: [f64; 64] = std::array::from_fn(|_| rng.random_range(-128.0..128.0));
        let back = idct8(&dct8(&block));
        for (a, b) in block.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
        let flat = dct8(&[10.0; 64]);
        assert!((flat[0] - 80.0).abs() < 1e-12);
        assert!(flat[1..].iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_image_stays_zero() {
        let img = ImageBuffer::new(13, 9, 1, vec![0.0; 117]).unwrap();
        let out = jpeg_degrade(&img, 30.0).unwrap();
        assert_eq!((out.width(), out.height()), (13, 9));
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn jpeg_rejects_bad_inputs() {
        let gray = ImageBuffer::new(8, 8, 1, vec![0.5; 64]).unwrap();
        assert!(jpeg_degrade(&gray, 5.0).is_err());
        assert!(jpeg_degrade(&gray, 90.0).is_err());
        assert!(jpeg_degrade(&gray.to_rgb(), 30.0).is_err());
    }

    #[test]
    fn awgn_zero_sigma_is_identity() {
        let img = ImageBuffer::new(4, 4, 1, (0..16).map(|i| i as f32 / 16.0).collect()).unwrap();
        let out = add_awgn(&img, 0.0, &mut stream(1, Purpose::Test, 0, 0)).unwrap();
        assert_eq!(out, img);
        assert!(add_awgn(&img, -1.0, &mut stream(1, Purpose::Test, 0, 0)).is_err());
    }

    #[test]
    fn spec_parameter_ranges() {
        assert!(DegradationSpec::new(Task::Denoise, 0.0).is_err());
        assert!(DegradationSpec::new(Task::Denoise, 75.0).is_ok());
        assert!(DegradationSpec::new(Task::Deblock, 9.0).is_err());
    }
}
