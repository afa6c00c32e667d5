use crate::data::ImageBuffer;
use crate::error::{Error, Result};

/// Value written to CSV in place of an infinite PSNR.
pub const PSNR_INF_SENTINEL: f64 = 999.0;

pub fn mse(a: &[f32], b: &[f32]) -> f64 {
    let sum: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    sum / a.len() as f64
}

/// `10 · log10(peak² / MSE)`; `+∞` for identical images.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, peak: f64) -> Result<f64> {
    if !a.same_geometry(b) {
        return Err(Error::Data(format!(
            "PSNR of {}x{}x{} and {}x{}x{} images",
            a.width(),
            a.height(),
            a.channels(),
            b.width(),
            b.height(),
            b.channels()
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::Config(format!(
            "PSNR peak must be positive, got {peak}"
        )));
    }
    let m = mse(a.data(), b.data());
    Ok(if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / m).log10()
    })
}

/// PSNR as written to reports.
pub fn report_db(v: f64) -> f64 {
    if v.is_infinite() && v > 0.0 {
        PSNR_INF_SENTINEL
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let a = ImageBuffer::new(2, 2, 1, vec![0.2; 4]).unwrap();
        let b = ImageBuffer::new(2, 2, 1, vec![0.3; 4]).unwrap();
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-5);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        assert_eq!(report_db(f64::INFINITY), PSNR_INF_SENTINEL);
        assert!(psnr(&a, &a.to_rgb(), 1.0).is_err());
    }
}
