//! Full-reference image quality metrics.

use crate::data::Image;
use crate::error::{shape_err, Result};

pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Header line describing the SSIM settings, for metrics files.
pub fn ssim_settings() -> String {
    format!(
        "# ssim: gaussian window {SSIM_WINDOW}x{SSIM_WINDOW} sigma {SSIM_SIGMA}, K1 {SSIM_K1}, K2 {SSIM_K2}, luma BT.601, data range 1"
    )
}

fn check(a: &Image, b: &Image) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(shape_err(format!(
            "images {}x{}x{} and {}x{}x{}",
            a.channels, a.height, a.width, b.channels, b.height, b.width
        )))
    }
}

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    check(a, b)?;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64)
}

/// `10·log10(max² / MSE)`, capped at 99 dB.
pub fn psnr(a: &Image, b: &Image, max_val: f64) -> Result<f64> {
    if max_val <= 0.0 {
        return Err(crate::Error::Config(format!("psnr max value {max_val} must be positive")));
    }
    let m = mse(a, b)?;
    if m < 1e-12 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (max_val * max_val / m).log10()).min(PSNR_CAP))
}

/// ITU-R BT.601 luma of an RGB image; single-channel images pass through.
pub fn luma(img: &Image) -> Vec<f64> {
    if img.channels == 1 {
        return img.data.clone();
    }
    let n = img.height * img.width;
    (0..n)
        .map(|i| 0.299 * img.data[i] + 0.587 * img.data[n + i] + 0.114 * img.data[2 * n + i])
        .collect()
}

fn gaussian_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - r;
        *v = (-0.5 * x * x / (SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian filter evaluated only where the window fits.
fn filter_valid(x: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ho, wo) = (h - SSIM_WINDOW + 1, w - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; h * wo];
    for y in 0..h {
        for xo in 0..wo {
            rows[y * wo + xo] = k.iter().enumerate().map(|(i, kv)| kv * x[y * w + xo + i]).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for yo in 0..ho {
        for xo in 0..wo {
            out[yo * wo + xo] = k.iter().enumerate().map(|(i, kv)| kv * rows[(yo + i) * wo + xo]).sum();
        }
    }
    out
}

/// Mean single-scale SSIM on luma, data range 1, over every position where
/// the 11x11 window lies inside the image.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    check(a, b)?;
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(shape_err(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {}x{}",
            a.height, a.width
        )));
    }
    let (h, w) = (a.height, a.width);
    let x = luma(a);
    let y = luma(b);
    let k = gaussian_taps();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();
    let mx = filter_valid(&x, h, w, &k);
    let my = filter_valid(&y, h, w, &k);
    let mxx = filter_valid(&prod(&x, &x), h, w, &k);
    let myy = filter_valid(&prod(&y, &y), h, w, &k);
    let mxy = filter_valid(&prod(&x, &y), h, w, &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cxy = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_window_is_normalized_and_symmetric() {
        let k = gaussian_taps();
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for i in 0..SSIM_WINDOW {
            assert_eq!(k[i], k[SSIM_WINDOW - 1 - i]);
        }
    }

    #[test]
    fn luma_weights() {
        let img = Image::new(3, 1, 1, vec![1.0, 0.0, 0.0]);
        assert_eq!(luma(&img), vec![0.299]);
    }

    #[test]
    fn small_images_rejected() {
        let a = Image::filled(3, 10, 16, 0.5);
        assert!(ssim(&a, &a).is_err());
    }
}
