mod common;

use common::Lcg;
use diffir::data::Image;
use diffir::metrics;

/// Pair generated exactly as in the reference script: `a` uniform, then
/// `b = 0.6·a + 0.4·u` element by element.
fn lcg_pair(seed: u64, h: usize, w: usize) -> (Image, Image) {
    let mut rng = Lcg(seed);
    let n = 3 * h * w;
    let a: Vec<f64> = (0..n).map(|_| rng.next()).collect();
    let b: Vec<f64> = a.iter().map(|x| 0.6 * x + 0.4 * rng.next()).collect();
    (Image::new(3, h, w, a), Image::new(3, h, w, b))
}

#[test]
fn ssim_matches_reference_implementation() {
    // skimage.metrics.structural_similarity on BT.601 luma, gaussian_weights,
    // sigma 1.5, population covariance, data_range 1
    let cases = [
        (1, 16, 16, 0.8404380163518552),
        (2, 24, 20, 0.7094839549414358),
        (3, 32, 32, 0.7652499353898645),
        (4, 11, 11, 0.8376627025547193),
        (5, 40, 17, 0.7752162476227752),
    ];
    for (seed, h, w, want) in cases {
        let (a, b) = lcg_pair(seed, h, w);
        let got = metrics::ssim(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-4, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn ssim_of_identical_images_is_one() {
    let (a, _) = lcg_pair(9, 16, 16);
    assert!((metrics::ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn psnr_examples() {
    let a = Image::filled(3, 4, 4, 0.5);
    assert_eq!(metrics::psnr(&a, &a, 1.0).unwrap(), 99.0);
    let b = Image::filled(3, 4, 4, 0.6);
    assert!((metrics::psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
    let zero = Image::filled(3, 4, 4, 0.0);
    let one = Image::filled(3, 4, 4, 1.0);
    assert!(metrics::psnr(&zero, &one, 1.0).unwrap().abs() < 1e-12);
    assert!(metrics::psnr(&a, &Image::filled(3, 4, 5, 0.5), 1.0).is_err());
}

#[test]
fn luma_weights() {
    let img = Image::new(3, 1, 1, vec![1.0, 0.0, 0.0]);
    assert_eq!(metrics::luma(&img), vec![0.299]);
    let grey = Image::filled(3, 2, 2, 0.25);
    for v in metrics::luma(&grey) {
        assert!((v - 0.25).abs() < 1e-15);
    }
}
