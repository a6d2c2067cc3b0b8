//! PSNR and SSIM against progressively noisier copies of an image.

use diffir::data::{self, Image};
use diffir::metrics;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> diffir::Result<()> {
    let gt = data::gen_corpus(2, 1, 64)?.remove(0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    println!("{}", metrics::ssim_settings());
    println!("noise\tpsnr\tssim");
    for sigma in [0.0, 0.01, 0.03, 0.1, 0.3] {
        let noisy = Image::new(
            gt.channels,
            gt.height,
            gt.width,
            gt.data.iter().map(|v| v + sigma * rng.gen_range(-1.0..1.0)).collect(),
        )
        .clamp();
        println!("{sigma}\t{:.2}\t{:.4}", metrics::psnr(&noisy, &gt, 1.0)?, metrics::ssim(&noisy, &gt)?);
    }
    Ok(())
}
