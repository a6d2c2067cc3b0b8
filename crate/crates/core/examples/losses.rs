//! The restoration, prior-matching and alternative diffusion losses.

use autograd::Tensor;
use diffir::losses;

fn main() -> diffir::Result<()> {
    let z = [0.0, 1.0, -0.5, 2.0];
    let z_hat = [0.2, 0.7, -0.5, 1.0];
    println!("L_diff (mean |Ẑ - Z|)  {:.5}", losses::l_diff(&z_hat, &z)?);
    println!("L2     (mean (Ẑ - Z)²) {:.5}", losses::l2(&z_hat, &z)?);
    println!("KL(softmax Z || softmax Ẑ) {:.5}", losses::l_kl(&z_hat, &z)?);
    println!("KL reversed                {:.5}", losses::l_kl(&z, &z_hat)?);

    let gt = Tensor::from_fn(&[1, 3, 8, 8], |i| (i as f64 * 0.05).sin().abs());
    let restored = gt.map(|v| v + 0.1);
    println!("L_rec of a +0.1 shift      {:.5}", losses::l_rec(&restored, &gt)?);
    Ok(())
}
