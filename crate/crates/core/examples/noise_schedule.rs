//! Schedule tables, forward diffusion and deterministic reversal.
//!
//! cargo run --release --example noise_schedule -- [T]

use diffir::schedule::{self, IprVector, NoiseMode, NoiseSchedule};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn main() -> diffir::Result<()> {
    let steps: usize = std::env::args().nth(1).map_or(4, |v| v.parse().expect("T"));
    let s = NoiseSchedule::linear(steps, 0.1, 0.99)?;
    println!("t\tbeta\talpha_bar\tposterior_var");
    for t in 1..=s.steps() {
        println!("{t}\t{:.5}\t{:.4e}\t{:.4e}", s.beta(t), s.alpha_bar(t), s.posterior_var(t));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = IprVector::clean((0..8).map(|i| (i as f64 - 3.5) / 2.0).collect());
    let eps: Vec<f64> = (0..8).map(|_| StandardNormal.sample(&mut rng)).collect();
    let z_t = schedule::diffuse(&s, &z, &eps)?;
    println!("\nZ     {:?}", round(&z.values));
    println!("Z_T   {:?}", round(&z_t.values));

    // walking back with the true noise at every step recovers Z
    let mut state = z_t;
    for t in (1..=s.steps()).rev() {
        let ab = s.alpha_bar(t);
        let oracle: Vec<f64> = state
            .values
            .iter()
            .zip(&z.values)
            .map(|(zt, z0)| (zt - ab.sqrt() * z0) / (1.0 - ab).sqrt())
            .collect();
        state = schedule::reverse_step(&s, &state, t, &oracle, NoiseMode::Deterministic, None)?;
    }
    println!("back  {:?}", round(&state.values));
    Ok(())
}

fn round(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| (x * 1e4).round() / 1e4).collect()
}
