use diffir::schedule::{self, IprVector, NoiseMode, NoiseSchedule};
use diffir::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn rel_err(got: &[f64], want: &[f64]) -> f64 {
    let num: f64 = got.iter().zip(want).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    let den: f64 = want.iter().map(|b| b * b).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

#[test]
fn default_alpha_bar_against_product_oracle() {
    let s = NoiseSchedule::default_four_step();
    // independent oracle: interpolate and multiply directly
    let mut prod = 1.0;
    for k in 0..4 {
        let beta = 0.1 + k as f64 * (0.99 - 0.1) / 3.0;
        prod *= 1.0 - beta;
    }
    assert!((s.alpha_bar(4) - prod).abs() < 1e-15);
    assert!((s.alpha_bar(4) - 1.6652e-3).abs() < 1e-7, "{}", s.alpha_bar(4));
    assert!(s.alpha_bar(4) <= 2e-3);
}

#[test]
fn betas_of_small_schedules() {
    let s = NoiseSchedule::linear(4, 0.1, 0.99).unwrap();
    for (b, e) in s.betas().iter().zip([0.1, 0.39667, 0.69333, 0.99]) {
        assert!((b - e).abs() < 5e-6);
    }
    assert_eq!(NoiseSchedule::linear(2, 0.1, 0.99).unwrap().betas(), &[0.1, 0.99]);
    let one = NoiseSchedule::linear(1, 0.1, 0.99).unwrap();
    assert_eq!(one.betas(), &[0.99]);
    assert!((one.alpha_bar(1) - 0.01).abs() < 1e-15);
    assert_eq!(one.posterior_var(1), 0.0);
}

#[test]
fn invalid_schedules_rejected() {
    assert!(NoiseSchedule::linear(0, 0.1, 0.99).is_err());
    assert!(NoiseSchedule::linear(4, 0.0, 0.99).is_err());
    assert!(NoiseSchedule::linear(4, 0.1, 1.0).is_err());
    assert!(NoiseSchedule::linear(4, 0.5, 0.1).is_err());
}

#[test]
fn diffuse_limits() {
    let s = NoiseSchedule::default_four_step();
    let ones = IprVector::clean(vec![1.0; 6]);
    let out = schedule::diffuse(&s, &ones, &[0.0; 6]).unwrap();
    assert_eq!(out.timestep, 4);
    for v in &out.values {
        assert!((v - 0.040807).abs() < 1e-6, "{v}");
    }
    let zero = IprVector::clean(vec![0.0; 3]);
    let eps = [0.3, -1.0, 2.0];
    let out = schedule::diffuse(&s, &zero, &eps).unwrap();
    let k = (1.0 - s.alpha_bar(4)).sqrt();
    for (v, e) in out.values.iter().zip(eps) {
        assert!((v - k * e).abs() < 1e-15);
    }
    assert!(matches!(
        schedule::diffuse(&s, &zero, &[0.0; 2]),
        Err(Error::Shape(_))
    ));
}

#[test]
fn diffuse_step_examples() {
    let s = NoiseSchedule::default_four_step();
    let out = schedule::diffuse_step(&s, &IprVector::clean(vec![0.0, 0.0]), 1, &[1.0, 0.0]).unwrap();
    assert!((out.values[0] - 0.31623).abs() < 1e-5);
    assert_eq!(out.values[1], 0.0);
    assert_eq!(out.timestep, 1);
    let prev = IprVector::clean(vec![2.0]);
    let out = schedule::diffuse_step(&s, &prev, 1, &[0.0]).unwrap();
    assert!((out.values[0] - 2.0 * 0.9f64.sqrt()).abs() < 1e-15);
    assert!(schedule::diffuse_step(&s, &prev, 5, &[0.0]).is_err());
    assert!(schedule::diffuse_step(&s, &prev, 0, &[0.0]).is_err());
}

#[test]
fn iterated_steps_match_closed_form_marginal() {
    let s = NoiseSchedule::default_four_step();
    let z = [1.0, -0.5, 2.0];
    let n = 100_000usize;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    // per-t, per-coordinate running sums
    let mut sum = [[0.0f64; 3]; 4];
    let mut sum_sq = [[0.0f64; 3]; 4];
    for _ in 0..n {
        let mut state = IprVector::clean(z.to_vec());
        for t in 1..=4 {
            let eps: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            state = schedule::diffuse_step(&s, &state, t, &eps).unwrap();
            for i in 0..3 {
                sum[t - 1][i] += state.values[i];
                sum_sq[t - 1][i] += state.values[i] * state.values[i];
            }
        }
    }
    let nf = n as f64;
    for t in 1..=4 {
        let ab = s.alpha_bar(t);
        let var = 1.0 - ab;
        for i in 0..3 {
            let mean = sum[t - 1][i] / nf;
            let sample_var = sum_sq[t - 1][i] / nf - mean * mean;
            let se_mean = (var / nf).sqrt();
            // variance of the sample variance of a Gaussian is 2σ⁴/n
            let se_var = var * (2.0 / nf).sqrt();
            assert!((mean - ab.sqrt() * z[i]).abs() < 4.0 * se_mean, "t={t} i={i} mean {mean}");
            assert!((sample_var - var).abs() < 4.0 * se_var, "t={t} i={i} var {sample_var}");
        }
    }
}

#[test]
fn single_step_round_trip_is_exact() {
    let s = NoiseSchedule::linear(1, 0.1, 0.99).unwrap();
    let z: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin() * 3.0).collect();
    let eps: Vec<f64> = (0..32).map(|i| (i as f64 * 1.3).cos()).collect();
    let zt = schedule::diffuse(&s, &IprVector::clean(z.clone()), &eps).unwrap();
    let back = schedule::reverse_step(&s, &zt, 1, &eps, NoiseMode::Deterministic, None).unwrap();
    assert_eq!(back.timestep, 0);
    assert!(rel_err(&back.values, &z) <= 1e-10);
}

#[test]
fn no_noise_step_is_identity() {
    let s = NoiseSchedule::from_betas(vec![1e-12, 0.5]).unwrap();
    let zt = IprVector {
        values: vec![0.7, -1.2],
        timestep: 1,
    };
    let out = schedule::reverse_step(&s, &zt, 1, &[0.4, 0.9], NoiseMode::Deterministic, None).unwrap();
    for (a, b) in out.values.iter().zip(&zt.values) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn stochastic_mode_needs_rng() {
    let s = NoiseSchedule::default_four_step();
    let zt = IprVector {
        values: vec![0.0; 4],
        timestep: 2,
    };
    assert!(schedule::reverse_step(&s, &zt, 2, &[0.0; 4], NoiseMode::Stochastic, None).is_err());
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let out = schedule::reverse_step(&s, &zt, 2, &[0.0; 4], NoiseMode::Stochastic, Some(&mut rng)).unwrap();
    assert!(out.values.iter().any(|v| *v != 0.0));
}

fn schedule_strategy() -> impl Strategy<Value = NoiseSchedule> {
    (1usize..=12, 1e-4f64..0.5, 0.0f64..1.0).prop_map(|(t, start, frac)| {
        let end = start + frac * (0.999 - start);
        NoiseSchedule::linear(t, start, end.max(start)).unwrap()
    })
}

proptest! {
    #[test]
    fn schedule_tables_are_consistent(s in schedule_strategy()) {
        let betas = s.betas();
        for w in betas.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        for t in 1..=s.steps() {
            prop_assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
            prop_assert_eq!(s.alpha(t), 1.0 - s.beta(t));
            let prev = if t == 1 { 1.0 } else { s.alpha_bar(t - 1) };
            prop_assert_eq!(s.alpha_bar(t), prev * s.alpha(t));
            prop_assert!(s.alpha_bar(t) < prev);
        }
        prop_assert_eq!(s.posterior_var(1), 0.0);
    }

    #[test]
    fn deterministic_reverse_equals_posterior_mean(
        s in schedule_strategy(),
        z0 in prop::collection::vec(-3.0f64..3.0, 4),
        eps in prop::collection::vec(-3.0f64..3.0, 4),
        pick in 0usize..64,
    ) {
        let t = 1 + pick % s.steps();
        let zt = schedule::diffuse_to(&s, &IprVector::clean(z0.clone()), t, &eps).unwrap();
        let out = schedule::reverse_step(&s, &zt, t, &eps, NoiseMode::Deterministic, None).unwrap();
        // posterior mean μ_t(x_t, x_0) with x_0 implied by the same ε
        let ab = s.alpha_bar(t);
        let ab_prev = if t == 1 { 1.0 } else { s.alpha_bar(t - 1) };
        let (a, b) = (s.alpha(t), s.beta(t));
        for i in 0..4 {
            let x0 = (zt.values[i] - (1.0 - ab).sqrt() * eps[i]) / ab.sqrt();
            let mu = ab_prev.sqrt() * b / (1.0 - ab) * x0
                + a.sqrt() * (1.0 - ab_prev) / (1.0 - ab) * zt.values[i];
            prop_assert!((out.values[i] - mu).abs() <= 1e-8 * (1.0 + mu.abs()), "{} vs {}", out.values[i], mu);
        }
        let again = schedule::reverse_step(&s, &zt, t, &eps, NoiseMode::Deterministic, None).unwrap();
        prop_assert_eq!(out, again);
    }
}
