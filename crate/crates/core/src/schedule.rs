//! Diffusion-process arithmetic on compact prior vectors.
//!
//! Timesteps are 1-based as in the usual DDPM notation: `t = 0` is the clean
//! vector and `t = T` the fully diffused one. All schedule math is `f64`.

use autograd::{Tensor, Var};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

pub const DEFAULT_STEPS: usize = 4;
pub const DEFAULT_BETA_START: f64 = 0.1;
pub const DEFAULT_BETA_END: f64 = 0.99;

/// β, α, ᾱ and posterior-variance tables for `T` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
    posterior_vars: Vec<f64>,
}

impl NoiseSchedule {
    /// Linearly spaced betas from `beta_start` to `beta_end`. A single-step
    /// schedule uses `beta_end` so that ᾱ_T stays close to zero.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::Schedule("need at least one timestep".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::Schedule(format!(
                "betas must satisfy 0 < start <= end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas: Vec<f64> = if steps == 1 {
            vec![beta_end]
        } else {
            let step = (beta_end - beta_start) / (steps - 1) as f64;
            (0..steps).map(|i| beta_start + i as f64 * step).collect()
        };
        Self::from_betas(betas)
    }

    pub fn default_four_step() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::Schedule("empty beta table".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Schedule(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bars = Vec::with_capacity(alphas.len());
        let mut acc = 1.0;
        for a in &alphas {
            acc *= a;
            alpha_bars.push(acc);
        }
        let posterior_vars = (0..betas.len())
            .map(|i| {
                let prev = if i == 0 { 1.0 } else { alpha_bars[i - 1] };
                (1.0 - prev) / (1.0 - alpha_bars[i]) * betas[i]
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            alpha_bars,
            posterior_vars,
        })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn posterior_vars(&self) -> &[f64] {
        &self.posterior_vars
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::Timestep {
                t,
                max: self.steps(),
            })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// ᾱ_t with ᾱ_0 = 1.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub fn posterior_var(&self, t: usize) -> f64 {
        self.posterior_vars[t - 1]
    }

    /// `(c_z, c_eps)` with `Ẑ_{t-1} = c_z·Ẑ_t − c_eps·ε̂`.
    pub fn reverse_coefficients(&self, t: usize) -> (f64, f64) {
        let a = self.alpha(t);
        let c_z = 1.0 / a.sqrt();
        (c_z, c_z * (1.0 - a) / (1.0 - self.alpha_bar(t)).sqrt())
    }

    /// Checks the structural invariants of the tables.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Schedule(m));
        for w in self.betas.windows(2) {
            if w[1] < w[0] {
                return fail(format!("betas not increasing: {} then {}", w[0], w[1]));
            }
        }
        for (i, (a, b)) in self.alphas.iter().zip(&self.betas).enumerate() {
            if *a != 1.0 - b {
                return fail(format!("alpha[{i}] != 1 - beta[{i}]"));
            }
        }
        for w in self.alpha_bars.windows(2) {
            if w[1] >= w[0] {
                return fail("alpha_bars not strictly decreasing".into());
            }
        }
        if self.posterior_vars[0] != 0.0 {
            return fail("posterior variance at t=1 must be 0".into());
        }
        Ok(())
    }
}

/// The compact prior vector and the diffusion step it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct IprVector {
    pub values: Vec<f64>,
    pub timestep: usize,
}

impl IprVector {
    pub fn clean(values: Vec<f64>) -> Self {
        Self {
            values,
            timestep: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// No variance injection in reverse steps.
    #[default]
    Deterministic,
    /// Adds `σ_t·ξ` after every reverse step.
    Stochastic,
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        Err(shape_err(format!("vector length {a} vs noise length {b}")))
    } else {
        Ok(())
    }
}

/// One-shot forward diffusion from the clean vector to step `T`.
pub fn diffuse(s: &NoiseSchedule, z: &IprVector, eps: &[f64]) -> Result<IprVector> {
    diffuse_to(s, z, s.steps(), eps)
}

/// `Z_t = √ᾱ_t·Z + √(1−ᾱ_t)·ε`.
pub fn diffuse_to(s: &NoiseSchedule, z: &IprVector, t: usize, eps: &[f64]) -> Result<IprVector> {
    s.check_t(t)?;
    check_len(z.len(), eps.len())?;
    if z.timestep != 0 {
        return Err(Error::Timestep {
            t: z.timestep,
            max: 0,
        });
    }
    let ab = s.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(IprVector {
        values: z.values.iter().zip(eps).map(|(z, e)| a * z + b * e).collect(),
        timestep: t,
    })
}

/// Single Markov step `Z_t = √(1−β_t)·Z_{t−1} + √β_t·ε`.
pub fn diffuse_step(s: &NoiseSchedule, prev: &IprVector, t: usize, eps: &[f64]) -> Result<IprVector> {
    s.check_t(t)?;
    check_len(prev.len(), eps.len())?;
    if prev.timestep + 1 != t {
        return Err(Error::Timestep {
            t: prev.timestep + 1,
            max: t,
        });
    }
    let beta = s.beta(t);
    let (a, b) = ((1.0 - beta).sqrt(), beta.sqrt());
    Ok(IprVector {
        values: prev.values.iter().zip(eps).map(|(z, e)| a * z + b * e).collect(),
        timestep: t,
    })
}

/// One reverse step using predicted noise `eps_hat`.
///
/// Stochastic mode requires `rng` and adds Gaussian noise of variance σ_t².
pub fn reverse_step(
    s: &NoiseSchedule,
    z_t: &IprVector,
    t: usize,
    eps_hat: &[f64],
    mode: NoiseMode,
    rng: Option<&mut dyn RngCore>,
) -> Result<IprVector> {
    s.check_t(t)?;
    check_len(z_t.len(), eps_hat.len())?;
    if z_t.timestep != t {
        return Err(Error::Timestep {
            t: z_t.timestep,
            max: t,
        });
    }
    let (c_z, c_eps) = s.reverse_coefficients(t);
    let mut values: Vec<f64> = z_t
        .values
        .iter()
        .zip(eps_hat)
        .map(|(z, e)| c_z * z - c_eps * e)
        .collect();
    if mode == NoiseMode::Stochastic {
        let rng = rng.ok_or_else(|| Error::Config("stochastic reverse step needs an rng".into()))?;
        let sigma = s.posterior_var(t).sqrt();
        for v in &mut values {
            let xi: f64 = StandardNormal.sample(rng);
            *v += sigma * xi;
        }
    }
    Ok(IprVector {
        values,
        timestep: t - 1,
    })
}

/// Batched, differentiable version of [`reverse_step`] on `[batch, len]`
/// rows. `noise` holds pre-drawn standard normals for stochastic mode.
pub fn reverse_step_var<'t>(
    s: &NoiseSchedule,
    z_t: Var<'t>,
    t: usize,
    eps_hat: Var<'t>,
    noise: Option<&Tensor>,
) -> Var<'t> {
    let (c_z, c_eps) = s.reverse_coefficients(t);
    let out = z_t.scale(c_z).sub(eps_hat.scale(c_eps));
    match noise {
        Some(xi) => {
            let sigma = s.posterior_var(t).sqrt();
            out.add(z_t.tape().constant(xi.map(|v| v * sigma)))
        }
        None => out,
    }
}

/// Batched `√ᾱ_t·Z + √(1−ᾱ_t)·ε` on plain tensors.
pub fn diffuse_tensor(s: &NoiseSchedule, z: &Tensor, t: usize, eps: &Tensor) -> Tensor {
    let ab = s.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    z.zip_map(eps, |z, e| a * z + b * e)
}
