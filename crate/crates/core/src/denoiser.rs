//! Noise estimator over the compact prior vector and the reverse sampler.

use autograd::{Tape, Tensor, Var};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cpen::{self, ConditionVector, CpenConfig};
use crate::error::{shape_err, Error, Result};
use crate::nn::{self, SpecBuilder, LEAKY_SLOPE};
use crate::params::{Bound, ParamStore};
use crate::schedule::{reverse_step_var, IprVector, NoiseMode, NoiseSchedule};

pub const PREFIX: &str = "denoiser";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum TimeEmbedding {
    /// `t / T` as one extra input.
    #[default]
    ScalarAppend,
    /// `[sin(t·f_k), cos(t·f_k)]` with geometric frequencies; `dim` is even.
    Sinusoidal { dim: usize },
}

impl TimeEmbedding {
    pub fn width(self) -> usize {
        match self {
            TimeEmbedding::ScalarAppend => 1,
            TimeEmbedding::Sinusoidal { dim } => dim,
        }
    }

    pub fn encode(self, t: usize, steps: usize) -> Vec<f64> {
        match self {
            TimeEmbedding::ScalarAppend => vec![t as f64 / steps as f64],
            TimeEmbedding::Sinusoidal { dim } => {
                let half = dim / 2;
                let mut out = Vec::with_capacity(dim);
                let freqs: Vec<f64> = (0..half)
                    .map(|k| (-(10_000f64).ln() * k as f64 / half as f64).exp())
                    .collect();
                out.extend(freqs.iter().map(|f| (t as f64 * f).sin()));
                out.extend(freqs.iter().map(|f| (t as f64 * f).cos()));
                out
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub ipr_len: usize,
    pub hidden_width: usize,
    /// Number of hidden layers.
    pub num_layers: usize,
    #[serde(default)]
    pub t_embed: TimeEmbedding,
}

impl DenoiserConfig {
    /// Four hidden layers of width `2·ipr_len`.
    pub fn for_ipr(ipr_len: usize) -> Self {
        Self {
            ipr_len,
            hidden_width: 2 * ipr_len,
            num_layers: 4,
            t_embed: TimeEmbedding::ScalarAppend,
        }
    }

    pub fn input_width(&self) -> usize {
        2 * self.ipr_len + self.t_embed.width()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ipr_len == 0 || self.hidden_width == 0 || self.num_layers == 0 {
            return Err(Error::Config("denoiser widths and depth must be positive".into()));
        }
        if let TimeEmbedding::Sinusoidal { dim } = self.t_embed {
            if dim == 0 || dim % 2 != 0 {
                return Err(Error::Config(format!("sinusoidal embedding dim {dim} must be even and > 0")));
            }
        }
        Ok(())
    }
}

pub fn param_specs(cfg: &DenoiserConfig) -> Vec<nn::ParamSpec> {
    let mut b = SpecBuilder::new(PREFIX);
    let mut fin = cfg.input_width();
    for i in 0..cfg.num_layers {
        b.linear(&format!("fc{i}"), fin, cfg.hidden_width);
        fin = cfg.hidden_width;
    }
    b.linear("out", fin, cfg.ipr_len);
    b.finish()
}

/// `ε_θ(Concat(Ẑ_t, t, D))` on `[n, ipr_len]` rows.
pub fn denoiser_forward<'t>(
    b: &Bound<'t>,
    cfg: &DenoiserConfig,
    z_t: Var<'t>,
    t: usize,
    steps: usize,
    d: Var<'t>,
) -> Var<'t> {
    let n = z_t.shape()[0];
    let code = cfg.t_embed.encode(t, steps);
    let width = code.len();
    let tcol = Tensor::from_fn(&[n, width], |i| code[i % width]);
    let mut h = Var::concat(&[z_t, z_t.tape().constant(tcol), d]);
    for i in 0..cfg.num_layers {
        h = nn::linear(b, &format!("{PREFIX}.fc{i}"), h).leaky_relu(LEAKY_SLOPE);
    }
    nn::linear(b, &format!("{PREFIX}.out"), h)
}

pub fn mult_adds(cfg: &DenoiserConfig) -> u64 {
    let mut fin = cfg.input_width();
    let mut macs = 0;
    for _ in 0..cfg.num_layers {
        macs += nn::linear_macs(fin, cfg.hidden_width);
        fin = cfg.hidden_width;
    }
    macs + nn::linear_macs(fin, cfg.ipr_len)
}

/// Anything that predicts the noise in `Ẑ_t` given the condition `D`.
pub trait NoiseEstimator<'t> {
    fn estimate(&mut self, z_t: Var<'t>, t: usize, d: Var<'t>) -> Var<'t>;
}

/// The learned estimator bound to a tape.
pub struct MlpEstimator<'a, 't> {
    pub params: &'a Bound<'t>,
    pub cfg: &'a DenoiserConfig,
    pub steps: usize,
}

impl<'t> NoiseEstimator<'t> for MlpEstimator<'_, 't> {
    fn estimate(&mut self, z_t: Var<'t>, t: usize, d: Var<'t>) -> Var<'t> {
        denoiser_forward(self.params, self.cfg, z_t, t, self.steps, d)
    }
}

/// How far gradients travel back through the reverse chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backprop {
    #[default]
    Full,
    /// Only the final step (`t = 1`) is differentiated.
    LastStep,
}

/// Runs `t = T, ..., 1` reverse steps from `z_big_t`.
///
/// `noise[t - 1]` supplies the standard normals injected after step `t` in
/// stochastic mode; `None` runs deterministically.
pub fn reverse_process<'t>(
    s: &NoiseSchedule,
    est: &mut dyn NoiseEstimator<'t>,
    z_big_t: Var<'t>,
    d: Var<'t>,
    noise: Option<&[Tensor]>,
    backprop: Backprop,
) -> Var<'t> {
    let mut z = z_big_t;
    for t in (1..=s.steps()).rev() {
        if t == 1 && backprop == Backprop::LastStep {
            z = z.detach();
        }
        let eps = est.estimate(z, t, d);
        z = reverse_step_var(s, z, t, eps, noise.map(|n| &n[t - 1]));
    }
    z
}

/// Draws `[n, len]` standard normals.
pub fn standard_normal(rng: &mut dyn RngCore, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| StandardNormal.sample(&mut *rng))
}

/// Draws the starting point and (stochastic mode) the per-step noise.
pub fn draw_reverse_noise(
    rng: &mut dyn RngCore,
    s: &NoiseSchedule,
    shape: &[usize],
    mode: NoiseMode,
) -> (Tensor, Option<Vec<Tensor>>) {
    let start = standard_normal(rng, shape);
    let steps = match mode {
        NoiseMode::Deterministic => None,
        NoiseMode::Stochastic => Some((0..s.steps()).map(|_| standard_normal(rng, shape)).collect()),
    };
    (start, steps)
}

/// Predicted noise for one vector.
pub fn denoise_eps(
    params: &ParamStore,
    cfg: &DenoiserConfig,
    s: &NoiseSchedule,
    z_t: &IprVector,
    t: usize,
    d: &ConditionVector,
) -> Result<Vec<f64>> {
    if t == 0 || t > s.steps() {
        return Err(Error::Timestep { t, max: s.steps() });
    }
    if z_t.len() != cfg.ipr_len || d.values.len() != cfg.ipr_len {
        return Err(shape_err(format!(
            "denoiser expects length {}, got Z_t {} and D {}",
            cfg.ipr_len,
            z_t.len(),
            d.values.len()
        )));
    }
    let tape = Tape::new();
    let b = params.bind(&tape, |_| false);
    let row = |v: &[f64]| tape.constant(Tensor::new(&[1, v.len()], v.to_vec()));
    let out = denoiser_forward(&b, cfg, row(&z_t.values), t, s.steps(), row(&d.values));
    Ok(out.value().data().to_vec())
}

/// Samples `Ẑ` for a batch of degraded images `[n, 3, h, w]`.
///
/// `D` is computed once, `Ẑ_T` is the only random draw in deterministic
/// mode. Returns `[n, ipr_len]`.
pub fn sample_ipr(
    params: &ParamStore,
    cpen_cfg: &CpenConfig,
    cfg: &DenoiserConfig,
    s: &NoiseSchedule,
    lq: &Tensor,
    mode: NoiseMode,
    rng: &mut dyn RngCore,
) -> Result<Tensor> {
    let tape = Tape::new();
    let b = params.bind(&tape, |_| false);
    let d = cpen::cpen_s2_forward(&b, cpen_cfg, tape.constant(lq.clone()))?;
    let shape = d.shape();
    let (start, noise) = draw_reverse_noise(rng, s, &shape, mode);
    let mut est = MlpEstimator {
        params: &b,
        cfg,
        steps: s.steps(),
    };
    let z = reverse_process(s, &mut est, tape.constant(start), d, noise.as_deref(), Backprop::Full);
    let out = z.value().as_ref().clone();
    if !out.all_finite() {
        return Err(Error::NonFinite {
            what: "sampled prior".into(),
            step: 0,
        });
    }
    Ok(out)
}
