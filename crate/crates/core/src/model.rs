//! Whole-model configuration and the restoration pipelines.

use autograd::{Tape, Tensor, Var};
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::cpen::{self, CpenConfig, CpenVariant};
use crate::data::Task;
use crate::denoiser::{self, DenoiserConfig};
use crate::dirformer::{self, DirformerConfig};
use crate::error::{Error, Result};
use crate::nn::ParamSpec;
use crate::params::{Bound, ParamStore};
use crate::schedule::{NoiseMode, NoiseSchedule};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub cpen: CpenConfig,
    pub dirformer: DirformerConfig,
    pub denoiser: DenoiserConfig,
}

impl ModelConfig {
    /// Full-size configuration for `task`.
    pub fn for_task(task: Task) -> Self {
        let cpen = CpenConfig::default();
        let dirformer = match task {
            Task::Inpainting => DirformerConfig::inpainting(),
            Task::Sr => DirformerConfig::super_resolution(),
            Task::Deblur => DirformerConfig::deblurring(),
        };
        Self {
            denoiser: DenoiserConfig::for_ipr(cpen.ipr_len()),
            cpen,
            dirformer,
        }
    }

    /// Small widths for CPU training runs.
    pub fn desk(task: Task) -> Self {
        let cpen = CpenConfig {
            c_prime: 8,
            unshuffle_factor: 4,
            num_res_blocks: 1,
            image_channels: 3,
        };
        Self {
            dirformer: DirformerConfig {
                channels: [16, 16, 32, 32],
                heads: [1, 1, 2, 2],
                blocks: [1, 1, 1, 1],
                ffn_expansion: 2.0,
                gamma_init: 1.0,
                in_channels: if task == Task::Inpainting { 4 } else { 3 },
                out_channels: 3,
                ipr_len: cpen.ipr_len(),
            },
            denoiser: DenoiserConfig {
                hidden_width: 4 * cpen.ipr_len(),
                num_layers: 1,
                ..DenoiserConfig::for_ipr(cpen.ipr_len())
            },
            cpen,
        }
    }

    pub fn uses_mask(&self) -> bool {
        self.dirformer.in_channels == self.dirformer.out_channels + 1
    }

    pub fn validate(&self) -> Result<()> {
        self.dirformer.validate()?;
        self.denoiser.validate()?;
        let ipr = self.cpen.ipr_len();
        if self.dirformer.ipr_len != ipr || self.denoiser.ipr_len != ipr {
            return Err(Error::Config(format!(
                "prior length mismatch: cpen {ipr}, dirformer {}, denoiser {}",
                self.dirformer.ipr_len, self.denoiser.ipr_len
            )));
        }
        if self.cpen.image_channels != self.dirformer.out_channels {
            return Err(Error::Config("cpen and dirformer disagree on image channels".into()));
        }
        let extra = self.dirformer.in_channels as isize - self.dirformer.out_channels as isize;
        if !(0..=1).contains(&extra) {
            return Err(Error::Config(format!(
                "dirformer input channels {} must be image channels or image + mask",
                self.dirformer.in_channels
            )));
        }
        Ok(())
    }

    pub fn specs_s1(&self) -> Vec<ParamSpec> {
        let mut s = cpen::param_specs(&self.cpen, CpenVariant::S1);
        s.extend(dirformer::param_specs(&self.dirformer));
        s
    }

    /// Parameters added in stage 2.
    pub fn specs_s2_new(&self) -> Vec<ParamSpec> {
        let mut s = cpen::param_specs(&self.cpen, CpenVariant::S2);
        s.extend(denoiser::param_specs(&self.denoiser));
        s
    }
}

/// Builds the stage-2 parameter set from stage-1 weights: the stage-1 prior
/// network and restorer are copied, the stage-2 prior network starts from
/// the stage-1 one except its stem, and the denoiser is fresh.
pub fn init_stage2(model: &ModelConfig, s1: &ParamStore, rng: &mut dyn RngCore) -> Result<ParamStore> {
    let mut out = ParamStore::new();
    for spec in model.specs_s1() {
        let t = s1
            .get(&spec.name)
            .ok_or_else(|| Error::Checkpoint(format!("stage-1 weights lack `{}`", spec.name)))?;
        if t.shape() != spec.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "stage-1 `{}` has shape {:?}, config expects {:?}",
                spec.name,
                t.shape(),
                spec.shape
            )));
        }
        out.insert(spec.name.clone(), t.clone());
    }
    let fresh = ParamStore::from_specs(&model.specs_s2_new(), &mut *rng);
    let stem = format!("{}.{}.", CpenVariant::S2.prefix(), cpen::STEM);
    for (name, t) in fresh.iter() {
        let copied = name
            .strip_prefix(CpenVariant::S2.prefix())
            .filter(|_| !name.starts_with(&stem))
            .and_then(|rest| out.get(&format!("{}{rest}", CpenVariant::S1.prefix())).cloned());
        out.insert(name.clone(), copied.unwrap_or_else(|| t.clone()));
    }
    Ok(out)
}

/// Restored batch for a stage-1 model, whose prior is computed from the
/// ground truth.
pub fn restore_s1(
    params: &ParamStore,
    model: &ModelConfig,
    input: &Tensor,
    mask: Option<&Tensor>,
    gt: &Tensor,
) -> Result<Tensor> {
    let tape = Tape::new();
    let b = params.bind(&tape, |_| false);
    let z = cpen::cpen_s1_forward(&b, &model.cpen, tape.constant(gt.clone()), tape.constant(input.clone()))?;
    run_restorer(&tape, &b, model, input, mask, z)
}

/// How a stage-2 model obtains its prior at inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorSource {
    /// The condition vector itself, no diffusion.
    Condition,
    Sampled(NoiseMode),
}

/// Restored batch for a stage-2 model from the degraded input alone.
pub fn restore_s2(
    params: &ParamStore,
    model: &ModelConfig,
    schedule: &NoiseSchedule,
    input: &Tensor,
    mask: Option<&Tensor>,
    prior: PriorSource,
    rng: &mut dyn RngCore,
) -> Result<Tensor> {
    let tape = Tape::new();
    let b = params.bind(&tape, |_| false);
    let z = match prior {
        PriorSource::Condition => cpen::cpen_s2_forward(&b, &model.cpen, tape.constant(input.clone()))?,
        PriorSource::Sampled(mode) => tape.constant(denoiser::sample_ipr(
            params,
            &model.cpen,
            &model.denoiser,
            schedule,
            input,
            mode,
            rng,
        )?),
    };
    run_restorer(&tape, &b, model, input, mask, z)
}

fn run_restorer<'t>(
    tape: &'t Tape,
    b: &Bound<'t>,
    model: &ModelConfig,
    input: &Tensor,
    mask: Option<&Tensor>,
    z: Var<'t>,
) -> Result<Tensor> {
    let mask = if model.uses_mask() {
        Some(tape.constant(
            mask.ok_or_else(|| Error::Config("inpainting model needs a mask".into()))?
                .clone(),
        ))
    } else {
        None
    };
    let out = dirformer::dirformer_forward(b, &model.dirformer, tape.constant(input.clone()), mask, z)?;
    let out = out.value().map(|v| v.clamp(0.0, 1.0));
    if !out.all_finite() {
        return Err(Error::NonFinite {
            what: "restored image".into(),
            step: 0,
        });
    }
    Ok(out)
}
