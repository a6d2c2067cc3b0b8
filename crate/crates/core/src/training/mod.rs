//! Two-stage training.
//!
//! Stage 1 trains the ground-truth prior network and the restorer together
//! on the reconstruction loss. Stage 2 freezes the stage-1 prior network,
//! uses its output as the target and trains the condition network, the
//! denoiser and (depending on [`Mode`]) the restorer.

pub mod adam;
pub mod checkpoint;

use std::time::Instant;

use autograd::{Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use checkpoint::{Checkpoint, CheckpointConfig};

use crate::cpen;
use crate::data::{Batch, BatchIter, Sample, Task};
use crate::denoiser::{self, Backprop, MlpEstimator};
use crate::dirformer;
use crate::error::{Error, Result};
use crate::losses::{self, LossReport};
use crate::model::{self, ModelConfig};
use crate::params::{Bound, ParamStore};
use crate::rng::{self, Purpose};
use crate::schedule::{diffuse_tensor, NoiseMode, NoiseSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    #[default]
    S1,
    S2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Restorer conditioned directly on the condition vector.
    V1NoDm,
    /// Denoiser trained alone on the noise-prediction objective.
    V2Traditional,
    /// Full reverse chain trained jointly with the restorer.
    #[default]
    V3Joint,
    /// As `V3Joint` with noise injected in every reverse step.
    V4JointNoise,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "v1" | "v1_no_dm" => Ok(Mode::V1NoDm),
            "v2" | "v2_traditional" => Ok(Mode::V2Traditional),
            "v3" | "v3_joint" => Ok(Mode::V3Joint),
            "v4" | "v4_joint_noise" => Ok(Mode::V4JointNoise),
            _ => Err(Error::Config(format!("unknown mode `{s}` (v1|v2|v3|v4)"))),
        }
    }
}

impl Mode {
    pub fn noise_mode(self) -> NoiseMode {
        match self {
            Mode::V4JointNoise => NoiseMode::Stochastic,
            _ => NoiseMode::Deterministic,
        }
    }

    /// Whether `name` is updated in stage 2 under this mode.
    pub fn trains(self, name: &str) -> bool {
        let group = name.split('.').next().unwrap_or("");
        match self {
            Mode::V1NoDm => matches!(group, "cpen_s2" | "dirformer"),
            Mode::V2Traditional => matches!(group, "cpen_s2" | "denoiser"),
            Mode::V3Joint | Mode::V4JointNoise => matches!(group, "cpen_s2" | "denoiser" | "dirformer"),
        }
    }
}

pub fn trains_in_stage1(name: &str) -> bool {
    matches!(name.split('.').next(), Some("cpen_s1" | "dirformer"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage: Stage,
    /// Stage-2 mode; must be absent for stage 1.
    pub mode: Option<Mode>,
    #[serde(alias = "T")]
    pub timesteps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub lr: f64,
    /// Cosine-anneals the learning rate from `lr` to this value over
    /// `steps`; absent keeps it constant.
    pub min_lr: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub patch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub task: Task,
    pub backprop: Backprop,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage: Stage::S1,
            mode: None,
            timesteps: crate::schedule::DEFAULT_STEPS,
            beta_start: crate::schedule::DEFAULT_BETA_START,
            beta_end: crate::schedule::DEFAULT_BETA_END,
            lr: 2e-4,
            min_lr: None,
            adam_beta1: 0.9,
            adam_beta2: 0.99,
            batch_size: 8,
            patch_size: 16,
            steps: 2000,
            seed: 7,
            task: Task::Inpainting,
            backprop: Backprop::Full,
        }
    }
}

impl TrainConfig {
    /// Stage-1 settings for the desk model on the default synthetic set.
    pub fn desk_stage1() -> Self {
        Self {
            lr: 1e-3,
            ..Self::default()
        }
    }

    /// Stage-2 settings matching [`TrainConfig::desk_stage1`].
    pub fn desk_stage2(mode: Mode) -> Self {
        Self {
            stage: Stage::S2,
            mode: Some(mode),
            lr: 2e-3,
            min_lr: Some(1e-5),
            steps: 1000,
            ..Self::default()
        }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.timesteps, self.beta_start, self.beta_end)
    }

    /// Learning rate used for update `step` (1-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        match self.min_lr {
            None => self.lr,
            Some(min) => {
                let frac = (step.saturating_sub(1)) as f64 / self.steps.max(1) as f64;
                min + 0.5 * (self.lr - min) * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }

    pub fn effective_mode(&self) -> Mode {
        self.mode.unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage == Stage::S1 && self.mode.is_some() {
            return Err(Error::Config("a training mode only applies to stage s2".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::Config("lr must be > 0 and Adam betas in [0, 1)".into()));
        }
        if let Some(min) = self.min_lr {
            if !(0.0..=self.lr).contains(&min) {
                return Err(Error::Config(format!("min_lr {min} must lie in [0, lr]")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        self.schedule().map(|_| ())
    }
}

/// One training-log row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub report: LossReport,
    pub wall_ms: u128,
}

impl LogRow {
    pub const HEADER: &'static str = "step\tl_rec\tl_diff\tl_all\twall_ms";

    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{:.9e}\t{:.9e}\t{:.9e}\t{}",
            self.step, self.report.l_rec, self.report.l_diff, self.report.l_all, self.wall_ms
        )
    }
}

/// Final weights and the per-step losses.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub losses: Vec<LossReport>,
}

/// Mean of `values[start..start + window]`.
pub fn window_mean(values: &[f64], start: usize, window: usize) -> f64 {
    values[start..start + window].iter().sum::<f64>() / window as f64
}

/// Random draws consumed by one stage-2 step.
#[derive(Debug, Clone)]
pub struct Stage2Draw {
    /// Forward-diffusion noise, `[n, ipr_len]`.
    pub eps: Tensor,
    /// Timestep for the noise-prediction objective.
    pub t: usize,
    /// Reverse-step noise for stochastic mode, indexed by `t - 1`.
    pub step_noise: Option<Vec<Tensor>>,
}

impl Stage2Draw {
    pub fn sample(rng: &mut ChaCha8Rng, s: &NoiseSchedule, mode: Mode, n: usize, ipr: usize) -> Self {
        let shape = [n, ipr];
        let eps = denoiser::standard_normal(rng, &shape);
        let t = rng.gen_range(1..=s.steps());
        let step_noise = (mode.noise_mode() == NoiseMode::Stochastic)
            .then(|| (0..s.steps()).map(|_| denoiser::standard_normal(rng, &shape)).collect());
        Self { eps, t, step_noise }
    }
}

/// Loss terms of one stage-2 step on the tape.
pub struct Stage2Graph<'t> {
    pub l_rec: Option<Var<'t>>,
    pub l_diff: Option<Var<'t>>,
    /// Noise-prediction error (mode v2 only).
    pub l_eps: Option<Var<'t>>,
    pub total: Var<'t>,
    pub z_hat: Option<Var<'t>>,
}

impl Stage2Graph<'_> {
    pub fn report(&self) -> LossReport {
        let l_rec = self.l_rec.map_or(0.0, |v| v.item());
        let l_diff = self.l_diff.map_or(0.0, |v| v.item());
        LossReport {
            l_rec,
            l_diff,
            l_all: self.total.item(),
            l2: self.l_eps.map(|v| v.item()),
            l_kl: None,
        }
    }
}

fn batch_vars<'t>(tape: &'t Tape, model: &ModelConfig, batch: &Batch) -> Result<(Var<'t>, Var<'t>, Option<Var<'t>>)> {
    let mask = if model.uses_mask() {
        let m = batch
            .mask
            .as_ref()
            .ok_or_else(|| Error::Data("inpainting model needs masks in the batch".into()))?;
        Some(tape.constant(m.clone()))
    } else {
        None
    };
    Ok((tape.constant(batch.gt.clone()), tape.constant(batch.input.clone()), mask))
}

/// Stage-1 reconstruction loss.
pub fn stage1_graph<'t>(tape: &'t Tape, b: &Bound<'t>, model: &ModelConfig, batch: &Batch) -> Result<Var<'t>> {
    let (gt, input, mask) = batch_vars(tape, model, batch)?;
    let z = cpen::cpen_s1_forward(b, &model.cpen, gt, input)?;
    let out = dirformer::dirformer_forward(b, &model.dirformer, input, mask, z)?;
    Ok(losses::l_rec_var(out, gt))
}

/// Builds the stage-2 objective for `mode` on one batch.
#[allow(clippy::too_many_arguments)]
pub fn stage2_graph<'t>(
    tape: &'t Tape,
    b: &Bound<'t>,
    model: &ModelConfig,
    s: &NoiseSchedule,
    batch: &Batch,
    mode: Mode,
    backprop: Backprop,
    draw: &Stage2Draw,
) -> Result<Stage2Graph<'t>> {
    let (gt, input, mask) = batch_vars(tape, model, batch)?;
    let d = cpen::cpen_s2_forward(b, &model.cpen, input)?;
    if mode == Mode::V1NoDm {
        let out = dirformer::dirformer_forward(b, &model.dirformer, input, mask, d)?;
        let l_rec = losses::l_rec_var(out, gt);
        return Ok(Stage2Graph {
            l_rec: Some(l_rec),
            l_diff: None,
            l_eps: None,
            total: l_rec,
            z_hat: Some(d),
        });
    }
    // target prior from the frozen stage-1 network
    let z = cpen::cpen_s1_forward(b, &model.cpen, gt, input)?.detach();
    if mode == Mode::V2Traditional {
        let z_t = tape.constant(diffuse_tensor(s, &z.value(), draw.t, &draw.eps));
        let eps_hat = denoiser::denoiser_forward(b, &model.denoiser, z_t, draw.t, s.steps(), d);
        let l_eps = losses::l2_var(eps_hat, tape.constant(draw.eps.clone()));
        return Ok(Stage2Graph {
            l_rec: None,
            l_diff: None,
            l_eps: Some(l_eps),
            total: l_eps,
            z_hat: None,
        });
    }
    let z_big_t = tape.constant(diffuse_tensor(s, &z.value(), s.steps(), &draw.eps));
    let mut est = MlpEstimator {
        params: b,
        cfg: &model.denoiser,
        steps: s.steps(),
    };
    let z_hat = denoiser::reverse_process(s, &mut est, z_big_t, d, draw.step_noise.as_deref(), backprop);
    let out = dirformer::dirformer_forward(b, &model.dirformer, input, mask, z_hat)?;
    let l_rec = losses::l_rec_var(out, gt);
    let l_diff = losses::l_diff_var(z_hat, z);
    Ok(Stage2Graph {
        l_rec: Some(l_rec),
        l_diff: Some(l_diff),
        l_eps: None,
        total: l_rec.add(l_diff),
        z_hat: Some(z_hat),
    })
}

fn check_finite(report: &LossReport, step: u64) -> Result<()> {
    if report.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            what: format!("loss (l_rec {}, l_diff {}, l_all {})", report.l_rec, report.l_diff, report.l_all),
            step,
        })
    }
}

fn check_grads(grads: &indexmap::IndexMap<String, Tensor>, step: u64) -> Result<()> {
    match grads.iter().find(|(_, g)| !g.all_finite()) {
        Some((name, _)) => Err(Error::NonFinite {
            what: format!("gradient of `{name}`"),
            step,
        }),
        None => Ok(()),
    }
}

/// Trains the stage-1 prior network and restorer on `data`.
///
/// `on_row` sees every log row as it is produced.
pub fn pretrain_stage1(
    cfg: &TrainConfig,
    model: &ModelConfig,
    data: &[Sample],
    on_row: &mut dyn FnMut(&LogRow) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    model.validate()?;
    if cfg.stage != Stage::S1 {
        return Err(Error::Config("pretrain_stage1 needs stage s1".into()));
    }
    let mut params = ParamStore::from_specs(&model.specs_s1(), &mut rng::stream(cfg.seed, Purpose::Init, 1));
    let mut batches = BatchIter::new(data, cfg.batch_size, cfg.patch_size, cfg.seed)?;
    let mut opt = Adam::new(cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
    let started = Instant::now();
    let mut history = Vec::with_capacity(cfg.steps as usize);
    for step in 1..=cfg.steps {
        let batch = batches.next_batch();
        let tape = Tape::new();
        let b = params.bind(&tape, trains_in_stage1);
        let loss = stage1_graph(&tape, &b, model, &batch)?;
        let report = LossReport {
            l_rec: loss.item(),
            l_diff: 0.0,
            l_all: loss.item(),
            l2: None,
            l_kl: None,
        };
        check_finite(&report, step)?;
        let grads = b.gradients(&tape.backward(loss));
        check_grads(&grads, step)?;
        drop(b);
        opt.lr = cfg.lr_at(step);
        opt.step(&mut params, &grads);
        history.push(report);
        on_row(&LogRow {
            step,
            report,
            wall_ms: started.elapsed().as_millis(),
        })?;
    }
    let config = CheckpointConfig {
        model: model.clone(),
        train: cfg.clone(),
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(&params, config, None, cfg.steps),
        losses: history,
    })
}

/// Stage-2 training from a stage-1 checkpoint.
pub fn train_stage2(
    cfg: &TrainConfig,
    ckpt_s1: &Checkpoint,
    data: &[Sample],
    on_row: &mut dyn FnMut(&LogRow) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.stage != Stage::S2 {
        return Err(Error::Config("train_stage2 needs stage s2".into()));
    }
    if ckpt_s1.stage != Stage::S1 {
        return Err(Error::Checkpoint("stage-2 training needs a stage-1 checkpoint".into()));
    }
    let model = &ckpt_s1.config.model;
    let mode = cfg.effective_mode();
    let s = cfg.schedule()?;
    let mut params = model::init_stage2(model, &ckpt_s1.params, &mut rng::stream(cfg.seed, Purpose::Init, 2))?;
    let mut batches = BatchIter::new(data, cfg.batch_size, cfg.patch_size, cfg.seed)?;
    let mut noise = rng::stream(cfg.seed, Purpose::Noise, 0);
    let mut opt = Adam::new(cfg.lr, cfg.adam_beta1, cfg.adam_beta2);
    let started = Instant::now();
    let mut history = Vec::with_capacity(cfg.steps as usize);
    for step in 1..=cfg.steps {
        let batch = batches.next_batch();
        let draw = Stage2Draw::sample(&mut noise, &s, mode, batch.len(), model.cpen.ipr_len());
        let tape = Tape::new();
        let b = params.bind(&tape, |n| mode.trains(n));
        let graph = stage2_graph(&tape, &b, model, &s, &batch, mode, cfg.backprop, &draw)?;
        let report = graph.report();
        check_finite(&report, step)?;
        let grads = b.gradients(&tape.backward(graph.total));
        check_grads(&grads, step)?;
        drop(b);
        opt.lr = cfg.lr_at(step);
        opt.step(&mut params, &grads);
        history.push(report);
        on_row(&LogRow {
            step,
            report,
            wall_ms: started.elapsed().as_millis(),
        })?;
    }
    let mut train = cfg.clone();
    train.mode = Some(mode);
    let config = CheckpointConfig {
        model: model.clone(),
        train,
    };
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(&params, config, Some(s), cfg.steps),
        losses: history,
    })
}
