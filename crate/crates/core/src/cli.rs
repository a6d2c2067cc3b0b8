//! Command-line front end.
//!
//! Every command prints tab-separated output on success. Failures print a
//! single `error\t<kind>\t<exit code>\t<message>` line on stderr and exit
//! with 2 (configuration), 3 (numerical failure) or 4 (I/O).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::cost::{self, Variant};
use crate::data::{self, Task};
use crate::denoiser::{self, MlpEstimator, NoiseEstimator};
use crate::error::{Error, Result};
use crate::eval;
use crate::model::ModelConfig;
use crate::training::{self, Checkpoint, LogRow, Mode, Stage, TrainOutcome};

#[derive(Debug, Parser)]
#[command(name = "diffir", version, about = "Prior-diffusion image restoration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the training seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Writes the configured corpus (ground truth, degraded inputs, masks, index).
    GenData(Common),
    /// Stage-1 training.
    TrainS1(Common),
    /// Stage-2 training from `stage1_checkpoint`.
    TrainS2 {
        #[command(flatten)]
        common: Common,
        /// v1 | v2 | v3 | v4
        #[arg(long)]
        mode: Option<String>,
        /// Number of diffusion steps.
        #[arg(long)]
        t: Option<usize>,
    },
    /// Restores the held-out inputs with `checkpoint` and writes PNGs.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t: Option<usize>,
    },
    /// Scores `checkpoint` on the held-out set.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        t: Option<usize>,
    },
    /// Prints parameter and Mult-Add counts.
    Count {
        #[arg(long)]
        config: Option<PathBuf>,
        /// inpainting | sr | deblur (full-size model)
        #[arg(long)]
        task: Option<String>,
        /// Square input size.
        #[arg(long, default_value_t = 256)]
        input: usize,
        #[arg(long, default_value_t = crate::schedule::DEFAULT_STEPS)]
        t: usize,
    },
    /// Trains and evaluates stage 2 once per diffusion-step count.
    SweepT {
        #[command(flatten)]
        common: Common,
        /// Comma-separated step counts, e.g. 1,2,4,8.
        #[arg(long)]
        t: String,
        #[arg(long)]
        mode: Option<String>,
    },
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(err, "error\tusage\t2\t{first}");
            return 2;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            let msg = e.to_string().replace(['\n', '\t'], " ");
            let _ = writeln!(err, "error\t{}\t{code}\t{msg}", e.kind());
            code as i32
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.train.seed = seed;
    }
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn prepare_run_dir(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join("config.json"), cfg.to_json()?)?;
    Ok(())
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::GenData(common) => gen_data(load_config(&common)?.resolve()?, out),
        Command::TrainS1(common) => {
            let mut cfg = load_config(&common)?;
            cfg.train.stage = Stage::S1;
            cfg.train.mode = None;
            train(cfg.resolve()?, out)
        }
        Command::TrainS2 { common, mode, t } => {
            let mut cfg = load_config(&common)?;
            cfg.train.stage = Stage::S2;
            if let Some(m) = mode {
                cfg.train.mode = Some(m.parse()?);
            }
            if let Some(t) = t {
                cfg.train.timesteps = t;
            }
            train(cfg.resolve()?, out)
        }
        Command::Infer { common, t } => infer(load_config(&common)?.resolve()?, t, out),
        Command::Eval { common, t } => evaluate(load_config(&common)?.resolve()?, t, out),
        Command::Count {
            config,
            task,
            input,
            t,
        } => {
            let model = match (config, task) {
                (Some(path), _) => ExperimentConfig::load(&path)?.resolve()?.model(),
                (None, Some(task)) => ModelConfig::for_task(task.parse::<Task>()?),
                (None, None) => ModelConfig::for_task(Task::Inpainting),
            };
            count(&model, input, t, out)
        }
        Command::SweepT { common, t, mode } => {
            let mut cfg = load_config(&common)?;
            cfg.train.stage = Stage::S2;
            if let Some(m) = mode {
                cfg.train.mode = Some(m.parse()?);
            }
            let ts = t
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::Config(format!("bad step count `{v}` in --t")))
                })
                .collect::<Result<Vec<_>>>()?;
            sweep(cfg.resolve()?, &ts, out)
        }
    }
}

fn gen_data(cfg: ExperimentConfig, out: &mut dyn Write) -> Result<()> {
    prepare_run_dir(&cfg)?;
    let (train, held) = cfg.load_pairs()?;
    let all: Vec<_> = train.into_iter().chain(held).collect();
    let dir = cfg.out_dir.join("corpus");
    data::write_corpus(&dir, &all, cfg.data.degrade_seed)?;
    writeln!(out, "corpus\t{}\t{}", dir.display(), all.len())?;
    Ok(())
}

fn write_log(path: &Path) -> Result<impl FnMut(&LogRow) -> Result<()>> {
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(f, "{}", LogRow::HEADER)?;
    Ok(move |row: &LogRow| -> Result<()> {
        writeln!(f, "{}", row.to_tsv())?;
        f.flush()?;
        Ok(())
    })
}

fn load_stage1(cfg: &ExperimentConfig) -> Result<Checkpoint> {
    let path = cfg
        .stage1_checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("stage-2 training needs `stage1_checkpoint` in the config".into()))?;
    let ckpt = Checkpoint::load(path)?;
    if ckpt.config.model != cfg.model() {
        return Err(Error::Config("stage-1 checkpoint was trained with a different model config".into()));
    }
    Ok(ckpt)
}

/// Trains one stage into `out_dir`; returns the outcome for further use.
fn train_into(cfg: &ExperimentConfig) -> Result<TrainOutcome> {
    prepare_run_dir(cfg)?;
    let (train_set, held) = cfg.load_samples()?;
    let mut log = write_log(&cfg.out_dir.join("train.log"))?;
    let outcome = match cfg.train.stage {
        Stage::S1 => training::pretrain_stage1(&cfg.train, &cfg.model(), &train_set, &mut log)?,
        Stage::S2 => training::train_stage2(&cfg.train, &load_stage1(cfg)?, &train_set, &mut log)?,
    };
    outcome.checkpoint.save(&cfg.out_dir.join("checkpoint"))?;
    let report = eval::evaluate(&outcome.checkpoint, &held, cfg.train.seed)?;
    fs::write(cfg.out_dir.join("metrics.tsv"), report.to_tsv())?;
    Ok(outcome)
}

fn train(cfg: ExperimentConfig, out: &mut dyn Write) -> Result<()> {
    let outcome = train_into(&cfg)?;
    let metrics = fs::read_to_string(cfg.out_dir.join("metrics.tsv"))?;
    let last = outcome.losses.last().copied().unwrap_or_default();
    writeln!(out, "checkpoint\t{}", cfg.out_dir.join("checkpoint").display())?;
    writeln!(out, "final_l_all\t{:.6}", last.l_all)?;
    if let Some(mean) = metrics.lines().find(|l| l.starts_with("mean\t")) {
        writeln!(out, "{mean}")?;
    }
    Ok(())
}

fn checkpoint_for(cfg: &ExperimentConfig) -> Result<Checkpoint> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("`checkpoint` missing from the config".into()))?;
    Checkpoint::load(path)
}

fn schedule_override(ckpt: &Checkpoint, t: Option<usize>) -> Result<Option<crate::schedule::NoiseSchedule>> {
    t.map(|t| {
        let tc = &ckpt.config.train;
        crate::schedule::NoiseSchedule::linear(t, tc.beta_start, tc.beta_end)
    })
    .transpose()
}

fn infer(cfg: ExperimentConfig, t: Option<usize>, out: &mut dyn Write) -> Result<()> {
    let ckpt = checkpoint_for(&cfg)?;
    let (_, held) = cfg.load_samples()?;
    let s = schedule_override(&ckpt, t)?;
    let restored = eval::restore_all(&ckpt, s.as_ref(), &held, cfg.train.seed)?;
    prepare_run_dir(&cfg)?;
    for (i, img) in restored.iter().enumerate() {
        let path = cfg.out_dir.join(format!("restored_{i:04}.png"));
        data::save_image(&path, img)?;
        writeln!(out, "restored\t{}", path.display())?;
    }
    Ok(())
}

fn evaluate(cfg: ExperimentConfig, t: Option<usize>, out: &mut dyn Write) -> Result<()> {
    let ckpt = checkpoint_for(&cfg)?;
    let (_, held) = cfg.load_samples()?;
    let s = schedule_override(&ckpt, t)?;
    let report = eval::score(&eval::restore_all(&ckpt, s.as_ref(), &held, cfg.train.seed)?, &held)?;
    prepare_run_dir(&cfg)?;
    let tsv = report.to_tsv();
    fs::write(cfg.out_dir.join("metrics.tsv"), &tsv)?;
    write!(out, "{tsv}")?;
    Ok(())
}

fn count(model: &ModelConfig, input: usize, t: usize, out: &mut dyn Write) -> Result<()> {
    for variant in [Variant::S1, Variant::S2] {
        let r = cost::cost_report(model, variant, input, t)?;
        let tag = match variant {
            Variant::S1 => "s1",
            Variant::S2 => "s2",
        };
        for line in r.to_tsv().lines().skip(1) {
            writeln!(out, "{tag}\t{line}")?;
        }
    }
    Ok(())
}

/// Counts estimator calls while delegating to the learned denoiser.
struct CallCounter<'a, 'b, 't> {
    inner: MlpEstimator<'a, 't>,
    calls: &'b mut usize,
}

impl<'t> NoiseEstimator<'t> for CallCounter<'_, '_, 't> {
    fn estimate(&mut self, z_t: autograd::Var<'t>, t: usize, d: autograd::Var<'t>) -> autograd::Var<'t> {
        *self.calls += 1;
        self.inner.estimate(z_t, t, d)
    }
}

/// Structural checks on a trained stage-2 checkpoint at its own schedule.
pub fn check_pipeline(ckpt: &Checkpoint, held: &[data::Sample], seed: u64) -> Result<()> {
    let s = ckpt
        .schedule
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("stage-2 checkpoint without schedule".into()))?;
    s.validate()?;
    let model = &ckpt.config.model;
    let sample = &held[..1];
    let batch = data::Batch::from_samples(&sample.iter().collect::<Vec<_>>());
    let tape = autograd::Tape::new();
    let b = ckpt.params.bind(&tape, |_| false);
    let d = crate::cpen::cpen_s2_forward(&b, &model.cpen, tape.constant(batch.input.clone()))?;
    let mut calls = 0;
    let mut est = CallCounter {
        inner: MlpEstimator {
            params: &b,
            cfg: &model.denoiser,
            steps: s.steps(),
        },
        calls: &mut calls,
    };
    let start = tape.constant(autograd::Tensor::zeros(&d.shape()));
    let z = denoiser::reverse_process(s, &mut est, start, d, None, denoiser::Backprop::Full);
    if calls != s.steps() {
        return Err(Error::Config(format!("reverse chain made {calls} estimator calls for T = {}", s.steps())));
    }
    if !z.value().all_finite() {
        return Err(Error::NonFinite {
            what: "reverse chain".into(),
            step: 0,
        });
    }
    let a = eval::restore_all(ckpt, None, held, seed)?;
    let b2 = eval::restore_all(ckpt, None, held, seed)?;
    if a != b2 {
        return Err(Error::Config("restoration is not reproducible for a fixed seed".into()));
    }
    Ok(())
}

fn sweep(cfg: ExperimentConfig, ts: &[usize], out: &mut dyn Write) -> Result<()> {
    if ts.is_empty() {
        return Err(Error::Config("--t needs at least one step count".into()));
    }
    prepare_run_dir(&cfg)?;
    let mut table = String::from("T\tmode\tpsnr\tssim\tfinal_l_all\tinvariants\n");
    writeln!(out, "T\tmode\tpsnr\tssim\tfinal_l_all\tinvariants")?;
    for &t in ts {
        let mut run = cfg.clone();
        run.train.timesteps = t;
        run.out_dir = cfg.out_dir.join(format!("t{t}"));
        let run = run.resolve()?;
        let outcome = train_into(&run)?;
        let (_, held) = run.load_samples()?;
        let report = eval::evaluate(&outcome.checkpoint, &held, run.train.seed)?;
        check_pipeline(&outcome.checkpoint, &held, run.train.seed)?;
        let mode = match run.train.effective_mode() {
            Mode::V1NoDm => "v1",
            Mode::V2Traditional => "v2",
            Mode::V3Joint => "v3",
            Mode::V4JointNoise => "v4",
        };
        let row = format!(
            "{t}\t{mode}\t{:.6}\t{:.6}\t{:.6}\tok",
            report.mean_psnr(),
            report.mean_ssim(),
            outcome.losses.last().map_or(0.0, |l| l.l_all)
        );
        writeln!(out, "{row}")?;
        table.push_str(&row);
        table.push('\n');
    }
    fs::write(cfg.out_dir.join("sweep.tsv"), table)?;
    Ok(())
}
