//! Held-out evaluation of checkpoints.

use std::fmt::Write as _;

use autograd::Tensor;

use crate::data::{Batch, Image, Sample};
use crate::error::Result;
use crate::metrics;
use crate::model::{self, PriorSource};
use crate::rng::{self, Purpose};
use crate::schedule::NoiseSchedule;
use crate::training::{Checkpoint, Mode, Stage};

const EVAL_BATCH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub psnr: f64,
    pub ssim: f64,
    /// Scores of the degraded input itself.
    pub baseline_psnr: f64,
    pub baseline_ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    fn mean(&self, f: impl Fn(&EvalRow) -> f64) -> f64 {
        self.rows.iter().map(f).sum::<f64>() / self.rows.len() as f64
    }

    pub fn mean_psnr(&self) -> f64 {
        self.mean(|r| r.psnr)
    }

    pub fn mean_ssim(&self) -> f64 {
        self.mean(|r| r.ssim)
    }

    pub fn baseline_psnr(&self) -> f64 {
        self.mean(|r| r.baseline_psnr)
    }

    pub fn baseline_ssim(&self) -> f64 {
        self.mean(|r| r.baseline_ssim)
    }

    /// Tab-separated table with a settings comment, a header, one row per
    /// image and a `mean` row.
    pub fn to_tsv(&self) -> String {
        let mut s = metrics::ssim_settings();
        s.push_str("\nimage\tpsnr\tssim\tbaseline_psnr\tbaseline_ssim\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = writeln!(s, "{i}\t{:.6}\t{:.6}\t{:.6}\t{:.6}", r.psnr, r.ssim, r.baseline_psnr, r.baseline_ssim);
        }
        let _ = writeln!(
            s,
            "mean\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
            self.mean_psnr(),
            self.mean_ssim(),
            self.baseline_psnr(),
            self.baseline_ssim()
        );
        s
    }
}

/// How a checkpoint's stage and mode translate into an inference prior.
pub fn prior_source(ckpt: &Checkpoint) -> Option<PriorSource> {
    match (ckpt.stage, ckpt.mode.unwrap_or_default()) {
        (Stage::S1, _) => None,
        (Stage::S2, Mode::V1NoDm) => Some(PriorSource::Condition),
        (Stage::S2, m) => Some(PriorSource::Sampled(m.noise_mode())),
    }
}

/// Restores every sample; stage-1 checkpoints see the ground truth.
pub fn restore_all(ckpt: &Checkpoint, schedule: Option<&NoiseSchedule>, samples: &[Sample], seed: u64) -> Result<Vec<Image>> {
    let model = &ckpt.config.model;
    let default_schedule;
    let schedule = match (schedule, &ckpt.schedule) {
        (Some(s), _) => s,
        (None, Some(s)) => s,
        (None, None) => {
            default_schedule = NoiseSchedule::default_four_step();
            &default_schedule
        }
    };
    let mut rng = rng::stream(seed, Purpose::Eval, 0);
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let batch = Batch::from_samples(&chunk.iter().collect::<Vec<_>>());
        let restored: Tensor = match prior_source(ckpt) {
            None => model::restore_s1(&ckpt.params, model, &batch.input, batch.mask.as_ref(), &batch.gt)?,
            Some(p) => model::restore_s2(
                &ckpt.params,
                model,
                schedule,
                &batch.input,
                batch.mask.as_ref(),
                p,
                &mut rng,
            )?,
        };
        out.extend((0..chunk.len()).map(|i| Image::from_batch(&restored, i)));
    }
    Ok(out)
}

pub fn score(restored: &[Image], samples: &[Sample]) -> Result<EvalReport> {
    let rows = restored
        .iter()
        .zip(samples)
        .map(|(r, s)| {
            Ok(EvalRow {
                psnr: metrics::psnr(r, &s.gt, 1.0)?,
                ssim: metrics::ssim(r, &s.gt)?,
                baseline_psnr: metrics::psnr(&s.input, &s.gt, 1.0)?,
                baseline_ssim: metrics::ssim(&s.input, &s.gt)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalReport { rows })
}

pub fn evaluate(ckpt: &Checkpoint, samples: &[Sample], seed: u64) -> Result<EvalReport> {
    score(&restore_all(ckpt, None, samples, seed)?, samples)
}
