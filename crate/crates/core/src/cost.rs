//! Parameter and multiply-accumulate accounting.
//!
//! Counts are analytic, derived from the same parameter specs and layer
//! shapes that build the networks. One Mult-Add is one multiply-accumulate;
//! biases, normalization and activations are free.

use autograd::{counter, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::cpen::{self, CpenVariant};
use crate::denoiser;
use crate::dirformer;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::nn::ParamSpec;
use crate::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Prior network on ground truth plus restorer.
    S1,
    /// Condition network, `T` denoiser calls and restorer.
    S2,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostRow {
    pub module: String,
    pub params: u64,
    pub mult_adds: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub variant: Variant,
    pub input_size: usize,
    pub steps: usize,
    pub rows: Vec<CostRow>,
    pub total_params: u64,
    pub mult_adds: u64,
}

impl CostReport {
    fn from_rows(variant: Variant, input_size: usize, steps: usize, rows: Vec<CostRow>) -> Self {
        Self {
            variant,
            input_size,
            steps,
            total_params: rows.iter().map(|r| r.params).sum(),
            mult_adds: rows.iter().map(|r| r.mult_adds).sum(),
            rows,
        }
    }

    /// `module  params  mult_adds` rows followed by a `total` row.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("module\tparams\tmult_adds\n");
        for r in &self.rows {
            s.push_str(&format!("{}\t{}\t{}\n", r.module, r.params, r.mult_adds));
        }
        s.push_str(&format!("total\t{}\t{}\n", self.total_params, self.mult_adds));
        s
    }
}

pub fn count_params(specs: &[ParamSpec]) -> u64 {
    specs.iter().map(|s| s.numel() as u64).sum()
}

/// Analytic cost of one `size x size` forward pass.
///
/// The stage-1 prior network needs the ground truth, so it is a training
/// oracle rather than part of the restoration path; its parameters are
/// listed but its Mult-Adds are not counted.
pub fn cost_report(model: &ModelConfig, variant: Variant, size: usize, steps: usize) -> Result<CostReport> {
    model.validate()?;
    if size == 0 || !size.is_multiple_of(8) {
        return Err(Error::Config(format!("input size {size} must be a positive multiple of 8")));
    }
    let dir = CostRow {
        module: "dirformer".into(),
        params: count_params(&dirformer::param_specs(&model.dirformer)),
        mult_adds: dirformer::mult_adds(&model.dirformer, size, size),
    };
    let rows = match variant {
        Variant::S1 => vec![
            CostRow {
                module: "cpen_s1".into(),
                params: count_params(&cpen::param_specs(&model.cpen, CpenVariant::S1)),
                mult_adds: 0,
            },
            dir,
        ],
        Variant::S2 => vec![
            CostRow {
                module: "cpen_s2".into(),
                params: count_params(&cpen::param_specs(&model.cpen, CpenVariant::S2)),
                mult_adds: cpen::mult_adds(&model.cpen, CpenVariant::S2, size, size),
            },
            CostRow {
                module: "denoiser".into(),
                params: count_params(&denoiser::param_specs(&model.denoiser)),
                mult_adds: steps as u64 * denoiser::mult_adds(&model.denoiser),
            },
            dir,
        ],
    };
    Ok(CostReport::from_rows(variant, size, steps, rows))
}

/// Mult-Adds recorded while actually running the counted modules once on a
/// `size x size` zero image with `params`.
pub fn measured_mult_adds(
    model: &ModelConfig,
    params: &ParamStore,
    variant: Variant,
    size: usize,
    steps: usize,
) -> Result<u64> {
    let tape = Tape::new();
    let b = params.bind(&tape, |_| false);
    let img = tape.constant(Tensor::zeros(&[1, model.cpen.image_channels, size, size]));
    let mask = model
        .uses_mask()
        .then(|| tape.constant(Tensor::zeros(&[1, 1, size, size])));
    let ipr = model.cpen.ipr_len();
    let (res, macs) = counter::measure(|| -> Result<()> {
        let z = match variant {
            Variant::S1 => tape.constant(Tensor::zeros(&[1, ipr])),
            Variant::S2 => {
                let d = cpen::cpen_s2_forward(&b, &model.cpen, img)?;
                let mut z = tape.constant(Tensor::zeros(&[1, ipr]));
                for t in (1..=steps).rev() {
                    z = denoiser::denoiser_forward(&b, &model.denoiser, z, t, steps, d);
                }
                z
            }
        };
        dirformer::dirformer_forward(&b, &model.dirformer, img, mask, z)?;
        Ok(())
    });
    res?;
    Ok(macs)
}
