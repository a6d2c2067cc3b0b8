//! Compact prior extraction networks.
//!
//! Both variants share one layout: pixel-unshuffle, a 3x3 stem, residual
//! blocks, two stride-2 convs widening to `4C'`, global average pooling and
//! a two-layer linear head. The stage-1 variant sees ground truth and the
//! degraded input concatenated; the stage-2 variant sees the degraded input
//! only, so only the stem's input width differs.

use autograd::{kernels, Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::nn::{self, SpecBuilder, LEAKY_SLOPE};
use crate::params::Bound;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CpenConfig {
    /// Channel base `C'`; the prior vector has `4·C'` entries.
    pub c_prime: usize,
    pub unshuffle_factor: usize,
    pub num_res_blocks: usize,
    /// Colour channels of one image (3 for RGB).
    pub image_channels: usize,
}

impl Default for CpenConfig {
    fn default() -> Self {
        Self {
            c_prime: 64,
            unshuffle_factor: 4,
            num_res_blocks: 4,
            image_channels: 3,
        }
    }
}

impl CpenConfig {
    pub fn ipr_len(&self) -> usize {
        4 * self.c_prime
    }

    pub fn in_channels_s2(&self) -> usize {
        self.image_channels * self.unshuffle_factor * self.unshuffle_factor
    }

    pub fn in_channels_s1(&self) -> usize {
        2 * self.in_channels_s2()
    }

    pub fn in_channels(&self, variant: CpenVariant) -> usize {
        match variant {
            CpenVariant::S1 => self.in_channels_s1(),
            CpenVariant::S2 => self.in_channels_s2(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CpenVariant {
    S1,
    S2,
}

impl CpenVariant {
    pub fn prefix(self) -> &'static str {
        match self {
            CpenVariant::S1 => "cpen_s1",
            CpenVariant::S2 => "cpen_s2",
        }
    }
}

/// The conditioning vector produced from the degraded input alone.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionVector {
    pub values: Vec<f64>,
}

/// Name of the only layer whose shape differs between the two variants.
pub const STEM: &str = "stem";

pub fn param_specs(cfg: &CpenConfig, variant: CpenVariant) -> Vec<crate::nn::ParamSpec> {
    let c = cfg.c_prime;
    let mut b = SpecBuilder::new(variant.prefix());
    b.conv(STEM, cfg.in_channels(variant), c, 3, 1);
    for i in 0..cfg.num_res_blocks {
        b.scope(format!("res{i}"), |b| {
            b.conv("conv1", c, c, 3, 1);
            b.conv("conv2", c, c, 3, 1);
        });
    }
    b.conv("down1", c, 2 * c, 3, 1);
    b.conv("down2", 2 * c, 4 * c, 3, 1);
    b.linear("head1", 4 * c, 4 * c);
    b.linear("head2", 4 * c, 4 * c);
    b.finish()
}

/// Space-to-depth on a `[n, c, h, w]` batch with dimension checks.
pub fn pixel_unshuffle(img: &Tensor, r: usize) -> Result<Tensor> {
    if img.rank() != 4 {
        return Err(shape_err(format!("pixel_unshuffle expects [n,c,h,w], got {:?}", img.shape())));
    }
    if r == 0 || !img.dim(2).is_multiple_of(r) || !img.dim(3).is_multiple_of(r) {
        return Err(shape_err(format!(
            "spatial size {}x{} not divisible by unshuffle factor {r}",
            img.dim(2),
            img.dim(3)
        )));
    }
    Ok(kernels::pixel_unshuffle(img, r))
}

/// Runs the shared trunk on an already concatenated `[n, ch, h, w]` input.
fn trunk<'t>(b: &Bound<'t>, cfg: &CpenConfig, variant: CpenVariant, x: Var<'t>) -> Var<'t> {
    let p = variant.prefix();
    let x = x.pixel_unshuffle(cfg.unshuffle_factor);
    let mut h = nn::conv(b, &format!("{p}.{STEM}"), x, 1, 1).leaky_relu(LEAKY_SLOPE);
    for i in 0..cfg.num_res_blocks {
        let r = nn::conv(b, &format!("{p}.res{i}.conv1"), h, 1, 1).leaky_relu(LEAKY_SLOPE);
        let r = nn::conv(b, &format!("{p}.res{i}.conv2"), r, 1, 1);
        h = h.add(r);
    }
    let h = nn::conv(b, &format!("{p}.down1"), h, 2, 1).leaky_relu(LEAKY_SLOPE);
    let h = nn::conv(b, &format!("{p}.down2"), h, 2, 1).leaky_relu(LEAKY_SLOPE);
    let v = h.mean_spatial();
    let v = nn::linear(b, &format!("{p}.head1"), v).leaky_relu(LEAKY_SLOPE);
    nn::linear(b, &format!("{p}.head2"), v)
}

fn check_input(cfg: &CpenConfig, x: &Tensor, channels: usize) -> Result<()> {
    if x.rank() != 4 || x.dim(1) != channels {
        return Err(shape_err(format!(
            "expected [n, {channels}, h, w] image batch, got {:?}",
            x.shape()
        )));
    }
    let r = cfg.unshuffle_factor;
    if !x.dim(2).is_multiple_of(r) || !x.dim(3).is_multiple_of(r) {
        return Err(shape_err(format!(
            "image {}x{} not divisible by unshuffle factor {r}",
            x.dim(2),
            x.dim(3)
        )));
    }
    Ok(())
}

/// Stage-1 prior `Z` from ground truth and degraded RGB batches; `[n, 4C']`.
pub fn cpen_s1_forward<'t>(b: &Bound<'t>, cfg: &CpenConfig, gt: Var<'t>, lq: Var<'t>) -> Result<Var<'t>> {
    check_input(cfg, &gt.value(), cfg.image_channels)?;
    check_input(cfg, &lq.value(), cfg.image_channels)?;
    if gt.shape() != lq.shape() {
        return Err(shape_err(format!(
            "ground truth {:?} and degraded input {:?} differ",
            gt.shape(),
            lq.shape()
        )));
    }
    Ok(trunk(b, cfg, CpenVariant::S1, Var::concat(&[gt, lq])))
}

/// Stage-2 condition `D` from the degraded RGB batch; `[n, 4C']`.
pub fn cpen_s2_forward<'t>(b: &Bound<'t>, cfg: &CpenConfig, lq: Var<'t>) -> Result<Var<'t>> {
    check_input(cfg, &lq.value(), cfg.image_channels)?;
    Ok(trunk(b, cfg, CpenVariant::S2, lq))
}

/// Analytic multiply-accumulates for one image of size `h x w`.
pub fn mult_adds(cfg: &CpenConfig, variant: CpenVariant, h: usize, w: usize) -> u64 {
    let c = cfg.c_prime;
    let (h0, w0) = (h / cfg.unshuffle_factor, w / cfg.unshuffle_factor);
    let mut macs = nn::conv_macs(cfg.in_channels(variant), c, 3, 1, h0, w0);
    macs += cfg.num_res_blocks as u64 * 2 * nn::conv_macs(c, c, 3, 1, h0, w0);
    let (h1, w1) = (nn::down2(h0), nn::down2(w0));
    macs += nn::conv_macs(c, 2 * c, 3, 1, h1, w1);
    let (h2, w2) = (nn::down2(h1), nn::down2(w1));
    macs += nn::conv_macs(2 * c, 4 * c, 3, 1, h2, w2);
    macs + 2 * nn::linear_macs(4 * c, 4 * c)
}
