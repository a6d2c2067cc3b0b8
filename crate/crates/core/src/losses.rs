//! Training objectives on images and prior vectors.
//!
//! Plain functions return `f64`; the `*_var` versions build the same value on
//! a tape. `|x|` has subgradient 0 at `x = 0`.

use autograd::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub l_rec: f64,
    pub l_diff: f64,
    pub l_all: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub l_kl: Option<f64>,
}

impl LossReport {
    pub fn joint(l_rec: f64, l_diff: f64) -> Self {
        Self {
            l_rec,
            l_diff,
            l_all: l_rec + l_diff,
            ..Self::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.l_rec, self.l_diff, self.l_all].iter().all(|v| v.is_finite())
            && self.l2.is_none_or(f64::is_finite)
            && self.l_kl.is_none_or(f64::is_finite)
    }
}

fn same_len(a: usize, b: usize) -> Result<()> {
    if a == b && a > 0 {
        Ok(())
    } else {
        Err(shape_err(format!("loss operands have lengths {a} and {b}")))
    }
}

/// Mean absolute error between restored and reference images.
pub fn l_rec(restored: &Tensor, gt: &Tensor) -> Result<f64> {
    if restored.shape() != gt.shape() {
        return Err(shape_err(format!("images {:?} and {:?}", restored.shape(), gt.shape())));
    }
    l_diff(restored.data(), gt.data())
}

/// Mean absolute difference of two prior vectors.
pub fn l_diff(z_hat: &[f64], z: &[f64]) -> Result<f64> {
    same_len(z_hat.len(), z.len())?;
    Ok(z_hat.iter().zip(z).map(|(a, b)| (a - b).abs()).sum::<f64>() / z.len() as f64)
}

/// Mean squared difference.
pub fn l2(z_hat: &[f64], z: &[f64]) -> Result<f64> {
    same_len(z_hat.len(), z.len())?;
    Ok(z_hat.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / z.len() as f64)
}

fn log_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

/// `KL(softmax(z) ‖ softmax(z_hat))`, natural log.
pub fn l_kl(z_hat: &[f64], z: &[f64]) -> Result<f64> {
    same_len(z_hat.len(), z.len())?;
    let lp = log_softmax(z);
    let lq = log_softmax(z_hat);
    Ok(lp.iter().zip(&lq).map(|(p, q)| p.exp() * (p - q)).sum())
}

pub fn l_rec_var<'t>(restored: Var<'t>, gt: Var<'t>) -> Var<'t> {
    restored.sub(gt).mean_abs()
}

pub fn l_diff_var<'t>(z_hat: Var<'t>, z: Var<'t>) -> Var<'t> {
    z_hat.sub(z).mean_abs()
}

pub fn l2_var<'t>(z_hat: Var<'t>, z: Var<'t>) -> Var<'t> {
    z_hat.sub(z).mean_square()
}

/// Row-wise KL on `[n, len]` batches, averaged over rows.
pub fn l_kl_var<'t>(z_hat: Var<'t>, z: Var<'t>) -> Var<'t> {
    let rows = z.shape()[0] as f64;
    let lp = z.log_softmax();
    let lq = z_hat.log_softmax();
    lp.exp().mul(lp.sub(lq)).sum().scale(1.0 / rows)
}
