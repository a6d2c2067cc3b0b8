//! Prior-modulated restoration transformer.
//!
//! A 4-level Unet of dynamic transformer blocks. Every block is a
//! transposed-attention unit (channel-by-channel attention maps, linear in
//! the number of pixels) followed by a gated feed-forward unit; both start by
//! layer-normalizing their input and modulating it with a per-channel scale
//! and shift computed from the prior vector `Z`.
//!
//! Layout per level `l` (channels `C_l`):
//!
//! ```text
//! embed ─ enc1 ─ down1 ─ enc2 ─ down2 ─ enc3 ─ down3 ─ latent
//!          │               │               │             │
//!         dec1 ─ fuse1 ─ up1 ─ dec2 ─ fuse2 ─ up2 ─ dec3 ─ fuse3 ─ up3
//!          │
//!        output ─ (+ degraded input) ─ restored image
//! ```

use autograd::Var;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{self, Init, SpecBuilder};
use crate::params::Bound;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirformerConfig {
    pub channels: [usize; 4],
    pub heads: [usize; 4],
    pub blocks: [usize; 4],
    /// Hidden width of the gated feed-forward unit relative to its input.
    pub ffn_expansion: f64,
    pub gamma_init: f64,
    /// Channels fed to the embedding conv (image plus optional mask).
    pub in_channels: usize,
    pub out_channels: usize,
    /// Length of the prior vector (`4·C'`).
    pub ipr_len: usize,
}

impl DirformerConfig {
    fn base(blocks: [usize; 4], in_channels: usize) -> Self {
        Self {
            channels: [48, 96, 192, 384],
            heads: [1, 2, 4, 8],
            blocks,
            ffn_expansion: 4.0,
            gamma_init: 1.0,
            in_channels,
            out_channels: 3,
            ipr_len: 256,
        }
    }

    /// RGB plus mask channel in, `[1, 1, 1, 9]` blocks.
    pub fn inpainting() -> Self {
        Self::base([1, 1, 1, 9], 4)
    }

    pub fn super_resolution() -> Self {
        Self::base([13, 1, 1, 1], 3)
    }

    pub fn deblurring() -> Self {
        Self::base([3, 5, 6, 6], 3)
    }

    pub fn hidden(&self, level: usize) -> usize {
        (self.channels[level] as f64 * self.ffn_expansion).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        for l in 0..4 {
            if self.channels[l] == 0 || self.heads[l] == 0 {
                return Err(Error::Config(format!("level {} has zero channels or heads", l + 1)));
            }
            if !self.channels[l].is_multiple_of(self.heads[l]) {
                return Err(Error::Config(format!(
                    "level {}: {} channels not divisible by {} heads",
                    l + 1,
                    self.channels[l],
                    self.heads[l]
                )));
            }
        }
        if self.ffn_expansion <= 0.0 || self.gamma_init == 0.0 {
            return Err(Error::Config("ffn_expansion must be > 0 and gamma_init nonzero".into()));
        }
        Ok(())
    }
}

pub const PREFIX: &str = "dirformer";

fn level_name(level: usize, decoder: bool) -> String {
    match (level, decoder) {
        (3, _) => "latent".to_string(),
        (l, false) => format!("enc{}", l + 1),
        (l, true) => format!("dec{}", l + 1),
    }
}

fn modulation_specs(b: &mut SpecBuilder, ipr: usize, c: usize) {
    b.linear_with_bias("scale", ipr, c, Init::Ones);
    b.linear_with_bias("shift", ipr, c, Init::Zeros);
}

fn block_specs(b: &mut SpecBuilder, cfg: &DirformerConfig, level: usize) {
    let c = cfg.channels[level];
    let hid = cfg.hidden(level);
    b.scope("attn", |b| {
        modulation_specs(b, cfg.ipr_len, c);
        for p in ["q", "k", "v"] {
            b.conv(&format!("{p}_pw"), c, c, 1, 1);
            b.conv(&format!("{p}_dw"), c, c, 3, c);
        }
        b.push("gamma", &[1], Init::Constant(cfg.gamma_init));
        b.conv("proj", c, c, 1, 1);
    });
    b.scope("ffn", |b| {
        modulation_specs(b, cfg.ipr_len, c);
        for p in ["gate", "value"] {
            b.conv(&format!("{p}_pw"), c, hid, 1, 1);
            b.conv(&format!("{p}_dw"), hid, hid, 3, hid);
        }
        b.conv_no_bias("out", hid, c, 1, 1);
    });
}

pub fn param_specs(cfg: &DirformerConfig) -> Vec<nn::ParamSpec> {
    let ch = cfg.channels;
    let mut b = SpecBuilder::new(PREFIX);
    b.conv("embed", cfg.in_channels, ch[0], 3, 1);
    for l in 0..4 {
        for i in 0..cfg.blocks[l] {
            b.scope(format!("{}.{i}", level_name(l, false)), |b| block_specs(b, cfg, l));
        }
        if l < 3 {
            b.conv(&format!("down{}", l + 1), ch[l], ch[l + 1], 3, 1);
        }
    }
    for l in (0..3).rev() {
        b.conv(&format!("up{}", l + 1), ch[l + 1], 4 * ch[l], 1, 1);
        b.conv(&format!("fuse{}", l + 1), 2 * ch[l], ch[l], 1, 1);
        for i in 0..cfg.blocks[l] {
            b.scope(format!("{}.{i}", level_name(l, true)), |b| block_specs(b, cfg, l));
        }
    }
    b.conv("output", ch[0], cfg.out_channels, 3, 1);
    b.finish()
}

/// `F' = (W¹Z) ⊙ Norm(F) + W²Z` with channel-wise layer norm.
pub fn modulate<'t>(b: &Bound<'t>, prefix: &str, f: Var<'t>, z: Var<'t>) -> Var<'t> {
    let scale = nn::linear(b, &format!("{prefix}.scale"), z);
    let shift = nn::linear(b, &format!("{prefix}.shift"), z);
    f.layer_norm_channels().channel_mul(scale).channel_add(shift)
}

fn pw_dw<'t>(b: &Bound<'t>, prefix: &str, name: &str, x: Var<'t>) -> Var<'t> {
    let y = nn::conv(b, &format!("{prefix}.{name}_pw"), x, 1, 1);
    let groups = y.value().dim(1);
    nn::conv(b, &format!("{prefix}.{name}_dw"), y, 1, groups)
}

/// Transposed attention. Returns the block output and the attention maps
/// `[n·heads, C/heads, C/heads]`; each row sums to one.
pub fn dmta_with_attention<'t>(
    b: &Bound<'t>,
    prefix: &str,
    f: Var<'t>,
    z: Var<'t>,
    heads: usize,
) -> (Var<'t>, Var<'t>) {
    let shape = f.shape();
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    assert_eq!(c % heads, 0, "{c} channels not divisible by {heads} heads");
    let d = c / heads;
    let fm = modulate(b, prefix, f, z);
    let split = |v: Var<'t>| v.reshape(&[n * heads, d, h * w]);
    let q = split(pw_dw(b, prefix, "q", fm));
    let k = split(pw_dw(b, prefix, "k", fm));
    let v = split(pw_dw(b, prefix, "v", fm));
    // logits[j, i] = <q_j, k_i> / γ, normalized over i (the axis mixed into v)
    let attn = q
        .bmm(k, true)
        .div_by_scalar(b.get(&format!("{prefix}.gamma")))
        .softmax();
    let mixed = attn.bmm(v, false).reshape(&[n, c, h, w]);
    let out = nn::conv(b, &format!("{prefix}.proj"), mixed, 1, 1).add(f);
    (out, attn)
}

pub fn dmta<'t>(b: &Bound<'t>, prefix: &str, f: Var<'t>, z: Var<'t>, heads: usize) -> Var<'t> {
    dmta_with_attention(b, prefix, f, z, heads).0
}

/// Gated feed-forward: `out(GELU(gate(F')) ⊙ value(F')) + F`.
pub fn dgfn<'t>(b: &Bound<'t>, prefix: &str, f: Var<'t>, z: Var<'t>) -> Var<'t> {
    let fm = modulate(b, prefix, f, z);
    let gate = pw_dw(b, prefix, "gate", fm).gelu();
    let value = pw_dw(b, prefix, "value", fm);
    nn::conv(b, &format!("{prefix}.out"), gate.mul(value), 1, 1).add(f)
}

/// One dynamic transformer block: attention unit then feed-forward unit.
pub fn block<'t>(b: &Bound<'t>, prefix: &str, f: Var<'t>, z: Var<'t>, heads: usize) -> Var<'t> {
    let f = dmta(b, &format!("{prefix}.attn"), f, z, heads);
    dgfn(b, &format!("{prefix}.ffn"), f, z)
}

fn run_level<'t>(b: &Bound<'t>, cfg: &DirformerConfig, level: usize, decoder: bool, mut f: Var<'t>, z: Var<'t>) -> Var<'t> {
    let name = level_name(level, decoder);
    for i in 0..cfg.blocks[level] {
        f = block(b, &format!("{PREFIX}.{name}.{i}"), f, z, cfg.heads[level]);
    }
    f
}

/// Restores a degraded batch.
///
/// `lq` is `[n, out_channels, h, w]`; `mask` (`[n, 1, h, w]`, 1 = missing)
/// is appended as an input channel and limits the predicted correction to
/// missing pixels. `z` is `[n, ipr_len]`.
pub fn dirformer_forward<'t>(
    b: &Bound<'t>,
    cfg: &DirformerConfig,
    lq: Var<'t>,
    mask: Option<Var<'t>>,
    z: Var<'t>,
) -> Result<Var<'t>> {
    let shape = lq.shape();
    if shape.len() != 4 || shape[1] != cfg.out_channels {
        return Err(shape_err(format!(
            "expected [n, {}, h, w] input, got {shape:?}",
            cfg.out_channels
        )));
    }
    let (n, h, w) = (shape[0], shape[2], shape[3]);
    if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
        return Err(shape_err(format!("spatial size {h}x{w} must be a positive multiple of 8")));
    }
    if z.shape() != [n, cfg.ipr_len] {
        return Err(shape_err(format!("prior shape {:?}, expected [{n}, {}]", z.shape(), cfg.ipr_len)));
    }
    let input = match mask {
        Some(m) => {
            if m.shape() != [n, 1, h, w] {
                return Err(shape_err(format!("mask shape {:?}, expected [{n}, 1, {h}, {w}]", m.shape())));
            }
            Var::concat(&[lq, m])
        }
        None => lq,
    };
    if input.shape()[1] != cfg.in_channels {
        return Err(shape_err(format!(
            "model expects {} input channels, got {}",
            cfg.in_channels,
            input.shape()[1]
        )));
    }

    let mut x = nn::conv(b, &format!("{PREFIX}.embed"), input, 1, 1);
    let mut skips = Vec::with_capacity(3);
    for l in 0..3 {
        x = run_level(b, cfg, l, false, x, z);
        skips.push(x);
        x = nn::conv(b, &format!("{PREFIX}.down{}", l + 1), x, 2, 1);
    }
    x = run_level(b, cfg, 3, false, x, z);
    for l in (0..3).rev() {
        let up = nn::conv(b, &format!("{PREFIX}.up{}", l + 1), x, 1, 1).pixel_shuffle(2);
        let cat = Var::concat(&[up, skips[l]]);
        x = nn::conv(b, &format!("{PREFIX}.fuse{}", l + 1), cat, 1, 1);
        x = run_level(b, cfg, l, true, x, z);
    }
    let residual = nn::conv(b, &format!("{PREFIX}.output"), x, 1, 1);
    let residual = match mask {
        Some(m) => {
            let parts = vec![m; cfg.out_channels];
            residual.mul(Var::concat(&parts))
        }
        None => residual,
    };
    Ok(lq.add(residual))
}

fn block_macs(cfg: &DirformerConfig, level: usize, pixels: u64) -> u64 {
    let c = cfg.channels[level] as u64;
    let hid = cfg.hidden(level) as u64;
    let heads = cfg.heads[level] as u64;
    let ipr = cfg.ipr_len as u64;
    let modulation = 2 * ipr * c;
    let attn = 3 * (c * c + 9 * c) * pixels + 2 * (c * c / heads) * pixels + c * c * pixels;
    let ffn = 2 * (c * hid + 9 * hid) * pixels + hid * c * pixels;
    2 * modulation + attn + ffn
}

/// Analytic multiply-accumulates for one `h x w` image.
pub fn mult_adds(cfg: &DirformerConfig, h: usize, w: usize) -> u64 {
    let ch = cfg.channels;
    let px = |l: usize| ((h >> l) * (w >> l)) as u64;
    let (h0, w0) = (h, w);
    let mut macs = nn::conv_macs(cfg.in_channels, ch[0], 3, 1, h0, w0);
    for l in 0..4 {
        let per_level = if l < 3 { 2 } else { 1 };
        macs += per_level * cfg.blocks[l] as u64 * block_macs(cfg, l, px(l));
    }
    for l in 0..3 {
        macs += nn::conv_macs(ch[l], ch[l + 1], 3, 1, h >> (l + 1), w >> (l + 1));
        macs += nn::conv_macs(ch[l + 1], 4 * ch[l], 1, 1, h >> (l + 1), w >> (l + 1));
        macs += nn::conv_macs(2 * ch[l], ch[l], 1, 1, h >> l, w >> l);
    }
    macs + nn::conv_macs(ch[0], cfg.out_channels, 3, 1, h0, w0)
}
