//! Forward and backward kernels on plain tensors.
//!
//! Every kernel that performs multiply-accumulates reports its nominal count
//! to [`crate::counter`], including taps that land in zero padding.

use crate::counter;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dParams {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dParams {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

pub fn conv_out_size(size: usize, kernel: usize, p: Conv2dParams) -> usize {
    assert!(
        size + 2 * p.padding >= kernel,
        "kernel {kernel} larger than padded input {size}"
    );
    (size + 2 * p.padding - kernel) / p.stride + 1
}

/// Output-index range `[lo, hi)` whose input index `o*stride + k - pad` is in bounds.
#[inline]
fn valid_range(out_len: usize, in_len: usize, k: usize, p: Conv2dParams) -> (usize, usize) {
    let s = p.stride as isize;
    let off = k as isize - p.padding as isize;
    // need 0 <= o*s + off < in_len
    let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
    let hi_num = in_len as isize - off;
    let hi = if hi_num <= 0 { 0 } else { (hi_num + s - 1) / s };
    let lo = lo.max(0) as usize;
    let hi = (hi.max(0) as usize).min(out_len);
    (lo, hi.max(lo))
}

pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>, p: Conv2dParams) -> Tensor {
    let [n, cin, h, wd] = dims4(x);
    let [cout, cig, kh, kw] = dims4(w);
    assert_eq!(cin % p.groups, 0, "input channels {cin} not divisible by groups");
    assert_eq!(cout % p.groups, 0, "output channels {cout} not divisible by groups");
    assert_eq!(cig, cin / p.groups, "weight expects {cig} input channels per group");
    if let Some(b) = b {
        assert_eq!(b.shape(), &[cout], "bias shape");
    }
    let ho = conv_out_size(h, kh, p);
    let wo = conv_out_size(wd, kw, p);
    let cog = cout / p.groups;
    counter::add((n * cout * cig * kh * kw * ho * wo) as u64);

    let xs = x.data();
    let ws = w.data();
    let mut out = vec![0.0; n * cout * ho * wo];
    for bi in 0..n {
        for oc in 0..cout {
            let g = oc / cog;
            let plane = &mut out[(bi * cout + oc) * ho * wo..(bi * cout + oc + 1) * ho * wo];
            if let Some(b) = b {
                plane.fill(b.data()[oc]);
            }
            for icl in 0..cig {
                let ic = g * cig + icl;
                let xin = &xs[(bi * cin + ic) * h * wd..(bi * cin + ic + 1) * h * wd];
                for ky in 0..kh {
                    let (oy0, oy1) = valid_range(ho, h, ky, p);
                    for kx in 0..kw {
                        let wv = ws[((oc * cig + icl) * kh + ky) * kw + kx];
                        if wv == 0.0 {
                            continue;
                        }
                        let (ox0, ox1) = valid_range(wo, wd, kx, p);
                        for oy in oy0..oy1 {
                            let iy = oy * p.stride + ky - p.padding;
                            let row_in = &xin[iy * wd..(iy + 1) * wd];
                            let row_out = &mut plane[oy * wo..(oy + 1) * wo];
                            if p.stride == 1 {
                                let shift = kx as isize - p.padding as isize;
                                let src = &row_in[(ox0 as isize + shift) as usize
                                    ..(ox1 as isize + shift) as usize];
                                for (o, &v) in row_out[ox0..ox1].iter_mut().zip(src) {
                                    *o += wv * v;
                                }
                            } else {
                                for ox in ox0..ox1 {
                                    let ix = ox * p.stride + kx - p.padding;
                                    row_out[ox] += wv * row_in[ix];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[n, cout, ho, wo], out)
}

/// Gradients of [`conv2d`] with respect to input, weight and bias.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    p: Conv2dParams,
    need: [bool; 3],
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let [n, cin, h, wd] = dims4(x);
    let [cout, cig, kh, kw] = dims4(w);
    let [_, _, ho, wo] = dims4(dy);
    let cog = cout / p.groups;
    let xs = x.data();
    let ws = w.data();
    let dys = dy.data();
    let mut dx = need[0].then(|| vec![0.0; x.len()]);
    let mut dw = need[1].then(|| vec![0.0; w.len()]);
    let db = need[2].then(|| {
        let mut db = vec![0.0; cout];
        for bi in 0..n {
            for (oc, d) in db.iter_mut().enumerate() {
                *d += dys[(bi * cout + oc) * ho * wo..(bi * cout + oc + 1) * ho * wo]
                    .iter()
                    .sum::<f64>();
            }
        }
        Tensor::new(&[cout], db)
    });

    if dx.is_some() || dw.is_some() {
        for bi in 0..n {
            for oc in 0..cout {
                let g = oc / cog;
                let gplane = &dys[(bi * cout + oc) * ho * wo..(bi * cout + oc + 1) * ho * wo];
                for icl in 0..cig {
                    let ic = g * cig + icl;
                    let base = (bi * cin + ic) * h * wd;
                    for ky in 0..kh {
                        let (oy0, oy1) = valid_range(ho, h, ky, p);
                        for kx in 0..kw {
                            let widx = ((oc * cig + icl) * kh + ky) * kw + kx;
                            let wv = ws[widx];
                            let (ox0, ox1) = valid_range(wo, wd, kx, p);
                            let mut acc = 0.0;
                            for oy in oy0..oy1 {
                                let iy = oy * p.stride + ky - p.padding;
                                let grow = &gplane[oy * wo..(oy + 1) * wo];
                                for ox in ox0..ox1 {
                                    let ix = ox * p.stride + kx - p.padding;
                                    let gv = grow[ox];
                                    if let Some(dx) = dx.as_mut() {
                                        dx[base + iy * wd + ix] += wv * gv;
                                    }
                                    acc += gv * xs[base + iy * wd + ix];
                                }
                            }
                            if let Some(dw) = dw.as_mut() {
                                dw[widx] += acc;
                            }
                        }
                    }
                }
            }
        }
    }
    (
        dx.map(|d| Tensor::new(x.shape(), d)),
        dw.map(|d| Tensor::new(w.shape(), d)),
        db,
    )
}

/// `y[b, o] = Σ_i x[b, i] w[o, i] + bias[o]`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
    let [n, fin] = dims2(x);
    let [fout, win] = dims2(w);
    assert_eq!(fin, win, "linear expects {win} inputs, got {fin}");
    counter::add((n * fin * fout) as u64);
    let mut out = vec![0.0; n * fout];
    for bi in 0..n {
        let xr = &x.data()[bi * fin..(bi + 1) * fin];
        for o in 0..fout {
            let wr = &w.data()[o * fin..(o + 1) * fin];
            let mut acc = b.map_or(0.0, |b| b.data()[o]);
            for (a, c) in xr.iter().zip(wr) {
                acc += a * c;
            }
            out[bi * fout + o] = acc;
        }
    }
    Tensor::new(&[n, fout], out)
}

pub fn linear_backward(
    x: &Tensor,
    w: &Tensor,
    dy: &Tensor,
    need: [bool; 3],
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let [n, fin] = dims2(x);
    let [fout, _] = dims2(w);
    let dys = dy.data();
    let dx = need[0].then(|| {
        let mut dx = vec![0.0; n * fin];
        for bi in 0..n {
            for o in 0..fout {
                let g = dys[bi * fout + o];
                if g == 0.0 {
                    continue;
                }
                let wr = &w.data()[o * fin..(o + 1) * fin];
                for (d, wv) in dx[bi * fin..(bi + 1) * fin].iter_mut().zip(wr) {
                    *d += g * wv;
                }
            }
        }
        Tensor::new(&[n, fin], dx)
    });
    let dw = need[1].then(|| {
        let mut dw = vec![0.0; fout * fin];
        for bi in 0..n {
            let xr = &x.data()[bi * fin..(bi + 1) * fin];
            for o in 0..fout {
                let g = dys[bi * fout + o];
                for (d, xv) in dw[o * fin..(o + 1) * fin].iter_mut().zip(xr) {
                    *d += g * xv;
                }
            }
        }
        Tensor::new(&[fout, fin], dw)
    });
    let db = need[2].then(|| {
        let mut db = vec![0.0; fout];
        for bi in 0..n {
            for (o, d) in db.iter_mut().enumerate() {
                *d += dys[bi * fout + o];
            }
        }
        Tensor::new(&[fout], db)
    });
    (dx, dw, db)
}

/// Batched matrix product `[g, m, k] x [g, k, n]`, or `[g, m, k] x [g, n, k]^T`
/// when `trans_b` is set.
pub fn bmm(a: &Tensor, b: &Tensor, trans_b: bool) -> Tensor {
    let [g, m, k] = dims3(a);
    let [gb, b1, b2] = dims3(b);
    assert_eq!(g, gb, "bmm batch mismatch");
    let (kb, nn) = if trans_b { (b2, b1) } else { (b1, b2) };
    assert_eq!(k, kb, "bmm inner dimension mismatch: {k} vs {kb}");
    counter::add((g * m * k * nn) as u64);
    let mut out = vec![0.0; g * m * nn];
    for gi in 0..g {
        let am = &a.data()[gi * m * k..(gi + 1) * m * k];
        let bm = &b.data()[gi * k * nn..(gi + 1) * k * nn];
        let om = &mut out[gi * m * nn..(gi + 1) * m * nn];
        for i in 0..m {
            let arow = &am[i * k..(i + 1) * k];
            let orow = &mut om[i * nn..(i + 1) * nn];
            if trans_b {
                for (j, o) in orow.iter_mut().enumerate() {
                    let brow = &bm[j * k..(j + 1) * k];
                    *o = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
                }
            } else {
                for (kk, &av) in arow.iter().enumerate() {
                    let brow = &bm[kk * nn..(kk + 1) * nn];
                    for (o, bv) in orow.iter_mut().zip(brow) {
                        *o += av * bv;
                    }
                }
            }
        }
    }
    Tensor::new(&[g, m, nn], out)
}

pub fn bmm_backward(
    a: &Tensor,
    b: &Tensor,
    dy: &Tensor,
    trans_b: bool,
    need: [bool; 2],
) -> (Option<Tensor>, Option<Tensor>) {
    let [g, m, k] = dims3(a);
    let nn = if trans_b { b.dim(1) } else { b.dim(2) };
    let ad = a.data();
    let bd = b.data();
    let gd = dy.data();
    let da = need[0].then(|| {
        // dA = dY · B^T  (or dY · B when B was transposed)
        let mut da = vec![0.0; a.len()];
        for gi in 0..g {
            for i in 0..m {
                for kk in 0..k {
                    let mut acc = 0.0;
                    for j in 0..nn {
                        let bv = if trans_b {
                            bd[gi * nn * k + j * k + kk]
                        } else {
                            bd[gi * k * nn + kk * nn + j]
                        };
                        acc += gd[gi * m * nn + i * nn + j] * bv;
                    }
                    da[gi * m * k + i * k + kk] = acc;
                }
            }
        }
        Tensor::new(a.shape(), da)
    });
    let db = need[1].then(|| {
        // dB = A^T · dY  (or dY^T · A when transposed)
        let mut db = vec![0.0; b.len()];
        for gi in 0..g {
            for i in 0..m {
                for kk in 0..k {
                    let av = ad[gi * m * k + i * k + kk];
                    for j in 0..nn {
                        let gv = gd[gi * m * nn + i * nn + j];
                        if trans_b {
                            db[gi * nn * k + j * k + kk] += av * gv;
                        } else {
                            db[gi * k * nn + kk * nn + j] += av * gv;
                        }
                    }
                }
            }
        }
        Tensor::new(b.shape(), db)
    });
    (da, db)
}

/// Softmax over the last axis.
pub fn softmax_last(x: &Tensor) -> Tensor {
    let d = *x.shape().last().expect("softmax on rank-0 tensor");
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            s += *v;
        }
        for v in row.iter_mut() {
            *v /= s;
        }
    }
    Tensor::new(x.shape(), out)
}

pub fn softmax_last_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let d = *y.shape().last().unwrap();
    let mut dx = vec![0.0; y.len()];
    for ((yr, gr), dr) in y
        .data()
        .chunks(d)
        .zip(dy.data().chunks(d))
        .zip(dx.chunks_mut(d))
    {
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for ((o, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
            *o = yv * (gv - dot);
        }
    }
    Tensor::new(y.shape(), dx)
}

pub fn log_softmax_last(x: &Tensor) -> Tensor {
    let d = *x.shape().last().expect("log_softmax on rank-0 tensor");
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(d) {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Tensor::new(x.shape(), out)
}

pub fn log_softmax_last_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let d = *y.shape().last().unwrap();
    let mut dx = vec![0.0; y.len()];
    for ((yr, gr), dr) in y
        .data()
        .chunks(d)
        .zip(dy.data().chunks(d))
        .zip(dx.chunks_mut(d))
    {
        let gsum: f64 = gr.iter().sum();
        for ((o, &yv), &gv) in dr.iter_mut().zip(yr).zip(gr) {
            *o = gv - yv.exp() * gsum;
        }
    }
    Tensor::new(y.shape(), dx)
}

/// Per-position normalization over the channel axis of `[n, c, h, w]`
/// (or `[n, c]`). Returns the output and the per-position inverse std.
pub fn layer_norm_channels(x: &Tensor, eps: f64) -> (Tensor, Vec<f64>) {
    let n = x.dim(0);
    let c = x.dim(1);
    let sp: usize = x.shape()[2..].iter().product();
    let xs = x.data();
    let mut out = vec![0.0; x.len()];
    let mut rstd = vec![0.0; n * sp];
    for bi in 0..n {
        for p in 0..sp {
            let at = |ch: usize| (bi * c + ch) * sp + p;
            let mean = (0..c).map(|ch| xs[at(ch)]).sum::<f64>() / c as f64;
            let var = (0..c).map(|ch| (xs[at(ch)] - mean).powi(2)).sum::<f64>() / c as f64;
            let r = 1.0 / (var + eps).sqrt();
            rstd[bi * sp + p] = r;
            for ch in 0..c {
                out[at(ch)] = (xs[at(ch)] - mean) * r;
            }
        }
    }
    (Tensor::new(x.shape(), out), rstd)
}

pub fn layer_norm_channels_backward(y: &Tensor, rstd: &[f64], dy: &Tensor) -> Tensor {
    let n = y.dim(0);
    let c = y.dim(1);
    let sp: usize = y.shape()[2..].iter().product();
    let ys = y.data();
    let gs = dy.data();
    let mut dx = vec![0.0; y.len()];
    for bi in 0..n {
        for p in 0..sp {
            let at = |ch: usize| (bi * c + ch) * sp + p;
            let mg = (0..c).map(|ch| gs[at(ch)]).sum::<f64>() / c as f64;
            let mgy = (0..c).map(|ch| gs[at(ch)] * ys[at(ch)]).sum::<f64>() / c as f64;
            let r = rstd[bi * sp + p];
            for ch in 0..c {
                dx[at(ch)] = r * (gs[at(ch)] - mg - ys[at(ch)] * mgy);
            }
        }
    }
    Tensor::new(y.shape(), dx)
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;

pub fn gelu(v: f64) -> f64 {
    0.5 * v * (1.0 + libm::erf(v * INV_SQRT_2))
}

pub fn gelu_grad(v: f64) -> f64 {
    let pdf = (-0.5 * v * v).exp() / (2.0 * std::f64::consts::PI).sqrt();
    0.5 * (1.0 + libm::erf(v * INV_SQRT_2)) + v * pdf
}

/// Space-to-depth: `[n, c, h, w] -> [n, c*r*r, h/r, w/r]`, channel index
/// `c*r*r + dy*r + dx`.
pub fn pixel_unshuffle(x: &Tensor, r: usize) -> Tensor {
    let [n, c, h, w] = dims4(x);
    assert!(h % r == 0 && w % r == 0, "pixel_unshuffle: {h}x{w} not divisible by {r}");
    let (ho, wo) = (h / r, w / r);
    let mut out = vec![0.0; x.len()];
    for bi in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let oc = ch * r * r + (y % r) * r + (xx % r);
                    out[((bi * c * r * r + oc) * ho + y / r) * wo + xx / r] =
                        x.data()[((bi * c + ch) * h + y) * w + xx];
                }
            }
        }
    }
    Tensor::new(&[n, c * r * r, ho, wo], out)
}

/// Depth-to-space, the exact inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle(x: &Tensor, r: usize) -> Tensor {
    let [n, cr, ho, wo] = dims4(x);
    assert_eq!(cr % (r * r), 0, "pixel_shuffle: {cr} channels not divisible by {}", r * r);
    let c = cr / (r * r);
    let (h, w) = (ho * r, wo * r);
    let mut out = vec![0.0; x.len()];
    for bi in 0..n {
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    let ic = ch * r * r + (y % r) * r + (xx % r);
                    out[((bi * c + ch) * h + y) * w + xx] =
                        x.data()[((bi * cr + ic) * ho + y / r) * wo + xx / r];
                }
            }
        }
    }
    Tensor::new(&[n, c, h, w], out)
}

pub fn dims2(t: &Tensor) -> [usize; 2] {
    t.shape()
        .try_into()
        .unwrap_or_else(|_| panic!("expected rank-2 tensor, got {:?}", t.shape()))
}

pub fn dims3(t: &Tensor) -> [usize; 3] {
    t.shape()
        .try_into()
        .unwrap_or_else(|_| panic!("expected rank-3 tensor, got {:?}", t.shape()))
}

pub fn dims4(t: &Tensor) -> [usize; 4] {
    t.shape()
        .try_into()
        .unwrap_or_else(|_| panic!("expected rank-4 tensor, got {:?}", t.shape()))
}
