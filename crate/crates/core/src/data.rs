//! Synthetic corpus, degradations, batching and image files.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use autograd::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};

/// Planar `[channels, height, width]` image with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), channels * height * width, "image buffer size");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, v: f64) -> Self {
        Self::new(channels, height, width, vec![v; channels * height * width])
    }

    pub fn from_fn(channels: usize, height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        (self.channels, self.height, self.width) == (other.channels, other.height, other.width)
    }

    pub fn clamp(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Image {
        Image::from_fn(self.channels, h, w, |c, y, x| self.at(c, y0 + y, x0 + x))
    }

    /// `[1, c, h, w]` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[1, self.channels, self.height, self.width], self.data.clone())
    }

    /// Image `index` of a `[n, c, h, w]` batch.
    pub fn from_batch(t: &Tensor, index: usize) -> Image {
        let (c, h, w) = (t.dim(1), t.dim(2), t.dim(3));
        let n = c * h * w;
        Image::new(c, h, w, t.data()[index * n..(index + 1) * n].to_vec())
    }

    pub fn stack(images: &[&Image]) -> Tensor {
        let first = images[0];
        let mut data = Vec::with_capacity(images.len() * first.data.len());
        for im in images {
            assert!(im.same_shape(first), "stacking images of different shapes");
            data.extend_from_slice(&im.data);
        }
        Tensor::new(&[images.len(), first.channels, first.height, first.width], data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    #[default]
    Inpainting,
    Sr,
    Deblur,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inpainting" => Ok(Task::Inpainting),
            "sr" => Ok(Task::Sr),
            "deblur" => Ok(Task::Deblur),
            _ => Err(Error::Config(format!("unknown task `{s}` (inpainting|sr|deblur)"))),
        }
    }
}

/// How a degraded image was made from its ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Degradation {
    Identity,
    Mask { seed: u64, coverage: [f64; 2] },
    Blur { seed: u64, kernel_len: usize, angle: f64 },
    Downsample { factor: usize },
}

impl Degradation {
    /// Re-applies the degradation to `gt`.
    pub fn apply(&self, gt: &Image) -> Result<ImagePair> {
        match *self {
            Degradation::Identity => Ok(ImagePair {
                gt: gt.clone(),
                lq: gt.clone(),
                mask: None,
                provenance: Degradation::Identity,
            }),
            Degradation::Mask { seed, coverage } => apply_mask(gt, seed, (coverage[0], coverage[1])),
            Degradation::Blur {
                seed,
                kernel_len,
                angle,
            } => apply_blur(gt, seed, kernel_len, angle),
            Degradation::Downsample { factor } => apply_downsample(gt, factor),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImagePair {
    pub gt: Image,
    pub lq: Image,
    /// One channel, 1 = missing.
    pub mask: Option<Image>,
    pub provenance: Degradation,
}

impl ImagePair {
    /// Model-ready sample: the degraded input is brought back to the
    /// ground-truth size when the degradation changed it.
    pub fn to_sample(&self) -> Sample {
        let input = if self.lq.same_shape(&self.gt) {
            self.lq.clone()
        } else {
            resize_bicubic(&self.lq, self.gt.height, self.gt.width)
        };
        Sample {
            gt: self.gt.clone(),
            input,
            mask: self.mask.clone(),
        }
    }
}

/// Aligned training triple, all at the same spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub gt: Image,
    pub input: Image,
    pub mask: Option<Image>,
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn smoothstep(e0: f64, e1: f64, x: f64) -> f64 {
    let t = ((x - e0) / (e1 - e0)).clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

fn random_colour(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

/// One procedural image: a gradient background, optional stripes,
/// soft-edged ellipses and low-frequency noise.
pub fn render_image(rng: &mut ChaCha8Rng, size: usize) -> Image {
    let c0 = random_colour(rng);
    let c1 = random_colour(rng);
    let theta = rng.gen_range(0.0..2.0 * PI);
    let stripes = rng.gen_bool(0.5).then(|| {
        (
            random_colour(rng),
            rng.gen_range(0.3..0.6),
            rng.gen_range(1.0..4.0),
            rng.gen_range(0.0..PI),
            rng.gen_range(0.0..2.0 * PI),
        )
    });
    let ellipses: Vec<_> = (0..rng.gen_range(1..=3))
        .map(|_| {
            (
                random_colour(rng),
                [rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85)],
                [rng.gen_range(0.1..0.35), rng.gen_range(0.1..0.35)],
                rng.gen_range(0.0..PI),
            )
        })
        .collect();
    let waves: Vec<_> = (0..4)
        .map(|_| {
            (
                rng.gen_range(0..3),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(-3.0..3.0),
                rng.gen_range(0.0..2.0 * PI),
                rng.gen_range(0.0..0.03),
            )
        })
        .collect();
    let edge = 1.0 / size as f64;
    let mut img = Image::filled(3, size, size, 0.0);
    for y in 0..size {
        for x in 0..size {
            let u = (x as f64 + 0.5) / size as f64;
            let v = (y as f64 + 0.5) / size as f64;
            let g = (0.5 + (u - 0.5) * theta.cos() + (v - 0.5) * theta.sin()).clamp(0.0, 1.0);
            let mut px = [0.0; 3];
            for c in 0..3 {
                px[c] = lerp(c0[c], c1[c], g);
            }
            if let Some((col, alpha, f, phi, phase)) = stripes {
                let s = 0.5 + 0.5 * (2.0 * PI * f * (u * phi.cos() + v * phi.sin()) + phase).sin();
                for c in 0..3 {
                    px[c] = lerp(px[c], col[c], alpha * s);
                }
            }
            for (col, centre, radii, rot) in &ellipses {
                let (dx, dy) = (u - centre[0], v - centre[1]);
                let (a, b) = (dx * rot.cos() + dy * rot.sin(), -dx * rot.sin() + dy * rot.cos());
                let r = ((a / radii[0]).powi(2) + (b / radii[1]).powi(2)).sqrt();
                let inside = 1.0 - smoothstep(1.0 - edge / radii[0].min(radii[1]), 1.0 + edge / radii[0].min(radii[1]), r);
                for c in 0..3 {
                    px[c] = lerp(px[c], col[c], inside);
                }
            }
            for (c, fx, fy, phase, amp) in &waves {
                px[*c] += amp * (2.0 * PI * (fx * u + fy * v) + phase).sin();
            }
            for c in 0..3 {
                img.set(c, y, x, px[c].clamp(0.0, 1.0));
            }
        }
    }
    img
}

/// `n` procedural RGB images of `size x size`; image `i` depends only on
/// `(seed, i)`.
pub fn gen_corpus(seed: u64, n: usize, size: usize) -> Result<Vec<Image>> {
    if size == 0 || !size.is_multiple_of(8) {
        return Err(Error::Data(format!("corpus size {size} must be a positive multiple of 8")));
    }
    Ok((0..n)
        .into_par_iter()
        .map(|i| render_image(&mut rng::stream(seed, Purpose::Corpus, i as u64), size))
        .collect())
}

fn coverage(mask: &[f64]) -> f64 {
    mask.iter().sum::<f64>() / mask.len() as f64
}

fn stamp_rect(mask: &mut [f64], size: (usize, usize), rng: &mut ChaCha8Rng) {
    let (h, w) = size;
    let rh = rng.gen_range(1..=(h / 4).max(1));
    let rw = rng.gen_range(1..=(w / 4).max(1));
    let y0 = rng.gen_range(0..=h - rh);
    let x0 = rng.gen_range(0..=w - rw);
    for y in y0..y0 + rh {
        for x in x0..x0 + rw {
            mask[y * w + x] = 1.0;
        }
    }
}

fn stamp_polyline(mask: &mut [f64], size: (usize, usize), rng: &mut ChaCha8Rng) {
    let (h, w) = size;
    let radius = rng.gen_range(0.5..=((h.min(w) as f64) / 16.0).max(0.75));
    let mut p = [rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64)];
    for _ in 0..rng.gen_range(1..=3) {
        let angle = rng.gen_range(0.0..2.0 * PI);
        let len = rng.gen_range(1.0..=(h.min(w) as f64 / 3.0).max(1.5));
        let q = [
            (p[0] + len * angle.cos()).clamp(0.0, w as f64 - 1.0),
            (p[1] + len * angle.sin()).clamp(0.0, h as f64 - 1.0),
        ];
        for y in 0..h {
            for x in 0..w {
                if seg_dist([x as f64, y as f64], p, q) <= radius {
                    mask[y * w + x] = 1.0;
                }
            }
        }
        p = q;
    }
}

fn seg_dist(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let l2 = dx * dx + dy * dy;
    let t = if l2 == 0.0 {
        0.0
    } else {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / l2).clamp(0.0, 1.0)
    };
    ((p[0] - a[0] - t * dx).powi(2) + (p[1] - a[1] - t * dy).powi(2)).sqrt()
}

const MASK_ATTEMPTS: usize = 2000;

/// Builds a mask of rectangles and thick polylines with coverage in
/// `[lo, hi]`, zeroes the masked pixels and records the mask.
pub fn apply_mask(img: &Image, seed: u64, coverage_band: (f64, f64)) -> Result<ImagePair> {
    let (lo, hi) = coverage_band;
    let provenance = Degradation::Mask {
        seed,
        coverage: [lo, hi],
    };
    let (h, w) = (img.height, img.width);
    let mut mask = vec![0.0; h * w];
    if hi == 0.0 && lo == 0.0 {
        return Ok(ImagePair {
            gt: img.clone(),
            lq: img.clone(),
            mask: Some(Image::new(1, h, w, mask)),
            provenance,
        });
    }
    if !(0.0..=0.9).contains(&lo) || !(lo < hi && hi <= 0.9) {
        return Err(Error::Data(format!("mask coverage band ({lo}, {hi}) outside 0 <= lo < hi <= 0.9")));
    }
    let mut rng = rng::stream(seed, Purpose::Degrade, 0);
    let mut attempts = 0;
    while coverage(&mask) < lo {
        attempts += 1;
        if attempts > MASK_ATTEMPTS {
            return Err(Error::Data(format!(
                "could not reach mask coverage ({lo}, {hi}) on {h}x{w} within {MASK_ATTEMPTS} strokes"
            )));
        }
        let mut next = mask.clone();
        if rng.gen_bool(0.5) {
            stamp_rect(&mut next, (h, w), &mut rng);
        } else {
            stamp_polyline(&mut next, (h, w), &mut rng);
        }
        if coverage(&next) <= hi {
            mask = next;
        }
    }
    let lq = Image::from_fn(img.channels, h, w, |c, y, x| img.at(c, y, x) * (1.0 - mask[y * w + x]));
    Ok(ImagePair {
        gt: img.clone(),
        lq,
        mask: Some(Image::new(1, h, w, mask)),
        provenance,
    })
}

/// Normalized linear motion kernel, `len x len`, point-symmetric.
pub fn motion_kernel(len: usize, angle: f64) -> Result<Vec<f64>> {
    if len == 0 || len.is_multiple_of(2) {
        return Err(Error::Data(format!("motion kernel length {len} must be odd")));
    }
    let r = (len / 2) as f64;
    let mut k = vec![0.0; len * len];
    // four samples per pixel along the line, none on a rounding boundary
    for i in 0..4 * len {
        let s = -r - 0.5 + (i as f64 + 0.5) / 4.0;
        let dx = (s * angle.cos()).round();
        let dy = (-s * angle.sin()).round();
        let (y, x) = ((r + dy) as usize, (r + dx) as usize);
        k[y * len + x] += 1.0;
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    Ok(k)
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut m = i.rem_euclid(period);
    if m >= n {
        m = period - m;
    }
    m as usize
}

/// Blurs with a linear motion kernel under reflect padding.
pub fn apply_blur(img: &Image, seed: u64, kernel_len: usize, angle: f64) -> Result<ImagePair> {
    let k = motion_kernel(kernel_len, angle)?;
    let r = (kernel_len / 2) as isize;
    let lq = Image::from_fn(img.channels, img.height, img.width, |c, y, x| {
        let mut acc = 0.0;
        for ky in 0..kernel_len {
            for kx in 0..kernel_len {
                let wgt = k[ky * kernel_len + kx];
                if wgt == 0.0 {
                    continue;
                }
                let sy = reflect(y as isize + r - ky as isize, img.height);
                let sx = reflect(x as isize + r - kx as isize, img.width);
                acc += wgt * img.at(c, sy, sx);
            }
        }
        acc
    })
    .clamp();
    Ok(ImagePair {
        gt: img.clone(),
        lq,
        mask: None,
        provenance: Degradation::Blur {
            seed,
            kernel_len,
            angle,
        },
    })
}

/// Catmull-Rom cubic (`a = -0.5`).
pub fn cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Taps of a 1-d antialiased bicubic resample from `n_in` to `n_out`
/// samples. Taps outside the signal are dropped and the rest renormalized.
fn resample_taps(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    let support = scale.max(1.0);
    (0..n_out)
        .map(|o| {
            let centre = (o as f64 + 0.5) * scale - 0.5;
            let lo = (centre - 2.0 * support).floor() as isize;
            let hi = (centre + 2.0 * support).ceil() as isize;
            let mut taps: Vec<(usize, f64)> = (lo..=hi)
                .filter(|&i| i >= 0 && (i as usize) < n_in)
                .map(|i| (i as usize, cubic((i as f64 - centre) / support)))
                .filter(|(_, w)| *w != 0.0)
                .collect();
            let total: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= total);
            taps
        })
        .collect()
}

/// Separable bicubic resize, clamped to `[0, 1]`.
pub fn resize_bicubic(img: &Image, height: usize, width: usize) -> Image {
    let ty = resample_taps(img.height, height);
    let tx = resample_taps(img.width, width);
    let rows = Image::from_fn(img.channels, img.height, width, |c, y, x| {
        tx[x].iter().map(|&(i, w)| w * img.at(c, y, i)).sum()
    });
    Image::from_fn(img.channels, height, width, |c, y, x| {
        ty[y].iter().map(|&(i, w)| w * rows.at(c, i, x)).sum()
    })
    .clamp()
}

pub fn apply_downsample(img: &Image, factor: usize) -> Result<ImagePair> {
    if factor == 0 || !img.height.is_multiple_of(factor) || !img.width.is_multiple_of(factor) {
        return Err(Error::Data(format!(
            "{}x{} image not divisible by downsample factor {factor}",
            img.height, img.width
        )));
    }
    Ok(ImagePair {
        gt: img.clone(),
        lq: resize_bicubic(img, img.height / factor, img.width / factor),
        mask: None,
        provenance: Degradation::Downsample { factor },
    })
}

/// Degradation settings per task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradeConfig {
    pub mask_coverage: [f64; 2],
    pub blur_kernel_len: usize,
    pub sr_factor: usize,
}

impl Default for DegradeConfig {
    fn default() -> Self {
        Self {
            mask_coverage: NARROW_MASKS,
            blur_kernel_len: 7,
            sr_factor: 4,
        }
    }
}

pub const NARROW_MASKS: [f64; 2] = [0.01, 0.10];
pub const WIDE_MASKS: [f64; 2] = [0.10, 0.40];

/// Degrades each image for `task`; sample `i` uses its own seed stream.
pub fn degrade_all(images: &[Image], task: Task, seed: u64, cfg: &DegradeConfig) -> Result<Vec<ImagePair>> {
    images
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let mut r = rng::stream(seed, Purpose::Degrade, i as u64 + 1);
            let sample_seed: u64 = r.gen();
            let d = match task {
                Task::Inpainting => Degradation::Mask {
                    seed: sample_seed,
                    coverage: cfg.mask_coverage,
                },
                Task::Deblur => Degradation::Blur {
                    seed: sample_seed,
                    kernel_len: cfg.blur_kernel_len,
                    angle: r.gen_range(0.0..PI),
                },
                Task::Sr => Degradation::Downsample { factor: cfg.sr_factor },
            };
            d.apply(img)
        })
        .collect()
}

/// One training batch, `[b, c, p, p]` tensors.
#[derive(Debug, Clone)]
pub struct Batch {
    pub gt: Tensor,
    pub input: Tensor,
    pub mask: Option<Tensor>,
}

impl Batch {
    pub fn from_samples(samples: &[&Sample]) -> Batch {
        let gt: Vec<&Image> = samples.iter().map(|s| &s.gt).collect();
        let input: Vec<&Image> = samples.iter().map(|s| &s.input).collect();
        let mask = samples
            .iter()
            .map(|s| s.mask.as_ref())
            .collect::<Option<Vec<&Image>>>()
            .map(|m| Image::stack(&m));
        Batch {
            gt: Image::stack(&gt),
            input: Image::stack(&input),
            mask,
        }
    }

    pub fn len(&self) -> usize {
        self.gt.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Endless stream of shuffled, cropped batches.
///
/// Each epoch is a fresh permutation of the dataset; a batch larger than the
/// dataset simply spans epochs. Crop offsets are multiples of 8.
pub struct BatchIter<'a> {
    samples: &'a [Sample],
    batch_size: usize,
    patch: usize,
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
}

impl<'a> BatchIter<'a> {
    pub fn new(samples: &'a [Sample], batch_size: usize, patch: usize, seed: u64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("empty dataset".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if patch == 0 || !patch.is_multiple_of(8) {
            return Err(Error::Config(format!("patch size {patch} must be a positive multiple of 8")));
        }
        for s in samples {
            if s.gt.height < patch || s.gt.width < patch {
                return Err(Error::Data(format!(
                    "patch {patch} larger than {}x{} image",
                    s.gt.height, s.gt.width
                )));
            }
        }
        Ok(Self {
            samples,
            batch_size,
            patch,
            rng: rng::stream(seed, Purpose::Data, 0),
            order: Vec::new(),
            pos: 0,
        })
    }

    fn next_index(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.order = (0..self.samples.len()).collect();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }

    fn offset(&mut self, extent: usize) -> usize {
        let slots = (extent - self.patch) / 8;
        8 * self.rng.gen_range(0..=slots)
    }

    pub fn next_batch(&mut self) -> Batch {
        let p = self.patch;
        let crops: Vec<Sample> = (0..self.batch_size)
            .map(|_| {
                let s = &self.samples[self.next_index()];
                let y0 = self.offset(s.gt.height);
                let x0 = self.offset(s.gt.width);
                Sample {
                    gt: s.gt.crop(y0, x0, p, p),
                    input: s.input.crop(y0, x0, p, p),
                    mask: s.mask.as_ref().map(|m| m.crop(y0, x0, p, p)),
                }
            })
            .collect();
        Batch::from_samples(&crops.iter().collect::<Vec<_>>())
    }
}

impl Iterator for BatchIter<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        Some(self.next_batch())
    }
}

/// Reads an 8-bit PNG or PPM as RGB (`channels = 3`) or grey (`channels = 1`).
pub fn load_image(path: &Path, channels: usize) -> Result<Image> {
    let dynimg = image::open(path)?;
    Ok(match channels {
        1 => {
            let g = dynimg.to_luma8();
            let (w, h) = g.dimensions();
            Image::new(1, h as usize, w as usize, g.pixels().map(|p| p[0] as f64 / 255.0).collect())
        }
        _ => {
            let rgb = dynimg.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            Image::from_fn(3, h, w, |c, y, x| rgb.get_pixel(x as u32, y as u32)[c] as f64 / 255.0)
        }
    })
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Writes an 8-bit PNG, or binary PPM for a `.ppm` extension.
pub fn save_image(path: &Path, img: &Image) -> Result<()> {
    let (w, h) = (img.width as u32, img.height as u32);
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some("ppm") | Some("pnm") => image::ImageFormat::Pnm,
        _ => image::ImageFormat::Png,
    };
    if img.channels == 1 {
        let buf = image::GrayImage::from_fn(w, h, |x, y| image::Luma([to_u8(img.at(0, y as usize, x as usize))]));
        if format == image::ImageFormat::Pnm {
            return Ok(image::DynamicImage::ImageLuma8(buf).to_rgb8().save_with_format(path, format)?);
        }
        return Ok(buf.save_with_format(path, format)?);
    }
    let buf = image::RgbImage::from_fn(w, h, |x, y| {
        let (x, y) = (x as usize, y as usize);
        image::Rgb([to_u8(img.at(0, y, x)), to_u8(img.at(1, y, x)), to_u8(img.at(2, y, x))])
    });
    Ok(buf.save_with_format(path, format)?)
}

/// Every PNG/PPM in `dir` in file-name order, as RGB.
pub fn load_folder(dir: &Path) -> Result<Vec<Image>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                Some("png") | Some("ppm")
            )
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::Data(format!("no PNG/PPM images in {}", dir.display())));
    }
    paths.iter().map(|p| load_image(p, 3)).collect()
}

pub const INDEX_FILE: &str = "index.tsv";

/// Writes `gt_NNNN.png`, `lq_NNNN.png` (and `mask_NNNN.png`) per pair plus an
/// index of `file, seed, degradation` rows.
pub fn write_corpus(dir: &Path, pairs: &[ImagePair], seed: u64) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut index = fs::File::create(dir.join(INDEX_FILE))?;
    writeln!(index, "file\tseed\tdegradation")?;
    for (i, p) in pairs.iter().enumerate() {
        let name = format!("gt_{i:04}.png");
        save_image(&dir.join(&name), &p.gt)?;
        save_image(&dir.join(format!("lq_{i:04}.png")), &p.lq)?;
        if let Some(m) = &p.mask {
            save_image(&dir.join(format!("mask_{i:04}.png")), m)?;
        }
        writeln!(index, "{name}\t{seed}\t{}", serde_json::to_string(&p.provenance)?)?;
    }
    Ok(())
}

/// Reads an index written by [`write_corpus`] and regenerates every pair
/// from its ground truth and recorded degradation.
pub fn read_corpus(dir: &Path) -> Result<Vec<ImagePair>> {
    let text = fs::read_to_string(dir.join(INDEX_FILE))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let cols: Vec<&str> = line.splitn(3, '\t').collect();
            if cols.len() != 3 {
                return Err(Error::Data(format!("malformed index row `{line}`")));
            }
            let gt = load_image(&dir.join(cols[0]), 3)?;
            let d: Degradation = serde_json::from_str(cols[2])?;
            d.apply(&gt)
        })
        .collect()
}
