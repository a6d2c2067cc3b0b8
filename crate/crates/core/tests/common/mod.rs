#![allow(dead_code)]

use autograd::gradcheck::{self, GradCheck};
use autograd::{Tape, Tensor, Var};
use diffir::params::{Bound, ParamStore};
use diffir::cpen::CpenConfig;
use diffir::data::{self, Sample, Task};
use diffir::denoiser::DenoiserConfig;
use diffir::dirformer::DirformerConfig;
use diffir::model::ModelConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Widths small enough for finite differences: 8 channels everywhere,
/// prior length 32.
pub fn toy_model(task: Task) -> ModelConfig {
    let cpen = CpenConfig {
        c_prime: 8,
        unshuffle_factor: 4,
        num_res_blocks: 1,
        image_channels: 3,
    };
    ModelConfig {
        dirformer: DirformerConfig {
            channels: [8, 8, 8, 8],
            heads: [1, 2, 2, 4],
            blocks: [1, 1, 1, 1],
            ffn_expansion: 2.0,
            gamma_init: 1.0,
            in_channels: if task == Task::Inpainting { 4 } else { 3 },
            out_channels: 3,
            ipr_len: cpen.ipr_len(),
        },
        denoiser: DenoiserConfig {
            ipr_len: cpen.ipr_len(),
            hidden_width: 16,
            num_layers: 2,
            t_embed: Default::default(),
        },
        cpen,
    }
}

pub fn random_tensor(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Degraded synthetic samples for `task`.
pub fn samples(task: Task, n: usize, size: usize, seed: u64) -> Vec<Sample> {
    let images = data::gen_corpus(seed, n, size).unwrap();
    data::degrade_all(&images, task, seed, &Default::default())
        .unwrap()
        .iter()
        .map(|p| p.to_sample())
        .collect()
}

/// 64-bit LCG shared with the SSIM reference script, uniform in `[0, 1)`.
pub struct Lcg(pub u64);

impl Lcg {
    pub fn next(&mut self) -> f64 {
        self.0 = self
            .0
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        (self.0 >> 11) as f64 / (1u64 << 53) as f64
    }
}

/// Every parameter replaced by a uniform draw in `[-scale, scale]`, so no
/// gradient vanishes because of a zero initialization.
pub fn randomize(params: &ParamStore, seed: u64, scale: f64) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = params.clone();
    for (_, t) in out.iter_mut() {
        *t = Tensor::from_fn(t.shape(), |_| rng.gen_range(-scale..scale));
    }
    out
}

/// Finite-difference step ladder for [`check_param_grads`].
pub const FD_STEPS: [f64; 6] = [3e-4, 1e-4, 3e-5, 1e-5, 3e-6, 1e-6];

pub type LossFn<'a> = dyn for<'t> Fn(&'t Tape, &Bound<'t>) -> Var<'t> + 'a;

/// Compares tape gradients of `loss` with finite differences on up to
/// `per_tensor` coordinates of every trainable parameter.
pub fn check_param_grads(
    params: &ParamStore,
    trainable: &dyn Fn(&str) -> bool,
    loss: &LossFn,
    per_tensor: usize,
) -> Vec<(String, GradCheck)> {
    let tape = Tape::new();
    let b = params.bind(&tape, trainable);
    let root = loss(&tape, &b);
    let grads = b.gradients(&tape.backward(root));
    grads
        .iter()
        .map(|(name, analytic)| {
            let point = params.get(name).unwrap().clone();
            let mut f = |probe: &Tensor| {
                let mut p = params.clone();
                p.insert(name.clone(), probe.clone());
                let tape = Tape::new();
                let b = p.bind(&tape, |_| false);
                loss(&tape, &b).item()
            };
            let idx = gradcheck::sample_indices(point.len(), per_tensor);
            (name.clone(), gradcheck::check_indices_adaptive(&mut f, &point, analytic, &idx, &FD_STEPS, 1e-6))
        })
        .collect()
}

/// Largest relative error per parameter group prefix.
pub fn worst_by_group(results: &[(String, GradCheck)]) -> Vec<(String, f64, usize)> {
    let mut groups: Vec<(String, f64, usize)> = Vec::new();
    for (name, c) in results {
        let g = name.split('.').next().unwrap().to_string();
        match groups.iter_mut().find(|(n, _, _)| *n == g) {
            Some(e) => {
                e.1 = e.1.max(c.max_rel_err);
                e.2 += 1;
            }
            None => groups.push((g, c.max_rel_err, 1)),
        }
    }
    groups
}

/// Randomized toy DIRformer weights (prefix `dirformer`, inpainting input).
pub fn toy_dirformer(seed: u64) -> (diffir::dirformer::DirformerConfig, ParamStore) {
    let cfg = toy_model(Task::Inpainting).dirformer;
    let specs = diffir::dirformer::param_specs(&cfg);
    let store = ParamStore::from_specs(&specs, &mut ChaCha8Rng::seed_from_u64(seed));
    (cfg, randomize(&store, seed + 1, 0.5))
}

fn zero(store: &mut ParamStore, names: &[String]) {
    for n in names {
        store.get_mut(n).unwrap_or_else(|| panic!("no parameter {n}")).data_mut().fill(0.0);
    }
}

fn conv_names(prefix: &str) -> Vec<String> {
    vec![format!("{prefix}.weight"), format!("{prefix}.bias")]
}

fn branch_names(prefix: &str, branches: &[&str]) -> Vec<String> {
    branches
        .iter()
        .flat_map(|br| [format!("{prefix}.{br}_pw"), format!("{prefix}.{br}_dw")])
        .flat_map(|c| conv_names(&c))
        .collect()
}

/// Largest deviation from the identity of: an attention unit with a zero
/// output projection, a feed-forward unit with both branches zero, one with
/// only the gate branch zero, and a whole block with zero projections.
pub fn zero_projection_deviation(seed: u64) -> [f64; 4] {
    let (_, base) = toy_dirformer(seed);
    let prefix = "dirformer.enc1.0";
    let (attn, ffn) = (format!("{prefix}.attn"), format!("{prefix}.ffn"));
    let f = random_tensor(&[2, 8, 8, 8], seed + 2, -2.0, 2.0);
    let zv = random_tensor(&[2, 32], seed + 3, -1.0, 1.0);
    let run = |zeroed: Vec<String>, unit: &dyn for<'t> Fn(&Bound<'t>, Var<'t>, Var<'t>) -> Var<'t>| -> f64 {
        let mut store = base.clone();
        zero(&mut store, &zeroed);
        let tape = Tape::new();
        let b = store.bind(&tape, |_| false);
        let y = unit(&b, tape.constant(f.clone()), tape.constant(zv.clone()));
        y.value().data().iter().zip(f.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    };
    let mut both = conv_names(&format!("{attn}.proj"));
    both.extend(branch_names(&ffn, &["gate", "value"]));
    [
        run(conv_names(&format!("{attn}.proj")), &|b, f, z| diffir::dirformer::dmta(b, &attn, f, z, 1)),
        run(branch_names(&ffn, &["gate", "value"]), &|b, f, z| diffir::dirformer::dgfn(b, &ffn, f, z)),
        run(branch_names(&ffn, &["gate"]), &|b, f, z| diffir::dirformer::dgfn(b, &ffn, f, z)),
        run(both, &|b, f, z| diffir::dirformer::block(b, prefix, f, z, 1)),
    ]
}

/// Largest deviation of unit-scale, zero-shift modulation from a directly
/// computed per-pixel channel normalization.
pub fn plain_modulation_deviation(seed: u64) -> f64 {
    let (_, mut store) = toy_dirformer(seed);
    let prefix = "dirformer.latent.0.ffn";
    zero(&mut store, &[format!("{prefix}.scale.weight"), format!("{prefix}.shift.weight"), format!("{prefix}.shift.bias")]);
    store.get_mut(&format!("{prefix}.scale.bias")).unwrap().data_mut().fill(1.0);
    let tape = Tape::new();
    let b = store.bind(&tape, |_| false);
    let (n, c, hw) = (2, 8, 16);
    let f = random_tensor(&[n, c, 4, 4], seed + 4, -3.0, 3.0);
    let z = tape.constant(random_tensor(&[n, 32], seed + 5, -1.0, 1.0));
    let y = diffir::dirformer::modulate(&b, prefix, tape.constant(f.clone()), z);
    let (x, y) = (f.data(), y.value().data().to_vec());
    let mut worst = 0.0f64;
    for i in 0..n {
        for p in 0..hw {
            let col: Vec<f64> = (0..c).map(|ch| x[(i * c + ch) * hw + p]).collect();
            let mean = col.iter().sum::<f64>() / c as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            for (ch, v) in col.iter().enumerate() {
                let want = (v - mean) / (var + 1e-5).sqrt();
                worst = worst.max((y[(i * c + ch) * hw + p] - want).abs());
            }
        }
    }
    worst
}

/// Deviation of the full restorer from `I_LQ` with its output conv zeroed.
pub fn zero_output_deviation(seed: u64) -> f64 {
    let (cfg, mut store) = toy_dirformer(seed);
    zero(&mut store, &conv_names("dirformer.output"));
    let tape = Tape::new();
    let b = store.bind(&tape, |_| false);
    let lq = random_tensor(&[2, 3, 16, 16], seed + 6, 0.0, 1.0);
    let mask = Tensor::from_fn(&[2, 1, 16, 16], |i| ((i / 5) % 2) as f64);
    let z = tape.constant(random_tensor(&[2, 32], seed + 7, -1.0, 1.0));
    let y = diffir::dirformer::dirformer_forward(&b, &cfg, tape.constant(lq.clone()), Some(tape.constant(mask)), z).unwrap();
    y.value().data().iter().zip(lq.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}
