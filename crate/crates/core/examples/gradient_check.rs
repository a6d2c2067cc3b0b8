//! Tape gradients of the joint stage-2 objective against finite
//! differences, on a tiny model so the check runs in seconds.

use autograd::gradcheck;
use autograd::{Tape, Tensor};
use diffir::cpen::CpenConfig;
use diffir::data::{self, Batch, Task};
use diffir::denoiser::{Backprop, DenoiserConfig};
use diffir::dirformer::DirformerConfig;
use diffir::model::{self, ModelConfig};
use diffir::params::ParamStore;
use diffir::schedule::NoiseSchedule;
use diffir::training::{self, Mode, Stage2Draw};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> diffir::Result<()> {
    let cpen = CpenConfig {
        c_prime: 8,
        unshuffle_factor: 4,
        num_res_blocks: 1,
        image_channels: 3,
    };
    let model = ModelConfig {
        dirformer: DirformerConfig {
            channels: [8, 8, 8, 8],
            heads: [1, 2, 2, 4],
            blocks: [1, 1, 1, 1],
            ffn_expansion: 2.0,
            gamma_init: 1.0,
            in_channels: 4,
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
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let s1 = ParamStore::from_specs(&model.specs_s1(), &mut rng);
    let params = model::init_stage2(&model, &s1, &mut rng)?;
    let images = data::gen_corpus(5, 2, 8)?;
    let samples: Vec<_> = data::degrade_all(&images, Task::Inpainting, 5, &Default::default())?
        .iter()
        .map(|p| p.to_sample())
        .collect();
    let batch = Batch::from_samples(&samples.iter().collect::<Vec<_>>());
    let s = NoiseSchedule::default_four_step();
    let draw = Stage2Draw::sample(&mut rng, &s, Mode::V3Joint, batch.len(), model.cpen.ipr_len());
    let loss = |p: &ParamStore, trainable: bool| -> (f64, indexmap::IndexMap<String, Tensor>) {
        let tape = Tape::new();
        let b = p.bind(&tape, |n| trainable && Mode::V3Joint.trains(n));
        let g = training::stage2_graph(&tape, &b, &model, &s, &batch, Mode::V3Joint, Backprop::Full, &draw).unwrap();
        let value = g.total.item();
        let grads = if trainable { b.gradients(&tape.backward(g.total)) } else { Default::default() };
        (value, grads)
    };
    let (value, grads) = loss(&params, true);
    println!("L_all = {value:.6}, {} trainable tensors", grads.len());
    for name in ["cpen_s2.head2.weight", "denoiser.fc0.weight", "dirformer.latent.0.attn.gamma", "dirformer.output.weight"] {
        let point = params.get(name).unwrap().clone();
        let mut f = |probe: &Tensor| {
            let mut p = params.clone();
            p.insert(name, probe.clone());
            loss(&p, false).0
        };
        let idx = gradcheck::sample_indices(point.len(), 3);
        let c = gradcheck::check_indices_adaptive(&mut f, &point, &grads[name], &idx, &[3e-4, 1e-4, 3e-5, 1e-5, 3e-6, 1e-6], 1e-6);
        println!("{name:<32} max relative error {:.2e}", c.max_rel_err);
    }
    Ok(())
}
