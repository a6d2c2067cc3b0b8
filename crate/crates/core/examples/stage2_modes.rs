//! Short stage-2 runs in each training mode from one stage-1 model.
//!
//! cargo run --release --example stage2_modes -- [s1_steps] [s2_steps]

use diffir::config::ExperimentConfig;
use diffir::eval;
use diffir::training::{self, Mode, Stage, TrainConfig};

fn main() -> diffir::Result<()> {
    let mut args = std::env::args().skip(1);
    let s1_steps: u64 = args.next().map_or(300, |v| v.parse().expect("s1 steps"));
    let s2_steps: u64 = args.next().map_or(200, |v| v.parse().expect("s2 steps"));
    let cfg = ExperimentConfig::default().resolve()?;
    let (train_set, held) = cfg.load_samples()?;
    let s1 = TrainConfig {
        steps: s1_steps,
        lr: 1e-3,
        ..cfg.train.clone()
    };
    let ck1 = training::pretrain_stage1(&s1, &cfg.model(), &train_set, &mut |_| Ok(()))?.checkpoint;
    let r1 = eval::evaluate(&ck1, &held, 7)?;
    println!("stage 1: {:.2} dB (input {:.2} dB)", r1.mean_psnr(), r1.baseline_psnr());
    for mode in [Mode::V1NoDm, Mode::V2Traditional, Mode::V3Joint, Mode::V4JointNoise] {
        let s2 = TrainConfig {
            stage: Stage::S2,
            mode: Some(mode),
            steps: s2_steps,
            lr: 2e-3,
            min_lr: Some(1e-5),
            ..s1.clone()
        };
        let out = training::train_stage2(&s2, &ck1, &train_set, &mut |_| Ok(()))?;
        let r = eval::evaluate(&out.checkpoint, &held, 7)?;
        let last = out.losses.last().copied().unwrap_or_default();
        println!("{mode:?}: {:.2} dB, final L_all {:.4}", r.mean_psnr(), last.l_all);
    }
    Ok(())
}
