//! Two-stage training on a small synthetic inpainting set.
//!
//! cargo run --release --example train_inpainting -- [s1_steps] [s2_steps]

use diffir::config::ExperimentConfig;
use diffir::eval;
use diffir::training::{self, Mode, TrainConfig};

fn main() -> diffir::Result<()> {
    let mut args = std::env::args().skip(1);
    let s1_steps: u64 = args.next().map_or(2000, |v| v.parse().expect("s1 steps"));
    let s2_steps: u64 = args.next().map_or(1000, |v| v.parse().expect("s2 steps"));

    let cfg = ExperimentConfig::default().resolve()?;
    let model = cfg.model();
    let (train_set, held) = cfg.load_samples()?;

    let s1 = TrainConfig {
        steps: s1_steps,
        ..TrainConfig::desk_stage1()
    };
    let started = std::time::Instant::now();
    let out1 = training::pretrain_stage1(&s1, &model, &train_set, &mut |row| {
        if row.step % 50 == 0 {
            println!("s1 {}", row.to_tsv());
        }
        Ok(())
    })?;
    let r1 = eval::evaluate(&out1.checkpoint, &held, s1.seed)?;
    println!(
        "stage 1: {:.1}s, held-out PSNR {:.2} dB (copy-input {:.2} dB)",
        started.elapsed().as_secs_f64(),
        r1.mean_psnr(),
        r1.baseline_psnr()
    );

    let s2 = TrainConfig {
        steps: s2_steps,
        ..TrainConfig::desk_stage2(Mode::V3Joint)
    };
    let started = std::time::Instant::now();
    let out2 = training::train_stage2(&s2, &out1.checkpoint, &train_set, &mut |row| {
        if row.step % 50 == 0 {
            println!("s2 {}", row.to_tsv());
        }
        Ok(())
    })?;
    let r2 = eval::evaluate(&out2.checkpoint, &held, s2.seed)?;
    println!(
        "stage 2: {:.1}s, held-out PSNR {:.2} dB",
        started.elapsed().as_secs_f64(),
        r2.mean_psnr()
    );
    Ok(())
}
