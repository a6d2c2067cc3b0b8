//! Restores held-out images with a trained checkpoint and writes PNGs.
//!
//! cargo run --release --example restore_images -- <checkpoint_dir> [out_dir] [T]
//!
//! The checkpoint must come from the default synthetic inpainting data
//! (for instance `diffir train-s2 --config configs/desk_inpainting_s2.json`).

use std::path::PathBuf;

use diffir::config::ExperimentConfig;
use diffir::data;
use diffir::eval;
use diffir::metrics;
use diffir::schedule::NoiseSchedule;
use diffir::training::Checkpoint;

fn main() -> diffir::Result<()> {
    let mut args = std::env::args().skip(1);
    let ckpt_dir = PathBuf::from(args.next().expect("usage: restore_images <checkpoint_dir> [out_dir] [T]"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "restored".into()));
    let steps: Option<usize> = args.next().map(|v| v.parse().expect("T"));

    let ckpt = Checkpoint::load(&ckpt_dir)?;
    let cfg = ExperimentConfig {
        task: ckpt.config.train.task,
        ..ExperimentConfig::default()
    };
    let (_, held) = cfg.load_samples()?;
    let schedule = steps.map(|t| NoiseSchedule::linear(t, 0.1, 0.99)).transpose()?;
    let restored = eval::restore_all(&ckpt, schedule.as_ref(), &held, 7)?;
    std::fs::create_dir_all(&out)?;
    for (i, (img, s)) in restored.iter().zip(&held).enumerate() {
        data::save_image(&out.join(format!("{i:03}_input.png")), &s.input)?;
        data::save_image(&out.join(format!("{i:03}_restored.png")), img)?;
        println!(
            "{i}: {:.2} dB -> {:.2} dB",
            metrics::psnr(&s.input, &s.gt, 1.0)?,
            metrics::psnr(img, &s.gt, 1.0)?
        );
    }
    Ok(())
}
