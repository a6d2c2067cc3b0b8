//! Saves a briefly trained model, reloads it and confirms identical output.

use diffir::config::ExperimentConfig;
use diffir::eval;
use diffir::training::{self, Checkpoint, TrainConfig};

fn main() -> diffir::Result<()> {
    let cfg = ExperimentConfig::default().resolve()?;
    let (train_set, held) = cfg.load_samples()?;
    let train = TrainConfig {
        steps: 20,
        lr: 1e-3,
        ..cfg.train.clone()
    };
    let out = training::pretrain_stage1(&train, &cfg.model(), &train_set, &mut |_| Ok(()))?;
    let dir = std::env::temp_dir().join("diffir_checkpoint_example");
    out.checkpoint.save(&dir)?;
    let back = Checkpoint::load(&dir)?;
    println!("saved {} tensors to {}", back.params.len(), dir.display());
    println!("reloaded checkpoint equal: {}", back == out.checkpoint);
    let a = eval::restore_all(&out.checkpoint, None, &held, 1)?;
    let b = eval::restore_all(&back, None, &held, 1)?;
    println!("restorations bit-identical: {}", a == b);
    Ok(())
}
