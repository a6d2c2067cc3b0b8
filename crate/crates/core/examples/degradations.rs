//! Procedural ground truths and the three degradations, written as PNGs.
//!
//! cargo run --release --example degradations -- [out_dir]

use std::path::PathBuf;

use diffir::data::{self, DegradeConfig, Task};
use diffir::metrics;

fn main() -> diffir::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "degradations".into()));
    std::fs::create_dir_all(&out)?;
    let images = data::gen_corpus(5, 4, 64)?;
    for task in [Task::Inpainting, Task::Sr, Task::Deblur] {
        let pairs = data::degrade_all(&images, task, 9, &DegradeConfig::default())?;
        for (i, p) in pairs.iter().enumerate() {
            let name = format!("{task:?}_{i}").to_lowercase();
            data::save_image(&out.join(format!("{name}_gt.png")), &p.gt)?;
            data::save_image(&out.join(format!("{name}_lq.png")), &p.lq)?;
            let s = p.to_sample();
            println!(
                "{name}: lq {}x{}, input PSNR {:.2} dB, {:?}",
                p.lq.height,
                p.lq.width,
                metrics::psnr(&s.input, &s.gt, 1.0)?,
                p.provenance
            );
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
