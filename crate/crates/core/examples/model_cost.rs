//! Parameter and Mult-Add counts of the full-size models.
//!
//! cargo run --release --example model_cost -- [input_size]

use diffir::cost::{self, Variant};
use diffir::data::Task;
use diffir::model::ModelConfig;

fn main() -> diffir::Result<()> {
    let size: usize = std::env::args().nth(1).map_or(256, |v| v.parse().expect("input size"));
    for task in [Task::Inpainting, Task::Sr, Task::Deblur] {
        let model = ModelConfig::for_task(task);
        println!("== {task:?} at {size}x{size}");
        for variant in [Variant::S1, Variant::S2] {
            let r = cost::cost_report(&model, variant, size, 4)?;
            println!(
                "{variant:?}: {:.2}M params, {:.2}G Mult-Adds",
                r.total_params as f64 / 1e6,
                r.mult_adds as f64 / 1e9
            );
            for row in &r.rows {
                println!("    {:<10} {:>10} {:>14}", row.module, row.params, row.mult_adds);
            }
        }
    }
    Ok(())
}
