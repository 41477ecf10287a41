//! Trains both toy models on a synthetic dataset and evaluates them.
//!
//! `cargo run --release --example train_toy -- [workdir]`

use stepsmith::pipeline::toy::write_toy_dataset;
use stepsmith::pipeline::{
    cmd_evaluate, cmd_featurize, cmd_train_placement, cmd_train_selection, PipelineConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args()
        .nth(1)
        .map_or_else(std::env::temp_dir, Into::into)
        .join("stepsmith_toy");
    write_toy_dataset(&root.join("data"), 6, 32)?;
    let mut cfg = PipelineConfig::parse_str(
        "model = toy\nmax_steps = 200\nbatches_per_epoch = 20\nseed = 1\n",
    )?;
    cfg.dataset_dir = root.join("data");
    cfg.cache_dir = root.join("cache");
    cfg.out_dir = root.join("out");
    println!("{:?}", cmd_featurize(&cfg)?);
    for (kind, outcome) in [
        ("placement", cmd_train_placement(&cfg)?),
        (
            "selection",
            cmd_train_selection(&PipelineConfig {
                lr: 1e-2,
                ..cfg.clone()
            })?,
        ),
    ] {
        let r = &outcome.report;
        println!(
            "{kind}: {} steps, best epoch {}, checkpoint {}",
            r.steps,
            r.best_epoch,
            outcome.checkpoint.display()
        );
    }
    let s = cmd_evaluate(&cfg)?;
    for row in s.placement.iter().chain(&s.selection) {
        println!("{:>14} {:.4}", row.metric, row.value);
    }
    Ok(())
}
