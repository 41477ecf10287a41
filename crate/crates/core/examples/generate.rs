//! Generates a five-chart simfile for a WAV file with toy models trained on
//! the spot.
//!
//! `cargo run --release --example generate -- [audio.wav]`; without an
//! argument a 128 BPM click track is used.

use stepsmith::audiofeat::{synth, write_wav};
use stepsmith::pipeline::toy::write_toy_dataset;
use stepsmith::pipeline::{cmd_generate, cmd_train_placement, cmd_train_selection, PipelineConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::temp_dir().join("stepsmith_generate");
    write_toy_dataset(&root.join("data"), 4, 24)?;
    let mut cfg =
        PipelineConfig::parse_str("model = toy\nmax_steps = 60\nbatches_per_epoch = 10\n")?;
    cfg.dataset_dir = root.join("data");
    cfg.cache_dir = root.join("cache");
    cfg.out_dir = root.join("out");
    cmd_train_placement(&cfg)?;
    cmd_train_selection(&PipelineConfig {
        lr: 1e-2,
        ..cfg.clone()
    })?;

    let audio = match std::env::args().nth(1) {
        Some(p) => p.into(),
        None => {
            let p = root.join("click.wav");
            write_wav(&p, &synth::click_track(128.0, 0.15, 20.0, 0.8))?;
            p
        }
    };
    cfg.temperature = 0.5;
    let g = cmd_generate(&cfg, &audio)?;
    println!("{:.2} BPM -> {}", g.tempo.bpm, g.path.display());
    for c in &g.simfile.charts {
        let head: Vec<String> = c
            .rows
            .iter()
            .take(6)
            .map(|r| format!("{}@{}", r.symbol, r.beat))
            .collect();
        println!(
            "  {:<9} {:>2} {:>4} rows  {}",
            c.coarse_difficulty.name(),
            c.fine_difficulty,
            c.rows.len(),
            head.join(" ")
        );
    }
    Ok(())
}
