//! Parses a simfile, mirrors its charts and writes it back out.
//!
//! `cargo run --example simfile_roundtrip -- [song.sm]`; without an argument
//! the bundled test fixture is used.

use stepsmith::simfile::{beat_to_time, mirror, parse_simfile, write_simfile, MirrorAxis};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/golden.sm").into());
    let mut sim = parse_simfile(&std::fs::read_to_string(&path)?)?;
    println!(
        "{} ({}), offset {} s",
        sim.title, sim.music_path, sim.offset_s
    );
    for c in &sim.charts {
        let last = c.rows.last().map_or(0.0, |r| r.beat);
        println!(
            "  {:<9} {:>2}: {:>4} rows, last at beat {last} = {:.3} s",
            c.coarse_difficulty.name(),
            c.fine_difficulty,
            c.rows.len(),
            beat_to_time(&sim, last)
        );
    }
    sim.charts = sim
        .charts
        .iter()
        .map(|c| mirror(c, MirrorAxis::LeftRight))
        .collect();
    let text = write_simfile(&sim)?;
    assert_eq!(parse_simfile(&text)?, sim);
    print!("{text}");
    Ok(())
}
