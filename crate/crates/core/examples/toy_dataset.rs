//! Writes a small synthetic dataset: `cargo run --example toy_dataset -- <dir> [songs] [beats]`.

use std::path::PathBuf;

use stepsmith::pipeline::toy::write_toy_dataset;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "toy_data".into()));
    let songs = args.next().map_or(Ok(5), |s| s.parse())?;
    let beats = args.next().map_or(Ok(40), |s| s.parse())?;
    for path in write_toy_dataset(&dir, songs, beats)? {
        println!("{}", path.display());
    }
    Ok(())
}
