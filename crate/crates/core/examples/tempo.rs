//! Global tempo and beat phase.
//!
//! `cargo run --example tempo -- [audio.wav]`; without an argument, sweeps a
//! few synthetic click tracks.

use stepsmith::audiofeat::{featurize, load_wav, synth, MEL_BANDS};
use stepsmith::tempo::{estimate_tempo, onset_envelope};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    if let Some(path) = std::env::args().nth(1) {
        let env = onset_envelope(&featurize(&load_wav(path)?, MEL_BANDS)?);
        let t = estimate_tempo(&env)?;
        println!(
            "{:.2} BPM, beat 0 at {:.4} s, confidence {:.3}",
            t.bpm, t.offset_s, t.confidence
        );
        return Ok(());
    }
    println!("true bpm  offset  ->  estimate  offset  confidence");
    for (bpm, offset) in [
        (72.5, 0.31),
        (118.0, 0.05),
        (150.0, 0.4),
        (185.7, 0.2),
        (232.0, 0.12),
    ] {
        let env = onset_envelope(&featurize(
            &synth::click_track(bpm, offset, 15.0, 0.7),
            MEL_BANDS,
        )?);
        let t = estimate_tempo(&env)?;
        println!(
            "{bpm:8.2}  {offset:6.3}  ->  {:8.2}  {:6.3}  {:.3}",
            t.bpm, t.offset_s, t.confidence
        );
    }
    Ok(())
}
