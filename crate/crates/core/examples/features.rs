//! Log-mel features of a WAV file (or a synthetic chord when none is given).
//!
//! `cargo run --example features -- [audio.wav] [bands=80]`

use stepsmith::audiofeat::{
    featurize, load_wav, synth, AudioClip, MelFilterbank, CHANNELS, MEL_BANDS,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let clip = match args.next() {
        Some(p) => load_wav(p)?,
        None => {
            let (a, b) = (synth::sine(440.0, 2.0, 0.3), synth::sine(2500.0, 2.0, 0.2));
            AudioClip {
                samples: a
                    .samples
                    .iter()
                    .zip(&b.samples)
                    .map(|(x, y)| x + y)
                    .collect(),
                ..a
            }
        }
    };
    let bands = args.next().map_or(Ok(MEL_BANDS), |s| s.parse())?;
    let spec = featurize(&clip, bands)?;
    println!(
        "{:.2} s -> {} frames x {} bands x {CHANNELS} windows",
        clip.duration_s(),
        spec.frames,
        spec.bands
    );
    let centres = MelFilterbank::new(bands).centers_hz;
    let mid = spec.frames / 2;
    for ch in 0..CHANNELS {
        let mut order: Vec<usize> = (0..bands).collect();
        order.sort_by(|&a, &b| spec.get(mid, b, ch).total_cmp(&spec.get(mid, a, ch)));
        let top: Vec<String> = order[..3]
            .iter()
            .map(|&b| {
                format!(
                    "band {b} ({:.0} Hz) {:.2}",
                    centres[b],
                    spec.get(mid, b, ch)
                )
            })
            .collect();
        println!("window {ch}, frame {mid}: {}", top.join(", "));
    }
    Ok(())
}
