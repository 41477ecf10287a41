//! Small synthetic songs whose charts are fully determined by the audio,
//! for smoke tests and overfitting checks.

use std::path::{Path, PathBuf};

use super::PipelineError;
use crate::audiofeat::{synth, write_wav, AudioClip};
use crate::simfile::{write_simfile, Chart, CoarseDifficulty, Row, Simfile};

pub const TOY_BPM: f64 = 120.0;
/// Time of beat 0 in the toy songs.
pub const TOY_OFFSET_S: f64 = 0.1;

/// Cycled by the toy charts' rows.
pub const TOY_PATTERN: [&str; 8] = [
    "1000", "0100", "0010", "0001", "1001", "0110", "1100", "0011",
];

/// Slots used in beat `b` at the dense level; the sparse level keeps slot 0.
fn rhythm(b: usize) -> &'static [usize] {
    match b % 4 {
        0 => &[0],
        1 => &[0, 24],
        2 => &[0, 12, 24, 36],
        _ => &[0, 36],
    }
}

fn chart(n_beats: usize, dense: bool, coarse: CoarseDifficulty, fine: u32) -> Chart {
    let mut rows = Vec::new();
    for b in 0..n_beats {
        let slots = if dense { rhythm(b) } else { &[0][..] };
        for &k in slots {
            let symbol = TOY_PATTERN[rows.len() % TOY_PATTERN.len()];
            rows.push(Row {
                beat: b as f64 + k as f64 / 48.0,
                symbol: symbol.parse().expect("pattern symbols are valid"),
            });
        }
    }
    Chart {
        coarse_difficulty: coarse,
        fine_difficulty: fine,
        rows,
    }
}

/// A song of `n_beats` beats plus one beat of tail, with a click on every
/// step of the dense chart (louder on the sparse chart's steps). Charts:
/// Hard 8 (dense) and Easy 4 (downbeats only).
pub fn toy_song(title: &str, music_path: &str, n_beats: usize) -> (AudioClip, Simfile) {
    let spb = 60.0 / TOY_BPM;
    let hard = chart(n_beats, true, CoarseDifficulty::Hard, 8);
    let easy = chart(n_beats, false, CoarseDifficulty::Easy, 4);
    let mut clip = synth::silence(TOY_OFFSET_S + (n_beats + 1) as f64 * spb);
    for row in &hard.rows {
        let amp = if row.beat.fract() == 0.0 { 0.8 } else { 0.4 };
        synth::add_click(&mut clip, TOY_OFFSET_S + row.beat * spb, amp);
    }
    let mut sim = Simfile::constant_bpm(title, music_path, TOY_BPM, -TOY_OFFSET_S);
    sim.charts = vec![hard, easy];
    (clip, sim)
}

/// Writes `n_songs` toy songs as `<dir>/song<i>/song<i>.{sm,wav}`; song `i`
/// is `n_beats + 4 * i` beats long. Returns the simfile paths.
pub fn write_toy_dataset(
    dir: &Path,
    n_songs: usize,
    n_beats: usize,
) -> Result<Vec<PathBuf>, PipelineError> {
    let mut out = Vec::new();
    for i in 0..n_songs {
        let name = format!("song{i}");
        let song_dir = dir.join(&name);
        std::fs::create_dir_all(&song_dir).map_err(|e| PipelineError::io(&song_dir, e))?;
        let (clip, sim) = toy_song(&name, &format!("{name}.wav"), n_beats + 4 * i);
        let wav = song_dir.join(format!("{name}.wav"));
        write_wav(&wav, &clip).map_err(|e| PipelineError::audio(&wav, e))?;
        let sm = song_dir.join(format!("{name}.sm"));
        let text = write_simfile(&sim).map_err(|source| PipelineError::Simfile {
            path: sm.clone(),
            source,
        })?;
        std::fs::write(&sm, text).map_err(|e| PipelineError::io(&sm, e))?;
        out.push(sm);
    }
    Ok(out)
}
