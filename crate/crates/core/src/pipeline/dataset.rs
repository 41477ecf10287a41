//! Dataset discovery and example construction.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::warn;

use super::PipelineError;
use crate::audiofeat::MelSpectrogram;
use crate::beatgrid::{
    beat_frames, beats_in, make_placement_examples, make_selection_examples, placement_targets,
    simfile_tempo, PlacementExample, SelectionExample,
};
use crate::simfile::{augment_dataset, parse_simfile, Chart, Simfile};
use crate::tempo::TempoEstimate;

/// One `.sm` file and the audio it references.
#[derive(Debug, Clone)]
pub struct Song {
    /// Path of the simfile relative to the dataset root, `/`-separated.
    pub id: String,
    pub sim: Simfile,
    pub audio_path: PathBuf,
}

fn collect_simfiles(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), PipelineError> {
    let entries = std::fs::read_dir(dir).map_err(|e| PipelineError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| PipelineError::io(dir, e))?.path();
        if path.is_dir() {
            collect_simfiles(&path, out)?;
        } else if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("sm"))
        {
            out.push(path);
        }
    }
    Ok(())
}

pub fn load_song(root: &Path, path: &Path) -> Result<Song, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
    let sim = parse_simfile(&text).map_err(|source| PipelineError::Simfile {
        path: path.to_path_buf(),
        source,
    })?;
    let audio_path = path
        .parent()
        .unwrap_or(Path::new("."))
        .join(&sim.music_path);
    if sim.music_path.is_empty() || !audio_path.is_file() {
        return Err(PipelineError::MissingAudio {
            simfile: path.to_path_buf(),
            audio: audio_path,
        });
    }
    let id = path
        .strip_prefix(root)
        .unwrap_or(path)
        .components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/");
    Ok(Song {
        id,
        sim,
        audio_path,
    })
}

/// Every `.sm` under `root`, ordered by id.
pub fn load_songs(root: &Path) -> Result<Vec<Song>, PipelineError> {
    let mut paths = Vec::new();
    collect_simfiles(root, &mut paths)?;
    let mut songs = paths
        .iter()
        .map(|p| load_song(root, p))
        .collect::<Result<Vec<_>, _>>()?;
    songs.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(songs)
}

/// A song with its normalized features and beat grid.
#[derive(Debug, Clone)]
pub struct PreparedSong {
    pub song: Song,
    pub spec: Arc<MelSpectrogram>,
    pub tempo: TempoEstimate,
    pub n_beats: usize,
}

/// `None` (with a warning) for songs whose tempo is not constant.
pub fn prepare(song: &Song, spec: MelSpectrogram) -> Option<PreparedSong> {
    let tempo = match simfile_tempo(&song.sim) {
        Ok(t) => t,
        Err(e) => {
            warn!("skipping {}: {e}", song.id);
            return None;
        }
    };
    let n_beats = beats_in(spec.duration_s(), &tempo);
    Some(PreparedSong {
        song: song.clone(),
        spec: Arc::new(spec),
        tempo,
        n_beats,
    })
}

pub fn chart_id(song: &Song, chart: &Chart) -> String {
    format!("{}#{}", song.id, chart.coarse_difficulty.name())
}

/// Beat frames of the song tagged with `chart`'s difficulty, plus one
/// example per beat.
pub fn chart_placement_examples(
    p: &PreparedSong,
    chart: &Chart,
) -> Result<Vec<PlacementExample>, PipelineError> {
    let frames = Arc::new(beat_frames(
        &p.spec,
        &p.tempo,
        p.n_beats,
        chart.fine_difficulty,
    )?);
    let targets = placement_targets(chart, p.n_beats)?;
    Ok(make_placement_examples(
        frames,
        &targets,
        p.tempo.bpm,
        chart.fine_difficulty,
    ))
}

pub fn placement_examples(songs: &[PreparedSong]) -> Result<Vec<PlacementExample>, PipelineError> {
    let mut out = Vec::new();
    for p in songs {
        for chart in &p.song.sim.charts {
            out.extend(chart_placement_examples(p, chart)?);
        }
    }
    Ok(out)
}

/// Selection examples of every chart; with `augment`, of every mirrored
/// variant too.
pub fn selection_examples(songs: &[PreparedSong], augment: bool) -> Vec<SelectionExample> {
    let mut out = Vec::new();
    for p in songs {
        let charts = if augment {
            augment_dataset(&p.song.sim.charts)
        } else {
            p.song.sim.charts.clone()
        };
        for chart in &charts {
            out.extend(make_selection_examples(chart, &p.spec, &p.tempo));
        }
    }
    out
}
