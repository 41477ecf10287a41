//! Beat-aligned model inputs and targets, dataset splits and batching.
//!
//! Examples hold shared references to per-song features and materialize
//! their context tensors on demand, so mirrored charts and overlapping
//! contexts cost no extra feature memory.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::audiofeat::{MelSpectrogram, CHANNELS};
use crate::neural::Tensor;
use crate::simfile::{Chart, Simfile, StepSymbol, GRID_PER_BEAT};
use crate::tempo::{TempoEstimate, MAX_BPM, MIN_BPM};

pub const SAMPLES_PER_BEAT: usize = 32;
pub const SLOTS: usize = GRID_PER_BEAT as usize;
pub const CONTEXT_BEATS: usize = 16;
pub const HISTORY: usize = 64;
pub const AUDIO_STEPS: usize = 8;
pub const PATCH_FRAMES: usize = 9;

#[derive(Debug, Error, PartialEq)]
pub enum BeatGridError {
    #[error("tempo {0} BPM outside [{MIN_BPM}, {MAX_BPM}]")]
    BpmOutOfRange(f64),
    #[error("two rows share slot {slot} of beat {beat_index}")]
    SlotCollision { beat_index: usize, slot: usize },
    #[error("simfile has tempo changes or stops")]
    VariableTempo,
}

/// The beat grid of a constant-tempo simfile: beat 0 sounds at `-offset`.
pub fn simfile_tempo(sim: &Simfile) -> Result<TempoEstimate, BeatGridError> {
    if sim.bpm_segments.len() != 1 || !sim.stop_segments.is_empty() {
        return Err(BeatGridError::VariableTempo);
    }
    Ok(TempoEstimate {
        bpm: sim.bpm_segments[0].bpm,
        offset_s: -sim.offset_s,
        confidence: 1.0,
    })
}

/// Number of whole or partial beats between beat 0 and the end of the audio.
pub fn beats_in(duration_s: f64, tempo: &TempoEstimate) -> usize {
    ((duration_s - tempo.offset_s) / tempo.seconds_per_beat())
        .ceil()
        .max(0.0) as usize
}

/// Index of the frame nearest to `t`, if it lies inside the spectrogram.
pub fn nearest_frame(spec: &MelSpectrogram, t: f64) -> Option<usize> {
    let i = (t / spec.hop_s + 0.5).floor();
    (i >= 0.0 && i < spec.frames as f64).then_some(i as usize)
}

/// `SAMPLES_PER_BEAT` spectrogram frames taken across one beat, laid out
/// `[sample][band][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeatFrame {
    pub data: Vec<f32>,
    pub bands: usize,
    pub beat_index: usize,
    pub bpm: f64,
    pub difficulty: u32,
    /// Source frame per sample; `None` where the beat runs past the audio.
    pub source_frames: Vec<Option<usize>>,
}

impl BeatFrame {
    pub fn zeros(bands: usize, beat_index: usize, bpm: f64, difficulty: u32) -> Self {
        BeatFrame {
            data: vec![0.0; SAMPLES_PER_BEAT * bands * CHANNELS],
            bands,
            beat_index,
            bpm,
            difficulty,
            source_frames: vec![None; SAMPLES_PER_BEAT],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

pub fn beat_frames(
    spec: &MelSpectrogram,
    tempo: &TempoEstimate,
    n_beats: usize,
    difficulty: u32,
) -> Result<Vec<BeatFrame>, BeatGridError> {
    if !(MIN_BPM..=MAX_BPM).contains(&tempo.bpm) {
        return Err(BeatGridError::BpmOutOfRange(tempo.bpm));
    }
    let width = spec.frame_width();
    let spb = tempo.seconds_per_beat();
    Ok((0..n_beats)
        .map(|b| {
            let mut frame = BeatFrame::zeros(spec.bands, b, tempo.bpm, difficulty);
            for k in 0..SAMPLES_PER_BEAT {
                let t = tempo.offset_s + (b as f64 + k as f64 / SAMPLES_PER_BEAT as f64) * spb;
                if let Some(i) = nearest_frame(spec, t) {
                    frame.data[k * width..(k + 1) * width].copy_from_slice(spec.frame(i));
                    frame.source_frames[k] = Some(i);
                }
            }
            frame
        })
        .collect())
}

/// Which of the `SLOTS` evenly spaced positions of one beat carry a step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlacementVector {
    pub slots: [bool; SLOTS],
    pub beat_index: usize,
}

impl PlacementVector {
    pub fn empty(beat_index: usize) -> Self {
        PlacementVector {
            slots: [false; SLOTS],
            beat_index,
        }
    }

    pub fn count(&self) -> usize {
        self.slots.iter().filter(|&&s| s).count()
    }

    /// Beat positions of the set slots, ascending.
    pub fn beats(&self) -> impl Iterator<Item = f64> + '_ {
        self.slots
            .iter()
            .enumerate()
            .filter(|(_, &s)| s)
            .map(move |(k, _)| slot_beat(self.beat_index, k))
    }

    pub fn as_f32(&self) -> [f32; SLOTS] {
        self.slots.map(|s| if s { 1.0 } else { 0.0 })
    }
}

pub fn slot_beat(beat_index: usize, slot: usize) -> f64 {
    (beat_index * SLOTS + slot) as f64 / SLOTS as f64
}

/// Grid position `(beat_index, slot)` nearest to `beat`.
pub fn beat_slot(beat: f64) -> Option<(usize, usize)> {
    let q = (beat * SLOTS as f64).round();
    (q >= 0.0).then(|| {
        let q = q as usize;
        (q / SLOTS, q % SLOTS)
    })
}

/// Rows before beat 0 or at or after `n_beats` are dropped.
pub fn placement_targets(
    chart: &Chart,
    n_beats: usize,
) -> Result<Vec<PlacementVector>, BeatGridError> {
    let mut out: Vec<PlacementVector> = (0..n_beats).map(PlacementVector::empty).collect();
    for row in &chart.rows {
        let Some((beat_index, slot)) = beat_slot(row.beat) else {
            continue;
        };
        let Some(v) = out.get_mut(beat_index) else {
            continue;
        };
        if v.slots[slot] {
            return Err(BeatGridError::SlotCollision { beat_index, slot });
        }
        v.slots[slot] = true;
    }
    Ok(out)
}

/// One beat with its past and future context. Context beats are borrowed
/// from the song's shared frames.
#[derive(Debug, Clone)]
pub struct PlacementExample {
    pub frames: Arc<Vec<BeatFrame>>,
    pub beat_index: usize,
    pub bpm: f64,
    pub difficulty: u32,
    pub target: PlacementVector,
}

impl PlacementExample {
    pub fn bands(&self) -> usize {
        self.frames.first().map_or(0, |f| f.bands)
    }

    fn frame_at(&self, beat: isize) -> Option<&BeatFrame> {
        usize::try_from(beat).ok().and_then(|b| self.frames.get(b))
    }

    /// Beats `beat_index - context + 1 ..= beat_index`; `None` marks padding.
    pub fn past_beats(&self, context: usize) -> Vec<Option<&BeatFrame>> {
        let b = self.beat_index as isize;
        (0..context as isize)
            .map(|j| self.frame_at(b - context as isize + 1 + j))
            .collect()
    }

    /// Beats `beat_index ..= beat_index + context - 1`; `None` marks padding.
    pub fn future_beats(&self, context: usize) -> Vec<Option<&BeatFrame>> {
        let b = self.beat_index as isize;
        (0..context as isize)
            .map(|j| self.frame_at(b + j))
            .collect()
    }

    fn stack(&self, beats: Vec<Option<&BeatFrame>>) -> Tensor<f32> {
        let bands = self.bands();
        let per = SAMPLES_PER_BEAT * bands * CHANNELS;
        let mut data = vec![0.0; beats.len() * per];
        for (j, f) in beats.iter().enumerate() {
            if let Some(f) = f {
                data[j * per..(j + 1) * per].copy_from_slice(&f.data);
            }
        }
        Tensor {
            shape: vec![beats.len(), SAMPLES_PER_BEAT, bands, CHANNELS],
            data,
        }
    }

    pub fn past_ctx(&self, context: usize) -> Tensor<f32> {
        self.stack(self.past_beats(context))
    }

    pub fn future_ctx(&self, context: usize) -> Tensor<f32> {
        self.stack(self.future_beats(context))
    }

    /// `(bpm, difficulty)` repeated for every context row, padding included.
    pub fn aux(&self, context: usize) -> Tensor<f32> {
        let row = [self.bpm as f32, self.difficulty as f32];
        Tensor {
            shape: vec![context, 2],
            data: row.repeat(context),
        }
    }
}

/// One example per target beat, including beats before the first step.
pub fn make_placement_examples(
    frames: Arc<Vec<BeatFrame>>,
    targets: &[PlacementVector],
    bpm: f64,
    difficulty: u32,
) -> Vec<PlacementExample> {
    targets
        .iter()
        .map(|t| PlacementExample {
            frames: Arc::clone(&frames),
            beat_index: t.beat_index,
            bpm,
            difficulty,
            target: t.clone(),
        })
        .collect()
}

/// Audio around the selection steps: the spectrogram plus the centre frame
/// of each patch (`None` for steps before the first or after the last row).
#[derive(Debug, Clone)]
pub struct SelectionAudio {
    pub spec: Arc<MelSpectrogram>,
    pub past: [Option<isize>; AUDIO_STEPS],
    pub future: [Option<isize>; AUDIO_STEPS],
}

impl SelectionAudio {
    fn patches(&self, centres: &[Option<isize>; AUDIO_STEPS]) -> Tensor<f32> {
        let width = self.spec.frame_width();
        let per = PATCH_FRAMES * width;
        let mut data = vec![0.0; AUDIO_STEPS * per];
        for (s, c) in centres.iter().enumerate() {
            let Some(c) = c else { continue };
            for j in 0..PATCH_FRAMES {
                let f = c + j as isize - (PATCH_FRAMES / 2) as isize;
                if f < 0 || f >= self.spec.frames as isize {
                    continue;
                }
                let dst = s * per + j * width;
                data[dst..dst + width].copy_from_slice(self.spec.frame(f as usize));
            }
        }
        Tensor {
            shape: vec![AUDIO_STEPS, PATCH_FRAMES, self.spec.bands, CHANNELS],
            data,
        }
    }

    /// Patches for rows `t-7 ..= t`, oldest first.
    pub fn past_patches(&self) -> Tensor<f32> {
        self.patches(&self.past)
    }

    /// Patches for rows `t ..= t+7`, current row first.
    pub fn future_patches(&self) -> Tensor<f32> {
        self.patches(&self.future)
    }
}

#[derive(Debug, Clone)]
pub struct SelectionExample {
    /// Symbol indices of the previous `HISTORY` rows, oldest first,
    /// zero-padded at the start.
    pub history: [u8; HISTORY],
    /// `(gap to previous, gap to next)` in beats for rows `t-63 ..= t`;
    /// 0 where a neighbour does not exist.
    pub delta_beats: [[f32; 2]; HISTORY],
    pub audio: SelectionAudio,
    pub target: u8,
}

/// Selection context for row `t` of a chart whose placements sit at `beats`.
/// Only `symbols[..t]` is read, so this also serves generation; `target` is
/// `symbols[t]` when known and 0 otherwise.
pub fn selection_example(
    beats: &[f64],
    symbols: &[StepSymbol],
    t: usize,
    spec: &Arc<MelSpectrogram>,
    tempo: &TempoEstimate,
) -> SelectionExample {
    let mut history = [0u8; HISTORY];
    for (j, h) in history.iter_mut().enumerate() {
        let row = t as isize - HISTORY as isize + j as isize;
        if row >= 0 {
            *h = symbols[row as usize].index();
        }
    }
    let gap = |a: usize, b: usize| (beats[b] - beats[a]) as f32;
    let mut delta_beats = [[0.0f32; 2]; HISTORY];
    for (j, d) in delta_beats.iter_mut().enumerate() {
        let row = t as isize - HISTORY as isize + 1 + j as isize;
        if row < 0 {
            continue;
        }
        let row = row as usize;
        if row > 0 {
            d[0] = gap(row - 1, row);
        }
        if row + 1 < beats.len() {
            d[1] = gap(row, row + 1);
        }
    }
    let centre = |row: isize| -> Option<isize> {
        if row < 0 || row as usize >= beats.len() {
            return None;
        }
        let time = tempo.beat_time(beats[row as usize]);
        Some((time / spec.hop_s + 0.5).floor() as isize)
    };
    let mut past = [None; AUDIO_STEPS];
    let mut future = [None; AUDIO_STEPS];
    for j in 0..AUDIO_STEPS {
        past[j] = centre(t as isize - (AUDIO_STEPS - 1) as isize + j as isize);
        future[j] = centre(t as isize + j as isize);
    }
    SelectionExample {
        history,
        delta_beats,
        audio: SelectionAudio {
            spec: Arc::clone(spec),
            past,
            future,
        },
        target: symbols.get(t).map_or(0, |s| s.index()),
    }
}

/// One example per row that has at least one predecessor.
pub fn make_selection_examples(
    chart: &Chart,
    spec: &Arc<MelSpectrogram>,
    tempo: &TempoEstimate,
) -> Vec<SelectionExample> {
    let beats: Vec<f64> = chart.rows.iter().map(|r| r.beat).collect();
    let symbols: Vec<StepSymbol> = chart.rows.iter().map(|r| r.symbol).collect();
    (1..beats.len())
        .map(|t| selection_example(&beats, &symbols, t, spec, tempo))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Valid,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitAssignment {
    pub songs: BTreeMap<String, Split>,
}

impl SplitAssignment {
    pub fn get(&self, song: &str) -> Option<Split> {
        self.songs.get(song).copied()
    }

    pub fn count(&self, split: Split) -> usize {
        self.songs.values().filter(|&&s| s == split).count()
    }

    pub fn members(&self, split: Split) -> Vec<&str> {
        self.songs
            .iter()
            .filter(|(_, &s)| s == split)
            .map(|(k, _)| k.as_str())
            .collect()
    }
}

/// Seeded 80/10/10 split by song. Validation and test each get
/// `max(1, round(n / 10))` songs when at least three songs exist; mirrored
/// charts are keyed by their source song and so follow it.
pub fn split_dataset(songs: &[String], seed: u64) -> SplitAssignment {
    let mut ids: Vec<&String> = songs.iter().collect();
    ids.sort();
    ids.dedup();
    let n = ids.len();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = if n >= 3 {
        ((n as f64 / 10.0).round() as usize).max(1)
    } else {
        0
    };
    let songs = ids
        .into_iter()
        .enumerate()
        .map(|(i, id)| {
            let split = if i < held {
                Split::Valid
            } else if i < 2 * held {
                Split::Test
            } else {
                Split::Train
            };
            (id.clone(), split)
        })
        .collect();
    SplitAssignment { songs }
}

/// Endless stream of index batches drawn without replacement from a
/// permutation that is reshuffled each time it runs out.
#[derive(Debug, Clone)]
pub struct BatchIterator {
    len: usize,
    batch_size: usize,
    order: Vec<usize>,
    pos: usize,
    rng: ChaCha8Rng,
}

impl BatchIterator {
    pub fn new(len: usize, batch_size: usize, seed: u64) -> Self {
        assert!(
            len > 0 && batch_size > 0,
            "batching needs examples and a batch size"
        );
        BatchIterator {
            len,
            batch_size,
            order: Vec::new(),
            pos: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        (0..self.batch_size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order = (0..self.len).collect();
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }

    pub fn epoch(&mut self, batches: usize) -> Vec<Vec<usize>> {
        (0..batches).map(|_| self.next_batch()).collect()
    }
}

pub fn batch_iterator(len: usize, batch_size: usize, seed: u64) -> BatchIterator {
    BatchIterator::new(len, batch_size, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiofeat::HOP_S;
    use crate::simfile::{CoarseDifficulty, Row};

    fn ramp_spec(frames: usize, bands: usize) -> MelSpectrogram {
        let w = bands * CHANNELS;
        MelSpectrogram {
            frames,
            bands,
            data: (0..frames * w).map(|i| (i / w) as f32 + 1.0).collect(),
            hop_s: HOP_S,
            band_centers: vec![0.0; bands],
        }
    }

    fn tempo(bpm: f64, offset_s: f64) -> TempoEstimate {
        TempoEstimate {
            bpm,
            offset_s,
            confidence: 1.0,
        }
    }

    fn chart(beats: &[f64]) -> Chart {
        Chart {
            coarse_difficulty: CoarseDifficulty::Medium,
            fine_difficulty: 5,
            rows: beats
                .iter()
                .enumerate()
                .map(|(i, &beat)| Row {
                    beat,
                    symbol: StepSymbol::from_index((i % 255 + 1) as u8),
                })
                .collect(),
        }
    }

    #[test]
    fn nearest_frames_at_120() {
        let spec = ramp_spec(200, 2);
        let f = beat_frames(&spec, &tempo(120.0, 0.0), 1, 3).unwrap();
        let idx: Vec<usize> = f[0].source_frames.iter().map(|s| s.unwrap()).collect();
        assert_eq!(&idx[..6], &[0, 2, 3, 5, 6, 8]);
        assert!(idx.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn fast_tempo_duplicates_frames() {
        let spec = ramp_spec(400, 2);
        for b in beat_frames(&spec, &tempo(240.0, 0.013), 10, 3).unwrap() {
            let mut idx: Vec<usize> = b.source_frames.iter().map(|s| s.unwrap()).collect();
            idx.dedup();
            assert!(idx.len() <= 26);
        }
        assert!(matches!(
            beat_frames(&spec, &tempo(250.0, 0.0), 1, 3),
            Err(BeatGridError::BpmOutOfRange(_))
        ));
    }

    #[test]
    fn beats_past_audio_are_zero() {
        let spec = ramp_spec(100, 2);
        let f = beat_frames(&spec, &tempo(120.0, 0.0), 4, 3).unwrap();
        assert!(!f[1].is_zero());
        assert!(f[3].is_zero());
    }

    #[test]
    fn targets_for_quarter_and_sixteenths() {
        let v = placement_targets(&chart(&[0.0, 0.5, 2.25, 2.75]), 4).unwrap();
        assert_eq!(v[0].beats().collect::<Vec<_>>(), vec![0.0, 0.5]);
        let quarters: String = (0..4)
            .map(|q| if v[2].slots[q * 12] { '1' } else { '0' })
            .collect();
        assert_eq!(quarters, "0101");
        assert_eq!(v[1].count() + v[3].count(), 0);
        assert!(placement_targets(&chart(&[]), 3)
            .unwrap()
            .iter()
            .all(|p| p.count() == 0));
        assert_eq!(
            placement_targets(&chart(&[1.0, 1.001]), 3),
            Err(BeatGridError::SlotCollision {
                beat_index: 1,
                slot: 0
            })
        );
    }

    #[test]
    fn context_windows() {
        let spec = ramp_spec(6000, 2);
        let frames = Arc::new(beat_frames(&spec, &tempo(120.0, 0.0), 100, 3).unwrap());
        let targets: Vec<_> = (0..100).map(PlacementVector::empty).collect();
        let ex = make_placement_examples(Arc::clone(&frames), &targets, 120.0, 7);
        let e = &ex[20];
        let past: Vec<usize> = e
            .past_beats(16)
            .iter()
            .map(|f| f.unwrap().beat_index)
            .collect();
        let fut: Vec<usize> = e
            .future_beats(16)
            .iter()
            .map(|f| f.unwrap().beat_index)
            .collect();
        assert_eq!(past, (5..=20).collect::<Vec<_>>());
        assert_eq!(fut, (20..=35).collect::<Vec<_>>());
        assert_eq!(e.aux(16).data, [120.0, 7.0].repeat(16));

        let one = Arc::new(beat_frames(&spec, &tempo(120.0, 0.0), 1, 3).unwrap());
        let ex = make_placement_examples(one, &targets[..1], 120.0, 7);
        let past = ex[0].past_ctx(16);
        assert_eq!(past.shape, vec![16, 32, 2, 3]);
        let per = 32 * 2 * 3;
        assert!(past.data[..15 * per].iter().all(|&v| v == 0.0));
        assert_eq!(&past.data[15 * per..], &ex[0].frames[0].data[..]);
    }

    #[test]
    fn selection_histories_and_gaps() {
        let spec = Arc::new(ramp_spec(500, 2));
        let t = tempo(120.0, 0.0);
        let c = chart(&[1.0, 1.5, 2.0]);
        let ex = make_selection_examples(&c, &spec, &t);
        assert_eq!(ex.len(), 2);
        assert_eq!(ex[0].history[..63], [0; 63]);
        assert_eq!(ex[0].history[63], c.rows[0].symbol.index());
        assert_eq!(ex[0].target, c.rows[1].symbol.index());
        assert_eq!(ex[0].delta_beats[63], [0.5, 0.5]);
        assert_eq!(ex[0].delta_beats[62], [0.0, 0.5]);
        assert_eq!(ex[1].delta_beats[63], [0.5, 0.0]);
        assert_eq!(make_selection_examples(&chart(&[3.0]), &spec, &t).len(), 0);

        let past = ex[0].audio.past_patches();
        assert_eq!(past.shape, vec![8, 9, 2, 3]);
        // row 1.5 sits at 0.75 s = frame 75; its patch is frames 71..=79
        let per = 9 * 6;
        assert_eq!(past.data[7 * per], 72.0);
        assert!(past.data[..6 * per].iter().all(|&v| v == 0.0));
        let fut = ex[0].audio.future_patches();
        assert_eq!(fut.data[0], 72.0);
        assert_eq!(fut.data[per], 97.0);
        assert!(fut.data[2 * per..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn split_of_ten_songs() {
        let songs: Vec<String> = (0..10).map(|i| format!("song{i}")).collect();
        let a = split_dataset(&songs, 4);
        assert_eq!(
            (
                a.count(Split::Train),
                a.count(Split::Valid),
                a.count(Split::Test)
            ),
            (8, 1, 1)
        );
        assert_eq!(a, split_dataset(&songs, 4));
    }

    #[test]
    fn batches_cover_every_example_per_pass() {
        let mut it = batch_iterator(10, 4, 9);
        let drawn: Vec<usize> = it.epoch(5).concat();
        let mut first: Vec<usize> = drawn[..10].to_vec();
        first.sort();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
        let mut again = batch_iterator(10, 4, 9);
        assert_eq!(again.epoch(5).concat(), drawn);
        assert_eq!(batch_iterator(100, 32, 0).epoch(400).concat().len(), 12_800);
    }
}
