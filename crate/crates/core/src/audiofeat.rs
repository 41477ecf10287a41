//! PCM ingest and the three-window log-mel representation.
//!
//! Every frame `i` summarizes the audio that ends at sample `i * HOP`: the
//! three Hann windows (1024, 2048 and 4096 samples) all close on that sample,
//! are zero-padded to 4096 points and share one 2049-bin magnitude axis.

use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

pub const SAMPLE_RATE: u32 = 44_100;
pub const HOP: usize = 441;
pub const HOP_S: f64 = 0.010;
pub const FFT_SIZE: usize = 4096;
pub const BINS: usize = FFT_SIZE / 2 + 1;
pub const WINDOWS: [usize; 3] = [1024, 2048, 4096];
pub const CHANNELS: usize = 3;
pub const MEL_BANDS: usize = 80;
pub const MEL_FMIN: f64 = 27.5;
pub const MEL_FMAX: f64 = 16_000.0;
pub const LOG_EPS: f64 = 1e-16;
pub const STD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported WAV encoding: {0}")]
    Unsupported(String),
    #[error("truncated or malformed WAV: {0}")]
    Truncated(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("clip of {samples} samples is shorter than one hop")]
    TooShort { samples: usize },
    #[error("expected {expected} Hz audio, got {actual} Hz")]
    SampleRate { expected: u32, actual: u32 },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("no spectrograms to fit normalization on")]
    EmptyInput,
}

/// Mono PCM samples in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

fn map_hound(err: hound::Error) -> AudioError {
    match err {
        hound::Error::IoError(e)
            if e.kind() == std::io::ErrorKind::UnexpectedEof
                || e.to_string().contains("enough bytes") =>
        {
            AudioError::Truncated(e.to_string())
        }
        hound::Error::IoError(e) => AudioError::Io(e),
        hound::Error::Unsupported => AudioError::Unsupported("codec not supported".into()),
        other => AudioError::Truncated(other.to_string()),
    }
}

/// Reads a 16-bit integer or 32-bit float WAV, averages stereo to mono and
/// resamples to 44.1 kHz.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let bytes = std::fs::read(path)?;
    decode_wav(&bytes)
}

pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, AudioError> {
    let mut reader = hound::WavReader::new(std::io::Cursor::new(bytes)).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.channels == 0 || spec.channels > 2 {
        return Err(AudioError::Unsupported(format!(
            "{} channels",
            spec.channels
        )));
    }
    let declared = reader.len() as usize;
    let interleaved: Vec<f32> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(map_hound)?,
        (fmt, bits) => return Err(AudioError::Unsupported(format!("{fmt:?} {bits}-bit"))),
    };
    if interleaved.len() != declared {
        return Err(AudioError::Truncated(format!(
            "header declares {declared} samples, found {}",
            interleaved.len()
        )));
    }
    let mono: Vec<f32> = if spec.channels == 2 {
        interleaved
            .chunks_exact(2)
            .map(|lr| ((lr[0] as f64 + lr[1] as f64) * 0.5) as f32)
            .collect()
    } else {
        interleaved
    };
    Ok(AudioClip {
        samples: resample_linear(&mono, spec.sample_rate, SAMPLE_RATE),
        sample_rate: SAMPLE_RATE,
    })
}

/// Writes a mono 16-bit WAV.
pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(map_hound)?;
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
        writer.write_sample(v).map_err(map_hound)?;
    }
    writer.finalize().map_err(map_hound)
}

/// Linear-interpolation resampler. `n` input samples become
/// `floor((n - 1) * dst / src) + 1` output samples.
pub fn resample_linear(samples: &[f32], src_rate: u32, dst_rate: u32) -> Vec<f32> {
    if src_rate == dst_rate || samples.len() < 2 {
        return samples.to_vec();
    }
    let n = samples.len();
    let out_len = ((n as u64 - 1) * dst_rate as u64 / src_rate as u64 + 1) as usize;
    (0..out_len)
        .map(|j| {
            let pos = j as f64 * src_rate as f64 / dst_rate as f64;
            let i = (pos.floor() as usize).min(n - 1);
            let frac = pos - i as f64;
            let a = samples[i] as f64;
            let b = samples[(i + 1).min(n - 1)] as f64;
            (a + (b - a) * frac) as f32
        })
        .collect()
}

/// Number of 10 ms frames for a clip of `samples` samples.
pub fn frame_count(samples: usize) -> usize {
    samples / HOP + 1
}

/// Hann taps with nonzero end points, so the newest sample always counts.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * (i + 1) as f64 / (n + 1) as f64).cos()))
        .collect()
}

struct FrameAnalyzer {
    fft: Arc<dyn Fft<f64>>,
    windows: Vec<Vec<f64>>,
    buffer: Vec<Complex<f64>>,
    scratch: Vec<Complex<f64>>,
}

impl FrameAnalyzer {
    fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(FFT_SIZE);
        let scratch = vec![Complex::default(); fft.get_inplace_scratch_len()];
        FrameAnalyzer {
            fft,
            windows: WINDOWS.iter().map(|&n| hann(n)).collect(),
            buffer: vec![Complex::default(); FFT_SIZE],
            scratch,
        }
    }

    /// Magnitude spectrum of frame `frame` for window channel `ch`.
    fn magnitudes(&mut self, samples: &[f32], frame: usize, ch: usize, out: &mut [f64]) {
        let window = &self.windows[ch];
        let n = window.len();
        let end = (frame * HOP) as isize;
        let start = end - n as isize + 1;
        for (i, slot) in self.buffer.iter_mut().enumerate() {
            *slot = Complex::default();
            if i < n {
                let pos = start + i as isize;
                if pos >= 0 && (pos as usize) < samples.len() {
                    slot.re = samples[pos as usize] as f64 * window[i];
                }
            }
        }
        self.fft
            .process_with_scratch(&mut self.buffer, &mut self.scratch);
        for (o, c) in out.iter_mut().zip(&self.buffer[..BINS]) {
            *o = c.norm();
        }
    }
}

/// Multi-window magnitude STFT, laid out `[frame][bin][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stft {
    pub frames: usize,
    pub data: Vec<f32>,
}

impl Stft {
    pub fn zeros(frames: usize) -> Self {
        Stft {
            frames,
            data: vec![0.0; frames * BINS * CHANNELS],
        }
    }

    pub fn get(&self, frame: usize, bin: usize, ch: usize) -> f32 {
        self.data[(frame * BINS + bin) * CHANNELS + ch]
    }

    pub fn set(&mut self, frame: usize, bin: usize, ch: usize, value: f32) {
        self.data[(frame * BINS + bin) * CHANNELS + ch] = value;
    }
}

fn check_clip(clip: &AudioClip) -> Result<(), AudioError> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(AudioError::SampleRate {
            expected: SAMPLE_RATE,
            actual: clip.sample_rate,
        });
    }
    if clip.samples.len() < HOP {
        return Err(AudioError::TooShort {
            samples: clip.samples.len(),
        });
    }
    Ok(())
}

pub fn multiwindow_stft(clip: &AudioClip) -> Result<Stft, AudioError> {
    check_clip(clip)?;
    let frames = frame_count(clip.samples.len());
    let mut stft = Stft::zeros(frames);
    let mut analyzer = FrameAnalyzer::new();
    let mut mags = vec![0.0; BINS];
    for f in 0..frames {
        for ch in 0..CHANNELS {
            analyzer.magnitudes(&clip.samples, f, ch, &mut mags);
            for (bin, &m) in mags.iter().enumerate() {
                stft.set(f, bin, ch, m as f32);
            }
        }
    }
    Ok(stft)
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular HTK-mel filters over the shared FFT bin axis.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    /// Per band: first covered bin and the weights from there on.
    pub filters: Vec<(usize, Vec<f64>)>,
    pub centers_hz: Vec<f64>,
    pub edges_hz: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(bands: usize) -> Self {
        let lo = hz_to_mel(MEL_FMIN);
        let hi = hz_to_mel(MEL_FMAX);
        let edges_hz: Vec<f64> = (0..bands + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (bands + 1) as f64))
            .collect();
        let bin_hz = SAMPLE_RATE as f64 / FFT_SIZE as f64;
        let filters = (0..bands)
            .map(|b| {
                let (l, c, r) = (edges_hz[b], edges_hz[b + 1], edges_hz[b + 2]);
                let first = (l / bin_hz).floor() as usize + 1;
                let last = ((r / bin_hz).ceil() as usize).min(BINS);
                let weights = (first..last)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        if f <= l || f >= r {
                            0.0
                        } else if f <= c {
                            (f - l) / (c - l)
                        } else {
                            (r - f) / (r - c)
                        }
                    })
                    .collect();
                (first, weights)
            })
            .collect();
        MelFilterbank {
            filters,
            centers_hz: edges_hz[1..=bands].to_vec(),
            edges_hz,
        }
    }

    pub fn bands(&self) -> usize {
        self.filters.len()
    }

    pub fn weight(&self, band: usize, bin: usize) -> f64 {
        let (first, w) = &self.filters[band];
        if bin < *first {
            0.0
        } else {
            w.get(bin - first).copied().unwrap_or(0.0)
        }
    }

    fn project(&self, spectrum: &[f64], out: &mut [f64]) {
        for (o, (first, w)) in out.iter_mut().zip(&self.filters) {
            *o = w.iter().zip(&spectrum[*first..]).map(|(a, b)| a * b).sum();
        }
    }
}

/// Log-mel frames laid out `[frame][band][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: usize,
    pub bands: usize,
    pub data: Vec<f32>,
    pub hop_s: f64,
    pub band_centers: Vec<f64>,
}

impl MelSpectrogram {
    pub fn get(&self, frame: usize, band: usize, ch: usize) -> f32 {
        self.data[(frame * self.bands + band) * CHANNELS + ch]
    }

    /// All `bands * CHANNELS` values of one frame.
    pub fn frame(&self, frame: usize) -> &[f32] {
        let w = self.bands * CHANNELS;
        &self.data[frame * w..(frame + 1) * w]
    }

    pub fn frame_width(&self) -> usize {
        self.bands * CHANNELS
    }

    pub fn duration_s(&self) -> f64 {
        (self.frames - 1) as f64 * self.hop_s
    }
}

fn log_floor(x: f64) -> f32 {
    (x + LOG_EPS).ln() as f32
}

/// Projects an STFT onto `MEL_BANDS` log-mel bands.
pub fn mel_project(stft: &Stft) -> MelSpectrogram {
    mel_project_bands(stft, MEL_BANDS)
}

pub fn mel_project_bands(stft: &Stft, bands: usize) -> MelSpectrogram {
    let bank = MelFilterbank::new(bands);
    let mut data = Vec::with_capacity(stft.frames * bands * CHANNELS);
    let mut spectrum = vec![0.0; BINS];
    let mut mel = vec![vec![0.0; bands]; CHANNELS];
    for f in 0..stft.frames {
        for (ch, m) in mel.iter_mut().enumerate() {
            for (bin, s) in spectrum.iter_mut().enumerate() {
                *s = stft.get(f, bin, ch) as f64;
            }
            bank.project(&spectrum, m);
        }
        for b in 0..bands {
            for m in &mel {
                data.push(log_floor(m[b]));
            }
        }
    }
    MelSpectrogram {
        frames: stft.frames,
        bands,
        data,
        hop_s: HOP_S,
        band_centers: bank.centers_hz.clone(),
    }
}

/// STFT and mel projection fused frame by frame; identical output to
/// `mel_project_bands(&multiwindow_stft(clip)?, bands)` without holding the
/// full STFT in memory.
pub fn featurize(clip: &AudioClip, bands: usize) -> Result<MelSpectrogram, AudioError> {
    check_clip(clip)?;
    let frames = frame_count(clip.samples.len());
    let bank = MelFilterbank::new(bands);
    let mut analyzer = FrameAnalyzer::new();
    let mut spectrum = vec![0.0; BINS];
    let mut mel = vec![vec![0.0; bands]; CHANNELS];
    let mut data = Vec::with_capacity(frames * bands * CHANNELS);
    for f in 0..frames {
        for (ch, m) in mel.iter_mut().enumerate() {
            analyzer.magnitudes(&clip.samples, f, ch, &mut spectrum);
            // match the f32 rounding of the two-step path
            for s in spectrum.iter_mut() {
                *s = *s as f32 as f64;
            }
            bank.project(&spectrum, m);
        }
        for b in 0..bands {
            for m in &mel {
                data.push(log_floor(m[b]));
            }
        }
    }
    Ok(MelSpectrogram {
        frames,
        bands,
        data,
        hop_s: HOP_S,
        band_centers: bank.centers_hz,
    })
}

/// Per-(band, channel) statistics, laid out `[band][channel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationStats {
    pub bands: usize,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormalizationStats {
    pub fn identity(bands: usize) -> Self {
        NormalizationStats {
            bands,
            mean: vec![0.0; bands * CHANNELS],
            std: vec![1.0; bands * CHANNELS],
        }
    }
}

/// Neumaier-compensated running sum.
#[derive(Default, Clone, Copy)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(self) -> f64 {
        self.sum + self.comp
    }
}

/// Pools every frame of every input; std is the population deviation,
/// floored at `STD_FLOOR`.
pub fn fit_normalization(specs: &[&MelSpectrogram]) -> Result<NormalizationStats, AudioError> {
    let first = specs.first().ok_or(AudioError::EmptyInput)?;
    let width = first.frame_width();
    if let Some(bad) = specs.iter().find(|s| s.frame_width() != width) {
        return Err(AudioError::Shape(format!(
            "band count {} differs from {}",
            bad.bands, first.bands
        )));
    }
    let count: usize = specs.iter().map(|s| s.frames).sum();
    if count == 0 {
        return Err(AudioError::EmptyInput);
    }
    let mut sums = vec![CompensatedSum::default(); width];
    for spec in specs {
        for frame in spec.data.chunks_exact(width) {
            for (s, &x) in sums.iter_mut().zip(frame) {
                s.add(x as f64);
            }
        }
    }
    let means: Vec<f64> = sums.iter().map(|s| s.value() / count as f64).collect();
    let mut sq = vec![CompensatedSum::default(); width];
    for spec in specs {
        for frame in spec.data.chunks_exact(width) {
            for ((s, &x), m) in sq.iter_mut().zip(frame).zip(&means) {
                let d = x as f64 - m;
                s.add(d * d);
            }
        }
    }
    Ok(NormalizationStats {
        bands: first.bands,
        mean: means.iter().map(|&m| m as f32).collect(),
        std: sq
            .iter()
            .map(|s| (s.value() / count as f64).sqrt().max(STD_FLOOR) as f32)
            .collect(),
    })
}

pub fn apply_normalization(
    spec: &MelSpectrogram,
    stats: &NormalizationStats,
) -> Result<MelSpectrogram, AudioError> {
    let width = spec.frame_width();
    if stats.mean.len() != width || stats.std.len() != width {
        return Err(AudioError::Shape(format!(
            "stats cover {} values per frame, spectrogram has {width}",
            stats.mean.len()
        )));
    }
    let mut out = spec.clone();
    for frame in out.data.chunks_exact_mut(width) {
        for ((x, &m), &s) in frame.iter_mut().zip(&stats.mean).zip(&stats.std) {
            *x = ((*x as f64 - m as f64) / s as f64) as f32;
        }
    }
    Ok(out)
}

/// Deterministic test signals.
pub mod synth {
    use super::{AudioClip, SAMPLE_RATE};

    pub fn silence(duration_s: f64) -> AudioClip {
        AudioClip {
            samples: vec![0.0; (duration_s * SAMPLE_RATE as f64).round() as usize],
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn sine(freq_hz: f64, duration_s: f64, amplitude: f64) -> AudioClip {
        let n = (duration_s * SAMPLE_RATE as f64).round() as usize;
        AudioClip {
            samples: (0..n)
                .map(|i| {
                    let t = i as f64 / SAMPLE_RATE as f64;
                    (amplitude * (2.0 * std::f64::consts::PI * freq_hz * t).sin()) as f32
                })
                .collect(),
            sample_rate: SAMPLE_RATE,
        }
    }

    /// Adds one percussive click (decaying 1 kHz + 3.1 kHz burst) starting at
    /// `time_s`.
    pub fn add_click(clip: &mut AudioClip, time_s: f64, amplitude: f64) {
        let start = (time_s * SAMPLE_RATE as f64).round();
        if start < 0.0 {
            return;
        }
        let start = start as usize;
        let len = (0.03 * SAMPLE_RATE as f64) as usize;
        for i in 0..len {
            let Some(s) = clip.samples.get_mut(start + i) else {
                break;
            };
            let t = i as f64 / SAMPLE_RATE as f64;
            let env = (-t / 0.006).exp();
            let tone = (2.0 * std::f64::consts::PI * 1000.0 * t).cos()
                + 0.6 * (2.0 * std::f64::consts::PI * 3100.0 * t).cos();
            *s += (amplitude * env * tone / 1.6) as f32;
        }
    }

    /// Clicks at `offset_s + k * 60 / bpm` for every k that fits.
    pub fn click_track(bpm: f64, offset_s: f64, duration_s: f64, amplitude: f64) -> AudioClip {
        let mut clip = silence(duration_s);
        let period = 60.0 / bpm;
        let mut k = 0;
        loop {
            let t = offset_s + k as f64 * period;
            if t >= duration_s {
                break;
            }
            add_click(&mut clip, t, amplitude);
            k += 1;
        }
        clip
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn resample_length() {
        let n = 1000;
        let src: Vec<f32> = (0..n).map(|i| (i as f32 * 0.01).sin()).collect();
        let out = resample_linear(&src, 22_050, 44_100);
        assert_eq!(out.len(), 2 * n - 1);
        assert_eq!(out[0], src[0]);
        assert_eq!(out[2], src[1]);
        assert!((out[1] - 0.5 * (src[0] + src[1])).abs() < 1e-6);
    }

    #[test]
    fn frame_counts() {
        assert_eq!(frame_count(44_100), 101);
        let clip = synth::silence(1.0);
        assert_eq!(multiwindow_stft(&clip).unwrap().frames, 101);
        let short = synth::silence(0.005);
        assert!(matches!(
            multiwindow_stft(&short),
            Err(AudioError::TooShort { .. })
        ));
    }

    #[test]
    fn silence_maps_to_log_floor() {
        let stft = multiwindow_stft(&synth::silence(0.2)).unwrap();
        assert!(stft.data.iter().all(|&v| v == 0.0));
        let mel = mel_project(&stft);
        let floor = (LOG_EPS).ln() as f32;
        assert!(mel.data.iter().all(|&v| v == floor));
        assert_eq!(mel.bands, 80);
    }

    #[test]
    fn filterbank_covers_every_band() {
        let bank = MelFilterbank::new(MEL_BANDS);
        for (b, (_, w)) in bank.filters.iter().enumerate() {
            assert!(w.iter().sum::<f64>() > 0.0, "band {b} is empty");
        }
        assert!(bank.centers_hz.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn single_bin_lights_covering_bands() {
        let bank = MelFilterbank::new(MEL_BANDS);
        let bin_hz = SAMPLE_RATE as f64 / FFT_SIZE as f64;
        for bin in [5usize, 40, 41, 300, 1200] {
            let mut stft = Stft::zeros(1);
            for ch in 0..CHANNELS {
                stft.set(0, bin, ch, 1.0);
            }
            let mel = mel_project(&stft);
            let floor = (LOG_EPS).ln() as f32;
            let f = bin as f64 * bin_hz;
            // independent triangle membership from the band edges
            let expected: Vec<usize> = (0..MEL_BANDS)
                .filter(|&b| f > bank.edges_hz[b] && f < bank.edges_hz[b + 2])
                .collect();
            assert!(matches!(expected.len(), 1 | 2), "bin {bin}: {expected:?}");
            for ch in 0..CHANNELS {
                let lit: Vec<usize> = (0..MEL_BANDS)
                    .filter(|&b| mel.get(0, b, ch) > floor)
                    .collect();
                assert_eq!(lit, expected, "bin {bin}");
            }
        }
    }

    #[test]
    fn fused_featurize_matches_two_step_path() {
        let mut clip = synth::sine(660.0, 0.3, 0.4);
        synth::add_click(&mut clip, 0.1, 0.8);
        let a = featurize(&clip, MEL_BANDS).unwrap();
        let b = mel_project(&multiwindow_stft(&clip).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn normalization_constant_input() {
        let spec = MelSpectrogram {
            frames: 3,
            bands: 2,
            data: vec![2.5; 3 * 2 * CHANNELS],
            hop_s: HOP_S,
            band_centers: vec![100.0, 200.0],
        };
        let stats = fit_normalization(&[&spec]).unwrap();
        assert!(stats.mean.iter().all(|&m| m == 2.5));
        assert!(stats.std.iter().all(|&s| s == STD_FLOOR as f32));
        assert!(matches!(
            fit_normalization(&[]),
            Err(AudioError::EmptyInput)
        ));
    }

    #[test]
    fn normalization_two_point_statistics() {
        // band 0 channel 0 sees the values 1 and 3, pooled over two inputs
        let mk = |v: f32| MelSpectrogram {
            frames: 1,
            bands: 1,
            data: vec![v; CHANNELS],
            hop_s: HOP_S,
            band_centers: vec![100.0],
        };
        let (a, b) = (mk(1.0), mk(3.0));
        let stats = fit_normalization(&[&a, &b]).unwrap();
        assert_eq!(stats.mean[0], 2.0);
        assert_eq!(stats.std[0], 1.0);
        let n = apply_normalization(&b, &stats).unwrap();
        assert_eq!(n.data[0], 1.0);
        let m = apply_normalization(&mk(2.0), &stats).unwrap();
        assert_eq!(m.data[0], 0.0);
        let twice = apply_normalization(&n, &stats).unwrap();
        assert_ne!(twice.data[0], n.data[0]);
        let other = MelSpectrogram {
            bands: 2,
            data: vec![0.0; 2 * CHANNELS],
            band_centers: vec![1.0, 2.0],
            ..mk(0.0)
        };
        assert!(matches!(
            apply_normalization(&other, &stats),
            Err(AudioError::Shape(_))
        ));
    }

    #[test]
    fn wav_round_trip_and_stereo_average() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("st.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 44_100,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..500i16 {
            w.write_sample(i * 10).unwrap();
            w.write_sample(-i * 10).unwrap();
        }
        w.finalize().unwrap();
        let clip = load_wav(&path).unwrap();
        assert_eq!(clip.samples.len(), 500);
        assert!(clip.samples.iter().all(|&s| s == 0.0));

        let path = dir.path().join("full.wav");
        let spec = hound::WavSpec {
            channels: 1,
            ..spec
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(32767i16).unwrap();
        w.finalize().unwrap();
        let clip = load_wav(&path).unwrap();
        assert!((clip.samples[0] - 0.99997).abs() < 1e-5);
        assert_eq!(clip.samples[0], 32767.0 / 32768.0);
    }

    #[test]
    fn wav_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 44_100,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(5i32).unwrap();
        w.finalize().unwrap();
        assert!(matches!(load_wav(&path), Err(AudioError::Unsupported(_))));

        write_wav(&path, &synth::sine(440.0, 0.1, 0.5)).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let cut = &bytes[..bytes.len() - 101];
        let r = decode_wav(cut);
        assert!(
            matches!(r, Err(AudioError::Truncated(_))),
            "{:?}",
            r.map(|c| c.samples.len())
        );
    }
}
