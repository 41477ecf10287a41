//! Global tempo and beat-phase estimation.
//!
//! The onset envelope is the half-wave rectified frame-to-frame rise of the
//! log-mel spectrogram. Because every analysis window ends on its frame
//! sample, an onset registers in the first frame at or after it; frame `i`
//! therefore stands for onset time `(i - 0.5) * hop`.
//!
//! The tempo search scores a beat comb against a Gaussian-smoothed version of
//! the envelope. The comb score is the mean envelope value per tooth, so a
//! half- or third-tempo comb scores like the true tempo and a double-tempo
//! comb scores about half; the octave policy then picks among the ties.

use thiserror::Error;

use crate::audiofeat::{MelSpectrogram, CHANNELS, HOP_S};

pub const MIN_BPM: f64 = 60.0;
pub const MAX_BPM: f64 = 240.0;
/// Tempi inside this band win octave ties.
pub const PREFERRED_BPM: (f64, f64) = (89.0, 205.0);
pub const OCTAVE_TIE: f64 = 0.02;
pub const MIN_ENVELOPE_S: f64 = 4.0;

const GRID_MS: f64 = 1.0;
const COARSE_STEP_BPM: f64 = 0.1;
const COARSE_SIGMA_MS: f64 = 20.0;
const COARSE_PHASE_MS: f64 = 5.0;
const FINE_STEP_BPM: f64 = 0.01;
const FINE_SPAN_BPM: f64 = 0.2;
const FINE_SIGMA_MS: f64 = 8.0;
const FINE_CANDIDATES: usize = 6;
/// Octave ties are judged on this smoothing; see `octave_choice`.
const TIE_SIGMA_MS: f64 = 40.0;
/// Teeth this close to either end of the envelope are not scored; the first
/// frame has no predecessor and so never carries flux.
const EDGE_MS: (f64, f64) = (1000.0, 100.0);

#[derive(Debug, Error, PartialEq)]
pub enum TempoError {
    #[error("onset envelope covers {seconds:.2} s, need at least {MIN_ENVELOPE_S} s")]
    TooShort { seconds: f64 },
    #[error("onset envelope is all zeros")]
    Degenerate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TempoEstimate {
    pub bpm: f64,
    /// Time of beat 0, in `[0, 60 / bpm)`.
    pub offset_s: f64,
    pub confidence: f64,
}

impl TempoEstimate {
    pub fn seconds_per_beat(&self) -> f64 {
        60.0 / self.bpm
    }

    pub fn beat_time(&self, beat: f64) -> f64 {
        self.offset_s + beat * self.seconds_per_beat()
    }
}

/// Log-mel values more than this far below the channel peak are clamped
/// before taking differences (natural log, so 80 dB of magnitude).
pub const FLUX_RANGE: f32 = 9.21;

/// Spectral flux over all bands and channels, one value per frame.
///
/// Clamping relative to the peak makes the envelope independent of the
/// overall gain: scaling the audio shifts every unclamped value and the floor
/// alike.
pub fn onset_envelope(spec: &MelSpectrogram) -> Vec<f32> {
    let mut floor = [f32::NEG_INFINITY; CHANNELS];
    for (i, &v) in spec.data.iter().enumerate() {
        let ch = i % CHANNELS;
        floor[ch] = floor[ch].max(v);
    }
    let floor = floor.map(|m| m - FLUX_RANGE);
    let level = |v: f32, i: usize| v.max(floor[i % CHANNELS]) as f64;
    let mut env = vec![0.0f32; spec.frames];
    for f in 1..spec.frames {
        let flux: f64 = spec
            .frame(f)
            .iter()
            .zip(spec.frame(f - 1))
            .enumerate()
            .map(|(i, (&cur, &prev))| (level(cur, i) - level(prev, i)).max(0.0))
            .sum();
        env[f] = flux as f32;
    }
    env
}

/// Envelope mass spread onto a 1 ms grid with a Gaussian kernel.
struct SmoothedOnsets {
    grid: Vec<f64>,
}

impl SmoothedOnsets {
    fn new(envelope: &[f32], sigma_ms: f64) -> Self {
        let hop_ms = HOP_S * 1000.0;
        let len = (envelope.len() as f64 * hop_ms / GRID_MS).ceil() as usize + 1;
        let mut grid = vec![0.0; len];
        let reach = (4.0 * sigma_ms / GRID_MS).ceil() as isize;
        for (i, &e) in envelope.iter().enumerate() {
            if e <= 0.0 {
                continue;
            }
            let center = ((i as f64 - 0.5) * hop_ms) / GRID_MS;
            let c = center.round() as isize;
            for j in (c - reach).max(0)..=(c + reach).min(len as isize - 1) {
                let d = (j as f64 - center) * GRID_MS;
                grid[j as usize] += e as f64 * (-d * d / (2.0 * sigma_ms * sigma_ms)).exp();
            }
        }
        SmoothedOnsets { grid }
    }

    fn at(&self, ms: f64) -> f64 {
        let pos = ms / GRID_MS;
        if pos < 0.0 {
            return 0.0;
        }
        let i = pos.floor() as usize;
        if i + 1 >= self.grid.len() {
            return 0.0;
        }
        let frac = pos - i as f64;
        self.grid[i] * (1.0 - frac) + self.grid[i + 1] * frac
    }

    fn span_ms(&self) -> f64 {
        (self.grid.len() - 1) as f64 * GRID_MS
    }

    /// (mean per tooth, sum over teeth) for teeth at `phase + k * period`.
    fn comb(&self, period_ms: f64, phase_ms: f64) -> (f64, f64) {
        let span = self.span_ms() - EDGE_MS.1;
        let mut sum = 0.0;
        let mut teeth = 0usize;
        let skip = ((EDGE_MS.0 - phase_ms) / period_ms).ceil().max(0.0);
        let mut t = phase_ms + skip * period_ms;
        while t < span {
            sum += self.at(t);
            teeth += 1;
            t += period_ms;
        }
        if teeth == 0 {
            (0.0, 0.0)
        } else {
            (sum / teeth as f64, sum)
        }
    }

    /// Best phase on a `step_ms` grid, refined by a parabola through the peak.
    fn best_phase(&self, period_ms: f64, step_ms: f64) -> (f64, f64, f64) {
        let steps = (period_ms / step_ms).ceil() as usize;
        let scores: Vec<(f64, f64)> = (0..steps)
            .map(|k| self.comb(period_ms, k as f64 * step_ms))
            .collect();
        let (best, &(mean, sum)) = scores
            .iter()
            .enumerate()
            .fold(
                None,
                |acc: Option<(usize, &(f64, f64))>, (k, s)| match acc {
                    Some((_, b)) if b.0 >= s.0 => acc,
                    _ => Some((k, s)),
                },
            )
            .expect("period spans at least one phase step");
        let left = scores[(best + steps - 1) % steps].0;
        let right = scores[(best + 1) % steps].0;
        let denom = left - 2.0 * mean + right;
        let shift = if denom < 0.0 {
            (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
        } else {
            0.0
        };
        let phase = (best as f64 + shift) * step_ms;
        (phase.rem_euclid(period_ms), mean, sum)
    }
}

fn period_ms(bpm: f64) -> f64 {
    60_000.0 / bpm
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    bpm: f64,
    score: f64,
    phase_ms: f64,
    sum: f64,
}

fn evaluate(onsets: &SmoothedOnsets, bpm: f64, phase_step_ms: f64) -> Candidate {
    let (phase_ms, score, sum) = onsets.best_phase(period_ms(bpm), phase_step_ms);
    Candidate {
        bpm,
        score,
        phase_ms,
        sum,
    }
}

fn refine(onsets: &SmoothedOnsets, center: f64) -> Candidate {
    let lo = (center - FINE_SPAN_BPM).max(MIN_BPM);
    let hi = (center + FINE_SPAN_BPM).min(MAX_BPM);
    let steps = ((hi - lo) / FINE_STEP_BPM).round() as usize;
    (0..=steps)
        .map(|k| round_bpm(lo + k as f64 * FINE_STEP_BPM))
        .map(|bpm| evaluate(onsets, bpm, GRID_MS))
        .fold(None, |best: Option<Candidate>, c| match best {
            Some(b) if b.score >= c.score => Some(b),
            _ => Some(c),
        })
        .expect("non-empty refinement window")
}

fn round_bpm(bpm: f64) -> f64 {
    (bpm / FINE_STEP_BPM).round() * FINE_STEP_BPM
}

/// Picks among the tempo octaves of `best` per the preferred-band rule.
///
/// Ties are judged on a wide smoothing. A click straddling two frames splits
/// its flux; when two or three beats land near a whole number of frames the
/// split repeats every second or third beat, and a narrow kernel lets the
/// sub-tempo comb that only meets the unsplit clicks outscore the true tempo.
fn octave_choice(wide: &SmoothedOnsets, onsets: &SmoothedOnsets, best: Candidate) -> Candidate {
    let mut pool = vec![best];
    // a third of the tempo scores like the tempo too; the rounding error of
    // the multiplied estimate needs a fresh refinement
    for factor in [1.0 / 3.0, 0.5, 2.0, 3.0] {
        let bpm = best.bpm * factor;
        if (MIN_BPM..=MAX_BPM).contains(&bpm) {
            pool.push(refine(onsets, bpm));
        }
    }
    let tie: Vec<f64> = pool
        .iter()
        .map(|c| evaluate(wide, c.bpm, GRID_MS).score)
        .collect();
    let top = tie.iter().copied().fold(f64::MIN, f64::max);
    let close: Vec<Candidate> = pool
        .into_iter()
        .zip(tie)
        .filter(|&(_, w)| w >= top * (1.0 - OCTAVE_TIE))
        .map(|(c, _)| c)
        .collect();
    let preferred = close
        .iter()
        .filter(|c| (PREFERRED_BPM.0..=PREFERRED_BPM.1).contains(&c.bpm))
        .copied()
        .fold(None, |acc: Option<Candidate>, c| match acc {
            Some(a) if a.bpm > c.bpm => Some(a),
            _ => Some(c),
        });
    preferred.unwrap_or_else(|| {
        close
            .into_iter()
            .reduce(|a, c| if c.bpm > a.bpm { c } else { a })
            .expect("the top scorer is always close to itself")
    })
}

/// Estimates one global tempo from an onset envelope sampled every 10 ms.
pub fn estimate_tempo(envelope: &[f32]) -> Result<TempoEstimate, TempoError> {
    let seconds = envelope.len() as f64 * HOP_S;
    if seconds < MIN_ENVELOPE_S {
        return Err(TempoError::TooShort { seconds });
    }
    let energy: f64 = envelope.iter().map(|&e| e.max(0.0) as f64).sum();
    if !(energy > 0.0) {
        return Err(TempoError::Degenerate);
    }

    let coarse = SmoothedOnsets::new(envelope, COARSE_SIGMA_MS);
    let n_coarse = ((MAX_BPM - MIN_BPM) / COARSE_STEP_BPM).round() as usize;
    let scores: Vec<Candidate> = (0..=n_coarse)
        .map(|k| {
            evaluate(
                &coarse,
                MIN_BPM + k as f64 * COARSE_STEP_BPM,
                COARSE_PHASE_MS,
            )
        })
        .collect();
    // local maxima of the coarse curve, strongest first
    let mut peaks: Vec<Candidate> = (0..scores.len())
        .filter(|&k| {
            let s = scores[k].score;
            (k == 0 || s >= scores[k - 1].score)
                && (k + 1 == scores.len() || s > scores[k + 1].score)
        })
        .map(|k| scores[k])
        .collect();
    peaks.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.bpm.total_cmp(&b.bpm)));
    peaks.truncate(FINE_CANDIDATES);

    let fine = SmoothedOnsets::new(envelope, FINE_SIGMA_MS);
    let best = peaks
        .iter()
        .map(|p| refine(&fine, p.bpm))
        .fold(None, |acc: Option<Candidate>, c| match acc {
            Some(a) if a.score >= c.score => Some(a),
            _ => Some(c),
        })
        .expect("coarse curve has a maximum");
    let chosen = octave_choice(&SmoothedOnsets::new(envelope, TIE_SIGMA_MS), &fine, best);
    let period_s = 60.0 / chosen.bpm;
    Ok(TempoEstimate {
        bpm: chosen.bpm,
        offset_s: (chosen.phase_ms / 1000.0).rem_euclid(period_s),
        confidence: (chosen.sum / energy).clamp(0.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audiofeat::{featurize, synth, MEL_BANDS};

    fn envelope_of(clip: &crate::audiofeat::AudioClip) -> Vec<f32> {
        onset_envelope(&featurize(clip, MEL_BANDS).unwrap())
    }

    #[test]
    fn silence_gives_zero_envelope_and_an_error() {
        let env = envelope_of(&synth::silence(5.0));
        assert!(env.iter().all(|&e| e == 0.0));
        assert_eq!(estimate_tempo(&env), Err(TempoError::Degenerate));
        assert!(matches!(
            estimate_tempo(&env[..100]),
            Err(TempoError::TooShort { .. })
        ));
    }

    #[test]
    fn single_click_peak_location() {
        let mut clip = synth::silence(1.0);
        synth::add_click(&mut clip, 0.437, 0.5);
        let env = envelope_of(&clip);
        let (argmax, &peak) = env
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap();
        assert!(
            (argmax as f64 - 43.7).abs() <= 1.0,
            "peak at frame {argmax}"
        );
        let second = env
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != argmax)
            .map(|(_, &v)| v)
            .fold(0.0f32, f32::max);
        assert!(second < peak * 0.8, "peak not unique: {second} vs {peak}");
    }

    #[test]
    fn two_equal_clicks_give_equal_peaks() {
        let mut clip = synth::silence(1.5);
        synth::add_click(&mut clip, 0.5, 0.5);
        synth::add_click(&mut clip, 1.0, 0.5);
        let env = envelope_of(&clip);
        let a = env[45..56].iter().cloned().fold(0.0f32, f32::max);
        let b = env[95..106].iter().cloned().fold(0.0f32, f32::max);
        assert!((a / b - 1.0).abs() < 0.05, "{a} vs {b}");
    }

    #[test]
    fn click_track_at_120() {
        let env = envelope_of(&synth::click_track(120.0, 0.0, 20.0, 0.5));
        let est = estimate_tempo(&env).unwrap();
        assert!((est.bpm - 120.0).abs() <= 0.05, "{est:?}");
        let period = 0.5;
        let d = est.offset_s.rem_euclid(period);
        assert!(d.min(period - d) <= 0.010, "{est:?}");
        assert!(est.confidence > 0.0 && est.confidence <= 1.0);
    }

    #[test]
    fn octave_policy_prefers_mid_band() {
        // 140 scores about half of 70 per tooth, so 70 stays; 100 ties 200
        // and both sit in the preferred band, so the larger wins.
        let env = envelope_of(&synth::click_track(70.0, 0.1, 20.0, 0.5));
        let est = estimate_tempo(&env).unwrap();
        assert!((est.bpm - 70.0).abs() <= 0.05, "{est:?}");
        let env = envelope_of(&synth::click_track(200.0, 0.1, 20.0, 0.5));
        let est = estimate_tempo(&env).unwrap();
        assert!((est.bpm - 200.0).abs() <= 0.05, "{est:?}");
    }
}
