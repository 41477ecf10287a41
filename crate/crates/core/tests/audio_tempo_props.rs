use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stepsmith::audiofeat::{
    featurize, mel_project_bands, multiwindow_stft, synth, AudioClip, MelFilterbank, HOP,
    MEL_BANDS, SAMPLE_RATE,
};
use stepsmith::tempo::{estimate_tempo, onset_envelope};

fn noise(samples: usize, seed: u64) -> AudioClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    AudioClip {
        samples: (0..samples).map(|_| rng.gen_range(-0.5..0.5)).collect(),
        sample_rate: SAMPLE_RATE,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn frame_count_depends_only_on_length(samples in HOP..30_000usize, seed in any::<u64>()) {
        let spec = featurize(&noise(samples, seed), 8).unwrap();
        prop_assert_eq!(spec.frames, samples / HOP + 1);
        prop_assert_eq!(spec.data.len(), spec.frames * 8 * 3);
        prop_assert!(spec.data.iter().all(|v| v.is_finite()));
        prop_assert_eq!(featurize(&noise(samples, seed), 8).unwrap(), spec);
    }

    #[test]
    fn spectra_scale_linearly_before_the_log(seed in any::<u64>(), c in 0.05f32..8.0) {
        let x = noise(8000, seed);
        let scaled = AudioClip {
            samples: x.samples.iter().map(|v| v * c).collect(),
            ..x.clone()
        };
        let (a, b) = (multiwindow_stft(&x).unwrap(), multiwindow_stft(&scaled).unwrap());
        for f in [3, 10] {
            for bin in [5, 100, 900] {
                for ch in 0..3 {
                    let (u, v) = (a.get(f, bin, ch) * c, b.get(f, bin, ch));
                    prop_assert!((u - v).abs() <= 1e-4 * u.abs().max(1e-3), "{} vs {}", u, v);
                }
            }
        }
        let (ma, mb) = (mel_project_bands(&a, 16), mel_project_bands(&b, 16));
        for (u, v) in ma.data.iter().zip(&mb.data) {
            // magnitudes, so log-mel shifts by ln c wherever the floor is negligible
            if *u > -20.0 {
                prop_assert!((v - u - c.ln()).abs() < 1e-2, "{} vs {}", u, v);
            }
        }
    }

    #[test]
    fn pure_tones_peak_in_the_nearest_band(freq in 100.0f64..8000.0) {
        let spec = featurize(&synth::sine(freq, 0.3, 0.5), MEL_BANDS).unwrap();
        let centres = MelFilterbank::new(MEL_BANDS).centers_hz;
        let nearest = (0..MEL_BANDS)
            .min_by(|&a, &b| (centres[a] - freq).abs().total_cmp(&(centres[b] - freq).abs()))
            .unwrap();
        let f = spec.frames - 2;
        for ch in 0..3 {
            let best = (0..MEL_BANDS).max_by(|&a, &b| spec.get(f, a, ch).total_cmp(&spec.get(f, b, ch))).unwrap();
            prop_assert!(best.abs_diff(nearest) <= 1, "{} Hz ch {}: {} vs {}", freq, ch, best, nearest);
        }
    }
}

fn tempo(clip: &AudioClip) -> (f64, f64) {
    let t = estimate_tempo(&onset_envelope(&featurize(clip, MEL_BANDS).unwrap())).unwrap();
    (t.bpm, t.offset_s)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    // 30 s clips: onsets are only located to within a 10 ms frame, and on
    // short clips a slow drift of the click phase against the frame grid
    // biases the tempo by up to about bpm * hop / duration
    #[test]
    fn delaying_audio_shifts_the_offset(bpm in 90.0f64..200.0, delay in 0.0f64..0.6) {
        let bpm = (bpm * 10.0).round() / 10.0;
        let (b0, o0) = tempo(&synth::click_track(bpm, 0.2, 30.0, 0.7));
        let (b1, o1) = tempo(&synth::click_track(bpm, 0.2 + delay, 30.0 + delay, 0.7));
        prop_assert!((b0 - bpm).abs() <= 0.05 && (b1 - b0).abs() <= 0.05, "{} {} {}", bpm, b0, b1);
        let period = 60.0 / b0;
        let err = (o1 - o0 - delay + period / 2.0).rem_euclid(period) - period / 2.0;
        prop_assert!(err.abs() <= 0.010, "offset {} -> {} for delay {}", o0, o1, delay);
    }

    #[test]
    fn amplitude_does_not_move_the_tempo(bpm in 90.0f64..200.0, c in 0.02f32..1.5) {
        let clip = synth::click_track(bpm, 0.3, 10.0, 0.6);
        let scaled = AudioClip {
            samples: clip.samples.iter().map(|v| v * c).collect(),
            ..clip.clone()
        };
        prop_assert_eq!(tempo(&clip).0, tempo(&scaled).0);
    }
}
