use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stepsmith::audiofeat::{MelSpectrogram, CHANNELS, HOP_S};
use stepsmith::models::{
    generate_steps, symbol_mask, SamplingConfig, SelectionConfig, SelectionModel,
};
use stepsmith::pipeline::difficulty::MIN_DIFFICULTY;
use stepsmith::pipeline::{default_difficulty, plan_difficulties};
use stepsmith::simfile::{check_hold_pairing, StepSymbol, COLUMNS, SYMBOL_COUNT};
use stepsmith::tempo::TempoEstimate;

fn noise_spec(bands: usize, seed: u64) -> Arc<MelSpectrogram> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = 1500;
    Arc::new(MelSpectrogram {
        frames,
        bands,
        data: (0..frames * bands * CHANNELS)
            .map(|_| rng.gen_range(-3.0..1.0))
            .collect(),
        hop_s: HOP_S,
        band_centers: vec![0.0; bands],
    })
}

/// A toy selection model whose output layer is random, so its distribution
/// is far from uniform.
fn random_model(seed: u64) -> SelectionModel {
    let mut m = SelectionModel::new(SelectionConfig::toy(), seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for name in ["selection.out.w", "selection.out.b"] {
        let id = m
            .params
            .id(name)
            .unwrap_or_else(|| panic!("no parameter {name}"));
        for v in &mut m.params.get_mut(id).data {
            *v = rng.gen_range(-3.0..3.0);
        }
    }
    m
}

fn tempo() -> TempoEstimate {
    TempoEstimate {
        bpm: 150.0,
        offset_s: 0.05,
        confidence: 1.0,
    }
}

fn placements() -> impl Strategy<Value = Vec<(usize, usize)>> {
    prop::collection::vec((0usize..30, 0usize..48), 0..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn generated_rows_are_valid(
        places in placements(),
        model_seed in 0u64..1000,
        seed in any::<u64>(),
        temperature in prop::sample::select(vec![0.0, 0.5, 1.0, 2.0]),
    ) {
        let m = random_model(model_seed);
        let spec = noise_spec(8, model_seed);
        let rows = generate_steps(&m, &places, &spec, &tempo(), &SamplingConfig { temperature, seed }).unwrap();
        let mut distinct = places.clone();
        distinct.sort_unstable();
        distinct.dedup();
        prop_assert_eq!(rows.len(), distinct.len());
        prop_assert!(rows.windows(2).all(|w| w[0].beat < w[1].beat));
        prop_assert!(rows.iter().all(|r| !r.symbol.is_empty()));
        prop_assert!(check_hold_pairing(&rows).is_ok());
    }

    #[test]
    fn zero_temperature_ignores_the_seed(places in placements(), model_seed in 0u64..1000, a in any::<u64>(), b in any::<u64>()) {
        let m = random_model(model_seed);
        let spec = noise_spec(8, model_seed);
        let run = |seed| generate_steps(&m, &places, &spec, &tempo(), &SamplingConfig { temperature: 0.0, seed }).unwrap();
        prop_assert_eq!(run(a), run(b));
    }

    #[test]
    fn sampling_is_reproducible(places in placements(), model_seed in 0u64..1000, seed in any::<u64>()) {
        let m = random_model(model_seed);
        let spec = noise_spec(8, model_seed);
        let cfg = SamplingConfig { temperature: 1.0, seed };
        prop_assert_eq!(
            generate_steps(&m, &places, &spec, &tempo(), &cfg).unwrap(),
            generate_steps(&m, &places, &spec, &tempo(), &cfg).unwrap()
        );
    }
}

#[test]
fn every_hold_state_has_a_legal_move_that_keeps_holds_paired() {
    for bits in 0u8..16 {
        let held: [bool; COLUMNS] = std::array::from_fn(|c| bits >> c & 1 == 1);
        for last in [false, true] {
            let mask = symbol_mask(held, last);
            assert!(mask.iter().any(|&a| a), "{held:?} last={last}");
            for (i, _) in mask.iter().enumerate().filter(|(_, &a)| a) {
                let d = StepSymbol::from_index(i as u8).digits();
                for c in 0..COLUMNS {
                    let next = match d[c] {
                        2 => true,
                        3 => false,
                        _ => held[c],
                    };
                    // releases only on held columns, starts only on free ones
                    assert!(d[c] != 3 || held[c]);
                    assert!(!(held[c] && (d[c] == 1 || d[c] == 2)));
                    if last {
                        assert!(!next, "{held:?} leaves column {c} open after the last row");
                    }
                }
            }
        }
    }
    assert_eq!(
        symbol_mask([false; COLUMNS], false)
            .iter()
            .filter(|&&a| a)
            .count(),
        3usize.pow(4) - 1
    );
    assert_eq!(SYMBOL_COUNT, 256);
}

proptest! {
    #[test]
    fn default_plan_steps_down_by_one(bpm in 60.0f64..240.0, minutes in 0.05f64..20.0) {
        let d = default_difficulty(bpm, minutes);
        prop_assert!(d >= MIN_DIFFICULTY);
        prop_assert!(default_difficulty(bpm + 10.0, minutes) >= d);
        prop_assert!(default_difficulty(bpm, minutes * 2.0) >= d);
        let plan = plan_difficulties(d, None).unwrap();
        prop_assert_eq!(plan.entries[0].1, d);
        prop_assert!(plan.entries.windows(2).all(|w| w[0].1 == w[1].1 + 1));
        prop_assert!(plan.entries[4].1 >= 1);
    }
}
