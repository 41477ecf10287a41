use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::selection::argmax;
use super::{ModelError, SelectionInput, SelectionModel};
use crate::audiofeat::MelSpectrogram;
use crate::beatgrid::{selection_example, slot_beat};
use crate::simfile::{Row, StepSymbol, COLUMNS, SYMBOL_COUNT};
use crate::tempo::TempoEstimate;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingConfig {
    /// 0 selects the most probable symbol.
    pub temperature: f64,
    pub seed: u64,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig {
            temperature: 1.0,
            seed: 0,
        }
    }
}

/// Symbols allowed given which columns hold a note. Empty rows are never
/// allowed; held columns accept only nothing or a release, free columns
/// anything but a release. At the `last` row no hold may start and every
/// held column must release.
pub fn symbol_mask(held: [bool; COLUMNS], last: bool) -> [bool; SYMBOL_COUNT] {
    let mut allowed = [false; SYMBOL_COUNT];
    for (i, a) in allowed.iter_mut().enumerate() {
        let s = StepSymbol::from_index(i as u8);
        if s.is_empty() {
            continue;
        }
        *a = s.digits().iter().zip(held).all(|(&d, h)| match (h, last) {
            (true, false) => d == 0 || d == 3,
            (true, true) => d == 3,
            (false, false) => d != 3,
            (false, true) => d <= 1,
        });
    }
    allowed
}

fn choose(
    p: &[f32],
    allowed: &[bool; SYMBOL_COUNT],
    temperature: f64,
    rng: &mut ChaCha8Rng,
) -> usize {
    let masked: Vec<f32> = p
        .iter()
        .zip(allowed)
        .map(|(&v, &a)| if a { v } else { f32::NEG_INFINITY })
        .collect();
    let best = argmax(&masked);
    if temperature <= 0.0 || !(p[best] > 0.0) {
        return best;
    }
    let top = (p[best] as f64).ln();
    let weights: Vec<f64> = masked
        .iter()
        .map(|&v| {
            if v > 0.0 {
                (((v as f64).ln() - top) / temperature).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if !(total.is_finite() && total > 0.0) {
        return best;
    }
    let mut u = rng.gen::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            if u < w {
                return i;
            }
            u -= w;
        }
    }
    // rounding left u just past the last positive weight
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(best)
}

/// Picks a symbol for each placement in time order, feeding earlier picks
/// back as history. Placements are `(beat, slot)` pairs.
pub fn generate_steps(
    model: &SelectionModel,
    placements: &[(usize, usize)],
    spec: &Arc<MelSpectrogram>,
    tempo: &TempoEstimate,
    sampling: &SamplingConfig,
) -> Result<Vec<Row>, ModelError> {
    let mut placements = placements.to_vec();
    placements.sort_unstable();
    placements.dedup();
    let beats: Vec<f64> = placements.iter().map(|&(b, k)| slot_beat(b, k)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(sampling.seed);
    let mut symbols: Vec<StepSymbol> = Vec::with_capacity(beats.len());
    let mut held = [false; COLUMNS];
    for t in 0..beats.len() {
        let ex = selection_example(&beats, &symbols, t, spec, tempo);
        let p = model.predict(&SelectionInput::from_example(&ex))?;
        let allowed = symbol_mask(held, t + 1 == beats.len());
        let s = StepSymbol::from_index(choose(&p, &allowed, sampling.temperature, &mut rng) as u8);
        for (h, d) in held.iter_mut().zip(s.digits()) {
            match d {
                2 => *h = true,
                3 => *h = false,
                _ => {}
            }
        }
        symbols.push(s);
    }
    Ok(beats
        .into_iter()
        .zip(symbols)
        .map(|(beat, symbol)| Row { beat, symbol })
        .collect())
}
