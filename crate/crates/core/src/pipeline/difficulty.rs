use super::PipelineError;
use crate::simfile::CoarseDifficulty;

/// Smallest default difficulty; keeps the easiest chart at 1 or above.
pub const MIN_DIFFICULTY: u32 = 5;

/// `round(floor(bpm / 10) - (4 - log2(minutes)))`, at least `MIN_DIFFICULTY`.
pub fn default_difficulty(bpm: f64, length_minutes: f64) -> u32 {
    let raw = (bpm / 10.0).floor() - (4.0 - length_minutes.log2());
    if raw.is_finite() && raw > MIN_DIFFICULTY as f64 {
        raw.round() as u32
    } else {
        MIN_DIFFICULTY
    }
}

/// Five charts from hardest to easiest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DifficultyPlan {
    pub entries: [(CoarseDifficulty, u32); 5],
}

/// Coarse names hardest first.
const PLAN_ORDER: [CoarseDifficulty; 5] = [
    CoarseDifficulty::Challenge,
    CoarseDifficulty::Hard,
    CoarseDifficulty::Medium,
    CoarseDifficulty::Easy,
    CoarseDifficulty::Beginner,
];

/// `d, d-1, .., d-4`, or `overrides`, which must be at least 1 and strictly
/// descending.
pub fn plan_difficulties(
    d: u32,
    overrides: Option<&[u32]>,
) -> Result<DifficultyPlan, PipelineError> {
    let fine: [u32; 5] = match overrides {
        Some(o) => {
            let fine: [u32; 5] = o.try_into().map_err(|_| {
                PipelineError::Config(format!(
                    "difficulty overrides need 5 values, got {}",
                    o.len()
                ))
            })?;
            if fine[4] < 1 || fine.windows(2).any(|w| w[0] <= w[1]) {
                return Err(PipelineError::Config(format!(
                    "difficulty overrides {fine:?} must be at least 1 and strictly descending"
                )));
            }
            fine
        }
        None if d >= MIN_DIFFICULTY => [d, d - 1, d - 2, d - 3, d - 4],
        None => {
            return Err(PipelineError::Config(format!(
                "difficulty {d} is below {MIN_DIFFICULTY}"
            )))
        }
    };
    Ok(DifficultyPlan {
        entries: [0, 1, 2, 3, 4].map(|i| (PLAN_ORDER[i], fine[i])),
    })
}
