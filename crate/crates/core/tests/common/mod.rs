//! Generators and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use rand::Rng;
use stepsmith::simfile::{
    BpmSegment, Chart, CoarseDifficulty, Row, Simfile, StepSymbol, StopSegment,
};

const COARSE: [CoarseDifficulty; 5] = [
    CoarseDifficulty::Beginner,
    CoarseDifficulty::Easy,
    CoarseDifficulty::Medium,
    CoarseDifficulty::Hard,
    CoarseDifficulty::Challenge,
];

/// A chart on the 1/48 grid whose holds are all closed.
pub fn random_chart<R: Rng>(rng: &mut R, coarse: CoarseDifficulty, max_rows: usize) -> Chart {
    let n = rng.gen_range(0..=max_rows);
    let mut ticks = 0u32;
    let mut open = [false; 4];
    let mut rows = Vec::with_capacity(n + 1);
    for i in 0..n {
        ticks += rng.gen_range(1..=48);
        let last = i + 1 == n;
        let mut digits = [0u8; 4];
        for (c, d) in digits.iter_mut().enumerate() {
            *d = if open[c] {
                if last || rng.gen_bool(0.5) {
                    open[c] = false;
                    3
                } else {
                    0
                }
            } else {
                match rng.gen_range(0..6) {
                    0 | 1 => 1,
                    2 if !last => {
                        open[c] = true;
                        2
                    }
                    _ => 0,
                }
            };
        }
        if digits == [0; 4] {
            digits[rng.gen_range(0..4)] = 1;
        }
        rows.push(Row {
            beat: ticks as f64 / 48.0,
            symbol: StepSymbol::from_digits(digits).unwrap(),
        });
    }
    Chart {
        coarse_difficulty: coarse,
        fine_difficulty: rng.gen_range(1..=20),
        rows,
    }
}

pub fn random_simfile<R: Rng>(rng: &mut R) -> Simfile {
    let title: String = (0..rng.gen_range(1..12))
        .map(|_| rng.gen_range(b'a'..=b'z') as char)
        .collect();
    let mut sim = Simfile::constant_bpm(
        &title,
        &format!("{title}.wav"),
        rng.gen_range(600..=2400) as f64 / 10.0,
        rng.gen_range(-500..=500) as f64 / 1000.0,
    );
    let mut beat = 0;
    for _ in 0..rng.gen_range(0..3) {
        beat += rng.gen_range(1..64);
        sim.bpm_segments.push(BpmSegment {
            start_beat: beat as f64,
            bpm: rng.gen_range(600..=2400) as f64 / 10.0,
        });
    }
    for _ in 0..rng.gen_range(0..3) {
        sim.stop_segments.push(StopSegment {
            beat: rng.gen_range(0..64 * 48) as f64 / 48.0,
            duration_s: rng.gen_range(1..=1000) as f64 / 1000.0,
        });
    }
    sim.stop_segments.sort_by(|a, b| a.beat.total_cmp(&b.beat));
    sim.stop_segments.dedup_by(|a, b| a.beat == b.beat);
    let mut coarse = COARSE.to_vec();
    for _ in 0..rng.gen_range(1..=5) {
        let c = coarse.remove(rng.gen_range(0..coarse.len()));
        sim.charts.push(random_chart(rng, c, 60));
    }
    sim
}

/// Precision, recall and F1 straight from the definitions.
pub fn brute_prf(probs: &[f64], targets: &[bool], theta: f64) -> (f64, f64, f64) {
    let predicted: Vec<bool> = probs.iter().map(|&p| p >= theta).collect();
    let tp = predicted
        .iter()
        .zip(targets)
        .filter(|(p, t)| **p && **t)
        .count() as f64;
    let pp = predicted.iter().filter(|&&p| p).count() as f64;
    let ap = targets.iter().filter(|&&t| t).count() as f64;
    let precision = if pp > 0.0 { tp / pp } else { 0.0 };
    let recall = if ap > 0.0 { tp / ap } else { 0.0 };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (precision, recall, f1)
}

/// Best F1 over every threshold in `probs` plus 0.5, by exhaustive search.
pub fn brute_max_f1(probs: &[f64], targets: &[bool]) -> f64 {
    probs
        .iter()
        .chain(&[0.5])
        .map(|&t| brute_prf(probs, targets, t).2)
        .fold(0.0, f64::max)
}

/// Trapezoid under the (recall, precision) points of every distinct
/// threshold, recomputed from scratch at each threshold.
pub fn brute_pr_auc(probs: &[f64], targets: &[bool]) -> Option<f64> {
    if !targets.contains(&true) {
        return None;
    }
    let mut thresholds = probs.to_vec();
    thresholds.sort_by(|a, b| b.total_cmp(a));
    thresholds.dedup();
    let points: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&t| {
            let (p, r, _) = brute_prf(probs, targets, t);
            (r, p)
        })
        .collect();
    let mut area = 0.0;
    let mut prev = (0.0, points[0].1);
    for &(r, p) in &points {
        area += (r - prev.0) * (p + prev.1) / 2.0;
        prev = (r, p);
    }
    Some(area)
}

/// `(accuracy, hold accuracy, step accuracy)` by direct counting.
pub fn brute_selection(pred: &[u8], targets: &[StepSymbol]) -> (f64, Option<f64>, Option<f64>) {
    let rate = |keep: &dyn Fn(&StepSymbol) -> bool| {
        let idx: Vec<usize> = (0..targets.len()).filter(|&i| keep(&targets[i])).collect();
        (!idx.is_empty()).then(|| {
            idx.iter()
                .filter(|&&i| pred[i] == targets[i].index())
                .count() as f64
                / idx.len() as f64
        })
    };
    (
        rate(&|_| true).unwrap(),
        rate(&|t| t.digits().contains(&2)),
        rate(&|t| t.digits().iter().all(|&d| d <= 1)),
    )
}
