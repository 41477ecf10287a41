//! Placement and selection metrics on a hand-made prediction.

use stepsmith::evalmetrics::{max_f1_threshold, placement_eval, selection_scores};
use stepsmith::simfile::StepSymbol;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let probs = [0.92, 0.85, 0.7, 0.62, 0.55, 0.41, 0.33, 0.2, 0.12, 0.05];
    let targets = [
        true, true, false, true, false, true, false, false, false, false,
    ];
    let e = placement_eval(&probs, &targets)?;
    for (name, v) in e.metrics() {
        println!(
            "{name:>14} {}",
            v.map_or("NA".into(), |v| format!("{v:.4}"))
        );
    }
    let (theta, _) = max_f1_threshold(&probs, &targets)?;
    println!("best threshold {theta}");

    let sym = |s: &str| s.parse::<StepSymbol>();
    let truth = [sym("1000")?, sym("0100")?, sym("2000")?, sym("3001")?];
    let pred = [sym("1000")?, sym("0010")?, sym("2000")?, sym("3001")?].map(|s| s.index());
    let s = selection_scores(&pred, None, &truth)?;
    println!(
        "selection accuracy {:.2}, hold {:?}, step {:?}",
        s.accuracy, s.hold_accuracy, s.step_accuracy
    );
    Ok(())
}
