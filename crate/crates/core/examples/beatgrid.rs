//! Beat-aligned inputs and targets for one synthetic song.

use std::sync::Arc;

use stepsmith::audiofeat::featurize;
use stepsmith::beatgrid::{
    beat_frames, beats_in, make_placement_examples, make_selection_examples, placement_targets,
    simfile_tempo, split_dataset, Split, CONTEXT_BEATS,
};
use stepsmith::pipeline::toy::toy_song;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (clip, sim) = toy_song("grid", "grid.wav", 12);
    let spec = Arc::new(featurize(&clip, 8)?);
    let tempo = simfile_tempo(&sim)?;
    let n = beats_in(clip.duration_s(), &tempo);
    println!(
        "{:.1} BPM, beat 0 at {:.3} s, {n} beats",
        tempo.bpm, tempo.offset_s
    );

    for chart in &sim.charts {
        let frames = Arc::new(beat_frames(&spec, &tempo, n, chart.fine_difficulty)?);
        let targets = placement_targets(chart, n)?;
        let examples = make_placement_examples(frames, &targets, tempo.bpm, chart.fine_difficulty);
        let ex = &examples[0];
        let padded = ex
            .past_beats(CONTEXT_BEATS)
            .iter()
            .filter(|b| b.is_none())
            .count();
        let grid: String = targets.iter().map(|t| format!("{}", t.count())).collect();
        println!(
            "{} {}: steps per beat {grid}; past context {:?} with {padded} padded beats",
            chart.coarse_difficulty.name(),
            chart.fine_difficulty,
            ex.past_ctx(CONTEXT_BEATS).shape,
        );
        let sel = make_selection_examples(chart, &spec, &tempo);
        if let Some(last) = sel.last() {
            println!(
                "  {} selection examples; last history tail {:?}",
                sel.len(),
                &last.history[60..]
            );
        }
    }

    let songs: Vec<String> = (0..20).map(|i| format!("song{i:02}")).collect();
    let split = split_dataset(&songs, 7);
    println!("split of 20: test {:?}", split.members(Split::Test));
    Ok(())
}
