use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;

use super::cache::FeatureCache;
use super::config::PipelineConfig;
use super::dataset::{
    chart_id, chart_placement_examples, load_songs, placement_examples, prepare,
    selection_examples, PreparedSong, Song,
};
use super::difficulty::{default_difficulty, plan_difficulties};
use super::PipelineError;
use crate::audiofeat::{
    apply_normalization, decode_wav, featurize, fit_normalization, MelSpectrogram,
    NormalizationStats, CHANNELS, MEL_BANDS,
};
use crate::beatgrid::{
    beat_frames, beats_in, make_selection_examples, slot_beat, split_dataset, Split,
    SplitAssignment,
};
use crate::evalmetrics::{
    chart_average, difficulty_report, metrics_csv, placement_eval, report_csv, selection_scores,
    ChartMetrics, Grouping, ReportRow,
};
use crate::models::{
    generate_steps, named_tensors, predict_placements, train_placement, train_selection,
    PlacementInput, PlacementModel, SamplingConfig, SelectionInput, SelectionModel, TrainingReport,
};
use crate::neural::{decode_weights, encode_weights, ParamSet, Tensor};
use crate::simfile::{write_simfile, Chart, Simfile, StepSymbol};
use crate::tempo::{estimate_tempo, onset_envelope, TempoEstimate};

const PLACEMENT: &str = "placement";
const SELECTION: &str = "selection";

fn create_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::io(dir, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), PipelineError> {
    std::fs::write(path, bytes).map_err(|e| PipelineError::io(path, e))
}

/// Raw features of every distinct audio file, computed in parallel.
fn song_features(
    cfg: &PipelineConfig,
    songs: &[Song],
) -> Result<(HashMap<PathBuf, MelSpectrogram>, usize), PipelineError> {
    let cache = FeatureCache::new(&cfg.cache_dir);
    let paths: BTreeSet<&PathBuf> = songs.iter().map(|s| &s.audio_path).collect();
    let results: Vec<(PathBuf, MelSpectrogram, bool)> = paths
        .into_par_iter()
        .map(|p| {
            let (spec, hit) = cache.features(p, cfg.bands())?;
            Ok((p.clone(), spec, hit))
        })
        .collect::<Result<_, PipelineError>>()?;
    let hits = results.iter().filter(|r| r.2).count();
    Ok((results.into_iter().map(|(p, s, _)| (p, s)).collect(), hits))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeaturizeSummary {
    pub audio_files: usize,
    pub computed: usize,
    pub cached: usize,
}

/// Fills the feature cache for every song in the dataset.
pub fn cmd_featurize(cfg: &PipelineConfig) -> Result<FeaturizeSummary, PipelineError> {
    let songs = load_songs(&cfg.dataset_dir)?;
    let (features, cached) = song_features(cfg, &songs)?;
    let summary = FeaturizeSummary {
        audio_files: features.len(),
        computed: features.len() - cached,
        cached,
    };
    info!("featurized {summary:?}");
    Ok(summary)
}

struct Dataset {
    songs: Vec<Song>,
    features: HashMap<PathBuf, MelSpectrogram>,
    split: SplitAssignment,
}

impl Dataset {
    fn load(cfg: &PipelineConfig) -> Result<Self, PipelineError> {
        let songs = load_songs(&cfg.dataset_dir)?;
        if songs.is_empty() {
            return Err(PipelineError::NoData("songs"));
        }
        let (features, _) = song_features(cfg, &songs)?;
        let ids: Vec<String> = songs.iter().map(|s| s.id.clone()).collect();
        let split = split_dataset(&ids, cfg.seed);
        Ok(Dataset {
            songs,
            features,
            split,
        })
    }

    fn members(&self, split: Split) -> Vec<&Song> {
        self.songs
            .iter()
            .filter(|s| self.split.get(&s.id) == Some(split))
            .collect()
    }

    fn fit(&self) -> Result<NormalizationStats, PipelineError> {
        let train: Vec<&MelSpectrogram> = self
            .members(Split::Train)
            .iter()
            .map(|s| &self.features[&s.audio_path])
            .collect();
        if train.is_empty() {
            return Err(PipelineError::NoData("training songs"));
        }
        fit_normalization(&train).map_err(|e| PipelineError::audio(&self.songs[0].audio_path, e))
    }

    fn prepare(
        &self,
        songs: &[&Song],
        stats: &NormalizationStats,
    ) -> Result<Vec<PreparedSong>, PipelineError> {
        let mut out = Vec::new();
        for s in songs {
            let spec = apply_normalization(&self.features[&s.audio_path], stats)
                .map_err(|e| PipelineError::audio(&s.audio_path, e))?;
            out.extend(prepare(s, spec));
        }
        Ok(out)
    }
}

fn checkpoint_paths(dir: &Path, kind: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{kind}.ddcl")),
        dir.join(format!("{kind}.meta")),
    )
}

/// Weights plus `norm.mean` / `norm.std`, and a sidecar recording the model
/// configuration they belong to.
fn save_checkpoint(
    dir: &Path,
    kind: &str,
    params: &ParamSet<f32>,
    stats: &NormalizationStats,
    describe: &str,
) -> Result<PathBuf, PipelineError> {
    create_dir(dir)?;
    let mut tensors = named_tensors(params);
    let shape = vec![stats.bands, CHANNELS];
    tensors.push((
        "norm.mean".into(),
        Tensor::new(shape.clone(), stats.mean.clone())?,
    ));
    tensors.push(("norm.std".into(), Tensor::new(shape, stats.std.clone())?));
    let (weights, meta) = checkpoint_paths(dir, kind);
    write_file(&weights, encode_weights(&tensors)?)?;
    write_file(&meta, format!("kind = {kind}\nconfig = {describe}\n"))?;
    Ok(weights)
}

fn read_checkpoint(
    dir: &Path,
    kind: &str,
    describe: &str,
) -> Result<(HashMap<String, Tensor<f32>>, NormalizationStats), PipelineError> {
    let (weights, meta) = checkpoint_paths(dir, kind);
    let fail = |path: &Path, reason: String| PipelineError::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let text = std::fs::read_to_string(&meta).map_err(|e| PipelineError::io(&meta, e))?;
    let stored = text
        .lines()
        .find_map(|l| l.strip_prefix("config = "))
        .ok_or_else(|| fail(&meta, "no config line".into()))?;
    if stored != describe {
        return Err(fail(
            &meta,
            format!("trained with `{stored}`, current configuration is `{describe}`"),
        ));
    }
    let bytes = std::fs::read(&weights).map_err(|e| PipelineError::io(&weights, e))?;
    let named: HashMap<String, Tensor<f32>> = decode_weights(&bytes)
        .map_err(|e| fail(&weights, e.to_string()))?
        .into_iter()
        .collect();
    let stat = |name: &str| -> Result<&Tensor<f32>, PipelineError> {
        named
            .get(name)
            .ok_or_else(|| fail(&weights, format!("missing {name}")))
    };
    let (mean, std) = (stat("norm.mean")?, stat("norm.std")?);
    if mean.shape.len() != 2 || mean.shape != std.shape || mean.shape[1] != CHANNELS {
        return Err(fail(
            &weights,
            format!("normalization shape {:?}", mean.shape),
        ));
    }
    let stats = NormalizationStats {
        bands: mean.shape[0],
        mean: mean.data.clone(),
        std: std.data.clone(),
    };
    Ok((named, stats))
}

pub fn load_placement(
    cfg: &PipelineConfig,
) -> Result<(PlacementModel, NormalizationStats), PipelineError> {
    let mut model = PlacementModel::new(cfg.placement_config(), 0)?;
    let (named, stats) = read_checkpoint(cfg.checkpoints(), PLACEMENT, &model.config.describe())?;
    model.params.load_from(&named)?;
    Ok((model, stats))
}

pub fn load_selection(
    cfg: &PipelineConfig,
) -> Result<(SelectionModel, NormalizationStats), PipelineError> {
    let mut model = SelectionModel::new(cfg.selection_config(), 0)?;
    let (named, stats) = read_checkpoint(cfg.checkpoints(), SELECTION, &model.config.describe())?;
    model.params.load_from(&named)?;
    Ok((model, stats))
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainingReport,
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
}

fn finish_training(
    cfg: &PipelineConfig,
    kind: &str,
    params: &ParamSet<f32>,
    stats: &NormalizationStats,
    describe: &str,
    report: TrainingReport,
) -> Result<TrainOutcome, PipelineError> {
    let checkpoint = save_checkpoint(&cfg.out_dir, kind, params, stats, describe)?;
    let curve = cfg.out_dir.join(format!("{kind}_training.csv"));
    write_file(&curve, report.to_csv())?;
    info!(
        "{kind}: {} steps, best epoch {}, checkpoint {}",
        report.steps,
        report.best_epoch,
        checkpoint.display()
    );
    Ok(TrainOutcome {
        report,
        checkpoint,
        curve,
    })
}

pub fn cmd_train_placement(cfg: &PipelineConfig) -> Result<TrainOutcome, PipelineError> {
    let data = Dataset::load(cfg)?;
    let stats = data.fit()?;
    let train = placement_examples(&data.prepare(&data.members(Split::Train), &stats)?)?;
    let valid = placement_examples(&data.prepare(&data.members(Split::Valid), &stats)?)?;
    if train.is_empty() {
        return Err(PipelineError::NoData("placement examples"));
    }
    info!(
        "placement: {} train / {} valid beats",
        train.len(),
        valid.len()
    );
    let mut model = PlacementModel::new(cfg.placement_config(), cfg.seed)?;
    let report = train_placement(&mut model, &train, &valid, &cfg.placement_train())?;
    finish_training(
        cfg,
        PLACEMENT,
        &model.params,
        &stats,
        &model.config.describe(),
        report,
    )
}

pub fn cmd_train_selection(cfg: &PipelineConfig) -> Result<TrainOutcome, PipelineError> {
    let data = Dataset::load(cfg)?;
    let stats = data.fit()?;
    let train = selection_examples(&data.prepare(&data.members(Split::Train), &stats)?, true);
    let valid = selection_examples(&data.prepare(&data.members(Split::Valid), &stats)?, false);
    if train.is_empty() {
        return Err(PipelineError::NoData("selection examples"));
    }
    info!(
        "selection: {} train / {} valid steps",
        train.len(),
        valid.len()
    );
    let mut model = SelectionModel::new(cfg.selection_config(), cfg.seed)?;
    let report = train_selection(&mut model, &train, &valid, &cfg.selection_train())?;
    finish_training(
        cfg,
        SELECTION,
        &model.params,
        &stats,
        &model.config.describe(),
        report,
    )
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    /// Chart-averaged placement metrics.
    pub placement: Vec<ReportRow>,
    /// Chart-averaged selection metrics.
    pub selection: Vec<ReportRow>,
    pub charts: usize,
}

impl EvalSummary {
    pub fn placement_metric(&self, name: &str) -> Option<f64> {
        self.placement
            .iter()
            .find(|r| r.metric == name)
            .map(|r| r.value)
    }

    pub fn selection_metric(&self, name: &str) -> Option<f64> {
        self.selection
            .iter()
            .find(|r| r.metric == name)
            .map(|r| r.value)
    }
}

fn placement_chart_metrics(
    model: &PlacementModel,
    p: &PreparedSong,
) -> Result<Vec<ChartMetrics>, PipelineError> {
    let mut out = Vec::new();
    for chart in &p.song.sim.charts {
        let examples = chart_placement_examples(p, chart)?;
        if examples.is_empty() {
            continue;
        }
        let outputs = examples
            .par_iter()
            .map(|ex| model.predict(&PlacementInput::from_example(ex, model.config.context)))
            .collect::<Result<Vec<_>, _>>()?;
        let probs: Vec<f64> = outputs.iter().flatten().map(|&v| v as f64).collect();
        let targets: Vec<bool> = examples.iter().flat_map(|ex| ex.target.slots).collect();
        let eval = placement_eval(&probs, &targets)?;
        out.push(ChartMetrics::new(
            &chart_id(&p.song, chart),
            chart.fine_difficulty,
            chart.coarse_difficulty,
            eval.metrics(),
        ));
    }
    Ok(out)
}

fn selection_chart_metrics(
    model: &SelectionModel,
    p: &PreparedSong,
) -> Result<Vec<ChartMetrics>, PipelineError> {
    let mut out = Vec::new();
    for chart in &p.song.sim.charts {
        let examples = make_selection_examples(chart, &p.spec, &p.tempo);
        if examples.is_empty() {
            continue;
        }
        let dists: Vec<Vec<f64>> = examples
            .par_iter()
            .map(|ex| {
                let d = model.predict(&SelectionInput::from_example(ex))?;
                Ok(d.into_iter().map(f64::from).collect())
            })
            .collect::<Result<_, PipelineError>>()?;
        let preds: Vec<u8> = dists
            .iter()
            .map(|d| {
                let best = d.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                d.iter().position(|&v| v == best).unwrap_or(0) as u8
            })
            .collect();
        let targets: Vec<StepSymbol> = chart.rows[1..].iter().map(|r| r.symbol).collect();
        let eval = selection_scores(&preds, Some(&dists), &targets)?;
        out.push(ChartMetrics::new(
            &chart_id(&p.song, chart),
            chart.fine_difficulty,
            chart.coarse_difficulty,
            eval.metrics(),
        ));
    }
    Ok(out)
}

fn write_reports(
    cfg: &PipelineConfig,
    kind: &str,
    charts: &[ChartMetrics],
) -> Result<(), PipelineError> {
    let dir = &cfg.out_dir;
    write_file(
        &dir.join(format!("{kind}_metrics.csv")),
        metrics_csv(charts),
    )?;
    write_file(
        &dir.join(format!("{kind}_by_fine.csv")),
        report_csv(&difficulty_report(charts, Grouping::Fine)),
    )?;
    write_file(
        &dir.join(format!("{kind}_by_coarse.csv")),
        report_csv(&difficulty_report(charts, Grouping::Coarse)),
    )
}

/// Scores both checkpoints on the test split. Datasets too small to hold a
/// test split are scored in full.
pub fn cmd_evaluate(cfg: &PipelineConfig) -> Result<EvalSummary, PipelineError> {
    let data = Dataset::load(cfg)?;
    let mut songs = data.members(Split::Test);
    if songs.is_empty() {
        warn!("no test split; evaluating every song");
        songs = data.songs.iter().collect();
    }
    let (placement, p_stats) = load_placement(cfg)?;
    let (selection, s_stats) = load_selection(cfg)?;
    let mut p_charts = Vec::new();
    for p in data.prepare(&songs, &p_stats)? {
        p_charts.extend(placement_chart_metrics(&placement, &p)?);
    }
    let mut s_charts = Vec::new();
    for p in data.prepare(&songs, &s_stats)? {
        s_charts.extend(selection_chart_metrics(&selection, &p)?);
    }
    create_dir(&cfg.out_dir)?;
    write_reports(cfg, PLACEMENT, &p_charts)?;
    write_reports(cfg, SELECTION, &s_charts)?;
    Ok(EvalSummary {
        placement: chart_average(&p_charts),
        selection: chart_average(&s_charts),
        charts: p_charts.len(),
    })
}

fn read_audio(path: &Path) -> Result<crate::audiofeat::AudioClip, PipelineError> {
    let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
    decode_wav(&bytes).map_err(|e| PipelineError::audio(path, e))
}

fn tempo_of(
    path: &Path,
    clip: &crate::audiofeat::AudioClip,
) -> Result<TempoEstimate, PipelineError> {
    let spec = featurize(clip, MEL_BANDS).map_err(|e| PipelineError::audio(path, e))?;
    Ok(estimate_tempo(&onset_envelope(&spec))?)
}

pub fn cmd_tempo(audio: &Path) -> Result<TempoEstimate, PipelineError> {
    tempo_of(audio, &read_audio(audio)?)
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub path: PathBuf,
    pub simfile: Simfile,
    pub tempo: TempoEstimate,
}

/// Tempo, difficulty plan, placement and selection for one WAV; writes
/// `<out_dir>/<stem>.sm`.
pub fn cmd_generate(cfg: &PipelineConfig, audio: &Path) -> Result<Generated, PipelineError> {
    let clip = read_audio(audio)?;
    let duration = clip.duration_s();
    let tempo = tempo_of(audio, &clip)?;
    let d = cfg
        .difficulty
        .unwrap_or_else(|| default_difficulty(tempo.bpm, duration / 60.0));
    let plan = plan_difficulties(d, cfg.difficulties.as_deref())?;
    info!(
        "tempo {:.2} BPM, offset {:.3} s, difficulty {d}",
        tempo.bpm, tempo.offset_s
    );

    let (placement, p_stats) = load_placement(cfg)?;
    let (selection, s_stats) = load_selection(cfg)?;
    let raw = featurize(&clip, cfg.bands()).map_err(|e| PipelineError::audio(audio, e))?;
    let norm = |stats| apply_normalization(&raw, stats).map_err(|e| PipelineError::audio(audio, e));
    let p_spec = norm(&p_stats)?;
    let s_spec = Arc::new(norm(&s_stats)?);
    let n_beats = beats_in(duration, &tempo);

    let charts = plan
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, &(coarse, fine))| {
            let frames = Arc::new(beat_frames(&p_spec, &tempo, n_beats, fine)?);
            let placements: Vec<(usize, usize)> =
                predict_placements(&placement, &frames, tempo.bpm, fine, cfg.threshold)?
                    .into_iter()
                    .filter(|&(b, k)| tempo.beat_time(slot_beat(b, k)) <= duration)
                    .collect();
            if placements.is_empty() {
                warn!(
                    "{} {fine}: no placements above threshold {}",
                    coarse.name(),
                    cfg.threshold
                );
            }
            let sampling = SamplingConfig {
                temperature: cfg.temperature,
                seed: cfg.seed.wrapping_add(i as u64),
            };
            let rows = generate_steps(&selection, &placements, &s_spec, &tempo, &sampling)?;
            Ok(Chart {
                coarse_difficulty: coarse,
                fine_difficulty: fine,
                rows,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;

    let stem = audio
        .file_stem()
        .map_or_else(|| "song".to_string(), |s| s.to_string_lossy().into_owned());
    let music = audio
        .file_name()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let mut sim = Simfile::constant_bpm(&stem, &music, tempo.bpm, -tempo.offset_s);
    sim.charts = charts;
    let text = write_simfile(&sim).map_err(|source| PipelineError::Simfile {
        path: audio.to_path_buf(),
        source,
    })?;
    create_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join(format!("{stem}.sm"));
    write_file(&path, text)?;
    Ok(Generated {
        path,
        simfile: sim,
        tempo,
    })
}
