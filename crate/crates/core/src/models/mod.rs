//! The placement and selection networks and their training regimen.

mod generate;
mod placement;
mod selection;

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::evalmetrics::MetricError;
use crate::neural::{
    adam_step, AdamState, EarlyStopper, Gradients, Graph, NeuralError, ParamSet, PlateauScheduler,
    StopDecision, Tensor, Var,
};

pub use generate::{generate_steps, symbol_mask, SamplingConfig};
pub use placement::{
    placement_probabilities, predict_placements, threshold_placements, train_placement,
    PlacementConfig, PlacementInput, PlacementModel,
};
pub use selection::{train_selection, SelectionConfig, SelectionInput, SelectionModel};

/// Auxiliary inputs are divided by these before entering the networks.
pub const BPM_SCALE: f32 = 240.0;
pub const DIFFICULTY_SCALE: f32 = 20.0;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("non-finite training loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        loss: f64,
    },
    #[error("no training examples")]
    EmptyDataset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub max_epochs: usize,
    /// Hard cap on optimizer steps across all epochs.
    pub max_steps: Option<usize>,
    pub warmup: usize,
    pub patience: usize,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
}

impl TrainConfig {
    pub fn placement() -> Self {
        TrainConfig {
            seed: 0,
            lr: 1e-3,
            batch_size: 32,
            batches_per_epoch: 400,
            max_epochs: 1000,
            max_steps: None,
            warmup: 100,
            patience: 20,
            plateau_factor: 0.5,
            plateau_patience: 5,
        }
    }

    pub fn selection() -> Self {
        TrainConfig {
            batch_size: 64,
            ..Self::placement()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: Option<f64>,
    pub valid_metric: Option<f64>,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingReport {
    /// CSV column name of `valid_metric`.
    pub metric_name: &'static str,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub steps: usize,
    pub stopped_early: bool,
}

impl TrainingReport {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |v| format!("{v}"));
        let mut out = format!("epoch,train_loss,valid_loss,{},lr\n", self.metric_name);
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{},{}",
                e.epoch,
                e.train_loss,
                opt(e.valid_loss),
                opt(e.valid_metric),
                e.lr
            );
        }
        out
    }
}

/// Validation summary used to rank epochs: higher `primary` wins, then
/// lower `loss`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Score {
    primary: f64,
    loss: f64,
}

fn score_improves(new: &Score, best: &Score) -> bool {
    new.primary > best.primary || (new.primary == best.primary && new.loss < best.loss)
}

/// A network trainable by the shared loop.
trait Trainable: Sync {
    type Input: Sync;

    fn params(&self) -> &ParamSet<f32>;
    fn params_mut(&mut self) -> &mut ParamSet<f32>;

    /// Scalar training loss of one example; dropout is active iff `rng` is set.
    fn loss(
        &self,
        g: &mut Graph<'_, f32>,
        input: &Self::Input,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, NeuralError>;
}

/// Validation results for one epoch: `(loss, reported metric, ranking score)`.
type Validation = (Option<f64>, Option<f64>, Option<f64>);

fn example_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mini-batch Adam with plateau halving, early stopping and best-weight
/// retention. Per-example gradients are computed in parallel and summed in
/// batch order, so results do not depend on the thread count.
fn train_loop<M: Trainable>(
    model: &mut M,
    train: &[M::Input],
    cfg: &TrainConfig,
    metric_name: &'static str,
    validate: impl Fn(&M) -> Result<Validation, ModelError>,
) -> Result<TrainingReport, ModelError> {
    if train.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut adam = AdamState::new(model.params(), cfg.lr);
    let mut batches = crate::beatgrid::batch_iterator(train.len(), cfg.batch_size, cfg.seed);
    let mut plateau =
        PlateauScheduler::with_comparator(cfg.plateau_factor, cfg.plateau_patience, score_improves);
    let mut stopper = EarlyStopper::with_comparator(cfg.warmup, cfg.patience, score_improves);
    let mut best: Option<(Score, usize, ParamSet<f32>)> = None;
    let mut report = TrainingReport {
        metric_name,
        epochs: Vec::new(),
        best_epoch: 0,
        steps: 0,
        stopped_early: false,
    };
    let chunk = rayon::current_num_threads().max(1);

    for epoch in 1..=cfg.max_epochs {
        if cfg.max_steps.is_some_and(|m| report.steps >= m) {
            break;
        }
        let lr = adam.lr;
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for _ in 0..cfg.batches_per_epoch {
            if cfg.max_steps.is_some_and(|m| report.steps >= m) {
                break;
            }
            let batch = batches.next_batch();
            let scale = 1.0 / batch.len() as f32;
            let mut total = Gradients::zeros_like(model.params());
            let mut batch_loss = 0.0f64;
            let base = (report.steps * cfg.batch_size) as u64;
            let params = model.params();
            for (c, ids) in batch.chunks(chunk).enumerate() {
                let results: Vec<Result<(f32, Gradients<f32>), NeuralError>> = ids
                    .par_iter()
                    .enumerate()
                    .map(|(j, &i)| {
                        let mut rng = example_rng(cfg.seed, base + (c * chunk + j) as u64);
                        let mut g = Graph::new(params);
                        let loss = model.loss(&mut g, &train[i], Some(&mut rng))?;
                        Ok((g.scalar(loss), g.backward(loss)))
                    })
                    .collect();
                for r in results {
                    let (l, grads) = r?;
                    batch_loss += l as f64;
                    total.accumulate(&grads, scale);
                }
            }
            let mean = batch_loss / batch.len() as f64;
            if !mean.is_finite() {
                return Err(ModelError::NonFiniteLoss {
                    epoch,
                    step: report.steps + 1,
                    loss: mean,
                });
            }
            adam_step(&mut adam, model.params_mut(), &total)?;
            report.steps += 1;
            loss_sum += mean;
            loss_count += 1;
        }
        if loss_count == 0 {
            break;
        }
        let train_loss = loss_sum / loss_count as f64;
        let (valid_loss, valid_metric, rank) = validate(model)?;
        let score = match (valid_loss, rank) {
            (Some(l), r) => Score {
                primary: r.unwrap_or(f64::NEG_INFINITY),
                loss: l,
            },
            (None, _) => Score {
                primary: f64::NEG_INFINITY,
                loss: train_loss,
            },
        };
        report.epochs.push(EpochRecord {
            epoch,
            train_loss,
            valid_loss,
            valid_metric,
            lr,
        });
        if best
            .as_ref()
            .map_or(true, |(b, _, _)| score_improves(&score, b))
        {
            best = Some((score, epoch, model.params().clone()));
        }
        adam.lr *= plateau.observe(score);
        if let StopDecision::Stop { .. } = stopper.observe(score) {
            report.stopped_early = true;
            break;
        }
    }
    if let Some((_, epoch, params)) = best {
        *model.params_mut() = params;
        report.best_epoch = epoch;
    }
    Ok(report)
}

/// Loss of every input in inference mode, in input order.
fn eval_losses<M: Trainable>(model: &M, inputs: &[M::Input]) -> Result<Vec<f64>, ModelError> {
    inputs
        .par_iter()
        .map(|x| {
            let mut g = Graph::new(model.params());
            let l = model.loss(&mut g, x, None)?;
            Ok(g.scalar(l) as f64)
        })
        .collect()
}

/// Named tensors of a parameter set, in registration order.
pub fn named_tensors(params: &ParamSet<f32>) -> Vec<(String, Tensor<f32>)> {
    params
        .iter()
        .map(|(_, name, t)| (name.to_string(), t.clone()))
        .collect()
}

/// Splits `[n, rest..]` into `n` tensors of shape `rest`.
fn unstack(t: &Tensor<f32>) -> Vec<Tensor<f32>> {
    let rest = t.shape[1..].to_vec();
    let per: usize = rest.iter().product();
    t.data
        .chunks_exact(per.max(1))
        .take(t.shape[0])
        .map(|c| Tensor {
            shape: rest.clone(),
            data: c.to_vec(),
        })
        .collect()
}
