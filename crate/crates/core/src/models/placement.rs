use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{eval_losses, train_loop, unstack, ModelError, TrainConfig, Trainable, TrainingReport};
use super::{BPM_SCALE, DIFFICULTY_SCALE};
use crate::audiofeat::{CHANNELS, MEL_BANDS};
use crate::beatgrid::{BeatFrame, PlacementExample, PlacementVector, SAMPLES_PER_BEAT, SLOTS};
use crate::evalmetrics::pr_auc;
use crate::neural::{
    ConvLstmCell, Dense, Graph, LstmCell, NeuralError, ParamSet, Scalar, Tensor, Var,
};

#[derive(Debug, Clone, PartialEq)]
pub struct PlacementConfig {
    pub bands: usize,
    /// Beats per context branch, the current beat included.
    pub context: usize,
    pub conv_units: [usize; 2],
    /// Frequency pooling width and stride after each ConvLSTM layer.
    pub pool: usize,
    pub lstm_units: usize,
    pub lstm_dropout: f64,
    pub dense_units: [usize; 2],
    pub dense_dropout: f64,
    pub leaky_slope: f64,
}

impl PlacementConfig {
    pub fn full() -> Self {
        PlacementConfig {
            bands: MEL_BANDS,
            context: 16,
            conv_units: [16, 32],
            pool: 3,
            lstm_units: 128,
            lstm_dropout: 0.2,
            dense_units: [512, 256],
            dense_dropout: 0.5,
            leaky_slope: 0.3,
        }
    }

    /// Desk-scale network: 2-beat context over 8 mel bands.
    pub fn toy() -> Self {
        PlacementConfig {
            bands: 8,
            context: 2,
            conv_units: [4, 8],
            pool: 2,
            lstm_units: 16,
            dense_units: [32, 32],
            ..Self::full()
        }
    }

    pub fn pooled_bands(&self) -> usize {
        self.bands / self.pool / self.pool
    }

    /// Width of one flattened ConvLSTM timestep.
    pub fn flat_features(&self) -> usize {
        SAMPLES_PER_BEAT * self.pooled_bands() * self.conv_units[1]
    }

    pub fn describe(&self) -> String {
        format!("placement {self:?}")
    }
}

#[derive(Debug, Clone)]
struct Branch {
    conv: [ConvLstmCell; 2],
    lstm: [LstmCell; 2],
}

impl Branch {
    fn new(
        params: &mut ParamSet<f32>,
        rng: &mut ChaCha8Rng,
        name: &str,
        cfg: &PlacementConfig,
    ) -> Result<Self, NeuralError> {
        let [u1, u2] = cfg.conv_units;
        Ok(Branch {
            conv: [
                ConvLstmCell::new(params, rng, &format!("{name}.conv1"), CHANNELS, u1)?,
                ConvLstmCell::new(params, rng, &format!("{name}.conv2"), u1, u2)?,
            ],
            lstm: [
                LstmCell::new(
                    params,
                    rng,
                    &format!("{name}.lstm1"),
                    cfg.flat_features() + 2,
                    cfg.lstm_units,
                )?,
                LstmCell::new(
                    params,
                    rng,
                    &format!("{name}.lstm2"),
                    cfg.lstm_units,
                    cfg.lstm_units,
                )?,
            ],
        })
    }
}

/// Model-ready tensors of one beat.
#[derive(Debug, Clone)]
pub struct PlacementInput {
    /// `[context, 32, bands, 3]`, oldest beat first, current beat last.
    pub past: Tensor<f32>,
    /// `[context, 32, bands, 3]`, current beat first.
    pub future: Tensor<f32>,
    pub bpm: f32,
    pub difficulty: f32,
    pub target: [f32; SLOTS],
}

impl PlacementInput {
    pub fn from_example(ex: &PlacementExample, context: usize) -> Self {
        PlacementInput {
            past: ex.past_ctx(context),
            future: ex.future_ctx(context),
            bpm: ex.bpm as f32,
            difficulty: ex.difficulty as f32,
            target: ex.target.as_f32(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlacementModel {
    pub config: PlacementConfig,
    pub params: ParamSet<f32>,
    past: Branch,
    future: Branch,
    dense: [Dense; 2],
    out: Dense,
}

impl PlacementModel {
    /// Glorot-initialized network whose output layer starts at zero.
    pub fn new(config: PlacementConfig, seed: u64) -> Result<Self, NeuralError> {
        if config.pooled_bands() == 0 {
            return Err(NeuralError::Shape(format!(
                "{} bands vanish under two poolings of width {}",
                config.bands, config.pool
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let past = Branch::new(&mut params, &mut rng, "placement.past", &config)?;
        let future = Branch::new(&mut params, &mut rng, "placement.future", &config)?;
        let [d1, d2] = config.dense_units;
        let dense = [
            Dense::new(
                &mut params,
                &mut rng,
                "placement.dense1",
                2 * config.lstm_units,
                d1,
            )?,
            Dense::new(&mut params, &mut rng, "placement.dense2", d1, d2)?,
        ];
        let out = Dense::zeroed(&mut params, "placement.out", d2, SLOTS)?;
        Ok(PlacementModel {
            config,
            params,
            past,
            future,
            dense,
            out,
        })
    }

    fn branch<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        b: &Branch,
        ctx: &Tensor<f32>,
        reverse: bool,
        aux: Var,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Result<Var, NeuralError> {
        let cfg = &self.config;
        let expect = [cfg.context, SAMPLES_PER_BEAT, cfg.bands, CHANNELS];
        if ctx.shape != expect {
            return Err(NeuralError::Shape(format!(
                "context {:?}, expected {expect:?}",
                ctx.shape
            )));
        }
        let mut steps: Vec<Var> = unstack(ctx)
            .into_iter()
            .map(|t| g.input(t.cast()))
            .collect();
        if reverse {
            steps.reverse();
        }
        let h1 = b.conv[0].forward(g, &steps)?;
        let p1 = h1
            .into_iter()
            .map(|h| g.maxpool_freq(h, cfg.pool))
            .collect::<Result<Vec<_>, _>>()?;
        let h2 = b.conv[1].forward(g, &p1)?;
        let mut flat = Vec::with_capacity(h2.len());
        for h in h2 {
            let p = g.maxpool_freq(h, cfg.pool)?;
            let row = g.reshape(p, &[1, cfg.flat_features()])?;
            flat.push(g.concat(&[row, aux], 1)?);
        }
        let l1 = b.lstm[0].forward(g, &flat)?;
        let l1: Vec<Var> = l1
            .into_iter()
            .map(|h| g.dropout(h, cfg.lstm_dropout, rng.as_deref_mut()))
            .collect();
        let l2 = b.lstm[1].forward(g, &l1)?;
        let last = *l2.last().expect("context has at least one beat");
        Ok(g.dropout(last, cfg.lstm_dropout, rng.as_deref_mut()))
    }

    /// Probabilities `[1, 48]` for one beat.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        input: &PlacementInput,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, NeuralError> {
        let cfg = &self.config;
        let aux = g.input(Tensor {
            shape: vec![1, 2],
            data: vec![
                T::of((input.bpm / BPM_SCALE) as f64),
                T::of((input.difficulty / DIFFICULTY_SCALE) as f64),
            ],
        });
        let past = self.branch(g, &self.past, &input.past, false, aux, &mut rng)?;
        let future = self.branch(g, &self.future, &input.future, true, aux, &mut rng)?;
        let mut x = g.concat(&[past, future], 1)?;
        for d in &self.dense {
            let z = d.forward(g, x)?;
            let a = g.leaky_relu(z, cfg.leaky_slope);
            x = g.dropout(a, cfg.dense_dropout, rng.as_deref_mut());
        }
        let logits = self.out.forward(g, x)?;
        Ok(g.sigmoid(logits))
    }

    pub fn predict(&self, input: &PlacementInput) -> Result<[f32; SLOTS], NeuralError> {
        let mut g = Graph::new(&self.params);
        let p = self.forward(&mut g, input, None)?;
        Ok(g.value(p).try_into().expect("48 outputs"))
    }
}

impl Trainable for PlacementModel {
    type Input = PlacementExample;

    fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    fn loss(
        &self,
        g: &mut Graph<'_, f32>,
        example: &PlacementExample,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, NeuralError> {
        let input = PlacementInput::from_example(example, self.config.context);
        let p = self.forward(g, &input, rng)?;
        g.bce(p, &input.target)
    }
}

/// BCE training with validation PR-AUC driving the schedule, early stop and
/// best-weight retention (validation loss breaks ties). Input tensors are
/// built per step, so examples only hold shared beat frames.
pub fn train_placement(
    model: &mut PlacementModel,
    train: &[PlacementExample],
    valid: &[PlacementExample],
    cfg: &TrainConfig,
) -> Result<TrainingReport, ModelError> {
    train_loop(model, train, cfg, "valid_prauc", |m| {
        if valid.is_empty() {
            return Ok((None, None, None));
        }
        let losses = eval_losses(m, valid)?;
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let outputs: Vec<[f32; SLOTS]> = valid
            .par_iter()
            .map(|x| m.predict(&PlacementInput::from_example(x, m.config.context)))
            .collect::<Result<_, _>>()?;
        let probs: Vec<f64> = outputs.iter().flatten().map(|&p| p as f64).collect();
        let targets: Vec<bool> = valid.iter().flat_map(|x| x.target.slots).collect();
        let auc = pr_auc(&probs, &targets)?;
        Ok((Some(loss), auc, auc))
    })
}

/// Per-beat slot probabilities for every beat of a song.
pub fn placement_probabilities(
    model: &PlacementModel,
    frames: &Arc<Vec<BeatFrame>>,
    bpm: f64,
    difficulty: u32,
) -> Result<Vec<[f32; SLOTS]>, NeuralError> {
    (0..frames.len())
        .into_par_iter()
        .map(|b| {
            let ex = PlacementExample {
                frames: Arc::clone(frames),
                beat_index: b,
                bpm,
                difficulty,
                target: PlacementVector::empty(b),
            };
            model.predict(&PlacementInput::from_example(&ex, model.config.context))
        })
        .collect()
}

/// `(beat, slot)` for every probability at or above `threshold`, in time order.
pub fn threshold_placements(probs: &[[f32; SLOTS]], threshold: f64) -> Vec<(usize, usize)> {
    probs
        .iter()
        .enumerate()
        .flat_map(|(b, row)| {
            row.iter()
                .enumerate()
                .filter(move |(_, &p)| p as f64 >= threshold)
                .map(move |(k, _)| (b, k))
        })
        .collect()
}

pub fn predict_placements(
    model: &PlacementModel,
    frames: &Arc<Vec<BeatFrame>>,
    bpm: f64,
    difficulty: u32,
    threshold: f64,
) -> Result<Vec<(usize, usize)>, NeuralError> {
    Ok(threshold_placements(
        &placement_probabilities(model, frames, bpm, difficulty)?,
        threshold,
    ))
}
