use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{eval_losses, train_loop, unstack, ModelError, TrainConfig, Trainable, TrainingReport};
use crate::audiofeat::{CHANNELS, MEL_BANDS};
use crate::beatgrid::{SelectionExample, AUDIO_STEPS, HISTORY, PATCH_FRAMES};
use crate::neural::{
    ConvLstmCell, Dense, Graph, LstmCell, NeuralError, ParamSet, Scalar, Tensor, Var,
};
use crate::simfile::SYMBOL_COUNT;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub bands: usize,
    pub lstm_units: usize,
    pub lstm_dropout: f64,
    pub conv_units: [usize; 2],
    pub dense_units: [usize; 2],
    pub dense_dropout: f64,
    pub leaky_slope: f64,
}

impl SelectionConfig {
    pub fn full() -> Self {
        SelectionConfig {
            bands: MEL_BANDS,
            lstm_units: 256,
            lstm_dropout: 0.2,
            conv_units: [8, 16],
            dense_units: [512, 256],
            dense_dropout: 0.5,
            leaky_slope: 0.3,
        }
    }

    pub fn toy() -> Self {
        SelectionConfig {
            bands: 8,
            lstm_units: 32,
            conv_units: [2, 2],
            dense_units: [64, 64],
            ..Self::full()
        }
    }

    /// Width of one flattened audio summary.
    pub fn audio_features(&self) -> usize {
        PATCH_FRAMES * self.bands * self.conv_units[1]
    }

    pub fn describe(&self) -> String {
        format!("selection {self:?}")
    }
}

/// Model-ready tensors of one selection step.
#[derive(Debug, Clone)]
pub struct SelectionInput {
    pub history: [u8; HISTORY],
    pub delta_beats: [[f32; 2]; HISTORY],
    /// `[8, 9, bands, 3]`, oldest step first.
    pub past: Tensor<f32>,
    /// `[8, 9, bands, 3]`, current step first.
    pub future: Tensor<f32>,
    pub target: u8,
}

impl SelectionInput {
    pub fn from_example(ex: &SelectionExample) -> Self {
        SelectionInput {
            history: ex.history,
            delta_beats: ex.delta_beats,
            past: ex.audio.past_patches(),
            future: ex.audio.future_patches(),
            target: ex.target,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectionModel {
    pub config: SelectionConfig,
    pub params: ParamSet<f32>,
    lstm: [LstmCell; 2],
    past: [ConvLstmCell; 2],
    future: [ConvLstmCell; 2],
    dense: [Dense; 2],
    out: Dense,
}

impl SelectionModel {
    pub fn new(config: SelectionConfig, seed: u64) -> Result<Self, NeuralError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let u = config.lstm_units;
        let lstm = [
            LstmCell::new(&mut p, &mut rng, "selection.lstm1", SYMBOL_COUNT + 2, u)?,
            LstmCell::new(&mut p, &mut rng, "selection.lstm2", u, u)?,
        ];
        let [c1, c2] = config.conv_units;
        let mut conv =
            |name: &str, p: &mut ParamSet<f32>| -> Result<[ConvLstmCell; 2], NeuralError> {
                Ok([
                    ConvLstmCell::new(p, &mut rng, &format!("{name}.conv1"), CHANNELS, c1)?,
                    ConvLstmCell::new(p, &mut rng, &format!("{name}.conv2"), c1, c2)?,
                ])
            };
        let past = conv("selection.past", &mut p)?;
        let future = conv("selection.future", &mut p)?;
        let [d1, d2] = config.dense_units;
        let head_in = u + 2 * config.audio_features();
        let dense = [
            Dense::new(&mut p, &mut rng, "selection.dense1", head_in, d1)?,
            Dense::new(&mut p, &mut rng, "selection.dense2", d1, d2)?,
        ];
        let out = Dense::zeroed(&mut p, "selection.out", d2, SYMBOL_COUNT)?;
        Ok(SelectionModel {
            config,
            params: p,
            lstm,
            past,
            future,
            dense,
            out,
        })
    }

    fn audio<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        cells: &[ConvLstmCell; 2],
        patches: &Tensor<f32>,
        reverse: bool,
    ) -> Result<Var, NeuralError> {
        let expect = [AUDIO_STEPS, PATCH_FRAMES, self.config.bands, CHANNELS];
        if patches.shape != expect {
            return Err(NeuralError::Shape(format!(
                "audio patches {:?}, expected {expect:?}",
                patches.shape
            )));
        }
        let mut steps: Vec<Var> = unstack(patches)
            .into_iter()
            .map(|t| g.input(t.cast()))
            .collect();
        if reverse {
            steps.reverse();
        }
        let h1 = cells[0].forward(g, &steps)?;
        let h2 = cells[1].forward(g, &h1)?;
        let last = *h2.last().expect("eight audio steps");
        g.reshape(last, &[1, self.config.audio_features()])
    }

    /// Logits `[1, 256]`.
    pub fn logits<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        input: &SelectionInput,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, NeuralError> {
        let cfg = &self.config;
        let steps: Vec<Var> = (0..HISTORY)
            .map(|j| {
                let mut x = vec![T::zero(); SYMBOL_COUNT + 2];
                x[input.history[j] as usize] = T::one();
                x[SYMBOL_COUNT] = T::of(input.delta_beats[j][0] as f64);
                x[SYMBOL_COUNT + 1] = T::of(input.delta_beats[j][1] as f64);
                g.input(Tensor {
                    shape: vec![1, SYMBOL_COUNT + 2],
                    data: x,
                })
            })
            .collect();
        let l1 = self.lstm[0].forward(g, &steps)?;
        let l1: Vec<Var> = l1
            .into_iter()
            .map(|h| g.dropout(h, cfg.lstm_dropout, rng.as_deref_mut()))
            .collect();
        let l2 = self.lstm[1].forward(g, &l1)?;
        let sym = g.dropout(
            *l2.last().expect("history"),
            cfg.lstm_dropout,
            rng.as_deref_mut(),
        );
        let past = self.audio(g, &self.past, &input.past, false)?;
        let future = self.audio(g, &self.future, &input.future, true)?;
        let mut x = g.concat(&[sym, past, future], 1)?;
        for d in &self.dense {
            let z = d.forward(g, x)?;
            let a = g.leaky_relu(z, cfg.leaky_slope);
            x = g.dropout(a, cfg.dense_dropout, rng.as_deref_mut());
        }
        self.out.forward(g, x)
    }

    /// Distribution over the 256 symbols, `[1, 256]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        input: &SelectionInput,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, NeuralError> {
        let z = self.logits(g, input, rng)?;
        Ok(g.softmax(z))
    }

    pub fn predict(&self, input: &SelectionInput) -> Result<Vec<f32>, NeuralError> {
        let mut g = Graph::new(&self.params);
        let p = self.forward(&mut g, input, None)?;
        Ok(g.value(p).to_vec())
    }
}

impl Trainable for SelectionModel {
    type Input = SelectionExample;

    fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    fn loss(
        &self,
        g: &mut Graph<'_, f32>,
        example: &SelectionExample,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var, NeuralError> {
        let z = self.logits(g, &SelectionInput::from_example(example), rng)?;
        g.softmax_ce(z, example.target as usize)
    }
}

/// Lowest index among the largest probabilities.
pub(crate) fn argmax(p: &[f32]) -> usize {
    p.iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Softmax cross-entropy training; validation loss drives the schedule,
/// early stop and best-weight retention, and accuracy is reported.
pub fn train_selection(
    model: &mut SelectionModel,
    train: &[SelectionExample],
    valid: &[SelectionExample],
    cfg: &TrainConfig,
) -> Result<TrainingReport, ModelError> {
    train_loop(model, train, cfg, "valid_acc", |m| {
        if valid.is_empty() {
            return Ok((None, None, None));
        }
        let losses = eval_losses(m, valid)?;
        let loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let hits = valid
            .par_iter()
            .map(|x| {
                Ok(usize::from(
                    argmax(&m.predict(&SelectionInput::from_example(x))?) == x.target as usize,
                ))
            })
            .collect::<Result<Vec<usize>, NeuralError>>()?;
        let acc = hits.iter().sum::<usize>() as f64 / valid.len() as f64;
        Ok((Some(loss), Some(acc), None))
    })
}
