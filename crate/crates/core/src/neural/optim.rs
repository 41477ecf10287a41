use super::graph::Gradients;
use super::tensor::{ParamId, ParamSet, Scalar};
use super::NeuralError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>, lr: f64) -> Self {
        let zeros: Vec<Vec<T>> = params
            .iter()
            .map(|(_, _, t)| vec![T::zero(); t.len()])
            .collect();
        AdamState {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// One bias-corrected Adam update. Parameters without a gradient are treated
/// as having a zero gradient. Nothing is modified if any gradient is
/// non-finite.
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    params: &mut ParamSet<T>,
    grads: &Gradients<T>,
) -> Result<(), NeuralError> {
    if grads.params.len() != params.len() || state.m.len() != params.len() {
        return Err(NeuralError::Shape(format!(
            "{} gradients and {} moments for {} parameters",
            grads.params.len(),
            state.m.len(),
            params.len()
        )));
    }
    for (i, g) in grads.params.iter().enumerate() {
        let Some(g) = g else { continue };
        if g.len() != params.get(ParamId(i)).len() {
            return Err(NeuralError::Shape(format!(
                "gradient for {} has {} values",
                params.name(ParamId(i)),
                g.len()
            )));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(NeuralError::NonFinite {
                name: params.name(ParamId(i)).to_string(),
            });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let c1 = T::of(1.0 - state.beta1.powi(t));
    let c2 = T::of(1.0 - state.beta2.powi(t));
    let lr = T::of(state.lr);
    let eps = T::of(state.eps);
    for (i, g) in grads.params.iter().enumerate() {
        let p = &mut params.get_mut(ParamId(i)).data;
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for k in 0..p.len() {
            let gk = g.as_ref().map_or(T::zero(), |g| g[k]);
            m[k] = b1 * m[k] + (T::one() - b1) * gk;
            v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Maximize,
    Minimize,
}

fn maximize(new: &f64, best: &f64) -> bool {
    new > best
}

fn minimize(new: &f64, best: &f64) -> bool {
    new < best
}

/// Strict-improvement test for `mode` on scalar metrics.
pub fn comparator(mode: Mode) -> fn(&f64, &f64) -> bool {
    match mode {
        Mode::Maximize => maximize,
        Mode::Minimize => minimize,
    }
}

/// Multiplies the learning rate by `factor` once `patience` consecutive
/// epochs pass without improvement, then starts counting afresh.
#[derive(Debug, Clone)]
pub struct PlateauScheduler<V = f64> {
    pub factor: f64,
    pub patience: usize,
    improves: fn(&V, &V) -> bool,
    best: Option<V>,
    wait: usize,
}

impl PlateauScheduler<f64> {
    pub fn new(factor: f64, patience: usize, mode: Mode) -> Self {
        Self::with_comparator(factor, patience, comparator(mode))
    }
}

impl<V> PlateauScheduler<V> {
    /// `improves(new, best)` must be a strict improvement test.
    pub fn with_comparator(factor: f64, patience: usize, improves: fn(&V, &V) -> bool) -> Self {
        PlateauScheduler {
            factor,
            patience,
            improves,
            best: None,
            wait: 0,
        }
    }

    /// Returns the multiplier to apply to the learning rate after this epoch.
    pub fn observe(&mut self, metric: V) -> f64 {
        match &self.best {
            Some(b) if !(self.improves)(&metric, b) => {
                self.wait += 1;
                if self.wait >= self.patience {
                    self.wait = 0;
                    return self.factor;
                }
            }
            _ => {
                self.best = Some(metric);
                self.wait = 0;
            }
        }
        1.0
    }
}

/// Cumulative learning-rate multiplier after walking `history`.
pub fn reduce_on_plateau(history: &[f64], factor: f64, patience: usize, mode: Mode) -> f64 {
    let mut s = PlateauScheduler::new(factor, patience, mode);
    history.iter().map(|&m| s.observe(m)).product()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    /// Training should end; carries the 1-based epoch of the best metric.
    Stop {
        best_epoch: usize,
    },
}

/// Early stopping that ignores the first `warmup` epochs and then stops after
/// `patience` epochs without a strict improvement.
#[derive(Debug, Clone)]
pub struct EarlyStopper<V = f64> {
    pub warmup: usize,
    pub patience: usize,
    improves: fn(&V, &V) -> bool,
    epoch: usize,
    best: Option<(usize, V)>,
    wait: usize,
}

impl EarlyStopper<f64> {
    pub fn new(warmup: usize, patience: usize, mode: Mode) -> Self {
        Self::with_comparator(warmup, patience, comparator(mode))
    }
}

impl<V> EarlyStopper<V> {
    pub fn with_comparator(warmup: usize, patience: usize, improves: fn(&V, &V) -> bool) -> Self {
        EarlyStopper {
            warmup,
            patience,
            improves,
            epoch: 0,
            best: None,
            wait: 0,
        }
    }

    pub fn observe(&mut self, metric: V) -> StopDecision {
        self.epoch += 1;
        if self.epoch <= self.warmup {
            return StopDecision::Continue;
        }
        match &self.best {
            Some((epoch, b)) if !(self.improves)(&metric, b) => {
                self.wait += 1;
                if self.wait >= self.patience {
                    return StopDecision::Stop { best_epoch: *epoch };
                }
            }
            _ => {
                self.best = Some((self.epoch, metric));
                self.wait = 0;
            }
        }
        StopDecision::Continue
    }
}

/// 1-based epoch at which training stops, if it does within `history`.
pub fn early_stop(history: &[f64], warmup: usize, patience: usize, mode: Mode) -> Option<usize> {
    let mut s = EarlyStopper::new(warmup, patience, mode);
    history
        .iter()
        .enumerate()
        .find(|&(_, &m)| matches!(s.observe(m), StopDecision::Stop { .. }))
        .map(|(i, _)| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::tensor::Tensor;

    #[test]
    fn first_step_closed_form() {
        let mut p = ParamSet::<f64>::new();
        let a = p.add("a", Tensor::filled(&[3], 0.5)).unwrap();
        let b = p.add("b", Tensor::filled(&[2], -2.0)).unwrap();
        let mut s = AdamState::new(&p, 1e-3);
        let grads = Gradients {
            params: vec![Some(vec![1.0; 3]), Some(vec![0.0; 2])],
        };
        adam_step(&mut s, &mut p, &grads).unwrap();
        for &v in &p.get(a).data {
            assert!((v - (0.5 - 1e-3)).abs() < 1e-6);
        }
        assert_eq!(p.get(b).data, vec![-2.0, -2.0]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = ParamSet::<f32>::new();
        p.add("dense.w", Tensor::zeros(&[2])).unwrap();
        let mut s = AdamState::new(&p, 1e-3);
        let grads = Gradients {
            params: vec![Some(vec![f32::NAN, 0.0])],
        };
        match adam_step(&mut s, &mut p, &grads) {
            Err(NeuralError::NonFinite { name }) => assert_eq!(name, "dense.w"),
            other => panic!("{other:?}"),
        }
        assert_eq!(s.step, 0);
    }

    #[test]
    fn plateau_halves_after_six_flat_epochs() {
        assert_eq!(reduce_on_plateau(&[1.0; 5], 0.5, 5, Mode::Minimize), 1.0);
        assert_eq!(reduce_on_plateau(&[1.0; 6], 0.5, 5, Mode::Minimize), 0.5);
        assert_eq!(reduce_on_plateau(&[1.0; 10], 0.5, 5, Mode::Minimize), 0.5);
        assert_eq!(reduce_on_plateau(&[1.0; 11], 0.5, 5, Mode::Minimize), 0.25);
        let improving: Vec<f64> = (0..30).map(|i| i as f64).collect();
        assert_eq!(reduce_on_plateau(&improving, 0.5, 5, Mode::Maximize), 1.0);
    }

    #[test]
    fn early_stop_on_flat_history() {
        assert_eq!(early_stop(&[0.3; 126], 100, 20, Mode::Maximize), Some(121));
        assert_eq!(early_stop(&[0.3; 120], 100, 20, Mode::Maximize), None);
        let improving: Vec<f64> = (0..300).map(|i| i as f64).collect();
        assert_eq!(early_stop(&improving, 100, 20, Mode::Maximize), None);
        let falling: Vec<f64> = (0..300).map(|i| -(i as f64)).collect();
        assert_eq!(early_stop(&falling, 100, 20, Mode::Minimize), None);
    }
}
