use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, Var};
use super::tensor::{ParamId, ParamSet};
use super::NeuralError;

pub const FD_STEP: f64 = 1e-4;
pub const MAX_COORDS: usize = 64;
/// Central differences at `FD_STEP` carry roughly 1e-12 of roundoff for an
/// O(1) objective, so gradients below this are compared absolutely.
pub const FD_RESOLUTION: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// The output of `f` is projected onto fixed random weights so that any
/// shape can be checked. Up to `max_coords` parameter coordinates are drawn
/// without replacement. Relative error is
/// `|a - n| / max(|a|, |n|, FD_RESOLUTION)`.
pub fn grad_check<F>(
    params: &ParamSet<f64>,
    max_coords: usize,
    seed: u64,
    f: F,
) -> Result<GradCheck, NeuralError>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var, NeuralError>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let projection: Vec<f64> = {
        let mut g = Graph::new(params);
        let out = f(&mut g)?;
        (0..g.value(out).len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect()
    };
    let probe = |p: &ParamSet<f64>| -> Result<f64, NeuralError> {
        let mut g = Graph::new(p);
        let out = f(&mut g)?;
        let s = g.dot(out, &projection)?;
        Ok(g.scalar(s))
    };

    let analytic = {
        let mut g = Graph::new(params);
        let out = f(&mut g)?;
        let s = g.dot(out, &projection)?;
        g.backward(s)
    };

    let mut coords: Vec<(ParamId, usize)> = Vec::new();
    for (id, _, t) in params.iter() {
        coords.extend((0..t.len()).map(|k| (id, k)));
    }
    let picks = rand::seq::index::sample(&mut rng, coords.len(), max_coords.min(coords.len()));

    let mut work = params.clone();
    let mut worst: f64 = 0.0;
    for i in picks.iter() {
        let (id, k) = coords[i];
        let orig = params.get(id).data[k];
        work.get_mut(id).data[k] = orig + FD_STEP;
        let up = probe(&work)?;
        work.get_mut(id).data[k] = orig - FD_STEP;
        let down = probe(&work)?;
        work.get_mut(id).data[k] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic.get(id).map_or(0.0, |g| g[k]);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_RESOLUTION);
        worst = worst.max(rel);
    }
    Ok(GradCheck {
        max_rel_error: worst,
        checked: picks.len(),
    })
}
