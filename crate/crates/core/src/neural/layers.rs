use rand::Rng;

use super::graph::{Graph, Var};
use super::tensor::{ParamId, ParamSet, Scalar, Tensor};
use super::NeuralError;

/// Glorot-uniform initial values.
pub fn glorot<T: Scalar, R: Rng + ?Sized>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    Tensor {
        shape: shape.to_vec(),
        data: (0..n)
            .map(|_| T::of(rng.gen_range(-limit..limit)))
            .collect(),
    }
}

/// Affine map `x W + b` over rows of `x: [m, inputs]`.
#[derive(Debug, Clone)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        inputs: usize,
        outputs: usize,
    ) -> Result<Self, NeuralError> {
        let w = params.add(
            &format!("{name}.w"),
            glorot(rng, &[inputs, outputs], inputs, outputs),
        )?;
        let b = params.add(&format!("{name}.b"), Tensor::zeros(&[outputs]))?;
        Ok(Dense {
            w,
            b,
            inputs,
            outputs,
        })
    }

    /// All-zero weights and bias.
    pub fn zeroed<T: Scalar>(
        params: &mut ParamSet<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
    ) -> Result<Self, NeuralError> {
        let w = params.add(&format!("{name}.w"), Tensor::zeros(&[inputs, outputs]))?;
        let b = params.add(&format!("{name}.b"), Tensor::zeros(&[outputs]))?;
        Ok(Dense {
            w,
            b,
            inputs,
            outputs,
        })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, NeuralError> {
        let w = g.param(self.w);
        let b = g.param(self.b);
        g.dense(x, w, b)
    }
}

fn gate_bias<T: Scalar>(units: usize) -> Tensor<T> {
    let mut b = Tensor::zeros(&[4 * units]);
    b.data[units..2 * units].fill(T::one());
    b
}

/// Gate activations from pre-activations laid out `(i, f, g, o)` along `axis`.
fn lstm_update<T: Scalar>(
    g: &mut Graph<'_, T>,
    z: Var,
    c: Var,
    axis: usize,
    units: usize,
) -> Result<(Var, Var), NeuralError> {
    let zi = g.narrow(z, axis, 0, units)?;
    let zf = g.narrow(z, axis, units, units)?;
    let zg = g.narrow(z, axis, 2 * units, units)?;
    let zo = g.narrow(z, axis, 3 * units, units)?;
    let i = g.sigmoid(zi);
    let f = g.sigmoid(zf);
    let cand = g.tanh(zg);
    let o = g.sigmoid(zo);
    let keep = g.mul(f, c)?;
    let write = g.mul(i, cand)?;
    let c_new = g.add(keep, write)?;
    let squashed = g.tanh(c_new);
    let h_new = g.mul(o, squashed)?;
    Ok((h_new, c_new))
}

#[derive(Debug, Clone)]
pub struct LstmCell {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub input_size: usize,
    pub units: usize,
}

impl LstmCell {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        input_size: usize,
        units: usize,
    ) -> Result<Self, NeuralError> {
        let w = params.add(
            &format!("{name}.w"),
            glorot(rng, &[input_size, 4 * units], input_size, 4 * units),
        )?;
        let u = params.add(
            &format!("{name}.u"),
            glorot(rng, &[units, 4 * units], units, 4 * units),
        )?;
        let b = params.add(&format!("{name}.b"), gate_bias(units))?;
        Ok(LstmCell {
            w,
            u,
            b,
            input_size,
            units,
        })
    }

    /// One step on `x: [1, input_size]` with states `[1, units]`.
    pub fn step<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var), NeuralError> {
        if g.shape(x) != [1, self.input_size] {
            return Err(NeuralError::Shape(format!(
                "lstm input {:?}, expected [1, {}]",
                g.shape(x),
                self.input_size
            )));
        }
        let (w, u, b) = (g.param(self.w), g.param(self.u), g.param(self.b));
        let zx = g.matmul(x, w)?;
        let zh = g.matmul(h, u)?;
        let z = g.add(zx, zh)?;
        let z = g.add_bias(z, b)?;
        lstm_update(g, z, c, 1, self.units)
    }

    /// Hidden states for every step, starting from zero states.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        seq: &[Var],
    ) -> Result<Vec<Var>, NeuralError> {
        let mut h = g.zeros(&[1, self.units]);
        let mut c = g.zeros(&[1, self.units]);
        let mut out = Vec::with_capacity(seq.len());
        for &x in seq {
            (h, c) = self.step(g, x, h, c)?;
            out.push(h);
        }
        Ok(out)
    }
}

pub fn lstm_forward<T: Scalar>(
    g: &mut Graph<'_, T>,
    cell: &LstmCell,
    seq: &[Var],
) -> Result<Vec<Var>, NeuralError> {
    cell.forward(g, seq)
}

/// Convolutional LSTM over `[H, W, C]` inputs with a same-padded 3x3 kernel.
#[derive(Debug, Clone)]
pub struct ConvLstmCell {
    pub k: ParamId,
    pub b: ParamId,
    pub in_channels: usize,
    pub units: usize,
}

pub const CONV_KERNEL: usize = 3;

impl ConvLstmCell {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        params: &mut ParamSet<T>,
        rng: &mut R,
        name: &str,
        in_channels: usize,
        units: usize,
    ) -> Result<Self, NeuralError> {
        let taps = CONV_KERNEL * CONV_KERNEL;
        let cin = in_channels + units;
        let k = params.add(
            &format!("{name}.k"),
            glorot(
                rng,
                &[CONV_KERNEL, CONV_KERNEL, cin, 4 * units],
                taps * cin,
                taps * 4 * units,
            ),
        )?;
        let b = params.add(&format!("{name}.b"), gate_bias(units))?;
        Ok(ConvLstmCell {
            k,
            b,
            in_channels,
            units,
        })
    }

    pub fn step<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        x: Var,
        h: Var,
        c: Var,
    ) -> Result<(Var, Var), NeuralError> {
        let s = g.shape(x);
        if s.len() != 3 || s[2] != self.in_channels {
            return Err(NeuralError::Shape(format!(
                "convlstm input {s:?}, expected [H, W, {}]",
                self.in_channels
            )));
        }
        let (k, b) = (g.param(self.k), g.param(self.b));
        let xh = g.concat(&[x, h], 2)?;
        let z = g.conv2d(xh, k)?;
        let z = g.add_bias(z, b)?;
        lstm_update(g, z, c, 2, self.units)
    }

    /// Hidden states for a sequence of `[H, W, in_channels]` inputs.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        seq: &[Var],
    ) -> Result<Vec<Var>, NeuralError> {
        let Some(&first) = seq.first() else {
            return Ok(Vec::new());
        };
        let s = g.shape(first);
        if s.len() != 3 {
            return Err(NeuralError::Shape(format!("convlstm input {s:?}")));
        }
        let state = [s[0], s[1], self.units];
        let mut h = g.zeros(&state);
        let mut c = g.zeros(&state);
        let mut out = Vec::with_capacity(seq.len());
        for &x in seq {
            (h, c) = self.step(g, x, h, c)?;
            out.push(h);
        }
        Ok(out)
    }
}

pub fn convlstm_forward<T: Scalar>(
    g: &mut Graph<'_, T>,
    cell: &ConvLstmCell,
    seq: &[Var],
) -> Result<Vec<Var>, NeuralError> {
    cell.forward(g, seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    /// Plain-array LSTM recurrence, gate order (i, f, g, o).
    fn oracle_lstm(
        w: &[f64],
        u: &[f64],
        b: &[f64],
        n_in: usize,
        n: usize,
        xs: &[Vec<f64>],
    ) -> Vec<Vec<f64>> {
        let mut h = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut out = Vec::new();
        for x in xs {
            let mut z = b.to_vec();
            for (j, zj) in z.iter_mut().enumerate() {
                for p in 0..n_in {
                    *zj += x[p] * w[p * 4 * n + j];
                }
                for p in 0..n {
                    *zj += h[p] * u[p * 4 * n + j];
                }
            }
            for k in 0..n {
                let i = sig(z[k]);
                let f = sig(z[n + k]);
                let gg = z[2 * n + k].tanh();
                let o = sig(z[3 * n + k]);
                c[k] = f * c[k] + i * gg;
                h[k] = o * c[k].tanh();
            }
            out.push(h.clone());
        }
        out
    }

    #[test]
    fn lstm_matches_reference_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = ParamSet::<f64>::new();
        let cell = LstmCell::new(&mut p, &mut rng, "l", 3, 4).unwrap();
        let xs: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut g = Graph::new(&p);
        let seq: Vec<Var> = xs
            .iter()
            .map(|x| g.input(Tensor::new(vec![1, 3], x.clone()).unwrap()))
            .collect();
        let hs = lstm_forward(&mut g, &cell, &seq).unwrap();
        let expect = oracle_lstm(
            &p.get(cell.w).data,
            &p.get(cell.u).data,
            &p.get(cell.b).data,
            3,
            4,
            &xs,
        );
        for (h, e) in hs.iter().zip(&expect) {
            for (a, b) in g.value(*h).iter().zip(e) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn lstm_zero_weights_zero_states() {
        let mut p = ParamSet::<f32>::new();
        let cell = LstmCell {
            w: p.add("w", Tensor::zeros(&[2, 8])).unwrap(),
            u: p.add("u", Tensor::zeros(&[2, 8])).unwrap(),
            b: p.add("b", Tensor::zeros(&[8])).unwrap(),
            input_size: 2,
            units: 2,
        };
        let mut g = Graph::new(&p);
        let seq: Vec<Var> = (0..3).map(|_| g.zeros(&[1, 2])).collect();
        for h in cell.forward(&mut g, &seq).unwrap() {
            assert!(g.value(h).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let b = gate_bias::<f32>(3);
        assert_eq!(b.data, vec![0., 0., 0., 1., 1., 1., 0., 0., 0., 0., 0., 0.]);
    }

    /// On a 1x1 grid only the kernel centre sees data, so a ConvLSTM whose
    /// centre taps hold [W; U] is an LSTM.
    #[test]
    fn convlstm_on_single_pixel_is_lstm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n_in, n) = (3, 2);
        let mut lp = ParamSet::<f64>::new();
        let lstm = LstmCell::new(&mut lp, &mut rng, "l", n_in, n).unwrap();
        let mut cp = ParamSet::<f64>::new();
        let conv = ConvLstmCell::new(&mut cp, &mut rng, "c", n_in, n).unwrap();
        let mut k = Tensor::zeros(&[3, 3, n_in + n, 4 * n]);
        let centre = 4 * (n_in + n) * 4 * n;
        let w = &lp.get(lstm.w).data;
        let u = &lp.get(lstm.u).data;
        k.data[centre..centre + w.len()].copy_from_slice(w);
        k.data[centre + w.len()..centre + w.len() + u.len()].copy_from_slice(u);
        *cp.get_mut(conv.k) = k;
        *cp.get_mut(conv.b) = lp.get(lstm.b).clone();

        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut gl = Graph::new(&lp);
        let seq: Vec<Var> = xs
            .iter()
            .map(|x| gl.input(Tensor::new(vec![1, n_in], x.clone()).unwrap()))
            .collect();
        let hl = lstm.forward(&mut gl, &seq).unwrap();
        let mut gc = Graph::new(&cp);
        let seq: Vec<Var> = xs
            .iter()
            .map(|x| gc.input(Tensor::new(vec![1, 1, n_in], x.clone()).unwrap()))
            .collect();
        let hc = convlstm_forward(&mut gc, &conv, &seq).unwrap();
        for (a, b) in hl.iter().zip(&hc) {
            for (x, y) in gl.value(*a).iter().zip(gc.value(*b)) {
                assert!((x - y).abs() < 1e-14, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn convlstm_zero_input_zero_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParamSet::<f32>::new();
        let cell = ConvLstmCell::new(&mut p, &mut rng, "c", 3, 4).unwrap();
        *p.get_mut(cell.b) = Tensor::zeros(&[16]);
        let mut g = Graph::new(&p);
        let seq: Vec<Var> = (0..3).map(|_| g.zeros(&[5, 6, 3])).collect();
        for h in cell.forward(&mut g, &seq).unwrap() {
            assert_eq!(g.shape(h), &[5, 6, 4]);
            assert!(g.value(h).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn convlstm_translation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut p = ParamSet::<f64>::new();
        let cell = ConvLstmCell::new(&mut p, &mut rng, "c", 1, 2).unwrap();
        let (h, w) = (12, 12);
        let mut img = vec![0.0; h * w];
        for r in 4..6 {
            for c in 3..5 {
                img[r * w + c] = rng.gen_range(-1.0..1.0);
            }
        }
        let mut shifted = vec![0.0; h * w];
        for r in 0..h - 1 {
            for c in 0..w - 2 {
                shifted[(r + 1) * w + c + 2] = img[r * w + c];
            }
        }
        let run = |data: &[f64]| {
            let mut g = Graph::new(&p);
            let x = g.input(Tensor::new(vec![h, w, 1], data.to_vec()).unwrap());
            let hs = cell.forward(&mut g, &[x, x]).unwrap();
            g.value(hs[1]).to_vec()
        };
        let (a, b) = (run(&img), run(&shifted));
        // cells at least one pixel from every edge in both images
        for r in 1..8 {
            for c in 1..8 {
                for ch in 0..2 {
                    let x = a[(r * w + c) * 2 + ch];
                    let y = b[((r + 1) * w + c + 2) * 2 + ch];
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }
}
