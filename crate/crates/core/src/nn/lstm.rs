use rand::Rng;

use super::layers::sigmoid;
use super::{gemm, init_uniform, Param, Tensor};

/// Hidden and cell state for a batch of streams, each `[batch * hidden]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        Self {
            h: vec![0.0; batch * hidden],
            c: vec![0.0; batch * hidden],
        }
    }
}

/// Activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmCache {
    steps: usize,
    batch: usize,
    x: Tensor,
    /// Activated gates per step, `[steps * batch * 4h]` in (i, f, g, o) blocks.
    gates: Vec<f64>,
    c: Vec<f64>,
    h: Vec<f64>,
}

/// Long short-term memory layer. Gate rows are ordered input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct Lstm {
    pub wx: Param,
    pub wh: Param,
    pub b: Param,
    cache: Option<LstmCache>,
}

impl Lstm {
    pub fn new<R: Rng>(name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let mut b = init_uniform(rng, 4 * hidden, hidden);
        for v in &mut b[hidden..2 * hidden] {
            *v += 1.0;
        }
        Self {
            wx: Param::new(format!("{name}.wx"), &[4 * hidden, input], init_uniform(rng, 4 * hidden * input, hidden)),
            wh: Param::new(format!("{name}.wh"), &[4 * hidden, hidden], init_uniform(rng, 4 * hidden * hidden, hidden)),
            b: Param::new(format!("{name}.b"), &[4 * hidden], b),
            cache: None,
        }
    }

    pub fn input_size(&self) -> usize {
        self.wx.shape[1]
    }

    pub fn hidden_size(&self) -> usize {
        self.wh.shape[1]
    }

    /// One step for `batch` streams; writes activated gates into `gates`.
    fn cell(&self, x: &[f64], prev: &LstmState, batch: usize, gates: &mut [f64]) -> LstmState {
        let (hn, inp) = (self.hidden_size(), self.input_size());
        let g4 = 4 * hn;
        for r in 0..batch {
            gates[r * g4..(r + 1) * g4].copy_from_slice(&self.b.value);
        }
        gemm(batch, inp, g4, x, false, &self.wx.value, true, 1.0, gates);
        gemm(batch, hn, g4, &prev.h, false, &self.wh.value, true, 1.0, gates);
        let mut next = LstmState::zeros(batch, hn);
        for r in 0..batch {
            let gr = &mut gates[r * g4..(r + 1) * g4];
            for j in 0..hn {
                let i = sigmoid(gr[j]);
                let f = sigmoid(gr[hn + j]);
                let g = gr[2 * hn + j].tanh();
                let o = sigmoid(gr[3 * hn + j]);
                gr[j] = i;
                gr[hn + j] = f;
                gr[2 * hn + j] = g;
                gr[3 * hn + j] = o;
                let c = f * prev.c[r * hn + j] + i * g;
                next.c[r * hn + j] = c;
                next.h[r * hn + j] = o * c.tanh();
            }
        }
        next
    }

    /// Single inference step; `x` is `[batch * input]`.
    pub fn step(&self, x: &[f64], state: &LstmState) -> LstmState {
        let batch = state.h.len() / self.hidden_size();
        let mut gates = vec![0.0; batch * 4 * self.hidden_size()];
        self.cell(x, state, batch, &mut gates)
    }

    /// Runs `steps` time steps over rows ordered `t * batch + b`; returns all hidden states.
    pub fn forward_seq(&mut self, x: &Tensor, steps: usize, batch: usize) -> Tensor {
        let (hn, inp) = (self.hidden_size(), self.input_size());
        assert_eq!(x.shape, vec![steps * batch, inp], "{} input", self.wx.name);
        let g4 = 4 * hn;
        let mut gates = vec![0.0; steps * batch * g4];
        let mut cs = vec![0.0; steps * batch * hn];
        let mut hs = vec![0.0; steps * batch * hn];
        let mut state = LstmState::zeros(batch, hn);
        for t in 0..steps {
            let xt = &x.data[t * batch * inp..(t + 1) * batch * inp];
            state = self.cell(xt, &state, batch, &mut gates[t * batch * g4..(t + 1) * batch * g4]);
            cs[t * batch * hn..(t + 1) * batch * hn].copy_from_slice(&state.c);
            hs[t * batch * hn..(t + 1) * batch * hn].copy_from_slice(&state.h);
        }
        self.cache = Some(LstmCache {
            steps,
            batch,
            x: x.clone(),
            gates,
            c: cs,
            h: hs.clone(),
        });
        Tensor::from_vec(&[steps * batch, hn], hs)
    }

    /// Backpropagation through the whole cached sequence.
    pub fn backward_seq(&mut self, dh_out: &Tensor) -> Tensor {
        let cache = self.cache.take().expect("forward before backward");
        let (hn, inp) = (self.hidden_size(), self.input_size());
        let (steps, batch) = (cache.steps, cache.batch);
        let g4 = 4 * hn;
        let bh = batch * hn;
        let mut dx = vec![0.0; steps * batch * inp];
        let mut dh_next = vec![0.0; bh];
        let mut dc_next = vec![0.0; bh];
        let mut da = vec![0.0; batch * g4];
        let zeros = vec![0.0; bh];
        for t in (0..steps).rev() {
            let gates = &cache.gates[t * batch * g4..(t + 1) * batch * g4];
            let c = &cache.c[t * bh..(t + 1) * bh];
            let (c_prev, h_prev) = if t == 0 {
                (&zeros[..], &zeros[..])
            } else {
                (&cache.c[(t - 1) * bh..t * bh], &cache.h[(t - 1) * bh..t * bh])
            };
            for r in 0..batch {
                for j in 0..hn {
                    let k = r * hn + j;
                    let gr = &gates[r * g4..(r + 1) * g4];
                    let (i, f, g, o) = (gr[j], gr[hn + j], gr[2 * hn + j], gr[3 * hn + j]);
                    let tc = c[k].tanh();
                    let dh = dh_out.data[t * bh + k] + dh_next[k];
                    let dc = dc_next[k] + dh * o * (1.0 - tc * tc);
                    let dar = &mut da[r * g4..(r + 1) * g4];
                    dar[j] = dc * g * i * (1.0 - i);
                    dar[hn + j] = dc * c_prev[k] * f * (1.0 - f);
                    dar[2 * hn + j] = dc * i * (1.0 - g * g);
                    dar[3 * hn + j] = dh * tc * o * (1.0 - o);
                    dc_next[k] = dc * f;
                }
            }
            let xt = &cache.x.data[t * batch * inp..(t + 1) * batch * inp];
            gemm(g4, batch, inp, &da, true, xt, false, 1.0, &mut self.wx.grad);
            gemm(g4, batch, hn, &da, true, h_prev, false, 1.0, &mut self.wh.grad);
            for r in 0..batch {
                for (gb, d) in self.b.grad.iter_mut().zip(&da[r * g4..(r + 1) * g4]) {
                    *gb += d;
                }
            }
            gemm(batch, g4, inp, &da, false, &self.wx.value, false, 0.0, &mut dx[t * batch * inp..(t + 1) * batch * inp]);
            gemm(batch, g4, hn, &da, false, &self.wh.value, false, 0.0, &mut dh_next);
        }
        Tensor::from_vec(&[steps * batch, inp], dx)
    }

    pub fn params(&self) -> Vec<&Param> {
        vec![&self.wx, &self.wh, &self.b]
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.wx, &mut self.wh, &mut self.b]
    }
}
