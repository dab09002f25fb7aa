//! Recurrent predictor with parametric bias: (s_{t+1}, u_{t+1}) = f(s_t, u_t, p).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FlsError, Result};
use crate::nn::{Adam, Linear, Lstm, LstmState, Param, Tensor};
use crate::noise::{difference_covariance, NoiseModel};

/// Layer widths from input to output; entries 4 and 5 are the recurrent layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnpbSpec {
    pub units: Vec<usize>,
    pub n_s: usize,
    pub n_u: usize,
    pub n_p: usize,
}

impl RnnpbSpec {
    fn with_hidden(hidden: [usize; 8], n_s: usize, n_u: usize, n_p: usize) -> Self {
        let mut units = vec![n_u + n_s + n_p];
        units.extend(hidden);
        units.push(n_u + n_s);
        Self { units, n_s, n_u, n_p }
    }

    pub fn paper(n_p: usize) -> Self {
        Self::with_hidden([500, 300, 100, 100, 100, 100, 300, 500], 12, 8, n_p)
    }

    pub fn desk(n_p: usize) -> Self {
        Self::with_hidden([64, 32, 16, 16, 16, 16, 32, 64], 12, 8, n_p)
    }

    /// Eight units everywhere inside; used for gradient checks.
    pub fn reduced(n_p: usize) -> Self {
        Self::with_hidden([8; 8], 12, 8, n_p)
    }

    pub fn io_dim(&self) -> usize {
        self.n_s + self.n_u
    }

    pub fn validate(&self) -> Result<()> {
        if self.units.len() != 10
            || self.units[0] != self.io_dim() + self.n_p
            || self.units[9] != self.io_dim()
            || self.units.contains(&0)
        {
            return Err(FlsError::InvalidConfig(format!("rnnpb units {:?}", self.units)));
        }
        Ok(())
    }
}

/// Recurrent state of both LSTM layers.
#[derive(Debug, Clone, PartialEq)]
pub struct RnnpbState {
    pub layers: [LstmState; 2],
}

impl RnnpbState {
    /// Both layers' hidden vectors, concatenated.
    pub fn latent(&self) -> Vec<f64> {
        let mut v = self.layers[0].h.clone();
        v.extend(&self.layers[1].h);
        v
    }
}

/// Three tanh dense layers, two LSTM layers, three tanh dense layers and a
/// linear output layer.
#[derive(Debug, Clone)]
pub struct Rnnpb {
    pub spec: RnnpbSpec,
    pub pre: Vec<Linear>,
    pub lstm: [Lstm; 2],
    pub post: Vec<Linear>,
    pre_out: Vec<Tensor>,
    post_out: Vec<Tensor>,
}

fn tanh_tensor(x: Tensor) -> Tensor {
    let mut x = x;
    for v in &mut x.data {
        *v = v.tanh();
    }
    x
}

fn tanh_backward(dy: &Tensor, y: &Tensor) -> Tensor {
    Tensor::from_vec(
        &dy.shape,
        dy.data.iter().zip(&y.data).map(|(g, t)| g * (1.0 - t * t)).collect(),
    )
}

impl Rnnpb {
    pub fn new(spec: RnnpbSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = &spec.units;
        let pre = (0..3)
            .map(|i| Linear::new(&format!("rnn.pre{i}"), u[i], u[i + 1], &mut rng))
            .collect();
        let lstm = [
            Lstm::new("rnn.lstm0", u[3], u[4], &mut rng),
            Lstm::new("rnn.lstm1", u[4], u[5], &mut rng),
        ];
        let post = (5..9)
            .map(|i| Linear::new(&format!("rnn.post{}", i - 5), u[i], u[i + 1], &mut rng))
            .collect();
        Ok(Self {
            spec,
            pre,
            lstm,
            post,
            pre_out: Vec::new(),
            post_out: Vec::new(),
        })
    }

    pub fn zero_state(&self, batch: usize) -> RnnpbState {
        RnnpbState {
            layers: [
                LstmState::zeros(batch, self.spec.units[4]),
                LstmState::zeros(batch, self.spec.units[5]),
            ],
        }
    }

    /// One step for a batch of independent streams, `x` is `[batch, units[0]]`.
    pub fn step(&self, x: &Tensor, state: &RnnpbState) -> Result<(Tensor, RnnpbState)> {
        let batch = state.layers[0].h.len() / self.spec.units[4];
        if x.shape != [batch, self.spec.units[0]] {
            return Err(FlsError::Dimension {
                what: "rnnpb step input",
                expected: batch * self.spec.units[0],
                got: x.len(),
            });
        }
        let mut h = x.clone();
        for l in &self.pre {
            h = tanh_tensor(l.apply(&h));
        }
        let s0 = self.lstm[0].step(&h.data, &state.layers[0]);
        let s1 = self.lstm[1].step(&s0.h, &state.layers[1]);
        h = Tensor::from_vec(&[batch, self.spec.units[5]], s1.h.clone());
        let last = self.post.len() - 1;
        for (i, l) in self.post.iter().enumerate() {
            h = l.apply(&h);
            if i < last {
                h = tanh_tensor(h);
            }
        }
        Ok((h, RnnpbState { layers: [s0, s1] }))
    }

    /// Sequence forward over rows ordered `t * batch + b`, caching for backward.
    pub fn forward_seq(&mut self, x: &Tensor, steps: usize, batch: usize) -> Tensor {
        self.pre_out.clear();
        self.post_out.clear();
        let mut h = x.clone();
        for l in &mut self.pre {
            h = tanh_tensor(crate::nn::Layer::forward(l, &h, true));
            self.pre_out.push(h.clone());
        }
        h = self.lstm[0].forward_seq(&h, steps, batch);
        h = self.lstm[1].forward_seq(&h, steps, batch);
        let last = self.post.len() - 1;
        for (i, l) in self.post.iter_mut().enumerate() {
            h = crate::nn::Layer::forward(l, &h, true);
            if i < last {
                h = tanh_tensor(h);
                self.post_out.push(h.clone());
            }
        }
        h
    }

    /// Returns the gradient with respect to the sequence input.
    pub fn backward_seq(&mut self, dy: &Tensor) -> Tensor {
        let mut g = dy.clone();
        let last = self.post.len() - 1;
        for i in (0..self.post.len()).rev() {
            if i < last {
                g = tanh_backward(&g, &self.post_out[i]);
            }
            g = crate::nn::Layer::backward(&mut self.post[i], &g);
        }
        g = self.lstm[1].backward_seq(&g);
        g = self.lstm[0].backward_seq(&g);
        for i in (0..self.pre.len()).rev() {
            g = tanh_backward(&g, &self.pre_out[i]);
            g = crate::nn::Layer::backward(&mut self.pre[i], &g);
        }
        g
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p: Vec<&Param> = Vec::new();
        for l in &self.pre {
            p.push(&l.w);
            p.push(&l.b);
        }
        for l in &self.lstm {
            p.extend(l.params());
        }
        for l in &self.post {
            p.push(&l.w);
            p.push(&l.b);
        }
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p: Vec<&mut Param> = Vec::new();
        for l in &mut self.pre {
            p.push(&mut l.w);
            p.push(&mut l.b);
        }
        for l in &mut self.lstm {
            p.extend(l.params_mut());
        }
        for l in &mut self.post {
            p.push(&mut l.w);
            p.push(&mut l.b);
        }
        p
    }
}

/// Per-dimension affine normalization of the (s; u) vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn fit(seqs: &[Vec<Vec<f64>>]) -> Result<Self> {
        let dim = seqs
            .iter()
            .flat_map(|s| s.first())
            .map(|v| v.len())
            .next()
            .ok_or_else(|| FlsError::InvalidInput("empty corpus".into()))?;
        let n: usize = seqs.iter().map(|s| s.len()).sum();
        let mut mean = vec![0.0; dim];
        for v in seqs.iter().flatten() {
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; dim];
        for v in seqs.iter().flatten() {
            for ((s, x), m) in var.iter_mut().zip(v).zip(&mean) {
                *s += (x - m) * (x - m);
            }
        }
        let std = var.iter().map(|s| (s / n as f64).sqrt().max(1e-3)).collect();
        Ok(Self { mean, std })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn invert(&self, v: &[f64]) -> Vec<f64> {
        v.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((x, m), s)| x * s + m)
            .collect()
    }
}

/// Trained predictor, its normalization and one parametric bias per demonstration.
#[derive(Debug, Clone)]
pub struct RnnpbModel {
    pub net: Rnnpb,
    pub norm: Normalizer,
    pub pb: Param,
}

impl RnnpbModel {
    pub fn new(spec: RnnpbSpec, norm: Normalizer, demos: usize, seed: u64) -> Result<Self> {
        let n_p = spec.n_p;
        if norm.mean.len() != spec.io_dim() {
            return Err(FlsError::Dimension {
                what: "normalizer",
                expected: spec.io_dim(),
                got: norm.mean.len(),
            });
        }
        Ok(Self {
            net: Rnnpb::new(spec, seed)?,
            norm,
            pb: Param::new("pb", &[demos, n_p], vec![0.0; demos * n_p]),
        })
    }

    pub fn spec(&self) -> &RnnpbSpec {
        &self.net.spec
    }

    pub fn pb_row(&self, k: usize) -> &[f64] {
        let n_p = self.spec().n_p;
        &self.pb.value[k * n_p..(k + 1) * n_p]
    }

    /// One prediction in physical units: next (s; u) from the current (s; u) and `p`.
    pub fn predict(&self, z: &[f64], p: &[f64], state: &RnnpbState) -> Result<(Vec<f64>, RnnpbState)> {
        let spec = self.spec();
        if z.len() != spec.io_dim() || p.len() != spec.n_p {
            return Err(FlsError::Dimension {
                what: "rnnpb input",
                expected: spec.io_dim() + spec.n_p,
                got: z.len() + p.len(),
            });
        }
        let mut x = self.norm.apply(z);
        x.extend_from_slice(p);
        let (y, next) = self.net.step(&Tensor::from_vec(&[1, x.len()], x), state)?;
        Ok((self.norm.invert(&y.data), next))
    }

    /// Batched teacher-forced pass: mean squared error in normalized units over
    /// valid steps. `inputs[k][t]` predicts `targets[k][t]`.
    pub fn sequence_loss(&mut self, inputs: &[Vec<Vec<f64>>], targets: &[Vec<Vec<f64>>], train: bool) -> f64 {
        let spec = self.spec().clone();
        let (d, n_p) = (spec.io_dim(), spec.n_p);
        let batch = inputs.len();
        let steps = inputs.iter().map(|s| s.len()).max().unwrap_or(0);
        let width = d + n_p;
        let mut x = vec![0.0; steps * batch * width];
        for (b, seq) in inputs.iter().enumerate() {
            let p = &self.pb.value[b * n_p..(b + 1) * n_p];
            for t in 0..steps {
                let row = &mut x[(t * batch + b) * width..(t * batch + b + 1) * width];
                if t < seq.len() {
                    row[..d].copy_from_slice(&self.norm.apply(&seq[t]));
                }
                row[d..].copy_from_slice(p);
            }
        }
        let y = self
            .net
            .forward_seq(&Tensor::from_vec(&[steps * batch, width], x), steps, batch);
        let valid: usize = inputs.iter().map(|s| s.len()).sum();
        let denom = (valid * d) as f64;
        let mut loss = 0.0;
        let mut dy = vec![0.0; y.len()];
        for (b, seq) in targets.iter().enumerate() {
            for (t, target) in seq.iter().enumerate() {
                let r = t * batch + b;
                let tn = self.norm.apply(target);
                for j in 0..d {
                    let e = y.data[r * d + j] - tn[j];
                    loss += e * e;
                    dy[r * d + j] = 2.0 * e / denom;
                }
            }
        }
        if train {
            let dx = self.net.backward_seq(&Tensor::from_vec(&y.shape, dy));
            for (b, seq) in inputs.iter().enumerate() {
                for t in 0..seq.len() {
                    let r = t * batch + b;
                    for j in 0..n_p {
                        self.pb.grad[b * n_p + j] += dx.data[r * width + d + j];
                    }
                }
            }
        }
        loss / denom
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.net.params_mut();
        p.push(&mut self.pb);
        p
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.net.params();
        p.push(&self.pb);
        p
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RnnTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub noise_scale: f64,
    /// Weight of the mean squared parametric bias added to the loss.
    pub pb_decay: f64,
    pub seed: u64,
}

impl Default for RnnTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1500,
            lr: 1e-3,
            noise_scale: 0.3,
            pb_decay: 0.0,
            seed: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnEpoch {
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnReport {
    pub initial_loss: f64,
    pub final_clean_loss: f64,
    pub epochs: Vec<RnnEpoch>,
}

/// Joint training of the weights and the per-sequence parametric biases.
///
/// Each epoch draws fresh input noise with covariance `noise_scale² Σ`, Σ
/// being the covariance of step differences over the clean corpus; targets
/// stay clean. One Adam update per epoch over all sequences.
pub fn train_rnnpb(
    seqs: &[Vec<Vec<f64>>],
    spec: RnnpbSpec,
    cfg: &RnnTrainConfig,
    model_seed: u64,
) -> Result<(RnnpbModel, RnnReport)> {
    if seqs.is_empty() || seqs.iter().any(|s| s.len() < 2) {
        return Err(FlsError::InvalidInput("every training sequence needs two or more steps".into()));
    }
    let norm = Normalizer::fit(seqs)?;
    let mut model = RnnpbModel::new(spec, norm, seqs.len(), model_seed)?;
    let inputs: Vec<Vec<Vec<f64>>> = seqs.iter().map(|s| s[..s.len() - 1].to_vec()).collect();
    let targets: Vec<Vec<Vec<f64>>> = seqs.iter().map(|s| s[1..].to_vec()).collect();
    let noise = if cfg.noise_scale > 0.0 {
        Some(NoiseModel::new(&difference_covariance(seqs)?, cfg.noise_scale)?)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Adam::new(cfg.lr);
    let initial = model.sequence_loss(&inputs, &targets, false);
    let mut report = RnnReport {
        initial_loss: initial,
        final_clean_loss: initial,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    for epoch in 0..cfg.epochs {
        let t0 = std::time::Instant::now();
        let noisy;
        let batch = match &noise {
            Some(n) => {
                noisy = n.perturb(&inputs, &mut rng);
                &noisy
            }
            None => &inputs,
        };
        let snapshot: Vec<Vec<f64>> = model.params().iter().map(|p| p.value.clone()).collect();
        model.zero_grad();
        let loss = model.sequence_loss(batch, &targets, true);
        if cfg.pb_decay > 0.0 {
            let k = model.pb.shape[0] as f64;
            for (g, v) in model.pb.grad.iter_mut().zip(&model.pb.value) {
                *g += 2.0 * cfg.pb_decay * v / k;
            }
        }
        let grads_ok = model.params().iter().all(|p| p.grad.iter().all(|g| g.is_finite()));
        if !loss.is_finite() || !grads_ok {
            for (p, v) in model.params_mut().into_iter().zip(snapshot) {
                p.value = v;
            }
            return Err(FlsError::Diverged(format!("rnnpb loss non-finite at epoch {epoch}")));
        }
        opt.step(&mut model.params_mut());
        let e = RnnEpoch {
            epoch,
            loss,
            seconds: t0.elapsed().as_secs_f64(),
        };
        if epoch % 100 == 0 || epoch + 1 == cfg.epochs {
            log::info!("rnnpb epoch {} loss {:.5}", epoch, loss);
        }
        report.epochs.push(e);
    }
    report.final_clean_loss = model.sequence_loss(&inputs, &targets, false);
    Ok((model, report))
}
