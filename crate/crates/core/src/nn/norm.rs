use super::{Layer, Param, Tensor};

/// Per-channel batch normalization over `[n, c, ...]`.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Param,
    pub running_var: Param,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<Cache>,
}

#[derive(Debug, Clone)]
struct Cache {
    xhat: Tensor,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    pub fn new(name: &str, channels: usize) -> Self {
        Self {
            gamma: Param::new(format!("{name}.gamma"), &[channels], vec![1.0; channels]),
            beta: Param::new(format!("{name}.beta"), &[channels], vec![0.0; channels]),
            running_mean: Param::buffer(format!("{name}.mean"), &[channels], vec![0.0; channels]),
            running_var: Param::buffer(format!("{name}.var"), &[channels], vec![1.0; channels]),
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }

    fn channels(&self) -> usize {
        self.gamma.shape[0]
    }

    /// (batch, channels, spatial) view of a tensor shape.
    fn dims(&self, shape: &[usize]) -> (usize, usize, usize) {
        let c = shape[1];
        assert_eq!(c, self.channels(), "{} channels", self.gamma.name);
        (shape[0], c, shape[2..].iter().product::<usize>().max(1))
    }
}

impl Layer for BatchNorm {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let (n, c, s) = self.dims(&x.shape);
        let m = (n * s) as f64;
        let idx = |b: usize, ch: usize, i: usize| (b * c + ch) * s + i;
        let mut y = vec![0.0; x.len()];
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let (mean, var) = if train {
                let mut sum = 0.0;
                for b in 0..n {
                    for i in 0..s {
                        sum += x.data[idx(b, ch, i)];
                    }
                }
                let mean = sum / m;
                let mut sq = 0.0;
                for b in 0..n {
                    for i in 0..s {
                        let d = x.data[idx(b, ch, i)] - mean;
                        sq += d * d;
                    }
                }
                let var = sq / m;
                let mo = self.momentum;
                self.running_mean.value[ch] = (1.0 - mo) * self.running_mean.value[ch] + mo * mean;
                self.running_var.value[ch] = (1.0 - mo) * self.running_var.value[ch] + mo * var;
                (mean, var)
            } else {
                (self.running_mean.value[ch], self.running_var.value[ch])
            };
            let is = 1.0 / (var + self.eps).sqrt();
            inv_std[ch] = is;
            let (gm, bt) = (self.gamma.value[ch], self.beta.value[ch]);
            for b in 0..n {
                for i in 0..s {
                    let k = idx(b, ch, i);
                    let h = (x.data[k] - mean) * is;
                    xhat[k] = h;
                    y[k] = gm * h + bt;
                }
            }
        }
        self.cache = train.then(|| Cache {
            xhat: Tensor::from_vec(&x.shape, xhat),
            inv_std,
        });
        Tensor::from_vec(&x.shape, y)
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let cache = self
            .cache
            .as_ref()
            .expect("batch norm backward needs a training-mode forward");
        let (n, c, s) = self.dims(&dy.shape);
        let m = (n * s) as f64;
        let idx = |b: usize, ch: usize, i: usize| (b * c + ch) * s + i;
        let mut dx = vec![0.0; dy.len()];
        for ch in 0..c {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for b in 0..n {
                for i in 0..s {
                    let k = idx(b, ch, i);
                    sum_dy += dy.data[k];
                    sum_dy_xhat += dy.data[k] * cache.xhat.data[k];
                }
            }
            self.gamma.grad[ch] += sum_dy_xhat;
            self.beta.grad[ch] += sum_dy;
            let scale = self.gamma.value[ch] * cache.inv_std[ch] / m;
            for b in 0..n {
                for i in 0..s {
                    let k = idx(b, ch, i);
                    dx[k] = scale * (m * dy.data[k] - sum_dy - cache.xhat.data[k] * sum_dy_xhat);
                }
            }
        }
        Tensor::from_vec(&dy.shape, dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta, &self.running_mean, &self.running_var]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
        ]
    }

    fn name(&self) -> &'static str {
        "batch_norm"
    }
}
