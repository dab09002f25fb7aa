use rand::Rng;

use super::{gemm, init_uniform, Param, Tensor};

/// A differentiable stage. `forward` caches what `backward` needs;
/// `backward` accumulates parameter gradients and returns the input gradient.
pub trait Layer: Send + Sync {
    fn forward(&mut self, x: &Tensor, train: bool) -> Tensor;
    fn backward(&mut self, dy: &Tensor) -> Tensor;
    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }
    fn name(&self) -> &'static str;
}

/// Fully connected layer on `[n, in]` rows.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: Param,
    pub b: Param,
    input: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng>(name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        Self {
            w: Param::new(
                format!("{name}.w"),
                &[fan_out, fan_in],
                init_uniform(rng, fan_in * fan_out, fan_in),
            ),
            b: Param::new(
                format!("{name}.b"),
                &[fan_out],
                init_uniform(rng, fan_out, fan_in),
            ),
            input: None,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.w.shape[1]
    }

    pub fn fan_out(&self) -> usize {
        self.w.shape[0]
    }

    /// Forward pass without caching.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        let n = x.batch();
        let (i, o) = (self.fan_in(), self.fan_out());
        assert_eq!(x.row_len(), i, "{} input width", self.w.name);
        let mut y = vec![0.0; n * o];
        for r in 0..n {
            y[r * o..(r + 1) * o].copy_from_slice(&self.b.value);
        }
        gemm(n, i, o, &x.data, false, &self.w.value, true, 1.0, &mut y);
        Tensor::from_vec(&[n, o], y)
    }
}

impl Layer for Linear {
    fn forward(&mut self, x: &Tensor, _train: bool) -> Tensor {
        let y = self.apply(x);
        self.input = Some(x.clone());
        y
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("forward before backward");
        let n = x.batch();
        let (i, o) = (self.fan_in(), self.fan_out());
        gemm(o, n, i, &dy.data, true, &x.data, false, 1.0, &mut self.w.grad);
        for r in 0..n {
            for (g, d) in self.b.grad.iter_mut().zip(&dy.data[r * o..(r + 1) * o]) {
                *g += d;
            }
        }
        let mut dx = vec![0.0; n * i];
        gemm(n, o, i, &dy.data, false, &self.w.value, false, 0.0, &mut dx);
        Tensor::from_vec(&x.shape, dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }

    fn name(&self) -> &'static str {
        "linear"
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    input: Option<Tensor>,
}

impl Layer for Relu {
    fn forward(&mut self, x: &Tensor, _train: bool) -> Tensor {
        self.input = Some(x.clone());
        Tensor::from_vec(&x.shape, x.data.iter().map(|v| v.max(0.0)).collect())
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("forward before backward");
        let d = dy
            .data
            .iter()
            .zip(&x.data)
            .map(|(g, v)| if *v > 0.0 { *g } else { 0.0 })
            .collect();
        Tensor::from_vec(&dy.shape, d)
    }

    fn name(&self) -> &'static str {
        "relu"
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[derive(Debug, Clone, Default)]
pub struct Sigmoid {
    output: Option<Tensor>,
}

impl Layer for Sigmoid {
    fn forward(&mut self, x: &Tensor, _train: bool) -> Tensor {
        let y = Tensor::from_vec(&x.shape, x.data.iter().map(|v| sigmoid(*v)).collect());
        self.output = Some(y.clone());
        y
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let y = self.output.as_ref().expect("forward before backward");
        let d = dy
            .data
            .iter()
            .zip(&y.data)
            .map(|(g, s)| g * s * (1.0 - s))
            .collect();
        Tensor::from_vec(&dy.shape, d)
    }

    fn name(&self) -> &'static str {
        "sigmoid"
    }
}

#[derive(Debug, Clone, Default)]
pub struct Tanh {
    output: Option<Tensor>,
}

impl Layer for Tanh {
    fn forward(&mut self, x: &Tensor, _train: bool) -> Tensor {
        let y = Tensor::from_vec(&x.shape, x.data.iter().map(|v| v.tanh()).collect());
        self.output = Some(y.clone());
        y
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let y = self.output.as_ref().expect("forward before backward");
        let d = dy
            .data
            .iter()
            .zip(&y.data)
            .map(|(g, t)| g * (1.0 - t * t))
            .collect();
        Tensor::from_vec(&dy.shape, d)
    }

    fn name(&self) -> &'static str {
        "tanh"
    }
}

/// `[n, ...] -> [n, prod(...)]`.
#[derive(Debug, Clone, Default)]
pub struct Flatten {
    shape: Vec<usize>,
}

impl Layer for Flatten {
    fn forward(&mut self, x: &Tensor, _train: bool) -> Tensor {
        self.shape = x.shape.clone();
        x.clone().reshaped(&[x.batch(), x.row_len()])
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        dy.clone().reshaped(&self.shape)
    }

    fn name(&self) -> &'static str {
        "flatten"
    }
}

/// `[n, k] -> [n, dims...]`.
#[derive(Debug, Clone)]
pub struct Reshape {
    pub dims: Vec<usize>,
}

impl Layer for Reshape {
    fn forward(&mut self, x: &Tensor, _train: bool) -> Tensor {
        let mut s = vec![x.batch()];
        s.extend(&self.dims);
        x.clone().reshaped(&s)
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        dy.clone().reshaped(&[dy.batch(), dy.row_len()])
    }

    fn name(&self) -> &'static str {
        "reshape"
    }
}

#[derive(Default)]
pub struct Sequential {
    pub layers: Vec<Box<dyn Layer>>,
}

impl Sequential {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push<L: Layer + 'static>(&mut self, layer: L) {
        self.layers.push(Box::new(layer));
    }

    pub fn forward(&mut self, x: &Tensor, train: bool) -> Tensor {
        let mut h = x.clone();
        for l in &mut self.layers {
            h = l.forward(&h, train);
        }
        h
    }

    pub fn backward(&mut self, dy: &Tensor) -> Tensor {
        let mut g = dy.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g);
        }
        g
    }

    pub fn params(&self) -> Vec<&Param> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

impl std::fmt::Debug for Sequential {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list()
            .entries(self.layers.iter().map(|l| l.name()))
            .finish()
    }
}
