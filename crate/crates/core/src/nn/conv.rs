use rand::Rng;

use super::{gemm, init_uniform, Layer, Param, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn conv(c: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Self {
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Self { c, h, w, k, stride, pad, oh, ow }
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    /// Source pixel for kernel tap (ky, kx) at output (oy, ox), if inside the image.
    #[inline]
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky) as isize - self.pad as isize;
        let x = (ox * self.stride + kx) as isize - self.pad as isize;
        (y >= 0 && x >= 0 && (y as usize) < self.h && (x as usize) < self.w)
            .then_some((y as usize, x as usize))
    }
}

/// `[c, h, w]` -> `[c*k*k, oh*ow]`.
fn im2col(g: &Geometry, x: &[f64], cols: &mut [f64]) {
    let n = g.cols();
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * n..(row + 1) * n];
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        dst[oy * g.ow + ox] = match g.source(oy, ox, ky, kx) {
                            Some((y, xx)) => x[(c * g.h + y) * g.w + xx],
                            None => 0.0,
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`: scatters columns back and sums overlaps.
fn col2im(g: &Geometry, cols: &[f64], x: &mut [f64]) {
    let n = g.cols();
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * n..(row + 1) * n];
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        if let Some((y, xx)) = g.source(oy, ox, ky, kx) {
                            x[(c * g.h + y) * g.w + xx] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution on `[n, c, h, w]`.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub w: Param,
    pub b: Param,
    k: usize,
    stride: usize,
    pad: usize,
    cache: Option<(Vec<usize>, Vec<Vec<f64>>)>,
}

impl Conv2d {
    pub fn new<R: Rng>(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * k * k;
        Self {
            w: Param::new(format!("{name}.w"), &[cout, fan_in], init_uniform(rng, cout * fan_in, fan_in)),
            b: Param::new(format!("{name}.b"), &[cout], init_uniform(rng, cout, fan_in)),
            k,
            stride,
            pad,
            cache: None,
        }
    }

    fn cout(&self) -> usize {
        self.w.shape[0]
    }

    fn geometry(&self, shape: &[usize]) -> Geometry {
        Geometry::conv(shape[1], shape[2], shape[3], self.k, self.stride, self.pad)
    }
}

impl Layer for Conv2d {
    fn forward(&mut self, x: &Tensor, _train: bool) -> Tensor {
        let g = self.geometry(&x.shape);
        assert_eq!(g.rows(), self.w.shape[1], "{} input channels", self.w.name);
        let (n, co) = (x.batch(), self.cout());
        let per = co * g.cols();
        let mut y = vec![0.0; n * per];
        let mut all_cols = Vec::with_capacity(n);
        for s in 0..n {
            let mut cols = vec![0.0; g.rows() * g.cols()];
            im2col(&g, x.row(s), &mut cols);
            let out = &mut y[s * per..(s + 1) * per];
            for (o, b) in self.b.value.iter().enumerate() {
                out[o * g.cols()..(o + 1) * g.cols()].fill(*b);
            }
            gemm(co, g.rows(), g.cols(), &self.w.value, false, &cols, false, 1.0, out);
            all_cols.push(cols);
        }
        self.cache = Some((x.shape.clone(), all_cols));
        Tensor::from_vec(&[n, co, g.oh, g.ow], y)
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let (shape, all_cols) = self.cache.as_ref().expect("forward before backward");
        let g = self.geometry(shape);
        let (n, co) = (shape[0], self.cout());
        let per_in = g.c * g.h * g.w;
        let per = co * g.cols();
        let mut dx = vec![0.0; n * per_in];
        let mut dcols = vec![0.0; g.rows() * g.cols()];
        for s in 0..n {
            let d = &dy.data[s * per..(s + 1) * per];
            gemm(co, g.cols(), g.rows(), d, false, &all_cols[s], true, 1.0, &mut self.w.grad);
            for o in 0..co {
                self.b.grad[o] += d[o * g.cols()..(o + 1) * g.cols()].iter().sum::<f64>();
            }
            gemm(g.rows(), co, g.cols(), &self.w.value, true, d, false, 0.0, &mut dcols);
            col2im(&g, &dcols, &mut dx[s * per_in..(s + 1) * per_in]);
        }
        Tensor::from_vec(shape, dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }

    fn name(&self) -> &'static str {
        "conv2d"
    }
}

/// Transposed convolution, the adjoint of `Conv2d` with the same kernel
/// geometry. `output_padding` adds rows/columns on the far edge so that a
/// stride-2 layer exactly doubles the spatial size.
#[derive(Debug, Clone)]
pub struct ConvTranspose2d {
    pub w: Param,
    pub b: Param,
    k: usize,
    stride: usize,
    pad: usize,
    output_padding: usize,
    input: Option<Tensor>,
}

impl ConvTranspose2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        pad: usize,
        output_padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * k * k / (stride * stride).max(1);
        Self {
            w: Param::new(
                format!("{name}.w"),
                &[cin, cout * k * k],
                init_uniform(rng, cin * cout * k * k, fan_in),
            ),
            b: Param::new(format!("{name}.b"), &[cout], init_uniform(rng, cout, fan_in)),
            k,
            stride,
            pad,
            output_padding,
            input: None,
        }
    }

    fn cout(&self) -> usize {
        self.b.shape[0]
    }

    /// Geometry of the equivalent forward convolution over the output image.
    fn geometry(&self, shape: &[usize]) -> Geometry {
        let (h, w) = (shape[2], shape[3]);
        let oh = (h - 1) * self.stride + self.k + self.output_padding - 2 * self.pad;
        let ow = (w - 1) * self.stride + self.k + self.output_padding - 2 * self.pad;
        let g = Geometry::conv(self.cout(), oh, ow, self.k, self.stride, self.pad);
        debug_assert_eq!((g.oh, g.ow), (h, w));
        g
    }
}

impl Layer for ConvTranspose2d {
    fn forward(&mut self, x: &Tensor, _train: bool) -> Tensor {
        let g = self.geometry(&x.shape);
        let (n, ci, co) = (x.batch(), x.shape[1], self.cout());
        assert_eq!(ci, self.w.shape[0], "{} input channels", self.w.name);
        let per_out = co * g.h * g.w;
        let mut y = vec![0.0; n * per_out];
        let mut cols = vec![0.0; g.rows() * g.cols()];
        for s in 0..n {
            gemm(g.rows(), ci, g.cols(), &self.w.value, true, x.row(s), false, 0.0, &mut cols);
            let out = &mut y[s * per_out..(s + 1) * per_out];
            for (o, b) in self.b.value.iter().enumerate() {
                out[o * g.h * g.w..(o + 1) * g.h * g.w].fill(*b);
            }
            col2im(&g, &cols, out);
        }
        self.input = Some(x.clone());
        Tensor::from_vec(&[n, co, g.h, g.w], y)
    }

    fn backward(&mut self, dy: &Tensor) -> Tensor {
        let x = self.input.as_ref().expect("forward before backward");
        let g = self.geometry(&x.shape);
        let (n, ci, co) = (x.batch(), x.shape[1], self.cout());
        let per_out = co * g.h * g.w;
        let mut dx = vec![0.0; x.len()];
        let mut dcols = vec![0.0; g.rows() * g.cols()];
        let per_in = x.row_len();
        for s in 0..n {
            let d = &dy.data[s * per_out..(s + 1) * per_out];
            for o in 0..co {
                self.b.grad[o] += d[o * g.h * g.w..(o + 1) * g.h * g.w].iter().sum::<f64>();
            }
            im2col(&g, d, &mut dcols);
            gemm(ci, g.cols(), g.rows(), x.row(s), false, &dcols, true, 1.0, &mut self.w.grad);
            gemm(ci, g.rows(), g.cols(), &self.w.value, false, &dcols, false, 0.0, &mut dx[s * per_in..(s + 1) * per_in]);
        }
        Tensor::from_vec(&x.shape, dx)
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.w, &self.b]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w, &mut self.b]
    }

    fn name(&self) -> &'static str {
        "conv_transpose2d"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn stride_two_halves_and_doubles() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut conv = Conv2d::new("c", 3, 4, 3, 2, 1, &mut rng);
        let y = conv.forward(&Tensor::zeros(&[2, 3, 96, 128]), false);
        assert_eq!(y.shape, vec![2, 4, 48, 64]);
        let mut de = ConvTranspose2d::new("d", 4, 3, 3, 2, 1, 1, &mut rng);
        let z = de.forward(&y, false);
        assert_eq!(z.shape, vec![2, 3, 96, 128]);
    }

    #[test]
    fn im2col_adjoint_identity() {
        // <im2col(x), c> == <x, col2im(c)>
        let g = Geometry::conv(2, 5, 7, 3, 2, 1);
        let x: Vec<f64> = (0..2 * 5 * 7).map(|i| (i as f64 * 0.7).sin()).collect();
        let c: Vec<f64> = (0..g.rows() * g.cols()).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut cols = vec![0.0; c.len()];
        im2col(&g, &x, &mut cols);
        let mut back = vec![0.0; x.len()];
        col2im(&g, &c, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
