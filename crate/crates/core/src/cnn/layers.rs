//! Layer implementations with hand-derived backward passes.
//!
//! Activations travel as [`Batch`]es: `n` samples of `dim` values each,
//! sample-major, with every sample laid out channel-major.

use std::fmt::Debug;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::spec::{LayerSpec, Shape};
use crate::rng::{domain, substream};
use crate::{Error, Result};

/// Added to batch variances before taking the inverse square root.
pub const NORM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub n: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Batch {
    pub fn new(n: usize, dim: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), n * dim);
        Self { n, dim, data }
    }

    pub fn zeros(n: usize, dim: usize) -> Self {
        Self::new(n, dim, vec![0.0; n * dim])
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel statistics of one normalization layer over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    /// Number of values each channel's statistics were taken over.
    pub count: usize,
}

impl NormStats {
    /// Statistics of the union of the underlying batches.
    pub fn pool(parts: &[&NormStats]) -> Option<NormStats> {
        let first = parts.first()?;
        let total: usize = parts.iter().map(|s| s.count).sum();
        let channels = first.mean.len();
        let mut mean = vec![0.0; channels];
        let mut var = vec![0.0; channels];
        for c in 0..channels {
            mean[c] = parts
                .iter()
                .map(|s| s.count as f64 * s.mean[c])
                .sum::<f64>()
                / total as f64;
            var[c] = parts
                .iter()
                .map(|s| s.count as f64 * (s.var[c] + (s.mean[c] - mean[c]).powi(2)))
                .sum::<f64>()
                / total as f64;
        }
        Some(NormStats {
            mean,
            var,
            count: total,
        })
    }
}

pub struct ForwardCtx<'a> {
    pub mode: Mode,
    pub dropout_seed: u64,
    /// One key per sample; dropout masks are a function of (seed, layer, key).
    pub keys: &'a [u64],
    pub layer_index: usize,
}

/// Whatever a layer needs to remember between forward and backward.
#[derive(Debug, Clone, Default)]
pub struct Cache {
    pub aux: Vec<f64>,
    pub stats: Option<NormStats>,
    pub train: bool,
}

pub trait Layer: Debug + Send + Sync {
    fn kind(&self) -> &'static str;

    fn output_shape(&self) -> Shape;

    /// Named parameter segments, in storage order.
    fn param_segments(&self) -> Vec<(&'static str, usize)> {
        Vec::new()
    }

    fn param_len(&self) -> usize {
        self.param_segments().iter().map(|(_, n)| n).sum()
    }

    /// Length of non-learnable state such as running statistics.
    fn state_len(&self) -> usize {
        0
    }

    fn init(&self, _params: &mut [f64], _state: &mut [f64], _rng: &mut ChaCha8Rng) {}

    fn forward(&self, params: &[f64], state: &[f64], input: &Batch, ctx: &ForwardCtx) -> (Batch, Cache);

    /// Accumulates parameter gradients into `grad_params` and returns the
    /// gradient with respect to the input when `need_input_grad` is set.
    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        params: &[f64],
        state: &[f64],
        input: &Batch,
        output: &Batch,
        cache: &Cache,
        grad_out: &Batch,
        grad_params: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Batch>;

    /// Folds batch statistics into running state.
    fn update_state(&self, _state: &mut [f64], _stats: &NormStats, _momentum: f64) {}
}

pub fn build_layer(spec: &LayerSpec, input: Shape) -> Result<Box<dyn Layer>> {
    Ok(match *spec {
        LayerSpec::Conv2d {
            filters,
            kernel_h,
            kernel_w,
        } => Box::new(Conv2d {
            input,
            filters,
            kernel_h,
            kernel_w,
        }),
        LayerSpec::Norm => Box::new(Norm { shape: input }),
        LayerSpec::Relu => Box::new(Relu { shape: input }),
        LayerSpec::FullyConnected { units } => Box::new(FullyConnected {
            inputs: input.len(),
            units,
        }),
        LayerSpec::Dropout { p } => Box::new(Dropout { shape: input, p }),
        LayerSpec::Softmax => Box::new(Softmax { shape: input }),
        LayerSpec::Classification { classes } => Box::new(Classification { classes }),
        LayerSpec::Input { .. } => {
            return Err(Error::Config("input layer is not a compute layer".into()))
        }
    })
}

/// `c = alpha * a * b + beta * c` for row/column-strided matrices.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    debug_assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    debug_assert!((m - 1) * rsc + (n - 1) * csc < c.len());
    // SAFETY: the asserted extents keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

fn he_normal(params: &mut [f64], fan_in: usize, rng: &mut ChaCha8Rng) {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive fan-in");
    params.iter_mut().for_each(|w| *w = normal.sample(rng));
}

#[derive(Debug)]
pub struct Conv2d {
    input: Shape,
    filters: usize,
    kernel_h: usize,
    kernel_w: usize,
}

impl Conv2d {
    fn patch_len(&self) -> usize {
        self.input.channels * self.kernel_h * self.kernel_w
    }

    /// Unfolds one sample into a `patch_len x (H W)` matrix.
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let (h, w) = (self.input.height, self.input.width);
        let hw = h * w;
        let (ph, pw) = (self.kernel_h / 2, self.kernel_w / 2);
        for c in 0..self.input.channels {
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let row = ((c * self.kernel_h + ky) * self.kernel_w + kx) * hw;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - ph as isize;
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - pw as isize;
                            cols[row + y * w + xx] = if sy >= 0 && sy < h as isize && sx >= 0 && sx < w as isize {
                                x[c * hw + sy as usize * w + sx as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im_add(&self, cols: &[f64], dx: &mut [f64]) {
        let (h, w) = (self.input.height, self.input.width);
        let hw = h * w;
        let (ph, pw) = (self.kernel_h / 2, self.kernel_w / 2);
        for c in 0..self.input.channels {
            for ky in 0..self.kernel_h {
                for kx in 0..self.kernel_w {
                    let row = ((c * self.kernel_h + ky) * self.kernel_w + kx) * hw;
                    for y in 0..h {
                        let sy = y as isize + ky as isize - ph as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for xx in 0..w {
                            let sx = xx as isize + kx as isize - pw as isize;
                            if sx >= 0 && sx < w as isize {
                                dx[c * hw + sy as usize * w + sx as usize] += cols[row + y * w + xx];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Layer for Conv2d {
    fn kind(&self) -> &'static str {
        "conv2d"
    }

    fn output_shape(&self) -> Shape {
        Shape::new(self.filters, self.input.height, self.input.width)
    }

    fn param_segments(&self) -> Vec<(&'static str, usize)> {
        vec![("weight", self.filters * self.patch_len()), ("bias", self.filters)]
    }

    fn init(&self, params: &mut [f64], _state: &mut [f64], rng: &mut ChaCha8Rng) {
        let (w, b) = params.split_at_mut(self.filters * self.patch_len());
        he_normal(w, self.patch_len(), rng);
        b.fill(0.0);
    }

    fn forward(&self, params: &[f64], _state: &[f64], input: &Batch, _ctx: &ForwardCtx) -> (Batch, Cache) {
        let k = self.patch_len();
        let hw = self.input.spatial();
        let (weight, bias) = params.split_at(self.filters * k);
        let out_dim = self.filters * hw;
        let mut out = Batch::zeros(input.n, out_dim);
        let mut cols = vec![0.0; k * hw];
        for s in 0..input.n {
            self.im2col(input.row(s), &mut cols);
            let y = &mut out.data[s * out_dim..(s + 1) * out_dim];
            for f in 0..self.filters {
                y[f * hw..(f + 1) * hw].fill(bias[f]);
            }
            gemm(self.filters, k, hw, weight, (k, 1), &cols, (hw, 1), 1.0, y, (hw, 1));
        }
        (out, Cache::default())
    }

    fn backward(
        &self,
        params: &[f64],
        _state: &[f64],
        input: &Batch,
        _output: &Batch,
        _cache: &Cache,
        grad_out: &Batch,
        grad_params: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Batch> {
        let k = self.patch_len();
        let hw = self.input.spatial();
        let weight = &params[..self.filters * k];
        let (dw, db) = grad_params.split_at_mut(self.filters * k);
        let mut cols = vec![0.0; k * hw];
        let mut dcols = vec![0.0; k * hw];
        let mut dx = need_input_grad.then(|| Batch::zeros(input.n, input.dim));
        for s in 0..input.n {
            self.im2col(input.row(s), &mut cols);
            let dy = grad_out.row(s);
            gemm(self.filters, hw, k, dy, (hw, 1), &cols, (1, hw), 1.0, dw, (k, 1));
            for f in 0..self.filters {
                db[f] += dy[f * hw..(f + 1) * hw].iter().sum::<f64>();
            }
            if let Some(dx) = dx.as_mut() {
                gemm(k, self.filters, hw, weight, (1, k), dy, (hw, 1), 0.0, &mut dcols, (hw, 1));
                let dim = dx.dim;
                self.col2im_add(&dcols, &mut dx.data[s * dim..(s + 1) * dim]);
            }
        }
        dx
    }
}

#[derive(Debug)]
pub struct FullyConnected {
    inputs: usize,
    units: usize,
}

impl Layer for FullyConnected {
    fn kind(&self) -> &'static str {
        "fully_connected"
    }

    fn output_shape(&self) -> Shape {
        Shape::flat(self.units)
    }

    fn param_segments(&self) -> Vec<(&'static str, usize)> {
        vec![("weight", self.units * self.inputs), ("bias", self.units)]
    }

    fn init(&self, params: &mut [f64], _state: &mut [f64], rng: &mut ChaCha8Rng) {
        let (w, b) = params.split_at_mut(self.units * self.inputs);
        he_normal(w, self.inputs, rng);
        b.fill(0.0);
    }

    fn forward(&self, params: &[f64], _state: &[f64], input: &Batch, _ctx: &ForwardCtx) -> (Batch, Cache) {
        let (weight, bias) = params.split_at(self.units * self.inputs);
        let mut out = Batch::zeros(input.n, self.units);
        for s in 0..input.n {
            out.data[s * self.units..(s + 1) * self.units].copy_from_slice(bias);
        }
        gemm(
            input.n,
            self.inputs,
            self.units,
            &input.data,
            (self.inputs, 1),
            weight,
            (1, self.inputs),
            1.0,
            &mut out.data,
            (self.units, 1),
        );
        (out, Cache::default())
    }

    fn backward(
        &self,
        params: &[f64],
        _state: &[f64],
        input: &Batch,
        _output: &Batch,
        _cache: &Cache,
        grad_out: &Batch,
        grad_params: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Batch> {
        let weight = &params[..self.units * self.inputs];
        let (dw, db) = grad_params.split_at_mut(self.units * self.inputs);
        gemm(
            self.units,
            input.n,
            self.inputs,
            &grad_out.data,
            (1, self.units),
            &input.data,
            (self.inputs, 1),
            1.0,
            dw,
            (self.inputs, 1),
        );
        for s in 0..input.n {
            for (d, g) in db.iter_mut().zip(grad_out.row(s)) {
                *d += g;
            }
        }
        need_input_grad.then(|| {
            let mut dx = Batch::zeros(input.n, self.inputs);
            gemm(
                input.n,
                self.units,
                self.inputs,
                &grad_out.data,
                (self.units, 1),
                weight,
                (self.inputs, 1),
                0.0,
                &mut dx.data,
                (self.inputs, 1),
            );
            dx
        })
    }
}

/// Batch normalization: per-channel statistics over samples and spatial
/// positions in training, running statistics in evaluation.
#[derive(Debug)]
pub struct Norm {
    shape: Shape,
}

impl Layer for Norm {
    fn kind(&self) -> &'static str {
        "norm"
    }

    fn output_shape(&self) -> Shape {
        self.shape
    }

    fn param_segments(&self) -> Vec<(&'static str, usize)> {
        vec![("scale", self.shape.channels), ("shift", self.shape.channels)]
    }

    fn state_len(&self) -> usize {
        2 * self.shape.channels
    }

    fn init(&self, params: &mut [f64], state: &mut [f64], _rng: &mut ChaCha8Rng) {
        let c = self.shape.channels;
        params[..c].fill(1.0);
        params[c..].fill(0.0);
        state[..c].fill(0.0);
        state[c..].fill(1.0);
    }

    fn forward(&self, params: &[f64], state: &[f64], input: &Batch, ctx: &ForwardCtx) -> (Batch, Cache) {
        let channels = self.shape.channels;
        let hw = self.shape.spatial();
        let (scale, shift) = params.split_at(channels);
        let count = input.n * hw;
        let mut out = Batch::zeros(input.n, input.dim);
        let train = ctx.mode == Mode::Train;
        let (mean, var) = if train {
            let mut mean = vec![0.0; channels];
            let mut var = vec![0.0; channels];
            for c in 0..channels {
                let values = (0..input.n).flat_map(|s| &input.row(s)[c * hw..(c + 1) * hw]);
                mean[c] = values.clone().sum::<f64>() / count as f64;
                var[c] = values.map(|v| (v - mean[c]).powi(2)).sum::<f64>() / count as f64;
            }
            (mean, var)
        } else {
            (state[..channels].to_vec(), state[channels..].to_vec())
        };
        let inv: Vec<f64> = var.iter().map(|v| 1.0 / (v + NORM_EPS).sqrt()).collect();
        let mut xhat = if train { vec![0.0; input.data.len()] } else { Vec::new() };
        for s in 0..input.n {
            for c in 0..channels {
                for p in 0..hw {
                    let i = s * input.dim + c * hw + p;
                    let z = (input.data[i] - mean[c]) * inv[c];
                    if train {
                        xhat[i] = z;
                    }
                    out.data[i] = scale[c] * z + shift[c];
                }
            }
        }
        let cache = if train {
            xhat.extend_from_slice(&inv);
            Cache {
                aux: xhat,
                stats: Some(NormStats { mean, var, count }),
                train: true,
            }
        } else {
            Cache::default()
        };
        (out, cache)
    }

    fn backward(
        &self,
        params: &[f64],
        state: &[f64],
        input: &Batch,
        _output: &Batch,
        cache: &Cache,
        grad_out: &Batch,
        grad_params: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Batch> {
        let channels = self.shape.channels;
        let hw = self.shape.spatial();
        let scale = &params[..channels];
        let (dscale, dshift) = grad_params.split_at_mut(channels);
        let len = input.data.len();
        let mut dx = need_input_grad.then(|| Batch::zeros(input.n, input.dim));
        let idx = |s: usize, c: usize, p: usize| s * input.dim + c * hw + p;
        if !cache.train {
            for c in 0..channels {
                let inv = 1.0 / (state[channels + c] + NORM_EPS).sqrt();
                for s in 0..input.n {
                    for p in 0..hw {
                        let i = idx(s, c, p);
                        let z = (input.data[i] - state[c]) * inv;
                        dscale[c] += grad_out.data[i] * z;
                        dshift[c] += grad_out.data[i];
                        if let Some(dx) = dx.as_mut() {
                            dx.data[i] = grad_out.data[i] * scale[c] * inv;
                        }
                    }
                }
            }
            return dx;
        }
        let (xhat, inv) = cache.aux.split_at(len);
        let m = (input.n * hw) as f64;
        for c in 0..channels {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for s in 0..input.n {
                for p in 0..hw {
                    let i = idx(s, c, p);
                    sum_dy += grad_out.data[i];
                    sum_dy_xhat += grad_out.data[i] * xhat[i];
                }
            }
            dscale[c] += sum_dy_xhat;
            dshift[c] += sum_dy;
            if let Some(dx) = dx.as_mut() {
                // dxhat = dy * scale; the scale factors out of both sums.
                let k = scale[c] * inv[c] / m;
                for s in 0..input.n {
                    for p in 0..hw {
                        let i = idx(s, c, p);
                        dx.data[i] = k * (m * grad_out.data[i] - sum_dy - xhat[i] * sum_dy_xhat);
                    }
                }
            }
        }
        dx
    }

    fn update_state(&self, state: &mut [f64], stats: &NormStats, momentum: f64) {
        let c = self.shape.channels;
        for i in 0..c {
            state[i] = momentum * state[i] + (1.0 - momentum) * stats.mean[i];
            state[c + i] = momentum * state[c + i] + (1.0 - momentum) * stats.var[i];
        }
    }
}

#[derive(Debug)]
pub struct Relu {
    shape: Shape,
}

impl Layer for Relu {
    fn kind(&self) -> &'static str {
        "relu"
    }

    fn output_shape(&self) -> Shape {
        self.shape
    }

    fn forward(&self, _params: &[f64], _state: &[f64], input: &Batch, _ctx: &ForwardCtx) -> (Batch, Cache) {
        let data = input.data.iter().map(|&v| v.max(0.0)).collect();
        (Batch::new(input.n, input.dim, data), Cache::default())
    }

    fn backward(
        &self,
        _params: &[f64],
        _state: &[f64],
        input: &Batch,
        _output: &Batch,
        _cache: &Cache,
        grad_out: &Batch,
        _grad_params: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Batch> {
        need_input_grad.then(|| {
            let data = input
                .data
                .iter()
                .zip(&grad_out.data)
                .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
                .collect();
            Batch::new(input.n, input.dim, data)
        })
    }
}

/// Inverted dropout: kept activations are scaled by `1 / (1 - p)` during
/// training so evaluation is the identity.
#[derive(Debug)]
pub struct Dropout {
    shape: Shape,
    p: f64,
}

impl Layer for Dropout {
    fn kind(&self) -> &'static str {
        "dropout"
    }

    fn output_shape(&self) -> Shape {
        self.shape
    }

    fn forward(&self, _params: &[f64], _state: &[f64], input: &Batch, ctx: &ForwardCtx) -> (Batch, Cache) {
        if ctx.mode == Mode::Eval || self.p == 0.0 {
            return (input.clone(), Cache::default());
        }
        let keep = 1.0 / (1.0 - self.p);
        let mut mask = vec![0.0; input.data.len()];
        for s in 0..input.n {
            let mut rng = substream(
                ctx.dropout_seed,
                &[domain::DROPOUT, ctx.layer_index as u64, ctx.keys[s]],
            );
            for m in &mut mask[s * input.dim..(s + 1) * input.dim] {
                *m = if rng.random::<f64>() < self.p { 0.0 } else { keep };
            }
        }
        let data = input.data.iter().zip(&mask).map(|(x, m)| x * m).collect();
        (
            Batch::new(input.n, input.dim, data),
            Cache {
                aux: mask,
                stats: None,
                train: true,
            },
        )
    }

    fn backward(
        &self,
        _params: &[f64],
        _state: &[f64],
        _input: &Batch,
        _output: &Batch,
        cache: &Cache,
        grad_out: &Batch,
        _grad_params: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Batch> {
        need_input_grad.then(|| {
            if cache.train {
                let data = grad_out.data.iter().zip(&cache.aux).map(|(g, m)| g * m).collect();
                Batch::new(grad_out.n, grad_out.dim, data)
            } else {
                grad_out.clone()
            }
        })
    }
}

#[derive(Debug)]
pub struct Softmax {
    shape: Shape,
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    v.iter_mut().for_each(|x| *x /= total);
}

impl Layer for Softmax {
    fn kind(&self) -> &'static str {
        "softmax"
    }

    fn output_shape(&self) -> Shape {
        self.shape
    }

    fn forward(&self, _params: &[f64], _state: &[f64], input: &Batch, _ctx: &ForwardCtx) -> (Batch, Cache) {
        let mut out = input.clone();
        for s in 0..out.n {
            softmax_in_place(&mut out.data[s * out.dim..(s + 1) * out.dim]);
        }
        (out, Cache::default())
    }

    fn backward(
        &self,
        _params: &[f64],
        _state: &[f64],
        _input: &Batch,
        output: &Batch,
        _cache: &Cache,
        grad_out: &Batch,
        _grad_params: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Batch> {
        need_input_grad.then(|| {
            let mut dx = Batch::zeros(output.n, output.dim);
            for s in 0..output.n {
                let p = output.row(s);
                let g = grad_out.row(s);
                let dot: f64 = p.iter().zip(g).map(|(a, b)| a * b).sum();
                for j in 0..output.dim {
                    dx.data[s * output.dim + j] = p[j] * (g[j] - dot);
                }
            }
            dx
        })
    }
}

/// Terminal layer: passes probabilities through; the loss lives in
/// [`cross_entropy`].
#[derive(Debug)]
pub struct Classification {
    classes: usize,
}

impl Layer for Classification {
    fn kind(&self) -> &'static str {
        "classification"
    }

    fn output_shape(&self) -> Shape {
        Shape::flat(self.classes)
    }

    fn forward(&self, _params: &[f64], _state: &[f64], input: &Batch, _ctx: &ForwardCtx) -> (Batch, Cache) {
        (input.clone(), Cache::default())
    }

    fn backward(
        &self,
        _params: &[f64],
        _state: &[f64],
        _input: &Batch,
        _output: &Batch,
        _cache: &Cache,
        grad_out: &Batch,
        _grad_params: &mut [f64],
        need_input_grad: bool,
    ) -> Option<Batch> {
        need_input_grad.then(|| grad_out.clone())
    }
}

/// Smallest probability the log is taken of.
const PROB_FLOOR: f64 = 1e-300;

/// Mean categorical cross-entropy and its gradient with respect to the
/// probabilities.
pub fn cross_entropy(probs: &Batch, classes: &[usize]) -> (f64, Batch) {
    let n = probs.n as f64;
    let mut grad = Batch::zeros(probs.n, probs.dim);
    let mut loss = 0.0;
    for (s, &y) in classes.iter().enumerate() {
        let p = probs.data[s * probs.dim + y].max(PROB_FLOOR);
        loss -= p.ln();
        grad.data[s * probs.dim + y] = -1.0 / (n * p);
    }
    (loss / n, grad)
}
