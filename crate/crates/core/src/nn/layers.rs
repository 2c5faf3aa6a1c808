//! Layers with explicit forward and hand-derived backward passes.
//!
//! Every layer works on batches: the leading axis is the sample index and
//! the remaining axes match the layer's per-sample input shape. A training
//! forward caches whatever its backward needs; inference never touches the
//! caches, so a frozen layer can be shared across threads.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::nn::loss;
use crate::nn::spec::LayerSpec;
use crate::tensor::{gemm, ConvGeometry, PoolGeometry, Scalar, Tensor, Trans};

/// Whether dropout is active and caches are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

const INIT_BIAS: f64 = 0.1;

fn batch_of<T: Scalar>(x: &Tensor<T>, per_sample: &[usize], op: &'static str) -> Result<usize> {
    if x.rank() != per_sample.len() + 1 || &x.shape()[1..] != per_sample {
        let mut want = vec![0];
        want.extend_from_slice(per_sample);
        return Err(Error::dim(op, x.shape(), &want));
    }
    Ok(x.shape()[0])
}

fn batch_shape(n: usize, per_sample: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(per_sample.len() + 1);
    s.push(n);
    s.extend_from_slice(per_sample);
    s
}

fn fan_in_normal<T: Scalar, R: Rng + ?Sized>(t: &mut Tensor<T>, fan_in: usize, rng: &mut R) {
    let std = (2.0 / fan_in as f64).sqrt();
    let normal = Normal::new(0.0, std).expect("positive std");
    for v in t.data_mut() {
        *v = T::from_f64_lossy(normal.sample(rng));
    }
}

fn column_sums<T: Scalar>(rows: &[T], width: usize, out: &mut [T]) {
    out.fill(T::zero());
    for row in rows.chunks(width) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

#[derive(Debug, Clone)]
pub struct Conv<T: Scalar> {
    pub geom: ConvGeometry,
    /// `[kh, kw, cin, cout]`
    pub weights: Tensor<T>,
    /// `[cout]`
    pub bias: Tensor<T>,
    pub grad_weights: Tensor<T>,
    pub grad_bias: Tensor<T>,
    cols: Vec<T>,
    scratch: Vec<T>,
    batch: usize,
}

impl<T: Scalar> Conv<T> {
    fn filters(&self) -> usize {
        self.weights.shape()[3]
    }

    fn out_shape(&self) -> [usize; 3] {
        [self.geom.out_h, self.geom.out_w, self.filters()]
    }

    fn run(&self, x: &Tensor<T>, cols: &mut Vec<T>) -> Result<Tensor<T>> {
        let g = &self.geom;
        let n = batch_of(x, &[g.in_h, g.in_w, g.cin], "conv forward")?;
        let (p, k, cout) = (g.patches(), g.patch_len(), self.filters());
        cols.resize(n * p * k, T::zero());
        for (sample, dst) in x.data().chunks(g.input_len()).zip(cols.chunks_mut(p * k)) {
            g.im2col(sample, dst);
        }
        let mut out = vec![T::zero(); n * p * cout];
        gemm(n * p, k, cout, cols, Trans::No, self.weights.data(), Trans::No, &mut out, false);
        for row in out.chunks_mut(cout) {
            for (v, &b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Tensor::new(batch_shape(n, &self.out_shape()), out)
    }

    fn backward(&mut self, grad: &Tensor<T>, need_input: bool) -> Result<Option<Tensor<T>>> {
        let g = self.geom;
        let n = batch_of(grad, &self.out_shape(), "conv backward")?;
        if n != self.batch {
            return Err(Error::State("conv backward batch differs from forward".into()));
        }
        let (p, k, cout) = (g.patches(), g.patch_len(), self.filters());
        gemm(k, n * p, cout, &self.cols, Trans::Yes, grad.data(), Trans::No, self.grad_weights.data_mut(), false);
        column_sums(grad.data(), cout, self.grad_bias.data_mut());
        if !need_input {
            return Ok(None);
        }
        self.scratch.resize(n * p * k, T::zero());
        gemm(n * p, cout, k, grad.data(), Trans::No, self.weights.data(), Trans::Yes, &mut self.scratch, false);
        let mut dx = vec![T::zero(); n * g.input_len()];
        for (cols, out) in self.scratch.chunks(p * k).zip(dx.chunks_mut(g.input_len())) {
            g.col2im(cols, out);
        }
        Ok(Some(Tensor::new(batch_shape(n, &[g.in_h, g.in_w, g.cin]), dx)?))
    }
}

#[derive(Debug, Clone)]
pub struct MaxPool {
    pub geom: PoolGeometry,
    argmax: Vec<usize>,
    batch: usize,
}

impl MaxPool {
    fn in_shape(&self) -> [usize; 3] {
        [self.geom.in_h, self.geom.in_w, self.geom.channels]
    }

    fn out_shape(&self) -> [usize; 3] {
        [self.geom.out_h, self.geom.out_w, self.geom.channels]
    }

    fn run<T: Scalar>(&self, x: &Tensor<T>, argmax: &mut Vec<usize>) -> Result<Tensor<T>> {
        let n = batch_of(x, &self.in_shape(), "maxpool forward")?;
        let (in_len, out_len) = (x.len() / n, self.geom.output_len());
        let mut out = vec![T::zero(); n * out_len];
        argmax.resize(n * out_len, 0);
        for ((src, dst), arg) in x
            .data()
            .chunks(in_len)
            .zip(out.chunks_mut(out_len))
            .zip(argmax.chunks_mut(out_len))
        {
            self.geom.forward(src, dst, arg);
        }
        Tensor::new(batch_shape(n, &self.out_shape()), out)
    }

    fn backward<T: Scalar>(&self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let n = batch_of(grad, &self.out_shape(), "maxpool backward")?;
        if n != self.batch {
            return Err(Error::State("maxpool backward batch differs from forward".into()));
        }
        let in_shape = self.in_shape();
        let in_len: usize = in_shape.iter().product();
        let out_len = self.geom.output_len();
        let mut dx = vec![T::zero(); n * in_len];
        for s in 0..n {
            let dst = &mut dx[s * in_len..(s + 1) * in_len];
            let g = &grad.data()[s * out_len..(s + 1) * out_len];
            let arg = &self.argmax[s * out_len..(s + 1) * out_len];
            for (&at, &v) in arg.iter().zip(g) {
                dst[at] += v;
            }
        }
        Tensor::new(batch_shape(n, &in_shape), dx)
    }
}

#[derive(Debug, Clone)]
pub struct Relu {
    pub shape: Vec<usize>,
    active: Vec<bool>,
}

/// Cross-channel local response normalization:
/// `b_c = a_c / (k + α Σ_{|c'−c| ≤ n/2} a_{c'}²)^β`.
#[derive(Debug, Clone)]
pub struct Lrn<T: Scalar> {
    pub shape: Vec<usize>,
    pub k: f64,
    pub n: usize,
    pub alpha: f64,
    pub beta: f64,
    input: Vec<T>,
    denom: Vec<T>,
}

impl<T: Scalar> Lrn<T> {
    fn channels(&self) -> usize {
        self.shape[2]
    }

    fn run(&self, x: &Tensor<T>, denom: &mut Vec<T>) -> Result<Tensor<T>> {
        batch_of(x, &self.shape, "lrn forward")?;
        let c = self.channels();
        let half = self.n / 2;
        let (k, alpha, neg_beta) = (
            T::from_f64_lossy(self.k),
            T::from_f64_lossy(self.alpha),
            T::from_f64_lossy(-self.beta),
        );
        denom.resize(x.len(), T::zero());
        let mut out = x.clone();
        for ((a, s), b) in x
            .data()
            .chunks(c)
            .zip(denom.chunks_mut(c))
            .zip(out.data_mut().chunks_mut(c))
        {
            for ch in 0..c {
                let lo = ch.saturating_sub(half);
                let hi = (ch + half).min(c - 1);
                let sq: T = a[lo..=hi].iter().map(|&v| v * v).sum();
                s[ch] = k + alpha * sq;
                b[ch] = a[ch] * s[ch].powf(neg_beta);
            }
        }
        Ok(out)
    }

    fn backward(&self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        batch_of(grad, &self.shape, "lrn backward")?;
        if grad.len() != self.input.len() {
            return Err(Error::State("lrn backward batch differs from forward".into()));
        }
        let c = self.channels();
        let half = self.n / 2;
        let neg_beta = T::from_f64_lossy(-self.beta);
        let coef = T::from_f64_lossy(2.0 * self.alpha * self.beta);
        let mut dx = grad.clone();
        let mut t = vec![T::zero(); c];
        for (((g, a), s), d) in grad
            .data()
            .chunks(c)
            .zip(self.input.chunks(c))
            .zip(self.denom.chunks(c))
            .zip(dx.data_mut().chunks_mut(c))
        {
            for ch in 0..c {
                t[ch] = g[ch] * a[ch] * s[ch].powf(neg_beta - T::one());
            }
            for j in 0..c {
                let lo = j.saturating_sub(half);
                let hi = (j + half).min(c - 1);
                let cross: T = t[lo..=hi].iter().copied().sum();
                d[j] = g[j] * s[j].powf(neg_beta) - coef * a[j] * cross;
            }
        }
        Ok(dx)
    }
}

/// Inverted dropout: survivors are scaled by `1 / (1 − p)` at train time so
/// inference is the identity.
#[derive(Debug, Clone)]
pub struct Dropout<T: Scalar> {
    pub shape: Vec<usize>,
    pub p: f64,
    mask: Vec<T>,
}

impl<T: Scalar> Dropout<T> {
    /// The scaled keep-mask drawn by the most recent training forward.
    pub fn mask(&self) -> &[T] {
        &self.mask
    }
}

#[derive(Debug, Clone)]
pub struct Flatten {
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Dense<T: Scalar> {
    pub in_shape: Vec<usize>,
    /// `[inputs, units]`
    pub weights: Tensor<T>,
    /// `[units]`
    pub bias: Tensor<T>,
    pub grad_weights: Tensor<T>,
    pub grad_bias: Tensor<T>,
    input: Vec<T>,
    batch: usize,
}

impl<T: Scalar> Dense<T> {
    fn dims(&self) -> (usize, usize) {
        (self.weights.shape()[0], self.weights.shape()[1])
    }

    fn run(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let n = batch_of(x, &self.in_shape, "dense forward")?;
        let (inputs, units) = self.dims();
        let mut out = vec![T::zero(); n * units];
        gemm(n, inputs, units, x.data(), Trans::No, self.weights.data(), Trans::No, &mut out, false);
        for row in out.chunks_mut(units) {
            for (v, &b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Tensor::new([n, units], out)
    }

    fn backward(&mut self, grad: &Tensor<T>, need_input: bool) -> Result<Option<Tensor<T>>> {
        let (inputs, units) = self.dims();
        let n = batch_of(grad, &[units], "dense backward")?;
        if n != self.batch {
            return Err(Error::State("dense backward batch differs from forward".into()));
        }
        gemm(inputs, n, units, &self.input, Trans::Yes, grad.data(), Trans::No, self.grad_weights.data_mut(), false);
        column_sums(grad.data(), units, self.grad_bias.data_mut());
        if !need_input {
            return Ok(None);
        }
        let mut dx = vec![T::zero(); n * inputs];
        gemm(n, units, inputs, grad.data(), Trans::No, self.weights.data(), Trans::Yes, &mut dx, false);
        Ok(Some(Tensor::new(batch_shape(n, &self.in_shape), dx)?))
    }
}

#[derive(Debug, Clone)]
pub struct SoftmaxLayer<T: Scalar> {
    pub classes: usize,
    probs: Option<Tensor<T>>,
}

/// One runtime layer: parameters plus the caches its backward pass reads.
#[derive(Debug, Clone)]
pub enum Layer<T: Scalar> {
    Conv(Conv<T>),
    MaxPool(MaxPool),
    Relu(Relu),
    Lrn(Lrn<T>),
    Dropout(Dropout<T>),
    Flatten(Flatten),
    Dense(Dense<T>),
    Softmax(SoftmaxLayer<T>),
}

impl<T: Scalar> Layer<T> {
    /// Builds a layer with zero parameters for the given per-sample input shape.
    pub fn build(spec: &LayerSpec, in_shape: &[usize]) -> Result<Self> {
        let out = spec.output_shape(in_shape)?;
        Ok(match *spec {
            LayerSpec::Conv {
                filters,
                kernel,
                stride,
                padding,
            } => {
                let geom = ConvGeometry::new(
                    [in_shape[0], in_shape[1], in_shape[2]],
                    (kernel, kernel),
                    stride,
                    padding,
                )?;
                let wshape = [kernel, kernel, in_shape[2], filters];
                Layer::Conv(Conv {
                    geom,
                    weights: Tensor::zeros(wshape),
                    bias: Tensor::zeros([filters]),
                    grad_weights: Tensor::zeros(wshape),
                    grad_bias: Tensor::zeros([filters]),
                    cols: Vec::new(),
                    scratch: Vec::new(),
                    batch: 0,
                })
            }
            LayerSpec::Maxpool { window, stride } => Layer::MaxPool(MaxPool {
                geom: PoolGeometry::new(
                    [in_shape[0], in_shape[1], in_shape[2]],
                    window,
                    stride.unwrap_or(window),
                )?,
                argmax: Vec::new(),
                batch: 0,
            }),
            LayerSpec::Relu => Layer::Relu(Relu {
                shape: in_shape.to_vec(),
                active: Vec::new(),
            }),
            LayerSpec::Lrn { k, n, alpha, beta } => Layer::Lrn(Lrn {
                shape: in_shape.to_vec(),
                k,
                n,
                alpha,
                beta,
                input: Vec::new(),
                denom: Vec::new(),
            }),
            LayerSpec::Dropout { p } => Layer::Dropout(Dropout {
                shape: in_shape.to_vec(),
                p,
                mask: Vec::new(),
            }),
            LayerSpec::Flatten => Layer::Flatten(Flatten {
                shape: in_shape.to_vec(),
            }),
            LayerSpec::Dense { units } => {
                let inputs = in_shape.iter().product();
                Layer::Dense(Dense {
                    in_shape: in_shape.to_vec(),
                    weights: Tensor::zeros([inputs, units]),
                    bias: Tensor::zeros([units]),
                    grad_weights: Tensor::zeros([inputs, units]),
                    grad_bias: Tensor::zeros([units]),
                    input: Vec::new(),
                    batch: 0,
                })
            }
            LayerSpec::Softmax => Layer::Softmax(SoftmaxLayer {
                classes: out[0],
                probs: None,
            }),
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Layer::Conv(_) => "conv",
            Layer::MaxPool(_) => "maxpool",
            Layer::Relu(_) => "relu",
            Layer::Lrn(_) => "lrn",
            Layer::Dropout(_) => "dropout",
            Layer::Flatten(_) => "flatten",
            Layer::Dense(_) => "dense",
            Layer::Softmax(_) => "softmax",
        }
    }

    /// Scaled-normal fan-in weights (`std = √(2 / fan_in)`), biases 0.1.
    pub fn init_params<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        match self {
            Layer::Conv(c) => {
                let fan_in = c.geom.patch_len();
                fan_in_normal(&mut c.weights, fan_in, rng);
                c.bias.data_mut().fill(T::from_f64_lossy(INIT_BIAS));
            }
            Layer::Dense(d) => {
                let fan_in = d.dims().0;
                fan_in_normal(&mut d.weights, fan_in, rng);
                d.bias.data_mut().fill(T::from_f64_lossy(INIT_BIAS));
            }
            _ => {}
        }
    }

    /// Parameters in declaration order: weights, then bias.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv(c) => vec![&c.weights, &c.bias],
            Layer::Dense(d) => vec![&d.weights, &d.bias],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        match self {
            Layer::Conv(c) => vec![&mut c.weights, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weights, &mut d.bias],
            _ => Vec::new(),
        }
    }

    /// Gradients from the latest backward, aligned with [`Layer::params`].
    pub fn grads(&self) -> Vec<&Tensor<T>> {
        match self {
            Layer::Conv(c) => vec![&c.grad_weights, &c.grad_bias],
            Layer::Dense(d) => vec![&d.grad_weights, &d.grad_bias],
            _ => Vec::new(),
        }
    }

    /// Pure forward pass in inference mode (dropout is the identity).
    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(c) => c.run(x, &mut Vec::new()),
            Layer::MaxPool(m) => m.run(x, &mut Vec::new()),
            Layer::Relu(r) => {
                batch_of(x, &r.shape, "relu forward")?;
                Ok(x.map(|v| v.max(T::zero())))
            }
            Layer::Lrn(l) => l.run(x, &mut Vec::new()),
            Layer::Dropout(d) => {
                batch_of(x, &d.shape, "dropout forward")?;
                Ok(x.clone())
            }
            Layer::Flatten(f) => {
                let n = batch_of(x, &f.shape, "flatten forward")?;
                x.clone().reshape([n, f.shape.iter().product()])
            }
            Layer::Dense(d) => d.run(x),
            Layer::Softmax(s) => {
                batch_of(x, &[s.classes], "softmax forward")?;
                loss::softmax(x)
            }
        }
    }

    /// Training forward: caches activations for [`Layer::backward`] and draws
    /// a fresh dropout mask from `rng`.
    pub fn forward_train<R: Rng + ?Sized>(&mut self, x: &Tensor<T>, rng: &mut R) -> Result<Tensor<T>> {
        match self {
            Layer::Conv(c) => {
                let mut cols = std::mem::take(&mut c.cols);
                let out = c.run(x, &mut cols);
                c.cols = cols;
                c.batch = x.shape()[0];
                out
            }
            Layer::MaxPool(m) => {
                let mut argmax = std::mem::take(&mut m.argmax);
                let out = m.run(x, &mut argmax);
                m.argmax = argmax;
                m.batch = x.shape()[0];
                out
            }
            Layer::Relu(r) => {
                batch_of(x, &r.shape, "relu forward")?;
                r.active = x.data().iter().map(|&v| v > T::zero()).collect();
                Ok(x.map(|v| v.max(T::zero())))
            }
            Layer::Lrn(l) => {
                let mut denom = std::mem::take(&mut l.denom);
                let out = l.run(x, &mut denom);
                l.denom = denom;
                l.input = x.data().to_vec();
                out
            }
            Layer::Dropout(d) => {
                batch_of(x, &d.shape, "dropout forward")?;
                let keep = T::from_f64_lossy(1.0 / (1.0 - d.p));
                let p = d.p;
                d.mask = (0..x.len())
                    .map(|_| {
                        if p > 0.0 && rng.random::<f64>() < p {
                            T::zero()
                        } else {
                            keep
                        }
                    })
                    .collect();
                let mut out = x.clone();
                for (v, &m) in out.data_mut().iter_mut().zip(&d.mask) {
                    *v *= m;
                }
                Ok(out)
            }
            Layer::Flatten(_) => self.infer(x),
            Layer::Dense(d) => {
                let out = d.run(x)?;
                d.input = x.data().to_vec();
                d.batch = x.shape()[0];
                Ok(out)
            }
            Layer::Softmax(s) => {
                batch_of(x, &[s.classes], "softmax forward")?;
                let p = loss::softmax(x)?;
                s.probs = Some(p.clone());
                Ok(p)
            }
        }
    }

    /// Backpropagates `grad` (gradient of the loss with respect to this
    /// layer's output). Parameter gradients are stored on the layer; the
    /// input gradient is returned when `need_input` is set.
    pub fn backward(&mut self, grad: &Tensor<T>, need_input: bool) -> Result<Option<Tensor<T>>> {
        let stale = || Error::State("backward called without a matching training forward".into());
        match self {
            Layer::Conv(c) => {
                if c.cols.is_empty() {
                    return Err(stale());
                }
                c.backward(grad, need_input)
            }
            Layer::Dense(d) => {
                if d.input.is_empty() {
                    return Err(stale());
                }
                d.backward(grad, need_input)
            }
            _ if !need_input => Ok(None),
            Layer::MaxPool(m) => {
                if m.argmax.is_empty() {
                    return Err(stale());
                }
                m.backward(grad).map(Some)
            }
            Layer::Relu(r) => {
                batch_of(grad, &r.shape, "relu backward")?;
                if r.active.len() != grad.len() {
                    return Err(stale());
                }
                let mut dx = grad.clone();
                for (v, &on) in dx.data_mut().iter_mut().zip(&r.active) {
                    if !on {
                        *v = T::zero();
                    }
                }
                Ok(Some(dx))
            }
            Layer::Lrn(l) => {
                if l.input.is_empty() {
                    return Err(stale());
                }
                l.backward(grad).map(Some)
            }
            Layer::Dropout(d) => {
                batch_of(grad, &d.shape, "dropout backward")?;
                if d.mask.len() != grad.len() {
                    return Err(stale());
                }
                let mut dx = grad.clone();
                for (v, &m) in dx.data_mut().iter_mut().zip(&d.mask) {
                    *v *= m;
                }
                Ok(Some(dx))
            }
            Layer::Flatten(f) => {
                let n = grad.shape()[0];
                Ok(Some(grad.clone().reshape(batch_shape(n, &f.shape))?))
            }
            Layer::Softmax(s) => {
                let p = s.probs.as_ref().ok_or_else(stale)?;
                if p.shape() != grad.shape() {
                    return Err(Error::dim("softmax backward", grad.shape(), p.shape()));
                }
                let k = s.classes;
                let mut dx = grad.clone();
                for ((d, g), pr) in dx
                    .data_mut()
                    .chunks_mut(k)
                    .zip(grad.data().chunks(k))
                    .zip(p.data().chunks(k))
                {
                    let dot: T = g.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                    for ((dv, &gv), &pv) in d.iter_mut().zip(g).zip(pr) {
                        *dv = pv * (gv - dot);
                    }
                }
                Ok(Some(dx))
            }
        }
    }

    /// Drops cached activations (frees memory between phases).
    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv(c) => {
                c.cols = Vec::new();
                c.scratch = Vec::new();
                c.batch = 0;
            }
            Layer::MaxPool(m) => {
                m.argmax = Vec::new();
                m.batch = 0;
            }
            Layer::Relu(r) => r.active = Vec::new(),
            Layer::Lrn(l) => {
                l.input = Vec::new();
                l.denom = Vec::new();
            }
            Layer::Dropout(d) => d.mask = Vec::new(),
            Layer::Flatten(_) => {}
            Layer::Dense(d) => {
                d.input = Vec::new();
                d.batch = 0;
            }
            Layer::Softmax(s) => s.probs = None,
        }
    }
}
