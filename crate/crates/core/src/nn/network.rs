use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{Layer, Mode};
use crate::nn::loss::{self, argmax_rows};
use crate::nn::spec::{LayerSpec, LossKind, NetworkSpec};
use crate::tensor::{Scalar, Tensor};

/// A parameter tensor together with its gradient slot.
pub struct ParamSlot<'a, T: Scalar> {
    pub value: &'a mut Tensor<T>,
    pub grad: &'a mut Tensor<T>,
    /// `false` for biases; weight decay only applies to weights.
    pub is_weight: bool,
}

/// A network built from a [`NetworkSpec`]: its layers, their parameters and
/// the per-batch caches of the last training forward.
#[derive(Debug, Clone)]
pub struct Network<T: Scalar> {
    spec: NetworkSpec,
    layers: Vec<Layer<T>>,
    shapes: Vec<Vec<usize>>,
    initialized: bool,
    pending: Option<usize>,
}

impl<T: Scalar> Network<T> {
    fn skeleton(spec: NetworkSpec) -> Result<Self> {
        let shapes = spec.layer_shapes()?;
        let mut layers = Vec::with_capacity(spec.layers.len());
        let mut current = spec.input.clone();
        for (ls, out) in spec.layers.iter().zip(&shapes) {
            layers.push(Layer::build(ls, &current)?);
            current = out.clone();
        }
        Ok(Self {
            spec,
            layers,
            shapes,
            initialized: false,
            pending: None,
        })
    }

    /// Builds and randomly initializes a network; the same seed always
    /// yields the same parameters.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        let mut net = Self::skeleton(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            layer.init_params(&mut rng);
        }
        net.initialized = true;
        Ok(net)
    }

    /// All parameters zero; a valid (if useless) model.
    pub fn zeroed(spec: NetworkSpec) -> Result<Self> {
        let mut net = Self::skeleton(spec)?;
        net.initialized = true;
        Ok(net)
    }

    /// Allocated but not yet holding meaningful parameters, e.g. before a
    /// checkpoint is read into it. Inference-only tools refuse such networks.
    pub fn uninitialized(spec: NetworkSpec) -> Result<Self> {
        Self::skeleton(spec)
    }

    pub(crate) fn mark_initialized(&mut self) {
        self.initialized = true;
    }

    pub fn is_initialized(&self) -> bool {
        self.initialized
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    /// Per-sample output shape of every layer.
    pub fn layer_shapes(&self) -> &[Vec<usize>] {
        &self.shapes
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input
    }

    pub fn classes(&self) -> usize {
        self.shapes.last().map(|s| s[0]).unwrap_or(0)
    }

    /// With cross-entropy, a trailing softmax layer is folded into the loss,
    /// so the network output stays in logit space.
    fn fused_softmax(&self) -> bool {
        self.spec.loss == LossKind::CrossEntropy
            && matches!(self.spec.layers.last(), Some(LayerSpec::Softmax))
    }

    fn active_len(&self) -> usize {
        self.layers.len() - usize::from(self.fused_softmax())
    }

    fn check_input(&self, batch: &Tensor<T>) -> Result<()> {
        if batch.rank() != self.spec.input.len() + 1 || batch.shape()[1..] != self.spec.input[..] {
            let mut want = vec![0];
            want.extend_from_slice(&self.spec.input);
            return Err(Error::dim("network input", batch.shape(), &want));
        }
        Ok(())
    }

    fn finite(&self, i: usize, t: &Tensor<T>) -> Result<()> {
        if t.is_finite() {
            Ok(())
        } else {
            Err(Error::numeric(format!("layer {i} ({})", self.layers[i].kind())))
        }
    }

    /// Forward pass over a `[n, ...input]` batch. Returns logits for
    /// cross-entropy networks, the raw output for squared-error ones.
    /// Train mode caches activations for [`Network::backward`] and draws
    /// dropout masks from `rng`; infer mode is pure.
    pub fn forward<R: Rng + ?Sized>(&mut self, batch: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<Tensor<T>> {
        if mode == Mode::Infer {
            return self.infer(batch);
        }
        self.check_input(batch)?;
        self.pending = None;
        let active = self.active_len();
        let mut x = self.layers[0].forward_train(batch, rng)?;
        self.finite(0, &x)?;
        for i in 1..active {
            x = self.layers[i].forward_train(&x, rng)?;
            self.finite(i, &x)?;
        }
        self.pending = Some(batch.shape()[0]);
        Ok(x)
    }

    /// Inference-mode forward; safe to call concurrently on a shared network.
    pub fn infer(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(batch)?;
        let mut x = self.layers[0].infer(batch)?;
        self.finite(0, &x)?;
        for i in 1..self.active_len() {
            x = self.layers[i].infer(&x)?;
            self.finite(i, &x)?;
        }
        Ok(x)
    }

    /// Class probabilities for a batch.
    pub fn predict_proba(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self.infer(batch)?;
        if !self.fused_softmax() && matches!(self.spec.layers.last(), Some(LayerSpec::Softmax)) {
            Ok(out)
        } else {
            loss::softmax(&out)
        }
    }

    pub fn predict(&self, batch: &Tensor<T>) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.infer(batch)?))
    }

    /// Every layer's inference output for a batch, in network order
    /// (including a fused trailing softmax).
    pub fn activations(&self, batch: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.check_input(batch)?;
        let mut outs: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let y = layer.infer(outs.last().unwrap_or(batch))?;
            self.finite(i, &y)?;
            outs.push(y);
        }
        Ok(outs)
    }

    /// The configured loss on a network output and its gradient.
    pub fn loss(&self, output: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
        match self.spec.loss {
            LossKind::CrossEntropy => loss::cross_entropy_loss(output, labels),
            LossKind::SquaredError => {
                let target = loss::one_hot(labels, self.classes())?;
                if target.shape()[0] != output.shape()[0] {
                    return Err(Error::dim("squared error labels", output.shape(), target.shape()));
                }
                loss::squared_error_loss(output, &target)
            }
        }
    }

    /// Backpropagates the gradient of the loss with respect to the network
    /// output, leaving per-parameter gradients on the layers.
    pub fn backward_in_place(&mut self, loss_grad: &Tensor<T>) -> Result<()> {
        let n = self
            .pending
            .take()
            .ok_or_else(|| Error::State("backward requires a preceding train-mode forward".into()))?;
        if loss_grad.shape()[0] != n {
            return Err(Error::State(format!(
                "loss gradient has batch {} but the forward pass saw {n}",
                loss_grad.shape()[0]
            )));
        }
        let active = self.active_len();
        let mut grad = loss_grad.clone();
        for i in (0..active).rev() {
            match self.layers[i].backward(&grad, i > 0)? {
                Some(g) => grad = g,
                None => break,
            }
        }
        Ok(())
    }

    /// Backward pass returning `∂E/∂w` for every parameter in declaration
    /// order (see [`Network::params`]).
    pub fn backward(&mut self, loss_grad: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
        self.backward_in_place(loss_grad)?;
        Ok(self.grads().into_iter().cloned().collect())
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    pub fn grads(&self) -> Vec<&Tensor<T>> {
        self.layers.iter().flat_map(|l| l.grads()).collect()
    }

    pub fn param_slots(&mut self) -> Vec<ParamSlot<'_, T>> {
        let mut slots = Vec::new();
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    slots.push(ParamSlot {
                        value: &mut c.weights,
                        grad: &mut c.grad_weights,
                        is_weight: true,
                    });
                    slots.push(ParamSlot {
                        value: &mut c.bias,
                        grad: &mut c.grad_bias,
                        is_weight: false,
                    });
                }
                Layer::Dense(d) => {
                    slots.push(ParamSlot {
                        value: &mut d.weights,
                        grad: &mut d.grad_weights,
                        is_weight: true,
                    });
                    slots.push(ParamSlot {
                        value: &mut d.bias,
                        grad: &mut d.grad_bias,
                        is_weight: false,
                    });
                }
                _ => {}
            }
        }
        slots
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn clear_caches(&mut self) {
        self.pending = None;
        for l in &mut self.layers {
            l.clear_cache();
        }
    }

    /// Copies parameters from `values` (declaration order); shapes must match.
    pub fn set_params(&mut self, values: &[Tensor<T>]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != values.len() {
            return Err(Error::Validation(format!(
                "expected {} parameter tensors, got {}",
                params.len(),
                values.len()
            )));
        }
        for (p, v) in params.iter_mut().zip(values) {
            if p.shape() != v.shape() {
                return Err(Error::dim("set_params", p.shape(), v.shape()));
            }
            p.data_mut().copy_from_slice(v.data());
        }
        self.initialized = true;
        Ok(())
    }

    /// The same network at another precision.
    pub fn cast<U: Scalar>(&self) -> Network<U> {
        let mut out = Network::<U>::skeleton(self.spec.clone()).expect("spec already validated");
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            *dst = src.cast();
        }
        out.initialized = self.initialized;
        out
    }
}
