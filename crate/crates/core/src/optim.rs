//! Parameter updates (gradient descent and Adam), the learning-rate
//! schedule and the mini-batch training loop.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datasets::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::loss::argmax_rows;
use crate::nn::{Mode, Network};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    Sgd,
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub decay_steps: u64,
    pub batch_size: usize,
    pub max_steps: u64,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Coupled L2 coefficient: `λ w` is added to weight gradients.
    pub weight_decay: f64,
    pub seed: u64,
    /// Evaluate every this many steps (and after the last); 0 disables.
    pub eval_every: u64,
    /// Cap on training samples scored at each evaluation; 0 scores all.
    pub eval_train_samples: usize,
    /// Snapshot every this many steps; 0 disables.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            decay_rate: 0.95,
            decay_steps: 1000,
            batch_size: 50,
            max_steps: 20_000,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay: 0.0,
            seed: 42,
            eval_every: 0,
            eval_train_samples: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Config(what));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.decay_rate > 0.0 && self.decay_rate <= 1.0) {
            return bad(format!("decay_rate must lie in (0, 1], got {}", self.decay_rate));
        }
        if self.decay_steps == 0 {
            return bad("decay_steps must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// `η₀ · r^(step / steps)` with a continuous exponent.
pub fn lr_schedule(step: u64, cfg: &TrainConfig) -> f64 {
    cfg.learning_rate * cfg.decay_rate.powf(step as f64 / cfg.decay_steps as f64)
}

fn check_update<T: Scalar>(w: &Tensor<T>, grad: &Tensor<T>, lr: T) -> Result<()> {
    if w.shape() != grad.shape() {
        return Err(Error::dim("parameter update", w.shape(), grad.shape()));
    }
    if !(lr > T::zero()) || !lr.is_finite() {
        return Err(Error::Config(format!("learning rate must be positive, got {lr:?}")));
    }
    if !grad.is_finite() {
        return Err(Error::numeric("gradient"));
    }
    Ok(())
}

/// `w ← w − η g`.
pub fn sgd_step<T: Scalar>(w: &mut Tensor<T>, grad: &Tensor<T>, lr: T) -> Result<()> {
    check_update(w, grad, lr)?;
    for (w, &g) in w.data_mut().iter_mut().zip(grad.data()) {
        *w -= lr * g;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Scalar> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
    /// Completed steps.
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(shape: &[usize]) -> Self {
        Self {
            m: Tensor::zeros(shape.to_vec()),
            v: Tensor::zeros(shape.to_vec()),
            t: 0,
        }
    }
}

/// One Adam update:
/// `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`, `t ← t+1`,
/// `w ← w − η · (m / (1−β₁ᵗ)) / (√(v / (1−β₂ᵗ)) + ε)`.
pub fn adam_step<T: Scalar>(w: &mut Tensor<T>, grad: &Tensor<T>, state: &mut AdamState<T>, lr: T, p: &AdamParams) -> Result<()> {
    if !(p.epsilon > 0.0) {
        return Err(Error::Config(format!("Adam epsilon must be positive, got {}", p.epsilon)));
    }
    if !(0.0..1.0).contains(&p.beta1) || !(0.0..1.0).contains(&p.beta2) {
        return Err(Error::Config(format!("Adam betas must lie in [0, 1), got {} and {}", p.beta1, p.beta2)));
    }
    check_update(w, grad, lr)?;
    if state.m.shape() != w.shape() || state.v.shape() != w.shape() {
        return Err(Error::dim("Adam state", state.m.shape(), w.shape()));
    }
    let one = T::one();
    let (b1, b2, eps) = (T::from_f64_lossy(p.beta1), T::from_f64_lossy(p.beta2), T::from_f64_lossy(p.epsilon));
    state.t += 1;
    let t = i32::try_from(state.t).unwrap_or(i32::MAX);
    let (c1, c2) = (one - b1.powi(t), one - b2.powi(t));
    // Coefficient of g in the bias-corrected moments; exactly one at t = 1.
    let (r1, r2) = ((one - b1) / c1, (one - b2) / c2);
    let (m, v) = (state.m.data_mut(), state.v.data_mut());
    for (i, (w, &g)) in w.data_mut().iter_mut().zip(grad.data()).enumerate() {
        let m_hat = b1 * m[i] / c1 + r1 * g;
        let v_hat = b2 * v[i] / c2 + r2 * (g * g);
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * (g * g);
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Optimizer state for every parameter of a network.
#[derive(Debug, Clone)]
pub enum Optimizer<T: Scalar> {
    Sgd,
    Adam { params: AdamParams, states: Vec<AdamState<T>> },
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(cfg: &TrainConfig, net: &Network<T>) -> Self {
        match cfg.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd,
            OptimizerKind::Adam => Optimizer::Adam {
                params: cfg.adam(),
                states: net.params().iter().map(|p| AdamState::new(p.shape())).collect(),
            },
        }
    }

    /// Applies the gradients held by the network, adding `λ w` to weight
    /// (not bias) gradients first.
    pub fn step(&mut self, net: &mut Network<T>, lr: f64, weight_decay: f64) -> Result<()> {
        let lr = T::from_f64_lossy(lr);
        let lambda = T::from_f64_lossy(weight_decay);
        for (i, slot) in net.param_slots().into_iter().enumerate() {
            if slot.is_weight && weight_decay > 0.0 {
                for (g, &w) in slot.grad.data_mut().iter_mut().zip(slot.value.data()) {
                    *g += lambda * w;
                }
            }
            match self {
                Optimizer::Sgd => sgd_step(slot.value, slot.grad, lr)?,
                Optimizer::Adam { params, states } => adam_step(slot.value, slot.grad, &mut states[i], lr, params)?,
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    /// 1-based count of completed updates.
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub batch_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalRecord {
    pub step: u64,
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct History {
    pub steps: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
}

impl History {
    /// `step,lr,loss,batch_accuracy,train_accuracy,val_accuracy`; the last
    /// two columns are empty on steps without an evaluation.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,lr,loss,batch_accuracy,train_accuracy,val_accuracy\n");
        let mut evals = self.evals.iter().peekable();
        for s in &self.steps {
            let (mut train, mut val) = (String::new(), String::new());
            if let Some(e) = evals.next_if(|e| e.step == s.step) {
                train = e.train_accuracy.to_string();
                val = e.val_accuracy.map(|v| v.to_string()).unwrap_or_default();
            }
            out.push_str(&format!("{},{},{},{},{train},{val}\n", s.step, s.lr, s.loss, s.batch_accuracy));
        }
        out
    }
}

/// Hooks called from [`train_loop`]. Every method defaults to a no-op.
pub trait TrainObserver<T: Scalar> {
    fn on_step(&mut self, _record: &StepRecord) {}
    fn on_eval(&mut self, _record: &EvalRecord) {}
    /// Called with the network after every scheduled snapshot.
    fn on_checkpoint(&mut self, _step: u64, _net: &Network<T>) -> Result<()> {
        Ok(())
    }
}

impl<T: Scalar> TrainObserver<T> for () {}

/// Accuracy and confusion matrix (`confusion[true][predicted]`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub predictions: Vec<usize>,
}

/// Scores a dataset in inference mode, in parallel over batches.
pub fn evaluate<T: Scalar>(net: &Network<T>, ds: &LabeledDataset, batch_size: usize) -> Result<Evaluation> {
    if ds.is_empty() {
        return Err(Error::Validation("cannot evaluate on an empty dataset".into()));
    }
    let idx: Vec<usize> = (0..ds.len()).collect();
    let parts = idx
        .par_chunks(batch_size.max(1))
        .map(|chunk| {
            let (x, _) = ds.batch::<T>(chunk)?;
            net.predict(&x)
        })
        .collect::<Result<Vec<_>>>()?;
    let predictions: Vec<usize> = parts.into_iter().flatten().collect();
    let k = net.classes().max(ds.classes().len());
    let mut confusion = vec![vec![0; k]; k];
    let mut correct = 0;
    for (s, &p) in ds.samples().iter().zip(&predictions) {
        confusion[s.label][p] += 1;
        correct += usize::from(s.label == p);
    }
    Ok(Evaluation {
        accuracy: correct as f64 / ds.len() as f64,
        confusion,
        predictions,
    })
}

/// Mini-batch training.
///
/// Batches are drawn from a fresh permutation of the training set every
/// epoch (the last, shorter batch is kept). Shuffling and dropout use two
/// independent streams derived from `cfg.seed`, so a fixed seed reproduces
/// the history exactly. On a non-finite loss the parameters are restored to
/// the last snapshot (the initial ones if none was taken) and a numeric
/// error is returned.
pub fn train_loop<T: Scalar>(
    net: &mut Network<T>,
    train: &LabeledDataset,
    val: Option<&LabeledDataset>,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver<T>,
) -> Result<History> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    if !net.is_initialized() {
        return Err(Error::State("network parameters are not initialized".into()));
    }
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    dropout_rng.set_stream(1);
    let mut optimizer = Optimizer::new(cfg, net);
    let mut snapshot: Vec<Tensor<T>> = net.params().into_iter().cloned().collect();
    let train_eval = if cfg.eval_train_samples > 0 && cfg.eval_train_samples < train.len() {
        let pick = crate::datasets::stratified_sample(&train.labels(), cfg.eval_train_samples, cfg.seed);
        Some(train.subset(&pick)?)
    } else {
        None
    };

    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut pos = order.len();
    for step in 0..cfg.max_steps {
        if pos >= order.len() {
            order.shuffle(&mut shuffle_rng);
            pos = 0;
        }
        let end = (pos + cfg.batch_size).min(order.len());
        let (x, labels) = train.batch::<T>(&order[pos..end])?;
        pos = end;
        let lr = lr_schedule(step, cfg);

        let outcome = net.forward(&x, Mode::Train, &mut dropout_rng).and_then(|out| {
            let (loss, grad) = net.loss(&out, &labels)?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!("loss at step {}", step + 1)));
            }
            Ok((out, loss, grad))
        });
        let (out, loss, grad) = match outcome {
            Ok(v) => v,
            Err(e @ Error::Numeric { .. }) => {
                net.clear_caches();
                net.set_params(&snapshot)?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        net.backward_in_place(&grad)?;
        optimizer.step(net, lr, cfg.weight_decay)?;

        let mut loss = loss.to_f64_lossy();
        if cfg.weight_decay > 0.0 {
            let sq: f64 = net
                .param_slots()
                .iter()
                .filter(|s| s.is_weight)
                .flat_map(|s| s.value.data().iter().map(|w| w.to_f64_lossy().powi(2)))
                .sum();
            loss += 0.5 * cfg.weight_decay * sq;
        }
        let predicted = argmax_rows(&out);
        let hits = predicted.iter().zip(&labels).filter(|(p, l)| p == l).count();
        let record = StepRecord {
            step: step + 1,
            lr,
            loss,
            batch_accuracy: hits as f64 / labels.len() as f64,
        };
        observer.on_step(&record);
        history.steps.push(record);

        let done = step + 1;
        if cfg.eval_every > 0 && (done % cfg.eval_every == 0 || done == cfg.max_steps) {
            let train_acc = evaluate(net, train_eval.as_ref().unwrap_or(train), cfg.batch_size.max(100))?.accuracy;
            let val_acc = val.map(|v| evaluate(net, v, cfg.batch_size.max(100))).transpose()?.map(|e| e.accuracy);
            let record = EvalRecord {
                step: done,
                train_accuracy: train_acc,
                val_accuracy: val_acc,
            };
            observer.on_eval(&record);
            history.evals.push(record);
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            snapshot = net.params().into_iter().cloned().collect();
            observer.on_checkpoint(done, net)?;
        }
    }
    net.clear_caches();
    Ok(history)
}
