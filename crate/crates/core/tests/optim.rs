use callo::datasets::{LabeledDataset, Sample};
use callo::nn::{Network, NetworkSpec};
use callo::optim::{adam_step, sgd_step, train_loop, AdamParams, AdamState, TrainConfig, OptimizerKind};
use callo::Tensor;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scalar(v: f64) -> Tensor<f64> {
    Tensor::new([1], vec![v]).unwrap()
}

#[test]
fn adam_two_step_trace() {
    let p = AdamParams {
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
    let (lr, b1, b2, eps) = (0.001, 0.9f64, 0.999f64, 1e-8);
    let mut w = scalar(0.0);
    let mut s = AdamState::new(&[1]);
    adam_step(&mut w, &scalar(1.0), &mut s, lr, &p).unwrap();
    adam_step(&mut w, &scalar(-1.0), &mut s, lr, &p).unwrap();

    // The four update equations evaluated by hand for g = 1, then g = -1.
    let m1 = (1.0 - b1) * 1.0;
    let v1 = (1.0 - b2) * 1.0;
    let w1 = 0.0 - lr * (m1 / (1.0 - b1)) / ((v1 / (1.0 - b2)).sqrt() + eps);
    let m2 = b1 * m1 + (1.0 - b1) * -1.0;
    let v2 = b2 * v1 + (1.0 - b2) * 1.0;
    let w2 = w1 - lr * (m2 / (1.0 - b1 * b1)) / ((v2 / (1.0 - b2 * b2)).sqrt() + eps);
    assert!((s.m.data()[0] - m2).abs() <= 1e-15);
    assert!((s.v.data()[0] - v2).abs() <= 1e-15);
    assert!((w.data()[0] - w2).abs() <= 1e-15, "{} vs {w2}", w.data()[0]);
    // Decimal values: m2 = -0.01, v2 = 0.001999, w2 = -0.001 + 0.001/19 (to ~1e-11).
    assert!((w.data()[0] - (-0.001 + 0.001 / 19.0)).abs() < 1e-10);
    assert_eq!(s.t, 2);
}

#[test]
fn adam_without_moments_is_sign_descent() {
    let p = AdamParams {
        beta1: 0.0,
        beta2: 0.0,
        epsilon: 1e-12,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut w: Tensor<f64> = Tensor::from_fn([50], |_| rng.random_range(-1.0..1.0));
    let mut s = AdamState::new(&[50]);
    for _ in 0..5 {
        let g: Tensor<f64> = Tensor::from_fn([50], |_| rng.random_range(-2.0..2.0));
        let before = w.clone();
        adam_step(&mut w, &g, &mut s, 0.05, &p).unwrap();
        for i in 0..50 {
            let expect = before.data()[i] - 0.05 * g.data()[i].signum();
            assert!((w.data()[i] - expect).abs() < 1e-6);
        }
    }
}

proptest! {
    #[test]
    fn adam_moment_bounds(grads in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..30)) {
        let p = AdamParams::default();
        let mut w = Tensor::zeros([3]);
        let mut s = AdamState::new(&[3]);
        let mut max_g: f64 = 0.0;
        for g in &grads {
            max_g = g.iter().fold(max_g, |a, v| a.max(v.abs()));
            adam_step(&mut w, &Tensor::new([3], g.clone()).unwrap(), &mut s, 1e-3, &p).unwrap();
            prop_assert!(s.v.data().iter().all(|&v| v >= 0.0));
            prop_assert!(s.m.data().iter().all(|&m| m.abs() <= max_g + 1e-12));
        }
    }
}

#[test]
fn both_optimizers_descend_a_quadratic_bowl() {
    let energy = |w: &Tensor<f64>| 0.5 * w.data().iter().map(|v| v * v).sum::<f64>();
    let start = Tensor::new([4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();

    let mut w = start.clone();
    let mut last = energy(&w);
    for _ in 0..200 {
        let g = w.clone();
        sgd_step(&mut w, &g, 0.1).unwrap();
        let e = energy(&w);
        assert!(e < last);
        last = e;
    }

    let mut w = start;
    let mut s = AdamState::new(&[4]);
    let mut last = energy(&w);
    for step in 0..300 {
        let g = w.clone();
        adam_step(&mut w, &g, &mut s, 0.01, &AdamParams::default()).unwrap();
        let e = energy(&w);
        if step >= 10 {
            assert!(e <= last, "step {step}: {e} > {last}");
        }
        last = e;
    }
}

fn separable(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n)
        .map(|i| {
            let label = i % 2;
            let sign = if label == 0 { -1.0 } else { 1.0 };
            let a: f32 = sign * rng.random_range(0.2f32..1.0);
            let b: f32 = rng.random_range(-1.0f32..1.0);
            Sample {
                id: i.to_string(),
                features: Tensor::new([1, 1, 2], vec![a, b]).unwrap(),
                label,
            }
        })
        .collect();
    LabeledDataset::new(samples, vec!["neg".into(), "pos".into()], "toy").unwrap()
}

const DENSE: &str = "input = [1, 1, 2]\n[[layers]]\nkind = \"dense\"\nunits = 2\n";

#[test]
fn zero_steps_changes_nothing() {
    let mut net = Network::<f32>::new(NetworkSpec::from_toml(DENSE).unwrap(), 3).unwrap();
    let before: Vec<Tensor<f32>> = net.params().into_iter().cloned().collect();
    let cfg = TrainConfig {
        max_steps: 0,
        ..TrainConfig::default()
    };
    let h = train_loop(&mut net, &separable(10, 1), None, &cfg, &mut ()).unwrap();
    assert!(h.steps.is_empty() && h.evals.is_empty());
    let after: Vec<Tensor<f32>> = net.params().into_iter().cloned().collect();
    assert_eq!(before, after);
}

#[test]
fn separable_toy_reaches_full_accuracy() {
    let ds = separable(200, 2);
    for optimizer in [OptimizerKind::Adam, OptimizerKind::Sgd] {
        let mut net = Network::<f32>::new(NetworkSpec::from_toml(DENSE).unwrap(), 4).unwrap();
        let cfg = TrainConfig {
            learning_rate: if optimizer == OptimizerKind::Adam { 0.05 } else { 0.5 },
            decay_rate: 1.0,
            batch_size: 20,
            max_steps: 500,
            optimizer,
            eval_every: 100,
            ..TrainConfig::default()
        };
        let h = train_loop(&mut net, &ds, None, &cfg, &mut ()).unwrap();
        let last = h.evals.last().unwrap();
        assert_eq!(last.train_accuracy, 1.0, "{optimizer:?}");
    }
}

#[test]
fn fixed_seed_reproduces_history() {
    let spec = NetworkSpec::from_toml(
        "input = [4, 4, 1]\n[[layers]]\nkind = \"conv\"\nfilters = 2\nkernel = 3\n[[layers]]\nkind = \"relu\"\n\
         [[layers]]\nkind = \"dropout\"\np = 0.5\n[[layers]]\nkind = \"dense\"\nunits = 2\n",
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples = (0..37)
        .map(|i| Sample {
            id: i.to_string(),
            features: Tensor::from_fn([4, 4, 1], |_| rng.random_range(0.0f32..1.0)),
            label: i % 2,
        })
        .collect();
    let ds = LabeledDataset::new(samples, vec!["a".into(), "b".into()], "toy").unwrap();
    let cfg = TrainConfig {
        learning_rate: 0.01,
        batch_size: 8,
        max_steps: 40,
        eval_every: 10,
        ..TrainConfig::default()
    };
    let run = || {
        let mut net = Network::<f64>::new(spec.clone(), 1).unwrap();
        train_loop(&mut net, &ds, Some(&ds), &cfg, &mut ()).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a, b);
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.evals.len(), 4);
}

#[test]
fn non_finite_loss_restores_snapshot() {
    let mut net = Network::<f32>::new(NetworkSpec::from_toml(DENSE).unwrap(), 3).unwrap();
    let before: Vec<Tensor<f32>> = net.params().into_iter().cloned().collect();
    let cfg = TrainConfig {
        learning_rate: 1e30,
        optimizer: OptimizerKind::Sgd,
        decay_rate: 1.0,
        batch_size: 4,
        max_steps: 50,
        ..TrainConfig::default()
    };
    let err = train_loop(&mut net, &separable(16, 1), None, &cfg, &mut ()).unwrap_err();
    assert!(matches!(err, callo::Error::Numeric { .. }), "{err}");
    let after: Vec<Tensor<f32>> = net.params().into_iter().cloned().collect();
    assert_eq!(before, after);
}

#[test]
fn adam_first_step_uses_the_raw_gradient() {
    let p = AdamParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g: Tensor<f64> = Tensor::from_fn([2000], |_| rng.random_range(-10.0..10.0));
    let mut w = Tensor::zeros([2000]);
    let mut s = AdamState::new(&[2000]);
    adam_step(&mut w, &g, &mut s, 1e-3, &p).unwrap();
    for (w, g) in w.data().iter().zip(g.data()) {
        assert_eq!(*w, -(1e-3 * g / ((g * g).sqrt() + p.epsilon)));
    }
}
