//! Hand-derived gradients against central finite differences in f64. Each
//! check returns the worst relative error over its instances.

use callo::nn::{cross_entropy_loss, l2_penalty, squared_error_loss, LayerSpec, Mode, Network, NetworkSpec};
use callo::{Padding, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{check_layer, numeric_grad, rel_err, uniform};

pub const TOL: f64 = 1e-4;
pub const INSTANCES: u64 = 20;

/// Every check with its name, in a fixed order.
pub const CHECKS: &[(&str, fn() -> f64)] = &[
    ("conv", conv),
    ("maxpool routing", maxpool_routing),
    ("dense", dense),
    ("relu", relu),
    ("lrn", lrn),
    ("lrn (default parameters)", lrn_default_parameters),
    ("dropout (fixed mask)", dropout_with_fixed_mask),
    ("softmax", softmax_layer),
    ("cross-entropy loss", cross_entropy),
    ("squared-error loss", squared_error),
    ("l2 penalty", l2),
    ("whole network", whole_network),
];

/// Worst relative error of one layer over every instance.
fn layer_worst(mut make: impl FnMut(&mut ChaCha8Rng) -> (LayerSpec, Vec<usize>, Tensor<f64>)) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (spec, shape, x) = make(&mut rng);
        worst = worst.max(check_layer(&spec, &shape, x, seed));
    }
    worst
}

pub fn conv() -> f64 {
    layer_worst(|rng| {
        let (h, w, c) = (rng.random_range(3..7), rng.random_range(3..7), rng.random_range(1..4));
        let kernel = [1, 3][rng.random_range(0..2)];
        let padding = if rng.random() { Padding::Same } else { Padding::Valid };
        let spec = LayerSpec::Conv {
            filters: rng.random_range(1..4),
            kernel,
            stride: rng.random_range(1..3),
            padding,
        };
        let x = uniform(&[2, h, w, c], rng, -1.0, 1.0);
        (spec, vec![h, w, c], x)
    })
}

pub fn maxpool_routing() -> f64 {
    layer_worst(|rng| {
        let (h, w, c) = (rng.random_range(2..7), rng.random_range(2..7), rng.random_range(1..3));
        let window = rng.random_range(1..3);
        let spec = LayerSpec::Maxpool {
            window,
            stride: Some(rng.random_range(1..3)),
        };
        // A shuffled ladder keeps every pair of inputs far apart relative to the step.
        let n = 2 * h * w * c;
        let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.01).collect();
        use rand::seq::SliceRandom;
        vals.shuffle(rng);
        (spec, vec![h, w, c], Tensor::new([2, h, w, c], vals).unwrap())
    })
}

pub fn dense() -> f64 {
    layer_worst(|rng| {
        let shape = vec![rng.random_range(1..4), rng.random_range(1..4), rng.random_range(1..3)];
        let mut full = vec![3];
        full.extend(&shape);
        let x = uniform(&full, rng, -1.0, 1.0);
        (LayerSpec::Dense { units: rng.random_range(1..6) }, shape, x)
    })
}

pub fn relu() -> f64 {
    layer_worst(|rng| {
        let shape = vec![rng.random_range(1..5), rng.random_range(1..5), 2];
        let mut full = vec![2];
        full.extend(&shape);
        // Keep inputs clear of the kink.
        let x = Tensor::from_fn(full, |_| {
            let v: f64 = rng.random_range(0.01..1.0);
            if rng.random() { v } else { -v }
        });
        (LayerSpec::Relu, shape, x)
    })
}

pub fn lrn() -> f64 {
    layer_worst(|rng| {
        let c = rng.random_range(1..8);
        let shape = vec![rng.random_range(1..4), rng.random_range(1..4), c];
        let mut full = vec![2];
        full.extend(&shape);
        let x = uniform(&full, rng, -2.0, 2.0);
        let spec = LayerSpec::Lrn {
            k: rng.random_range(1.0..2.5),
            n: [1, 3, 5][rng.random_range(0..3)],
            alpha: rng.random_range(0.05..0.5),
            beta: rng.random_range(0.5..1.0),
        };
        (spec, shape, x)
    })
}

pub fn lrn_default_parameters() -> f64 {
    layer_worst(|rng| {
        let shape = vec![2, 2, 6];
        let x = uniform(&[2, 2, 2, 6], rng, -3.0, 3.0);
        (LayerSpec::lrn_default(), shape, x)
    })
}

pub fn dropout_with_fixed_mask() -> f64 {
    layer_worst(|rng| {
        let shape = vec![3, 3, 2];
        let x = uniform(&[2, 3, 3, 2], rng, -1.0, 1.0);
        (LayerSpec::Dropout { p: rng.random_range(0.1..0.7) }, shape, x)
    })
}

pub fn softmax_layer() -> f64 {
    layer_worst(|rng| {
        let k = rng.random_range(2..6);
        let x = uniform(&[3, k], rng, -2.0, 2.0);
        (LayerSpec::Softmax, vec![k], x)
    })
}

pub fn cross_entropy() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, k) = (rng.random_range(1..5), rng.random_range(2..7));
        let z = uniform(&[n, k], &mut rng, -3.0, 3.0);
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
        let (_, g) = cross_entropy_loss(&z, &labels).unwrap();
        for (i, num) in numeric_grad(&z, 40, &mut rng, |zp| cross_entropy_loss(zp, &labels).unwrap().0) {
            worst = worst.max(rel_err(g.data()[i], num));
        }
    }
    worst
}

pub fn squared_error() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [rng.random_range(1..4), rng.random_range(1..5)];
        let o = uniform(&shape, &mut rng, -2.0, 2.0);
        let t = uniform(&shape, &mut rng, -2.0, 2.0);
        let (_, g) = squared_error_loss(&o, &t).unwrap();
        for (i, num) in numeric_grad(&o, 40, &mut rng, |op| squared_error_loss(op, &t).unwrap().0) {
            worst = worst.max(rel_err(g.data()[i], num));
        }
    }
    worst
}

pub fn l2() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = uniform(&[rng.random_range(1..5), 3], &mut rng, -2.0, 2.0);
        let other = uniform(&[4], &mut rng, -1.0, 1.0);
        let lambda = rng.random_range(0.0..1.0);
        let (_, g) = l2_penalty(&[&w, &other], lambda).unwrap();
        for (i, num) in numeric_grad(&w, 40, &mut rng, |wp| l2_penalty(&[wp, &other], lambda).unwrap().0) {
            worst = worst.max(rel_err(g[0].data()[i], num));
        }
    }
    worst
}

const SMALL_NET: &str = r#"
input = [6, 6, 2]
loss = "cross-entropy"
[[layers]]
kind = "conv"
filters = 3
kernel = 3
[[layers]]
kind = "lrn"
alpha = 0.3
n = 3
[[layers]]
kind = "relu"
[[layers]]
kind = "maxpool"
window = 2
[[layers]]
kind = "dropout"
p = 0.3
[[layers]]
kind = "dense"
units = 4
"#;

pub fn whole_network() -> f64 {
    let mut worst: f64 = 0.0;
    let spec = NetworkSpec::from_toml(SMALL_NET).unwrap();
    for seed in 0..INSTANCES {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::<f64>::new(spec.clone(), seed).unwrap();
        let x = uniform(&[3, 6, 6, 2], &mut rng, -1.0, 1.0);
        let labels: Vec<usize> = (0..3).map(|_| rng.random_range(0..4)).collect();
        let mask_seed: u64 = rng.random();
        let loss_at = |net: &mut Network<f64>| {
            let mut drng = ChaCha8Rng::seed_from_u64(mask_seed);
            let out = net.forward(&x, Mode::Train, &mut drng).unwrap();
            net.loss(&out, &labels).unwrap()
        };
        let (_, g) = loss_at(&mut net);
        let grads = net.backward(&g).unwrap();
        for (pi, grad) in grads.iter().enumerate() {
            let p = net.params()[pi].clone();
            let mut probe = net.clone();
            for (i, num) in numeric_grad(&p, 25, &mut rng, |pp| {
                probe.params_mut()[pi].data_mut().copy_from_slice(pp.data());
                loss_at(&mut probe).0
            }) {
                worst = worst.max(rel_err(grad.data()[i], num));
            }
        }
    }
    worst
}
