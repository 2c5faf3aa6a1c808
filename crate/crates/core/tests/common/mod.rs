#![allow(dead_code)]

pub mod grad_suite;
pub mod oracle_suite;
pub mod quadrant;

use callo::nn::{Layer, LayerSpec};
use callo::Tensor;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
/// Gradients smaller than this are compared absolutely.
pub const FLOOR: f64 = 1e-5;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR)
}

pub fn uniform(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// Central difference of `f` at up to `max_coords` random coordinates of
/// `x`, returning `(coordinate, numeric derivative)` pairs.
pub fn numeric_grad(
    x: &Tensor<f64>,
    max_coords: usize,
    rng: &mut ChaCha8Rng,
    mut f: impl FnMut(&Tensor<f64>) -> f64,
) -> Vec<(usize, f64)> {
    let coords = sample(rng, x.len(), max_coords.min(x.len())).into_vec();
    coords
        .into_iter()
        .map(|i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += STEP;
            let mut minus = x.clone();
            minus.data_mut()[i] -= STEP;
            (i, (f(&plus) - f(&minus)) / (2.0 * STEP))
        })
        .collect()
}

fn weighted_output(layer: &Layer<f64>, x: &Tensor<f64>, r: &Tensor<f64>, mask_seed: u64) -> f64 {
    let mut l = layer.clone();
    let mut drng = ChaCha8Rng::seed_from_u64(mask_seed);
    let y = l.forward_train(x, &mut drng).unwrap();
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Checks input and parameter gradients of one layer against central
/// differences of `L = Σ r ⊙ layer(x)` for a random upstream `r`. Dropout
/// masks are reproduced by re-seeding before every forward. Returns the
/// largest relative error seen.
pub fn check_layer(spec: &LayerSpec, in_shape: &[usize], x: Tensor<f64>, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = Layer::<f64>::build(spec, in_shape).unwrap();
    layer.init_params(&mut rng);
    for p in layer.params_mut() {
        for v in p.data_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    let mask_seed = rng.random();
    let mut drng = ChaCha8Rng::seed_from_u64(mask_seed);
    let y = layer.forward_train(&x, &mut drng).unwrap();
    let r = uniform(y.shape(), &mut rng, -1.0, 1.0);
    let gx = layer.backward(&r, true).unwrap().expect("input gradient requested");

    let mut worst: f64 = 0.0;
    for (i, num) in numeric_grad(&x, 40, &mut rng, |xp| weighted_output(&layer, xp, &r, mask_seed)) {
        worst = worst.max(rel_err(gx.data()[i], num));
    }
    let grads: Vec<Tensor<f64>> = layer.grads().into_iter().cloned().collect();
    for (pi, g) in grads.iter().enumerate() {
        let p = layer.params()[pi].clone();
        let nums = numeric_grad(&p, 40, &mut rng, |pp| {
            let mut l = layer.clone();
            l.params_mut()[pi].data_mut().copy_from_slice(pp.data());
            weighted_output(&l, &x, &r, mask_seed)
        });
        for (i, num) in nums {
            worst = worst.max(rel_err(g.data()[i], num));
        }
    }
    worst
}
