//! Toy task whose label depends only on the top-left quadrant, with a
//! small convolutional classifier for it.

use callo::datasets::{LabeledDataset, Sample};
use callo::interpret::{saliency, Occlusion, SaliencyConfig};
use callo::nn::{Network, NetworkSpec};
use callo::optim::{evaluate, train_loop, TrainConfig};
use callo::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const SIDE: usize = 16;

/// Noise images whose class is the sign of the top-left quadrant mean.
pub fn quadrant_task(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = SIDE / 2;
    let samples = (0..n)
        .map(|i| {
            let offset = if rng.random::<bool>() { 0.3 } else { -0.3 };
            let data: Vec<f32> = (0..SIDE * SIDE)
                .map(|k| {
                    let tl = k / SIDE < half && k % SIDE < half;
                    rng.random_range(-1.0f32..1.0) + if tl { offset } else { 0.0 }
                })
                .collect();
            let tl_sum: f32 = (0..SIDE * SIDE).filter(|k| k / SIDE < half && k % SIDE < half).map(|k| data[k]).sum();
            Sample {
                id: format!("q{i}"),
                features: Tensor::new([SIDE, SIDE, 1], data).unwrap(),
                label: usize::from(tl_sum > 0.0),
            }
        })
        .collect();
    LabeledDataset::new(samples, vec!["negative".into(), "positive".into()], "quadrant task").unwrap()
}

/// Positive heat mass inside the top-left quadrant over total positive mass.
pub fn positive_share_in_quadrant(heat: &Tensor<f64>) -> f64 {
    let half = SIDE / 2;
    let (mut inside, mut total) = (0.0, 0.0);
    for y in 0..SIDE {
        for x in 0..SIDE {
            let v = heat.at(&[y, x]).max(0.0);
            total += v;
            if y < half && x < half {
                inside += v;
            }
        }
    }
    if total > 0.0 { inside / total } else { 0.0 }
}

pub struct QuadrantOutcome {
    pub accuracy: f64,
    /// Mean share of positive heat inside the informative quadrant.
    pub heat_share: f64,
}

/// Trains the toy classifier and measures where its saliency mass lies.
pub fn quadrant_saliency() -> QuadrantOutcome {
    let spec = NetworkSpec::from_toml(
        "input=[16,16,1]\n[[layers]]\nkind='conv'\nfilters=4\nkernel=3\npadding='same'\n[[layers]]\nkind='relu'\n\
         [[layers]]\nkind='maxpool'\nwindow=2\n[[layers]]\nkind='flatten'\n[[layers]]\nkind='dense'\nunits=2",
    )
    .unwrap();
    let train = quadrant_task(1000, 1);
    let test = quadrant_task(200, 2);
    let mut net = Network::<f32>::new(spec, 7).unwrap();
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        batch_size: 32,
        max_steps: 800,
        ..TrainConfig::default()
    };
    train_loop(&mut net, &train, None, &cfg, &mut ()).unwrap();
    let accuracy = evaluate(&net, &test, 100).unwrap().accuracy;
    let sal = SaliencyConfig {
        box_size: 4,
        stride: 2,
        fill: Occlusion::Zero,
    };
    let shares: Vec<f64> = test
        .samples()
        .iter()
        .take(40)
        .map(|s| positive_share_in_quadrant(&saliency(&net, &s.features, s.label, &sal).unwrap().upsample()))
        .collect();
    QuadrantOutcome {
        accuracy,
        heat_share: shares.iter().sum::<f64>() / shares.len() as f64,
    }
}
