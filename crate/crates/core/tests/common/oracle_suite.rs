//! Kernels against direct loop implementations and independent solvers on
//! random instances. Each check returns its worst discrepancy.

use callo::baseline::{pca_fit, KnnModel, Metric, Retain};
use callo::tensor::{conv2d, maxpool2d, matmul};
use callo::{Padding, Tensor};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const INSTANCES: u64 = 120;

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

pub fn conv_oracle(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize, padding: Padding) -> Tensor<f64> {
    let (h, w, cin) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let (kh, kw, cout) = (k.shape()[0], k.shape()[1], k.shape()[3]);
    let (oh, ow, top, left) = match padding {
        Padding::Valid => ((h - kh) / stride + 1, (w - kw) / stride + 1, 0, 0),
        Padding::Same => {
            let oh = h.div_ceil(stride);
            let ow = w.div_ceil(stride);
            let ph = ((oh - 1) * stride + kh).saturating_sub(h);
            let pw = ((ow - 1) * stride + kw).saturating_sub(w);
            (oh, ow, ph / 2, pw / 2)
        }
    };
    let mut out = Tensor::zeros([oh, ow, cout]);
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..cout {
                let mut acc = 0.0;
                for ky in 0..kh {
                    for kx in 0..kw {
                        for c in 0..cin {
                            let iy = (oy * stride + ky) as isize - top as isize;
                            let ix = (ox * stride + kx) as isize - left as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += x.at(&[iy as usize, ix as usize, c]) * k.at(&[ky, kx, c, o]);
                        }
                    }
                }
                out.set(&[oy, ox, o], acc);
            }
        }
    }
    out
}

/// Largest absolute difference; infinite on a shape mismatch.
fn diff(got: &Tensor<f64>, want: &Tensor<f64>) -> f64 {
    got.max_abs_diff(want).unwrap_or(f64::INFINITY)
}

pub fn conv2d_vs_loops() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for i in 0..INSTANCES {
        let (h, w, cin, cout) = (rng.random_range(3..10), rng.random_range(3..10), rng.random_range(1..4), rng.random_range(1..5));
        let fits: Vec<usize> = [1, 3, 5].into_iter().filter(|&k| k <= h).collect();
        let kh = fits[rng.random_range(0..fits.len())];
        let kw = [1, 3][rng.random_range(0..2)];
        let stride = rng.random_range(1..4);
        let padding = if i % 2 == 0 { Padding::Same } else { Padding::Valid };
        let x = random(&[h, w, cin], &mut rng);
        let k = random(&[kh, kw, cin, cout], &mut rng);
        let got = conv2d(&x, &k, stride, padding).unwrap();
        worst = worst.max(diff(&got, &conv_oracle(&x, &k, stride, padding)));
    }
    worst
}

/// Value error of max pooling; infinite when a routed index differs.
pub fn maxpool2d_vs_loops() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let (h, w, c) = (rng.random_range(3..12), rng.random_range(3..12), rng.random_range(1..4));
        let window = rng.random_range(1..4);
        let stride = rng.random_range(1..4);
        let x = random(&[h, w, c], &mut rng);
        let (got, arg) = maxpool2d(&x, window, stride).unwrap();
        let (oh, ow) = ((h - window) / stride + 1, (w - window) / stride + 1);
        if got.shape() != [oh, ow, c] {
            return f64::INFINITY;
        }
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = f64::NEG_INFINITY;
                    let mut at = 0;
                    for dy in 0..window {
                        for dx in 0..window {
                            let (y, xx) = (oy * stride + dy, ox * stride + dx);
                            let v = x.at(&[y, xx, ch]);
                            if v > best {
                                best = v;
                                at = (y * w + xx) * c + ch;
                            }
                        }
                    }
                    if arg[(oy * ow + ox) * c + ch] != at {
                        return f64::INFINITY;
                    }
                    worst = worst.max((got.at(&[oy, ox, ch]) - best).abs());
                }
            }
        }
    }
    worst
}

pub fn matmul_vs_loops() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let (m, k, n) = (rng.random_range(1..9), rng.random_range(1..9), rng.random_range(1..9));
        let a = random(&[m, k], &mut rng);
        let b = random(&[k, n], &mut rng);
        let want = Tensor::from_fn([m, n], |idx| {
            let (r, col) = (idx / n, idx % n);
            (0..k).map(|j| a.at(&[r, j]) * b.at(&[j, col])).sum()
        });
        worst = worst.max(diff(&matmul(&a, &b).unwrap(), &want));
    }
    worst
}

pub fn knn_oracle(train: &[Vec<f64>], labels: &[usize], q: &[f64], k: usize, chebyshev: bool) -> usize {
    let mut d: Vec<(f64, usize)> = train
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let diffs = row.iter().zip(q).map(|(a, b)| (a - b).abs());
            let dist = if chebyshev { diffs.fold(0.0, f64::max) } else { diffs.map(|v| v * v).sum::<f64>().sqrt() };
            (dist, i)
        })
        .collect();
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut votes: std::collections::BTreeMap<usize, (usize, f64)> = Default::default();
    for &(dist, i) in &d[..k] {
        let e = votes.entry(labels[i]).or_insert((0, 0.0));
        e.0 += 1;
        e.1 += dist;
    }
    let top = votes.values().map(|v| v.0).max().unwrap();
    let mut best: Option<(usize, f64)> = None;
    for (&class, &(count, sum)) in &votes {
        if count == top && best.is_none_or(|(_, s)| sum < s) {
            best = Some((class, sum));
        }
    }
    best.unwrap().0
}

/// Number of queries where the model and the exhaustive scan disagree.
pub fn knn_vs_scan() -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut mismatches = 0;
    for i in 0..INSTANCES {
        let (n, d) = (rng.random_range(5..40), rng.random_range(1..6));
        // Small integer grids produce many exact distance ties.
        let grid = i % 2 == 0;
        let draw = |rng: &mut ChaCha8Rng| if grid { rng.random_range(0..3) as f64 } else { rng.random_range(-1.0..1.0) };
        let train: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| draw(&mut rng)).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let k = rng.random_range(1..=n.min(7));
        let chebyshev = i % 3 == 0;
        let metric = if chebyshev { Metric::Chebyshev } else { Metric::Euclidean };
        let model = KnnModel::fit(&DMatrix::from_fn(n, d, |r, c| train[r][c]), &labels, k, metric).unwrap();
        for _ in 0..10 {
            let q: Vec<f64> = (0..d).map(|_| draw(&mut rng)).collect();
            if model.classify(&q).unwrap().label != knn_oracle(&train, &labels, &q, k, chebyshev) {
                mismatches += 1;
            }
        }
    }
    mismatches
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, descending.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
    ev
}

/// Worst relative error of PCA variances (and total variance) against the
/// Jacobi eigenvalues of the sample covariance.
pub fn pca_vs_jacobi() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..INSTANCES {
        let (n, d) = (rng.random_range(3..25), rng.random_range(1..9));
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|j| rng.random_range(-1.0..1.0) * (j + 1) as f64).collect())
            .collect();
        let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|a| {
                (0..d)
                    .map(|b| x.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1) as f64)
                    .collect()
            })
            .collect();
        let expected = jacobi_eigenvalues(cov);
        let p = pca_fit(&DMatrix::from_fn(n, d, |a, b| x[a][b]), Retain::Count(d.min(n - 1))).unwrap();
        for (got, want) in p.variances.iter().zip(&expected) {
            worst = worst.max((got - want).abs() / want.abs().max(1.0));
        }
        let total: f64 = expected.iter().sum();
        worst = worst.max((p.total_variance - total).abs() / total.max(1.0));
    }
    worst
}
