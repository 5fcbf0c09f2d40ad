//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::PathBuf;

use funcsense_core::annotation::GoldDataset;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn gold_335() -> GoldDataset {
    let file = std::fs::File::open(fixture("gold_335.jsonl")).expect("fixture present");
    GoldDataset::read_jsonl(std::io::BufReader::new(file)).expect("fixture parses")
}

pub fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Sample covariance with divisor n - 1, formed densely.
pub fn dense_covariance(x: ArrayView2<f64>) -> Array2<f64> {
    let (n, d) = x.dim();
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    Array2::from_shape_fn((d, d), |(a, b)| {
        (0..n).map(|i| (x[[i, a]] - mean[a]) * (x[[i, b]] - mean[b])).sum::<f64>() / (n as f64 - 1.0)
    })
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix. Returns
/// eigenvalues in descending order with unit eigenvectors as columns.
pub fn jacobi_eigen(m: &Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let d = m.nrows();
    let mut a = m.clone();
    let mut v = Array2::<f64>::eye(d);
    for _sweep in 0..100 {
        let off: f64 = (0..d).flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[[i, j]].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..d {
            for q in p + 1..d {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..d {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..d {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..d {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]));
    let values = order.iter().map(|&i| a[[i, i]]).collect();
    let vectors = Array2::from_shape_fn((d, d), |(r, c)| v[[r, order[c]]]);
    (values, vectors)
}

/// Euclidean distance between `a` and `b` or `-b`, whichever is smaller.
pub fn distance_up_to_sign(a: &[f64], b: &[f64]) -> f64 {
    let plus: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum();
    let minus: f64 = a.iter().zip(b).map(|(x, y)| (x + y).powi(2)).sum();
    plus.min(minus).sqrt()
}

/// `1/2 (w1^2 + w2^2 + b^2) + c * sum hinge` for 2D data.
pub fn hinge_objective(x: &[[f64; 2]], y: &[f64], c: f64, w: [f64; 3]) -> f64 {
    let hinge: f64 = x
        .iter()
        .zip(y)
        .map(|(p, yi)| (1.0 - yi * (w[0] * p[0] + w[1] * p[1] + w[2])).max(0.0))
        .sum();
    0.5 * (w[0] * w[0] + w[1] * w[1] + w[2] * w[2]) + c * hinge
}

/// Coarse-to-fine grid search over `(w1, w2, b)`. The optimum satisfies
/// `|(w, b)|^2 <= 2 P(0) = 2 c n`, which bounds the first box.
pub fn grid_minimize(x: &[[f64; 2]], y: &[f64], c: f64) -> (f64, [f64; 3]) {
    const STEPS: i32 = 10;
    let mut center = [0.0; 3];
    let mut half = (2.0 * c * x.len() as f64).sqrt();
    let mut best = (hinge_objective(x, y, c, center), center);
    while half > 1e-7 {
        let step = half / STEPS as f64;
        for i in -STEPS..=STEPS {
            for j in -STEPS..=STEPS {
                for k in -STEPS..=STEPS {
                    let w = [
                        center[0] + i as f64 * step,
                        center[1] + j as f64 * step,
                        center[2] + k as f64 * step,
                    ];
                    let f = hinge_objective(x, y, c, w);
                    if f < best.0 {
                        best = (f, w);
                    }
                }
            }
        }
        center = best.1;
        half = 2.0 * step;
    }
    best
}

/// Two overlapping Gaussian clouds of `n / 2` points each, labels -1 / +1.
pub fn noisy_pair(n: usize, seed: u64) -> (Vec<[f64; 2]>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
    (0..n)
        .map(|i| {
            let label = if i % 2 == 0 { 1.0 } else { -1.0 };
            let nx: f64 = rng.sample(StandardNormal);
            let ny: f64 = rng.sample(StandardNormal);
            ([label * shift[0] + nx, label * shift[1] + ny], label)
        })
        .unzip()
}

/// `per_class` points around each of `classes` random centers in `dim`
/// dimensions; `spread` is the noise standard deviation.
pub fn blobs(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> (Array2<f64>, Vec<i64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.random_range(-5.0..5.0)).collect())
        .collect();
    let n = classes * per_class;
    let labels: Vec<i64> = (0..n).map(|i| (i % classes) as i64 + 1).collect();
    let x = Array2::from_shape_fn((n, dim), |(i, j)| {
        centers[i % classes][j] + spread * rng.sample::<f64, _>(StandardNormal)
    });
    (x, labels)
}
