//! Independent reference implementations used by the integration tests.
//! None of these call into the library's numerics.

#![allow(dead_code)]

use rand::Rng;

/// Brute-force smoothing over one node set: sum over unordered pairs of
/// `(1 - |t_j - t_k|) (y_j - y_k)^2`.
pub fn pair_sum(nodes: &[usize], labels: &[f64], y: &[f64]) -> f64 {
    let mut s = 0.0;
    for (a, &j) in nodes.iter().enumerate() {
        for &k in &nodes[a + 1..] {
            let beta = 1.0 - (labels[j] - labels[k]).abs();
            s += beta * (y[j] - y[k]) * (y[j] - y[k]);
        }
    }
    s
}

/// Dense `D - A` built directly from the node list, row-major `m x m`.
pub fn dense_laplacian(nodes: &[usize], labels: &[f64]) -> Vec<f64> {
    let m = nodes.len();
    let mut l = vec![0.0; m * m];
    for j in 0..m {
        for k in 0..m {
            if j != k {
                let w = 1.0 - (labels[nodes[j]] - labels[nodes[k]]).abs();
                l[j * m + k] = -w;
                l[j * m + j] += w;
            }
        }
    }
    l
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Summed binary cross-entropy written against probabilities.
pub fn bce_sum(logits: &[f64], targets: &[f64]) -> f64 {
    logits
        .iter()
        .zip(targets)
        .map(|(&z, &t)| {
            let y = sigmoid(z);
            -(t * y.ln() + (1.0 - t) * (1.0 - y).ln())
        })
        .sum()
}

/// Central difference refined by two Richardson steps (`h`, `h/2`, `h/4`).
pub fn derivative(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
    let d: Vec<f64> = (0..3)
        .map(|k| {
            let s = h / f64::from(1u32 << k);
            (f(s) - f(-s)) / (2.0 * s)
        })
        .collect();
    let r1 = (4.0 * d[1] - d[0]) / 3.0;
    let r2 = (4.0 * d[2] - d[1]) / 3.0;
    (16.0 * r2 - r1) / 15.0
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Fraction of (positive, negative) pairs ranked correctly; ties count half.
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Random score/label vector with both classes present. Scores come from a
/// coarse grid half the time so ties occur.
pub fn random_scored<R: Rng>(rng: &mut R, max_len: usize) -> (Vec<f64>, Vec<bool>) {
    loop {
        let n = rng.random_range(2..=max_len);
        let coarse = rng.random_bool(0.5);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if coarse {
                    f64::from(rng.random_range(0..10u8)) / 10.0
                } else {
                    rng.random_range(0.0..1.0)
                }
            })
            .collect();
        let p = rng.random_range(0.05..0.95);
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(p)).collect();
        if labels.iter().any(|&l| l) && labels.iter().any(|&l| !l) {
            return (scores, labels);
        }
    }
}
