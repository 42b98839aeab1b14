//! Linear probe: multinomial logistic regression on frozen features.

use rand::seq::SliceRandom;

use crate::error::{MarlError, Result};
use crate::nn::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub train_fraction: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            train_fraction: 0.7,
            iterations: 300,
            learning_rate: 0.05,
            l2: 1e-3,
            seed: 0,
        }
    }
}

fn check_inputs(features: &[f64], dim: usize, labels: &[usize], classes: usize) -> Result<()> {
    let n = labels.len();
    if dim == 0 || features.len() != n * dim {
        return Err(MarlError::dimension("probe features", n * dim, features.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(MarlError::Label(format!("probe label {bad} ≥ {classes}")));
    }
    Ok(())
}

/// Fits on a seeded split and returns held-out accuracy in `[0, 1]`.
///
/// `features` is row-major `n × dim`. Features are standardized with the
/// training-split statistics; optimization is full-batch Adam.
pub fn probe_accuracy(features: &[f64], dim: usize, labels: &[usize], classes: usize, cfg: &ProbeConfig) -> Result<f64> {
    check_inputs(features, dim, labels, classes)?;
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(cfg.seed, 31));
    let n_train = ((n as f64 * cfg.train_fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let (train, test) = order.split_at(n_train);
    if test.is_empty() {
        return Err(MarlError::Input("probe needs at least two samples".into()));
    }
    Ok(fit_and_count(features, dim, labels, classes, train, test, cfg) as f64 / test.len() as f64)
}

/// Seeded `folds`-fold cross-validation: every sample is scored exactly once
/// by a probe fitted on the other folds. `train_fraction` is ignored.
pub fn probe_accuracy_cv(features: &[f64], dim: usize, labels: &[usize], classes: usize, folds: usize, cfg: &ProbeConfig) -> Result<f64> {
    check_inputs(features, dim, labels, classes)?;
    let n = labels.len();
    if folds < 2 || folds > n {
        return Err(MarlError::Parameter(format!("{folds} folds for {n} samples")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded_rng(cfg.seed, 31));
    let mut correct = 0;
    for f in 0..folds {
        let (lo, hi) = (f * n / folds, (f + 1) * n / folds);
        let test = &order[lo..hi];
        let train: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
        correct += fit_and_count(features, dim, labels, classes, &train, test, cfg);
    }
    Ok(correct as f64 / n as f64)
}

fn fit_and_count(features: &[f64], dim: usize, labels: &[usize], classes: usize, train: &[usize], test: &[usize], cfg: &ProbeConfig) -> usize {
    let mut mean = vec![0.0; dim];
    let mut std = vec![0.0; dim];
    for &i in train {
        for (m, &v) in mean.iter_mut().zip(&features[i * dim..(i + 1) * dim]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= train.len() as f64);
    for &i in train {
        for ((s, &v), m) in std.iter_mut().zip(&features[i * dim..(i + 1) * dim]).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / train.len() as f64).sqrt().max(1e-8));
    let row = |i: usize| -> Vec<f64> {
        features[i * dim..(i + 1) * dim]
            .iter()
            .zip(&mean)
            .zip(&std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    };
    let train_x: Vec<Vec<f64>> = train.iter().map(|&i| row(i)).collect();

    let width = dim + 1;
    let mut w = vec![0.0; classes * width];
    let (mut m1, mut m2) = (vec![0.0; w.len()], vec![0.0; w.len()]);
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let logits = |w: &[f64], x: &[f64]| -> Vec<f64> {
        (0..classes)
            .map(|c| {
                let wc = &w[c * width..(c + 1) * width];
                wc[dim] + wc[..dim].iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    };
    for t in 1..=cfg.iterations {
        let mut g = vec![0.0; w.len()];
        for (x, &i) in train_x.iter().zip(train) {
            let z = logits(&w, x);
            let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
            for c in 0..classes {
                let p = (z[c] - max).exp() / sum - if c == labels[i] { 1.0 } else { 0.0 };
                let gc = &mut g[c * width..(c + 1) * width];
                for (gj, xj) in gc[..dim].iter_mut().zip(x) {
                    *gj += p * xj;
                }
                gc[dim] += p;
            }
        }
        let inv = 1.0 / train_x.len() as f64;
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = *gj * inv + if j % width != dim { cfg.l2 * w[j] } else { 0.0 };
            m1[j] = b1 * m1[j] + (1.0 - b1) * *gj;
            m2[j] = b2 * m2[j] + (1.0 - b2) * *gj * *gj;
            let mh = m1[j] / (1.0 - b1.powi(t as i32));
            let vh = m2[j] / (1.0 - b2.powi(t as i32));
            w[j] -= cfg.learning_rate * mh / (vh.sqrt() + eps);
        }
    }

    test.iter()
        .filter(|&&i| {
            let z = logits(&w, &row(i));
            let pred = z
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (c, &v)| if v > best.1 { (c, v) } else { best })
                .0;
            pred == labels[i]
        })
        .count()
}
