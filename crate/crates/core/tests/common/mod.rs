//! Reference implementations used as oracles. None of these call into the
//! code paths they check.
#![allow(dead_code)]

use triopts_core::network::{self, Dense, Gradients, LossKind, MlpParams};
use triopts_core::Matrix;

/// Straight-line Adam on a flat vector with ε under the square root.
/// Returns θ after every step (index 0 is θ₀).
pub fn adam_reference(
    theta0: &[f64],
    grad: impl Fn(&[f64]) -> Vec<f64>,
    steps: usize,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
) -> Vec<Vec<f64>> {
    let mut theta = theta0.to_vec();
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    let mut b1t = 1.0;
    let mut b2t = 1.0;
    let mut out = vec![theta.clone()];
    for _ in 0..steps {
        let g = grad(&theta);
        b1t *= beta1;
        b2t *= beta2;
        for i in 0..theta.len() {
            m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
            let mh = m[i] / (1.0 - b1t);
            let vh = v[i] / (1.0 - b2t);
            theta[i] -= lr * mh / (vh + eps).sqrt();
        }
        out.push(theta.clone());
    }
    out
}

/// Central finite differences of the loss with respect to every parameter,
/// in the same layout as [`Gradients`].
pub fn numeric_gradients(
    params: &MlpParams,
    x: &Matrix,
    y: &Matrix,
    kind: &LossKind,
    h: f64,
) -> Gradients {
    let loss_at = |p: &MlpParams| {
        let out = network::predict(p, x).unwrap();
        network::compute_loss(&out, y, kind).unwrap()
    };
    let mut grads = Gradients::zeros_like(params);
    let mut probe = params.clone();
    for k in 0..params.layers.len() {
        let nw = params.layers[k].weights.as_slice().len();
        for i in 0..nw {
            let orig = params.layers[k].weights.as_slice()[i];
            probe.layers[k].weights.as_mut_slice()[i] = orig + h;
            let plus = loss_at(&probe);
            probe.layers[k].weights.as_mut_slice()[i] = orig - h;
            let minus = loss_at(&probe);
            probe.layers[k].weights.as_mut_slice()[i] = orig;
            grads.layers[k].weights.as_mut_slice()[i] = (plus - minus) / (2.0 * h);
        }
        for i in 0..params.layers[k].bias.len() {
            let orig = params.layers[k].bias[i];
            probe.layers[k].bias[i] = orig + h;
            let plus = loss_at(&probe);
            probe.layers[k].bias[i] = orig - h;
            let minus = loss_at(&probe);
            probe.layers[k].bias[i] = orig;
            grads.layers[k].bias[i] = (plus - minus) / (2.0 * h);
        }
    }
    grads
}

/// Largest `|a − n| / max(|a|, |n|, floor)` over all entries.
pub fn max_relative_error(analytic: &Gradients, numeric: &Gradients, floor: f64) -> f64 {
    let flat = |g: &Gradients| -> Vec<f64> {
        g.layers
            .iter()
            .flat_map(|l: &Dense| {
                l.weights
                    .as_slice()
                    .iter()
                    .chain(&l.bias)
                    .copied()
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    flat(analytic)
        .iter()
        .zip(flat(numeric))
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Every permutation of `0..n` (Heap's algorithm).
pub fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(a.clone());
            return;
        }
        heap(k - 1, a, out);
        for i in 0..k - 1 {
            if k.is_multiple_of(2) {
                a.swap(i, k - 1);
            } else {
                a.swap(0, k - 1);
            }
            heap(k - 1, a, out);
        }
    }
    let mut a: Vec<usize> = (0..n).collect();
    let mut out = Vec::new();
    heap(n, &mut a, &mut out);
    out
}

/// Expected MSE increase when column `col` is replaced by a uniformly random
/// permutation of itself, averaged over all `n!` permutations.
pub fn exhaustive_pfi(
    predict: impl Fn(&[f64]) -> f64,
    rows: &[Vec<f64>],
    y: &[f64],
    col: usize,
) -> f64 {
    let n = rows.len();
    let mse = |preds: &[f64]| {
        preds
            .iter()
            .zip(y)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / n as f64
    };
    let base: Vec<f64> = rows.iter().map(|r| predict(r)).collect();
    let e_ori = mse(&base);
    let perms = all_permutations(n);
    let mut total = 0.0;
    for perm in &perms {
        let preds: Vec<f64> = (0..n)
            .map(|i| {
                let mut r = rows[i].clone();
                r[col] = rows[perm[i]][col];
                predict(&r)
            })
            .collect();
        total += mse(&preds);
    }
    total / perms.len() as f64 - e_ori
}

/// Neumaier-compensated sum, written separately from the library's.
pub fn accurate_sum(xs: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0_f64, 0.0_f64);
    for &x in xs {
        let t = s + x;
        c += if s.abs() >= x.abs() {
            (s - t) + x
        } else {
            (x - t) + s
        };
        s = t;
    }
    s + c
}

pub fn ulp(x: f64) -> f64 {
    let a = x.abs();
    a.next_up() - a
}

/// `∫ (F(x) − 1[x ≥ y])² dx` by the trapezoid rule on `[lo, hi]`.
pub fn crps_by_integration(
    cdf: impl Fn(f64) -> f64,
    y: f64,
    lo: f64,
    hi: f64,
    steps: usize,
) -> f64 {
    let h = (hi - lo) / steps as f64;
    let f = |x: f64| {
        let step = if x >= y { 1.0 } else { 0.0 };
        (cdf(x) - step).powi(2)
    };
    let mut s = 0.5 * (f(lo) + f(hi));
    for i in 1..steps {
        s += f(lo + i as f64 * h);
    }
    s * h
}
