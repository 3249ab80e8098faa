//! Shared oracles and generators for the integration tests.
#![allow(dead_code)]

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
}

pub fn unit_vector(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    let g = gaussian(rng, d, 1).column(0).into_owned();
    let norm = g.norm();
    g / norm
}

/// Random SPD matrix with eigenvalues roughly in `[0.3, 3]`.
pub fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = gaussian(rng, d, d) / (d as f64).sqrt();
    &a * a.transpose() * 0.5 + DMatrix::identity(d, d) * (0.3 + rng.random::<f64>())
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

pub fn abs_cos(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a.dot(b) / (a.norm() * b.norm())).abs()
}

/// One acceptance line on the real stdout, visible even for passing tests.
pub fn report(id: u32, pass: bool, detail: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "criterion {id}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    let _ = out.flush();
}

/// Euclidean projection onto `{0 ≤ a ≤ c, yᵀa = 0}`: `a = clip(z − μy)` with
/// the scalar `μ` found by bisection (the constraint sum is monotone in `μ`).
pub fn project_box_hyperplane(z: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let at = |mu: f64| -> Vec<f64> { z.iter().zip(y).map(|(zi, yi)| (zi - mu * yi).clamp(0.0, c)).collect() };
    let g = |mu: f64| -> f64 { at(mu).iter().zip(y).map(|(a, yi)| a * yi).sum() };
    let span = z.iter().map(|v| v.abs()).fold(0.0, f64::max) + c + 1.0;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * span {
            break;
        }
    }
    at(0.5 * (lo + hi))
}

/// Minimizes `−Σa + ¼ aᵀQa` with `Q_ij = y_i y_j k_ij` over the SVM dual
/// feasible set by accelerated projected gradient with adaptive restart.
pub fn projected_gradient_dual(kernel: &DMatrix<f64>, y: &[f64], c: f64, iterations: usize) -> (Vec<f64>, f64) {
    let n = y.len();
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * kernel[(i, j)]);
    let lip = 0.5 * q.symmetric_eigenvalues().max().max(1e-12);
    let objective = |a: &[f64]| -> f64 {
        let av = DVector::from_column_slice(a);
        -a.iter().sum::<f64>() + 0.25 * av.dot(&(&q * &av))
    };
    let grad = |a: &[f64]| -> Vec<f64> {
        let av = DVector::from_column_slice(a);
        let qa = &q * av;
        (0..n).map(|i| -1.0 + 0.5 * qa[i]).collect()
    };
    let mut x = project_box_hyperplane(&vec![0.0; n], y, c);
    let mut yk = x.clone();
    let mut tk = 1.0f64;
    let mut fx = objective(&x);
    for _ in 0..iterations {
        let g = grad(&yk);
        let z: Vec<f64> = yk.iter().zip(&g).map(|(a, gi)| a - gi / lip).collect();
        let xn = project_box_hyperplane(&z, y, c);
        let fxn = objective(&xn);
        if fxn > fx {
            // restart momentum
            yk = x.clone();
            tk = 1.0;
            continue;
        }
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * tk * tk).sqrt());
        let beta = (tk - 1.0) / tn;
        yk = xn.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
        let step: f64 = xn.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        x = xn;
        fx = fxn;
        tk = tn;
        if step < 1e-15 * (1.0 + c) {
            break;
        }
    }
    (x, fx)
}
