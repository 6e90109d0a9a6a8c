//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use inertia_core::tda::{BusFeature, MetricForm};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

/// Proximity, density and typicality by direct nested loops over the
/// features, with two-pass statistics for every pair.
pub fn typicality_oracle(f: &[BusFeature<f64>], form: MetricForm) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = f.len();
    let point = |k: usize| -> Vec<f64> { f[k].beta.iter().chain(&f[k].pi).copied().collect() };
    let mut delta = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let (a, b) = (point(i), point(j));
            let m = a.len() as f64;
            let (ma, mb) = (a.iter().sum::<f64>() / m, b.iter().sum::<f64>() / m);
            let mut dot = 0.0;
            let mut na = 0.0;
            let mut nb = 0.0;
            let mut cov = 0.0;
            let mut va = 0.0;
            let mut vb = 0.0;
            for t in 0..a.len() {
                dot += a[t] * b[t];
                na += a[t] * a[t];
                nb += b[t] * b[t];
                cov += (a[t] - ma) * (b[t] - mb);
                va += (a[t] - ma).powi(2);
                vb += (b[t] - mb).powi(2);
            }
            let cos = dot / (na.sqrt() * nb.sqrt());
            let corr = cov / (va.sqrt() * vb.sqrt());
            delta[i][j] = match form {
                MetricForm::Dissimilarity => 2.0 - cos - corr,
                MetricForm::PaperLiteral => cos + corr,
            };
        }
    }
    let q: Vec<f64> = (0..n).map(|k| (0..n).map(|j| delta[k][j].powi(2)).sum()).collect();
    let qs: f64 = q.iter().sum();
    let d: Vec<f64> = q.iter().map(|qk| qs / (2.0 * n as f64 * qk)).collect();
    let ds: f64 = d.iter().sum();
    let tau = d.iter().map(|dk| dk / ds).collect();
    (q, d, tau)
}

/// Electrical power of unit-magnitude sources at the given angles.
pub fn pe_at(y: &DMatrix<Complex64>, delta: &[f64]) -> Vec<f64> {
    let e: Vec<Complex64> = delta.iter().map(|&d| Complex64::from_polar(1.0, d)).collect();
    (0..e.len())
        .map(|i| {
            let mut s = Complex64::new(0.0, 0.0);
            for j in 0..e.len() {
                s += y[(i, j)] * e[j];
            }
            (e[i] * s.conj()).re
        })
        .collect()
}

/// Sampled step response of `(−1/2H)/(s + D/2H)` to a step of `dp` applied
/// at sample 1, from the closed-form solution.
pub fn swing_step(h: f64, d: f64, dp: f64, n: usize, fs: f64) -> (Vec<f64>, Vec<f64>) {
    let a = d / (2.0 * h);
    let mut u = vec![0.0; n];
    let mut y = vec![0.0; n];
    for k in 1..n {
        u[k] = dp;
        let t = (k - 1) as f64 / fs;
        y[k] = -dp / d * (1.0 - (-a * t).exp());
    }
    (u, y)
}

/// White Gaussian noise at the given signal-to-noise ratio.
pub fn add_noise(y: &[f64], snr_db: f64, seed: u64) -> Vec<f64> {
    let power = y.iter().map(|v| v * v).sum::<f64>() / y.len() as f64;
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let dist = Normal::new(0.0, sigma).unwrap();
    y.iter().map(|v| v + dist.sample(&mut rng)).collect()
}
