//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::FRAC_PI_2;

/// Cumulative signal fraction of the offset-cosine schedule, recomputed from its definition.
pub fn cosine_alpha_bar(steps: usize, t: usize) -> f64 {
    let f = |u: f64| ((u / steps as f64 + 0.008) / 1.008 * FRAC_PI_2).cos().powi(2);
    (1..=t).map(|k| 1.0 - (1.0 - f(k as f64) / f(k as f64 - 1.0)).clamp(0.0, 0.999)).product()
}

/// Posterior of a `N(mu0, var0)` prior and `N(x, var1)` likelihood, one coordinate.
pub fn gaussian_product(mu0: f64, var0: f64, x: f64, var1: f64) -> (f64, f64) {
    let var = var0 * var1 / (var0 + var1);
    (var * (mu0 / var0 + x / var1), var)
}

/// Equal-weight isotropic mixture in two dimensions.
pub struct Mixture {
    pub means: Vec<[f64; 2]>,
    pub std: f64,
}

impl Mixture {
    /// Score of the mixture after forward noising with signal fraction `ab`.
    pub fn noised_score(&self, p: [f64; 2], ab: f64) -> [f64; 2] {
        let var = ab * self.std * self.std + (1.0 - ab);
        let logs: Vec<f64> = self
            .means
            .iter()
            .map(|m| {
                let d = [p[0] - ab.sqrt() * m[0], p[1] - ab.sqrt() * m[1]];
                -(d[0] * d[0] + d[1] * d[1]) / (2.0 * var)
            })
            .collect();
        let top = logs.iter().cloned().fold(f64::MIN, f64::max);
        let w: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let z: f64 = w.iter().sum();
        let mut s = [0.0; 2];
        for (m, wk) in self.means.iter().zip(&w) {
            for a in 0..2 {
                s[a] -= wk / z * (p[a] - ab.sqrt() * m[a]) / var;
            }
        }
        s
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = s.len();
    if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) }
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean squared error between two images on the 0..1 scale, in dB against a peak of 1.
pub fn psnr_db(a: &[f32], b: &[f32]) -> f64 {
    let mse = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len() as f64;
    10.0 * (1.0 / mse).log10()
}
