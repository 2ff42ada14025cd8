use statrs::function::gamma::gamma;

use crate::diffusion::ImageSample;
use crate::error::{Error, Result};

pub const FEATURE_COUNT: usize = 36;
const WINDOW: usize = 7;
const WINDOW_SIGMA: f64 = 7.0 / 6.0;
const ALPHA_RANGE: (f64, f64) = (0.1, 10.0);
const MIN_SAMPLES: usize = 100;

/// Asymmetric generalized Gaussian fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggdParams {
    pub alpha: f64,
    pub sigma_left: f64,
    pub sigma_right: f64,
    pub mean_offset: f64,
}

fn window() -> [f64; WINDOW * WINDOW] {
    let r = (WINDOW / 2) as f64;
    let mut w = [0.0; WINDOW * WINDOW];
    for y in 0..WINDOW {
        for x in 0..WINDOW {
            let (dy, dx) = (y as f64 - r, x as f64 - r);
            w[y * WINDOW + x] = (-(dx * dx + dy * dy) / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp();
        }
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Mean-subtracted contrast-normalised coefficients of an 8-bit-scaled plane.
///
/// `plane` holds values in `[0, 1]`; they are scaled to `[0, 255]` so the stabilising
/// constant of 1 has its usual meaning. Borders replicate.
pub fn mscn(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = window();
    let r = (WINDOW / 2) as isize;
    let px = |y: isize, x: isize| 255.0 * plane[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let (mut mu, mut m2) = (0.0, 0.0);
            for ky in 0..WINDOW as isize {
                for kx in 0..WINDOW as isize {
                    let v = px(y + ky - r, x + kx - r);
                    let kv = k[(ky * WINDOW as isize + kx) as usize];
                    mu += kv * v;
                    m2 += kv * v * v;
                }
            }
            let sigma = (m2 - mu * mu).abs().sqrt();
            let d = px(y, x) - mu;
            // Rounding residue of a locally flat patch is treated as exactly flat.
            let d = if d.abs() < 1e-9 * 255.0 { 0.0 } else { d };
            out.push(d / (sigma + 1.0));
        }
    }
    out
}

/// The generalized Gaussian ratio `Gamma(2/a)^2 / (Gamma(1/a) Gamma(3/a))`, increasing in `a`.
fn ratio(a: f64) -> f64 {
    gamma(2.0 / a).powi(2) / (gamma(1.0 / a) * gamma(3.0 / a))
}

/// Moment-matching fit; `alpha` solved by bisection on `[0.1, 10]` to 1e-6.
pub fn aggd_fit(samples: &[f64]) -> Result<AggdParams> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::invalid(format!("aggd_fit needs at least {MIN_SAMPLES} samples, got {}", samples.len())));
    }
    let (mut sl, mut nl, mut sr, mut nr, mut abs, mut sq) = (0.0, 0usize, 0.0, 0usize, 0.0, 0.0);
    for &x in samples {
        if x < 0.0 {
            sl += x * x;
            nl += 1;
        } else if x > 0.0 {
            sr += x * x;
            nr += 1;
        }
        abs += x.abs();
        sq += x * x;
    }
    if nl == 0 || nr == 0 || sq == 0.0 {
        return Err(Error::Degenerate(format!("aggd_fit: {nl} negative / {nr} positive non-zero samples")));
    }
    let n = samples.len() as f64;
    let (sigma_left, sigma_right) = ((sl / nl as f64).sqrt(), (sr / nr as f64).sqrt());
    let g = sigma_left / sigma_right;
    let rhat = (abs / n).powi(2) / (sq / n);
    let target = rhat * (g.powi(3) + 1.0) * (g + 1.0) / (g * g + 1.0).powi(2);
    let (mut lo, mut hi) = ALPHA_RANGE;
    if target <= ratio(lo) {
        hi = lo;
    } else if target >= ratio(hi) {
        lo = hi;
    }
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if ratio(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let alpha = 0.5 * (lo + hi);
    let c = (gamma(1.0 / alpha) / gamma(3.0 / alpha)).sqrt();
    let mean_offset = (sigma_right - sigma_left) * c * gamma(2.0 / alpha) / gamma(1.0 / alpha);
    Ok(AggdParams { alpha, sigma_left, sigma_right, mean_offset })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BrisqueFeatures {
    pub values: [f64; FEATURE_COUNT],
    /// Entries whose underlying fit was degenerate (reported as 0).
    pub degenerate: [bool; FEATURE_COUNT],
}

impl BrisqueFeatures {
    pub fn any_degenerate(&self) -> bool {
        self.degenerate.iter().any(|&d| d)
    }
}

/// Horizontal, vertical, main-diagonal and anti-diagonal neighbour products.
fn pair_products(m: &[f64], h: usize, w: usize) -> [Vec<f64>; 4] {
    let at = |y: usize, x: usize| m[y * w + x];
    let mut hp = Vec::with_capacity(h * (w - 1));
    let mut vp = Vec::with_capacity((h - 1) * w);
    let mut d1 = Vec::with_capacity((h - 1) * (w - 1));
    let mut d2 = Vec::with_capacity((h - 1) * (w - 1));
    for y in 0..h {
        for x in 0..w {
            if x + 1 < w {
                hp.push(at(y, x) * at(y, x + 1));
            }
            if y + 1 < h {
                vp.push(at(y, x) * at(y + 1, x));
                if x + 1 < w {
                    d1.push(at(y, x) * at(y + 1, x + 1));
                }
                if x > 0 {
                    d2.push(at(y, x) * at(y + 1, x - 1));
                }
            }
        }
    }
    [hp, vp, d1, d2]
}

fn scale_features(plane: &[f64], h: usize, w: usize, out: &mut [f64], flags: &mut [bool]) -> Result<()> {
    let m = mscn(plane, h, w);
    match aggd_fit(&m) {
        Ok(p) => {
            out[0] = p.alpha;
            out[1] = 0.5 * (p.sigma_left.powi(2) + p.sigma_right.powi(2));
        }
        Err(Error::Degenerate(_)) => flags[..2].fill(true),
        Err(e) => return Err(e),
    }
    for (i, prod) in pair_products(&m, h, w).iter().enumerate() {
        let o = 2 + 4 * i;
        match aggd_fit(prod) {
            Ok(p) => {
                out[o] = p.alpha;
                out[o + 1] = p.mean_offset;
                out[o + 2] = p.sigma_left.powi(2);
                out[o + 3] = p.sigma_right.powi(2);
            }
            Err(Error::Degenerate(_)) => flags[o..o + 4].fill(true),
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn half(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let (h2, w2) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(h2 * w2);
    for y in 0..h2 {
        for x in 0..w2 {
            let i = 2 * y * w + 2 * x;
            out.push(0.25 * (plane[i] + plane[i + 1] + plane[i + w] + plane[i + w + 1]));
        }
    }
    out
}

/// 18 features at full resolution followed by 18 at half resolution (2x2 mean).
/// Per scale: MSCN shape and variance, then shape, mean, left and right variance of each
/// of the H, V, D1, D2 neighbour products.
pub fn brisque_features_plane(plane: &[f64], h: usize, w: usize) -> Result<BrisqueFeatures> {
    if h < 32 || w < 32 || plane.len() != h * w {
        return Err(Error::invalid(format!("brisque needs a plane of at least 32x32, got {h}x{w}")));
    }
    let mut values = [0.0; FEATURE_COUNT];
    let mut degenerate = [false; FEATURE_COUNT];
    scale_features(plane, h, w, &mut values[..18], &mut degenerate[..18])?;
    let small = half(plane, h, w);
    scale_features(&small, h / 2, w / 2, &mut values[18..], &mut degenerate[18..])?;
    Ok(BrisqueFeatures { values, degenerate })
}

pub fn brisque_features(image: &ImageSample) -> Result<BrisqueFeatures> {
    brisque_features_plane(&image.luma(), image.height(), image.width())
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Exp, StandardNormal};

    use super::*;
    use crate::rng::Rng;
    use crate::turbsim::{generate_planet_image, SceneSpec};

    #[test]
    fn gaussian_and_laplacian_shapes() {
        let mut r = Rng::seed_from_u64(1);
        let g: Vec<f64> = (0..100_000).map(|_| StandardNormal.sample(&mut r)).collect();
        let p = aggd_fit(&g).unwrap();
        assert!((p.alpha - 2.0).abs() < 0.15, "{p:?}");
        assert!((p.sigma_left / p.sigma_right - 1.0).abs() < 0.1);
        let e = Exp::new(1.0).unwrap();
        let l: Vec<f64> = (0..100_000)
            .map(|i| if i % 2 == 0 { e.sample(&mut r) } else { -e.sample(&mut r) })
            .collect();
        assert!((aggd_fit(&l).unwrap().alpha - 1.0).abs() < 0.15);
    }

    #[test]
    fn mirroring_swaps_scales() {
        let mut r = Rng::seed_from_u64(2);
        let s: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut r)).map(|v: f64| if v > 0.0 { 2.0 * v } else { v }).collect();
        let m: Vec<f64> = s.iter().map(|v| -v).collect();
        let (a, b) = (aggd_fit(&s).unwrap(), aggd_fit(&m).unwrap());
        assert_eq!(a.sigma_left, b.sigma_right);
        assert_eq!(a.sigma_right, b.sigma_left);
    }

    #[test]
    fn degenerate_and_small_inputs() {
        assert!(matches!(aggd_fit(&[0.0; 200]), Err(Error::Degenerate(_))));
        assert!(aggd_fit(&[1.0; 10]).is_err());
        let f = brisque_features_plane(&[0.5; 32 * 32], 32, 32).unwrap();
        assert!(f.degenerate.iter().all(|&d| d));
        assert!(brisque_features_plane(&[0.5; 16 * 16], 16, 16).is_err());
    }

    #[test]
    fn mscn_of_constant_is_zero_and_planet_mean_small() {
        assert!(mscn(&[0.3; 64], 8, 8).iter().all(|&v| v == 0.0));
        for seed in 0..5 {
            let img = generate_planet_image(&SceneSpec::sample(64, 1, seed)).unwrap();
            let m = mscn(&img.luma(), 64, 64);
            let mean = m.iter().sum::<f64>() / m.len() as f64;
            assert!(mean.abs() < 0.05, "seed {seed}: {mean}");
        }
    }

    #[test]
    fn rotation_swaps_directional_features() {
        let img = generate_planet_image(&SceneSpec::sample(64, 1, 11)).unwrap();
        let p = img.luma();
        let n = 64;
        let rot: Vec<f64> = (0..n * n).map(|i| p[(n - 1 - i % n) * n + i / n]).collect();
        let (a, b) = (brisque_features_plane(&p, n, n).unwrap(), brisque_features_plane(&rot, n, n).unwrap());
        let close = |x: f64, y: f64, tol: f64| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1e-12);
        for s in [0, 18] {
            for i in 0..2 {
                assert!(close(a.values[s + i], b.values[s + i], 0.02), "mscn feature {}", s + i);
            }
            for (pa, pb) in [(0, 1), (1, 0), (2, 3), (3, 2)] {
                for j in 0..4 {
                    let (x, y) = (a.values[s + 2 + 4 * pa + j], b.values[s + 2 + 4 * pb + j]);
                    let tol = if j == 1 { 0.05 * a.values[s + 2 + 4 * pa + 2].sqrt() } else { 0.0 };
                    assert!(close(x, y, 0.05) || (x - y).abs() <= tol, "product {pa} feature {j}: {x} vs {y}");
                }
            }
        }
    }
}
