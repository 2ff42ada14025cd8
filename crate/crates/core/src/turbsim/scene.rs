use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::noise::fbm;
use crate::diffusion::{validate_image_shape, ImageSample};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensorgrad::Tensor;

const SUPERSAMPLE: usize = 4;
const RING_INNER: f64 = 1.3;
const RING_OUTER: f64 = 1.75;

/// Parameters of one synthetic planet scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub size: usize,
    pub channels: usize,
    pub radius_fraction: f64,
    pub limb_exponent: f64,
    pub octaves: u32,
    pub band_frequency: f64,
    pub albedo: f64,
    pub background: f64,
    pub ring: bool,
    pub seed: u64,
}

impl SceneSpec {
    /// Draws a random scene from the generator's default distribution.
    pub fn sample(size: usize, channels: usize, seed: u64) -> Self {
        let mut r = rng::substream(seed, "scene", 0);
        let radius_fraction = r.random_range(0.22..0.40);
        SceneSpec {
            size,
            channels,
            radius_fraction,
            limb_exponent: r.random_range(0.3..0.9),
            octaves: r.random_range(3..=5),
            band_frequency: r.random_range(3.0..9.0),
            albedo: r.random_range(0.7..0.95),
            background: r.random_range(0.0..0.04),
            ring: radius_fraction < 0.28 && r.random_bool(0.4),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_image_shape(self.channels, self.size, self.size)?;
        let ok = self.radius_fraction > 0.0
            && self.radius_fraction <= 0.5
            && (0.0..=0.05).contains(&self.background)
            && self.limb_exponent >= 0.0
            && self.albedo > 0.0
            && self.albedo <= 1.0;
        if !ok {
            return Err(Error::invalid(format!("invalid scene spec {self:?}")));
        }
        Ok(())
    }

    pub fn radius_px(&self) -> f64 {
        self.radius_fraction * self.size as f64
    }
}

/// Planet brightness at disc-normalised coordinates, `None` outside the disc.
fn disc_intensity(spec: &SceneSpec, u: f64, v: f64) -> Option<f64> {
    let d2 = u * u + v * v;
    if d2 >= 1.0 {
        return None;
    }
    let mu = (1.0 - d2).sqrt();
    let lat = v.asin();
    let lon = u.atan2(mu);
    let warp = fbm(lon * 1.5 + 7.0, lat * 3.0, spec.octaves, spec.seed);
    let detail = fbm(lon * 4.0, lat * 6.0 + 11.0, spec.octaves, spec.seed ^ 0xA5A5);
    let band = (lat * spec.band_frequency + 2.5 * warp).sin();
    let tex = 0.5 + 0.5 * (0.5 + 0.3 * band + 0.4 * (detail - 0.5)).clamp(0.0, 1.0);
    let limb = 0.3 + 0.7 * mu.powf(spec.limb_exponent);
    Some(spec.albedo * limb * tex)
}

fn ring_intensity(spec: &SceneSpec, u: f64, v: f64) -> f64 {
    if !spec.ring {
        return 0.0;
    }
    let rr = (u * u + (v / 0.35).powi(2)).sqrt();
    if (RING_INNER..RING_OUTER).contains(&rr) {
        0.35 * spec.albedo * (1.0 - 0.3 * ((rr - RING_INNER) / (RING_OUTER - RING_INNER)))
    } else {
        0.0
    }
}

fn tint(spec: &SceneSpec) -> [f64; 3] {
    let mut r = rng::substream(spec.seed, "tint", 0);
    [1.0, r.random_range(0.8..0.95), r.random_range(0.6..0.85)]
}

/// Renders a shaded, banded, limb-darkened disc on a near-black background.
/// Each pixel averages a 4x4 grid of sub-samples, which anti-aliases the limb.
pub fn generate_planet_image(spec: &SceneSpec) -> Result<ImageSample> {
    spec.validate()?;
    let n = spec.size;
    let c = n as f64 / 2.0;
    let r = spec.radius_px();
    let mut lum = vec![0.0f64; n * n];
    for py in 0..n {
        for px in 0..n {
            let mut acc = 0.0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64;
                    let y = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64;
                    let (u, v) = ((x - c) / r, (y - c) / r);
                    acc += match disc_intensity(spec, u, v) {
                        Some(i) => i,
                        None => ring_intensity(spec, u, v),
                    };
                }
            }
            lum[py * n + px] = acc / (SUPERSAMPLE * SUPERSAMPLE) as f64;
        }
    }
    let tints = if spec.channels == 1 { [1.0; 3] } else { tint(spec) };
    let mut data = Vec::with_capacity(spec.channels * n * n);
    for &t in tints.iter().take(spec.channels) {
        data.extend(lum.iter().map(|&l| (spec.background + (1.0 - spec.background) * l * t).clamp(0.0, 1.0) as f32));
    }
    ImageSample::new(Tensor::from_vec(&[spec.channels, n, n], data)?, format!("planet-{}", spec.seed), spec.seed)
}

/// Fraction of each pixel covered by the disc, from the same sub-sample grid as the renderer.
pub fn disc_coverage(spec: &SceneSpec) -> Vec<f64> {
    let n = spec.size;
    let (c, r) = (n as f64 / 2.0, spec.radius_px());
    let mut out = vec![0.0; n * n];
    for py in 0..n {
        for px in 0..n {
            let mut hits = 0;
            for sy in 0..SUPERSAMPLE {
                for sx in 0..SUPERSAMPLE {
                    let x = px as f64 + (sx as f64 + 0.5) / SUPERSAMPLE as f64 - c;
                    let y = py as f64 + (sy as f64 + 0.5) / SUPERSAMPLE as f64 - c;
                    hits += usize::from(x * x + y * y < r * r);
                }
            }
            out[py * n + px] = hits as f64 / (SUPERSAMPLE * SUPERSAMPLE) as f64;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plain(seed: u64) -> SceneSpec {
        SceneSpec { ring: false, ..SceneSpec::sample(64, 1, seed) }
    }

    #[test]
    fn dark_background_bright_disc() {
        for seed in 0..5 {
            let spec = plain(seed);
            let img = generate_planet_image(&spec).unwrap();
            let cov = disc_coverage(&spec);
            let d = img.pixels().data();
            let (mut bg, mut nb, mut disc, mut nd) = (0.0, 0, 0.0, 0);
            for (v, c) in d.iter().zip(&cov) {
                if *c == 0.0 {
                    bg += *v as f64;
                    nb += 1;
                } else if *c == 1.0 {
                    disc += *v as f64;
                    nd += 1;
                }
            }
            assert!(bg / (nb as f64) < 0.05);
            assert!(disc / (nd as f64) > 0.2);
        }
    }

    #[test]
    fn deterministic_and_rgb() {
        let spec = SceneSpec::sample(32, 3, 4);
        assert_eq!(generate_planet_image(&spec).unwrap(), generate_planet_image(&spec).unwrap());
        assert_eq!(generate_planet_image(&spec).unwrap().channels(), 3);
    }

    #[test]
    fn disc_area_matches_radius() {
        for seed in 0..5 {
            let spec = plain(seed);
            let img = generate_planet_image(&spec).unwrap();
            // Count pixels brighter than halfway between background and the dimmest limb value.
            let dim_edge = spec.albedo * 0.3 * 0.5;
            let thr = (spec.background + 0.5 * (1.0 - spec.background) * dim_edge) as f32;
            let count = img.pixels().data().iter().filter(|&&v| v > thr).count() as f64;
            let expected = std::f64::consts::PI * spec.radius_px().powi(2);
            assert!((count / expected - 1.0).abs() < 0.05, "seed {seed}: {count} vs {expected}");
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let s = SceneSpec { background: 0.2, ..plain(0) };
        assert!(generate_planet_image(&s).is_err());
        let s = SceneSpec { radius_fraction: 0.6, ..plain(0) };
        assert!(generate_planet_image(&s).is_err());
    }
}
