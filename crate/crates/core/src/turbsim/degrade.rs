use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::ImageSample;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensorgrad::Tensor;

pub const CN2_MIN: f64 = 1e-17;
pub const CN2_MAX: f64 = 1e-12;

/// The nine turbulence strengths of the evaluation grid, ascending.
pub const PAPER_CN2_GRID: [f64; 9] = [5e-16, 5e-15, 7e-15, 8e-15, 1e-14, 5e-14, 1e-13, 2e-13, 3e-13];

/// Degradation strengths are specified for a 64-pixel image and scale with image size.
pub const REFERENCE_SIZE: f64 = 64.0;
/// Tilt standard deviation (reference pixels) per unit `cn2^(3/5)`.
pub const TILT_COEFF: f64 = 4.0e7;
/// Blur standard deviation (reference pixels) per unit `cn2^(3/5)`.
pub const BLUR_COEFF: f64 = 1.0e8;
/// Correlation length of the tilt field in reference pixels.
pub const TILT_CORRELATION: f64 = 6.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Low,
    Medium,
    High,
}

impl Bucket {
    pub const ALL: [Bucket; 3] = [Bucket::Low, Bucket::Medium, Bucket::High];
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Bucket::Low => "low",
            Bucket::Medium => "medium",
            Bucket::High => "high",
        })
    }
}

impl FromStr for Bucket {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(Bucket::Low),
            "medium" => Ok(Bucket::Medium),
            "high" => Ok(Bucket::High),
            _ => Err(Error::invalid(format!("unknown turbulence bucket '{s}'"))),
        }
    }
}

fn check_cn2(cn2: f64) -> Result<()> {
    if !(CN2_MIN..=CN2_MAX).contains(&cn2) {
        return Err(Error::invalid(format!("cn2 {cn2:e} outside [{CN2_MIN:e}, {CN2_MAX:e}]")));
    }
    Ok(())
}

/// Threshold bucketing by turbulence strength alone.
pub fn cn2_to_bucket(cn2: f64) -> Result<Bucket> {
    check_cn2(cn2)?;
    Ok(if cn2 < 2e-14 {
        Bucket::Low
    } else if cn2 < 1e-13 {
        Bucket::Medium
    } else {
        Bucket::High
    })
}

/// Degradation strengths in reference pixels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurbulenceParams {
    pub cn2: f64,
    pub tilt_sigma: f64,
    pub blur_radius: f64,
    pub correlation_length: f64,
    pub seed: u64,
}

impl TurbulenceParams {
    /// Power-law maps `tilt = a * cn2^(3/5)`, `blur = b * cn2^(3/5)`.
    pub fn from_cn2(cn2: f64, seed: u64) -> Result<Self> {
        check_cn2(cn2)?;
        let s = cn2.powf(0.6);
        Ok(TurbulenceParams {
            cn2,
            tilt_sigma: TILT_COEFF * s,
            blur_radius: BLUR_COEFF * s,
            correlation_length: TILT_CORRELATION,
            seed,
        })
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with replicated borders. Returns the input for `sigma <= 1e-3`.
pub fn gaussian_blur(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 1e-3 {
        return plane.to_vec();
    }
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k.iter().enumerate().map(|(j, kv)| kv * plane[y * w + clamp(x as isize + j as isize - r, w)]).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k.iter().enumerate().map(|(j, kv)| kv * tmp[clamp(y as isize + j as isize - r, h) * w + x]).sum();
        }
    }
    out
}

/// Smooth random field with unit per-pixel standard deviation (away from borders).
fn correlated_field(h: usize, w: usize, corr: f64, rng: &mut rng::Rng) -> Vec<f64> {
    let white: Vec<f64> = (0..h * w).map(|_| StandardNormal.sample(rng)).collect();
    if corr <= 1e-3 {
        return white;
    }
    let k = gaussian_kernel(corr);
    let gain = k.iter().map(|v| v * v).sum::<f64>();
    // 2-D separable smoothing scales the variance by gain^2.
    gaussian_blur(&white, h, w, corr).into_iter().map(|v| v / gain).collect()
}

fn bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bot * fy
}

/// Tilt warp followed by Gaussian blur, clamped to `[0, 1]`.
///
/// The displacement field is shared by all channels. Strengths are given in reference pixels
/// and rescaled to the image size.
pub fn degrade(image: &ImageSample, params: &TurbulenceParams) -> Result<ImageSample> {
    check_cn2(params.cn2)?;
    let [c, h, w] = image.dims();
    let scale = h.min(w) as f64 / REFERENCE_SIZE;
    let (tilt, blur, corr) = (params.tilt_sigma * scale, params.blur_radius * scale, params.correlation_length * scale);
    let mut r = rng::substream(params.seed, "tilt", 0);
    let dx = correlated_field(h, w, corr, &mut r);
    let dy = correlated_field(h, w, corr, &mut r);
    let src = image.pixels().data();
    let mut out = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        let plane: Vec<f64> = src[ch * h * w..(ch + 1) * h * w].iter().map(|&v| v as f64).collect();
        let mut warped = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                warped[i] = bilinear(&plane, h, w, y as f64 + tilt * dy[i], x as f64 + tilt * dx[i]);
            }
        }
        out.extend(gaussian_blur(&warped, h, w, blur).into_iter().map(|v| v.clamp(0.0, 1.0) as f32));
    }
    ImageSample::new(Tensor::from_vec(&[c, h, w], out)?, image.source_id.clone(), params.seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::turbsim::{generate_planet_image, SceneSpec};

    fn mad(a: &ImageSample, b: &ImageSample) -> f64 {
        a.pixels().data().iter().zip(b.pixels().data()).map(|(x, y)| (x - y).abs() as f64).sum::<f64>()
            / a.pixels().numel() as f64
    }

    fn planet() -> ImageSample {
        generate_planet_image(&SceneSpec::sample(64, 1, 3)).unwrap()
    }

    #[test]
    fn buckets() {
        assert_eq!(cn2_to_bucket(5e-16).unwrap(), Bucket::Low);
        assert_eq!(cn2_to_bucket(3e-13).unwrap(), Bucket::High);
        assert_eq!(cn2_to_bucket(5e-14).unwrap(), Bucket::Medium);
        assert_eq!(cn2_to_bucket(2e-14).unwrap(), Bucket::Medium);
        assert_eq!(cn2_to_bucket(1e-13).unwrap(), Bucket::High);
        assert!(cn2_to_bucket(1e-11).is_err());
        assert_eq!("Medium".parse::<Bucket>().unwrap(), Bucket::Medium);
    }

    #[test]
    fn strengths_increase_with_cn2() {
        let a = TurbulenceParams::from_cn2(1e-15, 0).unwrap();
        let b = TurbulenceParams::from_cn2(1e-14, 0).unwrap();
        assert!(b.tilt_sigma > a.tilt_sigma && b.blur_radius > a.blur_radius);
        assert!(TurbulenceParams::from_cn2(0.0, 0).is_err());
    }

    #[test]
    fn floor_is_nearly_identity() {
        let img = planet();
        let d = degrade(&img, &TurbulenceParams::from_cn2(CN2_MIN, 1).unwrap()).unwrap();
        let linf = img.pixels().data().iter().zip(d.pixels().data()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(linf < 0.02, "{linf}");
    }

    #[test]
    fn severity_is_monotone_on_grid() {
        let img = planet();
        let mads: Vec<f64> = PAPER_CN2_GRID
            .iter()
            .map(|&c| mad(&img, &degrade(&img, &TurbulenceParams::from_cn2(c, 5).unwrap()).unwrap()))
            .collect();
        assert!(mads.windows(2).all(|w| w[1] >= w[0]), "{mads:?}");
        assert!(mads[8] > mads[0]);
    }

    #[test]
    fn constant_image_survives_blur() {
        let img = ImageSample::new(Tensor::full(&[1, 32, 32], 0.4), "c", 0).unwrap();
        let d = degrade(&img, &TurbulenceParams::from_cn2(3e-13, 2).unwrap()).unwrap();
        assert!(d.pixels().data().iter().all(|v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn blur_reduces_variance_and_laplacian_energy() {
        let img = planet();
        let p: Vec<f64> = img.luma();
        let b = gaussian_blur(&p, 64, 64, 1.5);
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>()
        };
        let lap = |v: &[f64]| {
            let mut e = 0.0;
            for y in 1..63 {
                for x in 1..63 {
                    let i = y * 64 + x;
                    e += (4.0 * v[i] - v[i - 1] - v[i + 1] - v[i - 64] - v[i + 64]).powi(2);
                }
            }
            e
        };
        assert!(var(&b) <= var(&p));
        assert!(lap(&b) <= lap(&p));
    }

    #[test]
    fn degraded_background_stays_dark() {
        let spec = SceneSpec { ring: false, ..SceneSpec::sample(64, 1, 8) };
        let img = generate_planet_image(&spec).unwrap();
        let d = degrade(&img, &TurbulenceParams::from_cn2(3e-13, 2).unwrap()).unwrap();
        let cov = crate::turbsim::disc_coverage(&spec);
        let far: Vec<f32> = d
            .pixels()
            .data()
            .iter()
            .zip(&cov)
            .enumerate()
            .filter(|(i, (_, c))| {
                let (y, x) = ((i / 64) as f64 - 32.0, (i % 64) as f64 - 32.0);
                **c == 0.0 && (y * y + x * x).sqrt() > spec.radius_px() + 3.0
            })
            .map(|(_, (v, _))| *v)
            .collect();
        assert!(far.iter().sum::<f32>() / (far.len() as f32) < 0.1);
    }
}
