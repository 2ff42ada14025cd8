//! PSNR and a BRISQUE-style no-reference severity score.

mod brisque;
mod severity;

use std::io::Write as _;

pub use brisque::{aggd_fit, brisque_features, brisque_features_plane, mscn, AggdParams, BrisqueFeatures, FEATURE_COUNT};
pub use severity::{classify, SeverityClass, SeverityModel, DEGENERATE_SCORE, STRONG_LIMIT, WEAK_LIMIT};

use crate::diffusion::ImageSample;
use crate::error::{Error, Result};
use crate::turbsim::{degrade, generate_planet_image, SceneSpec, TurbulenceParams};

pub const PSNR_CAP: f64 = 100.0;

/// `10 log10(1 / MSE)` for images in `[0, 1]`, capped at 100 dB.
pub fn psnr(a: &ImageSample, b: &ImageSample) -> Result<f64> {
    if a.dims() != b.dims() {
        return Err(Error::ShapeMismatch { op: "psnr", shapes: vec![a.dims().to_vec(), b.dims().to_vec()] });
    }
    Ok(psnr_slices(a.pixels().data(), b.pixels().data()))
}

pub fn psnr_slices(a: &[f32], b: &[f32]) -> f64 {
    let mse = a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
}

/// Severity score, class and degenerate flag from the bundled model.
pub fn severity(image: &ImageSample) -> Result<(f64, SeverityClass, bool)> {
    let f = brisque_features(image)?;
    let (s, flag) = SeverityModel::bundled().score(&f);
    Ok((s, classify(s), flag))
}

#[derive(Clone, Debug, PartialEq)]
pub struct QualityReport {
    pub image: String,
    pub psnr: Option<f64>,
    pub severity: f64,
    pub class: SeverityClass,
    pub degenerate: bool,
    pub features: [f64; FEATURE_COUNT],
}

impl QualityReport {
    pub fn assess(image: &ImageSample, reference: Option<&ImageSample>) -> Result<Self> {
        let f = brisque_features(image)?;
        let (severity, degenerate) = SeverityModel::bundled().score(&f);
        Ok(QualityReport {
            image: image.source_id.clone(),
            psnr: reference.map(|r| psnr(r, image)).transpose()?,
            severity,
            class: classify(severity),
            degenerate,
            features: f.values,
        })
    }

    pub fn csv_header() -> String {
        let mut h = String::from("image,psnr,severity,class,degenerate");
        for i in 0..FEATURE_COUNT {
            h.push_str(&format!(",f{i:02}"));
        }
        h
    }

    pub fn csv_row(&self) -> String {
        let mut r = Vec::new();
        write!(
            r,
            "{},{},{:.6},{},{}",
            self.image,
            self.psnr.map(|p| format!("{p:.6}")).unwrap_or_default(),
            self.severity,
            self.class,
            self.degenerate
        )
        .unwrap();
        for v in &self.features {
            write!(r, ",{v:.6e}").unwrap();
        }
        String::from_utf8(r).unwrap()
    }
}

/// Target severity for a turbulence strength: 10 at the weakest grid value rising linearly in
/// `log10(cn2)` to 100 at the strongest. Clean images target 10.
pub fn severity_target(cn2: Option<f64>) -> f64 {
    let (lo, hi) = (5e-16f64.log10(), 3e-13f64.log10());
    match cn2 {
        None => 10.0,
        Some(c) => 10.0 + 90.0 * ((c.log10() - lo) / (hi - lo)).clamp(0.0, 1.0),
    }
}

/// Corpus used to fit the bundled model.
#[derive(Clone, Debug)]
pub struct CalibrationCorpus {
    pub sizes: Vec<usize>,
    pub scene_seeds: Vec<u64>,
    pub degrade_seeds: Vec<u64>,
    pub cn2_grid: Vec<f64>,
}

impl Default for CalibrationCorpus {
    fn default() -> Self {
        CalibrationCorpus {
            sizes: vec![32, 64],
            scene_seeds: (900_000..900_040).collect(),
            degrade_seeds: vec![1, 2],
            cn2_grid: crate::turbsim::PAPER_CN2_GRID.to_vec(),
        }
    }
}

/// Renders the corpus and fits the linear severity model to [`severity_target`].
pub fn calibrate_severity(corpus: &CalibrationCorpus, ridge: f64) -> Result<SeverityModel> {
    let mut feats = Vec::new();
    let mut targets = Vec::new();
    let mut push = |img: &ImageSample, cn2: Option<f64>| -> Result<()> {
        let f = brisque_features(img)?;
        if !f.any_degenerate() {
            feats.push(f.values);
            targets.push(severity_target(cn2));
        }
        Ok(())
    };
    for &size in &corpus.sizes {
        for &seed in &corpus.scene_seeds {
            let clean = generate_planet_image(&SceneSpec::sample(size, 1, seed))?;
            push(&clean, None)?;
            for &ds in &corpus.degrade_seeds {
                for &cn2 in &corpus.cn2_grid {
                    let d = degrade(&clean, &TurbulenceParams::from_cn2(cn2, crate::rng::derive_seed(seed, "calib", ds))?)?;
                    push(&d, Some(cn2))?;
                }
            }
        }
    }
    SeverityModel::fit(&feats, &targets, ridge, "1")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensorgrad::Tensor;

    fn img(v: Vec<f32>) -> ImageSample {
        ImageSample::new(Tensor::from_vec(&[1, 32, 32], v).unwrap(), "i", 0).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = img((0..1024).map(|i| (i % 7) as f32 / 10.0).collect());
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        let b = img(a.pixels().data().iter().map(|v| v + 0.1).collect());
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
        assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let c = ImageSample::new(Tensor::zeros(&[1, 64, 64]), "c", 0).unwrap();
        assert!(psnr(&a, &c).is_err());
    }

    #[test]
    fn targets() {
        assert_eq!(severity_target(None), 10.0);
        assert!((severity_target(Some(3e-13)) - 100.0).abs() < 1e-9);
        assert!((severity_target(Some(5e-16)) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn report_row_has_all_columns() {
        let a = img((0..1024).map(|i| ((i * 37) % 101) as f32 / 100.0).collect());
        let r = QualityReport::assess(&a, Some(&a)).unwrap();
        assert_eq!(r.csv_row().split(',').count(), QualityReport::csv_header().split(',').count());
        assert_eq!(r.psnr, Some(100.0));
    }
}
