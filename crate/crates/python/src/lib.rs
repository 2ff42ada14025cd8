//! Python bindings. Images cross the boundary as flat channel-major lists of floats in [0, 1].

use astrodiff::diffusion::ImageSample;
use astrodiff::tensorgrad::Tensor;
use astrodiff::{fusion, metrics, pipeline, turbsim};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: astrodiff::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn image(pixels: Vec<f32>, channels: usize, size: usize) -> PyResult<ImageSample> {
    let t = Tensor::from_vec(&[channels, size, size], pixels).map_err(to_py)?;
    ImageSample::new(t, "python", 0).map_err(to_py)
}

/// Procedural planet image of the given size and seed.
#[pyfunction]
#[pyo3(signature = (size, channels=1, seed=0))]
fn planet(size: usize, channels: usize, seed: u64) -> PyResult<Vec<f32>> {
    let spec = turbsim::SceneSpec::sample(size, channels, seed);
    let img = turbsim::generate_planet_image(&spec).map_err(to_py)?;
    Ok(img.pixels().data().to_vec())
}

/// Applies the turbulence model at strength `cn2`.
#[pyfunction]
#[pyo3(signature = (pixels, channels, size, cn2, seed=0))]
fn degrade(pixels: Vec<f32>, channels: usize, size: usize, cn2: f64, seed: u64) -> PyResult<Vec<f32>> {
    let img = image(pixels, channels, size)?;
    let params = turbsim::TurbulenceParams::from_cn2(cn2, seed).map_err(to_py)?;
    let out = turbsim::degrade(&img, &params).map_err(to_py)?;
    Ok(out.pixels().data().to_vec())
}

#[pyfunction]
fn cn2_bucket(cn2: f64) -> PyResult<String> {
    turbsim::cn2_to_bucket(cn2).map(|b| b.to_string()).map_err(to_py)
}

#[pyfunction]
fn psnr(a: Vec<f32>, b: Vec<f32>) -> PyResult<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(PyValueError::new_err(format!("length mismatch: {} vs {}", a.len(), b.len())));
    }
    Ok(metrics::psnr_slices(&a, &b))
}

/// Returns `(score, class)` from the bundled severity model.
#[pyfunction]
fn severity(pixels: Vec<f32>, channels: usize, size: usize) -> PyResult<(f64, String)> {
    let img = image(pixels, channels, size)?;
    let (s, class, _) = metrics::severity(&img).map_err(to_py)?;
    Ok((s, class.to_string()))
}

#[pyfunction]
fn classify(score: f64) -> String {
    metrics::classify(score).to_string()
}

/// Closed-form Gaussian posterior mean and variance.
#[pyfunction]
fn gaussian_posterior(mu0: Vec<f64>, var0: f64, x: Vec<f64>, var1: f64) -> PyResult<(Vec<f64>, f64)> {
    fusion::gaussian_posterior_oracle(&mu0, var0, &x, var1).map_err(to_py)
}

/// Resolved run configuration as TOML.
#[pyfunction]
#[pyo3(signature = (preset=None, config_text=None, seed=None))]
fn resolve_config(preset: Option<&str>, config_text: Option<&str>, seed: Option<u64>) -> PyResult<String> {
    let preset = preset.map(str::parse::<pipeline::Preset>).transpose().map_err(to_py)?;
    let flags = pipeline::Overrides { seed, ..Default::default() };
    let cfg = pipeline::RunConfig::resolve(preset, config_text, &flags).map_err(to_py)?;
    Ok(cfg.to_toml())
}

#[pymodule]
fn astrodiff_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(planet, m)?)?;
    m.add_function(wrap_pyfunction!(degrade, m)?)?;
    m.add_function(wrap_pyfunction!(cn2_bucket, m)?)?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(severity, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_posterior, m)?)?;
    m.add_function(wrap_pyfunction!(resolve_config, m)?)?;
    Ok(())
}
