//! Conditional restoration branch: a noise predictor that also sees the degraded image.

use rand::Rng as _;

use crate::diffusion::{
    ancestral_chain, eps_to_score, persist, train_eps_model, DenoiserModel, ImageSample, ModelSpec, TrainConfig,
    TrainLogRow, TrainOutputs,
};
use crate::error::{Error, Result};
use crate::nn::NoisePredictor;
use crate::rng;
use crate::tensorgrad::Tensor;
use crate::turbsim::{cn2_to_bucket, Bucket};

/// A clean image, its degraded counterpart and the turbulence strength that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedSample {
    pub clean: ImageSample,
    pub degraded: ImageSample,
    pub cn2: f64,
    pub bucket: Bucket,
}

impl PairedSample {
    pub fn new(clean: ImageSample, degraded: ImageSample, cn2: f64) -> Result<Self> {
        if clean.dims() != degraded.dims() {
            return Err(Error::ShapeMismatch {
                op: "PairedSample",
                shapes: vec![clean.dims().to_vec(), degraded.dims().to_vec()],
            });
        }
        if !(cn2 > 0.0 && cn2.is_finite()) {
            return Err(Error::invalid(format!("cn2 must be positive, got {cn2}")));
        }
        let bucket = cn2_to_bucket(cn2)?;
        Ok(PairedSample { clean, degraded, cn2, bucket })
    }
}

/// Noise predictor over `concat(y_t, x)`: `2C` input channels, `C` output channels.
#[derive(Clone, Debug)]
pub struct ConditionalDenoiser {
    pub inner: DenoiserModel,
}

impl ConditionalDenoiser {
    pub fn untrained(spec: &ModelSpec, channels: usize, seed: u64) -> Result<Self> {
        Ok(ConditionalDenoiser { inner: DenoiserModel::untrained(spec, 2 * channels, channels, seed)? })
    }

    pub fn from_model(inner: DenoiserModel) -> Result<Self> {
        let (i, o) = (inner.net.in_channels(), inner.net.out_channels());
        if i != 2 * o {
            return Err(Error::invalid(format!("conditional model needs in = 2*out channels, got {i} -> {o}")));
        }
        Ok(ConditionalDenoiser { inner })
    }

    pub fn channels(&self) -> usize {
        self.inner.net.out_channels()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.inner.save(path, "restore")
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (inner, branch) = DenoiserModel::load(path)?;
        if branch != "restore" {
            return Err(Error::Checkpoint(format!("{} holds a '{branch}' model, expected 'restore'", path.display())));
        }
        Self::from_model(inner)
    }

    /// eps prediction for `y_t [N, C, H, W]` conditioned on `x [N, C, H, W]`.
    pub fn predict_eps(&self, y_t: &Tensor, x: &Tensor, ts: &[usize]) -> Result<Tensor> {
        if y_t.shape() != x.shape() {
            return Err(Error::ShapeMismatch { op: "predict_eps", shapes: vec![y_t.shape().to_vec(), x.shape().to_vec()] });
        }
        self.inner.predict_eps(&y_t.concat_channels(x)?, ts)
    }
}

pub fn train_restoration(
    pairs: &[PairedSample],
    spec: &ModelSpec,
    config: &TrainConfig,
    outputs: &TrainOutputs,
    on_step: impl FnMut(&TrainLogRow, &crate::nn::Network) -> Result<()>,
) -> Result<(ConditionalDenoiser, Vec<TrainLogRow>)> {
    let first = pairs.first().ok_or_else(|| Error::invalid("train_restoration: empty pair set"))?;
    let dims = first.clean.dims();
    if let Some(bad) = pairs.iter().find(|p| p.clean.dims() != dims || p.degraded.dims() != dims) {
        return Err(Error::ShapeMismatch { op: "train_restoration", shapes: vec![dims.to_vec(), bad.clean.dims().to_vec()] });
    }
    let mut model = ConditionalDenoiser::untrained(spec, dims[0], config.seed)?;
    let data: Vec<(Tensor, Tensor)> = pairs.iter().map(|p| (p.clean.to_model(), p.degraded.to_model())).collect();
    let schedule = model.inner.schedule.clone();
    let log = train_eps_model(
        &mut model.inner.net,
        &schedule,
        config,
        |rng, b| {
            let (mut clean, mut cond) = (Vec::with_capacity(b), Vec::with_capacity(b));
            for _ in 0..b {
                let (c, d) = &data[rng.random_range(0..data.len())];
                clean.push(c.clone());
                cond.push(d.clone());
            }
            Ok((Tensor::stack(&clean)?, Some(Tensor::stack(&cond)?)))
        },
        on_step,
    )?;
    persist(&model.inner, "restore", &log, outputs)?;
    Ok((model, log))
}

/// Restoration with the conditional branch alone: a full conditional ancestral chain.
pub fn restore_one_branch(x: &ImageSample, model: &ConditionalDenoiser, seed: u64) -> Result<ImageSample> {
    restore_batch(std::slice::from_ref(x), model, &[seed]).map(|mut v| v.remove(0))
}

/// Batched form of [`restore_one_branch`]; item `i` uses `seeds[i]` and matches the single-image result.
pub fn restore_batch(xs: &[ImageSample], model: &ConditionalDenoiser, seeds: &[u64]) -> Result<Vec<ImageSample>> {
    let first = xs.first().ok_or_else(|| Error::invalid("restore: no input images"))?;
    let dims = first.dims();
    if seeds.len() != xs.len() {
        return Err(Error::invalid(format!("{} seeds for {} images", seeds.len(), xs.len())));
    }
    if dims[0] != model.channels() {
        return Err(Error::ShapeMismatch { op: "restore", shapes: vec![dims.to_vec(), vec![model.channels()]] });
    }
    if let Some(bad) = xs.iter().find(|x| x.dims() != dims) {
        return Err(Error::ShapeMismatch { op: "restore", shapes: vec![dims.to_vec(), bad.dims().to_vec()] });
    }
    let cond = Tensor::stack(&xs.iter().map(|x| x.to_model()).collect::<Vec<_>>())?;
    let mut rngs: Vec<_> = seeds.iter().map(|&s| rng::substream(s, "restore", 0)).collect();
    let shape = [xs.len(), dims[0], dims[1], dims[2]];
    let out = ancestral_chain(&model.inner.net, &model.inner.schedule, &shape, &mut rngs, Some(&cond), Some(1.0))?;
    out.unstack()
        .into_iter()
        .zip(xs.iter().zip(seeds))
        .map(|(t, (x, &s))| ImageSample::from_model(&t, x.source_id.clone(), s))
        .collect()
}

/// Score of the conditional branch: `-eps(concat(y_t, x), t) / sqrt(1 - alpha_bar[t])`.
pub fn likelihood_score(model: &ConditionalDenoiser, y_t: &Tensor, x: &Tensor, t: usize) -> Result<Tensor> {
    model.inner.schedule.check_t(t)?;
    let eps = model.predict_eps(y_t, x, &vec![t; y_t.shape()[0]])?;
    eps_to_score(&model.inner.schedule, &eps, t)
}
