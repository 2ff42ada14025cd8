use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::schedule::{q_sample_batch, NoiseSchedule, ScheduleKind};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::nn::{Network, NoisePredictor, UNet, UNetConfig};
use crate::rng::{self, Rng};
use crate::tensorgrad::checkpoint::{self, Metadata};
use crate::tensorgrad::{cosine_lr, AdamW, Graph, Tensor};

/// Architecture and noise-schedule choices shared by both branches.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub widths: Vec<usize>,
    pub time_dim: usize,
    pub schedule: String,
    pub timesteps: usize,
}

impl ModelSpec {
    pub fn desk() -> Self {
        ModelSpec { widths: vec![32, 64, 128], time_dim: 64, schedule: "cosine".into(), timesteps: 200 }
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.schedule.parse::<ScheduleKind>()?, self.timesteps)
    }

    pub fn unet(&self, in_channels: usize, out_channels: usize) -> UNetConfig {
        UNetConfig { in_channels, out_channels, widths: self.widths.clone(), time_dim: self.time_dim }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub warmup_fraction: f64,
    pub seed: u64,
}

impl TrainConfig {
    /// 50k steps, batch 8, AdamW lr 1e-4 / wd 1e-6, 5% warmup then cosine decay.
    pub fn paper() -> Self {
        TrainConfig { steps: 50_000, batch_size: 8, learning_rate: 1e-4, weight_decay: 1e-6, warmup_fraction: 0.05, seed: 0 }
    }

    pub fn desk() -> Self {
        TrainConfig { steps: 5_000, learning_rate: 1e-3, ..Self::paper() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::invalid(format!("train config needs steps, batch_size > 0: {self:?}")));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::invalid(format!("warmup_fraction {} outside [0, 1)", self.warmup_fraction)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainLogRow {
    pub step: usize,
    pub loss: f64,
    pub lr: f64,
}

/// Where a training run persists its outputs. Both are optional.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub checkpoint: Option<PathBuf>,
    pub log_csv: Option<PathBuf>,
}

pub fn write_train_log(path: &Path, rows: &[TrainLogRow]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "step,loss,lr").unwrap();
    for r in rows {
        writeln!(buf, "{},{:.9e},{:.9e}", r.step, r.loss, r.lr).unwrap();
    }
    fsutil::write_atomic(path, &buf)
}

/// Epsilon-prediction training loop shared by the prior and restoration branches.
///
/// `batch` returns clean targets `[B, ...]` and, for conditional models, a conditioning
/// tensor concatenated after the noised input along axis 1.
pub fn train_eps_model<N, F>(
    net: &mut N,
    schedule: &NoiseSchedule,
    config: &TrainConfig,
    mut batch: F,
    mut on_step: impl FnMut(&TrainLogRow, &N) -> Result<()>,
) -> Result<Vec<TrainLogRow>>
where
    N: NoisePredictor<f32>,
    F: FnMut(&mut Rng, usize) -> Result<(Tensor, Option<Tensor>)>,
{
    config.validate()?;
    let mut rng = rng::substream(config.seed, "train", 0);
    let mut opt = AdamW::new(config.learning_rate, config.weight_decay)?;
    let mut log = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let (x0, cond) = batch(&mut rng, config.batch_size)?;
        let b = x0.shape()[0];
        let ts: Vec<usize> = (0..b).map(|_| rng.random_range(1..=schedule.steps())).collect();
        let eps = Tensor::randn(x0.shape(), 1.0, &mut rng);
        let xt = q_sample_batch(schedule, &x0, &ts, &eps)?;
        let input = match &cond {
            Some(c) => xt.concat_channels(c)?,
            None => xt,
        };

        let mut g = Graph::new();
        let pv = net.params().attach(&mut g, true);
        let xv = g.constant(input);
        let pred = net.forward(&mut g, &pv, xv, &ts)?;
        let target = g.constant(eps);
        let loss = g.mse(pred, target)?;
        let loss_value = g.value(loss).item() as f64;
        if !loss_value.is_finite() {
            return Err(Error::Diverged { step, loss: loss_value });
        }
        let mut grads = g.backward(loss)?;
        net.params_mut().accumulate_grads(&mut grads, &pv);

        let lr = cosine_lr(step, config.steps, config.learning_rate, config.warmup_fraction);
        opt.learning_rate = lr.max(f64::MIN_POSITIVE);
        opt.step(net.params_mut())?;
        net.params_mut().zero_grad();

        let row = TrainLogRow { step, loss: loss_value, lr };
        on_step(&row, net)?;
        log.push(row);
    }
    Ok(log)
}

/// A trained noise predictor together with the schedule it was trained under.
#[derive(Clone, Debug)]
pub struct DenoiserModel {
    pub net: Network,
    pub schedule: NoiseSchedule,
}

impl DenoiserModel {
    pub fn new(net: Network, schedule: NoiseSchedule) -> Self {
        DenoiserModel { net, schedule }
    }

    /// Untrained U-Net for `channels`-channel images.
    pub fn untrained(spec: &ModelSpec, in_channels: usize, out_channels: usize, seed: u64) -> Result<Self> {
        let mut init = rng::substream(seed, "init", 0);
        let net = Network::UNet(UNet::new(spec.unet(in_channels, out_channels), &mut init)?);
        Ok(DenoiserModel { net, schedule: spec.schedule()? })
    }

    pub fn metadata(&self, branch: &str) -> Metadata {
        let mut m = self.net.describe();
        m.insert("branch".into(), branch.into());
        m.insert("schedule".into(), self.schedule.kind().to_string());
        m.insert("timesteps".into(), self.schedule.steps().to_string());
        m
    }

    pub fn save(&self, path: &Path, branch: &str) -> Result<()> {
        checkpoint::save(path, self.net.params(), &self.metadata(branch))
    }

    /// Loads a checkpoint and returns it with the branch tag it was saved under.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let (params, meta) = checkpoint::load(path)?;
        let kind: ScheduleKind = meta.get("schedule").ok_or_else(|| Error::Checkpoint("missing schedule".into()))?.parse()?;
        let steps = crate::nn::meta_usize(&meta, "timesteps")?;
        let net = Network::from_checkpoint(&meta, &params)?;
        let branch = meta.get("branch").cloned().unwrap_or_default();
        Ok((DenoiserModel { net, schedule: NoiseSchedule::new(kind, steps)? }, branch))
    }

    pub fn predict_eps(&self, x: &Tensor, ts: &[usize]) -> Result<Tensor> {
        self.net.predict(x, ts)
    }
}

/// Draws one standard-normal block per leading-axis item, item `n` from `rngs[n]`.
pub fn per_item_noise(shape: &[usize], rngs: &mut [Rng]) -> Result<Tensor> {
    if rngs.len() != shape[0] {
        return Err(Error::invalid(format!("{} rng streams for batch {}", rngs.len(), shape[0])));
    }
    let per: usize = shape[1..].iter().product();
    let mut data = Vec::with_capacity(per * shape[0]);
    for r in rngs.iter_mut() {
        data.extend((0..per).map(|_| r.sample::<f32, _>(StandardNormal)));
    }
    Tensor::from_vec(shape, data)
}

/// Reverse DDPM chain from pure noise at `t = T` down to `t = 1`.
///
/// Each step forms the clean-signal estimate from the predicted noise (optionally clamped to
/// `[-clip, clip]`), then moves to the mean of `q(x_{t-1} | x_t, x_0)`, adding the posterior
/// noise for `t > 1` only. `cond` is concatenated to the input at every step.
pub fn ancestral_chain<N: NoisePredictor<f32>>(
    net: &N,
    schedule: &NoiseSchedule,
    shape: &[usize],
    rngs: &mut [Rng],
    cond: Option<&Tensor>,
    clip: Option<f32>,
) -> Result<Tensor> {
    let n = shape[0];
    let mut x = per_item_noise(shape, rngs)?;
    for t in (1..=schedule.steps()).rev() {
        let input = match cond {
            Some(c) => x.concat_channels(c)?,
            None => x.clone(),
        };
        let eps = net.predict(&input, &vec![t; n])?;
        x.expect_same_shape("ancestral_chain", &eps)?;
        let ab = schedule.alpha_bar(t);
        let ab_prev = schedule.alpha_bar_prev(t);
        let beta = schedule.beta(t);
        let (sa, s) = (ab.sqrt() as f32, (1.0 - ab).sqrt() as f32);
        let c0 = (ab_prev.sqrt() * beta / (1.0 - ab)) as f32;
        let ct = (schedule.alpha(t).sqrt() * (1.0 - ab_prev) / (1.0 - ab)) as f32;
        let noise = if t > 1 { Some(per_item_noise(shape, rngs)?) } else { None };
        let sd = schedule.posterior_variance(t).sqrt() as f32;
        for (i, xv) in x.data_mut().iter_mut().enumerate() {
            let mut x0 = (*xv - s * eps.data()[i]) / sa;
            if let Some(c) = clip {
                x0 = x0.clamp(-c, c);
            }
            let mut next = c0 * x0 + ct * *xv;
            if let Some(z) = &noise {
                next += sd * z.data()[i];
            }
            *xv = next;
        }
    }
    if let Some(c) = clip {
        x = x.map(|v| v.clamp(-c, c));
    }
    Ok(x)
}

/// Unconditional sample from the prior branch, exported in `[0, 1]`.
pub fn ancestral_sample(model: &DenoiserModel, dims: [usize; 3], seed: u64) -> Result<super::ImageSample> {
    super::image_sample::validate_image_shape(dims[0], dims[1], dims[2])?;
    if model.net.in_channels() != dims[0] {
        return Err(Error::ShapeMismatch { op: "ancestral_sample", shapes: vec![dims.to_vec(), vec![model.net.in_channels()]] });
    }
    let mut rngs = [rng::substream(seed, "sample", 0)];
    let shape = [1, dims[0], dims[1], dims[2]];
    let x = ancestral_chain(&model.net, &model.schedule, &shape, &mut rngs, None, Some(1.0))?;
    let x = x.reshape(&dims)?;
    super::ImageSample::from_model(&x, format!("prior-sample-{seed}"), seed)
}

/// Converts a noise estimate at `t` into a score: `-eps / sqrt(1 - alpha_bar[t])`.
pub fn eps_to_score(schedule: &NoiseSchedule, eps: &Tensor, t: usize) -> Result<Tensor> {
    schedule.check_t(t)?;
    let inv = (1.0 / schedule.sigma(t)) as f32;
    Ok(eps.map(|e| -e * inv))
}

/// Score of the prior branch at noise level `t` for a batch `y_t [N, C, H, W]`.
pub fn prior_score(model: &DenoiserModel, y_t: &Tensor, t: usize) -> Result<Tensor> {
    model.schedule.check_t(t)?;
    let eps = model.predict_eps(y_t, &vec![t; y_t.shape()[0]])?;
    eps_to_score(&model.schedule, &eps, t)
}

/// Trains the unconditional prior branch on clean images.
pub fn train_prior(
    dataset: &[super::ImageSample],
    spec: &ModelSpec,
    config: &TrainConfig,
    outputs: &TrainOutputs,
    on_step: impl FnMut(&TrainLogRow, &Network) -> Result<()>,
) -> Result<(DenoiserModel, Vec<TrainLogRow>)> {
    let first = dataset.first().ok_or_else(|| Error::invalid("train_prior: empty dataset"))?;
    let dims = first.dims();
    if let Some(bad) = dataset.iter().find(|s| s.dims() != dims) {
        return Err(Error::ShapeMismatch { op: "train_prior", shapes: vec![dims.to_vec(), bad.dims().to_vec()] });
    }
    let mut model = DenoiserModel::untrained(spec, dims[0], dims[0], config.seed)?;
    let images: Vec<Tensor> = dataset.iter().map(|s| s.to_model()).collect();
    let log = train_eps_model(
        &mut model.net,
        &model.schedule.clone(),
        config,
        |rng, b| {
            let picks: Vec<Tensor> = (0..b).map(|_| images[rng.random_range(0..images.len())].clone()).collect();
            Ok((Tensor::stack(&picks)?, None))
        },
        on_step,
    )?;
    persist(&model, "prior", &log, outputs)?;
    Ok((model, log))
}

pub(crate) fn persist(model: &DenoiserModel, branch: &str, log: &[TrainLogRow], outputs: &TrainOutputs) -> Result<()> {
    if let Some(p) = &outputs.log_csv {
        write_train_log(p, log)?;
    }
    if let Some(p) = &outputs.checkpoint {
        model.save(p, branch)?;
    }
    Ok(())
}
