//! Langevin fusion of the prior and restoration scores.

use std::io::Write as _;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffusion::{per_item_noise, prior_score, DenoiserModel, ImageSample, NoiseSchedule};
use crate::nn::NoisePredictor;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::restoration::{likelihood_score, ConditionalDenoiser};
use crate::rng::{self, Rng};
use crate::tensorgrad::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimestepPolicy {
    /// Linear anneal from `t_start_fraction * T` down to 1.
    Annealed,
    /// Independent uniform draw from `1..=t_start_fraction * T` every iteration.
    Uniform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EtaSchedule {
    /// Geometric decay from `eta_start` to `eta_end` over the iterations.
    Geometric,
    /// `eta_start * sigma_t^2 / sigma_{t_start}^2`, floored at `eta_end`.
    NoiseScaled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub iterations: usize,
    pub eta_start: f64,
    pub eta_end: f64,
    pub lambda_prior: f64,
    pub lambda_lik: f64,
    pub t_start_fraction: f64,
    pub seed: u64,
    pub policy: TimestepPolicy,
    /// Standard deviation of the noise added to the observation to form the first iterate.
    pub init_noise: f64,
    pub eta_schedule: EtaSchedule,
    /// Replace the last iterate by its posterior-mean estimate `(y + sigma^2 score) / sqrt(alpha_bar)`
    /// at the final timestep, removing the noise level the chain ends at.
    pub final_denoise: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            iterations: 400,
            eta_start: 2e-2,
            eta_end: 1e-4,
            lambda_prior: 1.0,
            lambda_lik: 1.0,
            t_start_fraction: 0.8,
            seed: 0,
            policy: TimestepPolicy::Annealed,
            init_noise: 0.5,
            eta_schedule: EtaSchedule::Geometric,
            final_denoise: false,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("fusion config: {m}")));
        if self.iterations == 0 {
            return bad("iterations must be positive".into());
        }
        if !(self.eta_start > 0.0 && self.eta_end > 0.0 && self.eta_end <= self.eta_start) {
            return bad(format!("need 0 < eta_end <= eta_start, got {} / {}", self.eta_end, self.eta_start));
        }
        if !(self.lambda_prior >= 0.0 && self.lambda_lik >= 0.0 && self.lambda_prior + self.lambda_lik > 0.0) {
            return bad(format!("weights must be non-negative with a positive sum, got {} / {}", self.lambda_prior, self.lambda_lik));
        }
        if !(self.t_start_fraction > 0.0 && self.t_start_fraction <= 1.0) {
            return bad(format!("t_start_fraction {} outside (0, 1]", self.t_start_fraction));
        }
        if !(self.init_noise >= 0.0 && self.init_noise.is_finite()) {
            return bad(format!("init_noise {} must be non-negative", self.init_noise));
        }
        Ok(())
    }

    /// Geometric decay from `eta_start` at i = 0 to `eta_end` at the last iteration.
    pub fn eta(&self, i: usize) -> f64 {
        if self.iterations == 1 {
            return self.eta_start;
        }
        let p = i as f64 / (self.iterations - 1) as f64;
        self.eta_start * (self.eta_end / self.eta_start).powf(p)
    }

    /// Step size at iteration `i` and timestep `t`; `noise_var` is `1 - alpha_bar` of the provider.
    pub fn eta_at(&self, i: usize, t: usize, steps: usize, noise_var: Option<&dyn Fn(usize) -> f64>) -> Result<f64> {
        match self.eta_schedule {
            EtaSchedule::Geometric => Ok(self.eta(i)),
            EtaSchedule::NoiseScaled => {
                let var = noise_var.ok_or_else(|| Error::invalid("noise_scaled step sizes need a diffusion schedule"))?;
                let r = var(t) / var(self.t_start(steps));
                Ok((self.eta_start * r).max(self.eta_end))
            }
        }
    }

    pub fn t_start(&self, steps: usize) -> usize {
        ((self.t_start_fraction * steps as f64).round() as usize).clamp(1, steps)
    }

    /// Annealed timestep for iteration `i`.
    pub fn annealed_t(&self, i: usize, steps: usize) -> usize {
        let t0 = self.t_start(steps) as f64;
        if self.iterations == 1 {
            return 1;
        }
        let p = i as f64 / (self.iterations - 1) as f64;
        ((t0 + (1.0 - t0) * p).round() as usize).clamp(1, steps)
    }
}

/// The iterate `y^i` for a batch of independent chains.
#[derive(Clone, Debug)]
pub struct FusionState {
    pub y: Tensor,
    pub iteration: usize,
}

/// Pure Langevin update with a given standard-normal draw `xi`:
/// `y + (eta/2) * (lp * g_prior + ll * g_lik) + sqrt(eta) * xi`.
pub fn sgld_update(y: &Tensor, g_prior: &Tensor, g_lik: &Tensor, eta: f64, lp: f64, ll: f64, xi: &Tensor) -> Result<Tensor> {
    for other in [g_prior, g_lik, xi] {
        if other.shape() != y.shape() {
            return Err(Error::ShapeMismatch { op: "sgld_update", shapes: vec![y.shape().to_vec(), other.shape().to_vec()] });
        }
    }
    let (h, s) = (eta / 2.0, eta.sqrt());
    let data = y
        .data()
        .iter()
        .zip(g_prior.data())
        .zip(g_lik.data())
        .zip(xi.data())
        .map(|(((&y, &gp), &gl), &z)| {
            let drift = if lp == 0.0 { 0.0 } else { lp * gp as f64 } + if ll == 0.0 { 0.0 } else { ll * gl as f64 };
            (y as f64 + h * drift + s * z as f64) as f32
        })
        .collect();
    Tensor::from_vec(y.shape(), data)
}

/// One Langevin step drawing item `n`'s noise from `rngs[n]`. Returns `||y_new - y||`.
#[allow(clippy::too_many_arguments)]
pub fn sgld_step(
    state: &mut FusionState,
    g_prior: &Tensor,
    g_lik: &Tensor,
    eta: f64,
    lambda_prior: f64,
    lambda_lik: f64,
    rngs: &mut [Rng],
) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::invalid(format!("step size {eta} must be positive")));
    }
    let xi = per_item_noise(state.y.shape(), rngs)?;
    let next = sgld_update(&state.y, g_prior, g_lik, eta, lambda_prior, lambda_lik, &xi)?;
    if !next.is_finite() {
        return Err(Error::NonFinite { name: "fusion iterate".into(), step: state.iteration });
    }
    let dy = next.zip_with(&state.y, |a, b| a - b)?.sq_norm().sqrt();
    state.y = next;
    state.iteration += 1;
    Ok(dy)
}

/// Supplies the two scores that drive the Langevin chain.
pub trait ScoreProvider {
    /// Diffusion timestep count the scores are indexed by.
    fn steps(&self) -> usize;
    fn prior(&self, y: &Tensor, t: usize) -> Result<Tensor>;
    fn likelihood(&self, y: &Tensor, t: usize) -> Result<Tensor>;
    /// `1 - alpha_bar[t]` when the scores come from a diffusion model.
    fn noise_var(&self, _t: usize) -> Option<f64> {
        None
    }
}

/// Scores from the two trained branches, conditioned on a fixed batch of observations.
pub struct NeuralScores<'a> {
    pub prior: &'a DenoiserModel,
    pub restorer: &'a ConditionalDenoiser,
    pub observation: Tensor,
}

pub fn check_schedules(a: &NoiseSchedule, b: &NoiseSchedule) -> Result<()> {
    if a.kind() != b.kind() || a.steps() != b.steps() {
        return Err(Error::invalid(format!(
            "branch schedules differ: prior {} T={} vs restorer {} T={}",
            a.kind(),
            a.steps(),
            b.kind(),
            b.steps()
        )));
    }
    Ok(())
}

impl ScoreProvider for NeuralScores<'_> {
    fn steps(&self) -> usize {
        self.prior.schedule.steps()
    }

    fn prior(&self, y: &Tensor, t: usize) -> Result<Tensor> {
        prior_score(self.prior, y, t)
    }

    fn likelihood(&self, y: &Tensor, t: usize) -> Result<Tensor> {
        likelihood_score(self.restorer, y, &self.observation, t)
    }

    fn noise_var(&self, t: usize) -> Option<f64> {
        Some(1.0 - self.prior.schedule.alpha_bar(t))
    }
}

/// Isotropic Gaussian prior `N(mu0, s0)` and likelihood `N(x, s1)`; scores ignore `t`.
#[derive(Clone, Debug)]
pub struct GaussianScores {
    pub mu0: Tensor,
    pub var0: f64,
    pub x: Tensor,
    pub var1: f64,
    pub steps: usize,
}

impl ScoreProvider for GaussianScores {
    fn steps(&self) -> usize {
        self.steps
    }

    fn prior(&self, y: &Tensor, _t: usize) -> Result<Tensor> {
        let v = self.var0;
        y.zip_with(&self.mu0, |a, m| (-(a as f64 - m as f64) / v) as f32)
    }

    fn likelihood(&self, y: &Tensor, _t: usize) -> Result<Tensor> {
        let v = self.var1;
        y.zip_with(&self.x, |a, m| (-(a as f64 - m as f64) / v) as f32)
    }
}

/// Closed-form posterior of `N(mu0, var0)` prior times `N(x, var1)` likelihood.
pub fn gaussian_posterior_oracle(mu0: &[f64], var0: f64, x: &[f64], var1: f64) -> Result<(Vec<f64>, f64)> {
    if !(var0 > 0.0 && var1 > 0.0) {
        return Err(Error::invalid(format!("variances must be positive, got {var0} and {var1}")));
    }
    if mu0.len() != x.len() {
        return Err(Error::ShapeMismatch { op: "gaussian_posterior_oracle", shapes: vec![vec![mu0.len()], vec![x.len()]] });
    }
    let prec = 1.0 / var0 + 1.0 / var1;
    let mu = mu0.iter().zip(x).map(|(&m, &xv)| (m / var0 + xv / var1) / prec).collect();
    Ok((mu, 1.0 / prec))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FusionDiag {
    pub i: usize,
    pub t: usize,
    pub eta: f64,
    pub g_prior_norm: f64,
    pub g_lik_norm: f64,
    pub dy_norm: f64,
}

pub fn write_diagnostics(path: &Path, rows: &[FusionDiag]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "i,t,eta,g_prior_norm,g_lik_norm,dy_norm").unwrap();
    for r in rows {
        writeln!(buf, "{},{},{:.6e},{:.6e},{:.6e},{:.6e}", r.i, r.t, r.eta, r.g_prior_norm, r.g_lik_norm, r.dy_norm).unwrap();
    }
    fsutil::write_atomic(path, &buf)
}

/// Runs the Langevin chain from `y0`, calling `observe` after every accepted step.
pub fn run_chain<P: ScoreProvider>(
    provider: &P,
    y0: Tensor,
    config: &FusionConfig,
    rngs: &mut [Rng],
    mut observe: impl FnMut(usize, &Tensor),
) -> Result<(Tensor, Vec<FusionDiag>)> {
    config.validate()?;
    let steps = provider.steps();
    let t_max = config.t_start(steps);
    let mut policy_rng = rng::substream(config.seed, "fuse-policy", 0);
    let mut state = FusionState { y: y0, iteration: 0 };
    let mut diags = Vec::with_capacity(config.iterations);
    for i in 0..config.iterations {
        let t = match config.policy {
            TimestepPolicy::Annealed => config.annealed_t(i, steps),
            TimestepPolicy::Uniform => policy_rng.random_range(1..=t_max),
        };
        let var = |t: usize| provider.noise_var(t).unwrap_or(f64::NAN);
        let has_var = provider.noise_var(t).is_some();
        let eta = config.eta_at(i, t, steps, has_var.then_some(&var as &dyn Fn(usize) -> f64))?;
        let zeros = || Tensor::zeros(state.y.shape());
        let gp = if config.lambda_prior > 0.0 { provider.prior(&state.y, t)? } else { zeros() };
        let gl = if config.lambda_lik > 0.0 { provider.likelihood(&state.y, t)? } else { zeros() };
        let dy = sgld_step(&mut state, &gp, &gl, eta, config.lambda_prior, config.lambda_lik, rngs)?;
        diags.push(FusionDiag { i, t, eta, g_prior_norm: gp.sq_norm().sqrt(), g_lik_norm: gl.sq_norm().sqrt(), dy_norm: dy });
        observe(i, &state.y);
    }
    if config.final_denoise {
        let t = diags.last().map_or(1, |d| d.t);
        let var = provider
            .noise_var(t)
            .ok_or_else(|| Error::invalid("final_denoise needs scores from a diffusion schedule"))?;
        let w = config.lambda_prior + config.lambda_lik;
        let gp = if config.lambda_prior > 0.0 { provider.prior(&state.y, t)? } else { Tensor::zeros(state.y.shape()) };
        let gl = if config.lambda_lik > 0.0 { provider.likelihood(&state.y, t)? } else { Tensor::zeros(state.y.shape()) };
        let (cp, cl) = ((var * config.lambda_prior / w) as f32, (var * config.lambda_lik / w) as f32);
        let scale = (1.0 / (1.0 - var).sqrt()) as f32;
        let mean = state.y.zip_with(&gp, |y, p| y + cp * p)?.zip_with(&gl, |v, l| scale * (v + cl * l))?;
        state.y = mean;
    }
    Ok((state.y, diags))
}

/// Fuses a batch of degraded images; chain `k` is seeded by `seeds[k]` alone.
pub fn fuse_batch(
    xs: &[ImageSample],
    prior: &DenoiserModel,
    restorer: &ConditionalDenoiser,
    config: &FusionConfig,
    seeds: &[u64],
) -> Result<(Vec<ImageSample>, Vec<FusionDiag>)> {
    config.validate()?;
    check_schedules(&prior.schedule, &restorer.inner.schedule)?;
    let first = xs.first().ok_or_else(|| Error::invalid("fuse: no input images"))?;
    let dims = first.dims();
    if seeds.len() != xs.len() {
        return Err(Error::invalid(format!("{} seeds for {} images", seeds.len(), xs.len())));
    }
    if let Some(bad) = xs.iter().find(|x| x.dims() != dims) {
        return Err(Error::ShapeMismatch { op: "fuse", shapes: vec![dims.to_vec(), bad.dims().to_vec()] });
    }
    if prior.net.in_channels() != dims[0] || restorer.channels() != dims[0] {
        return Err(Error::ShapeMismatch {
            op: "fuse",
            shapes: vec![dims.to_vec(), vec![prior.net.in_channels(), restorer.channels()]],
        });
    }
    let observation = Tensor::stack(&xs.iter().map(|x| x.to_model()).collect::<Vec<_>>())?;
    let mut rngs: Vec<Rng> = seeds.iter().map(|&s| rng::substream(s, "fuse", 0)).collect();
    let noise = per_item_noise(observation.shape(), &mut rngs)?;
    let s = config.init_noise as f32;
    let y0 = observation.zip_with(&noise, |x, z| x + s * z)?;
    let provider = NeuralScores { prior, restorer, observation };
    let (y, diags) = run_chain(&provider, y0, config, &mut rngs, |_, _| {})?;
    let out = y
        .unstack()
        .into_iter()
        .zip(xs.iter().zip(seeds))
        .map(|(t, (x, &seed))| ImageSample::from_model(&t, x.source_id.clone(), seed))
        .collect::<Result<Vec<_>>>()?;
    Ok((out, diags))
}

/// Single-image fusion seeded by `config.seed`.
pub fn fuse(x: &ImageSample, prior: &DenoiserModel, restorer: &ConditionalDenoiser, config: &FusionConfig) -> Result<ImageSample> {
    fuse_batch(std::slice::from_ref(x), prior, restorer, config, &[config.seed]).map(|(mut v, _)| v.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f32]) -> Tensor {
        Tensor::from_vec(&[1, v.len()], v.to_vec()).unwrap()
    }

    #[test]
    fn zero_scores_and_zero_noise_is_a_fixed_point() {
        let y = t(&[0.3, -1.2, 4.0]);
        let z = Tensor::zeros(y.shape());
        assert_eq!(sgld_update(&y, &z, &z, 0.1, 1.0, 1.0, &z).unwrap(), y);
    }

    #[test]
    fn weight_zeroing_matches_single_branch() {
        let y = t(&[0.3, -1.2, 4.0]);
        let gp = t(&[1.0, f32::NAN, 2.0]);
        let gl = t(&[-0.5, 0.25, 3.0]);
        let xi = t(&[0.1, 0.2, -0.3]);
        let both = sgld_update(&y, &gp, &gl, 0.05, 0.0, 1.0, &xi).unwrap();
        let lik_only = sgld_update(&y, &Tensor::zeros(y.shape()), &gl, 0.05, 0.0, 1.0, &xi).unwrap();
        assert_eq!(both, lik_only);
        let mut a = FusionState { y: y.clone(), iteration: 0 };
        let mut b = FusionState { y: y.clone(), iteration: 0 };
        let g = t(&[0.7, 0.1, -0.2]);
        sgld_step(&mut a, &g, &gl, 0.05, 1.0, 0.0, &mut [rng::substream(1, "x", 0)]).unwrap();
        sgld_step(&mut b, &g, &gp, 0.05, 1.0, 0.0, &mut [rng::substream(1, "x", 0)]).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.iteration, 1);
    }

    #[test]
    fn doubling_eta_scales_noise_by_sqrt2() {
        let y = Tensor::zeros(&[1, 4]);
        let xi = t(&[1.0, -2.0, 0.5, 3.0]);
        let a = sgld_update(&y, &y, &y, 0.01, 1.0, 1.0, &xi).unwrap();
        let b = sgld_update(&y, &y, &y, 0.02, 1.0, 1.0, &xi).unwrap();
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((v / u - 2f32.sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn non_finite_step_is_rejected_with_index() {
        let mut s = FusionState { y: t(&[0.0]), iteration: 7 };
        let g = t(&[f32::INFINITY]);
        let err = sgld_step(&mut s, &g, &g, 0.1, 1.0, 1.0, &mut [rng::substream(0, "x", 0)]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 7, .. }));
    }

    #[test]
    fn oracle_examples() {
        let (m, v) = gaussian_posterior_oracle(&[0.0], 1.0, &[2.0], 1.0).unwrap();
        assert_eq!((m[0], v), (1.0, 0.5));
        let (m, _) = gaussian_posterior_oracle(&[1.0], 2.0, &[5.0], 2.0).unwrap();
        assert_eq!(m[0], 3.0);
        let (m, _) = gaussian_posterior_oracle(&[1.0], 2.0, &[5.0], 1e12).unwrap();
        assert!((m[0] - 1.0).abs() < 1e-9);
        assert!(gaussian_posterior_oracle(&[0.0], 0.0, &[0.0], 1.0).is_err());
    }

    #[test]
    fn schedules_and_validation() {
        let c = FusionConfig::default();
        c.validate().unwrap();
        assert_eq!(c.annealed_t(0, 200), 160);
        assert_eq!(c.annealed_t(399, 200), 1);
        assert!((c.eta(0) - 2e-2).abs() < 1e-15 && (c.eta(399) - 1e-4).abs() < 1e-15);
        assert!((1..400).all(|i| c.eta(i) <= c.eta(i - 1)));
        let bad = FusionConfig { eta_end: 1.0, ..c.clone() };
        assert!(bad.validate().is_err());
        let bad = FusionConfig { lambda_prior: 0.0, lambda_lik: 0.0, ..c };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn noise_scaled_steps_track_the_noise_level() {
        let sched = NoiseSchedule::new(crate::diffusion::ScheduleKind::Cosine, 100).unwrap();
        let var = |t: usize| 1.0 - sched.alpha_bar(t);
        let c = FusionConfig { eta_schedule: EtaSchedule::NoiseScaled, eta_start: 0.8, ..Default::default() };
        let etas: Vec<f64> = (0..c.iterations).map(|i| c.eta_at(i, c.annealed_t(i, 100), 100, Some(&var)).unwrap()).collect();
        assert!((etas[0] - 0.8).abs() < 1e-12);
        assert!(etas.windows(2).all(|w| w[1] <= w[0]));
        assert!(etas.iter().all(|&e| e >= c.eta_end));
        let t = c.annealed_t(200, 100);
        assert!((etas[200] / var(t) - 0.8 / var(80)).abs() < 1e-9);
        assert!(c.eta_at(0, 80, 100, None).is_err());
    }

    /// Gaussian data `x0 ~ N(0, s0^2)` pushed through a variance-preserving schedule.
    struct NoisedGaussian {
        s0: f64,
        var: f64,
    }

    impl ScoreProvider for NoisedGaussian {
        fn steps(&self) -> usize {
            10
        }
        fn prior(&self, y: &Tensor, _t: usize) -> Result<Tensor> {
            let m = ((1.0 - self.var) * self.s0 * self.s0 + self.var) as f32;
            Ok(y.map(|v| -v / m))
        }
        fn likelihood(&self, y: &Tensor, t: usize) -> Result<Tensor> {
            self.prior(y, t)
        }
        fn noise_var(&self, _t: usize) -> Option<f64> {
            Some(self.var)
        }
    }

    #[test]
    fn final_denoise_returns_the_posterior_mean() {
        let p = NoisedGaussian { s0: 0.5, var: 0.1 };
        let cfg = FusionConfig { iterations: 1, final_denoise: true, ..Default::default() };
        let mut seen = Tensor::zeros(&[1, 3]);
        let mut rngs = [rng::substream(4, "d", 0)];
        let (out, _) = run_chain(&p, t(&[0.3, -1.0, 2.0]), &cfg, &mut rngs, |_, y| seen = y.clone()).unwrap();
        let ab: f64 = 0.9;
        let gain = ab.sqrt() * 0.25 / (ab * 0.25 + 0.1);
        for (o, y) in out.data().iter().zip(seen.data()) {
            assert!((*o as f64 - gain * *y as f64).abs() < 1e-5, "{o} vs {}", gain * *y as f64);
        }
        let g = GaussianScores { mu0: Tensor::zeros(&[1, 1]), var0: 1.0, x: Tensor::zeros(&[1, 1]), var1: 1.0, steps: 10 };
        assert!(run_chain(&g, Tensor::zeros(&[1, 1]), &cfg, &mut rngs, |_, _| {}).is_err());
    }

    #[test]
    fn one_dimensional_langevin_matches_target() {
        let (mu, var) = (1.5, 0.4);
        let p = GaussianScores {
            mu0: Tensor::full(&[1, 64], mu as f32),
            var0: var,
            x: Tensor::zeros(&[1, 64]),
            var1: 1.0,
            steps: 10,
        };
        let cfg = FusionConfig { iterations: 10_000, eta_start: 1e-2, eta_end: 1e-2, lambda_lik: 0.0, ..Default::default() };
        let mut xs = Vec::new();
        let mut rngs = [rng::substream(3, "t", 0)];
        // 64 independent one-dimensional chains advanced together.
        run_chain(&p, Tensor::full(&[1, 64], mu as f32), &cfg, &mut rngs, |_, y| {
            xs.extend(y.data().iter().map(|&v| v as f64))
        })
        .unwrap();
        let n = xs.len() as f64;
        let m = xs.iter().sum::<f64>() / n;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        // Autocorrelation time of the discretised chain is about 2 var / eta.
        let tau = 2.0 * var / 1e-2;
        let se = (v * tau / n).sqrt();
        assert!(se < 0.01);
        assert!((m - mu).abs() < 3.0 * se, "mean {m} vs {mu} (se {se})");
        assert!((v / var - 1.0).abs() < 0.1, "var {v} vs {var}");
    }
}
