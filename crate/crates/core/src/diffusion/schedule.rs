use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensorgrad::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::Cosine => "cosine",
        })
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            _ => Err(Error::invalid(format!("unknown schedule kind {s:?}"))),
        }
    }
}

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

/// Per-timestep coefficients, indexed `1..=T` by the accessors.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    /// `linear` spaces beta evenly over `[1e-4, 2e-2] * 1000/T`, so that T=1000 gives the
    /// classic range and shorter chains keep a comparable terminal signal level.
    /// `cosine` uses the squared-cosine cumulative signal curve with offset 0.008.
    pub fn new(kind: ScheduleKind, steps: usize) -> Result<Self> {
        if steps < 2 {
            return Err(Error::invalid(format!("schedule needs T >= 2, got {steps}")));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Linear => {
                let scale = 1000.0 / steps as f64;
                let (lo, hi) = (1e-4 * scale, 2e-2 * scale);
                (0..steps)
                    .map(|i| (lo + (hi - lo) * i as f64 / (steps - 1) as f64).min(MAX_BETA))
                    .collect()
            }
            ScheduleKind::Cosine => {
                let f = |t: f64| ((t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * std::f64::consts::FRAC_PI_2).cos().powi(2);
                (1..=steps).map(|t| (1.0 - f(t as f64) / f(t as f64 - 1.0)).clamp(0.0, MAX_BETA)).collect()
            }
        };
        let mut acc = 1.0;
        let alpha_bars = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        let s = NoiseSchedule { kind, betas, alpha_bars };
        debug_assert!(s.betas.iter().all(|&b| b > 0.0 && b < 1.0));
        Ok(s)
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of timesteps T.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn idx(&self, t: usize) -> usize {
        assert!(t >= 1 && t <= self.steps(), "timestep {t} outside 1..={}", self.steps());
        t - 1
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[self.idx(t)]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.beta(t)
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[self.idx(t)]
    }

    /// `alpha_bar` at `t - 1`, with `alpha_bar(0) = 1`.
    pub fn alpha_bar_prev(&self, t: usize) -> f64 {
        if t <= 1 { 1.0 } else { self.alpha_bar(t - 1) }
    }

    /// Standard deviation of the noise at `t`, `sqrt(1 - alpha_bar)`.
    pub fn sigma(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar(t)).sqrt()
    }

    /// Variance of `q(x_{t-1} | x_t, x_0)`.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        self.beta(t) * (1.0 - self.alpha_bar_prev(t)) / (1.0 - self.alpha_bar(t))
    }
}

/// `sqrt(alpha_bar[t]) * x0 + sqrt(1 - alpha_bar[t]) * eps`.
pub fn q_sample(schedule: &NoiseSchedule, x0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
    schedule.check_t(t)?;
    let (a, s) = (schedule.alpha_bar(t).sqrt() as f32, schedule.sigma(t) as f32);
    x0.zip_with(eps, |x, e| a * x + s * e)
}

/// Batched [`q_sample`] with one timestep per leading-axis item.
pub fn q_sample_batch(schedule: &NoiseSchedule, x0: &Tensor, ts: &[usize], eps: &Tensor) -> Result<Tensor> {
    x0.expect_same_shape("q_sample", eps)?;
    if ts.len() != x0.shape()[0] {
        return Err(Error::invalid(format!("{} timesteps for batch {}", ts.len(), x0.shape()[0])));
    }
    let per = x0.numel() / ts.len();
    let mut out = x0.clone();
    for (n, &t) in ts.iter().enumerate() {
        schedule.check_t(t)?;
        let (a, s) = (schedule.alpha_bar(t).sqrt() as f32, schedule.sigma(t) as f32);
        let e = &eps.data()[n * per..(n + 1) * per];
        for (o, &ev) in out.data_mut()[n * per..(n + 1) * per].iter_mut().zip(e) {
            *o = a * *o + s * ev;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_first_step() {
        let s = NoiseSchedule::new(ScheduleKind::Linear, 1000).unwrap();
        assert!((s.alpha_bar(1) - (1.0 - 1e-4)).abs() < 1e-15);
        assert!((s.beta(1000) - 2e-2).abs() < 1e-15);
    }

    #[test]
    fn rejects_short_schedules() {
        assert!(NoiseSchedule::new(ScheduleKind::Cosine, 1).is_err());
        assert!(NoiseSchedule::new(ScheduleKind::Linear, 2).is_ok());
    }

    #[test]
    fn cosine_matches_closed_form() {
        let t_max = 100usize;
        let s = NoiseSchedule::new(ScheduleKind::Cosine, t_max).unwrap();
        // Written directly from the squared-cosine curve: abar(t) = f(t) / f(0).
        let f = |t: f64| (((t / 100.0) + 0.008) / 1.008 * std::f64::consts::PI / 2.0).cos().powi(2);
        for t in 1..t_max {
            let expect = f(t as f64) / f(0.0);
            assert!((s.alpha_bar(t) - expect).abs() < 1e-10, "t={t}: {} vs {expect}", s.alpha_bar(t));
        }
        // f(T) = 0, so the last beta is clipped and abar(T) keeps a 1e-3 factor.
        let last = f((t_max - 1) as f64) / f(0.0) * (1.0 - 0.999);
        assert!((s.alpha_bar(t_max) - last).abs() < 1e-12);
        assert!(s.alpha_bar(t_max) > 0.0);
    }

    #[test]
    fn q_sample_with_zero_noise_scales_signal() {
        let s = NoiseSchedule::new(ScheduleKind::Cosine, 50).unwrap();
        let x0 = Tensor::from_vec(&[4], vec![0.5, -1.0, 0.25, 1.0]).unwrap();
        let zero = Tensor::zeros(&[4]);
        let out = q_sample(&s, &x0, 20, &zero).unwrap();
        let a = s.alpha_bar(20).sqrt() as f32;
        assert_eq!(out.data(), x0.map(|v| a * v).data());
        assert!(q_sample(&s, &x0, 0, &zero).is_err());
        assert!(q_sample(&s, &x0, 51, &zero).is_err());
    }

    #[test]
    fn q_sample_at_the_end_is_mostly_noise() {
        let s = NoiseSchedule::new(ScheduleKind::Cosine, 200).unwrap();
        let x0 = Tensor::from_vec(&[3], vec![1.0, -1.0, 0.5]).unwrap();
        let eps = Tensor::from_vec(&[3], vec![0.3, -0.7, 1.2]).unwrap();
        let out = q_sample(&s, &x0, 200, &eps).unwrap();
        for (o, e) in out.data().iter().zip(eps.data()) {
            assert!((o - e).abs() < 0.01);
        }
    }

    proptest::proptest! {
        #[test]
        fn monotone_signal_and_snr(steps in 2usize..1500, cosine in proptest::bool::ANY) {
            let kind = if cosine { ScheduleKind::Cosine } else { ScheduleKind::Linear };
            let s = NoiseSchedule::new(kind, steps).unwrap();
            let mut prev = 1.0;
            let mut prev_snr = f64::INFINITY;
            for t in 1..=steps {
                let ab = s.alpha_bar(t);
                proptest::prop_assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
                proptest::prop_assert!(ab < prev && ab > 0.0);
                let snr = ab / (1.0 - ab);
                proptest::prop_assert!(snr < prev_snr);
                prev = ab;
                prev_snr = snr;
            }
        }
    }
}
