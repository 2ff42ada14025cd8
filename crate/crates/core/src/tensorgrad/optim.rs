use super::params::ParamStore;
use super::scalar::Scalar;
use crate::error::{Error, Result};

/// AdamW with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Result<Self> {
        Self::with_betas(learning_rate, weight_decay, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(learning_rate: f64, weight_decay: f64, beta1: f64, beta2: f64, epsilon: f64) -> Result<Self> {
        if !(learning_rate > 0.0) || !(weight_decay >= 0.0) {
            return Err(Error::invalid(format!("adamw: lr={learning_rate}, weight_decay={weight_decay}")));
        }
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(epsilon > 0.0) {
            return Err(Error::invalid(format!("adamw: beta1={beta1}, beta2={beta2}, eps={epsilon}")));
        }
        Ok(AdamW {
            learning_rate,
            weight_decay,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.first_moment, &self.second_moment)
    }

    /// Applies one update using the gradients stored on each parameter. Parameters without a
    /// gradient are treated as having a zero gradient. Nothing is modified if any gradient is
    /// non-finite.
    pub fn step<S: Scalar>(&mut self, params: &mut ParamStore<S>) -> Result<()> {
        for (name, t) in params.iter() {
            if let Some(g) = &t.grad {
                if g.len() != t.numel() {
                    return Err(Error::ShapeMismatch { op: "adamw", shapes: vec![t.shape().to_vec(), vec![g.len()]] });
                }
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { name: format!("grad of {name}"), step: self.step as usize });
                }
            }
        }
        if self.first_moment.is_empty() {
            self.first_moment = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
            self.second_moment = self.first_moment.clone();
        } else if self.first_moment.len() != params.len()
            || self.first_moment.iter().zip(params.iter()).any(|(m, (_, t))| m.len() != t.numel())
        {
            return Err(Error::invalid("adamw: parameter set changed between steps"));
        }

        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (lr, wd, b1, b2, eps) = (self.learning_rate, self.weight_decay, self.beta1, self.beta2, self.epsilon);
        for (idx, (_, p)) in params.iter_mut().enumerate() {
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            let grad = p.grad.take();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let g = grad.as_ref().map_or(0.0, |g| g[j].as_f64());
                let mut x = w.as_f64();
                x -= lr * wd * x;
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                x -= lr * m_hat / (v_hat.sqrt() + eps);
                *w = S::from_f64(x);
            }
            p.grad = grad;
        }
        Ok(())
    }
}

/// Linear warmup followed by half-cosine decay to zero.
pub fn cosine_lr(step: usize, total_steps: usize, base_lr: f64, warmup_fraction: f64) -> f64 {
    let step = if step > total_steps {
        log::warn!("cosine_lr: step {step} beyond total {total_steps}; clamping");
        total_steps
    } else {
        step
    };
    let warmup = (warmup_fraction.clamp(0.0, 1.0) * total_steps as f64).floor() as usize;
    if step < warmup {
        return base_lr * step as f64 / warmup as f64;
    }
    let span = total_steps.saturating_sub(warmup);
    if span == 0 {
        return base_lr;
    }
    let progress = (step - warmup) as f64 / span as f64;
    (base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())).max(0.0)
}
