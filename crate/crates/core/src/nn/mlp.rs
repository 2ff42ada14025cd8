use rand::Rng;

use super::{meta_usize, timestep_embedding, Linear, NoisePredictor};
use crate::error::{Error, Result};
use crate::tensorgrad::checkpoint::Metadata;
use crate::tensorgrad::{Graph, ParamStore, Scalar, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct MlpConfig {
    pub dim: usize,
    pub hidden: usize,
    pub depth: usize,
    pub time_dim: usize,
}

impl MlpConfig {
    pub fn to_metadata(&self) -> Metadata {
        let mut m = Metadata::new();
        m.insert("arch".into(), "mlp".into());
        m.insert("dim".into(), self.dim.to_string());
        m.insert("hidden".into(), self.hidden.to_string());
        m.insert("depth".into(), self.depth.to_string());
        m.insert("time_dim".into(), self.time_dim.to_string());
        m
    }

    pub fn from_metadata(meta: &Metadata) -> Result<Self> {
        Ok(MlpConfig {
            dim: meta_usize(meta, "dim")?,
            hidden: meta_usize(meta, "hidden")?,
            depth: meta_usize(meta, "depth")?,
            time_dim: meta_usize(meta, "time_dim")?,
        })
    }
}

/// Noise predictor for `[N, dim]` point data. Each hidden layer receives its own projection
/// of the timestep features.
#[derive(Clone, Debug)]
pub struct MlpDenoiser<S: Scalar = f32> {
    config: MlpConfig,
    params: ParamStore<S>,
    layers: Vec<(Linear, Linear)>,
    output: Linear,
}

impl<S: Scalar> MlpDenoiser<S> {
    pub fn new<R: Rng>(config: MlpConfig, rng: &mut R) -> Result<Self> {
        if config.dim == 0 || config.hidden == 0 || config.depth == 0 || config.time_dim % 2 != 0 {
            return Err(Error::invalid(format!("mlp config {config:?}")));
        }
        let mut ps = ParamStore::new();
        let layers = (0..config.depth)
            .map(|i| {
                let fan_in = if i == 0 { config.dim } else { config.hidden };
                (
                    Linear::new(&mut ps, &format!("layer{i}"), fan_in, config.hidden, false, rng),
                    Linear::new(&mut ps, &format!("layer{i}.time"), config.time_dim, config.hidden, false, rng),
                )
            })
            .collect();
        let output = Linear::new(&mut ps, "out", config.hidden, config.dim, true, rng);
        Ok(MlpDenoiser { config, params: ps, layers, output })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }
}

impl<S: Scalar> NoisePredictor<S> for MlpDenoiser<S> {
    fn params(&self) -> &ParamStore<S> {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }
    fn in_channels(&self) -> usize {
        self.config.dim
    }
    fn out_channels(&self) -> usize {
        self.config.dim
    }

    fn forward(&self, g: &mut Graph<S>, pv: &[Var], x: Var, t: &[usize]) -> Result<Var> {
        let s = g.shape(x);
        if s != [t.len(), self.config.dim] {
            return Err(Error::ShapeMismatch { op: "mlp input", shapes: vec![s.to_vec(), vec![t.len(), self.config.dim]] });
        }
        let temb = g.constant(timestep_embedding(t, self.config.time_dim));
        let mut h = x;
        for (layer, time) in &self.layers {
            let a = layer.forward(g, pv, h)?;
            let b = time.forward(g, pv, temb)?;
            let z = g.add(a, b)?;
            h = g.silu(z);
        }
        self.output.forward(g, pv, h)
    }
}
