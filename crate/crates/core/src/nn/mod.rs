//! Layers and the two noise-prediction networks: a small U-Net for images and an MLP for
//! low-dimensional point data.

mod mlp;
mod unet;

pub use mlp::{MlpConfig, MlpDenoiser};
pub use unet::{UNet, UNetConfig};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensorgrad::checkpoint::Metadata;
use crate::tensorgrad::{Graph, ParamId, ParamStore, Scalar, Tensor, Var};

/// Group count for every normalization layer.
pub const NORM_GROUPS: usize = 4;

#[derive(Clone, Debug)]
pub struct Conv2d {
    weight: ParamId,
    bias: ParamId,
}

impl Conv2d {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        zero_init: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = (cin * kernel * kernel) as f64;
        let w = if zero_init {
            Tensor::zeros(&[cout, cin, kernel, kernel])
        } else {
            Tensor::randn(&[cout, cin, kernel, kernel], fan_in.sqrt().recip(), rng)
        };
        Conv2d {
            weight: store.insert(format!("{name}.weight"), w),
            bias: store.insert(format!("{name}.bias"), Tensor::zeros(&[cout])),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, pv: &[Var], x: Var) -> Result<Var> {
        g.conv2d(x, pv[self.weight.0], Some(pv[self.bias.0]))
    }
}

/// `y = x W + b` with `W [in, out]`.
#[derive(Clone, Debug)]
pub struct Linear {
    weight: ParamId,
    bias: ParamId,
}

impl Linear {
    pub fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        zero_init: bool,
        rng: &mut R,
    ) -> Self {
        let w = if zero_init {
            Tensor::zeros(&[fan_in, fan_out])
        } else {
            Tensor::randn(&[fan_in, fan_out], (fan_in as f64).sqrt().recip(), rng)
        };
        Linear {
            weight: store.insert(format!("{name}.weight"), w),
            bias: store.insert(format!("{name}.bias"), Tensor::zeros(&[fan_out])),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, pv: &[Var], x: Var) -> Result<Var> {
        let y = g.matmul(x, pv[self.weight.0])?;
        g.bias_add(y, pv[self.bias.0])
    }
}

#[derive(Clone, Debug)]
pub struct GroupNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl GroupNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, channels: usize) -> Self {
        GroupNorm {
            gamma: store.insert(format!("{name}.gamma"), Tensor::full(&[channels], S::one())),
            beta: store.insert(format!("{name}.beta"), Tensor::zeros(&[channels])),
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, pv: &[Var], x: Var) -> Result<Var> {
        g.group_norm(x, pv[self.gamma.0], pv[self.beta.0], NORM_GROUPS)
    }
}

/// Sinusoidal features of integer timesteps, `[N, dim]`: sines in the first half, cosines in
/// the second.
pub fn timestep_embedding<S: Scalar>(t: &[usize], dim: usize) -> Tensor<S> {
    let half = dim / 2;
    let mut data = Vec::with_capacity(t.len() * dim);
    for &step in t {
        let row_start = data.len();
        for i in 0..half {
            let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
            data.push(S::from_f64((step as f64 * freq).sin()));
        }
        for i in 0..half {
            let freq = (-(10_000f64).ln() * i as f64 / half as f64).exp();
            data.push(S::from_f64((step as f64 * freq).cos()));
        }
        data.resize(row_start + dim, S::zero());
    }
    Tensor::from_vec(&[t.len(), dim], data).expect("embedding shape")
}

/// A network mapping a noised input and its timesteps to a noise estimate.
pub trait NoisePredictor<S: Scalar = f32> {
    fn params(&self) -> &ParamStore<S>;
    fn params_mut(&mut self) -> &mut ParamStore<S>;

    /// Records the forward pass. `pv` holds the parameter vars from [`ParamStore::attach`].
    fn forward(&self, g: &mut Graph<S>, pv: &[Var], x: Var, t: &[usize]) -> Result<Var>;

    /// Shape of one input item (without the batch axis).
    fn input_item_shape(&self) -> Option<Vec<usize>> {
        None
    }

    fn in_channels(&self) -> usize;
    fn out_channels(&self) -> usize;

    /// Forward pass without gradient tracking.
    fn predict(&self, x: &Tensor<S>, t: &[usize]) -> Result<Tensor<S>> {
        if x.shape()[0] != t.len() {
            return Err(Error::invalid(format!("batch {} with {} timesteps", x.shape()[0], t.len())));
        }
        let mut g = Graph::new();
        let pv = self.params().attach(&mut g, false);
        let xv = g.constant(x.clone());
        let out = self.forward(&mut g, &pv, xv, t)?;
        Ok(g.value(out).clone())
    }
}

/// Either of the two shipped architectures, with enough metadata to rebuild it from a
/// checkpoint.
#[derive(Clone, Debug)]
pub enum Network {
    UNet(UNet<f32>),
    Mlp(MlpDenoiser<f32>),
}

impl Network {
    pub fn describe(&self) -> Metadata {
        match self {
            Network::UNet(u) => u.config().to_metadata(),
            Network::Mlp(m) => m.config().to_metadata(),
        }
    }

    /// Rebuilds the architecture named in `meta` and loads `params` into it.
    pub fn from_checkpoint(meta: &Metadata, params: &ParamStore<f32>) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let mut net = match meta.get("arch").map(String::as_str) {
            Some("unet") => Network::UNet(UNet::new(UNetConfig::from_metadata(meta)?, &mut rng)?),
            Some("mlp") => Network::Mlp(MlpDenoiser::new(MlpConfig::from_metadata(meta)?, &mut rng)?),
            other => return Err(Error::Checkpoint(format!("unknown architecture {other:?}"))),
        };
        net.params_mut().load_from(params)?;
        Ok(net)
    }
}

impl NoisePredictor<f32> for Network {
    fn params(&self) -> &ParamStore<f32> {
        match self {
            Network::UNet(u) => u.params(),
            Network::Mlp(m) => m.params(),
        }
    }
    fn params_mut(&mut self) -> &mut ParamStore<f32> {
        match self {
            Network::UNet(u) => u.params_mut(),
            Network::Mlp(m) => m.params_mut(),
        }
    }
    fn forward(&self, g: &mut Graph<f32>, pv: &[Var], x: Var, t: &[usize]) -> Result<Var> {
        match self {
            Network::UNet(u) => u.forward(g, pv, x, t),
            Network::Mlp(m) => m.forward(g, pv, x, t),
        }
    }
    fn in_channels(&self) -> usize {
        match self {
            Network::UNet(u) => u.in_channels(),
            Network::Mlp(m) => m.in_channels(),
        }
    }
    fn out_channels(&self) -> usize {
        match self {
            Network::UNet(u) => u.out_channels(),
            Network::Mlp(m) => m.out_channels(),
        }
    }
}

pub(crate) fn meta_usize(meta: &Metadata, key: &str) -> Result<usize> {
    meta.get(key)
        .ok_or_else(|| Error::Checkpoint(format!("missing metadata key {key}")))?
        .parse()
        .map_err(|_| Error::Checkpoint(format!("metadata key {key} is not an integer")))
}
