use rand::Rng;

use super::{meta_usize, timestep_embedding, Conv2d, GroupNorm, Linear, NoisePredictor, NORM_GROUPS};
use crate::error::{Error, Result};
use crate::tensorgrad::checkpoint::Metadata;
use crate::tensorgrad::{Graph, ParamStore, Scalar, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Channel width per resolution level, finest first.
    pub widths: Vec<usize>,
    pub time_dim: usize,
}

impl UNetConfig {
    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.is_empty() || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::invalid(format!("unet config {self:?}")));
        }
        if let Some(w) = self.widths.iter().find(|&&w| w == 0 || w % NORM_GROUPS != 0) {
            return Err(Error::invalid(format!("unet width {w} must be a positive multiple of {NORM_GROUPS}")));
        }
        if self.time_dim < 2 || self.time_dim % 2 != 0 {
            return Err(Error::invalid(format!("time_dim {} must be even", self.time_dim)));
        }
        Ok(())
    }

    pub fn to_metadata(&self) -> Metadata {
        let mut m = Metadata::new();
        m.insert("arch".into(), "unet".into());
        m.insert("in_channels".into(), self.in_channels.to_string());
        m.insert("out_channels".into(), self.out_channels.to_string());
        m.insert("widths".into(), self.widths.iter().map(|w| w.to_string()).collect::<Vec<_>>().join(","));
        m.insert("time_dim".into(), self.time_dim.to_string());
        m
    }

    pub fn from_metadata(meta: &Metadata) -> Result<Self> {
        let widths = meta
            .get("widths")
            .ok_or_else(|| Error::Checkpoint("missing widths".into()))?
            .split(',')
            .map(|w| w.trim().parse().map_err(|_| Error::Checkpoint(format!("bad width {w:?}"))))
            .collect::<Result<Vec<usize>>>()?;
        Ok(UNetConfig {
            in_channels: meta_usize(meta, "in_channels")?,
            out_channels: meta_usize(meta, "out_channels")?,
            widths,
            time_dim: meta_usize(meta, "time_dim")?,
        })
    }
}

#[derive(Clone, Debug)]
struct ResBlock {
    norm1: GroupNorm,
    conv1: Conv2d,
    time_proj: Linear,
    norm2: GroupNorm,
    conv2: Conv2d,
}

impl ResBlock {
    fn new<S: Scalar, R: Rng>(store: &mut ParamStore<S>, name: &str, ch: usize, time_dim: usize, rng: &mut R) -> Self {
        ResBlock {
            norm1: GroupNorm::new(store, &format!("{name}.norm1"), ch),
            conv1: Conv2d::new(store, &format!("{name}.conv1"), ch, ch, 3, false, rng),
            time_proj: Linear::new(store, &format!("{name}.time"), time_dim, ch, false, rng),
            norm2: GroupNorm::new(store, &format!("{name}.norm2"), ch),
            conv2: Conv2d::new(store, &format!("{name}.conv2"), ch, ch, 3, false, rng),
        }
    }

    fn forward<S: Scalar>(&self, g: &mut Graph<S>, pv: &[Var], x: Var, temb: Var) -> Result<Var> {
        let h = self.norm1.forward(g, pv, x)?;
        let h = g.silu(h);
        let h = self.conv1.forward(g, pv, h)?;
        let t = self.time_proj.forward(g, pv, temb)?;
        let h = g.channel_add(h, t)?;
        let h = self.norm2.forward(g, pv, h)?;
        let h = g.silu(h);
        let h = self.conv2.forward(g, pv, h)?;
        g.add(x, h)
    }
}

#[derive(Clone, Debug)]
struct Down {
    /// Widening convolution applied after pooling (absent at the finest level).
    entry: Option<Conv2d>,
    block: ResBlock,
}

#[derive(Clone, Debug)]
struct Up {
    merge: Conv2d,
    block: ResBlock,
}

/// U-Net noise predictor with residual blocks, average-pool downsampling, nearest
/// upsampling and concatenated skips. Timestep features enter every block as a
/// per-channel shift.
#[derive(Clone, Debug)]
pub struct UNet<S: Scalar = f32> {
    config: UNetConfig,
    params: ParamStore<S>,
    time1: Linear,
    time2: Linear,
    input: Conv2d,
    downs: Vec<Down>,
    ups: Vec<Up>,
    out_norm: GroupNorm,
    output: Conv2d,
}

impl<S: Scalar> UNet<S> {
    /// Builds a freshly initialized network. The output convolution starts at zero, so an
    /// untrained network predicts zero noise.
    pub fn new<R: Rng>(config: UNetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new();
        let td = config.time_dim;
        let time1 = Linear::new(&mut ps, "time.0", td, td, false, rng);
        let time2 = Linear::new(&mut ps, "time.1", td, td, false, rng);
        let w = &config.widths;
        let input = Conv2d::new(&mut ps, "input", config.in_channels, w[0], 3, false, rng);
        let downs = (0..w.len())
            .map(|i| Down {
                entry: (i > 0).then(|| Conv2d::new(&mut ps, &format!("down{i}.entry"), w[i - 1], w[i], 3, false, rng)),
                block: ResBlock::new(&mut ps, &format!("down{i}.block"), w[i], td, rng),
            })
            .collect();
        let ups = (0..w.len().saturating_sub(1))
            .rev()
            .map(|i| Up {
                merge: Conv2d::new(&mut ps, &format!("up{i}.merge"), w[i + 1] + w[i], w[i], 3, false, rng),
                block: ResBlock::new(&mut ps, &format!("up{i}.block"), w[i], td, rng),
            })
            .collect();
        let out_norm = GroupNorm::new(&mut ps, "out.norm", w[0]);
        let output = Conv2d::new(&mut ps, "out.conv", w[0], config.out_channels, 3, true, rng);
        Ok(UNet { config, params: ps, time1, time2, input, downs, ups, out_norm, output })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    /// Spatial extents must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.config.levels() - 1)
    }
}

impl<S: Scalar> NoisePredictor<S> for UNet<S> {
    fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    fn in_channels(&self) -> usize {
        self.config.in_channels
    }

    fn out_channels(&self) -> usize {
        self.config.out_channels
    }

    fn forward(&self, g: &mut Graph<S>, pv: &[Var], x: Var, t: &[usize]) -> Result<Var> {
        let s = g.shape(x).to_vec();
        let m = self.spatial_multiple();
        if s.len() != 4 || s[1] != self.config.in_channels || s[2] % m != 0 || s[3] % m != 0 || s[0] != t.len() {
            return Err(Error::ShapeMismatch { op: "unet input", shapes: vec![s, vec![t.len(), self.config.in_channels]] });
        }
        let temb = g.constant(timestep_embedding(t, self.config.time_dim));
        let temb = self.time1.forward(g, pv, temb)?;
        let temb = g.silu(temb);
        let temb = self.time2.forward(g, pv, temb)?;
        let temb = g.silu(temb);

        let mut h = self.input.forward(g, pv, x)?;
        let mut skips = Vec::with_capacity(self.downs.len());
        for (i, down) in self.downs.iter().enumerate() {
            if let Some(entry) = &down.entry {
                debug_assert!(i > 0);
                h = g.avg_pool2(h)?;
                h = entry.forward(g, pv, h)?;
            }
            h = down.block.forward(g, pv, h, temb)?;
            skips.push(h);
        }
        skips.pop();
        for up in &self.ups {
            h = g.upsample2(h)?;
            let skip = skips.pop().expect("one skip per up level");
            h = g.concat(h, skip)?;
            h = up.merge.forward(g, pv, h)?;
            h = up.block.forward(g, pv, h, temb)?;
        }
        let h = self.out_norm.forward(g, pv, h)?;
        let h = g.silu(h);
        self.output.forward(g, pv, h)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensorgrad::Tensor;

    fn cfg() -> UNetConfig {
        UNetConfig { in_channels: 2, out_channels: 1, widths: vec![4, 8, 8], time_dim: 8 }
    }

    #[test]
    fn output_shape_and_zero_init() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = UNet::<f32>::new(cfg(), &mut rng).unwrap();
        let x = Tensor::randn(&[3, 2, 8, 8], 1.0, &mut rng);
        let y = net.predict(&x, &[1, 5, 9]).unwrap();
        assert_eq!(y.shape(), &[3, 1, 8, 8]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = UNet::<f32>::new(cfg(), &mut rng).unwrap();
        assert!(net.predict(&Tensor::zeros(&[1, 2, 6, 6]), &[1]).is_err());
        assert!(net.predict(&Tensor::zeros(&[1, 1, 8, 8]), &[1]).is_err());
        assert!(UNet::<f32>::new(UNetConfig { widths: vec![6], ..cfg() }, &mut rng).is_err());
    }

    #[test]
    fn metadata_roundtrip() {
        let c = cfg();
        assert_eq!(UNetConfig::from_metadata(&c.to_metadata()).unwrap(), c);
    }
}
