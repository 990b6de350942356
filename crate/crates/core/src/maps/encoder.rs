use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{adam_step, AdamConfig, AdamState, BoundParams, ParamId, ParamSet, Tape, Tensor, Var};

use super::SpatialMap;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinyAeConfig {
    /// Channels the encoder consumes; single-channel inputs are replicated.
    pub in_channels: usize,
    pub latent_channels: usize,
    pub width: usize,
}

impl Default for TinyAeConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            latent_channels: 4,
            width: 16,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvParams {
    w: ParamId,
    b: ParamId,
    stride: usize,
}

/// Convolutional autoencoder with a ×4 spatial reduction.
#[derive(Clone, Debug)]
pub struct TinyAe {
    config: TinyAeConfig,
    params: ParamSet<f32>,
    encoder: Vec<ConvParams>,
    decoder: Vec<ConvParams>,
}

pub const AE_DOWNSAMPLE: usize = 4;

impl TinyAe {
    pub fn new<R: Rng>(config: TinyAeConfig, rng: &mut R) -> Result<Self> {
        if config.in_channels == 0 || config.latent_channels == 0 || config.width == 0 {
            return Err(Error::Config("tiny_ae: channel counts must be positive".into()));
        }
        let mut ps = ParamSet::new();
        let mut conv = |name: &str, cin: usize, cout: usize, k: usize, stride: usize| ConvParams {
            w: ps.add_uniform(format!("{name}.weight"), [cout, cin, k, k], cin * k * k, rng),
            b: ps.add(format!("{name}.bias"), Tensor::zeros([cout])),
            stride,
        };
        let (c, l, w) = (config.in_channels, config.latent_channels, config.width);
        let encoder = vec![
            conv("enc.0", c, w, 3, 1),
            conv("enc.1", w, w, 3, 2),
            conv("enc.2", w, w, 3, 2),
            conv("enc.3", w, l, 1, 1),
        ];
        let decoder = vec![
            conv("dec.0", l, w, 1, 1),
            conv("dec.1", w, w, 3, 1),
            conv("dec.2", w, w, 3, 1),
            conv("dec.3", w, c, 3, 1),
        ];
        Ok(Self {
            config,
            params: ps,
            encoder,
            decoder,
        })
    }

    pub fn config(&self) -> &TinyAeConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<f32> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<f32> {
        &mut self.params
    }

    fn apply<'t>(p: &BoundParams<'t, f32>, c: ConvParams, x: Var<'t, f32>) -> Result<Var<'t, f32>> {
        let k = p.get(c.w).shape()[2];
        x.conv2d(p.get(c.w), p.get(c.b), c.stride, k / 2)
    }

    fn encode_var<'t>(&self, p: &BoundParams<'t, f32>, x: Var<'t, f32>) -> Result<Var<'t, f32>> {
        let (_, _, h, w) = x.value().dims4()?;
        if h % AE_DOWNSAMPLE != 0 || w % AE_DOWNSAMPLE != 0 {
            return Err(shape_err!("tiny_ae: spatial size {h}x{w} not divisible by {AE_DOWNSAMPLE}"));
        }
        let mut x = x;
        for (i, &c) in self.encoder.iter().enumerate() {
            x = Self::apply(p, c, x)?;
            if i + 1 < self.encoder.len() {
                x = x.silu()?;
            }
        }
        Ok(x)
    }

    fn decode_var<'t>(&self, p: &BoundParams<'t, f32>, z: Var<'t, f32>) -> Result<Var<'t, f32>> {
        let mut x = Self::apply(p, self.decoder[0], z)?.silu()?;
        for &c in &self.decoder[1..3] {
            let (_, _, h, w) = x.value().dims4()?;
            x = Self::apply(p, c, x.resize_nearest(2 * h, 2 * w)?)?.silu()?;
        }
        Self::apply(p, self.decoder[3], x)?.sigmoid()
    }

    fn replicate(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let s = x.shape();
        if s.len() != 3 {
            return Err(shape_err!("tiny_ae: expected [C, H, W], got {s:?}"));
        }
        let c = self.config.in_channels;
        if s[0] == c {
            return x.clone().reshape([1, c, s[1], s[2]]);
        }
        if s[0] != 1 {
            return Err(shape_err!("tiny_ae: {} input channels, expected 1 or {c}", s[0]));
        }
        let plane = s[1] * s[2];
        Tensor::new([1, c, s[1], s[2]], (0..c * plane).map(|k| x.data()[k % plane]).collect())
    }

    /// `[C, H, W]` (or `[1, H, W]`, replicated) to `[latent, H/4, W/4]`.
    pub fn encode(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let z = self.encode_var(&p, tape.constant(self.replicate(x)?))?.to_tensor();
        let s = z.shape()[1..].to_vec();
        z.reshape(s)
    }

    /// `[latent, h, w]` to `[C, 4h, 4w]`.
    pub fn decode(&self, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        let s = z.shape();
        if s.len() != 3 || s[0] != self.config.latent_channels {
            return Err(shape_err!("tiny_ae: latent {s:?} has the wrong layout"));
        }
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let x = self.decode_var(&p, tape.constant(z.clone().reshape([1, s[0], s[1], s[2]])?))?;
        let x = x.to_tensor();
        let s = x.shape()[1..].to_vec();
        x.reshape(s)
    }
}

/// The mapping from image space into the space diffusion runs in.
#[derive(Clone, Debug)]
pub enum Encoder {
    Identity { channels: usize },
    TinyAe(TinyAe),
}

impl Encoder {
    pub fn latent_channels(&self) -> usize {
        match self {
            Encoder::Identity { channels } => *channels,
            Encoder::TinyAe(ae) => ae.config.latent_channels,
        }
    }

    pub fn downsample(&self) -> usize {
        match self {
            Encoder::Identity { .. } => 1,
            Encoder::TinyAe(_) => AE_DOWNSAMPLE,
        }
    }

    pub fn encode(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        match self {
            Encoder::Identity { .. } => Ok(x.clone()),
            Encoder::TinyAe(ae) => ae.encode(x),
        }
    }

    pub fn decode(&self, z: &Tensor<f32>) -> Result<Tensor<f32>> {
        match self {
            Encoder::Identity { .. } => Ok(z.clone()),
            Encoder::TinyAe(ae) => ae.decode(z),
        }
    }
}

pub fn encode_map(map: &SpatialMap, encoder: &Encoder) -> Result<Tensor<f32>> {
    encoder.encode(map.data())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinyAeTrainConfig {
    pub ae: TinyAeConfig,
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for TinyAeTrainConfig {
    fn default() -> Self {
        Self {
            ae: TinyAeConfig::default(),
            steps: 1500,
            batch_size: 16,
            adam: AdamConfig {
                lr: 2e-3,
                ..AdamConfig::default()
            },
        }
    }
}

/// Trains an autoencoder on `[1, H, W]` or `[C, H, W]` images by squared
/// reconstruction error; returns it with the per-step loss.
pub fn train_tiny_ae<R: Rng>(
    images: &[&Tensor<f32>],
    config: &TinyAeTrainConfig,
    rng: &mut R,
) -> Result<(TinyAe, Vec<f64>)> {
    if images.is_empty() || config.batch_size == 0 {
        return Err(Error::Config("train_tiny_ae: needs images and a positive batch size".into()));
    }
    let mut ae = TinyAe::new(config.ae.clone(), rng)?;
    let inputs = images.iter().map(|x| ae.replicate(x)).collect::<Result<Vec<_>>>()?;
    let mut state = AdamState::new(ae.params.tensors());
    let mut log = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let picked: Vec<Tensor<f32>> = (0..config.batch_size)
            .map(|_| {
                let x = &inputs[rng.random_range(0..inputs.len())];
                x.clone().reshape(x.shape()[1..].to_vec())
            })
            .collect::<Result<_>>()?;
        let batch = Tensor::stack(&picked.iter().collect::<Vec<_>>())?;
        let tape = Tape::new();
        let p = ae.params.bind(&tape, true);
        let x = tape.constant(batch.clone());
        let recon = ae.decode_var(&p, ae.encode_var(&p, x)?)?;
        let loss = recon.reduce_sq_err(tape.constant(batch))?;
        log.push(loss.value().item()? as f64);
        let mut grads = tape.backward(loss)?;
        let g = p.grads(&mut grads);
        drop(p);
        adam_step(ae.params.tensors_mut(), &g, &mut state, &config.adam)?;
    }
    Ok((ae, log))
}
