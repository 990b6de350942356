use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ops::layout::concat_channels;
use crate::tensor::{BoundParams, ParamId, ParamSet, Tape, Tensor, Var};

const GN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub base_width: usize,
    /// Number of 2× downsamplings; the network has `depth + 1` resolution levels.
    pub depth: usize,
    pub num_classes: usize,
    /// Upper bound on group-norm groups; the largest divisor of the channel count
    /// not exceeding it is used.
    pub max_groups: usize,
    /// Activations exposed as taps, in feature-stack order.
    pub tap_spec: Vec<String>,
}

impl UNetConfig {
    pub fn new(in_channels: usize, base_width: usize, depth: usize, num_classes: usize) -> Self {
        Self {
            in_channels,
            base_width,
            depth,
            num_classes,
            max_groups: 8,
            tap_spec: Self::default_taps(depth),
        }
    }

    /// One tap per resolution level on the way down, every middle-block
    /// activation, and one tap per level on the way up.
    pub fn default_taps(depth: usize) -> Vec<String> {
        let levels = depth + 1;
        (0..levels)
            .map(|i| format!("down.{i}"))
            .chain((0..3).map(|i| format!("mid.{i}")))
            .chain((0..levels).map(|i| format!("up.{i}")))
            .collect()
    }

    pub fn level_width(&self, level: usize) -> usize {
        if level == 0 {
            self.base_width
        } else {
            2 * self.base_width
        }
    }

    pub fn embed_width(&self) -> usize {
        4 * self.base_width
    }

    /// Channel count of a tap, or `None` if the identifier names no layer.
    pub fn tap_width(&self, tap: &str) -> Option<usize> {
        let (block, idx) = tap.split_once('.')?;
        let idx: usize = idx.parse().ok()?;
        let levels = self.depth + 1;
        match block {
            "down" if idx < levels => Some(self.level_width(idx)),
            "mid" if idx < 3 => Some(self.level_width(self.depth)),
            "up" if idx < levels => Some(self.level_width(self.depth - idx)),
            _ => None,
        }
    }

    /// Sum of tap channel widths, the channel count of a feature stack.
    pub fn feature_channels(&self) -> usize {
        self.tap_spec.iter().filter_map(|t| self.tap_width(t)).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.base_width == 0 || self.num_classes == 0 {
            return Err(Error::Config("unet: channel and class counts must be positive".into()));
        }
        if self.tap_spec.is_empty() {
            return Err(Error::Config("unet: tap_spec is empty".into()));
        }
        if let Some(bad) = self.tap_spec.iter().find(|t| self.tap_width(t).is_none()) {
            return Err(Error::Config(format!("unet: tap `{bad}` names no layer")));
        }
        Ok(())
    }
}

fn groups_for(channels: usize, max_groups: usize) -> usize {
    (1..=max_groups.min(channels))
        .rev()
        .find(|g| channels % g == 0)
        .unwrap_or(1)
}

#[derive(Clone, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
    stride: usize,
    pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    fn new<T: Scalar, R: Rng>(
        ps: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        zero: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = cin * k * k;
        let w = if zero {
            ps.add(format!("{name}.weight"), Tensor::zeros([cout, cin, k, k]))
        } else {
            ps.add_uniform(format!("{name}.weight"), [cout, cin, k, k], fan_in, rng)
        };
        let b = ps.add(format!("{name}.bias"), Tensor::zeros([cout]));
        Self {
            w,
            b,
            stride,
            pad: k / 2,
        }
    }

    fn forward<'t, T: Scalar>(&self, p: &BoundParams<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.conv2d(p.get(self.w), p.get(self.b), self.stride, self.pad)
    }
}

#[derive(Clone, Debug)]
struct Norm {
    gamma: ParamId,
    beta: ParamId,
    groups: usize,
}

impl Norm {
    fn new<T: Scalar>(ps: &mut ParamSet<T>, name: &str, channels: usize, max_groups: usize) -> Self {
        Self {
            gamma: ps.add(format!("{name}.gamma"), Tensor::ones([channels])),
            beta: ps.add(format!("{name}.beta"), Tensor::zeros([channels])),
            groups: groups_for(channels, max_groups),
        }
    }

    fn forward<'t, T: Scalar>(&self, p: &BoundParams<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.group_norm(self.groups, p.get(self.gamma), p.get(self.beta), T::lit(GN_EPS))
    }
}

#[derive(Clone, Debug)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

impl Dense {
    fn new<T: Scalar, R: Rng>(ps: &mut ParamSet<T>, name: &str, din: usize, dout: usize, rng: &mut R) -> Self {
        Self {
            w: ps.add_uniform(format!("{name}.weight"), [dout, din], din, rng),
            b: ps.add(format!("{name}.bias"), Tensor::zeros([dout])),
        }
    }

    fn forward<'t, T: Scalar>(&self, p: &BoundParams<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        x.linear(p.get(self.w), Some(p.get(self.b)))
    }
}

/// GN → SiLU → conv, step/class embedding added, GN → SiLU → conv, plus skip.
#[derive(Clone, Debug)]
struct ResBlock {
    norm1: Norm,
    conv1: Conv,
    emb: Dense,
    norm2: Norm,
    conv2: Conv,
    skip: Option<Conv>,
}

impl ResBlock {
    fn new<T: Scalar, R: Rng>(
        ps: &mut ParamSet<T>,
        name: &str,
        cin: usize,
        cout: usize,
        emb: usize,
        max_groups: usize,
        rng: &mut R,
    ) -> Self {
        Self {
            norm1: Norm::new(ps, &format!("{name}.norm1"), cin, max_groups),
            conv1: Conv::new(ps, &format!("{name}.conv1"), cin, cout, 3, 1, false, rng),
            emb: Dense::new(ps, &format!("{name}.emb"), emb, cout, rng),
            norm2: Norm::new(ps, &format!("{name}.norm2"), cout, max_groups),
            conv2: Conv::new(ps, &format!("{name}.conv2"), cout, cout, 3, 1, false, rng),
            skip: (cin != cout).then(|| Conv::new(ps, &format!("{name}.skip"), cin, cout, 1, 1, false, rng)),
        }
    }

    fn forward<'t, T: Scalar>(
        &self,
        p: &BoundParams<'t, T>,
        x: Var<'t, T>,
        emb: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        let h = self.conv1.forward(p, self.norm1.forward(p, x)?.silu()?)?;
        let h = h.add_per_channel(self.emb.forward(p, emb)?)?;
        let h = self.conv2.forward(p, self.norm2.forward(p, h)?.silu()?)?;
        let skip = match &self.skip {
            Some(conv) => conv.forward(p, x)?,
            None => x,
        };
        h.add(skip)
    }
}

/// GN → SiLU → conv, used between the two middle residual blocks.
#[derive(Clone, Debug)]
struct Mix {
    norm: Norm,
    conv: Conv,
}

/// Noise-prediction network output: the prediction and, when requested, the
/// tapped activations in `tap_spec` order.
pub struct UNetOutput<'t, T> {
    pub eps: Var<'t, T>,
    pub taps: Vec<Var<'t, T>>,
}

/// Class-conditional U-Net `ε(z_t, t, c)`.
#[derive(Clone, Debug)]
pub struct UNet<T> {
    config: UNetConfig,
    params: ParamSet<T>,
    time1: Dense,
    time2: Dense,
    class_table: ParamId,
    conv_in: Conv,
    down: Vec<ResBlock>,
    downsample: Vec<Conv>,
    mid: (ResBlock, Mix, ResBlock),
    up: Vec<ResBlock>,
    norm_out: Norm,
    conv_out: Conv,
    tap_index: Vec<usize>,
}

impl<T: Scalar> UNet<T> {
    /// Fresh weights. The output convolution starts at zero, so an untrained
    /// network predicts zero noise.
    pub fn new<R: Rng>(config: UNetConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamSet::new();
        let c = &config;
        let emb = c.embed_width();
        let g = c.max_groups;
        let time1 = Dense::new(&mut ps, "time.lin1", c.base_width, emb, rng);
        let time2 = Dense::new(&mut ps, "time.lin2", emb, emb, rng);
        let class_table = ps.add("class.table", Tensor::randn([c.num_classes + 1, emb], rng).map(|v| v * T::lit(0.1)));
        let conv_in = Conv::new(&mut ps, "conv_in", c.in_channels, c.base_width, 3, 1, false, rng);

        let levels = c.depth + 1;
        let mut down = Vec::new();
        let mut downsample = Vec::new();
        let mut ch = c.base_width;
        for level in 0..levels {
            let out = c.level_width(level);
            down.push(ResBlock::new(&mut ps, &format!("down.{level}"), ch, out, emb, g, rng));
            ch = out;
            if level < c.depth {
                downsample.push(Conv::new(&mut ps, &format!("downsample.{level}"), ch, ch, 3, 2, false, rng));
            }
        }
        let mid = (
            ResBlock::new(&mut ps, "mid.0", ch, ch, emb, g, rng),
            Mix {
                norm: Norm::new(&mut ps, "mid.1.norm", ch, g),
                conv: Conv::new(&mut ps, "mid.1.conv", ch, ch, 3, 1, false, rng),
            },
            ResBlock::new(&mut ps, "mid.2", ch, ch, emb, g, rng),
        );
        let mut up = Vec::new();
        for (j, level) in (0..levels).rev().enumerate() {
            let out = c.level_width(level);
            up.push(ResBlock::new(&mut ps, &format!("up.{j}"), ch + out, out, emb, g, rng));
            ch = out;
        }
        let norm_out = Norm::new(&mut ps, "norm_out", ch, g);
        let conv_out = Conv::new(&mut ps, "conv_out", ch, c.in_channels, 3, 1, true, rng);

        let slots = UNetConfig::default_taps(c.depth);
        let tap_index = c
            .tap_spec
            .iter()
            .map(|t| slots.iter().position(|s| s == t).expect("validated tap"))
            .collect();
        Ok(Self {
            config,
            params: ps,
            time1,
            time2,
            class_table,
            conv_in,
            down,
            downsample,
            mid,
            up,
            norm_out,
            conv_out,
            tap_index,
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Sinusoidal embedding of raw step indices, `[N, base_width]`.
    fn step_embedding(&self, steps: &[usize]) -> Tensor<T> {
        let dim = self.config.base_width;
        let half = dim / 2;
        let mut out = Vec::with_capacity(steps.len() * dim);
        for &t in steps {
            let t = t as f64;
            let mut row = vec![0.0; dim];
            for i in 0..half {
                let freq = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
                row[i] = (t * freq).sin();
                row[half + i] = (t * freq).cos();
            }
            out.extend(row.into_iter().map(T::lit));
        }
        Tensor::new([steps.len(), dim], out).expect("embedding shape")
    }

    /// Runs the network on `z: [N, C, H, W]` at steps `steps[n]` with class
    /// `cond[n]` (`None` selects the unconditional token).
    pub fn forward<'t>(
        &self,
        p: &BoundParams<'t, T>,
        z: Var<'t, T>,
        steps: &[usize],
        cond: &[Option<usize>],
        collect_taps: bool,
    ) -> Result<UNetOutput<'t, T>> {
        let (n, c, h, w) = z.value().dims4()?;
        let cfg = &self.config;
        if c != cfg.in_channels {
            return Err(shape_err!("unet: input has {c} channels, expected {}", cfg.in_channels));
        }
        let align = 1 << cfg.depth;
        if h % align != 0 || w % align != 0 {
            return Err(shape_err!("unet: spatial size {h}x{w} not divisible by {align}"));
        }
        if steps.len() != n || cond.len() != n {
            return Err(shape_err!(
                "unet: batch of {n} with {} steps and {} class labels",
                steps.len(),
                cond.len()
            ));
        }
        let mut ids = Vec::with_capacity(n);
        for label in cond {
            match *label {
                Some(k) if k >= cfg.num_classes => {
                    return Err(Error::Input(format!(
                        "class id {k} outside {} classes",
                        cfg.num_classes
                    )))
                }
                Some(k) => ids.push(k),
                None => ids.push(cfg.num_classes),
            }
        }

        let tape = z.tape();
        let t_emb = tape.constant(self.step_embedding(steps));
        let emb = self.time2.forward(p, self.time1.forward(p, t_emb)?.silu()?)?;
        let emb = emb.add(p.get(self.class_table).embedding(&ids)?)?.silu()?;

        let mut slots: Vec<Var<'t, T>> = Vec::new();
        let mut skips = Vec::new();
        let mut x = self.conv_in.forward(p, z)?;
        for (level, block) in self.down.iter().enumerate() {
            x = block.forward(p, x, emb)?;
            skips.push(x);
            slots.push(x);
            if let Some(ds) = self.downsample.get(level) {
                x = ds.forward(p, x)?;
            }
        }
        x = self.mid.0.forward(p, x, emb)?;
        slots.push(x);
        x = self.mid.1.conv.forward(p, self.mid.1.norm.forward(p, x)?.silu()?)?;
        slots.push(x);
        x = self.mid.2.forward(p, x, emb)?;
        slots.push(x);
        for block in &self.up {
            let skip = skips.pop().expect("one skip per level");
            let (_, _, sh, sw) = skip.value().dims4()?;
            if x.value().dims4()?.2 != sh {
                x = x.resize_nearest(sh, sw)?;
            }
            x = block.forward(p, concat_channels(&[x, skip])?, emb)?;
            slots.push(x);
        }
        let eps = self.conv_out.forward(p, self.norm_out.forward(p, x)?.silu()?)?;
        let taps = if collect_taps {
            self.tap_index.iter().map(|&i| slots[i]).collect()
        } else {
            Vec::new()
        };
        Ok(UNetOutput { eps, taps })
    }

    /// Forward pass with the weights held constant.
    pub fn forward_frozen<'t>(
        &self,
        tape: &'t Tape<T>,
        z: Var<'t, T>,
        steps: &[usize],
        cond: &[Option<usize>],
        collect_taps: bool,
    ) -> Result<UNetOutput<'t, T>> {
        let p = self.params.bind(tape, false);
        self.forward(&p, z, steps, cond, collect_taps)
    }

    /// The same network with every weight cast to another scalar type.
    pub fn cast<U: Scalar>(&self) -> UNet<U> {
        let mut params = ParamSet::new();
        for (name, t) in self.params.iter() {
            params.add(name, t.cast());
        }
        UNet {
            config: self.config.clone(),
            params,
            time1: self.time1.clone(),
            time2: self.time2.clone(),
            class_table: self.class_table,
            conv_in: self.conv_in.clone(),
            down: self.down.clone(),
            downsample: self.downsample.clone(),
            mid: self.mid.clone(),
            up: self.up.clone(),
            norm_out: self.norm_out.clone(),
            conv_out: self.conv_out.clone(),
            tap_index: self.tap_index.clone(),
        }
    }
}
