use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::FeatureStack;
use crate::error::{shape_err, Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{BatchNormMode, BoundParams, CeTarget, ParamId, ParamSet, RunningStats, Tape, Tensor, Var};

use super::time::{time_encoding, TIME_DIMS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean squared error against the target map.
    SqErr,
    /// Binary cross-entropy of sigmoid outputs against targets in `[0, 1]`.
    Bce,
    /// Two-class cross-entropy against the soft label `[1 − p, p]`.
    Ce,
}

impl LossKind {
    /// Output width the predictor needs for a target map with `map_channels`.
    pub fn out_dim(self, map_channels: usize) -> usize {
        match self {
            LossKind::Ce => 2,
            _ => map_channels,
        }
    }

    /// Loss between prediction rows `[M, out_dim]` and target rows `[M, map_channels]`.
    pub fn apply<'t, T: Scalar>(self, pred: Var<'t, T>, target: &Tensor<T>) -> Result<Var<'t, T>> {
        match self {
            LossKind::SqErr => pred.reduce_sq_err(pred.tape().constant(target.clone())),
            LossKind::Bce => pred.reduce_bce(target),
            LossKind::Ce => {
                let [m, 1] = target.shape()[..] else {
                    return Err(shape_err!("ce loss expects one probability per row, got {:?}", target.shape()));
                };
                let soft = Tensor::from_fn([m, 2], |i| {
                    let p = target.data()[i / 2];
                    if i % 2 == 0 {
                        T::one() - p
                    } else {
                        p
                    }
                });
                pred.reduce_ce(&CeTarget::Soft(soft))
            }
        }
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sq_err" => Ok(Self::SqErr),
            "bce" => Ok(Self::Bce),
            "ce" => Ok(Self::Ce),
            _ => Err(Error::Config(format!("unknown loss kind `{s}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputMode {
    /// Denoiser feature stack.
    Features,
    /// The noisy sample's own pixel values.
    ZtBaseline,
}

impl std::str::FromStr for InputMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "features" => Ok(Self::Features),
            "zt" | "zt_baseline" => Ok(Self::ZtBaseline),
            _ => Err(Error::Config(format!("unknown input mode `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LgpConfig {
    /// Per-pixel input channels before the time encoding is appended.
    pub input_channels: usize,
    pub hidden_dims: Vec<usize>,
    pub out_dim: usize,
    pub loss_kind: LossKind,
    pub input_mode: InputMode,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl LgpConfig {
    pub fn new(input_channels: usize, out_dim: usize, loss_kind: LossKind, input_mode: InputMode) -> Self {
        Self {
            input_channels,
            hidden_dims: vec![512, 256, 128, 64],
            out_dim,
            loss_kind,
            input_mode,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.input_channels + TIME_DIMS
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.is_empty() || self.hidden_dims.contains(&0) {
            return Err(Error::Config("lgp: hidden_dims must be non-empty and positive".into()));
        }
        if self.out_dim == 0 || self.input_channels == 0 {
            return Err(Error::Config("lgp: out_dim and input_channels must be positive".into()));
        }
        if self.loss_kind == LossKind::Ce && self.out_dim != 2 {
            return Err(Error::Config("lgp: ce loss needs out_dim 2".into()));
        }
        if self.loss_kind == LossKind::Bce && self.out_dim != 1 {
            return Err(Error::Config("lgp: bce loss needs out_dim 1".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) || self.bn_eps <= 0.0 {
            return Err(Error::Config("lgp: bad batch-norm settings".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Hidden {
    w: ParamId,
    b: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

/// Per-pixel MLP: `(Linear → ReLU → BatchNorm)` per hidden width, then a
/// final linear layer.
#[derive(Clone, Debug)]
pub struct Lgp<T> {
    config: LgpConfig,
    params: ParamSet<T>,
    hidden: Vec<Hidden>,
    head: (ParamId, ParamId),
    running: Vec<RunningStats<T>>,
}

impl<T: Scalar> Lgp<T> {
    pub fn new<R: Rng>(config: LgpConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamSet::new();
        let mut hidden = Vec::new();
        let mut running = Vec::new();
        let mut din = config.in_dim();
        for (i, &dout) in config.hidden_dims.iter().enumerate() {
            hidden.push(Hidden {
                w: ps.add_uniform(format!("hidden.{i}.weight"), [dout, din], din, rng),
                b: ps.add(format!("hidden.{i}.bias"), Tensor::zeros([dout])),
                gamma: ps.add(format!("hidden.{i}.bn.gamma"), Tensor::ones([dout])),
                beta: ps.add(format!("hidden.{i}.bn.beta"), Tensor::zeros([dout])),
            });
            running.push(RunningStats::new(dout));
            din = dout;
        }
        let head = (
            ps.add_uniform("head.weight", [config.out_dim, din], din, rng),
            ps.add("head.bias", Tensor::zeros([config.out_dim])),
        );
        Ok(Self {
            config,
            params: ps,
            hidden,
            head,
            running,
        })
    }

    pub fn config(&self) -> &LgpConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn running_stats(&self) -> &[RunningStats<T>] {
        &self.running
    }

    pub fn set_running_stats(&mut self, stats: Vec<RunningStats<T>>) -> Result<()> {
        if stats.len() != self.running.len()
            || stats.iter().zip(&self.running).any(|(a, b)| a.len() != b.len())
        {
            return Err(shape_err!("lgp: running statistics do not match the layer widths"));
        }
        self.running = stats;
        Ok(())
    }

    pub(crate) fn take_running(&mut self) -> Vec<RunningStats<T>> {
        std::mem::take(&mut self.running)
    }

    pub(crate) fn restore_running(&mut self, stats: Vec<RunningStats<T>>) {
        self.running = stats;
    }

    /// Applies the MLP to input rows `[M, in_dim]`. With `train_stats`, batch
    /// norm uses batch statistics and updates them; otherwise it uses the
    /// stored running statistics.
    pub fn forward_rows<'t>(
        &self,
        p: &BoundParams<'t, T>,
        rows: Var<'t, T>,
        mut train_stats: Option<&mut [RunningStats<T>]>,
    ) -> Result<Var<'t, T>> {
        let shape = rows.shape();
        if shape.len() != 2 || shape[1] != self.config.in_dim() {
            return Err(shape_err!(
                "lgp: input rows {shape:?}, expected [M, {}]",
                self.config.in_dim()
            ));
        }
        let momentum = T::lit(self.config.bn_momentum);
        let eps = T::lit(self.config.bn_eps);
        let mut x = rows;
        for (i, layer) in self.hidden.iter().enumerate() {
            x = x.linear(p.get(layer.w), Some(p.get(layer.b)))?.relu()?;
            let mode = match train_stats.as_deref_mut() {
                Some(stats) => BatchNormMode::Train {
                    stats: &mut stats[i],
                    momentum,
                },
                None => BatchNormMode::Eval {
                    stats: &self.running[i],
                },
            };
            x = x.batch_norm(p.get(layer.gamma), p.get(layer.beta), mode, eps)?;
        }
        x.linear(p.get(self.head.0), Some(p.get(self.head.1)))
    }

    /// Per-pixel prediction on a differentiable input `[1, C, H, W]` at time
    /// `t_norm`, giving `[1, out_dim, H, W]`. Batch norm runs in eval mode.
    pub fn predict_map<'t>(
        &self,
        p: &BoundParams<'t, T>,
        input: Var<'t, T>,
        t_norm: f64,
    ) -> Result<Var<'t, T>> {
        let (n, c, h, w) = input.value().dims4()?;
        if c != self.config.input_channels {
            return Err(shape_err!(
                "lgp: input has {c} channels, predictor expects {}",
                self.config.input_channels
            ));
        }
        let te = time_encoding(t_norm)?.values::<T>();
        let time_rows = Tensor::from_fn([n * h * w, TIME_DIMS], |i| te[i % TIME_DIMS]);
        let rows = input
            .nchw_to_rows()?
            .concat_cols(input.tape().constant(time_rows))?;
        self.forward_rows(p, rows, None)?.rows_to_nchw(n, h, w)
    }

    /// `P(F_{i,j})` at every pixel of a feature stack, `[out_dim, H, W]`.
    pub fn predict(&self, features: &FeatureStack<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let p = self.params.bind(&tape, false);
        let (c, h, w) = (features.channels(), features.height(), features.width());
        let input = tape.constant(features.data.clone().reshape([1, c, h, w])?);
        let out = self.predict_map(&p, input, features.t_norm)?.to_tensor();
        out.reshape([self.config.out_dim, h, w])
    }

    /// The same predictor with every weight cast to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Lgp<U> {
        let mut params = ParamSet::new();
        for (name, t) in self.params.iter() {
            params.add(name, t.cast());
        }
        let cast_vec = |v: &[T]| v.iter().map(|x| U::lit(x.as_f64())).collect();
        Lgp {
            config: self.config.clone(),
            params,
            hidden: self.hidden.clone(),
            head: self.head,
            running: self
                .running
                .iter()
                .map(|s| RunningStats {
                    mean: cast_vec(&s.mean),
                    var: cast_vec(&s.var),
                })
                .collect(),
        }
    }
}
