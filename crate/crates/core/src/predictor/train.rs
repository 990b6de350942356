use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::{gather_pixel_features, Ddpm};
use crate::error::{shape_err, Error, Result};
use crate::tensor::{adam_step, AdamConfig, AdamState, Tape, Tensor};

use super::mlp::{InputMode, Lgp, LossKind};
use super::time::{time_encoding, TIME_DIMS};

/// One training triplet: an image `[C, H, W]` in the denoiser's space, its
/// target map `[K, H, W]`, and its class.
#[derive(Clone, Copy, Debug)]
pub struct LgpExample<'a> {
    pub image: &'a Tensor<f32>,
    pub target: &'a Tensor<f32>,
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LgpTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Pixels drawn per image and step; `None` uses every pixel.
    pub pixels_per_image: Option<usize>,
    pub adam: AdamConfig,
}

impl Default for LgpTrainConfig {
    fn default() -> Self {
        Self {
            steps: 3000,
            batch_size: 16,
            pixels_per_image: Some(64),
            adam: AdamConfig::default(),
        }
    }
}

/// Input rows `[M, in_dim]` for the given pixels of a noised batch.
pub(crate) fn input_rows(
    lgp: &Lgp<f32>,
    ddpm: &Ddpm,
    z_t: &Tensor<f32>,
    steps: &[usize],
    cond: &[Option<usize>],
    picks: &[(usize, usize, usize)],
) -> Result<Tensor<f32>> {
    let (_, _, h, w) = z_t.dims4()?;
    let pixel = match lgp.config().input_mode {
        InputMode::Features => {
            let tape = Tape::new();
            let out = ddpm.unet.forward_frozen(&tape, tape.constant(z_t.clone()), steps, cond, true)?;
            let taps: Vec<_> = out.taps.iter().map(|v| v.to_tensor()).collect();
            gather_pixel_features(&taps, h, w, picks)?
        }
        InputMode::ZtBaseline => gather_pixel_features(std::slice::from_ref(z_t), h, w, picks)?,
    };
    let width = pixel.shape()[1];
    if width != lgp.config().input_channels {
        return Err(shape_err!(
            "lgp expects {} input channels, the pipeline produces {width}",
            lgp.config().input_channels
        ));
    }
    let encodings = steps
        .iter()
        .map(|&t| Ok(time_encoding(ddpm.schedule.normalized(t))?.values::<f32>()))
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::with_capacity(picks.len() * (width + TIME_DIMS));
    for (row, &(n, _, _)) in pixel.data().chunks(width).zip(picks) {
        rows.extend_from_slice(row);
        rows.extend_from_slice(&encodings[n]);
    }
    Tensor::new([picks.len(), width + TIME_DIMS], rows)
}

/// Target rows `[M, K]` for the given pixels.
pub(crate) fn target_rows(targets: &[&Tensor<f32>], picks: &[(usize, usize, usize)]) -> Result<Tensor<f32>> {
    let k = targets.first().map(|t| t.shape()[0]).unwrap_or(0);
    let mut rows = Vec::with_capacity(picks.len() * k);
    for &(n, i, j) in picks {
        let t = targets[n];
        let (h, w) = (t.shape()[1], t.shape()[2]);
        rows.extend((0..k).map(|c| t.data()[(c * h + i) * w + j]));
    }
    Tensor::new([picks.len(), k], rows)
}

fn check_examples(lgp: &Lgp<f32>, data: &[LgpExample<'_>]) -> Result<()> {
    let cfg = lgp.config();
    let want = match cfg.loss_kind {
        LossKind::SqErr => cfg.out_dim,
        LossKind::Bce | LossKind::Ce => 1,
    };
    let first = data[0].image.shape();
    for ex in data {
        let (is, ts) = (ex.image.shape(), ex.target.shape());
        if is.len() != 3 || ts.len() != 3 || is != first {
            return Err(shape_err!("lgp data: images must share one [C, H, W] shape"));
        }
        if ts[0] != want || ts[1..] != is[1..] {
            return Err(shape_err!(
                "lgp data: target {ts:?} does not match image {is:?} with {want} channel(s)"
            ));
        }
    }
    Ok(())
}

fn all_pixels(n: usize, h: usize, w: usize) -> Vec<(usize, usize, usize)> {
    (0..n)
        .flat_map(|b| (0..h).flat_map(move |i| (0..w).map(move |j| (b, i, j))))
        .collect()
}

/// Trains the predictor against a frozen denoiser and returns the per-step loss.
pub fn lgp_train<R: Rng>(
    lgp: &mut Lgp<f32>,
    ddpm: &Ddpm,
    data: &[LgpExample<'_>],
    config: &LgpTrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if data.is_empty() {
        return Err(Error::Config("lgp_train: empty dataset".into()));
    }
    if config.batch_size == 0 || config.pixels_per_image == Some(0) {
        return Err(Error::Config("lgp_train: batch and pixel counts must be positive".into()));
    }
    check_examples(lgp, data)?;
    let (h, w) = (data[0].image.shape()[1], data[0].image.shape()[2]);
    let kind = lgp.config().loss_kind;
    let mut state = AdamState::new(lgp.params().tensors());
    let mut log = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let batch: Vec<LgpExample<'_>> = (0..config.batch_size)
            .map(|_| data[rng.random_range(0..data.len())])
            .collect();
        let steps: Vec<usize> = batch.iter().map(|_| ddpm.schedule.sample_time(rng)).collect();
        let images: Vec<&Tensor<f32>> = batch.iter().map(|e| e.image).collect();
        let clean = Tensor::stack(&images)?;
        let xi = Tensor::<f32>::randn(clean.shape().to_vec(), rng);
        let z_t = ddpm.schedule.noise_batch(&clean, &steps, &xi)?;
        let cond: Vec<Option<usize>> = batch.iter().map(|e| Some(e.class)).collect();
        let picks = match config.pixels_per_image {
            Some(k) if k < h * w => (0..batch.len())
                .flat_map(|b| {
                    sample(rng, h * w, k)
                        .into_iter()
                        .map(move |p| (b, p / w, p % w))
                        .collect::<Vec<_>>()
                })
                .collect(),
            _ => all_pixels(batch.len(), h, w),
        };
        let rows = input_rows(lgp, ddpm, &z_t, &steps, &cond, &picks)?;
        let targets: Vec<&Tensor<f32>> = batch.iter().map(|e| e.target).collect();
        let target = target_rows(&targets, &picks)?;

        let mut stats = lgp.take_running();
        let step = (|| {
            let tape = Tape::new();
            let p = lgp.params().bind(&tape, true);
            let pred = lgp.forward_rows(&p, tape.constant(rows), Some(&mut stats))?;
            let loss = kind.apply(pred, &target)?;
            let value = loss.value().item()? as f64;
            let mut grads = tape.backward(loss)?;
            Ok::<_, Error>((value, p.grads(&mut grads)))
        })();
        lgp.restore_running(stats);
        let (value, grads) = step?;
        log.push(value);
        adam_step(lgp.params_mut().tensors_mut(), &grads, &mut state, &config.adam)?;
    }
    Ok(log)
}

/// Mean loss over full maps of held-out examples at each normalized time,
/// `samples` fresh noise draws per grid point.
pub fn lgp_error_curve<R: Rng>(
    lgp: &Lgp<f32>,
    ddpm: &Ddpm,
    heldout: &[LgpExample<'_>],
    t_grid: &[f64],
    samples: usize,
    rng: &mut R,
) -> Result<Vec<(f64, f64)>> {
    const BATCH: usize = 16;
    if heldout.is_empty() || samples == 0 {
        return Err(Error::Config("lgp_error_curve: needs held-out data and samples".into()));
    }
    check_examples(lgp, heldout)?;
    let (h, w) = (heldout[0].image.shape()[1], heldout[0].image.shape()[2]);
    let kind = lgp.config().loss_kind;
    let mut curve = Vec::with_capacity(t_grid.len());
    for &t_norm in t_grid {
        time_encoding(t_norm)?;
        let t = ddpm.schedule.index_of(t_norm);
        let mut total = 0.0;
        let mut done = 0;
        while done < samples {
            let count = BATCH.min(samples - done);
            let batch: Vec<LgpExample<'_>> =
                (done..done + count).map(|s| heldout[s % heldout.len()]).collect();
            let images: Vec<&Tensor<f32>> = batch.iter().map(|e| e.image).collect();
            let clean = Tensor::stack(&images)?;
            let xi = Tensor::<f32>::randn(clean.shape().to_vec(), rng);
            let steps = vec![t; count];
            let z_t = ddpm.schedule.noise_batch(&clean, &steps, &xi)?;
            let cond: Vec<Option<usize>> = batch.iter().map(|e| Some(e.class)).collect();
            let picks = all_pixels(count, h, w);
            let rows = input_rows(lgp, ddpm, &z_t, &steps, &cond, &picks)?;
            let targets: Vec<&Tensor<f32>> = batch.iter().map(|e| e.target).collect();
            let target = target_rows(&targets, &picks)?;
            let tape = Tape::new();
            let p = lgp.params().bind(&tape, false);
            let pred = lgp.forward_rows(&p, tape.constant(rows), None)?;
            total += kind.apply(pred, &target)?.value().item()? as f64 * count as f64;
            done += count;
        }
        curve.push((t_norm, total / samples as f64));
    }
    Ok(curve)
}
