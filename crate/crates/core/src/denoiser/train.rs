use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::{adam_step, AdamConfig, AdamState, Tape, Tensor};

use super::unet::UNet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DdpmTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Probability of replacing a label with the unconditional token.
    pub class_dropout: f64,
    pub adam: AdamConfig,
}

impl Default for DdpmTrainConfig {
    fn default() -> Self {
        Self {
            steps: 4000,
            batch_size: 16,
            class_dropout: 0.1,
            adam: AdamConfig {
                lr: 2e-4,
                ..AdamConfig::default()
            },
        }
    }
}

/// One labelled training image `[C, H, W]`.
#[derive(Clone, Copy, Debug)]
pub struct LabeledImage<'a> {
    pub image: &'a Tensor<f32>,
    pub class: usize,
}

/// Trains `unet` in place on the noise-prediction objective and returns the
/// per-step loss.
pub fn train_ddpm<R: Rng>(
    unet: &mut UNet<f32>,
    schedule: &NoiseSchedule,
    corpus: &[LabeledImage<'_>],
    config: &DdpmTrainConfig,
    rng: &mut R,
) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::Config("train_ddpm: empty corpus".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("train_ddpm: batch_size must be positive".into()));
    }
    let mut state = AdamState::new(unet.params().tensors());
    let mut log = Vec::with_capacity(config.steps);
    for _ in 0..config.steps {
        let mut images = Vec::with_capacity(config.batch_size);
        let mut steps = Vec::with_capacity(config.batch_size);
        let mut cond = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            let item = corpus[rng.random_range(0..corpus.len())];
            images.push(item.image);
            steps.push(schedule.sample_time(rng));
            let dropped = rng.random::<f64>() < config.class_dropout;
            cond.push((!dropped).then_some(item.class));
        }
        let clean = Tensor::stack(&images)?;
        let noise = Tensor::<f32>::randn(clean.shape().to_vec(), rng);
        let z = schedule.noise_batch(&clean, &steps, &noise)?;

        let tape = Tape::new();
        let bound = unet.params().bind(&tape, true);
        let zt = tape.constant(z);
        let out = unet.forward(&bound, zt, &steps, &cond, false)?;
        let loss = out.eps.reduce_sq_err(tape.constant(noise))?;
        log.push(loss.value().item()? as f64);
        let mut grads = tape.backward(loss)?;
        let g = bound.grads(&mut grads);
        drop(bound);
        adam_step(unet.params_mut().tensors_mut(), &g, &mut state, &config.adam)?;
    }
    Ok(log)
}
